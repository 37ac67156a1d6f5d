//! Linear U-statistics, the sharp test for nonnegative functionals and the
//! indefinite test with nonasymptotic thresholds.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{sup_sum_squares_indices, BasisSpec, Index};
use crate::error::{Error, Result};
use crate::estimator::{
    default_pilot_threshold, pilot_branch, pilot_cap, pilot_eval, pilot_fit_with_cap, PilotBranch, Sample,
    SampleView,
};
use crate::extremal::{separation_rate_with_basis, test_part_size, two_regime_rate, Condition, ExtremalSolution};
use crate::normal::two_sided_z;
use crate::spectra::{active_set, complement_set, inverse_c_sum, CoefficientSpec, Entry, Family, Spectrum};

const NORM_TOL: f64 = 1e-8;

/// Where the weights of the sharp test come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum WeightSource {
    /// `w*` at the threshold solving the tuning equation.
    Optimal,
    /// `w ∝ (Tq - c)_+` at a fixed threshold.
    Threshold { t: f64 },
    /// User weights; must have unit Euclidean norm.
    Explicit { weights: Vec<(Index, f64)> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum TestMode {
    SharpNonnegative,
    /// `t` defaults to `min(T_n^0, sqrt n)`, or to the minimizer of the
    /// guaranteed `rho^2` when `optimize_t` is set; `d3`, `d4` default to
    /// the Sobolev-class bounds when the family admits them.
    Indefinite {
        #[serde(default)]
        t: Option<f64>,
        #[serde(default)]
        optimize_t: bool,
        #[serde(default)]
        d3: Option<f64>,
        #[serde(default)]
        d4: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestConfig {
    pub n: usize,
    pub gamma: f64,
    pub spec: CoefficientSpec,
    pub basis: BasisSpec,
    pub weights: WeightSource,
    pub mode: TestMode,
    /// Pilot threshold; defaults to [`default_pilot_threshold`].
    #[serde(default)]
    pub pilot_t: Option<f64>,
    /// Pilot size cap; defaults to `floor(sqrt(n_pilot)/4)`.
    #[serde(default)]
    pub pilot_cap: Option<usize>,
    /// Known noise level; responses are divided by it.
    #[serde(default = "one")]
    pub tau: f64,
}

fn one() -> f64 {
    1.0
}

impl TestConfig {
    pub fn sharp(spec: CoefficientSpec, basis: BasisSpec, n: usize, gamma: f64) -> Self {
        TestConfig {
            n,
            gamma,
            spec,
            basis,
            weights: WeightSource::Optimal,
            mode: TestMode::SharpNonnegative,
            pilot_t: None,
            pilot_cap: None,
            tau: 1.0,
        }
    }

    pub fn indefinite(spec: CoefficientSpec, basis: BasisSpec, n: usize, gamma: f64) -> Self {
        TestConfig {
            mode: TestMode::Indefinite { t: None, optimize_t: false, d3: None, d4: None },
            ..Self::sharp(spec, basis, n, gamma)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::domain(format!("gamma = {} must lie in (0,1)", self.gamma)));
        }
        if self.n < Sample::MIN_LEN {
            return Err(Error::domain(format!("n = {} is below {}", self.n, Sample::MIN_LEN)));
        }
        if self.basis.dim != self.spec.dim() {
            return Err(Error::domain(format!(
                "basis dimension {} differs from the family dimension {}",
                self.basis.dim,
                self.spec.dim()
            )));
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::domain(format!("tau = {} must be positive", self.tau)));
        }
        Ok(())
    }
}

/// A value in the diagnostics map of a report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Diagnostic {
    Flag(bool),
    Count(u64),
    Number(f64),
    Text(String),
    Conditions(Vec<Condition>),
}

impl From<bool> for Diagnostic {
    fn from(v: bool) -> Self {
        Diagnostic::Flag(v)
    }
}
impl From<f64> for Diagnostic {
    fn from(v: f64) -> Self {
        Diagnostic::Number(v)
    }
}
impl From<usize> for Diagnostic {
    fn from(v: usize) -> Self {
        Diagnostic::Count(v as u64)
    }
}
impl From<&str> for Diagnostic {
    fn from(v: &str) -> Self {
        Diagnostic::Text(v.to_string())
    }
}
impl From<String> for Diagnostic {
    fn from(v: String) -> Self {
        Diagnostic::Text(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub threshold: f64,
    /// `statistic > threshold` (sharp) or `|statistic| > threshold` (indefinite).
    pub reject: bool,
    /// `sqrt(m(m-1)/2) sum w_l theta_l^2`, when the true coefficients are known.
    pub h_n_predicted: Option<f64>,
    pub diagnostics: BTreeMap<String, Diagnostic>,
}

/// Head of `m = n - floor(sqrt n)` points for the statistic and the tail for the pilot.
pub fn split_sample(sample: &Sample) -> (SampleView<'_>, SampleView<'_>) {
    let n = sample.len();
    let m = test_part_size(n);
    (sample.slice(0..m), sample.slice(m..n))
}

fn check_weights(weights: &[(Index, f64)], basis: &BasisSpec, dim: usize) -> Result<()> {
    let norm2: f64 = weights.iter().map(|(_, w)| w * w).sum();
    if (norm2.sqrt() - 1.0).abs() > NORM_TOL {
        return Err(Error::domain(format!("weights must have unit norm, got {}", norm2.sqrt())));
    }
    for (i, _) in weights {
        if i.lattice.dim() != basis.dim || i.design_dim() != dim || i.lattice.is_zero() {
            return Err(Error::domain(format!("weight index {i} does not fit a {dim}-dimensional design")));
        }
    }
    Ok(())
}

/// `sum_l w_l [(sum_i x_i phi_l(t_i))^2 - sum_i x_i^2 phi_l(t_i)^2] / sqrt(2m(m-1))`
/// in `O(m |N|)`.
pub fn u_statistic(data: SampleView<'_>, weights: &[(Index, f64)], basis: &BasisSpec) -> Result<f64> {
    let m = data.len();
    if m < 2 {
        return Err(Error::domain("the U-statistic needs at least two points"));
    }
    check_weights(weights, basis, data.dim)?;
    let terms: Vec<f64> = weights
        .par_iter()
        .map(|(idx, w)| {
            let (mut s, mut s2) = (0.0, 0.0);
            for (t, x) in data.points().zip(data.x) {
                let v = x * basis.value_index(idx, t);
                s += v;
                s2 += v * v;
            }
            w * (s * s - s2)
        })
        .collect();
    let mf = m as f64;
    Ok(terms.iter().sum::<f64>() / (2.0 * mf * (mf - 1.0)).sqrt())
}

/// `(2/(m(m-1)))^{1/2} sum_{i<j} x_i x_j sum_l w_l phi_l(t_i) phi_l(t_j)`, in `O(m^2 |N|)`.
pub fn u_statistic_pairwise(data: SampleView<'_>, weights: &[(Index, f64)], basis: &BasisSpec) -> Result<f64> {
    let m = data.len();
    if m < 2 {
        return Err(Error::domain("the U-statistic needs at least two points"));
    }
    check_weights(weights, basis, data.dim)?;
    let phi: Vec<Vec<f64>> = data
        .points()
        .map(|t| weights.iter().map(|(i, _)| basis.value_index(i, t)).collect())
        .collect();
    let mut total = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            let k: f64 = weights.iter().enumerate().map(|(l, (_, w))| w * phi[i][l] * phi[j][l]).sum();
            total += data.x[i] * data.x[j] * k;
        }
    }
    let mf = m as f64;
    Ok(total * (2.0 / (mf * (mf - 1.0))).sqrt())
}

fn coefficient_map(theta: &[(Index, f64)]) -> BTreeMap<&Index, f64> {
    theta.iter().map(|(i, v)| (i, *v)).collect()
}

/// `sqrt(m(m-1)/2) sum_l w_l theta_l^2`.
pub fn predicted_mean(m: usize, weights: &[(Index, f64)], theta: &[(Index, f64)]) -> f64 {
    let th = coefficient_map(theta);
    let s: f64 = weights.iter().map(|(i, w)| w * th.get(i).map_or(0.0, |v| v * v)).sum();
    let mf = m as f64;
    (mf * (mf - 1.0) / 2.0).sqrt() * s
}

fn check_sample(sample: &Sample, config: &TestConfig) -> Result<()> {
    if sample.len() != config.n {
        return Err(Error::domain(format!("sample has {} points but the test was set up for n = {}", sample.len(), config.n)));
    }
    if sample.dim() != config.spec.design_dim() {
        return Err(Error::domain(format!(
            "sample points have dimension {} but the family needs {}",
            sample.dim(),
            config.spec.design_dim()
        )));
    }
    Ok(())
}

/// Sharp test with its tuning, weights and pilot set resolved once.
#[derive(Clone, Debug)]
pub struct PreparedSharpTest {
    pub config: TestConfig,
    pub m: usize,
    pub threshold: f64,
    pub weights: Vec<(Index, f64)>,
    pub solution: Option<ExtremalSolution>,
    pub t_pilot: f64,
    pub pilot_cap: usize,
    pub pilot_size: usize,
    pub pilot_branch: PilotBranch,
}

impl PreparedSharpTest {
    pub fn new(config: &TestConfig) -> Result<Self> {
        config.validate()?;
        if config.mode != TestMode::SharpNonnegative {
            return Err(Error::Config("the sharp test needs mode sharp_nonnegative".into()));
        }
        if !config.spec.is_nonnegative() {
            return Err(Error::domain("the sharp test needs q_l >= 0 for every index"));
        }
        let n = config.n;
        let m = test_part_size(n);
        let (weights, solution) = match &config.weights {
            WeightSource::Optimal => {
                let s = separation_rate_with_basis(&config.spec, n, config.gamma, Some(&config.basis))?;
                (s.weights(), Some(s))
            }
            WeightSource::Threshold { t } => {
                let mut s = ExtremalSolution::at_threshold(&config.spec, *t, n, config.gamma)?;
                s.evaluate_conditions(&config.spec, Some(&config.basis))?;
                (s.weights(), Some(s))
            }
            WeightSource::Explicit { weights } => {
                check_weights(weights, &config.basis, config.spec.design_dim())?;
                for (i, _) in weights {
                    if config.spec.coeff(i)?.1 == 0.0 {
                        return Err(Error::domain(format!("weight index {i} lies outside S_F")));
                    }
                }
                (weights.clone(), None)
            }
        };
        let n_pilot = n - m;
        let t_pilot = match config.pilot_t {
            Some(t) => t,
            None => default_pilot_threshold(&config.spec, n_pilot)?,
        };
        let cap = config.pilot_cap.unwrap_or_else(|| pilot_cap(n_pilot));
        let pilot_size = complement_set(&config.spec, t_pilot)?.len();
        if pilot_size > cap {
            return Err(Error::PilotTooLarge { size: pilot_size, cap });
        }
        Ok(PreparedSharpTest {
            config: config.clone(),
            m,
            threshold: two_sided_z(config.gamma)?,
            weights,
            solution,
            t_pilot,
            pilot_cap: cap,
            pilot_size,
            pilot_branch: pilot_branch(&config.spec),
        })
    }

    /// Statistic on the adjusted head of the sample; no diagnostics.
    pub fn statistic(&self, sample: &Sample) -> Result<f64> {
        check_sample(sample, &self.config)?;
        let scaled;
        let sample = if self.config.tau != 1.0 {
            scaled = sample.rescaled(self.config.tau)?;
            &scaled
        } else {
            sample
        };
        let (head, tail) = split_sample(sample);
        let adjusted: Vec<f64> = if self.pilot_size == 0 {
            head.x.to_vec()
        } else {
            let pilot = pilot_fit_with_cap(tail, &self.config.spec, &self.config.basis, self.t_pilot, self.pilot_cap)?;
            head.points()
                .zip(head.x)
                .map(|(t, x)| x - pilot_eval(&pilot, &self.config.basis, t))
                .collect()
        };
        let view = SampleView { dim: head.dim, t: head.t, x: &adjusted };
        u_statistic(view, &self.weights, &self.config.basis)
    }

    pub fn run(&self, sample: &Sample, theta: Option<&[(Index, f64)]>) -> Result<TestReport> {
        let statistic = self.statistic(sample)?;
        let mut d: BTreeMap<String, Diagnostic> = BTreeMap::new();
        d.insert("m".into(), self.m.into());
        d.insert("n_pilot".into(), (self.config.n - self.m).into());
        d.insert("active_set_size".into(), self.weights.len().into());
        d.insert("t_pilot".into(), self.t_pilot.into());
        d.insert("pilot_size".into(), self.pilot_size.into());
        d.insert("pilot_cap".into(), self.pilot_cap.into());
        let branch = match self.pilot_branch {
            PilotBranch::InverseSeries => "inverse_series",
            PilotBranch::SobolevEmbedding => "sobolev_embedding",
            PilotBranch::Unverified => "unverified",
        };
        d.insert("pilot_branch".into(), branch.into());
        if self.pilot_branch == PilotBranch::Unverified {
            d.insert("pilot_warning".into(), "pilot consistency could not be verified for this family".into());
        }
        if let Some(s) = &self.solution {
            d.insert("t".into(), s.t.into());
            d.insert("rate".into(), s.rate.into());
            d.insert("conditions".into(), Diagnostic::Conditions(s.conditions.clone()));
        }
        Ok(TestReport {
            statistic,
            threshold: self.threshold,
            reject: statistic > self.threshold,
            h_n_predicted: theta.map(|th| predicted_mean(self.m, &self.weights, th)),
            diagnostics: d,
        })
    }
}

/// Sharp linear U-test: reject when `U_n > z_{1-gamma/2}`.
pub fn sharp_test(sample: &Sample, config: &TestConfig) -> Result<TestReport> {
    PreparedSharpTest::new(config)?.run(sample, None)
}

/// Constants `D1..D4` of the indefinite test; `B1`, `B2` derive from them.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndefiniteThresholdConfig {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
}

impl IndefiniteThresholdConfig {
    pub fn new(d1: f64, d2: f64, d3: f64, d4: f64) -> Result<Self> {
        for (name, v) in [("D1", d1), ("D2", d2), ("D3", d3), ("D4", d4)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} = {v} must be positive and finite")));
            }
        }
        Ok(IndefiniteThresholdConfig { d1, d2, d3, d4 })
    }

    /// `D1 = |N| max q^2 / sum q^2` and `D2 = sup_t sum phi_l(t)^2 / |N|` over `N(T)`.
    pub fn from_active(entries: &[Entry], basis: &BasisSpec, d3: f64, d4: f64) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::domain("the active set is empty"));
        }
        let k = entries.len() as f64;
        let m: f64 = entries.iter().map(|e| e.q * e.q).sum();
        let max_q2 = entries.iter().map(|e| e.q * e.q).fold(0.0, f64::max);
        let idx: Vec<Index> = entries.iter().map(|e| e.index.clone()).collect();
        let sup = sup_sum_squares_indices(basis, &idx)?;
        Self::new(k * max_q2 / m, sup / k, d3, d4)
    }

    pub fn b1(&self) -> f64 {
        let p = self.d1 * self.d2;
        6.0 + 12.0 * p * self.d3.powi(2) + 6.0 * p * self.d3.powi(4)
    }

    pub fn b2(&self) -> f64 {
        4.0 * self.d4
    }

    /// `gamma^{-1/2} (B1 + B2 n / M)^{1/2}`
    pub fn deviation(&self, n: usize, m: f64, gamma: f64) -> f64 {
        ((self.b1() + self.b2() * n as f64 / m) / gamma).sqrt()
    }

    /// `u = n / (T sqrt(2M)) + gamma^{-1/2} (B1 + B2 n / M)^{1/2}`
    pub fn threshold(&self, n: usize, t: f64, m: f64, gamma: f64) -> f64 {
        n as f64 / (t * (2.0 * m).sqrt()) + self.deviation(n, m, gamma)
    }

    /// Smallest `rho^2` with type II error below `gamma/2` for threshold `u`.
    pub fn type2_rho2(&self, u: f64, n: usize, t: f64, m: f64, gamma: f64) -> f64 {
        (u + self.deviation(n, m, gamma)) * (2.0 * m).sqrt() / n as f64 + 1.0 / t
    }

    /// `2 sqrt2 gamma^{-1/2} n^{-1} (B1 M + B2 n)^{1/2} + 2/T`
    pub fn guaranteed_rho2(&self, n: usize, t: f64, m: f64, gamma: f64) -> f64 {
        let nf = n as f64;
        2.0 * 2f64.sqrt() * ((self.b1() * m + self.b2() * nf) / gamma).sqrt() / nf + 2.0 / t
    }
}

/// Bounds `(D3, D4)` for the Sobolev-type families from `sup |f| <= D5` with
/// `D5 = B_phi (R^2 sum_m 1/c_m)^{1/2}` per sample block, `D3 = D5` and
/// `D4 = D5 (R^2 max_{N(T)} q^2/c)^{1/2}`, where `R^2` bounds `sum c theta^2`
/// (2 for the two-sample family, 1 otherwise).
pub fn default_class_bounds(spec: &CoefficientSpec, basis: &BasisSpec, entries: &[Entry]) -> Result<(f64, f64)> {
    let (r2, blocks) = match spec.family() {
        Family::TwoSampleNorm { .. } => (2.0, 2.0),
        Family::SobolevDerivative { .. } | Family::SingleIndex { .. } | Family::Explicit { .. } => (1.0, 1.0),
    };
    let total = inverse_c_sum(spec).ok_or_else(|| {
        Error::Config("sum 1/c_l diverges for this family; supply d3 and d4 explicitly".into())
    })?;
    // each block g_s has sum c theta^2 <= 1 and sup |g_s| <= B_phi (sum_m 1/c_m)^{1/2}
    let per_block = total / blocks;
    let d5 = blocks * basis.sup_norm() * per_block.sqrt();
    let ratio = entries.iter().map(|e| e.q * e.q / e.c).fold(0.0, f64::max);
    Ok((d5, d5 * (r2 * ratio).sqrt()))
}

fn indefinite_constants(
    config: &TestConfig,
    entries: &[Entry],
    class: Option<(f64, f64)>,
) -> Result<IndefiniteThresholdConfig> {
    let (d3, d4) = match class {
        Some(v) => v,
        None => default_class_bounds(&config.spec, &config.basis, entries)?,
    };
    IndefiniteThresholdConfig::from_active(entries, &config.basis, d3, d4)
}

/// Minimizes the guaranteed `rho^2` over `T`. Between consecutive
/// breakpoints `c/|q|` the set `N(T)` is fixed and the bound decreases in
/// `T`, so the candidates are the first `max_breakpoints` breakpoints
/// themselves. Returns `(T, rho^2)`.
pub fn minimize_guaranteed_rho2(
    config: &TestConfig,
    class: Option<(f64, f64)>,
    max_breakpoints: usize,
) -> Result<(f64, f64)> {
    let mut sp = Spectrum::new(&config.spec, 1.0)?;
    sp.first_ratio()?;
    let distinct = |sp: &Spectrum| {
        let mut v: Vec<f64> = sp.entries().iter().map(|e| e.c / e.q.abs()).collect();
        v.dedup();
        v
    };
    let mut ratios = distinct(&sp);
    while ratios.len() <= max_breakpoints && !config.spec.is_finite_list() {
        match sp.ensure(4.0 * sp.t_max()) {
            Ok(()) => ratios = distinct(&sp),
            Err(Error::ActiveSetTooLarge { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    let mut best: Option<(f64, f64)> = None;
    for &t in ratios.iter().skip(1).take(max_breakpoints) {
        let mut entries = sp.prefix(t).to_vec();
        entries.sort_by(|a, b| a.index.cmp(&b.index));
        let c = indefinite_constants(config, &entries, class)?;
        let m: f64 = entries.iter().map(|e| e.q * e.q).sum();
        let r = c.guaranteed_rho2(config.n, t, m, config.gamma);
        if best.is_none_or(|b| r < b.1) {
            best = Some((t, r));
        }
    }
    best.ok_or_else(|| Error::domain("fewer than two breakpoints are available"))
}

/// `binom(n,2)^{-1/2} sum_{i<j} x_i x_j G_T(t_i,t_j)` on the raw sample.
pub fn indefinite_statistic(sample: &Sample, spec: &CoefficientSpec, basis: &BasisSpec, t: f64) -> Result<f64> {
    let set = active_set(spec, t)?;
    if set.is_empty() {
        return Err(Error::domain(format!("N(T) is empty at T = {t}")));
    }
    let w = signed_weights(&set.entries);
    u_statistic(sample.view(), &w, basis)
}

fn signed_weights(entries: &[Entry]) -> Vec<(Index, f64)> {
    let m: f64 = entries.iter().map(|e| e.q * e.q).sum();
    let root = m.sqrt();
    entries.iter().map(|e| (e.index.clone(), e.q / root)).collect()
}

/// Indefinite test with its threshold resolved once.
#[derive(Clone, Debug)]
pub struct PreparedIndefiniteTest {
    pub config: TestConfig,
    pub t: f64,
    pub m_t: f64,
    pub weights: Vec<(Index, f64)>,
    pub constants: IndefiniteThresholdConfig,
    pub defaulted_class_bounds: bool,
    pub threshold: f64,
    pub rho2_guaranteed: f64,
    pub rho2_type2: f64,
}

impl PreparedIndefiniteTest {
    pub fn new(config: &TestConfig) -> Result<Self> {
        config.validate()?;
        let TestMode::Indefinite { t, optimize_t, d3, d4 } = &config.mode else {
            return Err(Error::Config("the indefinite test needs mode indefinite".into()));
        };
        let class = match (d3, d4) {
            (Some(a), Some(b)) => Some((*a, *b)),
            (None, None) => None,
            _ => return Err(Error::Config("supply both d3 and d4, or neither for the defaults".into())),
        };
        let n = config.n;
        let t = match (t, optimize_t) {
            (Some(t), _) => *t,
            (None, true) => minimize_guaranteed_rho2(config, class, 64)?.0,
            (None, false) => two_regime_rate(&config.spec, n)?.t_n,
        };
        let set = active_set(&config.spec, t)?;
        if set.is_empty() {
            return Err(Error::domain(format!(
                "N(T) is empty at T = {t}; set t explicitly or enable optimize_t"
            )));
        }
        let constants = indefinite_constants(config, &set.entries, class)?;
        let defaulted = class.is_none();
        let m_t: f64 = set.entries.iter().map(|e| e.q * e.q).sum();
        let threshold = constants.threshold(n, t, m_t, config.gamma);
        Ok(PreparedIndefiniteTest {
            config: config.clone(),
            t,
            m_t,
            weights: signed_weights(&set.entries),
            constants,
            defaulted_class_bounds: defaulted,
            threshold,
            rho2_guaranteed: constants.guaranteed_rho2(n, t, m_t, config.gamma),
            rho2_type2: constants.type2_rho2(threshold, n, t, m_t, config.gamma),
        })
    }

    pub fn statistic(&self, sample: &Sample) -> Result<f64> {
        check_sample(sample, &self.config)?;
        if self.config.tau != 1.0 {
            return u_statistic(sample.rescaled(self.config.tau)?.view(), &self.weights, &self.config.basis);
        }
        u_statistic(sample.view(), &self.weights, &self.config.basis)
    }

    /// `rho2` is the separation of the alternative under study, when known;
    /// values below the guarantee are flagged.
    pub fn run(&self, sample: &Sample, rho2: Option<f64>) -> Result<TestReport> {
        let statistic = self.statistic(sample)?;
        let c = &self.constants;
        let mut d: BTreeMap<String, Diagnostic> = BTreeMap::new();
        d.insert("t".into(), self.t.into());
        d.insert("m_t".into(), self.m_t.into());
        d.insert("active_set_size".into(), self.weights.len().into());
        for (k, v) in [("d1", c.d1), ("d2", c.d2), ("d3", c.d3), ("d4", c.d4), ("b1", c.b1()), ("b2", c.b2())] {
            d.insert(k.into(), v.into());
        }
        d.insert("class_bounds_defaulted".into(), self.defaulted_class_bounds.into());
        d.insert("rho2_guaranteed".into(), self.rho2_guaranteed.into());
        d.insert("rho2_type2".into(), self.rho2_type2.into());
        if let Some(r) = rho2 {
            d.insert("rho2".into(), r.into());
            d.insert("outside_guarantee".into(), (r < self.rho2_type2).into());
        }
        Ok(TestReport {
            statistic,
            threshold: self.threshold,
            reject: statistic.abs() > self.threshold,
            h_n_predicted: None,
            diagnostics: d,
        })
    }
}

/// Indefinite test: reject when `|U_n(T)| > u`.
pub fn indefinite_test(sample: &Sample, config: &TestConfig) -> Result<TestReport> {
    PreparedIndefiniteTest::new(config)?.run(sample, None)
}

/// Either prepared test.
#[derive(Clone, Debug)]
pub enum PreparedTest {
    Sharp(PreparedSharpTest),
    Indefinite(PreparedIndefiniteTest),
}

impl PreparedTest {
    pub fn new(config: &TestConfig) -> Result<Self> {
        Ok(match config.mode {
            TestMode::SharpNonnegative => PreparedTest::Sharp(PreparedSharpTest::new(config)?),
            TestMode::Indefinite { .. } => PreparedTest::Indefinite(PreparedIndefiniteTest::new(config)?),
        })
    }

    pub fn config(&self) -> &TestConfig {
        match self {
            PreparedTest::Sharp(p) => &p.config,
            PreparedTest::Indefinite(p) => &p.config,
        }
    }

    pub fn threshold(&self) -> f64 {
        match self {
            PreparedTest::Sharp(p) => p.threshold,
            PreparedTest::Indefinite(p) => p.threshold,
        }
    }

    pub fn statistic(&self, sample: &Sample) -> Result<f64> {
        match self {
            PreparedTest::Sharp(p) => p.statistic(sample),
            PreparedTest::Indefinite(p) => p.statistic(sample),
        }
    }

    pub fn rejects(&self, statistic: f64) -> bool {
        match self {
            PreparedTest::Sharp(p) => statistic > p.threshold,
            PreparedTest::Indefinite(p) => statistic.abs() > p.threshold,
        }
    }

    pub fn run(&self, sample: &Sample) -> Result<TestReport> {
        match self {
            PreparedTest::Sharp(p) => p.run(sample, None),
            PreparedTest::Indefinite(p) => p.run(sample, None),
        }
    }
}

/// Runs the test selected by `config.mode`.
pub fn run_test(sample: &Sample, config: &TestConfig) -> Result<TestReport> {
    PreparedTest::new(config)?.run(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::MultiIndex;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn idx(v: &[i64]) -> Index {
        Index::single(MultiIndex::from(v.to_vec()))
    }

    #[test]
    fn split_sizes() {
        for (n, m) in [(100, 90), (4, 2), (1_000_000, 999_000)] {
            assert_eq!(test_part_size(n), m);
        }
        let s = Sample::new(1, vec![0.5; 100], vec![0.0; 100]).unwrap();
        let (a, b) = split_sample(&s);
        assert_eq!((a.len(), b.len()), (90, 10));
    }

    #[test]
    fn single_pair_by_hand() {
        let b = BasisSpec::tensor(1);
        let t = [0.0, 0.0];
        let x = [1.0, 1.0];
        let v = SampleView { dim: 1, t: &t, x: &x };
        let w = vec![(idx(&[1]), 1.0)];
        assert!((u_statistic(v, &w, &b).unwrap() - 2.0).abs() < 1e-12);
        let z = [0.0, 0.0];
        assert_eq!(u_statistic(SampleView { dim: 1, t: &t, x: &z }, &w, &b).unwrap(), 0.0);
    }

    #[test]
    fn unnormalized_weights_are_rejected() {
        let b = BasisSpec::tensor(1);
        let v = SampleView { dim: 1, t: &[0.1, 0.2], x: &[1.0, 1.0] };
        assert!(u_statistic(v, &[(idx(&[1]), 0.9)], &b).is_err());
    }

    #[test]
    fn factorized_matches_pairwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (dim, m) in [(1, 50), (2, 60)] {
            let b = BasisSpec::tensor(dim);
            let t: Vec<f64> = (0..m * dim).map(|_| rng.gen()).collect();
            let x: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let raw: Vec<(Index, f64)> = (1..=6)
                .map(|k| {
                    let mut l = vec![0i64; dim];
                    l[k % dim] = k as i64 - 3 + if k == 3 { 1 } else { 0 };
                    (Index::single(MultiIndex::from(l)), rng.gen_range(-1.0..1.0))
                })
                .collect();
            let norm = raw.iter().map(|(_, w)| w * w).sum::<f64>().sqrt();
            let w: Vec<(Index, f64)> = raw.into_iter().map(|(i, v)| (i, v / norm)).collect();
            let v = SampleView { dim, t: &t, x: &x };
            let a = u_statistic(v, &w, &b).unwrap();
            let c = u_statistic_pairwise(v, &w, &b).unwrap();
            assert!((a - c).abs() < 1e-9 * (1.0 + c.abs()), "{a} vs {c}");
        }
    }

    #[test]
    fn sharp_threshold_and_prediction() {
        let spec = CoefficientSpec::sobolev(vec![1.0], vec![0.0]).unwrap();
        let cfg = TestConfig::sharp(spec, BasisSpec::tensor(1), 2000, 0.05);
        let p = PreparedSharpTest::new(&cfg).unwrap();
        assert!((p.threshold - 1.959_963_984_540_054).abs() < 1e-9);
        let theta: Vec<(Index, f64)> = p.weights.iter().map(|(i, _)| (i.clone(), 0.1)).collect();
        let s: f64 = p.weights.iter().map(|(_, w)| w * 0.01).sum();
        let mf = p.m as f64;
        assert_eq!(predicted_mean(p.m, &p.weights, &theta), (mf * (mf - 1.0) / 2.0).sqrt() * s);
    }

    #[test]
    fn sharp_rejects_indefinite_family() {
        let spec = CoefficientSpec::two_sample(vec![2.0], vec![0.5]).unwrap();
        let cfg = TestConfig::sharp(spec, BasisSpec::tensor(1), 1000, 0.05);
        assert!(PreparedSharpTest::new(&cfg).is_err());
    }

    #[test]
    fn threshold_toy_example() {
        let c = IndefiniteThresholdConfig { d1: 1.0, d2: 1.0, d3: 0.0, d4: 1.0 };
        // B1 = 6 with D3 = 0; bypasses `new` to hit the displayed toy values
        assert_eq!(c.b1(), 6.0);
        assert_eq!(c.b2(), 4.0);
        let u = c.threshold(100, 10.0, 2.0, 0.1);
        assert!((u - (5.0 + 10f64.sqrt() * 206f64.sqrt())).abs() < 1e-12);
        assert!((u - 50.38).abs() < 1e-2);
    }

    #[test]
    fn threshold_monotonicity() {
        let base = IndefiniteThresholdConfig::new(1.0, 1.0, 1.0, 1.0).unwrap();
        let u0 = base.threshold(1000, 30.0, 50.0, 0.05);
        let bigger = IndefiniteThresholdConfig::new(2.0, 1.0, 1.0, 2.0).unwrap();
        assert!(bigger.threshold(1000, 30.0, 50.0, 0.05) > u0);
        assert!(base.threshold(1000, 30.0, 80.0, 0.05) < u0);
        assert!(IndefiniteThresholdConfig::new(1.0, 1.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn indefinite_statistic_examples() {
        let spec = CoefficientSpec::two_sample(vec![2.0], vec![0.0]).unwrap();
        let b = BasisSpec::tensor(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t: Vec<f64> = (0..2 * 64).map(|_| rng.gen()).collect();
        let x: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let s = Sample::new(2, t.clone(), x).unwrap();
        let zero = Sample::new(2, t, vec![0.0; 64]).unwrap();
        assert_eq!(indefinite_statistic(&zero, &spec, &b, 2000.0).unwrap(), 0.0);
        // swapping the two coordinate blocks flips the sign of every q
        let swapped_t: Vec<f64> = s.points().chunks(2).flat_map(|p| [p[1], p[0]]).collect();
        let swapped = Sample::new(2, swapped_t, s.responses().to_vec()).unwrap();
        let a = indefinite_statistic(&s, &spec, &b, 2000.0).unwrap();
        let c = indefinite_statistic(&swapped, &spec, &b, 2000.0).unwrap();
        assert!((a + c).abs() < 1e-12 * (1.0 + a.abs()));
        assert!(indefinite_statistic(&s, &spec, &b, 1.0).is_err());
    }

    #[test]
    fn indefinite_defaults_and_config_errors() {
        let spec = CoefficientSpec::two_sample(vec![2.0], vec![0.5]).unwrap();
        let b = BasisSpec::tensor(1);
        let mut cfg = TestConfig::indefinite(spec.clone(), b, 2000, 0.05);
        assert!(PreparedIndefiniteTest::new(&cfg).is_err());
        cfg.mode = TestMode::Indefinite { t: None, optimize_t: true, d3: None, d4: None };
        let p = PreparedIndefiniteTest::new(&cfg).unwrap();
        assert!(p.defaulted_class_bounds);
        let (t, r) = minimize_guaranteed_rho2(&cfg, None, 64).unwrap();
        assert_eq!((t, r), (p.t, p.rho2_guaranteed));
        assert!(p.rho2_guaranteed > 0.0 && p.threshold > 0.0);
        let partial = TestConfig { mode: TestMode::Indefinite { t: Some(2000.0), optimize_t: false, d3: Some(1.0), d4: None }, ..cfg };
        assert!(matches!(PreparedIndefiniteTest::new(&partial), Err(Error::Config(_))));
        let rough = CoefficientSpec::two_sample(vec![0.5], vec![0.0]).unwrap();
        let mut cfg = TestConfig::indefinite(rough, b, 2000, 0.05);
        cfg.mode = TestMode::Indefinite { t: Some(100.0), optimize_t: false, d3: None, d4: None };
        assert!(matches!(PreparedIndefiniteTest::new(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn guarantee_flag() {
        let spec = CoefficientSpec::two_sample(vec![2.0], vec![0.5]).unwrap();
        let b = BasisSpec::tensor(1);
        let mut cfg = TestConfig::indefinite(spec, b, 200, 0.05);
        cfg.mode = TestMode::Indefinite { t: Some(2000.0), optimize_t: false, d3: None, d4: None };
        let p = PreparedIndefiniteTest::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t: Vec<f64> = (0..400).map(|_| rng.gen()).collect();
        let s = Sample::new(2, t, vec![0.0; 200]).unwrap();
        let r = p.run(&s, Some(0.5 * p.rho2_type2)).unwrap();
        assert_eq!(r.diagnostics["outside_guarantee"], Diagnostic::Flag(true));
        assert!(!r.reject);
    }
}
