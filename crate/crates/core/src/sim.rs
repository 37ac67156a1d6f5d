//! Data generation under `x = f(t) + xi` and Monte Carlo error rates.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisSpec, Index};
use crate::error::{Error, Result};
use crate::estimator::Sample;
use crate::extremal::ExtremalSolution;
use crate::normal;
use crate::utest::PreparedTest;

pub const MIN_REPS: usize = 100;
pub const DEFAULT_STUDENT_DF: f64 = 9.0;

/// Unit-variance noise law.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseSpec {
    #[default]
    Gaussian,
    Rademacher,
    /// Student `t_df` scaled by `sqrt((df-2)/df)`; needs `df > 4`.
    ScaledStudent {
        #[serde(default = "default_df")]
        df: f64,
    },
}

fn default_df() -> f64 {
    DEFAULT_STUDENT_DF
}

impl NoiseSpec {
    pub fn student() -> Self {
        NoiseSpec::ScaledStudent { df: DEFAULT_STUDENT_DF }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::ScaledStudent { df } if !(df > 4.0 && df.is_finite()) => {
                Err(Error::domain(format!("Student noise needs df > 4, got {df}")))
            }
            _ => Ok(()),
        }
    }

    /// `E xi^4`.
    pub fn fourth_moment(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian => 3.0,
            NoiseSpec::Rademacher => 1.0,
            NoiseSpec::ScaledStudent { df } => 3.0 * (df - 2.0) / (df - 4.0),
        }
    }

    fn sampler(&self) -> Result<NoiseSampler> {
        self.validate()?;
        Ok(match *self {
            NoiseSpec::Gaussian => NoiseSampler::Gaussian,
            NoiseSpec::Rademacher => NoiseSampler::Rademacher,
            NoiseSpec::ScaledStudent { df } => NoiseSampler::Student(
                StudentT::new(df).map_err(|e| Error::domain(e.to_string()))?,
                ((df - 2.0) / df).sqrt(),
            ),
        })
    }
}

enum NoiseSampler {
    Gaussian,
    Rademacher,
    Student(StudentT<f64>, f64),
}

impl NoiseSampler {
    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            NoiseSampler::Gaussian => StandardNormal.sample(rng),
            NoiseSampler::Rademacher => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            NoiseSampler::Student(d, s) => s * d.sample(rng),
        }
    }
}

fn check_theta(theta: &[(Index, f64)], design_dim: usize, basis: &BasisSpec) -> Result<()> {
    for (i, v) in theta {
        if !v.is_finite() {
            return Err(Error::domain(format!("coefficient of {i} is not finite")));
        }
        if i.lattice.dim() != basis.dim || i.design_dim() != design_dim {
            return Err(Error::domain(format!("index {i} does not match design dimension {design_dim}")));
        }
        if let Some(s) = i.sample {
            if s != 1 && s != 2 {
                return Err(Error::domain(format!("sample tag must be 1 or 2, got {s}")));
            }
        }
    }
    Ok(())
}

fn generate_with<R: Rng>(
    theta: &[(Index, f64)],
    basis: &BasisSpec,
    design_dim: usize,
    n: usize,
    noise: &NoiseSampler,
    rng: &mut R,
) -> Result<Sample> {
    let mut t = Vec::with_capacity(n * design_dim);
    let mut x = Vec::with_capacity(n);
    for _ in 0..n {
        let start = t.len();
        for _ in 0..design_dim {
            t.push(rng.gen::<f64>());
        }
        let p = &t[start..];
        let f: f64 = theta.iter().map(|(i, v)| v * basis.value_index(i, p)).sum();
        x.push(f + noise.sample(rng));
    }
    Sample::new(design_dim, t, x)
}

/// `n` points uniform on `[0,1]^design_dim` with responses `sum theta_l phi_l(t) + xi`.
pub fn generate_data(
    theta: &[(Index, f64)],
    basis: &BasisSpec,
    design_dim: usize,
    n: usize,
    noise: NoiseSpec,
    seed: u64,
) -> Result<Sample> {
    check_theta(theta, design_dim, basis)?;
    let sampler = noise.sampler()?;
    generate_with(theta, basis, design_dim, n, &sampler, &mut ChaCha8Rng::seed_from_u64(seed))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    Null,
    Alternative,
}

impl Hypothesis {
    pub fn as_str(&self) -> &'static str {
        match self {
            Hypothesis::Null => "null",
            Hypothesis::Alternative => "alternative",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: usize,
    pub statistic: f64,
    pub threshold: f64,
    pub reject: bool,
    pub hypothesis: Hypothesis,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorEstimates {
    pub type1: f64,
    pub se1: f64,
    pub type2: f64,
    pub se2: f64,
    pub cumulative: f64,
    pub replications: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloRun {
    pub estimates: ErrorEstimates,
    pub records: Vec<ReplicationRecord>,
}

/// `(p, sqrt(p(1-p)/reps))`.
pub fn binomial_rate(hits: usize, reps: usize) -> (f64, f64) {
    let p = hits as f64 / reps as f64;
    (p, (p * (1.0 - p) / reps as f64).sqrt())
}

fn rep_rng(seed: u64, rep: usize, h: Hypothesis) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2 * rep as u64 + (h == Hypothesis::Alternative) as u64);
    rng
}

/// Statistics of `reps` independent samples from `theta`, in replication order.
pub fn replicate_statistics(
    test: &PreparedTest,
    theta: &[(Index, f64)],
    noise: NoiseSpec,
    reps: usize,
    seed: u64,
    hypothesis: Hypothesis,
) -> Result<Vec<f64>> {
    let cfg = test.config();
    let design_dim = cfg.spec.design_dim();
    check_theta(theta, design_dim, &cfg.basis)?;
    let sampler = noise.sampler()?;
    let out: Vec<Result<f64>> = (0..reps)
        .into_par_iter()
        .map(|rep| {
            let mut rng = rep_rng(seed, rep, hypothesis);
            generate_with(theta, &cfg.basis, design_dim, cfg.n, &sampler, &mut rng)
                .and_then(|s| test.statistic(&s))
                .map_err(|e| Error::Replication { rep, source: Box::new(e) })
        })
        .collect();
    out.into_iter().collect()
}

/// Empirical type I error on `f_null` and type II error on `f_alt`.
pub fn monte_carlo(
    test: &PreparedTest,
    f_null: &[(Index, f64)],
    f_alt: &[(Index, f64)],
    noise: NoiseSpec,
    reps: usize,
    seed: u64,
) -> Result<MonteCarloRun> {
    if reps < MIN_REPS {
        return Err(Error::domain(format!("at least {MIN_REPS} replications are needed, got {reps}")));
    }
    let null = replicate_statistics(test, f_null, noise, reps, seed, Hypothesis::Null)?;
    let alt = replicate_statistics(test, f_alt, noise, reps, seed, Hypothesis::Alternative)?;
    let threshold = test.threshold();
    let mut records = Vec::with_capacity(2 * reps);
    let (mut rej0, mut acc1) = (0, 0);
    for (h, stats) in [(Hypothesis::Null, &null), (Hypothesis::Alternative, &alt)] {
        for (rep, &s) in stats.iter().enumerate() {
            let reject = test.rejects(s);
            match h {
                Hypothesis::Null => rej0 += reject as usize,
                Hypothesis::Alternative => acc1 += (!reject) as usize,
            }
            records.push(ReplicationRecord { rep, statistic: s, threshold, reject, hypothesis: h });
        }
    }
    let (type1, se1) = binomial_rate(rej0, reps);
    let (type2, se2) = binomial_rate(acc1, reps);
    Ok(MonteCarloRun {
        estimates: ErrorEstimates { type1, se1, type2, se2, cumulative: type1 + type2, replications: reps, seed },
        records,
    })
}

/// `theta_l = +sqrt(v*_l)` together with `<c, theta^2>` and `<q, theta^2>`.
#[derive(Clone, Debug, PartialEq)]
pub struct LeastFavorable {
    pub theta: Vec<(Index, f64)>,
    pub ellipsoid: f64,
    pub separation: f64,
}

pub fn least_favorable_alternative(sol: &ExtremalSolution) -> Result<LeastFavorable> {
    let theta: Vec<(Index, f64)> = sol.least_favorable().into_iter().map(|(i, v)| (i, v.sqrt())).collect();
    let ellipsoid: f64 = sol.entries.iter().zip(&theta).map(|(e, (_, th))| e.c * th * th).sum();
    let separation: f64 = sol.entries.iter().zip(&theta).map(|(e, (_, th))| e.q * th * th).sum();
    let r2 = sol.rate * sol.rate;
    if ellipsoid > 1.0 + 1e-9 || (separation - r2).abs() > 1e-9 * r2.max(1.0) {
        return Err(Error::domain(format!(
            "least favorable coefficients fail feasibility: <c,theta^2> = {ellipsoid}, <q,theta^2> = {separation}, r*^2 = {r2}"
        )));
    }
    Ok(LeastFavorable { theta, ellipsoid, separation })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilksDiagnostic {
    pub ks: f64,
    pub statistics: Vec<f64>,
    pub replications: usize,
    pub seed: u64,
}

/// Kolmogorov-Smirnov distance between the sample and `N(0,1)`.
pub fn ks_standard_normal(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = normal::cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Null distribution of the statistic at `f = 0` against the standard normal.
pub fn wilks_diagnostic(test: &PreparedTest, noise: NoiseSpec, reps: usize, seed: u64) -> Result<WilksDiagnostic> {
    if reps == 0 {
        return Err(Error::domain("reps must be positive"));
    }
    let statistics = replicate_statistics(test, &[], noise, reps, seed, Hypothesis::Null)?;
    Ok(WilksDiagnostic { ks: ks_standard_normal(&statistics), statistics, replications: reps, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::MultiIndex;
    use crate::estimator::empirical_coeff;
    use crate::spectra::CoefficientSpec;
    use crate::utest::{TestConfig, WeightSource};

    fn idx(v: &[i64]) -> Index {
        Index::single(MultiIndex::from(v.to_vec()))
    }

    #[test]
    fn zero_signal_has_centered_responses() {
        let n = 100_000;
        let s = generate_data(&[], &BasisSpec::dot(1), 1, n, NoiseSpec::Gaussian, 1).unwrap();
        let mean = s.responses().iter().sum::<f64>() / n as f64;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt());
    }

    #[test]
    fn recovers_single_coefficient() {
        let n = 100_000;
        let basis = BasisSpec::dot(1);
        let s = generate_data(&[(idx(&[1]), 0.5)], &basis, 1, n, NoiseSpec::Gaussian, 2).unwrap();
        let th = empirical_coeff(s.view(), &idx(&[1]), &basis).unwrap();
        assert!((th - 0.5).abs() < 3.0 * (1.0 + 0.5 * 2f64.sqrt()) / (n as f64).sqrt());
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let basis = BasisSpec::tensor(2);
        let th = [(idx(&[1, -2]), 0.3)];
        let a = generate_data(&th, &basis, 2, 500, NoiseSpec::student(), 9).unwrap();
        let b = generate_data(&th, &basis, 2, 500, NoiseSpec::student(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_laws_have_unit_variance() {
        let n = 200_000;
        for noise in [NoiseSpec::Gaussian, NoiseSpec::Rademacher, NoiseSpec::student()] {
            let s = generate_data(&[], &BasisSpec::dot(1), 1, n, noise, 4).unwrap();
            let m2 = s.responses().iter().map(|x| x * x).sum::<f64>() / n as f64;
            let m4 = s.responses().iter().map(|x| x.powi(4)).sum::<f64>() / n as f64;
            assert!((m2 - 1.0).abs() < 0.02, "{noise:?}: {m2}");
            assert!((m4 - noise.fourth_moment()).abs() < 0.1 * noise.fourth_moment(), "{noise:?}: {m4}");
        }
        assert!(NoiseSpec::ScaledStudent { df: 4.0 }.validate().is_err());
    }

    #[test]
    fn ks_distance_oracle() {
        assert!((ks_standard_normal(&[0.0]) - 0.5).abs() < 1e-12);
        let q: Vec<f64> = (0..999).map(|i| normal::quantile((i as f64 + 0.5) / 999.0).unwrap()).collect();
        assert!(ks_standard_normal(&q) <= 0.5 / 999.0 + 1e-12);
    }

    fn toy_test(n: usize) -> PreparedTest {
        let spec = CoefficientSpec::sobolev(vec![1.0], vec![0.0]).unwrap();
        let mut cfg = TestConfig::sharp(spec, BasisSpec::dot(1), n, 0.05);
        cfg.weights = WeightSource::Threshold { t: 2e3 };
        PreparedTest::new(&cfg).unwrap()
    }

    #[test]
    fn overwhelming_signal_has_no_type2_error() {
        let test = toy_test(400);
        let alt = [(idx(&[1]), 2.0), (idx(&[-1]), 2.0)];
        let run = monte_carlo(&test, &[], &alt, NoiseSpec::Gaussian, 100, 3).unwrap();
        assert_eq!(run.estimates.type2, 0.0);
        assert_eq!(run.records.len(), 200);
        assert!((run.estimates.cumulative - run.estimates.type1 - run.estimates.type2).abs() < 1e-15);
    }

    #[test]
    fn seed_determinism_and_rep_floor() {
        let test = toy_test(200);
        let a = monte_carlo(&test, &[], &[(idx(&[1]), 0.3)], NoiseSpec::Rademacher, 100, 11).unwrap();
        let b = monte_carlo(&test, &[], &[(idx(&[1]), 0.3)], NoiseSpec::Rademacher, 100, 11).unwrap();
        assert_eq!(a, b);
        assert!(monte_carlo(&test, &[], &[], NoiseSpec::Gaussian, 99, 0).is_err());
    }

    #[test]
    fn failing_replication_is_reported() {
        let test = toy_test(200);
        let bad = [(Index::single(MultiIndex::from(vec![1, 1])), 1.0)];
        assert!(matches!(
            monte_carlo(&test, &[], &bad, NoiseSpec::Gaussian, 100, 0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn least_favorable_is_feasible() {
        let spec = CoefficientSpec::sobolev(vec![1.0], vec![0.0]).unwrap();
        let sol = ExtremalSolution::at_threshold(&spec, 5e3, 1000, 0.05).unwrap();
        let lf = least_favorable_alternative(&sol).unwrap();
        assert!(lf.ellipsoid <= 1.0 + 1e-12);
        assert!((lf.separation - sol.rate * sol.rate).abs() < 1e-12);
        for ((_, th), e) in lf.theta.iter().zip(&sol.entries) {
            assert!((th * th - e.v_star).abs() <= 1e-15 * e.v_star.max(1e-300));
        }
    }
}
