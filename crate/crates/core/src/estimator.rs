//! Samples, empirical Fourier coefficients and the pilot estimator of the
//! projection of `f` onto the indices outside `S_F`.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{check_point, nyquist_grid, BasisSpec, Index, MultiIndex};
use crate::error::{Error, Result};
use crate::spectra::{complement_set, inverse_c_sum, CoefficientSpec, Entry, Family};

/// Observations `(t_i, x_i)` with `t_i` in `[0,1]^dim`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    dim: usize,
    t: Vec<f64>,
    x: Vec<f64>,
}

/// Borrowed run of consecutive observations.
#[derive(Clone, Copy, Debug)]
pub struct SampleView<'a> {
    pub dim: usize,
    pub t: &'a [f64],
    pub x: &'a [f64],
}

impl Sample {
    pub const MIN_LEN: usize = 4;

    pub fn new(dim: usize, t: Vec<f64>, x: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("sample dimension must be positive"));
        }
        if t.len() != dim * x.len() {
            return Err(Error::domain(format!(
                "{} coordinates do not match {} responses in dimension {dim}",
                t.len(),
                x.len()
            )));
        }
        if x.len() < Self::MIN_LEN {
            return Err(Error::domain(format!("a sample needs at least {} points, got {}", Self::MIN_LEN, x.len())));
        }
        for (i, p) in t.chunks(dim).enumerate() {
            check_point(p, dim).map_err(|e| Error::domain(format!("point {i}: {e}")))?;
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("response {i} is not finite")));
        }
        Ok(Sample { dim, t, x })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.t[i * self.dim..(i + 1) * self.dim]
    }

    pub fn responses(&self) -> &[f64] {
        &self.x
    }

    pub fn points(&self) -> &[f64] {
        &self.t
    }

    pub fn view(&self) -> SampleView<'_> {
        SampleView { dim: self.dim, t: &self.t, x: &self.x }
    }

    pub fn slice(&self, r: Range<usize>) -> SampleView<'_> {
        SampleView {
            dim: self.dim,
            t: &self.t[r.start * self.dim..r.end * self.dim],
            x: &self.x[r],
        }
    }

    /// Divides every response by a known noise level `tau`.
    pub fn rescaled(&self, tau: f64) -> Result<Sample> {
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::domain(format!("tau = {tau} must be positive")));
        }
        Ok(Sample { dim: self.dim, t: self.t.clone(), x: self.x.iter().map(|v| v / tau).collect() })
    }
}

impl<'a> SampleView<'a> {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn point(&self, i: usize) -> &'a [f64] {
        &self.t[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &'a [f64]> {
        self.t.chunks(self.dim)
    }
}

fn check_index(view: &SampleView<'_>, idx: &Index, basis: &BasisSpec) -> Result<()> {
    if idx.lattice.dim() != basis.dim {
        return Err(Error::domain(format!("index {idx} does not match basis dimension {}", basis.dim)));
    }
    if idx.lattice.is_zero() {
        return Err(Error::domain("the zero index is excluded"));
    }
    if idx.design_dim() != view.dim {
        return Err(Error::domain(format!(
            "index {idx} acts on dimension {} but the sample has dimension {}",
            idx.design_dim(),
            view.dim
        )));
    }
    Ok(())
}

/// `(1/n) sum_i x_i phi_l(t_i)`.
pub fn empirical_coeff(sample: SampleView<'_>, idx: &Index, basis: &BasisSpec) -> Result<f64> {
    check_index(&sample, idx, basis)?;
    if sample.is_empty() {
        return Err(Error::domain("empty sample"));
    }
    let s: f64 = sample
        .points()
        .zip(sample.x)
        .map(|(t, x)| x * basis.value_index(idx, t))
        .sum();
    Ok(s / sample.len() as f64)
}

/// Same as [`empirical_coeff`] for a plain lattice index.
pub fn empirical_coeff_lattice(sample: SampleView<'_>, l: &MultiIndex, basis: &BasisSpec) -> Result<f64> {
    empirical_coeff(sample, &Index::single(l.clone()), basis)
}

/// Empirical coefficients on `N_1(T) = { l : q_l = 0, c_l < T }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PilotEstimate {
    pub coefficients: Vec<(Index, f64)>,
    pub t_pilot: f64,
}

impl PilotEstimate {
    pub fn empty(t_pilot: f64) -> Self {
        PilotEstimate { coefficients: Vec::new(), t_pilot }
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }
}

/// `floor(sqrt(n) / 4)`
pub fn pilot_cap(n_pilot: usize) -> usize {
    ((n_pilot as f64).sqrt() / 4.0).floor() as usize
}

/// `floor(min(n^0.4, sqrt(n)/4))`, the size targeted by the default threshold.
pub fn pilot_target_size(n_pilot: usize) -> usize {
    let n = n_pilot as f64;
    n.powf(0.4).min(n.sqrt() / 4.0).floor() as usize
}

fn complement_is_empty(spec: &CoefficientSpec) -> bool {
    match spec.family() {
        Family::SobolevDerivative { alpha, .. } | Family::TwoSampleNorm { alpha, .. } => alpha.iter().all(|&a| a == 0.0),
        Family::Explicit { .. } => true,
        Family::SingleIndex { .. } => false,
    }
}

fn sorted_by_c(mut v: Vec<Entry>) -> Vec<Entry> {
    v.sort_by(|a, b| a.c.total_cmp(&b.c).then_with(|| a.index.cmp(&b.index)));
    v
}

/// Largest `T` whose pilot set has at most [`pilot_target_size`] entries.
/// Returns `1` when the family has no index outside `S_F`.
pub fn default_pilot_threshold(spec: &CoefficientSpec, n_pilot: usize) -> Result<f64> {
    if complement_is_empty(spec) {
        return Ok(1.0);
    }
    let k = pilot_target_size(n_pilot);
    let mut t = 1.0;
    let mut last: Vec<Entry> = Vec::new();
    for _ in 0..64 {
        let set = match complement_set(spec, t) {
            Ok(s) => s,
            Err(Error::ActiveSetTooLarge { .. }) => break,
            Err(e) => return Err(e),
        };
        if set.len() > k {
            return Ok(sorted_by_c(set)[k].c);
        }
        last = set;
        t *= 16.0;
    }
    Ok(if last.is_empty() { 1.0 } else { t })
}

/// Pilot fit on `N_1(T_pilot)` with the default cap `sqrt(n)/4`.
pub fn pilot_fit(sample: SampleView<'_>, spec: &CoefficientSpec, basis: &BasisSpec, t_pilot: f64) -> Result<PilotEstimate> {
    pilot_fit_with_cap(sample, spec, basis, t_pilot, pilot_cap(sample.len()))
}

pub fn pilot_fit_with_cap(
    sample: SampleView<'_>,
    spec: &CoefficientSpec,
    basis: &BasisSpec,
    t_pilot: f64,
    cap: usize,
) -> Result<PilotEstimate> {
    if !(t_pilot.is_finite() && t_pilot > 0.0) {
        return Err(Error::domain(format!("pilot threshold {t_pilot} must be positive")));
    }
    if spec.dim() != basis.dim {
        return Err(Error::domain("basis and coefficient family dimensions differ"));
    }
    let set = complement_set(spec, t_pilot)?;
    if set.len() > cap {
        return Err(Error::PilotTooLarge { size: set.len(), cap });
    }
    let coefficients = set
        .par_iter()
        .map(|e| Ok((e.index.clone(), empirical_coeff(sample, &e.index, basis)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PilotEstimate { coefficients, t_pilot })
}

/// `sum_l theta_hat_l phi_l(t)`.
pub fn pilot_eval(pilot: &PilotEstimate, basis: &BasisSpec, t: &[f64]) -> f64 {
    pilot.coefficients.iter().map(|(i, th)| th * basis.value_index(i, t)).sum()
}

/// Which sufficient condition for pilot consistency the family meets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PilotBranch {
    /// `sum 1/c_l < infinity`, checked numerically.
    InverseSeries,
    /// Anisotropic Sobolev embedding of the family's ellipsoid.
    SobolevEmbedding,
    /// Neither condition could be verified.
    Unverified,
}

pub fn pilot_branch(spec: &CoefficientSpec) -> PilotBranch {
    if inverse_c_sum(spec).is_some() {
        return PilotBranch::InverseSeries;
    }
    match spec.family() {
        Family::SobolevDerivative { .. } | Family::TwoSampleNorm { .. } | Family::SingleIndex { .. } => {
            PilotBranch::SobolevEmbedding
        }
        Family::Explicit { .. } => PilotBranch::Unverified,
    }
}

/// Coefficient-wise difference of two finitely supported functions.
fn difference(a: &[(Index, f64)], b: &[(Index, f64)]) -> Vec<(Index, f64)> {
    let mut map: std::collections::BTreeMap<Index, f64> = a.iter().cloned().collect();
    for (i, v) in b {
        *map.entry(i.clone()).or_insert(0.0) -= v;
    }
    map.into_iter().collect()
}

/// `||Pi f - Pi_hat f||_2^2` by Parseval.
pub fn pilot_l2_error(pilot: &PilotEstimate, projection: &[(Index, f64)]) -> f64 {
    difference(projection, &pilot.coefficients).iter().map(|(_, v)| v * v).sum()
}

/// `||Pi f - Pi_hat f||_4^4` by the trapezoid rule on a grid fine enough to
/// integrate the fourth power of the difference exactly.
pub fn pilot_l4_error(pilot: &PilotEstimate, projection: &[(Index, f64)], basis: &BasisSpec) -> Result<f64> {
    let diff = difference(projection, &pilot.coefficients);
    if diff.is_empty() {
        return Ok(0.0);
    }
    let dim = diff[0].0.design_dim();
    let lattice: Vec<MultiIndex> = diff.iter().map(|(i, _)| i.lattice.clone()).collect();
    let g = nyquist_grid(&lattice) + 1;
    let total = (g as u64).checked_pow(dim as u32).filter(|&p| p <= 1 << 26).ok_or(Error::ActiveSetTooLarge {
        side: g as u64,
        cap: 1 << 26,
    })?;
    const CHUNK: u64 = 4096;
    let partial: Vec<f64> = (0..total.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut t = [0.0; 16];
            let mut acc = 0.0;
            for mut k in c * CHUNK..((c + 1) * CHUNK).min(total) {
                for tj in t.iter_mut().take(dim) {
                    *tj = (k % g as u64) as f64 / g as f64;
                    k /= g as u64;
                }
                let v: f64 = diff.iter().map(|(i, c)| c * basis.value_index(i, &t[..dim])).sum();
                acc += v.powi(4);
            }
            acc
        })
        .collect();
    let sum: f64 = partial.iter().sum();
    Ok(sum / total as f64)
}
