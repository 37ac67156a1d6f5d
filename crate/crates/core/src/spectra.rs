//! Coefficient arrays `c_l` (ellipsoid) and `q_l` (quadratic functional),
//! active sets `N(T)` and their spectral sums.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{Index, MultiIndex};
use crate::error::{Error, Result};

const TAU: f64 = 2.0 * PI;

/// Relative tolerance under which a single-index `q_l` is treated as zero.
const SINGLE_INDEX_ZERO: f64 = 1e-12;

/// Default bound on the number of lattice points scanned by one enumeration.
pub const DEFAULT_MAX_BOX_POINTS: u64 = 1 << 26;

/// One member of an explicitly listed spectrum.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplicitEntry {
    pub index: Index,
    pub c: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    /// `c_l = sum_j (2 pi l_j)^{2 sigma_j}`, `q_l = prod_j (2 pi l_j)^{2 alpha_j}`.
    SobolevDerivative { sigma: Vec<f64>, alpha: Vec<f64> },
    /// `q_l = (2 pi)^2 (|l|^2 - (beta . l)^2)`, `c_l = sum_j (2 pi l_j)^{2 sigma}`.
    SingleIndex { sigma: f64, beta: Vec<f64> },
    /// Index `(m, s)` with `q = (-1)^s prod_j (2 pi m_j)^{2 alpha_j}`.
    TwoSampleNorm { sigma: Vec<f64>, alpha: Vec<f64> },
    /// Finite list of `(index, c, q)`.
    Explicit { entries: Vec<ExplicitEntry> },
}

/// A validated coefficient family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoefficientSpec {
    family: Family,
    dim: usize,
}

impl<'de> Deserialize<'de> for CoefficientSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let family = Family::deserialize(d)?;
        CoefficientSpec::new(family).map_err(serde::de::Error::custom)
    }
}

/// `delta = sum_j alpha_j / sigma_j`.
pub fn delta_of(sigma: &[f64], alpha: &[f64]) -> f64 {
    sigma.iter().zip(alpha).map(|(s, a)| a / s).sum()
}

/// Harmonic mean of `sigma`.
pub fn sigma_bar_of(sigma: &[f64]) -> f64 {
    sigma.len() as f64 / sigma.iter().map(|s| 1.0 / s).sum::<f64>()
}

pub(crate) fn check_sobolev(sigma: &[f64], alpha: &[f64]) -> Result<()> {
    if sigma.is_empty() {
        return Err(Error::domain("sigma must have at least one entry"));
    }
    if sigma.len() != alpha.len() {
        return Err(Error::domain(format!(
            "sigma has length {} but alpha has length {}",
            sigma.len(),
            alpha.len()
        )));
    }
    if sigma.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::domain("every sigma_j must be positive"));
    }
    if alpha.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
        return Err(Error::domain("every alpha_j must be nonnegative"));
    }
    let delta = delta_of(sigma, alpha);
    if delta >= 1.0 {
        return Err(Error::domain(format!(
            "delta = sum alpha_j/sigma_j = {delta} must be < 1"
        )));
    }
    let d = sigma.len() as f64;
    let sb = sigma_bar_of(sigma);
    if sb <= d / 4.0 {
        return Err(Error::domain(format!(
            "harmonic mean sigma_bar = {sb} must exceed d/4 = {}",
            d / 4.0
        )));
    }
    Ok(())
}

impl CoefficientSpec {
    pub fn new(family: Family) -> Result<Self> {
        let dim = match &family {
            Family::SobolevDerivative { sigma, alpha } | Family::TwoSampleNorm { sigma, alpha } => {
                check_sobolev(sigma, alpha)?;
                sigma.len()
            }
            Family::SingleIndex { sigma, beta } => {
                if beta.is_empty() {
                    return Err(Error::domain("beta must have at least one entry"));
                }
                let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-12 {
                    return Err(Error::domain(format!("beta must be a unit vector, |beta| = {norm}")));
                }
                let d = beta.len() as f64;
                if !(sigma.is_finite() && *sigma > d / 4.0) {
                    return Err(Error::domain(format!(
                        "sigma = {sigma} must exceed d/4 = {}",
                        d / 4.0
                    )));
                }
                beta.len()
            }
            Family::Explicit { entries } => {
                let first = entries
                    .first()
                    .ok_or_else(|| Error::domain("explicit spectrum must be nonempty"))?;
                let dim = first.index.lattice.dim();
                for e in entries {
                    if e.index.lattice.dim() != dim {
                        return Err(Error::domain("explicit entries must share one dimension"));
                    }
                    if e.index.lattice.is_zero() {
                        return Err(Error::domain("the zero index is excluded"));
                    }
                    if !(e.c.is_finite() && e.c > 0.0 && e.q.is_finite()) {
                        return Err(Error::domain(format!(
                            "entry {} needs c > 0 and finite q",
                            e.index
                        )));
                    }
                    if e.q == 0.0 {
                        return Err(Error::domain(format!("entry {} has q = 0", e.index)));
                    }
                }
                let mut seen: Vec<&Index> = entries.iter().map(|e| &e.index).collect();
                seen.sort();
                if seen.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::domain("explicit entries must have distinct indices"));
                }
                dim
            }
        };
        Ok(CoefficientSpec { family, dim })
    }

    pub fn sobolev(sigma: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        Self::new(Family::SobolevDerivative { sigma, alpha })
    }

    pub fn single_index(sigma: f64, beta: Vec<f64>) -> Result<Self> {
        Self::new(Family::SingleIndex { sigma, beta })
    }

    pub fn two_sample(sigma: Vec<f64>, alpha: Vec<f64>) -> Result<Self> {
        Self::new(Family::TwoSampleNorm { sigma, alpha })
    }

    /// Finite list with one-dimensional synthetic indices `1, 2, ...`.
    pub fn explicit_list(c: &[f64], q: &[f64]) -> Result<Self> {
        if c.len() != q.len() {
            return Err(Error::domain("c and q must have equal length"));
        }
        let entries = c
            .iter()
            .zip(q)
            .enumerate()
            .map(|(k, (&c, &q))| ExplicitEntry {
                index: Index::single(MultiIndex::from(vec![k as i64 + 1])),
                c,
                q,
            })
            .collect();
        Self::new(Family::Explicit { entries })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    /// Lattice dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Dimension of the design points (doubled for the two-sample family).
    pub fn design_dim(&self) -> usize {
        match &self.family {
            Family::TwoSampleNorm { .. } => 2 * self.dim,
            Family::Explicit { entries } => entries[0].index.design_dim(),
            _ => self.dim,
        }
    }

    pub fn is_finite_list(&self) -> bool {
        matches!(self.family, Family::Explicit { .. })
    }

    /// `true` when every `q_l >= 0`.
    pub fn is_nonnegative(&self) -> bool {
        match &self.family {
            Family::TwoSampleNorm { .. } => false,
            Family::Explicit { entries } => entries.iter().all(|e| e.q >= 0.0),
            _ => true,
        }
    }

    /// `true` when both sign classes are nonempty.
    pub fn has_both_signs(&self) -> bool {
        match &self.family {
            Family::TwoSampleNorm { .. } => true,
            Family::Explicit { entries } => {
                entries.iter().any(|e| e.q > 0.0) && entries.iter().any(|e| e.q < 0.0)
            }
            _ => false,
        }
    }

    /// `(delta, sigma_bar)` for the Sobolev-type families.
    pub fn smoothness(&self) -> Option<(f64, f64)> {
        match &self.family {
            Family::SobolevDerivative { sigma, alpha } | Family::TwoSampleNorm { sigma, alpha } => {
                Some((delta_of(sigma, alpha), sigma_bar_of(sigma)))
            }
            _ => None,
        }
    }

    /// Closed-form `(c_l, q_l)`; `q_l = 0` marks indices outside `S_F`.
    pub fn coeff(&self, idx: &Index) -> Result<(f64, f64)> {
        if idx.lattice.dim() != self.dim {
            return Err(Error::domain(format!(
                "index {idx} has dimension {} but the family has dimension {}",
                idx.lattice.dim(),
                self.dim
            )));
        }
        if idx.lattice.is_zero() {
            return Err(Error::domain("the zero lattice index is excluded"));
        }
        match &self.family {
            Family::TwoSampleNorm { .. } => match idx.sample {
                Some(1) | Some(2) => Ok(self.coeff_unchecked(idx)),
                _ => Err(Error::domain("two-sample indices need a sample tag 1 or 2")),
            },
            Family::Explicit { entries } => entries
                .iter()
                .find(|e| &e.index == idx)
                .map(|e| (e.c, e.q))
                .ok_or_else(|| Error::domain(format!("index {idx} is not in the explicit list"))),
            _ => {
                if idx.sample.is_some() {
                    return Err(Error::domain("sample tags are only used by the two-sample family"));
                }
                Ok(self.coeff_unchecked(idx))
            }
        }
    }

    fn coeff_unchecked(&self, idx: &Index) -> (f64, f64) {
        let l = idx.lattice.entries();
        match &self.family {
            Family::SobolevDerivative { sigma, alpha } => (sobolev_c(l, sigma), sobolev_q(l, alpha)),
            Family::TwoSampleNorm { sigma, alpha } => {
                let q = sobolev_q(l, alpha);
                let sign = if idx.sample == Some(1) { -1.0 } else { 1.0 };
                (sobolev_c(l, sigma), sign * q)
            }
            Family::SingleIndex { sigma, beta } => {
                let c = l.iter().map(|&k| (TAU * k.unsigned_abs() as f64).powf(2.0 * sigma)).sum();
                let norm2: f64 = l.iter().map(|&k| (k as f64).powi(2)).sum();
                let proj: f64 = l.iter().zip(beta).map(|(&k, b)| k as f64 * b).sum();
                let gap = norm2 - proj * proj;
                let q = if gap.abs() <= SINGLE_INDEX_ZERO * norm2 { 0.0 } else { TAU * TAU * gap };
                (c, q)
            }
            Family::Explicit { entries } => entries
                .iter()
                .find(|e| &e.index == idx)
                .map(|e| (e.c, e.q))
                .unwrap_or((f64::INFINITY, 0.0)),
        }
    }

    /// Per-axis bounds `b_j` such that every member of `N(T)` has `|l_j| < b_j`.
    fn active_box(&self, t: f64) -> Result<Vec<f64>> {
        match &self.family {
            Family::SobolevDerivative { sigma, alpha } | Family::TwoSampleNorm { sigma, alpha } => {
                // max_j (2 pi |l_j|)^{2 sigma_j} < T^{1/(1-delta)}
                let delta = delta_of(sigma, alpha);
                Ok(sigma
                    .iter()
                    .map(|s| t.powf(1.0 / (2.0 * s * (1.0 - delta))) / TAU)
                    .collect())
            }
            Family::SingleIndex { sigma, .. } => {
                if *sigma <= 1.0 {
                    return Err(Error::domain(format!(
                        "single-index active sets are infinite unless sigma > 1 (sigma = {sigma})"
                    )));
                }
                let d = self.dim as f64;
                let b = (t * d.powf(1.0 - 1.0 / sigma)).powf(1.0 / (2.0 * sigma - 2.0)) / TAU;
                Ok(vec![b; self.dim])
            }
            Family::Explicit { .. } => Ok(vec![0.0; self.dim]),
        }
    }

    /// Per-axis bounds for `{l : c_l < T}`.
    fn ellipsoid_box(&self, t: f64) -> Vec<f64> {
        match &self.family {
            Family::SobolevDerivative { sigma, .. } | Family::TwoSampleNorm { sigma, .. } => {
                sigma.iter().map(|s| t.powf(1.0 / (2.0 * s)) / TAU).collect()
            }
            Family::SingleIndex { sigma, .. } => vec![t.powf(1.0 / (2.0 * sigma)) / TAU; self.dim],
            Family::Explicit { .. } => vec![0.0; self.dim],
        }
    }

    fn expand(&self, l: MultiIndex) -> Vec<Index> {
        match self.family {
            Family::TwoSampleNorm { .. } => {
                vec![Index::two_sample(l.clone(), 1), Index::two_sample(l, 2)]
            }
            _ => vec![Index::single(l)],
        }
    }
}

fn sobolev_c(l: &[i64], sigma: &[f64]) -> f64 {
    l.iter()
        .zip(sigma)
        .map(|(&k, s)| (TAU * k.unsigned_abs() as f64).powf(2.0 * s))
        .sum()
}

fn sobolev_q(l: &[i64], alpha: &[f64]) -> f64 {
    // powf(0, 0) = 1 supplies the 0^0 = 1 convention
    l.iter()
        .zip(alpha)
        .map(|(&k, a)| (TAU * k.unsigned_abs() as f64).powf(2.0 * a))
        .product()
}

/// Membership test of `N(T)`, strict at the boundary.
#[inline]
pub fn is_active(c: f64, q: f64, t: f64) -> bool {
    q != 0.0 && c < t * q.abs()
}

/// A coefficient together with its index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub index: Index,
    pub c: f64,
    pub q: f64,
}

/// The truncation set `N(T)`, sorted by index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveSet {
    pub threshold: f64,
    pub entries: Vec<Entry>,
}

impl ActiveSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn indices(&self) -> impl Iterator<Item = &Index> {
        self.entries.iter().map(|e| &e.index)
    }
}

/// Scans the box `|l_j| <= r_j` (zero excluded), keeping lattice points
/// accepted by `keep`. Output is in lexicographic order.
fn scan_box<F>(radii: &[u64], max_points: u64, keep: F) -> Result<Vec<MultiIndex>>
where
    F: Fn(&[i64]) -> bool + Sync,
{
    let d = radii.len();
    let mut volume: u64 = 1;
    for &r in radii {
        volume = volume.saturating_mul(2 * r + 1);
    }
    if volume > max_points {
        let side = radii.iter().copied().max().unwrap_or(0);
        let cap = ((max_points as f64).powf(1.0 / d as f64) as u64).saturating_sub(1) / 2;
        return Err(Error::ActiveSetTooLarge { side, cap });
    }
    let r0 = radii[0] as i64;
    let rest = &radii[1..];
    let found: Vec<Vec<MultiIndex>> = (-r0..=r0)
        .into_par_iter()
        .map(|first| {
            let mut out = Vec::new();
            let mut l = vec![0i64; d];
            l[0] = first;
            for (k, &r) in rest.iter().enumerate() {
                l[k + 1] = -(r as i64);
            }
            loop {
                if l.iter().any(|&v| v != 0) && keep(&l) {
                    out.push(MultiIndex::from(l.clone()));
                }
                let mut axis = d;
                loop {
                    if axis == 1 {
                        return out;
                    }
                    axis -= 1;
                    let r = rest[axis - 1] as i64;
                    if l[axis] < r {
                        l[axis] += 1;
                        break;
                    }
                    l[axis] = -r;
                }
            }
        })
        .collect();
    Ok(found.into_iter().flatten().collect())
}

fn radii_from(bounds: &[f64]) -> Vec<u64> {
    // |l_j| < b_j  ⇒  |l_j| <= floor(b_j), so floor gives a safe scan radius
    bounds
        .iter()
        .map(|b| if b.is_finite() { b.max(0.0).floor() as u64 } else { u64::MAX / 4 })
        .collect()
}

/// `N(T) = {l in S_F : c_l < T |q_l|}`.
pub fn active_set(spec: &CoefficientSpec, t: f64) -> Result<ActiveSet> {
    active_set_capped(spec, t, DEFAULT_MAX_BOX_POINTS)
}

pub fn active_set_capped(spec: &CoefficientSpec, t: f64, max_points: u64) -> Result<ActiveSet> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::domain(format!("threshold T = {t} must be positive and finite")));
    }
    let entries = match &spec.family {
        Family::Explicit { entries } => {
            let mut v: Vec<Entry> = entries
                .iter()
                .filter(|e| is_active(e.c, e.q, t))
                .map(|e| Entry { index: e.index.clone(), c: e.c, q: e.q })
                .collect();
            v.sort_by(|a, b| a.index.cmp(&b.index));
            v
        }
        _ => {
            let radii = radii_from(&spec.active_box(t)?);
            let lattice = scan_box(&radii, max_points, |l| {
                let idx = spec.expand(MultiIndex::from(l.to_vec()));
                idx.iter().any(|i| {
                    let (c, q) = spec.coeff_unchecked(i);
                    is_active(c, q, t)
                })
            })?;
            let mut v = Vec::new();
            for l in lattice {
                for idx in spec.expand(l) {
                    let (c, q) = spec.coeff_unchecked(&idx);
                    if is_active(c, q, t) {
                        v.push(Entry { index: idx, c, q });
                    }
                }
            }
            v
        }
    };
    Ok(ActiveSet { threshold: t, entries })
}

/// Nonzero indices outside `S_F` (`q_l = 0`) with `c_l < T`, sorted by index.
pub fn complement_set(spec: &CoefficientSpec, t: f64) -> Result<Vec<Entry>> {
    if !(t.is_finite() && t > 0.0) {
        return Err(Error::domain(format!("threshold T = {t} must be positive and finite")));
    }
    if let Family::Explicit { .. } = spec.family {
        return Ok(Vec::new());
    }
    let radii = radii_from(&spec.ellipsoid_box(t));
    let lattice = scan_box(&radii, DEFAULT_MAX_BOX_POINTS, |l| {
        spec.expand(MultiIndex::from(l.to_vec())).iter().any(|i| {
            let (c, q) = spec.coeff_unchecked(i);
            q == 0.0 && c < t
        })
    })?;
    let mut out = Vec::new();
    for l in lattice {
        for idx in spec.expand(l) {
            let (c, q) = spec.coeff_unchecked(&idx);
            if q == 0.0 && c < t {
                out.push(Entry { index: idx, c, q });
            }
        }
    }
    Ok(out)
}

/// Entries of least `c` among `q > 0` and among `q < 0`, ties broken by
/// index order.
pub fn least_c_by_sign(spec: &CoefficientSpec) -> Result<(Entry, Entry)> {
    let pick = |entries: &mut dyn Iterator<Item = Entry>| {
        let (mut plus, mut minus): (Option<Entry>, Option<Entry>) = (None, None);
        for e in entries {
            let slot = if e.q > 0.0 { &mut plus } else if e.q < 0.0 { &mut minus } else { continue };
            let better = slot
                .as_ref()
                .is_none_or(|b| e.c < b.c || (e.c == b.c && e.index < b.index));
            if better {
                *slot = Some(e);
            }
        }
        (plus, minus)
    };
    if let Family::Explicit { entries } = &spec.family {
        let mut it = entries.iter().map(|e| Entry { index: e.index.clone(), c: e.c, q: e.q });
        return match pick(&mut it) {
            (Some(p), Some(m)) => Ok((p, m)),
            _ => Err(Error::domain("both sign classes of q must be nonempty")),
        };
    }
    if !spec.has_both_signs() {
        return Err(Error::domain("both sign classes of q must be nonempty"));
    }
    let mut t = 1.0;
    loop {
        let radii = radii_from(&spec.ellipsoid_box(t));
        let lattice = scan_box(&radii, DEFAULT_MAX_BOX_POINTS, |l| {
            spec.expand(MultiIndex::from(l.to_vec())).iter().any(|i| {
                let (c, q) = spec.coeff_unchecked(i);
                q != 0.0 && c < t
            })
        })?;
        let mut it = lattice.into_iter().flat_map(|l| {
            spec.expand(l).into_iter().filter_map(|idx| {
                let (c, q) = spec.coeff_unchecked(&idx);
                (c < t).then_some(Entry { index: idx, c, q })
            })
        });
        if let (Some(p), Some(m)) = pick(&mut it) {
            return Ok((p, m));
        }
        t *= 16.0;
    }
}

/// `sum_{l != 0} 1/c_l` over the whole lattice (both samples for the
/// two-sample family), or `None` when the series diverges or does not settle.
pub fn inverse_c_sum(spec: &CoefficientSpec) -> Option<f64> {
    let sigma: Vec<f64> = match &spec.family {
        Family::SobolevDerivative { sigma, .. } | Family::TwoSampleNorm { sigma, .. } => sigma.clone(),
        Family::SingleIndex { sigma, .. } => vec![*sigma; spec.dim],
        Family::Explicit { entries } => return Some(entries.iter().map(|e| 1.0 / e.c).sum()),
    };
    let d = spec.dim as f64;
    if sigma_bar_of(&sigma) <= d / 2.0 {
        return None;
    }
    let copies = if matches!(spec.family, Family::TwoSampleNorm { .. }) { 2.0 } else { 1.0 };
    let shell_sum = |k: u64| -> Option<f64> {
        let radii = vec![k; spec.dim];
        let pts = scan_box(&radii, 1 << 24, |_| true).ok()?;
        Some(pts.iter().map(|l| 1.0 / sobolev_c(l.entries(), &sigma)).sum())
    };
    let mut k = 8u64;
    let mut prev = shell_sum(k)?;
    loop {
        k *= 2;
        let cur = shell_sum(k)?;
        if (cur - prev).abs() <= 1e-6 * cur {
            return Some(copies * cur);
        }
        prev = cur;
    }
}

/// Exact spectral sums over an active set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpectralSums {
    pub threshold: f64,
    /// `sum (q - c/T)_+^2`
    pub i0: f64,
    /// `sum q (q - c/T)_+`
    pub i1: f64,
    /// `i1 - i0`
    pub i2: f64,
    /// `J(T) = sum c (T q - c)_+`
    pub j: f64,
    /// `sum (T q - c)_+^2`
    pub s2: f64,
    /// `sum q (T q - c)_+`
    pub sq: f64,
    /// `M(T) = sum q^2`
    pub m: f64,
    pub m_plus: f64,
    pub m_minus: f64,
    pub count: usize,
    pub n_plus: usize,
    pub n_minus: usize,
    /// Size of the sign class carrying the larger share of `M`.
    pub n_star: usize,
    pub m_star: f64,
}

pub fn sums_over(entries: &[Entry], t: f64) -> SpectralSums {
    let mut s = SpectralSums { threshold: t, ..Default::default() };
    for e in entries {
        let a = (t * e.q - e.c).max(0.0);
        let b = (e.q - e.c / t).max(0.0);
        s.i0 += b * b;
        s.i1 += e.q * b;
        s.j += e.c * a;
        s.s2 += a * a;
        s.sq += e.q * a;
        let q2 = e.q * e.q;
        s.m += q2;
        if e.q > 0.0 {
            s.m_plus += q2;
            s.n_plus += 1;
        } else {
            s.m_minus += q2;
            s.n_minus += 1;
        }
    }
    s.i2 = s.i1 - s.i0;
    s.count = entries.len();
    if s.m_plus >= s.m_minus {
        s.m_star = s.m_plus;
        s.n_star = s.n_plus;
    } else {
        s.m_star = s.m_minus;
        s.n_star = s.n_minus;
    }
    s
}

pub fn spectral_sums(set: &ActiveSet) -> SpectralSums {
    sums_over(&set.entries, set.threshold)
}

/// Members of `S_F` sorted by `c/|q|`, complete for every `T <= t_max`.
/// Any `N(T)` with `T <= t_max` is a prefix.
#[derive(Clone, Debug)]
pub struct Spectrum {
    spec: CoefficientSpec,
    t_max: f64,
    entries: Vec<Entry>,
}

impl Spectrum {
    pub fn new(spec: &CoefficientSpec, t_max: f64) -> Result<Self> {
        let mut s = Spectrum { spec: spec.clone(), t_max: 0.0, entries: Vec::new() };
        s.fill(t_max)?;
        Ok(s)
    }

    fn fill(&mut self, t_max: f64) -> Result<()> {
        let t_max = if self.spec.is_finite_list() { f64::INFINITY } else { t_max };
        let mut entries = match &self.spec.family {
            Family::Explicit { entries } => entries
                .iter()
                .map(|e| Entry { index: e.index.clone(), c: e.c, q: e.q })
                .collect(),
            _ => active_set(&self.spec, t_max)?.entries,
        };
        entries.sort_by(|a, b| {
            (a.c / a.q.abs())
                .total_cmp(&(b.c / b.q.abs()))
                .then_with(|| a.index.cmp(&b.index))
        });
        self.entries = entries;
        self.t_max = t_max;
        Ok(())
    }

    pub fn spec(&self) -> &CoefficientSpec {
        &self.spec
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Makes the cache complete up to at least `t`.
    pub fn ensure(&mut self, t: f64) -> Result<()> {
        if t > self.t_max {
            self.fill(t.max(4.0 * self.t_max))?;
        }
        Ok(())
    }

    /// Smallest breakpoint `c/|q|`, growing the cache until one exists.
    pub fn first_ratio(&mut self) -> Result<f64> {
        let mut t = self.t_max.max(1.0);
        while self.entries.is_empty() {
            if self.spec.is_finite_list() {
                return Err(Error::domain("empty spectrum"));
            }
            t *= 16.0;
            self.ensure(t)?;
        }
        let e = &self.entries[0];
        Ok(e.c / e.q.abs())
    }

    /// Length of the prefix forming `N(T)`.
    pub fn count_below(&self, t: f64) -> usize {
        debug_assert!(t <= self.t_max);
        self.entries.partition_point(|e| is_active(e.c, e.q, t))
    }

    pub fn prefix(&self, t: f64) -> &[Entry] {
        &self.entries[..self.count_below(t)]
    }

    /// Spectral sums at `T`, extending the cache when needed.
    pub fn sums(&mut self, t: f64) -> Result<SpectralSums> {
        self.ensure(t)?;
        Ok(sums_over(self.prefix(t), t))
    }

    /// `N(T)` in index order.
    pub fn active(&mut self, t: f64) -> Result<ActiveSet> {
        self.ensure(t)?;
        let mut entries = self.prefix(t).to_vec();
        entries.sort_by(|a, b| a.index.cmp(&b.index));
        Ok(ActiveSet { threshold: t, entries })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(v: &[i64]) -> Index {
        Index::single(MultiIndex::from(v.to_vec()))
    }

    #[test]
    fn coeff_examples() {
        let s = CoefficientSpec::sobolev(vec![1.0], vec![0.0]).unwrap();
        let (c, q) = s.coeff(&idx(&[1])).unwrap();
        assert!((c - TAU * TAU).abs() < 1e-12);
        assert_eq!(q, 1.0);

        let s = CoefficientSpec::single_index(2.0, vec![1.0, 0.0]).unwrap();
        let (_, q) = s.coeff(&idx(&[0, 1])).unwrap();
        assert!((q - TAU * TAU).abs() < 1e-12);
        let (_, q) = s.coeff(&idx(&[3, 0])).unwrap();
        assert_eq!(q, 0.0);

        let s = CoefficientSpec::two_sample(vec![2.0], vec![0.0]).unwrap();
        let (_, q) = s.coeff(&Index::two_sample(MultiIndex::from(vec![1]), 1)).unwrap();
        assert_eq!(q, -1.0);
        let (_, q) = s.coeff(&Index::two_sample(MultiIndex::from(vec![1]), 2)).unwrap();
        assert_eq!(q, 1.0);
    }

    #[test]
    fn coeff_rejects_zero_index() {
        let s = CoefficientSpec::sobolev(vec![1.0], vec![0.0]).unwrap();
        assert!(s.coeff(&idx(&[0])).is_err());
    }

    #[test]
    fn invariants_are_enforced() {
        assert!(CoefficientSpec::sobolev(vec![1.0], vec![1.0]).is_err());
        assert!(CoefficientSpec::sobolev(vec![0.2], vec![0.0]).is_err());
        assert!(CoefficientSpec::single_index(2.0, vec![1.0, 1.0]).is_err());
        assert!(CoefficientSpec::two_sample(vec![2.0, 2.0], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn active_set_examples() {
        let s = CoefficientSpec::sobolev(vec![1.0], vec![0.0]).unwrap();
        let a = active_set(&s, 100.0).unwrap();
        let got: Vec<_> = a.indices().cloned().collect();
        assert_eq!(got, vec![idx(&[-1]), idx(&[1])]);
        assert!(active_set(&s, TAU * TAU).unwrap().is_empty());
    }

    #[test]
    fn active_set_matches_brute_force_2d() {
        let s = CoefficientSpec::sobolev(vec![2.0, 2.0], vec![0.0, 0.0]).unwrap();
        let a = active_set(&s, 1e4).unwrap();
        let mut brute = 0;
        for i in -10i64..=10 {
            for j in -10i64..=10 {
                if i == 0 && j == 0 {
                    continue;
                }
                let c = (TAU * i as f64).powi(4) + (TAU * j as f64).powi(4);
                if c < 1e4 {
                    brute += 1;
                }
            }
        }
        assert_eq!(a.len(), brute);
    }

    #[test]
    fn sums_examples() {
        let empty = sums_over(&[], 3.0);
        assert_eq!(empty.i0, 0.0);
        assert_eq!(empty.m, 0.0);
        let one = [Entry { index: idx(&[1]), c: 1.0, q: 1.0 }];
        let s = sums_over(&one, 2.0);
        assert!((s.i0 - 0.25).abs() < 1e-15);
        assert!((s.i1 - 0.5).abs() < 1e-15);
        assert_eq!(s.m, 1.0);
        let spec = CoefficientSpec::sobolev(vec![1.0], vec![0.0]).unwrap();
        assert_eq!(spectral_sums(&active_set(&spec, 100.0).unwrap()).m, 2.0);
    }

    #[test]
    fn two_sample_sign_classes() {
        let s = CoefficientSpec::two_sample(vec![2.0], vec![0.5]).unwrap();
        let a = active_set(&s, 1e4).unwrap();
        let sums = spectral_sums(&a);
        assert_eq!(sums.n_plus, sums.n_minus);
        assert!((sums.m - sums.m_plus - sums.m_minus).abs() < 1e-9 * sums.m);
    }

    #[test]
    fn complement_of_partial_derivative() {
        let s = CoefficientSpec::sobolev(vec![1.5, 1.5], vec![0.5, 0.0]).unwrap();
        let comp = complement_set(&s, 1e3).unwrap();
        assert!(!comp.is_empty());
        assert!(comp.iter().all(|e| e.index.lattice.entries()[0] == 0));
        let s = CoefficientSpec::sobolev(vec![1.0], vec![0.0]).unwrap();
        assert!(complement_set(&s, 1e6).unwrap().is_empty());
    }

    #[test]
    fn inverse_c_sum_one_dim() {
        // 2 zeta(4) / (2 pi)^4
        let s = CoefficientSpec::sobolev(vec![2.0], vec![0.0]).unwrap();
        let want = 2.0 * PI.powi(4) / 90.0 / TAU.powi(4);
        let got = inverse_c_sum(&s).unwrap();
        assert!((got - want).abs() < 1e-6 * want);
        let s = CoefficientSpec::sobolev(vec![0.5], vec![0.0]).unwrap();
        assert!(inverse_c_sum(&s).is_none());
    }

    #[test]
    fn spectrum_prefix_matches_active_set() {
        let spec = CoefficientSpec::sobolev(vec![1.0, 2.0], vec![0.25, 0.0]).unwrap();
        let mut sp = Spectrum::new(&spec, 10.0).unwrap();
        for t in [50.0, 300.0, 2000.0] {
            let a = sp.active(t).unwrap();
            assert_eq!(a, active_set(&spec, t).unwrap());
        }
    }
}
