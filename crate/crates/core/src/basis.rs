//! Orthonormal Fourier systems on the unit cube and lattice indices.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TAU: f64 = 2.0 * PI;

/// A lattice coordinate `l` in `Z^d`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MultiIndex(Vec<i64>);

impl MultiIndex {
    pub fn new(entries: Vec<i64>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::domain("multi-index must have at least one entry"));
        }
        Ok(MultiIndex(entries))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[i64] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&v| v == 0)
    }

    /// `true` when the first nonzero entry is positive (cosine branch).
    pub fn is_positive(&self) -> bool {
        self.0.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0)
    }

    pub fn max_abs(&self) -> u64 {
        self.0.iter().map(|v| v.unsigned_abs()).max().unwrap_or(0)
    }
}

impl From<Vec<i64>> for MultiIndex {
    fn from(v: Vec<i64>) -> Self {
        assert!(!v.is_empty(), "multi-index must be nonempty");
        MultiIndex(v)
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

/// Index of a coefficient: a lattice point plus, for the two-sample
/// construction, the sample it belongs to (1 or 2).
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Index {
    pub lattice: MultiIndex,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample: Option<u8>,
}

impl Index {
    pub fn single(lattice: MultiIndex) -> Self {
        Index { lattice, sample: None }
    }

    pub fn two_sample(lattice: MultiIndex, sample: u8) -> Self {
        Index { lattice, sample: Some(sample) }
    }

    /// Dimension of the design points this index is evaluated on.
    pub fn design_dim(&self) -> usize {
        match self.sample {
            None => self.lattice.dim(),
            Some(_) => 2 * self.lattice.dim(),
        }
    }
}

impl From<MultiIndex> for Index {
    fn from(l: MultiIndex) -> Self {
        Index::single(l)
    }
}

impl fmt::Display for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sample {
            None => write!(f, "{}", self.lattice),
            Some(s) => write!(f, "{}@{}", self.lattice, s),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BasisKind {
    FourierDotProduct,
    FourierTensor,
}

/// Fourier system on `[0,1]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub kind: BasisKind,
    pub dim: usize,
}

impl BasisSpec {
    pub fn new(kind: BasisKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::domain("basis dimension must be positive"));
        }
        Ok(BasisSpec { kind, dim })
    }

    pub fn dot(dim: usize) -> Self {
        BasisSpec { kind: BasisKind::FourierDotProduct, dim }
    }

    pub fn tensor(dim: usize) -> Self {
        BasisSpec { kind: BasisKind::FourierTensor, dim }
    }

    /// Uniform bound on `|phi_l|`.
    pub fn sup_norm(&self) -> f64 {
        match self.kind {
            BasisKind::FourierDotProduct => SQRT_2,
            BasisKind::FourierTensor => 2f64.powf(self.dim as f64 / 2.0),
        }
    }

    /// Evaluate `phi_l(t)` with argument checks.
    pub fn eval(&self, l: &MultiIndex, t: &[f64]) -> Result<f64> {
        if l.dim() != self.dim {
            return Err(Error::domain(format!(
                "index {l} has dimension {} but basis has dimension {}",
                l.dim(),
                self.dim
            )));
        }
        if l.is_zero() {
            return Err(Error::domain("the zero index is excluded"));
        }
        check_point(t, self.dim)?;
        Ok(self.value(l.entries(), t))
    }

    /// Evaluate a (possibly two-sample) index. Two-sample indices act on
    /// points in `[0,1]^{2d}`, reading the block of their sample.
    pub fn eval_index(&self, idx: &Index, t: &[f64]) -> Result<f64> {
        match idx.sample {
            None => self.eval(&idx.lattice, t),
            Some(s) => {
                if s != 1 && s != 2 {
                    return Err(Error::domain(format!("sample tag must be 1 or 2, got {s}")));
                }
                check_point(t, 2 * self.dim)?;
                let block = &t[(s as usize - 1) * self.dim..s as usize * self.dim];
                self.eval(&idx.lattice, block)
            }
        }
    }

    /// Unchecked evaluation on the lattice part.
    #[inline]
    pub fn value(&self, l: &[i64], t: &[f64]) -> f64 {
        match self.kind {
            BasisKind::FourierDotProduct => {
                let arg: f64 = l.iter().zip(t).map(|(&k, &x)| k as f64 * x).sum::<f64>() * TAU;
                if first_nonzero_positive(l) {
                    SQRT_2 * arg.cos()
                } else {
                    SQRT_2 * arg.sin()
                }
            }
            BasisKind::FourierTensor => l.iter().zip(t).map(|(&k, &x)| factor_1d(k, x)).product(),
        }
    }

    /// Unchecked evaluation of an index against a design point.
    #[inline]
    pub fn value_index(&self, idx: &Index, t: &[f64]) -> f64 {
        match idx.sample {
            None => self.value(idx.lattice.entries(), t),
            Some(s) => {
                let off = (s as usize - 1) * self.dim;
                self.value(idx.lattice.entries(), &t[off..off + self.dim])
            }
        }
    }
}

#[inline]
fn first_nonzero_positive(l: &[i64]) -> bool {
    l.iter().find(|&&v| v != 0).is_some_and(|&v| v > 0)
}

#[inline]
fn factor_1d(k: i64, x: f64) -> f64 {
    match k.signum() {
        0 => 1.0,
        1 => SQRT_2 * (TAU * k as f64 * x).cos(),
        _ => SQRT_2 * (TAU * (-k) as f64 * x).sin(),
    }
}

pub(crate) fn check_point(t: &[f64], dim: usize) -> Result<()> {
    if t.len() != dim {
        return Err(Error::domain(format!(
            "point has dimension {} but {dim} was expected",
            t.len()
        )));
    }
    if let Some(v) = t.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::domain(format!("coordinate {v} lies outside [0,1]")));
    }
    Ok(())
}

/// Calls `f` on every point of the uniform periodic grid `{k/g}^d`.
fn for_each_grid_point(dim: usize, g: usize, mut f: impl FnMut(&[f64])) {
    let mut counter = vec![0usize; dim];
    let mut point = vec![0.0; dim];
    loop {
        for (p, &c) in point.iter_mut().zip(&counter) {
            *p = c as f64 / g as f64;
        }
        f(&point);
        let mut axis = 0;
        loop {
            if axis == dim {
                return;
            }
            counter[axis] += 1;
            if counter[axis] < g {
                break;
            }
            counter[axis] = 0;
            axis += 1;
        }
    }
}

/// Gram matrix of `indices` integrated by the tensor trapezoid rule on a
/// periodic grid with `grid_size` points per axis.
pub fn gram_check(spec: &BasisSpec, indices: &[MultiIndex], grid_size: usize) -> Result<Vec<Vec<f64>>> {
    if grid_size < 2 {
        return Err(Error::domain("grid_size must be at least 2"));
    }
    for l in indices {
        if l.dim() != spec.dim {
            return Err(Error::domain(format!("index {l} does not match basis dimension {}", spec.dim)));
        }
        if l.is_zero() {
            return Err(Error::domain("the zero index is excluded"));
        }
    }
    let k = indices.len();
    let mut gram = vec![vec![0.0; k]; k];
    let mut vals = vec![0.0; k];
    for_each_grid_point(spec.dim, grid_size, |t| {
        for (v, l) in vals.iter_mut().zip(indices) {
            *v = spec.value(l.entries(), t);
        }
        for i in 0..k {
            for j in i..k {
                gram[i][j] += vals[i] * vals[j];
            }
        }
    });
    let w = (grid_size as f64).powi(spec.dim as i32);
    for i in 0..k {
        for j in i..k {
            gram[i][j] /= w;
            gram[j][i] = gram[i][j];
        }
    }
    Ok(gram)
}

/// Grid resolution per axis at twice the Nyquist rate for `indices`.
pub fn nyquist_grid(indices: &[MultiIndex]) -> usize {
    let kmax = indices.iter().map(|l| l.max_abs()).max().unwrap_or(0) as usize;
    (4 * kmax).max(8)
}

/// `sup_t sum_{l in S} phi_l(t)^2` over a uniform grid with `grid_size`
/// points per axis.
pub fn sup_sum_squares(spec: &BasisSpec, indices: &[MultiIndex], grid_size: usize) -> Result<f64> {
    if grid_size < 2 {
        return Err(Error::domain("grid_size must be at least 2"));
    }
    if indices.is_empty() {
        return Ok(0.0);
    }
    let mut best = 0.0f64;
    for_each_grid_point(spec.dim, grid_size, |t| {
        let s: f64 = indices.iter().map(|l| spec.value(l.entries(), t).powi(2)).sum();
        best = best.max(s);
    });
    Ok(best)
}

/// Same as [`sup_sum_squares`] for general indices. Two-sample indices act on
/// disjoint coordinate blocks, so the supremum splits into per-block suprema.
pub fn sup_sum_squares_indices(spec: &BasisSpec, indices: &[Index]) -> Result<f64> {
    let mut total = 0.0;
    for tag in [None, Some(1u8), Some(2u8)] {
        let block: Vec<MultiIndex> = indices
            .iter()
            .filter(|i| i.sample == tag)
            .map(|i| i.lattice.clone())
            .collect();
        if !block.is_empty() {
            total += sup_sum_squares(spec, &block, nyquist_grid(&block))?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mi(v: &[i64]) -> MultiIndex {
        MultiIndex::from(v.to_vec())
    }

    #[test]
    fn dot_product_examples() {
        let b = BasisSpec::dot(1);
        assert!((b.eval(&mi(&[1]), &[0.0]).unwrap() - SQRT_2).abs() < 1e-15);
        assert!(b.eval(&mi(&[1]), &[0.25]).unwrap().abs() < 1e-15);
        assert!((b.eval(&mi(&[-1]), &[0.25]).unwrap() + SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_arguments() {
        let b = BasisSpec::dot(2);
        assert!(b.eval(&mi(&[0, 0]), &[0.1, 0.1]).is_err());
        assert!(b.eval(&mi(&[1]), &[0.1, 0.1]).is_err());
        assert!(b.eval(&mi(&[1, 0]), &[0.1]).is_err());
        assert!(b.eval(&mi(&[1, 0]), &[0.1, 1.5]).is_err());
    }

    #[test]
    fn tensor_is_product_of_factors() {
        let b = BasisSpec::tensor(2);
        let t = [0.13, 0.71];
        let want = SQRT_2 * (TAU * 2.0 * 0.13).cos() * SQRT_2 * (TAU * 3.0 * 0.71).sin();
        assert!((b.eval(&mi(&[2, -3]), &t).unwrap() - want).abs() < 1e-14);
        let half = SQRT_2 * (TAU * 0.71).cos();
        assert!((b.eval(&mi(&[0, 1]), &t).unwrap() - half).abs() < 1e-14);
    }

    #[test]
    fn gram_examples() {
        let b = BasisSpec::dot(1);
        let g = gram_check(&b, &[mi(&[1])], 1024).unwrap();
        assert!((g[0][0] - 1.0).abs() < 1e-6);
        let g = gram_check(&b, &[mi(&[1]), mi(&[2])], 1024).unwrap();
        assert!(g[0][1].abs() < 1e-6);
        let g = gram_check(&b, &[mi(&[1]), mi(&[-1])], 1024).unwrap();
        assert!(g[0][1].abs() < 1e-6);
    }

    #[test]
    fn two_sample_reads_its_block() {
        let b = BasisSpec::dot(1);
        let idx = Index::two_sample(mi(&[1]), 2);
        let v = b.eval_index(&idx, &[0.25, 0.0]).unwrap();
        assert!((v - SQRT_2).abs() < 1e-15);
        assert!(b.eval_index(&idx, &[0.25]).is_err());
    }

    #[test]
    fn dot_sum_squares_is_flat_on_symmetric_sets() {
        let b = BasisSpec::dot(2);
        let s = vec![mi(&[1, 0]), mi(&[-1, 0]), mi(&[1, 2]), mi(&[-1, -2])];
        let sup = sup_sum_squares(&b, &s, nyquist_grid(&s)).unwrap();
        assert!((sup - 4.0).abs() < 1e-12);
    }
}
