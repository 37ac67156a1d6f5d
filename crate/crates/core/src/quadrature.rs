//! Adaptive tensor Gauss-Legendre cubature for vector-valued integrands on boxes.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

const GL5_X: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683_1,
    0.0,
    0.538_469_310_105_683_1,
    0.906_179_845_938_664,
];
const GL5_W: [f64; 5] = [
    0.236_926_885_056_189_1,
    0.478_628_670_499_366_5,
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_5,
    0.236_926_885_056_189_1,
];
const GL3_X: [f64; 3] = [-0.774_596_669_241_483_4, 0.0, 0.774_596_669_241_483_4];
const GL3_W: [f64; 3] = [0.555_555_555_555_555_6, 0.888_888_888_888_888_9, 0.555_555_555_555_555_6];
const GL2_X: [f64; 2] = [-0.577_350_269_189_625_8, 0.577_350_269_189_625_8];
const GL2_W: [f64; 2] = [1.0, 1.0];

#[derive(Clone, Debug, PartialEq)]
pub struct Cubature {
    pub value: Vec<f64>,
    /// Sum over cells of the max-component difference between the 5-point
    /// rule and the 3- and 2-point rules.
    pub error: f64,
    pub cells: usize,
}

struct Cell {
    lo: Vec<f64>,
    hi: Vec<f64>,
    value: Vec<f64>,
    error: f64,
}

impl PartialEq for Cell {
    fn eq(&self, other: &Self) -> bool {
        self.error.total_cmp(&other.error) == Ordering::Equal
    }
}
impl Eq for Cell {}
impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Cell {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn tensor_rule<F>(f: &F, lo: &[f64], hi: &[f64], xs: &[f64], ws: &[f64], ncomp: usize) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]),
{
    let d = lo.len();
    let k = xs.len();
    let half: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b - a)).collect();
    let mid: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| 0.5 * (b + a)).collect();
    let jac: f64 = half.iter().product();
    let mut acc = vec![0.0; ncomp];
    let mut out = vec![0.0; ncomp];
    let mut point = vec![0.0; d];
    let mut counter = vec![0usize; d];
    loop {
        let mut w = jac;
        for j in 0..d {
            point[j] = mid[j] + half[j] * xs[counter[j]];
            w *= ws[counter[j]];
        }
        f(&point, &mut out);
        for (a, o) in acc.iter_mut().zip(&out) {
            *a += w * o;
        }
        let mut axis = 0;
        loop {
            if axis == d {
                return acc;
            }
            counter[axis] += 1;
            if counter[axis] < k {
                break;
            }
            counter[axis] = 0;
            axis += 1;
        }
    }
}

fn make_cell<F>(f: &F, lo: Vec<f64>, hi: Vec<f64>, ncomp: usize) -> Cell
where
    F: Fn(&[f64], &mut [f64]),
{
    let fine = tensor_rule(f, &lo, &hi, &GL5_X, &GL5_W, ncomp);
    let coarse = tensor_rule(f, &lo, &hi, &GL3_X, &GL3_W, ncomp);
    let coarsest = tensor_rule(f, &lo, &hi, &GL2_X, &GL2_W, ncomp);
    let error = fine
        .iter()
        .zip(coarse.iter().zip(&coarsest))
        .map(|(a, (b, c))| (a - b).abs().max((a - c).abs()))
        .fold(0.0, f64::max);
    Cell { lo, hi, value: fine, error }
}

/// Integrates `f` (writing `ncomp` components) over the box `[lo, hi]`,
/// bisecting the worst cell along every axis until the summed error
/// estimate is at most `tol` or `max_cells` cells exist.
pub fn adaptive<F>(f: F, lo: &[f64], hi: &[f64], ncomp: usize, tol: f64, max_cells: usize) -> Cubature
where
    F: Fn(&[f64], &mut [f64]),
{
    let d = lo.len();
    let mut heap = BinaryHeap::new();
    heap.push(make_cell(&f, lo.to_vec(), hi.to_vec(), ncomp));
    let mut total_err = heap.peek().map(|c| c.error).unwrap_or(0.0);
    while total_err > tol && heap.len() + (1 << d) - 1 <= max_cells {
        let worst = heap.pop().expect("heap is nonempty");
        total_err -= worst.error;
        for mask in 0..(1usize << d) {
            let mut clo = worst.lo.clone();
            let mut chi = worst.hi.clone();
            for j in 0..d {
                let m = 0.5 * (worst.lo[j] + worst.hi[j]);
                if mask >> j & 1 == 0 {
                    chi[j] = m;
                } else {
                    clo[j] = m;
                }
            }
            let cell = make_cell(&f, clo, chi, ncomp);
            total_err += cell.error;
            heap.push(cell);
        }
    }
    let cells = heap.into_sorted_vec();
    let mut value = vec![0.0; ncomp];
    let mut error = 0.0;
    for c in &cells {
        for (v, x) in value.iter_mut().zip(&c.value) {
            *v += x;
        }
        error += c.error;
    }
    Cubature { value, error, cells: cells.len() }
}
