//! Exhaustive oracle for the small extremal problem
//! `min ||v||_2` s.t. `v >= 0`, `<v,c> <= 1`, `<v,q> >= rho^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAX_INDICES: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BruteForceSaddle {
    pub feasible: bool,
    /// Minimal norm (`+inf` when infeasible).
    pub value: f64,
    pub v: Vec<f64>,
    pub lambda: f64,
    pub mu: f64,
    pub kkt_residual: f64,
}

/// Largest violation of the KKT system at `(v, lambda, mu)`, with
/// `nu_l = 2 v_l + lambda c_l - mu q_l` required to vanish on the support
/// and to be nonnegative off it.
pub fn kkt_residual(c: &[f64], q: &[f64], v: &[f64], lambda: f64, mu: f64, rho2: f64) -> f64 {
    let vc: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
    let vq: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
    let mut r = 0.0f64;
    for ((&vl, &cl), &ql) in v.iter().zip(c).zip(q) {
        let g = 2.0 * vl + lambda * cl - mu * ql;
        r = r.max(if vl > 0.0 { g.abs() } else { (-g).max(0.0) });
        r = r.max((-vl).max(0.0));
    }
    r.max((vc - 1.0).max(0.0))
        .max((rho2 - vq).max(0.0))
        .max((-lambda).max(0.0))
        .max((-mu).max(0.0))
        .max((lambda * (vc - 1.0)).abs())
        .max((mu * (vq - rho2)).abs())
}

/// Enumerates every support and every pattern of active constraints.
///
/// On a support `S` a stationary point has `v_S = (mu q_S - lambda c_S)/2`;
/// with only the `q` constraint active this is `rho^2 q_S / |q_S|^2`, with
/// both active it solves a 2x2 Gram system. The feasible candidate of least
/// norm is the minimizer.
pub fn saddle_value_bruteforce(c: &[f64], q: &[f64], rho: f64) -> Result<BruteForceSaddle> {
    let k = c.len();
    if k != q.len() {
        return Err(Error::domain("c and q must have equal length"));
    }
    if k == 0 || k > MAX_INDICES {
        return Err(Error::domain(format!("the oracle handles 1..={MAX_INDICES} indices, got {k}")));
    }
    let r2 = rho * rho;
    if r2 == 0.0 {
        return Ok(BruteForceSaddle {
            feasible: true,
            value: 0.0,
            v: vec![0.0; k],
            lambda: 0.0,
            mu: 0.0,
            kkt_residual: 0.0,
        });
    }
    let mut best: Option<(f64, Vec<f64>, f64, f64)> = None;
    let mut consider = |v: Vec<f64>, lambda: f64, mu: f64| {
        let scale = v.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        if v.iter().any(|&x| x < -1e-12 * scale) {
            return;
        }
        let v: Vec<f64> = v.into_iter().map(|x| x.max(0.0)).collect();
        let vc: f64 = v.iter().zip(c).map(|(a, b)| a * b).sum();
        let vq: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
        if vc > 1.0 + 1e-12 || vq < r2 * (1.0 - 1e-12) {
            return;
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if best.as_ref().is_none_or(|b| norm < b.0) {
            best = Some((norm, v, lambda, mu));
        }
    };
    for mask in 1u32..(1u32 << k) {
        let support: Vec<usize> = (0..k).filter(|&i| mask >> i & 1 == 1).collect();
        let (mut qq, mut cq, mut cc) = (0.0, 0.0, 0.0);
        for &i in &support {
            qq += q[i] * q[i];
            cq += c[i] * q[i];
            cc += c[i] * c[i];
        }
        if qq > 0.0 {
            let mut v = vec![0.0; k];
            for &i in &support {
                v[i] = r2 * q[i] / qq;
            }
            consider(v, 0.0, 2.0 * r2 / qq);
        }
        // <v,c> = 1 and <v,q> = r2 with v_S = a c_S + b q_S
        let det = cc * qq - cq * cq;
        if det.abs() > 1e-14 * cc * qq {
            let a = (qq - r2 * cq) / det;
            let b = (r2 * cc - cq) / det;
            let mut v = vec![0.0; k];
            for &i in &support {
                v[i] = a * c[i] + b * q[i];
            }
            consider(v, -2.0 * a, 2.0 * b);
        }
    }
    Ok(match best {
        Some((value, v, lambda, mu)) => {
            let kkt = kkt_residual(c, q, &v, lambda, mu, r2);
            BruteForceSaddle { feasible: true, value, v, lambda, mu, kkt_residual: kkt }
        }
        None => BruteForceSaddle {
            feasible: false,
            value: f64::INFINITY,
            v: vec![0.0; k],
            lambda: f64::NAN,
            mu: f64::NAN,
            kkt_residual: f64::NAN,
        },
    })
}
