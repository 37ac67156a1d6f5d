//! Closed-form rates and constants for the partial-derivative family and
//! the single-index family.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::normal::two_sided_z;
use crate::quadrature;
use crate::spectra::{check_sobolev, delta_of, sigma_bar_of};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClosedFormRate {
    pub delta: f64,
    pub sigma_bar: f64,
    pub kappa_parts: Vec<f64>,
    pub kappa: f64,
    /// `C(d, sigma, alpha)` as displayed with the proposition.
    pub c_dsa: f64,
    /// `2^{-d} C(d, sigma, alpha)`, the limit of `I1(T) T^{-sums_exponent}`
    /// for sums over the full lattice.
    pub c_dsa_lattice: f64,
    /// `2 sigma_bar (1 - delta) / (4 sigma_bar + d)`
    pub rate_exponent: f64,
    /// `n^{-rate_exponent}`
    pub r_n: f64,
    /// Sharp constant as displayed with the proposition.
    pub c_star: f64,
    /// Sharp constant obtained by inserting the lattice limits of the exact
    /// sums into the tuning equation.
    pub c_star_exact_sums: f64,
    /// `(c_star_exact_sums r_n)^{-2} (1 + 2/kappa)`
    pub t_asymptotic: f64,
    /// `c_star_exact_sums * r_n`
    pub rate_asymptotic: f64,
    /// Growth exponent `(4 delta sigma_bar + d) / (2 (1 - delta) sigma_bar)` of the sums.
    pub sums_exponent: f64,
    /// Displayed limit `2C/(kappa + 2)` of `I0(T) T^{-sums_exponent}`.
    pub i0_constant: f64,
    /// Displayed limit `C` of `I1(T) T^{-sums_exponent}`.
    pub i1_constant: f64,
    /// `2^{-d}` times `i0_constant`.
    pub i0_lattice: f64,
    /// `2^{-d}` times `i1_constant`.
    pub i1_lattice: f64,
}

pub fn closed_form_rate_derivative(sigma: &[f64], alpha: &[f64], n: usize, gamma_level: f64) -> Result<ClosedFormRate> {
    check_sobolev(sigma, alpha)?;
    let z = two_sided_z(gamma_level)?;
    let d = sigma.len() as f64;
    let delta = delta_of(sigma, alpha);
    let sb = sigma_bar_of(sigma);
    let kappa_parts: Vec<f64> = sigma
        .iter()
        .zip(alpha)
        .map(|(s, a)| 1.0 / (2.0 * s) + (a / s) * (4.0 * sb + d) / (2.0 * sb * (1.0 - delta)))
        .collect();
    let kappa: f64 = kappa_parts.iter().sum();
    let gamma_prod: f64 = kappa_parts.iter().map(|&k| gamma(k)).product();
    let sigma_prod: f64 = sigma.iter().product();
    let c_dsa = PI.powf(-d) * gamma_prod / (sigma_prod * (1.0 - delta) * gamma(kappa + 2.0));
    let rate_exponent = 2.0 * sb * (1.0 - delta) / (4.0 * sb + d);
    let r_n = (n as f64).powf(-rate_exponent);
    let p4 = sb * (1.0 - delta) / (4.0 * sb + d);
    let inflation = 1.0 + 2.0 / kappa;
    let c_star = (4.0 * z * z * kappa * c_dsa).powf(p4) * inflation;
    let c_dsa_lattice = c_dsa * 0.5f64.powi(sigma.len() as i32);
    let c_star_exact_sums = (4.0 * z * z * kappa * c_dsa_lattice).powf(p4) * inflation.powf(0.5 - p4);
    let rate_asymptotic = c_star_exact_sums * r_n;
    Ok(ClosedFormRate {
        delta,
        sigma_bar: sb,
        kappa_parts,
        kappa,
        c_dsa,
        c_dsa_lattice,
        rate_exponent,
        r_n,
        c_star,
        c_star_exact_sums,
        t_asymptotic: rate_asymptotic.powi(-2) * inflation,
        rate_asymptotic,
        sums_exponent: (4.0 * delta * sb + d) / (2.0 * (1.0 - delta) * sb),
        i0_constant: 2.0 * c_dsa / (kappa + 2.0),
        i1_constant: c_dsa,
        i0_lattice: 2.0 * c_dsa_lattice / (kappa + 2.0),
        i1_lattice: c_dsa_lattice,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleIndexConstants {
    pub c0_bar: f64,
    pub c1_bar: f64,
    pub c2_bar: f64,
    pub quadrature_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SingleIndexRate {
    pub constants: SingleIndexConstants,
    /// `2 (sigma - 1) / (4 sigma + d)`
    pub rate_exponent: f64,
    pub r_n: f64,
    /// Sharp constant as displayed with the proposition.
    pub c_star: f64,
    /// Sharp constant consistent with the exact-sum asymptotics.
    pub c_star_exact_sums: f64,
    /// `(c_star_exact_sums r_n)^{-2} C1/C2`
    pub t_asymptotic: f64,
    pub rate_asymptotic: f64,
    /// Growth exponent `(d + 4) / (2 (sigma - 1))` of the sums.
    pub sums_exponent: f64,
}

fn check_single_index(beta: &[f64], sigma: f64) -> Result<()> {
    let d = beta.len();
    if d < 2 {
        return Err(Error::domain("the single-index constants need d >= 2"));
    }
    let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > 1e-12 {
        return Err(Error::domain(format!("beta must be a unit vector, |beta| = {norm}")));
    }
    let floor = 1f64.max(d as f64 / 4.0);
    if !(sigma > floor) {
        return Err(Error::domain(format!("sigma = {sigma} must exceed max(1, d/4) = {floor}")));
    }
    Ok(())
}

/// Unit vector in hyperspherical coordinates and the surface Jacobian.
fn sphere_point(phi: &[f64], u: &mut [f64]) -> f64 {
    let d = u.len();
    let mut prod = 1.0;
    let mut jac = 1.0;
    for k in 0..d - 1 {
        u[k] = prod * phi[k].cos();
        if k < d - 2 {
            jac *= phi[k].sin().powi((d - 2 - k) as i32);
        }
        prod *= phi[k].sin();
    }
    u[d - 1] = prod;
    jac
}

/// `C0`, `C1` with the radial integral done in closed form and the angular
/// one by adaptive cubature; `C2 = C1 - C0`.
///
/// Along a ray `x = r u` the bracket is `A r^2 - B r^{2 sigma}` with
/// `A = 1 - (beta.u)^2`, `B = sum |u_i|^{2 sigma}`, positive below
/// `R = (A/B)^{1/(2 sigma - 2)}`.
pub fn single_index_constants(beta: &[f64], sigma: f64, tol: f64) -> Result<SingleIndexConstants> {
    check_single_index(beta, sigma)?;
    if !(tol > 0.0) {
        return Err(Error::domain("quadrature tolerance must be positive"));
    }
    let d = beta.len();
    let df = d as f64;
    let s2 = 2.0 * sigma;
    let integrand = |phi: &[f64], out: &mut [f64]| {
        let mut u = [0.0; 16];
        let u = &mut u[..d];
        let jac = sphere_point(phi, u);
        let proj: f64 = u.iter().zip(beta).map(|(x, b)| x * b).sum();
        let a = (1.0 - proj * proj).max(0.0);
        let b: f64 = u.iter().map(|x| x.abs().powf(s2)).sum();
        if a == 0.0 {
            out[0] = 0.0;
            out[1] = 0.0;
            return;
        }
        let r = (a / b).powf(1.0 / (s2 - 2.0));
        let p4 = a * a * r.powf(df + 4.0) / (df + 4.0);
        let p2s = a * b * r.powf(df + 2.0 + s2) / (df + 2.0 + s2);
        let p4s = b * b * r.powf(df + 2.0 * s2) / (df + 2.0 * s2);
        out[0] = jac * (p4 - 2.0 * p2s + p4s);
        out[1] = jac * (p4 - p2s);
    };
    if d > 16 {
        return Err(Error::domain("the single-index constants support d <= 16"));
    }
    let mut lo = vec![0.0; d - 1];
    let mut hi = vec![PI; d - 1];
    lo[d - 2] = 0.0;
    hi[d - 2] = 2.0 * PI;
    let norm = (2.0 * PI).powf(-df);
    let max_cells = (4_000_000usize >> (d - 1)).max(1 << (d - 1));
    let r = quadrature::adaptive(integrand, &lo, &hi, 2, tol / norm, max_cells);
    let achieved = r.error * norm;
    if achieved > tol {
        return Err(Error::Quadrature { achieved, tol });
    }
    let c0 = r.value[0] * norm;
    let c1 = r.value[1] * norm;
    Ok(SingleIndexConstants {
        c0_bar: c0,
        c1_bar: c1,
        c2_bar: c1 - c0,
        quadrature_error: achieved,
    })
}

pub fn closed_form_rate_single_index(
    beta: &[f64],
    sigma: f64,
    n: usize,
    gamma_level: f64,
    tol: f64,
) -> Result<SingleIndexRate> {
    let k = single_index_constants(beta, sigma, tol)?;
    let z = two_sided_z(gamma_level)?;
    let d = beta.len() as f64;
    let rate_exponent = 2.0 * (sigma - 1.0) / (4.0 * sigma + d);
    let r_n = (n as f64).powf(-rate_exponent);
    let outer = (sigma - 1.0) / (4.0 * sigma + d);
    let ratio = k.c1_bar / k.c2_bar;
    let sums_exponent = (d + 4.0) / (2.0 * (sigma - 1.0));
    let c_star = (4.0 * z * ratio.powf(sums_exponent) * k.c1_bar * k.c1_bar
        / (sigma.powf(d - 1.0) * (sigma - 1.0) * k.c0_bar))
        .powf(outer);
    let c_star_exact_sums =
        (ratio.powf(sums_exponent) * 8.0 * z * z * k.c1_bar * k.c1_bar / k.c0_bar).powf(outer);
    let rate_asymptotic = c_star_exact_sums * r_n;
    Ok(SingleIndexRate {
        constants: k,
        rate_exponent,
        r_n,
        c_star,
        c_star_exact_sums,
        t_asymptotic: rate_asymptotic.powi(-2) * ratio,
        rate_asymptotic,
        sums_exponent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Lanczos-free Gamma oracle: shift up with the recurrence, then Stirling's series.
    fn gamma_oracle(x: f64) -> f64 {
        let mut shift = 1.0;
        let mut y = x;
        while y < 20.0 {
            shift *= y;
            y += 1.0;
        }
        let series = 1.0 + 1.0 / (12.0 * y) + 1.0 / (288.0 * y * y) - 139.0 / (51840.0 * y.powi(3))
            - 571.0 / (2_488_320.0 * y.powi(4));
        (2.0 * PI / y).sqrt() * (y / std::f64::consts::E).powf(y) * series / shift
    }

    #[test]
    fn gamma_agrees_with_stirling_oracle() {
        for x in [0.25, 0.5, 1.3, 2.25, 3.5] {
            assert!((gamma(x) - gamma_oracle(x)).abs() < 1e-9 * gamma(x));
        }
    }

    #[test]
    fn derivative_plug_in_one_dim() {
        let r = closed_form_rate_derivative(&[2.0], &[0.0], 1_000_000, 0.05).unwrap();
        assert_eq!(r.delta, 0.0);
        assert_eq!(r.sigma_bar, 2.0);
        assert!((r.kappa - 0.25).abs() < 1e-15);
        assert!((r.rate_exponent - 4.0 / 9.0).abs() < 1e-15);
        let c = gamma_oracle(0.25) / (PI * 2.0 * gamma_oracle(2.25));
        assert!((r.c_dsa - c).abs() < 1e-9 * c);
    }

    #[test]
    fn derivative_plug_in_two_dim() {
        let r = closed_form_rate_derivative(&[2.0, 2.0], &[0.0, 0.0], 1000, 0.05).unwrap();
        assert!(r.kappa_parts.iter().all(|k| (k - 0.25).abs() < 1e-15));
        assert!((r.kappa - 0.5).abs() < 1e-12);
        assert!((r.rate_exponent - 0.4).abs() < 1e-15);
    }

    #[test]
    fn exact_sums_scale_to_lattice_constants() {
        use crate::spectra::{active_set, spectral_sums, CoefficientSpec};
        let cases = [
            (vec![2.0], vec![0.0], 1e12),
            (vec![1.0], vec![0.25], 1e8),
            (vec![1.0, 1.0], vec![0.0, 0.0], 1e6),
        ];
        for (sigma, alpha, t) in cases {
            let spec = CoefficientSpec::sobolev(sigma.clone(), alpha.clone()).unwrap();
            let r = closed_form_rate_derivative(&sigma, &alpha, 1000, 0.05).unwrap();
            let sums = spectral_sums(&active_set(&spec, t).unwrap());
            let scale = t.powf(r.sums_exponent);
            let (i0, i1) = (sums.i0 / scale, sums.i1 / scale);
            assert!((i0 - r.i0_lattice).abs() < 0.01 * r.i0_lattice, "{sigma:?}: {i0} vs {}", r.i0_lattice);
            assert!((i1 - r.i1_lattice).abs() < 0.01 * r.i1_lattice, "{sigma:?}: {i1} vs {}", r.i1_lattice);
        }
    }

    #[test]
    fn consistent_constant_matches_tuned_rate() {
        use crate::extremal::separation_rate;
        use crate::spectra::CoefficientSpec;
        let spec = CoefficientSpec::sobolev(vec![1.0], vec![0.0]).unwrap();
        let n = 10_000_000;
        let r = closed_form_rate_derivative(&[1.0], &[0.0], n, 0.05).unwrap();
        let tuned = separation_rate(&spec, n, 0.05).unwrap();
        let ratio = tuned.rate / r.rate_asymptotic;
        assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn derivative_rejects_delta_at_least_one() {
        match closed_form_rate_derivative(&[1.0], &[1.0], 1000, 0.05) {
            Err(Error::Domain(msg)) => assert!(msg.contains("delta")),
            other => panic!("expected a domain error, got {other:?}"),
        }
    }

    #[test]
    fn single_index_constants_are_ordered() {
        let k = single_index_constants(&[1.0, 0.0], 2.0, 1e-7).unwrap();
        assert!(k.c0_bar > 0.0 && k.c1_bar > k.c0_bar);
        assert!((k.c2_bar - (k.c1_bar - k.c0_bar)).abs() <= k.quadrature_error.max(1e-15));
        let r = closed_form_rate_single_index(&[1.0, 0.0], 2.0, 1000, 0.05, 1e-7).unwrap();
        assert!((r.rate_exponent - 0.2).abs() < 1e-15);
    }

    /// Monte Carlo over the rigorous box `|x_i| < d^{1/(2 sigma)}`.
    fn monte_carlo_constants(beta: &[f64], sigma: f64, draws: usize) -> (f64, f64) {
        use rand::{Rng, SeedableRng};
        let d = beta.len();
        let half = (d as f64).powf(1.0 / (2.0 * sigma));
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (mut s0, mut s1) = (0.0, 0.0);
        let mut x = vec![0.0; d];
        for _ in 0..draws {
            for v in x.iter_mut() {
                *v = rng.gen_range(-half..half);
            }
            let n2: f64 = x.iter().map(|v| v * v).sum();
            let p: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            let g = n2 - p * p;
            let h: f64 = x.iter().map(|v| v.abs().powf(2.0 * sigma)).sum();
            let br = (g - h).max(0.0);
            s0 += br * br;
            s1 += g * br;
        }
        let vol = (2.0 * half).powi(d as i32) / (2.0 * PI).powi(d as i32) / draws as f64;
        (s0 * vol, s1 * vol)
    }

    #[test]
    fn single_index_constants_match_monte_carlo() {
        let s = 0.5f64.sqrt();
        for (beta, sigma) in [(vec![1.0, 0.0], 2.0), (vec![s, s], 1.5), (vec![0.6, 0.0, 0.8], 2.0)] {
            let k = single_index_constants(&beta, sigma, 1e-9).unwrap();
            let (m0, m1) = monte_carlo_constants(&beta, sigma, 1_000_000);
            assert!((k.c0_bar - m0).abs() < 0.01 * m0, "{beta:?}: {} vs {m0}", k.c0_bar);
            assert!((k.c1_bar - m1).abs() < 0.01 * m1, "{beta:?}: {} vs {m1}", k.c1_bar);
        }
    }

    #[test]
    fn exact_sums_scale_to_single_index_constants() {
        use crate::spectra::{active_set, spectral_sums, CoefficientSpec};
        let spec = CoefficientSpec::single_index(2.0, vec![0.6, 0.8]).unwrap();
        let k = single_index_constants(&[0.6, 0.8], 2.0, 1e-10).unwrap();
        let t = 1e6;
        let sums = spectral_sums(&active_set(&spec, t).unwrap());
        // exponent (d + 4) / (2 sigma - 2) = 3
        let i0 = sums.i0 / t.powi(3);
        let i1 = sums.i1 / t.powi(3);
        assert!((i0 - k.c0_bar).abs() < 0.02 * k.c0_bar, "{i0} vs {}", k.c0_bar);
        assert!((i1 - k.c1_bar).abs() < 0.02 * k.c1_bar, "{i1} vs {}", k.c1_bar);
    }

    #[test]
    fn single_index_consistent_constant_matches_tuned_rate() {
        use crate::extremal::separation_rate;
        use crate::spectra::CoefficientSpec;
        let spec = CoefficientSpec::single_index(2.0, vec![0.6, 0.8]).unwrap();
        let n = 10_000_000;
        let r = closed_form_rate_single_index(&[0.6, 0.8], 2.0, n, 0.05, 1e-10).unwrap();
        let tuned = separation_rate(&spec, n, 0.05).unwrap();
        let ratio = tuned.rate / r.rate_asymptotic;
        assert!((ratio - 1.0).abs() < 0.02, "{ratio}");
    }

    #[test]
    fn single_index_needs_sigma_above_one() {
        assert!(single_index_constants(&[1.0, 0.0], 1.0, 1e-4).is_err());
        assert!(single_index_constants(&[1.0], 2.0, 1e-4).is_err());
    }
}
