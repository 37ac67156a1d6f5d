//! Rates from the balance equation `T sqrt(M(T)) = n`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectra::{CoefficientSpec, Spectrum};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `n^{-1/4}`, independent of smoothness.
    Regular,
    /// Smoothness-dependent `T_n^{-1/2}`.
    Irregular,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoRegimeRate {
    pub n: usize,
    /// Solution of `T sqrt(M(T)) = n`.
    pub t0: f64,
    /// `min(t0, sqrt n)`
    pub t_n: f64,
    /// `t_n^{-1/2}`
    pub rate: f64,
    pub regime: Regime,
}

/// Smallest `T` with `T sqrt(M(T)) >= n`, located by log-scale bisection
/// on the exact sums. Jumps of `M` are resolved to the jump location.
pub fn solve_balance(sp: &mut Spectrum, n: f64) -> Result<f64> {
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::domain(format!("n = {n} must be positive")));
    }
    let b1 = sp.first_ratio()?;
    let phi = |sp: &mut Spectrum, t: f64| -> Result<f64> { Ok(t * sp.sums(t)?.m.sqrt()) };
    let mut lo = b1;
    let mut hi = 2.0 * b1;
    while phi(sp, hi)? < n {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        if hi / lo - 1.0 < 1e-14 {
            break;
        }
        let mid = (lo * hi).sqrt();
        if phi(sp, mid)? >= n {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// `T_n = min(T_n^0, sqrt n)` and the rate `T_n^{-1/2}` for a functional
/// with both sign classes.
pub fn two_regime_rate(spec: &CoefficientSpec, n: usize) -> Result<TwoRegimeRate> {
    if !spec.has_both_signs() {
        return Err(Error::domain("both sign classes of q must be nonempty"));
    }
    let mut sp = Spectrum::new(spec, 1.0)?;
    let t0 = solve_balance(&mut sp, n as f64)?;
    let root = (n as f64).sqrt();
    let (t_n, regime) = if root <= t0 { (root, Regime::Regular) } else { (t0, Regime::Irregular) };
    Ok(TwoRegimeRate { n, t0, t_n, rate: t_n.powf(-0.5), regime })
}

/// Rate `r` solving `n r^2 = M(r^{-2})^{1/2}` for a nonnegative functional.
pub fn rate_from_balance(spec: &CoefficientSpec, n: usize) -> Result<f64> {
    if !spec.is_nonnegative() {
        return Err(Error::domain("rate_from_balance needs q_l >= 0"));
    }
    let mut sp = Spectrum::new(spec, 1.0)?;
    Ok(solve_balance(&mut sp, n as f64)?.powf(-0.5))
}

/// Least-squares slope of `ln y` on `ln x`.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / k;
    let my = ly.iter().sum::<f64>() / k;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regimes_of_the_two_sample_family() {
        let regular = CoefficientSpec::two_sample(vec![2.0], vec![0.5]).unwrap();
        let r = two_regime_rate(&regular, 100_000).unwrap();
        assert_eq!(r.regime, Regime::Regular);
        assert!((r.rate - 100_000f64.powf(-0.25)).abs() < 1e-12);
        let irregular = CoefficientSpec::two_sample(vec![2.0], vec![1.5]).unwrap();
        let r = two_regime_rate(&irregular, 100_000).unwrap();
        assert_eq!(r.regime, Regime::Irregular);
    }

    #[test]
    fn empty_sign_class_is_rejected() {
        let spec = CoefficientSpec::sobolev(vec![2.0], vec![0.0]).unwrap();
        assert!(two_regime_rate(&spec, 1000).is_err());
    }

    #[test]
    fn finite_list_balance_is_algebraic() {
        // M = 1 + 4 = 5 once every entry is active
        let spec = CoefficientSpec::explicit_list(&[1.0, 2.0], &[1.0, 2.0]).unwrap();
        for n in [1e3f64, 1e5] {
            let r = rate_from_balance(&spec, n as usize).unwrap();
            let want = n.powf(-0.5) * 5f64.powf(0.25);
            assert!((r - want).abs() < 1e-10 * want);
        }
    }

    #[test]
    fn slope_of_a_power_law() {
        let x = [1.0, 10.0, 100.0];
        let y: Vec<f64> = x.iter().map(|v: &f64| 3.0 * v.powf(-0.4)).collect();
        assert!((loglog_slope(&x, &y) + 0.4).abs() < 1e-12);
    }
}
