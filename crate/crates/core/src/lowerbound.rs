//! Constructions behind the lower bounds: the Gaussian prior on the
//! coefficients and the two-point pair for indefinite functionals.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::basis::Index;
use crate::error::{Error, Result};
use crate::extremal::ExtremalSolution;
use crate::spectra::{least_c_by_sign, CoefficientSpec};

/// Independent `N(0, a_l)` coefficients with `a = (1 - delta) v*`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    /// `(index, c, q, a)` on `N(T)`.
    pub variances: Vec<PriorEntry>,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub index: Index,
    pub c: f64,
    pub q: f64,
    pub a: f64,
}

/// Fractions of prior draws inside the ellipsoid, separated, and both.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub draws: usize,
    pub radius2: f64,
    pub in_ellipsoid: f64,
    pub separated: f64,
    pub in_class: f64,
    pub mean_q: f64,
    pub mean_c: f64,
}

impl PriorSpec {
    pub fn from_solution(sol: &ExtremalSolution, delta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&delta) {
            return Err(Error::domain(format!("delta = {delta} must lie in [0,1]")));
        }
        let variances = sol
            .entries
            .iter()
            .map(|e| PriorEntry { index: e.index.clone(), c: e.c, q: e.q, a: (1.0 - delta) * e.v_star })
            .collect();
        Ok(PriorSpec { variances, delta })
    }

    /// Prior built on `v*` at threshold `T`.
    pub fn at_threshold(spec: &CoefficientSpec, t: f64, delta: f64) -> Result<Self> {
        let sol = ExtremalSolution::at_threshold(spec, t, 0, 0.5)?;
        Self::from_solution(&sol, delta)
    }

    pub fn draw<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<(Index, f64)> {
        self.variances
            .iter()
            .map(|e| {
                let g: f64 = StandardNormal.sample(rng);
                (e.index.clone(), e.a.sqrt() * g)
            })
            .collect()
    }

    /// `E sum q theta^2 = sum q a`.
    pub fn mean_q(&self) -> f64 {
        self.variances.iter().map(|e| e.q * e.a).sum()
    }

    /// `Var sum q theta^2 = 2 sum q^2 a^2`.
    pub fn variance_q(&self) -> f64 {
        2.0 * self.variances.iter().map(|e| (e.q * e.a).powi(2)).sum::<f64>()
    }

    /// Empirical membership in `{sum c theta^2 <= 1, sum q theta^2 >= radius2}`.
    pub fn membership(&self, radius2: f64, draws: usize, seed: u64) -> Membership {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut ell, mut sep, mut both) = (0usize, 0usize, 0usize);
        let (mut sq, mut sc) = (0.0, 0.0);
        for _ in 0..draws {
            let (mut qv, mut cv) = (0.0, 0.0);
            for e in &self.variances {
                let g: f64 = StandardNormal.sample(&mut rng);
                let th2 = e.a * g * g;
                qv += e.q * th2;
                cv += e.c * th2;
            }
            sq += qv;
            sc += cv;
            let (a, b) = (cv <= 1.0, qv >= radius2);
            ell += a as usize;
            sep += b as usize;
            both += (a && b) as usize;
        }
        let d = draws.max(1) as f64;
        Membership {
            draws,
            radius2,
            in_ellipsoid: ell as f64 / d,
            separated: sep as f64 / d,
            in_class: both as f64 / d,
            mean_q: sq / d,
            mean_c: sc / d,
        }
    }
}

/// Draws `theta` from the prior at `(T, delta)`, deterministic in `seed`.
pub fn prior_sample(spec: &CoefficientSpec, t: f64, delta: f64, seed: u64) -> Result<Vec<(Index, f64)>> {
    let prior = PriorSpec::at_threshold(spec, t, delta)?;
    Ok(prior.draw(&mut ChaCha8Rng::seed_from_u64(seed)))
}

/// Two functions on `{l_+, l_-}` with `Q[f_0] = 0` and `Q[f_1] = -z q_+ / sqrt n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointPair {
    pub l_plus: Index,
    pub l_minus: Index,
    pub c_plus: f64,
    pub c_minus: f64,
    pub q_plus: f64,
    pub q_minus: f64,
    pub theta0: Vec<(Index, f64)>,
    pub theta1: Vec<(Index, f64)>,
    pub n: usize,
    pub z: f64,
    pub q_f0: f64,
    pub q_f1: f64,
    /// `sum c theta_0^2`
    pub ellipsoid_f0: f64,
    /// `n (theta_{0,+} - theta_{1,+})^2`, the displayed bound on the divergence.
    pub kl_bound: f64,
    /// `(n/2) (theta_{0,+} - theta_{1,+})^2`, the Kullback-Leibler divergence
    /// between the two laws under unit-variance Gaussian noise.
    pub kl_divergence: f64,
    /// `z^2 / (4 theta_{0,+}^2)`
    pub kl_limit: f64,
}

/// `z = 2 theta_{0,+} (ln(1/(4 gamma)))^{1/2}` for `gamma < 1/4`.
pub fn two_point_z(theta0_plus: f64, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 0.25) {
        return Err(Error::domain(format!("gamma = {gamma} must lie in (0, 1/4)")));
    }
    Ok(2.0 * theta0_plus * (1.0 / (4.0 * gamma)).ln().sqrt())
}

/// `theta_{0,+}^2 = |q_-| / (c_- |q_+| + c_+ |q_-|)` for the family.
pub fn two_point_theta0_plus(spec: &CoefficientSpec) -> Result<f64> {
    let (p, m) = least_c_by_sign(spec)?;
    Ok((m.q.abs() / (m.c * p.q.abs() + p.c * m.q.abs())).sqrt())
}

/// `f_0` of the pair: `Q[f_0] = 0` and `sum c theta^2 = 1` on `{l_+, l_-}`.
pub fn two_point_null(spec: &CoefficientSpec) -> Result<Vec<(Index, f64)>> {
    let (p, m) = least_c_by_sign(spec)?;
    let den = m.c * p.q.abs() + p.c * m.q.abs();
    Ok(vec![(p.index, (m.q.abs() / den).sqrt()), (m.index, (p.q.abs() / den).sqrt())])
}

pub fn two_point_pair(spec: &CoefficientSpec, n: usize, z: f64) -> Result<TwoPointPair> {
    if n == 0 {
        return Err(Error::domain("n must be positive"));
    }
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::domain(format!("z = {z} must be positive")));
    }
    let (p, m) = least_c_by_sign(spec)?;
    let (qp, qm) = (p.q.abs(), m.q.abs());
    let den = m.c * qp + p.c * qm;
    let th0m2 = qp / den;
    let th0p2 = qm / den;
    let shift = z / (n as f64).sqrt();
    if shift > th0p2 {
        return Err(Error::domain(format!(
            "z/sqrt(n) = {shift} exceeds theta_0+^2 = {th0p2}; increase n or decrease z"
        )));
    }
    let th0p = th0p2.sqrt();
    let th1p = (th0p2 - shift).sqrt();
    let th0m = th0m2.sqrt();
    let q_f0 = p.q * th0p2 + m.q * th0m2;
    let q_f1 = p.q * th1p * th1p + m.q * th0m2;
    let gap = (th0p - th1p).powi(2);
    Ok(TwoPointPair {
        l_plus: p.index.clone(),
        l_minus: m.index.clone(),
        c_plus: p.c,
        c_minus: m.c,
        q_plus: p.q,
        q_minus: m.q,
        theta0: vec![(p.index.clone(), th0p), (m.index.clone(), th0m)],
        theta1: vec![(p.index, th1p), (m.index, th0m)],
        n,
        z,
        q_f0,
        q_f1,
        ellipsoid_f0: p.c * th0p2 + m.c * th0m2,
        kl_bound: n as f64 * gap,
        kl_divergence: 0.5 * n as f64 * gap,
        kl_limit: z * z / (4.0 * th0p2),
    })
}
