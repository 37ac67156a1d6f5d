use std::path::{Path, PathBuf};

use quadsep_core::basis::{BasisKind, BasisSpec, Index};
use quadsep_core::sim::NoiseSpec;
use quadsep_core::spectra::CoefficientSpec;
use quadsep_core::utest::{TestConfig, TestMode, WeightSource};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Coefficients of a simulated regression function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSource {
    Zero,
    Explicit {
        theta: Vec<(Index, f64)>,
    },
    /// `theta_l = scale * sqrt(v*_l)` from the sharp test's extremal solution.
    LeastFavorable {
        #[serde(default = "one")]
        scale: f64,
    },
    /// `f_0` of the two-point pair, with `Q[f_0] = 0`.
    TwoPointNull,
    /// Single coefficient on the positive-sign index of least `c`, with
    /// `Q[f] = rho2`; `rho2` defaults to the test's separation radius.
    Spike {
        #[serde(default)]
        rho2: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

fn default_gamma() -> f64 {
    0.05
}

fn default_reps() -> usize {
    1000
}

fn default_basis() -> BasisKind {
    BasisKind::FourierDotProduct
}

fn default_tol() -> f64 {
    1e-4
}

fn default_weights() -> WeightSource {
    WeightSource::Optimal
}

fn default_mode() -> TestMode {
    TestMode::SharpNonnegative
}

fn default_null() -> CoefficientSource {
    CoefficientSource::Zero
}

fn default_alt() -> CoefficientSource {
    CoefficientSource::LeastFavorable { scale: 1.0 }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: CoefficientSpec,
    #[serde(default = "default_basis")]
    pub basis: BasisKind,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_mode")]
    pub test: TestMode,
    #[serde(default = "default_weights")]
    pub weights: WeightSource,
    #[serde(default)]
    pub pilot_t: Option<f64>,
    #[serde(default)]
    pub pilot_cap: Option<usize>,
    #[serde(default = "one")]
    pub tau: f64,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_null")]
    pub null: CoefficientSource,
    #[serde(default = "default_alt")]
    pub alternative: CoefficientSource,
    /// Absolute tolerance of the single-index constants.
    #[serde(default = "default_tol")]
    pub quadrature_tol: f64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Per-replication CSV of `simulate`; defaults to `<output stem>.reps.csv`.
    #[serde(default)]
    pub records: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CliError::Config(format!("gamma = {} must lie in (0,1)", self.gamma)));
        }
        if !(self.quadrature_tol > 0.0) {
            return Err(CliError::Config("quadrature_tol must be positive".into()));
        }
        self.noise.validate().map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn basis_spec(&self) -> BasisSpec {
        BasisSpec { kind: self.basis, dim: self.problem.dim() }
    }

    pub fn require_n(&self) -> Result<usize, CliError> {
        self.n.ok_or_else(|| CliError::Config("the sample size n is required".into()))
    }

    pub fn test_config(&self, n: usize) -> TestConfig {
        TestConfig {
            n,
            gamma: self.gamma,
            spec: self.problem.clone(),
            basis: self.basis_spec(),
            weights: self.weights.clone(),
            mode: self.test.clone(),
            pilot_t: self.pilot_t,
            pilot_cap: self.pilot_cap,
            tau: self.tau,
        }
    }

    pub fn records_path(&self) -> Option<PathBuf> {
        self.records.clone().or_else(|| {
            self.output.as_ref().map(|p| {
                let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                p.with_file_name(format!("{stem}.reps.csv"))
            })
        })
    }
}
