//! Minimax-optimal U-tests for composite nulls `Q[f] = 0`, where `Q` is a
//! diagonal quadratic functional of a regression function observed at
//! uniform random design points on `[0,1]^d`.
//!
//! The crate covers the coefficient families and their active sets
//! ([`spectra`]), the extremal weight problem and separation rates
//! ([`extremal`]), the sharp and indefinite U-tests ([`utest`]), the
//! lower-bound constructions ([`lowerbound`]) and a Monte Carlo harness
//! ([`sim`]).

pub mod basis;
pub mod error;
pub mod estimator;
pub mod extremal;
pub mod lowerbound;
pub mod normal;
pub mod quadrature;
pub mod sim;
pub mod spectra;
pub mod utest;

pub use basis::{BasisKind, BasisSpec, Index, MultiIndex};
pub use error::{Error, Result};
pub use estimator::{PilotEstimate, Sample, SampleView};
pub use extremal::{ClosedFormRate, ExtremalSolution, Regime, SingleIndexConstants, SingleIndexRate, TwoRegimeRate};
pub use lowerbound::{PriorSpec, TwoPointPair};
pub use sim::{ErrorEstimates, NoiseSpec};
pub use spectra::{ActiveSet, CoefficientSpec, Entry, Family, SpectralSums, Spectrum};
pub use utest::{IndefiniteThresholdConfig, PreparedTest, TestConfig, TestMode, TestReport, WeightSource};
