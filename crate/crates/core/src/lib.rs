//! Ground states of the infinite spin-1/2 XXZ chain by imaginary-time iTEBD,
//! and multipartite Bell nonlocality of their subchains measured with
//! Mermin-Klyshko and Mermin-Svetlichny operators.
//!
//! The pipeline is: [`itebd::ground_state`] → [`mps::reduced_density_matrix`]
//! → [`optimize::optimize_both_planes`] → [`sweep::classify_hierarchy`] /
//! [`sweep::detect_features`]. [`oracle`] holds the exact-diagonalization
//! ground truth, and [`checks`] the cross-validation suites built on it.

pub mod bell;
pub mod checks;
pub mod error;
pub mod itebd;
pub mod linalg;
pub mod mps;
pub mod optimize;
pub mod oracle;
pub mod sweep;

pub use bell::{BellOperatorPair, CorrelationTensor, MeasurementFrame, Objective};
pub use error::{BellError, ItebdError, LinalgError, MpsError, OracleError, SweepError};
pub use itebd::{ConvergenceReport, EvolutionSchedule, Phase, XxzCoupling};
pub use linalg::{Axis, CMatrix, UnitVector3, C64};
pub use mps::{MpsState, Parity, ReducedDensityMatrix};
pub use optimize::{OptimizationResult, PlaneConstraint};
pub use oracle::StateVector;
pub use sweep::{FeatureReport, SweepConfig, SweepRecord};
