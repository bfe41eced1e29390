//! Zero-dimensional lithium-sulfur cell model written as a semi-explicit
//! index-1 DAE, together with its simulator, local observability tests and
//! an extended Kalman filter for DAEs.
//!
//! Units are SI apart from masses (g) and volumes (L).

pub mod ekf;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod observability;
pub mod params;
pub mod sim;

pub use ekf::{
    EstimateRecord, Estimator, EstimatorConfig, EstimatorState, GainMode, JacobianMode,
    OutputJacobian,
};
pub use error::{Error, Result};
pub use metrics::RunMetrics;
pub use model::{AlgebraicState, DifferentialState, Model, Potentials};
pub use observability::{LinearizedSystem, ObservabilityReport};
pub use params::{CurrentConvention, CurrentProfile, Params, ScenarioConfig, SimOptions};
pub use sim::{SimRecord, SimRun};
