//! State estimation and sensor selection for nonlinear dynamical networks.
//!
//! The crate reconstructs the full initial state of a network `ẋ = q(x)` from
//! partial node measurements and chooses which nodes to measure. The pipeline
//! is:
//!
//! 1. a continuous model ([`model`], [`reaction`]) is discretized with an
//!    implicit one-step scheme ([`discretize`]);
//! 2. analytic step sensitivities are chained into the stacked output Jacobian
//!    ([`sensitivity`]);
//! 3. the initial state is recovered by bounded nonlinear least squares
//!    ([`estimator`]);
//! 4. sensors are chosen by maximizing the log-determinant of the Jacobian Gram
//!    matrix ([`selection`]) or of an empirical observability Gramian
//!    ([`gramian`]);
//! 5. structural analysis of the observability inference diagram ([`oid`]) and
//!    the seeded experiment driver ([`harness`]) sit on top.

pub mod bundled;
pub mod discretize;
pub mod estimator;
pub mod gramian;
pub mod harness;
pub mod linalg;
pub mod model;
pub mod modelfile;
pub mod oid;
pub mod reaction;
pub mod rng;
pub mod selection;
pub mod sensitivity;
mod trust_region;

pub use discretize::{DiscreteModel, Scheme, StepResult, Trajectory};
pub use estimator::{EstimationProblem, EstimationResult, ObservationSet};
pub use model::{ContinuousModel, StateVector};
pub use selection::{SelectionConstraints, SelectionResult, SensorMask};
pub use sensitivity::JacobianStack;
