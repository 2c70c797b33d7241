//! Spatial-temporal triangulation (STT): a distributed recursive
//! least-squares estimator for cooperative bearing-only target motion
//! estimation.
//!
//! Each observer measures a noisy unit bearing to the target and its own
//! noisy position. Bearings are turned into pseudo-linear measurements by
//! orthogonal projection ([`geometry`]). Each observer then runs a
//! recursive least-squares update ([`estimator`]) that fuses its own
//! measurement, its neighbors' measurements, and its neighbors' predicted
//! estimates, discounting the past with a forgetting factor.
//!
//! [`batch`] evaluates the same objective in closed form over the recorded
//! history, and [`theory`] turns the convergence analysis into numeric
//! checks. [`sim`], [`baselines`], and [`harness`] provide scenarios,
//! reference Kalman filters, and Monte-Carlo evaluation.

// Validation writes `!(x > 0.0)` on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod batch;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod harness;
pub mod linalg;
pub mod network;
pub mod sim;
pub mod theory;

pub use error::{Error, Result};
pub use estimator::{EstimatorState, NeighborMessage, StepWeights, SttParams};
pub use geometry::{Bearing, PseudoMeasurement, TargetState, TransitionModel};
pub use sim::ScenarioConfig;
