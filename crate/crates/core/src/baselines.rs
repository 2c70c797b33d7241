//! Reference Kalman filters on the same pseudo-linear measurements.
//!
//! * CKF: one centralized filter that stacks every observer's `(z, H)`.
//! * PLKF: each observer filters only its own measurement, with no
//!   communication. This is the lower baseline.
//!
//! Both use a white-noise-acceleration process model and the measurement
//! covariance `σ_ν² I₃` per observer, and update the covariance in Joseph form.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PseudoMeasurement, TransitionModel};
use crate::linalg::{sigma_min, symmetrize};

/// Below this `σ_min(Σ P_j)` the stacked geometry cannot fix the position.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Discretized continuous white-noise acceleration with intensity `q`
/// (m²/s³), for state order `[p, v]`.
pub fn process_noise(dt: f64, q: f64) -> Matrix6<f64> {
    let mut m = Matrix6::zeros();
    for i in 0..3 {
        m[(i, i)] = dt.powi(3) / 3.0;
        m[(i, i + 3)] = dt.powi(2) / 2.0;
        m[(i + 3, i)] = dt.powi(2) / 2.0;
        m[(i + 3, i + 3)] = dt;
    }
    m * q
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KfState {
    pub x: Vector6<f64>,
    pub p: Matrix6<f64>,
}

impl KfState {
    /// Diagonal initial covariance.
    pub fn new(x: Vector6<f64>, position_sigma: f64, velocity_sigma: f64) -> Self {
        let mut p = Matrix6::zeros();
        for i in 0..3 {
            p[(i, i)] = position_sigma * position_sigma;
            p[(i + 3, i + 3)] = velocity_sigma * velocity_sigma;
        }
        Self { x, p }
    }
}

/// Filter tuning shared by both baselines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KfTuning {
    pub q: Matrix6<f64>,
    pub sigma_nu: f64,
}

impl KfTuning {
    pub fn new(model: &TransitionModel, q: f64, sigma_nu: f64) -> Result<Self> {
        if !(q >= 0.0) || !(sigma_nu > 0.0) {
            return Err(Error::config("filter tuning needs q >= 0 and sigma_nu > 0"));
        }
        Ok(Self {
            q: process_noise(model.dt(), q),
            sigma_nu,
        })
    }
}

/// Result of one filter step.
#[derive(Clone, Debug, PartialEq)]
pub struct KfStep {
    pub state: KfState,
    /// The stacked bearings were (numerically) all parallel, so the update
    /// left the range direction uncorrected and its covariance keeps growing.
    pub rank_deficient: bool,
}

pub fn kf_predict(state: &KfState, model: &TransitionModel, tuning: &KfTuning) -> KfState {
    let a = model.matrix();
    KfState {
        x: a * state.x,
        p: symmetrize(&(a * state.p * a.transpose() + tuning.q)),
    }
}

/// Measurement update with all `observations` stacked into one `3n` vector.
pub fn kf_update(
    state: &KfState,
    observations: &[PseudoMeasurement],
    sigma_nu: f64,
) -> Result<KfStep> {
    if observations.is_empty() {
        return Err(Error::config(
            "filter update needs at least one observation",
        ));
    }
    let m = 3 * observations.len();
    let mut z = DVector::zeros(m);
    let mut h = DMatrix::zeros(m, 6);
    let mut projections = Matrix3::zeros();
    for (i, obs) in observations.iter().enumerate() {
        z.fixed_rows_mut::<3>(3 * i).copy_from(&obs.z);
        h.fixed_view_mut::<3, 6>(3 * i, 0).copy_from(&obs.h);
        projections += obs.projection.matrix();
    }
    let rank_deficient = sigma_min(&projections) < RANK_TOLERANCE;

    let r = DMatrix::identity(m, m) * (sigma_nu * sigma_nu);
    let p = DMatrix::from_column_slice(6, 6, state.p.as_slice());
    let x = DVector::from_column_slice(state.x.as_slice());
    let innovation_cov = &h * &p * h.transpose() + &r;
    let chol = innovation_cov.cholesky().ok_or(Error::Singular {
        context: "innovation covariance",
    })?;
    // K = P Hᵀ S⁻¹, computed as (S⁻¹ H P)ᵀ.
    let gain = chol.solve(&(&h * &p)).transpose();
    let residual = z - &h * &x;
    let x_new = x + &gain * residual;
    let i_kh = DMatrix::identity(6, 6) - &gain * &h;
    let p_new = &i_kh * &p * i_kh.transpose() + &gain * r * gain.transpose();

    Ok(KfStep {
        state: KfState {
            x: Vector6::from_column_slice(x_new.as_slice()),
            p: symmetrize(&Matrix6::from_column_slice(p_new.as_slice())),
        },
        rank_deficient,
    })
}

/// Centralized filter: predict, then fuse every observer's measurement.
pub fn ckf_step(
    state: &KfState,
    model: &TransitionModel,
    tuning: &KfTuning,
    observations: &[PseudoMeasurement],
) -> Result<KfStep> {
    kf_update(
        &kf_predict(state, model, tuning),
        observations,
        tuning.sigma_nu,
    )
}

/// Non-cooperative filter for a single observer.
pub fn plkf_step(
    state: &KfState,
    model: &TransitionModel,
    tuning: &KfTuning,
    own: &PseudoMeasurement,
) -> Result<KfStep> {
    ckf_step(state, model, tuning, std::slice::from_ref(own))
}
