//! The per-observer spatial-temporal triangulation recursion.
//!
//! Each step runs three phases:
//!
//! * **prediction** propagates the estimate and the information-like matrix
//!   `M̂` through the transition model, discounted by the forgetting factor;
//! * **innovation** collects the pseudo-linear measurement residuals of the
//!   observer and its neighbors (spatial information) and the disagreement with
//!   the neighbors' predicted estimates (consensus);
//! * **correction** fuses both into the new estimate.
//!
//! Rounds are synchronous: every observer first broadcasts the
//! [`NeighborMessage`] `{A x̂_{k−1}, z_k, H_k}` built by [`broadcast`], then
//! every observer consumes the messages it received in [`step`].

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{PseudoMeasurement, TransitionModel};
use crate::linalg::{is_spd, min_eigenvalue, spd_inverse, symmetrize};

pub type ObserverId = usize;

/// Weight sums must hit 1 within this tolerance.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-12;

/// Tuning constants of the estimator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SttParams {
    /// Weight of the measurement term relative to the consensus term.
    pub c: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Standard deviation of the pseudo-measurement noise; `R = I / σ_ν²`.
    pub sigma_nu: f64,
}

impl SttParams {
    /// Defaults from a genetic-algorithm tuning of the circle scenario.
    pub const DEFAULT_C: f64 = 1.8202;
    pub const DEFAULT_GAMMA1: f64 = 7.1609;
    pub const DEFAULT_GAMMA2: f64 = 6.1323;

    pub fn new(c: f64, gamma1: f64, gamma2: f64, sigma_nu: f64) -> Result<Self> {
        let finite = [c, gamma1, gamma2, sigma_nu].iter().all(|v| v.is_finite());
        if !finite {
            return Err(Error::config("estimator constants must be finite"));
        }
        if c <= 0.0 {
            return Err(Error::config(format!("c must be positive, got {c}")));
        }
        if gamma2 <= 0.0 || gamma1 < gamma2 {
            return Err(Error::config(format!(
                "forgetting constants need gamma1 >= gamma2 > 0, got gamma1={gamma1}, gamma2={gamma2}"
            )));
        }
        if sigma_nu <= 0.0 {
            return Err(Error::config(format!(
                "sigma_nu must be positive, got {sigma_nu}"
            )));
        }
        Ok(Self {
            c,
            gamma1,
            gamma2,
            sigma_nu,
        })
    }

    pub fn with_defaults(sigma_nu: f64) -> Result<Self> {
        Self::new(
            Self::DEFAULT_C,
            Self::DEFAULT_GAMMA1,
            Self::DEFAULT_GAMMA2,
            sigma_nu,
        )
    }

    /// `R = I / σ_ν²`.
    pub fn weight_matrix(&self) -> Matrix3<f64> {
        Matrix3::identity() / (self.sigma_nu * self.sigma_nu)
    }

    /// Per-step contraction `(1 + γ2) / (1 + γ1)` of the error envelope.
    pub fn decay_bound(&self) -> f64 {
        (1.0 + self.gamma2) / (1.0 + self.gamma1)
    }

    /// Whether exponential convergence is guaranteed (`γ1 > γ2`).
    pub fn guarantees_decay(&self) -> bool {
        self.gamma1 > self.gamma2
    }
}

/// `λ = γ2^lag / (‖A‖(1 + γ1))^(lag + 1)` for a measurement `lag = k − t`
/// steps old.
pub fn forgetting_factor(params: &SttParams, norm_a: f64, lag: u64) -> f64 {
    let base = norm_a * (1.0 + params.gamma1);
    params.gamma2.powf(lag as f64) / base.powf(lag as f64 + 1.0)
}

/// Estimate and `M̂` held by one observer after step `step`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimatorState {
    pub x_hat: Vector6<f64>,
    pub m_hat: Matrix6<f64>,
    pub step: u64,
}

impl EstimatorState {
    pub fn new(x_hat: Vector6<f64>, m_hat: Matrix6<f64>, step: u64) -> Result<Self> {
        if (m_hat - m_hat.transpose()).amax() > 1e-10 * m_hat.amax().max(1.0) {
            return Err(Error::config("M̂ must be symmetric"));
        }
        if !is_spd(&m_hat) {
            return Err(Error::NumericalDegeneracy {
                context: "initial M̂",
                min_eigenvalue: min_eigenvalue(&m_hat),
            });
        }
        Ok(Self { x_hat, m_hat, step })
    }

    /// Step-0 state with `M̂₀ = I₆`.
    pub fn initial(x_hat: Vector6<f64>) -> Self {
        Self {
            x_hat,
            m_hat: Matrix6::identity(),
            step: 0,
        }
    }
}

/// What an observer shares with its neighbors each round.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborMessage {
    pub sender: ObserverId,
    pub x_pred: Vector6<f64>,
    pub z: Vector3<f64>,
    pub h: Matrix3x6<f64>,
}

/// Number of values in a flattened [`NeighborMessage`] payload.
pub const MESSAGE_RECORD_LEN: usize = 27;

impl NeighborMessage {
    pub fn new(sender: ObserverId, x_pred: Vector6<f64>, measurement: &PseudoMeasurement) -> Self {
        Self {
            sender,
            x_pred,
            z: measurement.z,
            h: measurement.h,
        }
    }

    /// Flat payload: `x̂⁻` (6), `z` (3), then `H` row-major (18).
    pub fn to_record(&self) -> [f64; MESSAGE_RECORD_LEN] {
        let mut out = [0.0; MESSAGE_RECORD_LEN];
        out[..6].copy_from_slice(self.x_pred.as_slice());
        out[6..9].copy_from_slice(self.z.as_slice());
        for r in 0..3 {
            for c in 0..6 {
                out[9 + r * 6 + c] = self.h[(r, c)];
            }
        }
        out
    }

    pub fn from_record(sender: ObserverId, record: &[f64; MESSAGE_RECORD_LEN]) -> Self {
        Self {
            sender,
            x_pred: Vector6::from_column_slice(&record[..6]),
            z: Vector3::from_column_slice(&record[6..9]),
            h: Matrix3x6::from_row_slice(&record[9..]),
        }
    }
}

/// Per-round measurement (`alpha`) and consensus (`beta`) weights, keyed by
/// observer id and including the observer itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepWeights {
    alpha: BTreeMap<ObserverId, f64>,
    beta: BTreeMap<ObserverId, f64>,
}

impl StepWeights {
    pub fn new(alpha: BTreeMap<ObserverId, f64>, beta: BTreeMap<ObserverId, f64>) -> Result<Self> {
        for (name, map) in [("alpha", &alpha), ("beta", &beta)] {
            if map.values().any(|w| !(*w >= 0.0) || !w.is_finite()) {
                return Err(Error::config(format!(
                    "{name} weights must be non-negative"
                )));
            }
            let sum: f64 = map.values().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
                return Err(Error::config(format!("{name} weights sum to {sum}, not 1")));
            }
        }
        if alpha.keys().ne(beta.keys()) {
            return Err(Error::config(
                "alpha and beta must cover the same observers",
            ));
        }
        Ok(Self { alpha, beta })
    }

    /// `α = β = 1 / (1 + |N|)` over `{me} ∪ neighbors`.
    pub fn uniform(me: ObserverId, neighbors: &[ObserverId]) -> Self {
        let ids: BTreeSet<ObserverId> = std::iter::once(me)
            .chain(neighbors.iter().copied())
            .collect();
        let w = 1.0 / ids.len() as f64;
        let map: BTreeMap<_, _> = ids.into_iter().map(|id| (id, w)).collect();
        Self {
            alpha: map.clone(),
            beta: map,
        }
    }

    /// Restricts both maps to `me` plus the observers actually heard from and
    /// rescales them to sum to 1.
    pub fn renormalized(&self, me: ObserverId, received: &[ObserverId]) -> Result<Self> {
        let keep: BTreeSet<ObserverId> = std::iter::once(me)
            .chain(received.iter().copied())
            .collect();
        let restrict = |map: &BTreeMap<ObserverId, f64>| -> Result<BTreeMap<ObserverId, f64>> {
            let kept: BTreeMap<_, _> = map
                .iter()
                .filter(|(id, _)| keep.contains(id))
                .map(|(id, w)| (*id, *w))
                .collect();
            let total: f64 = kept.values().sum();
            if kept.len() != keep.len() || total <= 0.0 {
                return Err(Error::config(
                    "cannot renormalize weights over the received set",
                ));
            }
            Ok(kept.into_iter().map(|(id, w)| (id, w / total)).collect())
        };
        Self::new(restrict(&self.alpha)?, restrict(&self.beta)?)
    }

    pub fn alpha(&self, id: ObserverId) -> Option<f64> {
        self.alpha.get(&id).copied()
    }

    pub fn beta(&self, id: ObserverId) -> Option<f64> {
        self.beta.get(&id).copied()
    }

    pub fn observers(&self) -> impl Iterator<Item = ObserverId> + '_ {
        self.alpha.keys().copied()
    }

    pub fn min_alpha(&self) -> f64 {
        self.alpha.values().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Anything carrying a pseudo-linear pair `(z, H)`.
pub trait Linearized {
    fn z(&self) -> &Vector3<f64>;
    fn h(&self) -> &Matrix3x6<f64>;
}

impl Linearized for PseudoMeasurement {
    fn z(&self) -> &Vector3<f64> {
        &self.z
    }
    fn h(&self) -> &Matrix3x6<f64> {
        &self.h
    }
}

impl Linearized for NeighborMessage {
    fn z(&self) -> &Vector3<f64> {
        &self.z
    }
    fn h(&self) -> &Matrix3x6<f64> {
        &self.h
    }
}

/// Output of the prediction phase for step `step`.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub step: u64,
    pub x_pred: Vector6<f64>,
    /// `(A M̂ Aᵀ)⁻¹ / ((1 + γ1)‖A‖)`.
    pub m_pred: Matrix6<f64>,
}

pub fn predict(
    state: &EstimatorState,
    model: &TransitionModel,
    params: &SttParams,
) -> Result<Prediction> {
    let a = model.matrix();
    let propagated = a * state.m_hat * a.transpose();
    let inv = spd_inverse(&propagated, "A M̂ Aᵀ")?;
    Ok(Prediction {
        step: state.step + 1,
        x_pred: a * state.x_hat,
        m_pred: inv / ((1.0 + params.gamma1) * model.norm()),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Innovation {
    pub e_meas: Vector6<f64>,
    pub e_cons: Vector6<f64>,
    pub s: Matrix6<f64>,
}

/// Measurement residual, consensus residual, and innovation matrix for
/// observer `me`.
pub fn innovate(
    me: ObserverId,
    x_pred: &Vector6<f64>,
    own: &impl Linearized,
    msgs: &[NeighborMessage],
    weights: &StepWeights,
    params: &SttParams,
) -> Result<Innovation> {
    let mut senders = BTreeSet::new();
    senders.insert(me);
    for m in msgs {
        if !senders.insert(m.sender) {
            return Err(Error::config(format!(
                "duplicate message from observer {} at observer {me}",
                m.sender
            )));
        }
    }
    if weights.observers().ne(senders.iter().copied()) {
        return Err(Error::config(format!(
            "weights of observer {me} do not cover exactly itself and its received neighbors"
        )));
    }

    let r = params.weight_matrix();
    let mut e_meas = Vector6::zeros();
    let mut e_cons = Vector6::zeros();
    let mut info = Matrix6::zeros();
    let own_term = (me, *own.z(), *own.h(), *x_pred);
    let terms =
        std::iter::once(own_term).chain(msgs.iter().map(|m| (m.sender, m.z, m.h, m.x_pred)));
    for (id, z, h, neighbor_pred) in terms {
        let alpha = weights.alpha(id).unwrap_or(0.0);
        let beta = weights.beta(id).unwrap_or(0.0);
        let ht_r = h.transpose() * r;
        e_meas += ht_r * (z - h * x_pred) * alpha;
        info += ht_r * h * alpha;
        if id != me {
            e_cons += (neighbor_pred - x_pred) * beta;
        }
    }
    Ok(Innovation {
        e_meas: e_meas * params.c,
        e_cons,
        s: info * params.c + Matrix6::identity(),
    })
}

pub fn correct(
    prediction: &Prediction,
    innovation: &Innovation,
    params: &SttParams,
) -> Result<EstimatorState> {
    let gram = prediction.m_pred * params.gamma2 + innovation.s;
    let m_hat = spd_inverse(&gram, "γ2 M̂⁻ + S")?;
    if !is_spd(&m_hat) {
        return Err(Error::NumericalDegeneracy {
            context: "corrected M̂",
            min_eigenvalue: min_eigenvalue(&m_hat),
        });
    }
    let x_hat = prediction.x_pred + m_hat * (innovation.e_meas + innovation.e_cons);
    Ok(EstimatorState {
        x_hat,
        m_hat: symmetrize(&m_hat),
        step: prediction.step,
    })
}

/// The message observer `me` broadcasts at the start of the round that
/// follows `state`.
pub fn broadcast(
    me: ObserverId,
    state: &EstimatorState,
    model: &TransitionModel,
    own: &PseudoMeasurement,
) -> NeighborMessage {
    NeighborMessage::new(me, model.propagate(&state.x_hat), own)
}

/// One full prediction → innovation → correction round for observer `me`.
///
/// Returns the new state and the message this observer broadcast in the
/// same round.
pub fn step(
    me: ObserverId,
    state: &EstimatorState,
    model: &TransitionModel,
    params: &SttParams,
    own: &PseudoMeasurement,
    msgs: &[NeighborMessage],
    weights: &StepWeights,
) -> Result<(EstimatorState, NeighborMessage)> {
    let prediction = predict(state, model, params)?;
    let innovation = innovate(me, &prediction.x_pred, own, msgs, weights, params)?;
    let next = correct(&prediction, &innovation, params)?;
    Ok((next, NeighborMessage::new(me, prediction.x_pred, own)))
}
