//! Numeric versions of the convergence analysis: the projection-pair
//! singular value, the weighted projection bound, the `F` eigenvalue, the
//! lower bound on `c`, the Gram-matrix bound, the expected-error identity,
//! and the exponential decay rate.
//!
//! Every check computes both sides of its inequality or identity so callers
//! can report them, not just a verdict.

use std::collections::BTreeMap;

use nalgebra::{Matrix2, Matrix3, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::batch::{build_terms, gram, HistoryRecord, HistoryStep};
use crate::error::{Error, Result};
use crate::estimator::{EstimatorState, NeighborMessage, StepWeights, SttParams};
use crate::geometry::{pseudo_linearize, unit_bearing, Bearing, ProjectionMatrix, TransitionModel};
use crate::linalg::{min_eigenvalue, sigma_min};
use crate::network::SttNetwork;

/// `F = [[1, τΔt], [τΔt, τ²Δt²]]` for an offset `τ = t − k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FMatrix(pub Matrix2<f64>);

impl FMatrix {
    pub fn new(offset: i64, dt: f64) -> Self {
        let s = offset as f64 * dt;
        FMatrix(Matrix2::new(1.0, s, s, s * s))
    }
}

/// `P̄ = Σ α_j P_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PBar(pub Matrix3<f64>);

impl PBar {
    pub fn new(bearings: &[Bearing], weights: &[f64]) -> Self {
        assert_eq!(bearings.len(), weights.len());
        PBar(
            bearings
                .iter()
                .zip(weights)
                .map(|(g, a)| ProjectionMatrix::from_bearing(g).matrix() * *a)
                .sum(),
        )
    }

    /// `P̄` of one history step, read off the `H` blocks of its messages.
    pub fn of_step(step: &HistoryStep) -> Self {
        let mut acc = Matrix3::zeros();
        for m in std::iter::once(&step.own).chain(&step.neighbors) {
            let alpha = step.weights.alpha(m.sender).unwrap_or(0.0);
            acc += m.h.fixed_view::<3, 3>(0, 0) * alpha;
        }
        PBar(acc)
    }
}

/// Angle threshold `θ₀ ∈ (0, π/2)` and weight floor `α₀ > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleCondition {
    pub theta0: f64,
    pub alpha0: f64,
}

impl AngleCondition {
    pub fn new(theta0: f64, alpha0: f64) -> Result<Self> {
        if !(theta0 > 0.0 && theta0 < std::f64::consts::FRAC_PI_2) {
            return Err(Error::config(format!(
                "theta0 must lie in (0, π/2), got {theta0}"
            )));
        }
        if !(alpha0 > 0.0 && alpha0 <= 1.0) {
            return Err(Error::config(format!(
                "alpha0 must lie in (0, 1], got {alpha0}"
            )));
        }
        Ok(Self { theta0, alpha0 })
    }

    /// `α₀ (1 − cos θ₀)`.
    pub fn pbar_floor(&self) -> f64 {
        self.alpha0 * (1.0 - self.theta0.cos())
    }

    /// Whether `θ` lies in `[θ₀, π − θ₀]`.
    pub fn admits(&self, theta: f64) -> bool {
        theta >= self.theta0 && theta <= std::f64::consts::PI - self.theta0
    }
}

/// Numeric `σ_min(P_i + P_j)`.
pub fn sigma_min_projection_pair(gi: &Bearing, gj: &Bearing) -> f64 {
    let sum =
        ProjectionMatrix::from_bearing(gi).matrix() + ProjectionMatrix::from_bearing(gj).matrix();
    sigma_min(&sum)
}

/// Closed form `1 − |cos θ|` of [`sigma_min_projection_pair`].
pub fn projection_pair_closed_form(gi: &Bearing, gj: &Bearing) -> f64 {
    1.0 - gi.as_vector().dot(gj.as_vector()).abs().min(1.0)
}

/// Both sides of `σ_min(P̄) ≥ α₀(1 − cos θ₀)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    /// `None` when the hypotheses do not hold.
    pub holds: Option<bool>,
}

/// Checks the weighted projection bound for observer 0 (the first bearing)
/// against the others.
pub fn pbar_lower_bound_check(
    bearings: &[Bearing],
    weights: &[f64],
    cond: &AngleCondition,
) -> BoundCheck {
    let lhs = sigma_min(&PBar::new(bearings, weights).0);
    let rhs = cond.pbar_floor();
    let weights_ok = weights.iter().all(|a| *a >= cond.alpha0);
    let angle_ok = bearings
        .split_first()
        .is_some_and(|(gi, rest)| rest.iter().any(|gj| cond.admits(gi.angle_to(gj))));
    BoundCheck {
        lhs,
        rhs,
        holds: (weights_ok && angle_ok).then_some(lhs >= rhs - 1e-12),
    }
}

/// Smallest eigenvalue of `[[2, −Δt], [−Δt, Δt²]]` in closed form.
pub fn f_delta(dt: f64) -> f64 {
    (2.0 + dt * dt - (4.0 + dt.powi(4)).sqrt()) / 2.0
}

/// The same value by a numeric eigen-solve.
pub fn f_delta_numeric(dt: f64) -> f64 {
    min_eigenvalue(&(FMatrix::new(0, dt).0 + FMatrix::new(-1, dt).0))
}

/// Smallest `c` for which the Gram matrix is guaranteed to satisfy
/// `σ_min(Σ λ S) ≥ 1`.
pub fn c_lower_bound(params: &SttParams, model: &TransitionModel, cond: &AngleCondition) -> f64 {
    let b = model.norm() * (1.0 + params.gamma1);
    (b - 1.0) * b * params.sigma_nu.powi(2)
        / (params.gamma2 * f_delta(model.dt()) * cond.pbar_floor())
}

/// `σ_min(Σ_{t=1}^{k} λ_t S_t)` over a history.
pub fn gram_min_singular(history: &HistoryRecord, k: usize) -> Result<f64> {
    Ok(sigma_min(&gram(history, k)?))
}

/// Relative Frobenius residual between the Gram matrix and its
/// `(c/σ²) Σ λ F ⊗ P̄ + Σ λ (A^{t−k})ᵀ A^{t−k}` decomposition.
pub fn gram_decomposition_residual(history: &HistoryRecord, k: usize) -> Result<f64> {
    let direct = gram(history, k)?;
    let p = &history.params;
    let mut split = Matrix6::zeros();
    for t in 1..=k {
        let lambda = history.lambda(t, k);
        let offset = t as i64 - k as i64;
        let f = FMatrix::new(offset, history.model.dt()).0;
        let pbar = PBar::of_step(&history.steps[t - 1]).0;
        let kron: Matrix6<f64> = f.kronecker(&pbar);
        let pull = history.model.power(offset);
        split += kron * (lambda * p.c / p.sigma_nu.powi(2)) + pull.transpose() * pull * lambda;
    }
    Ok((direct - split).norm() / direct.norm())
}

/// A random history for observer 0 with `neighbors` fixed neighbors whose
/// bearings satisfy `cond` at every step, for checking the Gram bound.
/// `x_pred` and `z` are irrelevant to the Gram matrix and left at the truth.
pub fn random_feasible_history<R: Rng + ?Sized>(
    rng: &mut R,
    model: TransitionModel,
    params: SttParams,
    neighbors: usize,
    k: usize,
    theta0: f64,
) -> HistoryRecord {
    let ids: Vec<usize> = (1..=neighbors).collect();
    let weights = StepWeights::uniform(0, &ids);
    let mut history = HistoryRecord::new(0, model, params);
    let target = Vector3::zeros();
    for _ in 0..k {
        let positions = loop {
            let pos: Vec<Vector3<f64>> = (0..=neighbors)
                .map(|_| random_unit(rng) * rng.gen_range(5.0..50.0))
                .collect();
            let g: Vec<Bearing> = pos
                .iter()
                .map(|s| unit_bearing(&target, s).unwrap())
                .collect();
            let pi = std::f64::consts::PI;
            if g[1..].iter().any(|gj| {
                let th = g[0].angle_to(gj);
                th >= theta0 && th <= pi - theta0
            }) {
                break pos;
            }
        };
        let msgs: Vec<NeighborMessage> = positions
            .iter()
            .enumerate()
            .map(|(j, s)| {
                NeighborMessage::new(
                    j,
                    Vector6::zeros(),
                    &pseudo_linearize(&unit_bearing(&target, s).unwrap(), s),
                )
            })
            .collect();
        history.push(HistoryStep {
            own: msgs[0],
            neighbors: msgs[1..].to_vec(),
            weights: weights.clone(),
        });
    }
    history
}

fn random_unit<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Sample statistics of the one-step estimation error against its
/// predicted expectation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpectationCheck {
    pub predicted: Vector6<f64>,
    pub sample_mean: Vector6<f64>,
    pub standard_error: Vector6<f64>,
    /// Largest `|mean − predicted| / SE` over components.
    pub max_z: f64,
}

/// Monte-Carlo check of `E[η₁] = S₁⁻¹ Σ β_j A η_{j,0}` for observer 0.
///
/// Bearings are exact, so `H` is deterministic and `ν = P(ŝ − s)` has zero
/// mean. Noise enters through the measured observer positions and through
/// process noise on the velocity (position noise would move the target and
/// with it `H`). The estimate is the closed-form one-step minimizer.
#[allow(clippy::too_many_arguments)]
pub fn expected_error_check<R: Rng + ?Sized>(
    rng: &mut R,
    model: TransitionModel,
    params: SttParams,
    observers: &[Vector3<f64>],
    initial_errors: &[Vector6<f64>],
    x0: &Vector6<f64>,
    position_sigma: f64,
    velocity_sigma: f64,
    draws: usize,
) -> Result<ExpectationCheck> {
    assert_eq!(observers.len(), initial_errors.len());
    let n = observers.len();
    let ids: Vec<usize> = (1..n).collect();
    let weights = StepWeights::uniform(0, &ids);
    let a = model.matrix();
    let mean_next = a * x0;
    let target = mean_next.fixed_rows::<3>(0).into_owned();
    let bearings: Vec<Bearing> = observers
        .iter()
        .map(|s| unit_bearing(&target, s))
        .collect::<Result<_>>()?;
    let predictions: Vec<Vector6<f64>> = initial_errors.iter().map(|e| a * (x0 + e)).collect();

    let history_for = |measured: &[Vector3<f64>]| {
        let msgs: Vec<NeighborMessage> = (0..n)
            .map(|j| {
                NeighborMessage::new(
                    j,
                    predictions[j],
                    &pseudo_linearize(&bearings[j], &measured[j]),
                )
            })
            .collect();
        let mut h = HistoryRecord::new(0, model, params);
        h.push(HistoryStep {
            own: msgs[0],
            neighbors: msgs[1..].to_vec(),
            weights: weights.clone(),
        });
        h
    };

    // The predicted mean only depends on the deterministic geometry.
    let s1 = build_terms(&history_for(observers), 1, 1)?.s;
    let s1_inv = s1.try_inverse().ok_or(Error::Singular { context: "S₁" })?;
    let drift: Vector6<f64> = (0..n)
        .map(|j| a * initial_errors[j] * weights.beta(j).unwrap_or(0.0))
        .sum();
    let predicted = s1_inv * drift;

    let mut sum = Vector6::zeros();
    let mut sum_sq = Vector6::zeros();
    for _ in 0..draws {
        let mut w = Vector6::zeros();
        for i in 3..6 {
            let g: f64 = StandardNormal.sample(rng);
            w[i] = g * velocity_sigma;
        }
        let truth = mean_next + w;
        let measured: Vec<Vector3<f64>> = observers
            .iter()
            .map(|s| s + Vector3::from_fn(|_, _| StandardNormal.sample(rng)) * position_sigma)
            .collect();
        let terms = build_terms(&history_for(&measured), 1, 1)?;
        let eta = s1_inv * terms.y - truth;
        sum += eta;
        sum_sq += eta.component_mul(&eta);
    }
    let nd = draws as f64;
    let mean = sum / nd;
    let var = (sum_sq / nd - mean.component_mul(&mean)) * (nd / (nd - 1.0));
    let se = var.map(|v| (v.max(0.0) / nd).sqrt());
    let max_z = (0..6)
        .map(|i| {
            let d = (mean[i] - predicted[i]).abs();
            if se[i] > 0.0 {
                d / se[i]
            } else if d <= 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max);
    Ok(ExpectationCheck {
        predicted,
        sample_mean: mean,
        standard_error: se,
        max_z,
    })
}

/// Log-linear fit of an error envelope against the theoretical rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub bound: f64,
    /// Steps used in the fit.
    pub points: usize,
    /// `None` when `γ1 = γ2`: no decay is guaranteed.
    pub holds: Option<bool>,
}

pub const DECAY_SLACK: f64 = 0.05;
pub const MIN_DECAY_TRIALS: usize = 100;

/// Fits `envelope[k] ≈ C ρᵏ` over `burn_in..` while the envelope is above
/// `floor`, and compares `ρ` with `(1 + γ2)/(1 + γ1)`.
///
/// `envelope[k]` is the max over observers of the norm of the trial-mean
/// error at step `k`, averaged over `trials` runs.
pub fn decay_rate_check(
    envelope: &[f64],
    trials: usize,
    params: &SttParams,
    burn_in: usize,
    floor: f64,
) -> Result<DecayFit> {
    if trials < MIN_DECAY_TRIALS {
        return Err(Error::InsufficientTrials {
            got: trials,
            need: MIN_DECAY_TRIALS,
        });
    }
    let bound = params.decay_bound();
    let pts: Vec<(f64, f64)> = envelope
        .iter()
        .enumerate()
        .skip(burn_in)
        .take_while(|(_, e)| **e > floor)
        .map(|(k, e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::config(
            "decay fit needs at least two points above the floor",
        ));
    }
    let n = pts.len() as f64;
    let (mx, my) = pts
        .iter()
        .fold((0.0, 0.0), |(a, b), (x, y)| (a + x / n, b + y / n));
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx).powi(2))
    });
    let rate = (sxy / sxx).exp();
    Ok(DecayFit {
        rate,
        bound,
        points: pts.len(),
        holds: params
            .guarantees_decay()
            .then_some(rate <= bound + DECAY_SLACK),
    })
}

/// Largest step-to-step ratio of `envelope` after `burn_in`, over the steps
/// where the previous value is above `floor`.
pub fn max_step_ratio(envelope: &[f64], burn_in: usize, floor: f64) -> Option<f64> {
    envelope
        .windows(2)
        .enumerate()
        .skip(burn_in)
        .filter(|(_, w)| w[0] > floor)
        .map(|(_, w)| w[1] / w[0])
        .reduce(f64::max)
}

/// Per-step errors of a noise-free run: exact bearings and positions, target
/// on the exact constant-velocity model, every observer hearing all others.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiselessRun {
    /// `errors[k][i]`: state error of observer `i` after step `k + 1`.
    pub errors: Vec<Vec<Vector6<f64>>>,
}

impl NoiselessRun {
    /// Max over observers of the full state error norm, per step.
    pub fn envelope(&self) -> Vec<f64> {
        self.errors
            .iter()
            .map(|es| es.iter().map(|e| e.norm()).fold(0.0, f64::max))
            .collect()
    }

    /// Max over observers of the position error norm, per step.
    pub fn position_envelope(&self) -> Vec<f64> {
        self.errors
            .iter()
            .map(|es| {
                es.iter()
                    .map(|e| e.fixed_rows::<3>(0).norm())
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Runs the estimator without any noise from the given initial estimates.
pub fn noiseless_run(
    model: TransitionModel,
    params: SttParams,
    observers: &[Vector3<f64>],
    initial: &[Vector6<f64>],
    x0: &Vector6<f64>,
    steps: usize,
) -> Result<NoiselessRun> {
    let n = observers.len();
    let states = initial
        .iter()
        .map(|x| EstimatorState::initial(*x))
        .collect();
    let mut net = SttNetwork::new(model, params, states);
    let inbox: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| j != i).collect())
        .collect();
    let mut x = *x0;
    let mut errors = Vec::with_capacity(steps);
    for _ in 0..steps {
        x = model.propagate(&x);
        let p = x.fixed_rows::<3>(0).into_owned();
        let meas: Vec<_> = observers
            .iter()
            .map(|s| unit_bearing(&p, s).map(|g| pseudo_linearize(&g, s)))
            .collect::<Result<_>>()?;
        net.round(&meas, &inbox)?;
        errors.push(net.states().iter().map(|s| s.x_hat - x).collect());
    }
    Ok(NoiselessRun { errors })
}

/// Smallest pairwise angle between the bearings from `observers` to `target`.
pub fn min_pairwise_angle(target: &Vector3<f64>, observers: &[Vector3<f64>]) -> Result<f64> {
    let g: Vec<Bearing> = observers
        .iter()
        .map(|s| unit_bearing(target, s))
        .collect::<Result<_>>()?;
    let mut best = std::f64::consts::PI;
    for i in 0..g.len() {
        for j in i + 1..g.len() {
            let th = g[i].angle_to(&g[j]);
            best = best.min(th.min(std::f64::consts::PI - th));
        }
    }
    Ok(best)
}

/// One entry of a verification report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub check: String,
    pub inputs: BTreeMap<String, serde_json::Value>,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
    /// Hypotheses not met or the check is informational only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}
