//! Closed-form (non-recursive) least-squares solution over a recorded
//! history. This is the ground truth the recursion in [`crate::estimator`]
//! is checked against.
//!
//! For observer `i` at step `k` the objective is
//!
//! ```text
//! J(x) = c Σ_t λ_t Σ_j α_j ‖z_j − H_j A^{t−k} x‖²_R + Σ_t λ_t Σ_j β_j ‖x̂⁻_j − A^{t−k} x‖²
//! ```
//!
//! with `λ_t = forgetting_factor(k − t)`. Its minimizer is `(Σ λ S_t)⁻¹ Σ λ y_t`.
//!
//! The recursion starts from an arbitrary `(x̂₀, M̂₀)`, which the plain sum
//! over `t = 1..k` does not see. A [`Prior`] adds it back as a `t = 0` term
//! `λ_0 ‖x̂₀ − A^{−k} x‖²_{M̂₀⁻¹}`. With the prior the recursion reproduces
//! the closed form at every step. Without it, the two agree once the
//! recursion is seeded from the closed form at `k = 1` (see
//! [`seed_from_first_step`]).

use nalgebra::{Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{
    forgetting_factor, EstimatorState, NeighborMessage, ObserverId, StepWeights, SttParams,
};
use crate::geometry::TransitionModel;
use crate::linalg::{min_eigenvalue, spd_inverse, symmetrize};

/// Initial condition of the recursion, `(x̂₀, M̂₀)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prior {
    pub x0: Vector6<f64>,
    pub m0: Matrix6<f64>,
}

/// Everything observer `i` used at one step: its own broadcast (which carries
/// its own prediction and measurement), what it received, and the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryStep {
    pub own: NeighborMessage,
    pub neighbors: Vec<NeighborMessage>,
    pub weights: StepWeights,
}

impl HistoryStep {
    fn messages(&self) -> impl Iterator<Item = &NeighborMessage> {
        std::iter::once(&self.own).chain(self.neighbors.iter())
    }
}

/// Steps `1..=k` of one observer's run.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryRecord {
    pub observer: ObserverId,
    pub model: TransitionModel,
    pub params: SttParams,
    pub prior: Option<Prior>,
    pub steps: Vec<HistoryStep>,
}

/// `y_t^{(k)}` and `S_t^{(k)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchTerms {
    pub y: Vector6<f64>,
    pub s: Matrix6<f64>,
}

impl HistoryRecord {
    pub fn new(observer: ObserverId, model: TransitionModel, params: SttParams) -> Self {
        Self {
            observer,
            model,
            params,
            prior: None,
            steps: Vec::new(),
        }
    }

    pub fn with_prior(mut self, prior: Prior) -> Self {
        self.prior = Some(prior);
        self
    }

    pub fn push(&mut self, step: HistoryStep) {
        self.steps.push(step);
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// `λ_t^{(k)}`.
    pub fn lambda(&self, t: usize, k: usize) -> f64 {
        forgetting_factor(&self.params, self.model.norm(), (k - t) as u64)
    }

    fn check_range(&self, t: usize, k: usize) -> Result<()> {
        if t < 1 || t > k || k > self.len() {
            return Err(Error::config(format!(
                "need 1 <= t <= k <= {}, got t={t}, k={k}",
                self.len()
            )));
        }
        Ok(())
    }
}

/// Assembles `y_t^{(k)}` and `S_t^{(k)}`, both pulled back to step `k` by `A^{t−k}`.
pub fn build_terms(history: &HistoryRecord, t: usize, k: usize) -> Result<BatchTerms> {
    history.check_range(t, k)?;
    let step = &history.steps[t - 1];
    let p = &history.params;
    let r = p.weight_matrix();
    let mut y = Vector6::zeros();
    let mut s = Matrix6::identity();
    for m in step.messages() {
        let alpha = step.weights.alpha(m.sender).unwrap_or(0.0);
        let beta = step.weights.beta(m.sender).unwrap_or(0.0);
        let ht_r = m.h.transpose() * r;
        y += ht_r * m.z * (p.c * alpha) + m.x_pred * beta;
        s += ht_r * m.h * (p.c * alpha);
    }
    let pull = history.model.power(t as i64 - k as i64);
    Ok(BatchTerms {
        y: pull.transpose() * y,
        s: pull.transpose() * s * pull,
    })
}

/// The `t = 0` term contributed by the prior, if any.
pub fn prior_terms(history: &HistoryRecord, k: usize) -> Option<BatchTerms> {
    let prior = history.prior.as_ref()?;
    let info = prior.m0.try_inverse()?;
    let pull = history.model.power(-(k as i64));
    Some(BatchTerms {
        y: pull.transpose() * info * prior.x0,
        s: pull.transpose() * info * pull,
    })
}

/// `Σ_{t=1}^{k} λ_t S_t`, without the prior. This is the Gram matrix whose
/// smallest singular value the convergence analysis bounds.
pub fn gram(history: &HistoryRecord, k: usize) -> Result<Matrix6<f64>> {
    history.check_range(k.max(1), k)?;
    let mut acc = Matrix6::zeros();
    for t in 1..=k {
        acc += build_terms(history, t, k)?.s * history.lambda(t, k);
    }
    Ok(acc)
}

/// `(Σ λ S, Σ λ y)` at step `k`, including the prior when present.
pub fn normal_equations(history: &HistoryRecord, k: usize) -> Result<(Matrix6<f64>, Vector6<f64>)> {
    history.check_range(k.max(1), k)?;
    let mut s_acc = Matrix6::zeros();
    let mut y_acc = Vector6::zeros();
    if let Some(prior) = prior_terms(history, k) {
        let lambda0 = forgetting_factor(&history.params, history.model.norm(), k as u64);
        s_acc += prior.s * lambda0;
        y_acc += prior.y * lambda0;
    }
    for t in 1..=k {
        let terms = build_terms(history, t, k)?;
        let lambda = history.lambda(t, k);
        s_acc += terms.s * lambda;
        y_acc += terms.y * lambda;
    }
    Ok((symmetrize(&s_acc), y_acc))
}

/// Closed-form minimizer at step `k`.
pub fn batch_solve_at(history: &HistoryRecord, k: usize) -> Result<Vector6<f64>> {
    let (s, y) = normal_equations(history, k)?;
    let sigma_min = min_eigenvalue(&s);
    let sigma_max = s.symmetric_eigenvalues().max();
    match s.cholesky() {
        Some(chol) if sigma_min > f64::EPSILON * sigma_max => Ok(chol.solve(&y)),
        _ => Err(Error::Observability { sigma_min }),
    }
}

/// Closed-form minimizer over the whole history.
pub fn batch_solve(history: &HistoryRecord) -> Result<Vector6<f64>> {
    if history.is_empty() {
        return Err(Error::config("history is empty"));
    }
    batch_solve_at(history, history.len())
}

/// `M̂_k = λ_k (Σ λ S)⁻¹`, the quantity the recursion propagates.
pub fn batch_m_hat(history: &HistoryRecord, k: usize) -> Result<Matrix6<f64>> {
    let (s, _) = normal_equations(history, k)?;
    Ok(spd_inverse(&s, "Σ λ S")? * history.lambda(k, k))
}

/// `ȳ_k = Σ λ y / λ_k`.
pub fn y_bar(history: &HistoryRecord, k: usize) -> Result<Vector6<f64>> {
    let (_, y) = normal_equations(history, k)?;
    Ok(y / history.lambda(k, k))
}

/// Objective value at step `k` for candidate `x` (an estimate of `x_k`).
pub fn objective_at(history: &HistoryRecord, k: usize, x: &Vector6<f64>) -> Result<f64> {
    history.check_range(k.max(1), k)?;
    let p = &history.params;
    let r = p.weight_matrix();
    let mut total = 0.0;
    if let Some(prior) = &history.prior {
        let info = prior
            .m0
            .try_inverse()
            .ok_or(Error::Singular { context: "M̂₀" })?;
        let e = prior.x0 - history.model.power(-(k as i64)) * x;
        let lambda0 = forgetting_factor(p, history.model.norm(), k as u64);
        total += lambda0 * (e.transpose() * info * e)[0];
    }
    for t in 1..=k {
        let step = &history.steps[t - 1];
        let x_t = history.model.power(t as i64 - k as i64) * x;
        let mut meas = 0.0;
        let mut cons = 0.0;
        for m in step.messages() {
            let alpha = step.weights.alpha(m.sender).unwrap_or(0.0);
            let beta = step.weights.beta(m.sender).unwrap_or(0.0);
            let e = m.z - m.h * x_t;
            meas += alpha * (e.transpose() * r * e)[0];
            cons += beta * (m.x_pred - x_t).norm_squared();
        }
        total += history.lambda(t, k) * (p.c * meas + cons);
    }
    Ok(total)
}

pub fn objective(history: &HistoryRecord, x: &Vector6<f64>) -> Result<f64> {
    if history.is_empty() {
        return Err(Error::config("history is empty"));
    }
    objective_at(history, history.len(), x)
}

/// Recursion state at `k = 1` that matches the closed form without a prior:
/// `M̂₁ = S₁⁻¹` and `x̂₁ = S₁⁻¹ y₁`.
pub fn seed_from_first_step(history: &HistoryRecord) -> Result<EstimatorState> {
    let terms = build_terms(history, 1, 1)?;
    let m_hat = spd_inverse(&terms.s, "S₁")?;
    Ok(EstimatorState {
        x_hat: m_hat * terms.y,
        m_hat,
        step: 1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{correct, innovate, predict, EstimatorState};
    use crate::geometry::{pseudo_linearize, transition, unit_bearing, TargetState};
    use crate::linalg::sigma_min;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A history whose every prediction equals the true state and whose
    /// measurements are exact, for observer 0 among `observers`.
    fn consistent_history(k: usize, with_prior: bool) -> (HistoryRecord, Vec<Vector6<f64>>) {
        let model = transition(0.1).unwrap();
        let params = SttParams::with_defaults(1.5).unwrap();
        let observers = [
            Vector3::new(20.0, 0.0, 0.0),
            Vector3::new(-10.0, 18.0, 5.0),
            Vector3::new(-10.0, -18.0, 10.0),
        ];
        let mut x =
            TargetState::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.5, -1.0, 0.2)).to_vector();
        let mut truths = Vec::new();
        let mut history = HistoryRecord::new(0, model, params);
        if with_prior {
            history = history.with_prior(Prior {
                x0: x,
                m0: Matrix6::identity() * 2.0,
            });
        }
        for _ in 0..k {
            x = model.propagate(&x);
            truths.push(x);
            let msgs: Vec<_> = observers
                .iter()
                .enumerate()
                .map(|(j, s)| {
                    let g = unit_bearing(&x.fixed_rows::<3>(0).into_owned(), s).unwrap();
                    NeighborMessage::new(j, x, &pseudo_linearize(&g, s))
                })
                .collect();
            history.push(HistoryStep {
                own: msgs[0],
                neighbors: msgs[1..].to_vec(),
                weights: StepWeights::uniform(0, &[1, 2]),
            });
        }
        (history, truths)
    }

    #[test]
    fn last_term_reduces_to_innovation_matrix() {
        let (history, truths) = consistent_history(4, false);
        let terms = build_terms(&history, 4, 4).unwrap();
        let step = &history.steps[3];
        let inn = innovate(
            0,
            &truths[3],
            &step.own,
            &step.neighbors,
            &step.weights,
            &history.params,
        )
        .unwrap();
        assert!((terms.s - inn.s).norm() < 1e-12);
    }

    #[test]
    fn terms_are_spd_and_dominate_pullback() {
        let (history, _) = consistent_history(10, false);
        for t in 1..=10 {
            let s = build_terms(&history, t, 10).unwrap().s;
            assert!(s.cholesky().is_some());
            let pull = history.model.power(t as i64 - 10);
            let floor = sigma_min(&(pull.transpose() * pull));
            assert!(sigma_min(&s) >= floor - 1e-12);
        }
        assert!(build_terms(&history, 0, 3).is_err());
        assert!(build_terms(&history, 4, 3).is_err());
        assert!(build_terms(&history, 3, 11).is_err());
    }

    #[test]
    fn objective_vanishes_at_truth_for_consistent_history() {
        for prior in [false, true] {
            let (history, truths) = consistent_history(8, prior);
            // The prior here is the true x₀, so it is consistent too.
            let j = objective(&history, truths.last().unwrap()).unwrap();
            assert!(j.abs() < 1e-18, "J = {j}");
        }
    }

    fn noisy_history(seed: u64, k: usize) -> HistoryRecord {
        let (mut history, _) = consistent_history(k, true);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for step in &mut history.steps {
            for m in std::iter::once(&mut step.own).chain(step.neighbors.iter_mut()) {
                m.z += Vector3::from_fn(|_, _| rng.gen::<f64>() - 0.5);
                m.x_pred += Vector6::from_fn(|_, _| rng.gen::<f64>() - 0.5);
            }
        }
        history
    }

    #[test]
    fn batch_solution_minimizes_objective() {
        let history = noisy_history(1, 12);
        let x_star = batch_solve(&history).unwrap();
        let j_star = objective(&history, &x_star).unwrap();
        assert!(j_star >= 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let delta = Vector6::from_fn(|_, _| rng.gen::<f64>() * 2.0 - 1.0);
            assert!(objective(&history, &(x_star + delta)).unwrap() >= j_star);
        }
    }

    #[test]
    fn gradient_vanishes_at_minimizer() {
        // Central finite differences; J is quadratic so these are exact up
        // to rounding.
        let history = noisy_history(4, 20);
        let x_star = batch_solve(&history).unwrap();
        let h = 1e-3;
        let j0 = objective(&history, &x_star).unwrap();
        for i in 0..6 {
            let mut plus = x_star;
            let mut minus = x_star;
            plus[i] += h;
            minus[i] -= h;
            let grad = (objective(&history, &plus).unwrap() - objective(&history, &minus).unwrap())
                / (2.0 * h);
            assert!(grad.abs() < 1e-8 * (1.0 + j0), "d/dx{i} = {grad}");
        }
    }

    #[test]
    fn single_step_matches_recursion() {
        let (history, _) = consistent_history(1, true);
        let prior = history.prior.clone().unwrap();
        let state = EstimatorState::new(prior.x0, prior.m0, 0).unwrap();
        let pred = predict(&state, &history.model, &history.params).unwrap();
        let step = &history.steps[0];
        let inn = innovate(
            0,
            &pred.x_pred,
            &step.own,
            &step.neighbors,
            &step.weights,
            &history.params,
        )
        .unwrap();
        let next = correct(&pred, &inn, &history.params).unwrap();
        let batch = batch_solve(&history).unwrap();
        assert!((next.x_hat - batch).norm() <= 1e-10 * batch.norm());
        let m = batch_m_hat(&history, 1).unwrap();
        assert!((next.m_hat - m).norm() <= 1e-10 * m.norm());
    }

    #[test]
    fn singular_normal_matrix_reports_observability() {
        let (mut history, _) = consistent_history(2, false);
        // Every observer sees the target along the same bearing and a
        // near-zero σ_ν swamps the identity terms, so the range direction is
        // numerically unconstrained.
        for step in &mut history.steps {
            let h = step.own.h;
            for m in &mut step.neighbors {
                m.h = h;
            }
        }
        history.params.sigma_nu = 1e-12;
        assert!(matches!(
            batch_solve(&history),
            Err(Error::Observability { .. })
        ));
    }
}
