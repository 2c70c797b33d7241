//! Scenario generation: target trajectories, observer placement,
//! communication graphs, and measurement noise.
//!
//! A [`ScenarioConfig`] is a JSON document. Every field has a default (the
//! circle scenario with 10 observers, 3 nearest neighbors, and 0.1 rad
//! bearing noise) and unknown keys are rejected.

use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{ObserverId, SttParams};
use crate::geometry::{perturb_bearing, unit_bearing, Bearing, TargetState, TransitionModel};

/// Axis-aligned box observers are placed in.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Cube {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for Cube {
    /// 60 × 60 × 40 m, centered horizontally on the origin, floor at z = 0.
    fn default() -> Self {
        Self {
            min: [-30.0, -30.0, 0.0],
            max: [30.0, 30.0, 40.0],
        }
    }
}

impl Cube {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// A timed waypoint for piecewise-linear paths.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    /// Seconds.
    pub t: f64,
    pub p: [f64; 3],
}

/// Target motion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TrajectorySpec {
    /// `v(t) = speed · [sin(ωt), cos(ωt), 0]`, integrated exactly from `p0`.
    Circle {
        p0: [f64; 3],
        speed: f64,
        angular_rate: f64,
    },
    /// Constant speed; the heading turns 90° clockwise (seen from +z) at
    /// every multiple of `turn_period`.
    Square {
        p0: [f64; 3],
        v0: [f64; 3],
        turn_period: f64,
    },
    ConstantVelocity {
        p0: [f64; 3],
        v0: [f64; 3],
    },
    /// Piecewise-linear through timed waypoints; held at the end points.
    Waypoints {
        points: Vec<Waypoint>,
    },
}

impl TrajectorySpec {
    pub fn circle() -> Self {
        TrajectorySpec::Circle {
            p0: [15.0, 0.0, 5.0],
            speed: 5.0,
            angular_rate: 1.0 / (10.0 * PI),
        }
    }

    pub fn square() -> Self {
        TrajectorySpec::Square {
            p0: [20.0, 20.0, 5.0],
            v0: [0.0, -6.0, 0.0],
            turn_period: 6.0,
        }
    }

    /// Ground truth at time `t` seconds.
    pub fn state_at(&self, t: f64) -> TargetState {
        match self {
            TrajectorySpec::Circle {
                p0,
                speed,
                angular_rate,
            } => {
                let (s, c) = (angular_rate * t).sin_cos();
                let radius = speed / angular_rate;
                TargetState::new(
                    Vector3::from(*p0) + Vector3::new(1.0 - c, s, 0.0) * radius,
                    Vector3::new(s, c, 0.0) * *speed,
                )
            }
            TrajectorySpec::Square {
                p0,
                v0,
                turn_period,
            } => {
                // Turns land exactly on multiples of the period; the tiny
                // offset absorbs k·dt rounding just below a multiple.
                let turns = (t / turn_period + 1e-9).floor().max(0.0) as u64;
                let mut p = Vector3::from(*p0);
                let mut v = Vector3::from(*v0);
                for _ in 0..turns {
                    p += v * *turn_period;
                    v = Vector3::new(v.y, -v.x, v.z);
                }
                let elapsed = (t - turns as f64 * turn_period).max(0.0);
                TargetState::new(p + v * elapsed, v)
            }
            TrajectorySpec::ConstantVelocity { p0, v0 } => TargetState::new(
                Vector3::from(*p0) + Vector3::from(*v0) * t,
                Vector3::from(*v0),
            ),
            TrajectorySpec::Waypoints { points } => waypoint_state(points, t),
        }
    }

    /// Ground truth at step `k` with sampling time `dt`.
    pub fn state(&self, k: usize, dt: f64) -> TargetState {
        self.state_at(k as f64 * dt)
    }

    fn validate(&self) -> Result<()> {
        match self {
            TrajectorySpec::Circle {
                angular_rate,
                speed,
                ..
            } => {
                if !(*angular_rate > 0.0) || !speed.is_finite() {
                    return Err(Error::config(
                        "circle needs angular_rate > 0 and a finite speed",
                    ));
                }
            }
            TrajectorySpec::Square { turn_period, .. } => {
                if !(*turn_period > 0.0) {
                    return Err(Error::config("square needs turn_period > 0"));
                }
            }
            TrajectorySpec::ConstantVelocity { .. } => {}
            TrajectorySpec::Waypoints { points } => validate_waypoints(points, "trajectory")?,
        }
        Ok(())
    }
}

fn validate_waypoints(points: &[Waypoint], what: &str) -> Result<()> {
    if points.is_empty() {
        return Err(Error::config(format!("{what}: waypoint list is empty")));
    }
    if points.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::config(format!(
            "{what}: waypoint times must increase strictly"
        )));
    }
    Ok(())
}

fn waypoint_state(points: &[Waypoint], t: f64) -> TargetState {
    let first = &points[0];
    let last = &points[points.len() - 1];
    if t <= first.t {
        return TargetState::new(Vector3::from(first.p), Vector3::zeros());
    }
    if t >= last.t {
        return TargetState::new(Vector3::from(last.p), Vector3::zeros());
    }
    let i = points.partition_point(|w| w.t <= t) - 1;
    let (a, b) = (&points[i], &points[i + 1]);
    let v = (Vector3::from(b.p) - Vector3::from(a.p)) / (b.t - a.t);
    TargetState::new(Vector3::from(a.p) + v * (t - a.t), v)
}

/// Circle scenario ground truth with its default parameters.
pub fn circle_trajectory(k: usize, dt: f64) -> TargetState {
    TrajectorySpec::circle().state(k, dt)
}

/// Square scenario ground truth with its default parameters.
pub fn square_trajectory(k: usize, dt: f64) -> TargetState {
    TrajectorySpec::square().state(k, dt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Number of nearest neighbors each observer listens to.
    pub k: usize,
    /// Build the graph once per trial from the initial positions.
    pub static_per_trial: bool,
    /// Independent per-link, per-step probability that a message is lost.
    pub drop_probability: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            k: 3,
            static_per_trial: true,
            drop_probability: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimatorConfig {
    pub c: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    /// Pseudo-measurement noise level. When absent it is derived as
    /// `√(σ_s² + r_nom² σ_g²)`.
    pub sigma_nu: Option<f64>,
    /// Nominal observer-target range `r_nom` used to derive `sigma_nu`.
    pub nominal_range: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            c: SttParams::DEFAULT_C,
            gamma1: SttParams::DEFAULT_GAMMA1,
            gamma2: SttParams::DEFAULT_GAMMA2,
            sigma_nu: None,
            nominal_range: 30.0,
        }
    }
}

/// Tuning shared by the Kalman-filter baselines.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// White-noise acceleration intensity, m²/s³.
    pub q: f64,
    pub initial_position_sigma: f64,
    pub initial_velocity_sigma: f64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            q: 1.0,
            initial_position_sigma: 30.0,
            initial_velocity_sigma: 10.0,
        }
    }
}

/// Everything needed to run one trial.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub cube: Cube,
    /// Observer count `n`.
    pub observers: usize,
    /// Fixed observer positions; drawn uniformly in `cube` when absent.
    pub observer_positions: Option<Vec<[f64; 3]>>,
    /// Moving observers; overrides `observer_positions` when present.
    pub observer_paths: Option<Vec<Vec<Waypoint>>>,
    /// Sampling time, seconds.
    pub dt: f64,
    /// Number of steps.
    pub horizon: usize,
    pub trajectory: TrajectorySpec,
    /// Bearing noise standard deviation, radians.
    pub bearing_sigma: f64,
    /// Observer position noise standard deviation per axis, meters.
    pub position_sigma: f64,
    pub graph: GraphConfig,
    pub estimator: EstimatorConfig,
    pub baseline: BaselineConfig,
    pub seed: Option<u64>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self::circle_scenario()
    }
}

impl ScenarioConfig {
    pub fn circle_scenario() -> Self {
        Self {
            cube: Cube::default(),
            observers: 10,
            observer_positions: None,
            observer_paths: None,
            dt: 0.1,
            horizon: 1000,
            trajectory: TrajectorySpec::circle(),
            bearing_sigma: 0.1,
            position_sigma: 0.0,
            graph: GraphConfig::default(),
            estimator: EstimatorConfig::default(),
            baseline: BaselineConfig::default(),
            seed: None,
        }
    }

    pub fn square_scenario() -> Self {
        Self {
            trajectory: TrajectorySpec::square(),
            horizon: 480,
            ..Self::circle_scenario()
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.observers < 1 {
            return Err(Error::config("observers: need at least 1"));
        }
        if self.graph.k >= self.observers {
            return Err(Error::config(format!(
                "graph.k: must be below the observer count {}, got {}",
                self.observers, self.graph.k
            )));
        }
        if !(0.0..=1.0).contains(&self.graph.drop_probability) {
            return Err(Error::config("graph.drop_probability: must lie in [0, 1]"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!(
                "dt: must be positive, got {}",
                self.dt
            )));
        }
        if !(self.bearing_sigma >= 0.0) || !(self.position_sigma >= 0.0) {
            return Err(Error::config(
                "bearing_sigma/position_sigma: must be non-negative",
            ));
        }
        if (0..3).any(|i| !(self.cube.min[i] < self.cube.max[i])) {
            return Err(Error::config("cube: min must be below max on every axis"));
        }
        if let Some(pos) = &self.observer_positions {
            if pos.len() != self.observers {
                return Err(Error::config(format!(
                    "observer_positions: expected {} entries, got {}",
                    self.observers,
                    pos.len()
                )));
            }
        }
        if let Some(paths) = &self.observer_paths {
            if paths.len() != self.observers {
                return Err(Error::config(format!(
                    "observer_paths: expected {} entries, got {}",
                    self.observers,
                    paths.len()
                )));
            }
            for p in paths {
                validate_waypoints(p, "observer_paths")?;
            }
        }
        let b = &self.baseline;
        if !(b.q >= 0.0 && b.initial_position_sigma > 0.0 && b.initial_velocity_sigma > 0.0) {
            return Err(Error::config(
                "baseline: q must be >= 0 and initial sigmas > 0",
            ));
        }
        self.trajectory.validate()?;
        self.stt_params()?;
        Ok(())
    }

    /// Pseudo-measurement noise level used by every estimator.
    pub fn sigma_nu(&self) -> f64 {
        self.estimator.sigma_nu.unwrap_or_else(|| {
            (self.position_sigma.powi(2)
                + (self.estimator.nominal_range * self.bearing_sigma).powi(2))
            .sqrt()
        })
    }

    pub fn stt_params(&self) -> Result<SttParams> {
        let e = &self.estimator;
        let sigma_nu = self.sigma_nu();
        if !(sigma_nu > 0.0) {
            return Err(Error::config(
                "estimator.sigma_nu: resolves to 0 (noise-free scenario); set it explicitly",
            ));
        }
        SttParams::new(e.c, e.gamma1, e.gamma2, sigma_nu)
    }

    pub fn transition(&self) -> Result<TransitionModel> {
        TransitionModel::new(self.dt)
    }

    /// Stable 64-bit digest of the configuration, used as the default seed.
    pub fn digest(&self) -> u64 {
        // FNV-1a over the canonical JSON encoding.
        let bytes = serde_json::to_vec(self).expect("config serializes");
        bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }

    /// Seed precedence: explicit override, then the config's own seed, then
    /// the digest.
    pub fn resolve_seed(&self, cli_seed: Option<u64>) -> u64 {
        cli_seed.or(self.seed).unwrap_or_else(|| self.digest())
    }
}

/// Deterministic per-trial generator derived from a master seed.
pub fn trial_rng(master_seed: u64, trial: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(
        master_seed ^ mix(trial.wrapping_add(0x9e37_79b9_7f4a_7c15))
    ))
}

fn mix(mut z: u64) -> u64 {
    // splitmix64 finalizer
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Where each observer is, possibly over time.
#[derive(Clone, Debug, PartialEq)]
pub enum ObserverTrack {
    Static(Vector3<f64>),
    Path(Vec<Waypoint>),
}

impl ObserverTrack {
    pub fn position_at(&self, t: f64) -> Vector3<f64> {
        match self {
            ObserverTrack::Static(p) => *p,
            ObserverTrack::Path(points) => waypoint_state(points, t).p,
        }
    }
}

/// Initial observer positions: the configured ones, or uniform draws in the cube.
pub fn place_observers<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<Vector3<f64>> {
    if let Some(paths) = &cfg.observer_paths {
        return paths.iter().map(|p| waypoint_state(p, 0.0).p).collect();
    }
    if let Some(pos) = &cfg.observer_positions {
        return pos.iter().map(|p| Vector3::from(*p)).collect();
    }
    let (lo, hi) = (Vector3::from(cfg.cube.min), Vector3::from(cfg.cube.max));
    (0..cfg.observers)
        .map(|_| Vector3::from_fn(|i, _| lo[i] + (hi[i] - lo[i]) * rng.gen::<f64>()))
        .collect()
}

/// Observer tracks for one trial. Random placement draws from `rng`.
pub fn observer_tracks<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> Vec<ObserverTrack> {
    match &cfg.observer_paths {
        Some(paths) => paths.iter().cloned().map(ObserverTrack::Path).collect(),
        None => place_observers(cfg, rng)
            .into_iter()
            .map(ObserverTrack::Static)
            .collect(),
    }
}

/// Who each observer listens to at one step.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommGraph {
    pub neighbors: Vec<Vec<ObserverId>>,
}

impl CommGraph {
    /// Every observer hears every other one.
    pub fn complete(n: usize) -> Self {
        Self {
            neighbors: (0..n)
                .map(|i| (0..n).filter(|&j| j != i).collect())
                .collect(),
        }
    }

    /// Drops each link independently with probability `p`. Always draws one
    /// number per link so the stream does not depend on `p`.
    pub fn with_drops<R: Rng + ?Sized>(&self, p: f64, rng: &mut R) -> Self {
        Self {
            neighbors: self
                .neighbors
                .iter()
                .map(|ns| {
                    ns.iter()
                        .copied()
                        .filter(|_| rng.gen::<f64>() >= p)
                        .collect()
                })
                .collect(),
        }
    }
}

/// Each observer's `k` nearest other observers; equal distances go to the
/// lower id.
pub fn knn_graph(positions: &[Vector3<f64>], k: usize) -> CommGraph {
    let neighbors = positions
        .iter()
        .enumerate()
        .map(|(i, pi)| {
            let mut others: Vec<(f64, ObserverId)> = positions
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(j, pj)| ((pi - pj).norm_squared(), j))
                .collect();
            others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            others.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect();
    CommGraph { neighbors }
}

/// A noisy bearing plus the noisy observer position it was taken from.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BearingObservation {
    pub bearing: Bearing,
    pub observer: Vector3<f64>,
}

/// Measures the target from `observer`. Consumes the same number of draws
/// whatever the noise levels.
pub fn observe<R: Rng + ?Sized>(
    target: &Vector3<f64>,
    observer: &Vector3<f64>,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<BearingObservation> {
    let g = unit_bearing(target, observer)?;
    let bearing = perturb_bearing(&g, cfg.bearing_sigma, rng);
    let noise = Vector3::from_fn(|_, _| {
        let n: f64 = StandardNormal.sample(rng);
        n * cfg.position_sigma
    });
    Ok(BearingObservation {
        bearing,
        observer: observer + noise,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_examples() {
        let s = circle_trajectory(0, 0.1);
        assert_eq!(s.p, Vector3::new(15.0, 0.0, 5.0));
        assert!((s.v - Vector3::new(0.0, 5.0, 0.0)).norm() < 1e-15);
        for k in (0..5000).step_by(37) {
            assert!((circle_trajectory(k, 0.1).v.norm() - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn circle_position_matches_quadrature() {
        // Composite Simpson on v(t) with 2000 panels per evaluation.
        let spec = TrajectorySpec::circle();
        for t in [0.7, 13.0, 55.5, 100.0] {
            let n = 2000;
            let h = t / n as f64;
            let mut acc = Vector3::zeros();
            for i in 0..=n {
                let w = if i == 0 || i == n {
                    1.0
                } else if i % 2 == 1 {
                    4.0
                } else {
                    2.0
                };
                acc += spec.state_at(i as f64 * h).v * w;
            }
            let p = Vector3::new(15.0, 0.0, 5.0) + acc * (h / 3.0);
            assert!((p - spec.state_at(t).p).norm() < 1e-9, "t={t}");
        }
    }

    #[test]
    fn square_examples() {
        let dt = 0.1;
        let s0 = square_trajectory(0, dt);
        assert_eq!(s0.v, Vector3::new(0.0, -6.0, 0.0));
        assert_eq!(s0.p, Vector3::new(20.0, 20.0, 5.0));
        let closed = square_trajectory(240, dt);
        assert!((closed.p - s0.p).norm() < 1e-9);
        // Clockwise from above: −y, then −x, then +y, then +x.
        assert_eq!(square_trajectory(60, dt).v, Vector3::new(-6.0, 0.0, 0.0));
        assert_eq!(square_trajectory(59, dt).v, Vector3::new(0.0, -6.0, 0.0));
        assert_eq!(square_trajectory(130, dt).v, Vector3::new(0.0, 6.0, 0.0));
        assert_eq!(square_trajectory(190, dt).v, Vector3::new(6.0, 0.0, 0.0));
        for corner in 0..4 {
            let a = square_trajectory(corner * 60, dt).p;
            let b = square_trajectory((corner + 1) * 60, dt).p;
            assert!(((a - b).norm() - 36.0).abs() < 1e-9);
        }
    }

    #[test]
    fn trajectories_are_consistent_under_finite_differences() {
        let dt = 0.1;
        for spec in [TrajectorySpec::circle(), TrajectorySpec::square()] {
            for k in 0..400 {
                let (a, b) = (spec.state(k, dt), spec.state(k + 1, dt));
                let fd = (b.p - a.p) / dt;
                // Circle: ‖a‖ dt / 2; square: bounded by the jump at a corner.
                let bound = match spec {
                    TrajectorySpec::Circle { .. } => 0.5 * 5.0 / (10.0 * PI) * 5.0 * dt + 1e-9,
                    _ => 2.0 * 6.0,
                };
                assert!((fd - a.v).norm() <= bound, "k={k}");
            }
        }
    }

    #[test]
    fn waypoints_interpolate() {
        let spec = TrajectorySpec::Waypoints {
            points: vec![
                Waypoint {
                    t: 0.0,
                    p: [0.0, 0.0, 0.0],
                },
                Waypoint {
                    t: 2.0,
                    p: [4.0, 0.0, 2.0],
                },
            ],
        };
        let s = spec.state_at(1.0);
        assert_eq!(s.p, Vector3::new(2.0, 0.0, 1.0));
        assert_eq!(s.v, Vector3::new(2.0, 0.0, 1.0));
        assert_eq!(spec.state_at(5.0).p, Vector3::new(4.0, 0.0, 2.0));
    }

    #[test]
    fn placement_is_seeded_and_inside_cube() {
        let cfg = ScenarioConfig::default();
        let a = place_observers(&cfg, &mut trial_rng(9, 0));
        let b = place_observers(&cfg, &mut trial_rng(9, 0));
        let c = place_observers(&cfg, &mut trial_rng(9, 1));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 10);
        assert!(a.iter().all(|p| cfg.cube.contains(p)));
    }

    #[test]
    fn knn_examples() {
        let line: Vec<_> = (0..4).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let g = knn_graph(&line, 1);
        assert_eq!(g.neighbors[0], vec![1]);
        assert_eq!(g.neighbors[3], vec![2]);
        // Inner points are equidistant from both sides: lower id wins.
        assert_eq!(g.neighbors[1], vec![0]);
        assert_eq!(g.neighbors[2], vec![1]);

        let cfg = ScenarioConfig::default();
        let pos = place_observers(&cfg, &mut trial_rng(1, 0));
        let g = knn_graph(&pos, 3);
        for (i, ns) in g.neighbors.iter().enumerate() {
            assert_eq!(ns.len(), 3);
            assert!(!ns.contains(&i));
        }
    }

    #[test]
    fn drops_thin_the_graph() {
        let g = CommGraph::complete(5);
        let mut rng = trial_rng(0, 0);
        assert_eq!(g.with_drops(0.0, &mut rng), g);
        let none = g.with_drops(1.0, &mut rng);
        assert!(none.neighbors.iter().all(|n| n.is_empty()));
    }

    #[test]
    fn noiseless_observation_is_exact() {
        let cfg = ScenarioConfig {
            bearing_sigma: 0.0,
            position_sigma: 0.0,
            ..ScenarioConfig::default()
        };
        let target = Vector3::new(1.0, 2.0, 3.0);
        let obs_pos = Vector3::new(-4.0, 0.0, 1.0);
        let o = observe(&target, &obs_pos, &cfg, &mut trial_rng(0, 0)).unwrap();
        assert_eq!(o.observer, obs_pos);
        assert_eq!(o.bearing, unit_bearing(&target, &obs_pos).unwrap());
        assert!(observe(&target, &target, &cfg, &mut trial_rng(0, 0)).is_err());
    }

    #[test]
    fn observation_noise_level() {
        let cfg = ScenarioConfig::default();
        let target = Vector3::new(1.0, 2.0, 3.0);
        let obs_pos = Vector3::new(-20.0, 5.0, 10.0);
        let truth = unit_bearing(&target, &obs_pos).unwrap();
        let mut rng = trial_rng(4, 2);
        let n = 100_000;
        let ms: f64 = (0..n)
            .map(|_| {
                observe(&target, &obs_pos, &cfg, &mut rng)
                    .unwrap()
                    .bearing
                    .angle_to(&truth)
                    .powi(2)
            })
            .sum::<f64>()
            / n as f64;
        assert!((ms.sqrt() - 0.1).abs() < 0.003);
    }

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ScenarioConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, ScenarioConfig::circle_scenario());
        assert_eq!(cfg.observers, 10);
        assert_eq!(cfg.position_sigma, 0.0);
        assert!(ScenarioConfig::from_json_str(r#"{"bogus": 1}"#).is_err());
        assert!(ScenarioConfig::from_json_str(r#"{"graph": {"k": 10}}"#).is_err());
        assert!(ScenarioConfig::from_json_str(r#"{"graph": {"drop_probability": 1.5}}"#).is_err());
        assert!(
            ScenarioConfig::from_json_str(r#"{"bearing_sigma": 0, "position_sigma": 0}"#).is_err()
        );
        let sq = ScenarioConfig::from_json_str(r#"{"trajectory": {"kind": "square", "p0": [20,20,5], "v0": [0,-6,0], "turn_period": 6}}"#).unwrap();
        assert_eq!(sq.trajectory, TrajectorySpec::square());
        let json = serde_json::to_string(&ScenarioConfig::square_scenario()).unwrap();
        assert_eq!(
            ScenarioConfig::from_json_str(&json).unwrap(),
            ScenarioConfig::square_scenario()
        );
    }

    #[test]
    fn seed_resolution() {
        let mut cfg = ScenarioConfig::default();
        let d = cfg.digest();
        assert_eq!(cfg.resolve_seed(None), d);
        assert_eq!(cfg.resolve_seed(Some(5)), 5);
        cfg.seed = Some(7);
        assert_eq!(cfg.resolve_seed(None), 7);
        cfg.bearing_sigma = 0.2;
        assert_ne!(cfg.digest(), ScenarioConfig::default().digest());
    }
}
