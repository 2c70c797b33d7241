//! Measurement geometry: unit bearings, orthogonal projections, the
//! pseudo-linear measurement, and the constant-velocity transition model.

use nalgebra::{Matrix2, Matrix3, Matrix3x6, Matrix6, Vector3, Vector6};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance on `‖g‖ − 1` accepted when wrapping a vector as a [`Bearing`].
pub const BEARING_NORM_TOLERANCE: f64 = 1e-9;

/// Position and velocity of the target.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
}

impl TargetState {
    pub fn new(p: Vector3<f64>, v: Vector3<f64>) -> Self {
        Self { p, v }
    }

    pub fn from_vector(x: &Vector6<f64>) -> Self {
        Self {
            p: x.fixed_rows::<3>(0).into_owned(),
            v: x.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        let mut x = Vector6::zeros();
        x.fixed_rows_mut::<3>(0).copy_from(&self.p);
        x.fixed_rows_mut::<3>(3).copy_from(&self.v);
        x
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|c| c.is_finite())
    }
}

/// Double-integrator transition `x_{k+1} = A x_k` with `A = [[I, dt I], [0, I]]`.
///
/// The spectral norm of `A` is cached: `A` is the Kronecker product of the
/// 2×2 block `[[1, dt], [0, 1]]` with `I_3`, so both share their largest
/// singular value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransitionModel {
    dt: f64,
    a: Matrix6<f64>,
    norm_a: f64,
}

impl TransitionModel {
    pub fn new(dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidTimeStep(dt));
        }
        let block = Matrix2::new(1.0, dt, 0.0, 1.0);
        let norm_a = block.singular_values().max();
        Ok(Self {
            dt,
            a: Self::power_matrix(dt, 1),
            norm_a,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.a
    }

    /// Spectral norm `‖A‖`.
    pub fn norm(&self) -> f64 {
        self.norm_a
    }

    /// `A^m` for any integer `m`, including negative powers.
    pub fn power(&self, m: i64) -> Matrix6<f64> {
        Self::power_matrix(self.dt, m)
    }

    fn power_matrix(dt: f64, m: i64) -> Matrix6<f64> {
        // [[1, dt], [0, 1]]^m = [[1, m dt], [0, 1]] exactly.
        let mut a = Matrix6::identity();
        let off = m as f64 * dt;
        for i in 0..3 {
            a[(i, i + 3)] = off;
        }
        a
    }

    pub fn propagate(&self, x: &Vector6<f64>) -> Vector6<f64> {
        self.a * x
    }
}

/// Convenience constructor matching the operation name used by the harness.
pub fn transition(dt: f64) -> Result<TransitionModel> {
    TransitionModel::new(dt)
}

/// A unit direction vector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vector3<f64>", into = "Vector3<f64>")]
pub struct Bearing(Vector3<f64>);

impl Bearing {
    /// Wraps `g`, rejecting vectors whose norm is off by more than
    /// [`BEARING_NORM_TOLERANCE`]. The stored vector is renormalized.
    pub fn new(g: Vector3<f64>) -> Result<Self> {
        let norm = g.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > BEARING_NORM_TOLERANCE {
            return Err(Error::InvalidBearing { norm });
        }
        if norm == 1.0 {
            Ok(Self(g))
        } else {
            Ok(Self(g / norm))
        }
    }

    pub fn as_vector(&self) -> &Vector3<f64> {
        &self.0
    }

    /// Angle in `[0, π]` between two bearings.
    pub fn angle_to(&self, other: &Bearing) -> f64 {
        // atan2 keeps precision near 0 and π where acos does not.
        let cross = self.0.cross(&other.0).norm();
        let dot = self.0.dot(&other.0);
        cross.atan2(dot)
    }
}

impl TryFrom<Vector3<f64>> for Bearing {
    type Error = Error;

    fn try_from(g: Vector3<f64>) -> Result<Self> {
        Bearing::new(g)
    }
}

impl From<Bearing> for Vector3<f64> {
    fn from(b: Bearing) -> Self {
        b.0
    }
}

/// Unit bearing pointing from observer `s` to target `p`.
pub fn unit_bearing(p: &Vector3<f64>, s: &Vector3<f64>) -> Result<Bearing> {
    let d = p - s;
    let distance = d.norm();
    if !(distance > 1e-12) || !distance.is_finite() {
        return Err(Error::DegenerateGeometry { distance });
    }
    Bearing::new(d / distance)
}

/// `P_g = I − g gᵀ`, the orthogonal projector onto the plane normal to `g`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProjectionMatrix(Matrix3<f64>);

impl ProjectionMatrix {
    pub fn from_bearing(g: &Bearing) -> Self {
        let g = g.as_vector();
        Self(Matrix3::identity() - g * g.transpose())
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }
}

/// Projection operator for a raw vector, which must be unit-norm.
pub fn projection(g: &Vector3<f64>) -> Result<ProjectionMatrix> {
    Ok(ProjectionMatrix::from_bearing(&Bearing::new(*g)?))
}

/// Rotates `g` by a Gaussian angle `θ ~ N(0, σ²)` about an axis drawn
/// uniformly from the plane orthogonal to `g`.
///
/// Two draws are consumed regardless of `sigma`, so noise streams stay
/// aligned when only the noise level changes between runs.
pub fn perturb_bearing<R: Rng + ?Sized>(g: &Bearing, sigma: f64, rng: &mut R) -> Bearing {
    let unit: f64 = StandardNormal.sample(rng);
    let phi = rng.gen::<f64>() * std::f64::consts::TAU;
    let theta = sigma * unit;
    if theta == 0.0 {
        return *g;
    }
    let gv = g.as_vector();
    let (u, w) = tangent_basis(gv);
    let axis = u * phi.cos() + w * phi.sin();
    let rotated = gv * theta.cos() + axis.cross(gv) * theta.sin();
    // Rodrigues with axis ⊥ g keeps the norm at 1 up to rounding.
    Bearing(rotated / rotated.norm())
}

/// An orthonormal pair spanning the plane orthogonal to the unit vector `g`.
pub(crate) fn tangent_basis(g: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let helper = match g.iamin() {
        0 => Vector3::x(),
        1 => Vector3::y(),
        _ => Vector3::z(),
    };
    let u = (helper - g * g.dot(&helper)).normalize();
    let w = g.cross(&u);
    (u, w)
}

/// Pseudo-linear measurement `z = H x + ν` built from a measured bearing and
/// a measured observer position.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PseudoMeasurement {
    pub z: Vector3<f64>,
    pub h: Matrix3x6<f64>,
    pub projection: ProjectionMatrix,
    pub observer: Vector3<f64>,
}

pub fn pseudo_linearize(g_meas: &Bearing, s_meas: &Vector3<f64>) -> PseudoMeasurement {
    let projection = ProjectionMatrix::from_bearing(g_meas);
    let p = projection.matrix();
    let mut h = Matrix3x6::zeros();
    h.fixed_view_mut::<3, 3>(0, 0).copy_from(p);
    PseudoMeasurement {
        z: p * s_meas,
        h,
        projection,
        observer: *s_meas,
    }
}

/// Checks `(A + C)⁻¹ = (I − (C⁻¹A + I)⁻¹) A⁻¹` numerically, to a relative
/// tolerance of 1e-9.
pub fn matrix_inverse_identity_check(a: &Matrix6<f64>, c: &Matrix6<f64>) -> Result<bool> {
    let singular = |context| Error::Singular { context };
    let a_inv = a.try_inverse().ok_or_else(|| singular("A"))?;
    let c_inv = c.try_inverse().ok_or_else(|| singular("C"))?;
    let lhs = (a + c).try_inverse().ok_or_else(|| singular("A + C"))?;
    let inner = (c_inv * a + Matrix6::identity())
        .try_inverse()
        .ok_or_else(|| singular("C⁻¹A + I"))?;
    let rhs = (Matrix6::identity() - inner) * a_inv;
    let scale = lhs.norm().max(rhs.norm()).max(f64::MIN_POSITIVE);
    Ok((lhs - rhs).norm() / scale <= 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix6, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn v3(x: f64, y: f64, z: f64) -> Vector3<f64> {
        Vector3::new(x, y, z)
    }

    #[test]
    fn unit_bearing_examples() {
        let g = unit_bearing(&v3(1.0, 0.0, 0.0), &Vector3::zeros()).unwrap();
        assert_eq!(*g.as_vector(), v3(1.0, 0.0, 0.0));
        let g = unit_bearing(&v3(15.0, 0.0, 5.0), &v3(15.0, 0.0, 0.0)).unwrap();
        assert_eq!(*g.as_vector(), v3(0.0, 0.0, 1.0));
        let g = unit_bearing(&v3(3.0, 4.0, 0.0), &Vector3::zeros()).unwrap();
        assert!((g.as_vector() - v3(0.6, 0.8, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn coincident_points_rejected() {
        let p = v3(2.0, 2.0, 2.0);
        assert!(matches!(
            unit_bearing(&p, &p),
            Err(Error::DegenerateGeometry { .. })
        ));
    }

    #[test]
    fn projection_examples() {
        let p = projection(&v3(1.0, 0.0, 0.0)).unwrap();
        assert_eq!(*p.matrix(), Matrix3::from_diagonal(&v3(0.0, 1.0, 1.0)));
        let p = projection(&v3(0.6, 0.8, 0.0)).unwrap();
        assert!((p.matrix()[(0, 0)] - 0.64).abs() < 1e-15);
        assert!((p.matrix()[(0, 1)] + 0.48).abs() < 1e-15);
        assert!(matches!(
            projection(&v3(1.0, 1.0, 0.0)),
            Err(Error::InvalidBearing { .. })
        ));
    }

    #[test]
    fn pseudo_linearize_kills_bearing_axis() {
        let g = Bearing::new(v3(0.0, 0.0, 1.0)).unwrap();
        let m = pseudo_linearize(&g, &v3(2.0, 3.0, 9.0));
        assert_eq!(m.z, v3(2.0, 3.0, 0.0));
        assert_eq!(m.h.fixed_view::<3, 3>(0, 3).into_owned(), Matrix3::zeros());
    }

    #[test]
    fn pseudo_linear_residual_matches_noise_term() {
        // z − H x = P (ε_s + r μ) with μ = g̃ − g.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = v3(rng.gen(), rng.gen(), rng.gen()) * 40.0;
            let s = v3(rng.gen(), rng.gen(), rng.gen()) * 40.0 - v3(20.0, 20.0, 0.0);
            let eps = v3(rng.gen(), rng.gen(), rng.gen()) * 0.3;
            let g = unit_bearing(&p, &s).unwrap();
            let g_meas = perturb_bearing(&g, 0.05, &mut rng);
            let m = pseudo_linearize(&g_meas, &(s + eps));
            let x = TargetState::new(p, v3(1.0, -2.0, 0.5)).to_vector();
            let r = (p - s).norm();
            let mu = g_meas.as_vector() - g.as_vector();
            let nu = m.projection.matrix() * (eps + mu * r);
            assert!((m.z - m.h * x - nu).norm() < 1e-9);
        }
    }

    #[test]
    fn transition_norm_oracle() {
        // Largest singular value of [[1, dt], [0, 1]] is (dt + √(dt² + 4)) / 2.
        for dt in [1e-3, 0.1, 0.5, 1.0, 2.0] {
            let m = transition(dt).unwrap();
            let closed = (dt + (dt * dt + 4.0f64).sqrt()) / 2.0;
            assert!((m.norm() - closed).abs() < 1e-12);
            let full = m.matrix().singular_values().max();
            assert!((m.norm() - full).abs() < 1e-12);
        }
        let m = transition(0.1).unwrap();
        assert!((m.norm() - 1.05125).abs() < 5e-6);
        let m = transition(1.0).unwrap();
        assert!((m.norm().powi(2) - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((transition(1e-8).unwrap().norm() - 1.0).abs() < 1e-6);
        assert!(transition(0.0).is_err());
        assert!(transition(-1.0).is_err());
    }

    #[test]
    fn transition_is_double_integrator() {
        let m = transition(0.25).unwrap();
        let x = TargetState::new(v3(1.0, 2.0, 3.0), v3(4.0, -4.0, 8.0));
        let next = TargetState::from_vector(&m.propagate(&x.to_vector()));
        assert_eq!(next.p, v3(2.0, 1.0, 5.0));
        assert_eq!(next.v, x.v);
        let round = m.power(-3) * m.power(3);
        assert!((round - Matrix6::identity()).norm() < 1e-15);
    }

    #[test]
    fn identity_check_examples() {
        let i = Matrix6::identity();
        assert!(matrix_inverse_identity_check(&i, &i).unwrap());
        assert!(matrix_inverse_identity_check(&i, &(i * 2.0)).unwrap());
        assert!(matches!(
            matrix_inverse_identity_check(&Matrix6::zeros(), &i),
            Err(Error::Singular { .. })
        ));
    }

    #[test]
    fn identity_check_random_spd_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let b = Matrix6::from_fn(|_, _| rng.gen::<f64>() - 0.5);
            let d = Matrix6::from_fn(|_, _| rng.gen::<f64>() - 0.5);
            let a = b * b.transpose() + Matrix6::identity() * 0.1;
            let c = d * d.transpose() + Matrix6::identity() * 0.1;
            assert!(matrix_inverse_identity_check(&a, &c).unwrap());
        }
    }

    #[test]
    fn perturb_with_zero_sigma_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = unit_bearing(&v3(0.3, -2.0, 7.0), &Vector3::zeros()).unwrap();
        for _ in 0..100 {
            assert_eq!(perturb_bearing(&g, 0.0, &mut rng), g);
        }
    }

    #[test]
    fn perturb_angle_statistics() {
        // Monte-Carlo oracle on the sampler: the angular error has RMS σ and
        // its tangential component is symmetric about zero.
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sigma = 0.1;
        let g = unit_bearing(&v3(1.0, 2.0, -0.5), &Vector3::zeros()).unwrap();
        let (u, _) = tangent_basis(g.as_vector());
        let n = 100_000;
        let mut sum_sq = 0.0;
        let mut signed = Vec::with_capacity(n);
        let mut mean_dir = Vector3::zeros();
        for _ in 0..n {
            let out = perturb_bearing(&g, sigma, &mut rng);
            assert!((out.as_vector().norm() - 1.0).abs() < 1e-12);
            sum_sq += g.angle_to(&out).powi(2);
            signed.push(
                out.as_vector()
                    .dot(&u)
                    .atan2(out.as_vector().dot(g.as_vector())),
            );
            mean_dir += out.as_vector();
        }
        let rms = (sum_sq / n as f64).sqrt();
        assert!((rms - sigma).abs() / sigma < 0.03, "rms {rms}");

        let mean = signed.iter().sum::<f64>() / n as f64;
        let var = signed.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64;
        let skew =
            signed.iter().map(|a| (a - mean).powi(3)).sum::<f64>() / n as f64 / var.powf(1.5);
        assert!(skew.abs() < 0.05, "skew {skew}");

        let mean_dir = Bearing::new(mean_dir.normalize()).unwrap();
        assert!(g.angle_to(&mean_dir) < 0.01);
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn any_bearing() -> impl Strategy<Value = Bearing> {
        (-1.0f64..1.0, 0.0f64..std::f64::consts::TAU).prop_map(|(z, phi)| {
            let r = (1.0 - z * z).sqrt();
            Bearing::new(Vector3::new(r * phi.cos(), r * phi.sin(), z)).unwrap()
        })
    }

    proptest! {
        #[test]
        fn projection_properties(g in any_bearing()) {
            let p = *ProjectionMatrix::from_bearing(&g).matrix();
            prop_assert!((p - p.transpose()).norm() < 1e-12);
            prop_assert!((p * p - p).norm() < 1e-12);
            prop_assert!((p * g.as_vector()).norm() < 1e-12);
            prop_assert!((p.trace() - 2.0).abs() < 1e-12);
            let mut eig = p.symmetric_eigenvalues().as_slice().to_vec();
            eig.sort_by(f64::total_cmp);
            prop_assert!(eig[0].abs() < 1e-12 && (eig[1] - 1.0).abs() < 1e-12 && (eig[2] - 1.0).abs() < 1e-12);
        }

        #[test]
        fn noiseless_pseudo_measurement_has_zero_residual(
            p in prop::array::uniform3(-50.0f64..50.0),
            s in prop::array::uniform3(-50.0f64..50.0),
            v in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let p = Vector3::from(p);
            let s = Vector3::from(s);
            prop_assume!((p - s).norm() > 1e-3);
            let g = unit_bearing(&p, &s).unwrap();
            let m = pseudo_linearize(&g, &s);
            let x = TargetState::new(p, Vector3::from(v)).to_vector();
            prop_assert!((m.z - m.h * x).norm() < 1e-10 * (1.0 + p.norm() + s.norm()));
        }

        #[test]
        fn norm_monotone_in_dt(a in 1e-6f64..5.0, b in 1e-6f64..5.0) {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            prop_assume!(hi - lo > 1e-9);
            prop_assert!(transition(lo).unwrap().norm() < transition(hi).unwrap().norm());
        }
    }
}
