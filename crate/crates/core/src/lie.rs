//! SE(3) poses and the tangent-space parameterization used by the solver.
//!
//! Tangent vectors are ordered `[ω; v]` (rotation first, radians, then
//! translation, meters). Solver updates use right perturbation:
//! `retract(p, ξ) = p · exp(ξ)`.

use nalgebra::{Matrix3, Matrix4, Point3, Quaternion, UnitQuaternion, Vector3, Vector6};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Rotation angles at or above `π - LOG_PI_MARGIN` are rejected by [`Pose::log`].
pub const LOG_PI_MARGIN: f64 = 1e-6;

const SMALL_ANGLE: f64 = 1e-5;

/// Six-vector tangent increment `[ω; v]`.
pub type Twist = Vector6<f64>;

#[inline]
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Rigid transform stored as a unit quaternion and a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    rotation: UnitQuaternion<f64>,
    translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, renormalizing the quaternion.
    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: UnitQuaternion::new_normalize(rotation.into_inner()),
            translation,
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self::new(UnitQuaternion::identity(), t)
    }

    pub fn from_rotation(r: UnitQuaternion<f64>) -> Self {
        Self::new(r, Vector3::zeros())
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(UnitQuaternion::from_scaled_axis(axis.normalize() * angle))
    }

    /// Parses `[qw, qx, qy, qz, tx, ty, tz]`. Quaternions already unit to
    /// within rounding are kept bit-for-bit so serialization round-trips.
    pub fn from_array(a: [f64; 7]) -> Self {
        let q = Quaternion::new(a[0], a[1], a[2], a[3]);
        let rotation = if (q.norm() - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        Self {
            rotation,
            translation: Vector3::new(a[4], a[5], a[6]),
        }
    }

    pub fn to_array(&self) -> [f64; 7] {
        let q = self.rotation.quaternion();
        [
            q.w,
            q.i,
            q.j,
            q.k,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    pub fn rotation(&self) -> &UnitQuaternion<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0)
            .copy_from(&self.rotation_matrix());
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }

    /// Group product `self · other`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose::new(
            self.rotation * other.rotation,
            self.rotation * other.translation + self.translation,
        )
    }

    pub fn inverse(&self) -> Pose {
        let r = self.rotation.inverse();
        Pose::new(r, -(r * self.translation))
    }

    /// Applies the transform to a point.
    #[inline]
    pub fn act(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    #[inline]
    pub fn act_point(&self, x: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.act(&x.coords))
    }

    /// Rotates a free vector (no translation).
    #[inline]
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    pub fn exp(xi: &Twist) -> Pose {
        let omega = Vector3::new(xi[0], xi[1], xi[2]);
        let v = Vector3::new(xi[3], xi[4], xi[5]);
        let rotation = UnitQuaternion::from_scaled_axis(omega);
        Pose::new(rotation, left_jacobian_so3(&omega) * v)
    }

    /// Inverse of [`Pose::exp`]. Fails when the rotation angle is within
    /// [`LOG_PI_MARGIN`] of π, where the axis is ill-conditioned.
    pub fn log(&self) -> Result<Twist> {
        let mut q = *self.rotation.quaternion();
        if q.w < 0.0 {
            q = -q;
        }
        let vnorm = q.imag().norm();
        let theta = 2.0 * vnorm.atan2(q.w);
        if theta >= std::f64::consts::PI - LOG_PI_MARGIN {
            return Err(Error::LogNearPi { angle: theta });
        }
        let omega = if vnorm < 1e-12 {
            q.imag() * (2.0 / q.w)
        } else {
            q.imag() * (theta / vnorm)
        };
        let v = inv_left_jacobian_so3(&omega) * self.translation;
        Ok(Twist::new(omega.x, omega.y, omega.z, v.x, v.y, v.z))
    }

    /// `self · exp(xi)`.
    pub fn retract(&self, xi: &Twist) -> Pose {
        self.compose(&Pose::exp(xi))
    }

    /// Rotation angle (rad) and translation distance (m) of `self⁻¹ · other`.
    pub fn distance_to(&self, other: &Pose) -> (f64, f64) {
        let d = self.inverse().compose(other);
        (d.rotation_angle(), d.translation.norm())
    }
}

/// Left Jacobian of SO(3), the `V` matrix of the SE(3) exponential.
pub fn left_jacobian_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    let w2 = w * w;
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + w * a + w2 * b
}

pub fn inv_left_jacobian_so3(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    let w = skew(omega);
    let w2 = w * w;
    let c = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - w * 0.5 + w2 * c
}

impl Serialize for Pose {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_array().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Pose {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let a = <[f64; 7]>::deserialize(d)?;
        let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2] + a[3] * a[3]).sqrt();
        if !(n > 1e-12) || a.iter().any(|x| !x.is_finite()) {
            return Err(serde::de::Error::custom(
                "pose must be [qw,qx,qy,qz,tx,ty,tz] with a non-zero finite quaternion",
            ));
        }
        Ok(Pose::from_array(a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn tx(x: f64) -> Pose {
        Pose::from_translation(Vector3::new(x, 0.0, 0.0))
    }

    fn arb_pose() -> impl Strategy<Value = Pose> {
        (
            prop::array::uniform3(-3.0f64..3.0),
            prop::array::uniform3(-1.0f64..1.0),
        )
            .prop_map(|(w, t)| {
                let w = Vector3::from(w);
                let w = if w.norm() > 3.0 { w * (3.0 / w.norm()) } else { w };
                Pose::new(UnitQuaternion::from_scaled_axis(w), Vector3::from(t))
            })
    }

    #[test]
    fn compose_identity_and_translations() {
        let p = Pose::from_array([0.9, 0.1, -0.3, 0.2, 0.4, -0.5, 0.6]);
        assert_eq!(Pose::identity().compose(&p).to_array(), p.to_array());
        let c = tx(1.0).compose(&tx(2.0));
        assert!((c.translation() - Vector3::new(3.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn rotation_then_translation_moves_origin_to_y() {
        let rz = Pose::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let p = rz.compose(&tx(1.0)).act(&Vector3::zeros());
        assert!((p - Vector3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn exp_of_zero_is_identity_and_act_translates() {
        assert_eq!(Pose::exp(&Twist::zeros()).to_array(), Pose::identity().to_array());
        assert_eq!(tx(1.0).act(&Vector3::zeros()), Vector3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn log_rejects_half_turn() {
        let p = Pose::from_axis_angle(&Vector3::x(), std::f64::consts::PI);
        assert!(matches!(p.log(), Err(Error::LogNearPi { .. })));
    }

    #[test]
    fn log_exp_round_trip_random_twists() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            let mut w = Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            w *= rng.random_range(0.0..3.0) / w.norm();
            let t = Twist::new(
                w.x,
                w.y,
                w.z,
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            let back = Pose::exp(&t).log().unwrap();
            assert!((back - t).amax() <= 1e-9, "{t} vs {back}");
        }
    }

    #[test]
    fn serde_uses_wxyz_translation_array() {
        let p = Pose::from_array([1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(s, "[1.0,0.0,0.0,0.0,1.0,2.0,3.0]");
        let q: Pose = serde_json::from_str(&s).unwrap();
        assert_eq!(q, p);
        assert!(serde_json::from_str::<Pose>("[0,0,0,0,1,2,3]").is_err());
    }

    proptest! {
        #[test]
        fn compose_inverse_is_identity(p in arb_pose()) {
            let (ang, dist) = p.compose(&p.inverse()).distance_to(&Pose::identity());
            prop_assert!(ang < 1e-9 && dist < 1e-9);
        }

        #[test]
        fn act_is_homomorphic(a in arb_pose(), b in arb_pose(), x in prop::array::uniform3(-1.0f64..1.0)) {
            let x = Vector3::from(x);
            let lhs = a.compose(&b).act(&x);
            let rhs = a.act(&b.act(&x));
            prop_assert!((lhs - rhs).norm() < 1e-9);
        }

        #[test]
        fn exp_log_identity(p in arb_pose()) {
            let back = Pose::exp(&p.log().unwrap());
            let (ang, dist) = back.distance_to(&p);
            prop_assert!(ang < 1e-9 && dist < 1e-9);
        }

        #[test]
        fn retract_is_right_multiplication(p in arb_pose(), w in prop::array::uniform6(-0.5f64..0.5)) {
            let xi = Twist::from_row_slice(&w);
            prop_assert_eq!(p.retract(&xi), p.compose(&Pose::exp(&xi)));
        }

        #[test]
        fn homogeneous_matrix_matches_act(p in arb_pose(), x in prop::array::uniform3(-1.0f64..1.0)) {
            let x = Vector3::from(x);
            let h = p.to_homogeneous() * x.push(1.0);
            prop_assert!((h.xyz() - p.act(&x)).norm() < 1e-12);
        }
    }
}
