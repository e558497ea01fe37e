//! Observations, noise models and the four factor residuals with analytic
//! Jacobians.
//!
//! Jacobians with respect to the rest pose use right perturbation
//! `o_r · exp(ξ)`, `ξ = [ω; v]`.

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix2x6, Matrix3, Matrix6x3, RowVector6, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lie::{skew, Pose};
use crate::mesh::TriangleMesh;

/// Largest in-hand rotation accepted as an elastic displacement (rad).
pub const MAX_DISPLACEMENT_ANGLE: f64 = 0.5;
/// Largest in-hand translation accepted as an elastic displacement (m).
pub const MAX_DISPLACEMENT_TRANSLATION: f64 = 0.05;

/// One timestep of sensing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimestepObservation {
    /// Gripper pose in the world.
    pub gripper: Pose,
    /// In-hand displacement of the object, gripper frame.
    pub displacement: Pose,
    /// Grasp wrench `[force; torque]` in the gripper frame (N, N·m).
    pub wrench: Vector6<f64>,
    pub in_contact: bool,
}

impl TimestepObservation {
    pub fn validate(&self) -> Result<()> {
        let ang = self.displacement.rotation_angle();
        let dist = self.displacement.translation().norm();
        if ang > MAX_DISPLACEMENT_ANGLE || dist > MAX_DISPLACEMENT_TRANSLATION {
            return Err(Error::InvalidInput(format!(
                "in-hand displacement too large for an elastic grasp ({ang:.3} rad, {dist:.4} m)"
            )));
        }
        if !self.wrench.iter().all(|x| x.is_finite()) {
            return Err(Error::InvalidInput("wrench has non-finite entries".into()));
        }
        Ok(())
    }

    pub fn force(&self) -> Vector3<f64> {
        self.wrench.fixed_rows::<3>(0).into_owned()
    }
}

/// Diagonal factor noise, stored as standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    /// Geometric consistency (m).
    pub sigma_h1: f64,
    /// Non-penetration (m).
    pub sigma_h2: f64,
    /// Contact kinematics (m).
    pub sigma_h3: f64,
    /// Force balance, force rows (N).
    pub sigma_h4_force: f64,
    /// Force balance, torque rows (N·m).
    pub sigma_h4_torque: f64,
    /// Wrench noise used for contact detection (N).
    pub sigma_detect_force: f64,
    /// Wrench noise used for contact detection (N·m).
    pub sigma_detect_torque: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            sigma_h1: 2e-3,
            sigma_h2: 1e-3,
            sigma_h3: 1e-3,
            sigma_h4_force: 0.3,
            sigma_h4_torque: 0.03,
            sigma_detect_force: 0.1,
            sigma_detect_torque: 0.01,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.sigma_h1,
            self.sigma_h2,
            self.sigma_h3,
            self.sigma_h4_force,
            self.sigma_h4_torque,
            self.sigma_detect_force,
            self.sigma_detect_torque,
        ];
        if all.iter().all(|s| s.is_finite() && *s > 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidInput("noise standard deviations must be positive".into()))
        }
    }

    pub fn h4_sigmas(&self) -> Vector6<f64> {
        let (f, t) = (self.sigma_h4_force, self.sigma_h4_torque);
        Vector6::new(f, f, f, t, t, t)
    }
}

/// `o_t = g_t · δ_t · o_r`.
pub fn object_pose_at(rest: &Pose, obs: &TimestepObservation) -> Pose {
    obs.gripper.compose(&obs.displacement.compose(rest))
}

/// Residual and Jacobian with respect to the rest pose.
#[derive(Debug, Clone)]
pub struct PoseFactorEval {
    pub residual: DVector<f64>,
    pub jacobian: DMatrix<f64>,
}

/// Signed distance of each observed point (gripper frame) to the object
/// placed at `rest`.
pub fn geometric_consistency(rest: &Pose, cloud: &[Vector3<f64>], object: &TriangleMesh) -> PoseFactorEval {
    let inv = rest.inverse();
    let mut residual = DVector::zeros(cloud.len());
    let mut jacobian = DMatrix::zeros(cloud.len(), 6);
    for (i, p) in cloud.iter().enumerate() {
        let y = inv.act(p);
        let s = object.signed_distance(&y);
        residual[i] = s.value;
        jacobian.row_mut(i).copy_from(&pull_back_row(&s.gradient, &y));
    }
    PoseFactorEval { residual, jacobian }
}

/// Row of `∂ SDF(exp(-ξ) y) / ∂ξ` at ξ = 0.
#[inline]
fn pull_back_row(grad: &Vector3<f64>, y: &Vector3<f64>) -> RowVector6<f64> {
    let w = grad.cross(y);
    RowVector6::new(w.x, w.y, w.z, -grad.x, -grad.y, -grad.z)
}

/// Row of `∂ SDF(M · exp(ξ) p) / ∂ξ` at ξ = 0, where `grad_local` is the
/// world gradient rotated into the frame of `p`.
#[inline]
fn push_forward_row(grad_local: &Vector3<f64>, p: &Vector3<f64>) -> RowVector6<f64> {
    let w = p.cross(grad_local);
    RowVector6::new(w.x, w.y, w.z, grad_local.x, grad_local.y, grad_local.z)
}

/// `min(0, SDF_env)` of each object sample posed at timestep `obs`.
/// Rows of non-penetrating samples are zero.
pub fn non_penetration(
    rest: &Pose,
    obs: &TimestepObservation,
    samples: &[Vector3<f64>],
    environment: &TriangleMesh,
) -> PoseFactorEval {
    let pose = object_pose_at(rest, obs);
    let rot_t = pose.rotation().inverse();
    let mut residual = DVector::zeros(samples.len());
    let mut jacobian = DMatrix::zeros(samples.len(), 6);
    for (i, p) in samples.iter().enumerate() {
        let s = environment.signed_distance(&pose.act(p));
        if s.value < 0.0 {
            residual[i] = s.value;
            let a = rot_t * s.gradient;
            jacobian.row_mut(i).copy_from(&push_forward_row(&a, p));
        }
    }
    PoseFactorEval { residual, jacobian }
}

#[derive(Debug, Clone, Copy)]
pub struct KinematicsEval {
    /// `[SDF_env(c), SDF_obj(o_t⁻¹ c)]`.
    pub residual: Vector2<f64>,
    pub d_rest: Matrix2x6<f64>,
    pub d_point: Matrix2x3<f64>,
}

/// The contact point must lie on both the environment and the object surface.
pub fn contact_kinematics(
    rest: &Pose,
    point: &Vector3<f64>,
    obs: &TimestepObservation,
    environment: &TriangleMesh,
    object: &TriangleMesh,
) -> KinematicsEval {
    let env = environment.signed_distance(point);
    let pose = object_pose_at(rest, obs);
    let y = pose.inverse().act(point);
    let obj = object.signed_distance(&y);
    let mut d_rest = Matrix2x6::zeros();
    d_rest.row_mut(1).copy_from(&pull_back_row(&obj.gradient, &y));
    let mut d_point = Matrix2x3::zeros();
    d_point.row_mut(0).copy_from(&env.gradient.transpose());
    d_point
        .row_mut(1)
        .copy_from(&pose.rotate(&obj.gradient).transpose());
    KinematicsEval {
        residual: Vector2::new(env.value, obj.value),
        d_rest,
        d_point,
    }
}

/// Grasp wrench produced by force `force` (world frame) acting at world
/// point `point`, expressed in the gripper frame: `[f_g; p × f_g]`.
pub fn contact_jacobian_wrench(point: &Vector3<f64>, force: &Vector3<f64>, gripper: &Pose) -> Vector6<f64> {
    let inv = gripper.inverse();
    let p = inv.act(point);
    let f = inv.rotate(force);
    let tau = p.cross(&f);
    Vector6::new(f.x, f.y, f.z, tau.x, tau.y, tau.z)
}

#[derive(Debug, Clone, Copy)]
pub struct ForceBalanceEval {
    pub residual: Vector6<f64>,
    pub d_point: Matrix6x3<f64>,
    pub d_force: Matrix6x3<f64>,
}

/// Predicted minus observed grasp wrench.
pub fn force_balance(point: &Vector3<f64>, force: &Vector3<f64>, obs: &TimestepObservation) -> ForceBalanceEval {
    let g = &obs.gripper;
    let rt: Matrix3<f64> = g.rotation_matrix().transpose();
    let p = rt * (point - g.translation());
    let fg = rt * force;
    let predicted = contact_jacobian_wrench(point, force, g);
    let mut d_force = Matrix6x3::zeros();
    d_force.fixed_view_mut::<3, 3>(0, 0).copy_from(&rt);
    d_force.fixed_view_mut::<3, 3>(3, 0).copy_from(&(skew(&p) * rt));
    let mut d_point = Matrix6x3::zeros();
    d_point.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-skew(&fg) * rt));
    ForceBalanceEval {
        residual: predicted - obs.wrench,
        d_point,
        d_force,
    }
}

/// Mahalanobis norm of the wrench under the detection noise.
pub fn wrench_mahalanobis(wrench: &Vector6<f64>, noise: &NoiseModel) -> f64 {
    let (f, t) = (noise.sigma_detect_force, noise.sigma_detect_torque);
    let sig = Vector6::new(f, f, f, t, t, t);
    wrench.component_div(&sig).norm()
}

/// Contact flag `‖w‖_Σ > ε` (strict).
pub fn detect_contact(wrench: &Vector6<f64>, noise: &NoiseModel, epsilon: f64) -> bool {
    wrench_mahalanobis(wrench, noise) > epsilon
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::Twist;
    use crate::mesh::shapes;

    fn obs(g: Pose, d: Pose) -> TimestepObservation {
        TimestepObservation {
            gripper: g,
            displacement: d,
            wrench: Vector6::zeros(),
            in_contact: false,
        }
    }

    fn tx(x: f64) -> Pose {
        Pose::from_translation(Vector3::new(x, 0.0, 0.0))
    }

    #[test]
    fn object_pose_composition() {
        let p = Pose::from_array([0.8, 0.2, 0.1, -0.3, 0.1, 0.2, 0.3]);
        let o = object_pose_at(&p, &obs(Pose::identity(), Pose::identity()));
        let (a, d) = o.distance_to(&p);
        assert!(a < 1e-15 && d < 1e-15);
        let o = object_pose_at(&tx(1.0), &obs(tx(1.0), Pose::identity()));
        assert!((o.translation() - Vector3::new(2.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn geometric_residual_on_surface_and_shifted() {
        let cube = shapes::box_mesh(Vector3::repeat(0.05));
        let pts: Vec<_> = (0..20)
            .map(|k| Vector3::new(0.025, -0.01 + 0.001 * k as f64, 0.01))
            .collect();
        let e = geometric_consistency(&Pose::identity(), &pts, &cube);
        assert!(e.residual.amax() <= 1e-9);
        // Moving the object +1 cm along x puts the +x face points 1 cm inside.
        let e = geometric_consistency(&tx(0.01), &pts, &cube);
        for r in e.residual.iter() {
            assert!((r + 0.01).abs() < 1e-12);
        }
    }

    #[test]
    fn non_penetration_plane_depth() {
        let table = shapes::table(Vector3::new(0.4, 0.4, 0.05), 0.0);
        let cube = shapes::box_mesh(Vector3::repeat(0.05));
        let samples = cube.sample_surface(400, 1).points;
        // Cube resting on the table, then lowered 5 mm.
        let above = obs(Pose::from_translation(Vector3::new(0.0, 0.0, 0.03)), Pose::identity());
        let e = non_penetration(&Pose::identity(), &above, &samples, &table);
        assert_eq!(e.residual.amax(), 0.0);
        let lowered = obs(Pose::from_translation(Vector3::new(0.0, 0.0, 0.02)), Pose::identity());
        let e = non_penetration(&Pose::identity(), &lowered, &samples, &table);
        for (p, r) in samples.iter().zip(e.residual.iter()) {
            let z = p.z + 0.02;
            if z < 0.0 {
                assert!((r - z).abs() < 1e-12);
            } else {
                assert_eq!(*r, 0.0);
            }
        }
        assert!(e.residual.iter().any(|r| (r + 0.005).abs() < 1e-12));
    }

    #[test]
    fn kinematics_on_and_off_plane() {
        let table = shapes::table(Vector3::new(0.4, 0.4, 0.05), 0.0);
        let cube = shapes::box_mesh(Vector3::repeat(0.05));
        let o = obs(Pose::from_translation(Vector3::new(0.0, 0.0, 0.025)), Pose::identity());
        let c = Vector3::new(0.01, -0.005, 0.0);
        let e = contact_kinematics(&Pose::identity(), &c, &o, &table, &cube);
        assert!(e.residual.amax() < 1e-12);
        // Lift the object and the point 3 mm: still on the object, off the table.
        let o = obs(Pose::from_translation(Vector3::new(0.0, 0.0, 0.028)), Pose::identity());
        let e = contact_kinematics(&Pose::identity(), &(c + Vector3::new(0.0, 0.0, 0.003)), &o, &table, &cube);
        assert!((e.residual[0] - 0.003).abs() < 1e-12 && e.residual[1].abs() < 1e-12);
    }

    #[test]
    fn wrench_from_lever_arm() {
        let w = contact_jacobian_wrench(&Vector3::zeros(), &Vector3::new(1.0, 2.0, 3.0), &Pose::identity());
        assert_eq!(w, Vector6::new(1.0, 2.0, 3.0, 0.0, 0.0, 0.0));
        let w = contact_jacobian_wrench(&Vector3::new(0.0, 0.0, -0.1), &Vector3::x(), &Pose::identity());
        assert!((w - Vector6::new(1.0, 0.0, 0.0, 0.0, -0.1, 0.0)).norm() < 1e-15);
        let g = Pose::exp(&Twist::new(0.3, -0.2, 0.5, 0.1, 0.2, -0.3));
        let c = Vector3::new(0.2, -0.1, 0.05);
        let f = Vector3::new(0.5, -1.5, 2.0);
        let w1 = contact_jacobian_wrench(&c, &f, &g);
        let w3 = contact_jacobian_wrench(&c, &(f * 3.0), &g);
        assert!((w3 - w1 * 3.0).norm() < 1e-12);
    }

    #[test]
    fn force_balance_residuals() {
        let g = Pose::exp(&Twist::new(0.3, -0.2, 0.5, 0.1, 0.2, -0.3));
        let c = Vector3::new(0.2, -0.1, 0.05);
        let f = Vector3::new(0.5, -1.5, 2.0);
        let mut o = obs(g, Pose::identity());
        o.wrench = contact_jacobian_wrench(&c, &f, &g);
        assert!(force_balance(&c, &f, &o).residual.norm() < 1e-14);
        let mut o = obs(Pose::identity(), Pose::identity());
        o.wrench = Vector6::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0);
        let r = force_balance(&c, &Vector3::zeros(), &o).residual;
        assert_eq!(r, Vector6::new(0.0, 0.0, -1.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn detection_threshold_is_strict() {
        let n = NoiseModel::default();
        assert!(!detect_contact(&Vector6::zeros(), &n, 3.0));
        let w = Vector6::new(0.3, 0.0, 0.0, 0.0, 0.0, 0.0);
        assert!((wrench_mahalanobis(&w, &n) - 3.0).abs() < 1e-12);
        let eps = wrench_mahalanobis(&w, &n);
        assert!(!detect_contact(&w, &n, eps));
        assert!(detect_contact(&(w * 1.01), &n, eps));
    }

    #[test]
    fn displacement_sanity_bound() {
        let mut o = obs(Pose::identity(), tx(0.06));
        assert!(o.validate().is_err());
        o.displacement = tx(0.01);
        assert!(o.validate().is_ok());
    }
}
