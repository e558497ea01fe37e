//! Quasi-static single-contact simulator for an elastically grasped object.
//!
//! At each gripper pose the in-hand displacement `δ` is solved so that the
//! grasp compliance balances the wrench of one environment contact:
//! `δ = exp(C⁻¹ w)`, `w = J(g⁻¹ c) f`. The contact sits at the deepest object
//! point (mesh vertices and surface samples are the candidates) and pushes
//! along the environment normal.

use nalgebra::{Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};
use crate::factors::{contact_jacobian_wrench, TimestepObservation};
use crate::lie::{Pose, Twist};
use crate::mesh::TriangleMesh;

/// Diagonal grasp stiffness in the gripper frame. Infinite entries model a
/// rigid grasp.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ComplianceModel {
    /// N/m.
    pub translational: f64,
    /// N·m/rad.
    pub rotational: f64,
}

impl Default for ComplianceModel {
    fn default() -> Self {
        Self {
            translational: 2e3,
            rotational: 20.0,
        }
    }
}

impl ComplianceModel {
    pub fn rigid() -> Self {
        Self {
            translational: f64::INFINITY,
            rotational: f64::INFINITY,
        }
    }

    /// In-hand displacement produced by a grasp wrench `[f; τ]`.
    pub fn displacement(&self, wrench: &Vector6<f64>) -> Pose {
        let kt = self.translational;
        let kr = self.rotational;
        Pose::exp(&Twist::new(
            wrench[3] / kr,
            wrench[4] / kr,
            wrench[5] / kr,
            wrench[0] / kt,
            wrench[1] / kt,
            wrench[2] / kt,
        ))
    }

    fn validate(&self) -> Result<()> {
        if self.translational > 0.0 && self.rotational > 0.0 {
            Ok(())
        } else {
            Err(Error::InvalidInput("grasp stiffness must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum ContactModel {
    /// Zero-penetration limit: the contact force is whatever keeps the
    /// deepest point exactly on the environment surface.
    #[default]
    Rigid,
    /// Penalty force `k · depth` along the environment normal (N/m).
    Penalty { stiffness: f64 },
}

/// Observation noise (standard deviations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimNoise {
    /// Point clouds (m).
    pub cloud: f64,
    /// In-hand displacement rotation (rad).
    pub displacement_rot: f64,
    /// In-hand displacement translation (m).
    pub displacement_trans: f64,
    /// Wrench force rows (N).
    pub force: f64,
    /// Wrench torque rows (N·m).
    pub torque: f64,
}

impl Default for SimNoise {
    fn default() -> Self {
        Self {
            cloud: 5e-4,
            displacement_rot: 1e-3,
            displacement_trans: 1e-4,
            force: 0.1,
            torque: 0.01,
        }
    }
}

impl SimNoise {
    pub fn noiseless() -> Self {
        Self {
            cloud: 0.0,
            displacement_rot: 0.0,
            displacement_trans: 0.0,
            force: 0.0,
            torque: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimParams {
    pub compliance: ComplianceModel,
    pub contact: ContactModel,
    pub noise: SimNoise,
    /// Object surface samples used as contact candidates besides the vertices.
    pub candidate_samples: usize,
    pub max_iters: usize,
    /// Wrench convergence tolerance of the fixed-point iteration (N).
    pub wrench_tol: f64,
    /// Contacts with a smaller force are reported as no contact (N).
    pub contact_force_threshold: f64,
    /// Required clearance of the first timestep (m).
    pub initial_clearance: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            compliance: ComplianceModel::default(),
            contact: ContactModel::Rigid,
            noise: SimNoise::default(),
            candidate_samples: 2000,
            max_iters: 200,
            wrench_tol: 1e-6,
            contact_force_threshold: 0.05,
            initial_clearance: 1e-3,
        }
    }
}

/// Noise-free state of one simulated timestep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub displacement: Pose,
    pub wrench: Vector6<f64>,
    /// World contact point and world force, when touching.
    pub contact: Option<(Vector3<f64>, Vector3<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    pub observations: Vec<TimestepObservation>,
    pub states: Vec<SimState>,
    pub object_poses: Vec<Pose>,
}

/// Quasi-static contact resolver bound to one object/environment pair.
pub struct ContactSimulator<'a> {
    environment: &'a TriangleMesh,
    candidates: Vec<Vector3<f64>>,
    params: SimParams,
}

impl<'a> ContactSimulator<'a> {
    pub fn new(object: &TriangleMesh, environment: &'a TriangleMesh, params: SimParams) -> Result<Self> {
        params.compliance.validate()?;
        if let ContactModel::Penalty { stiffness } = params.contact {
            if !(stiffness > 0.0) {
                return Err(Error::InvalidInput("penalty stiffness must be positive".into()));
            }
        }
        let mut candidates = object.vertices().to_vec();
        candidates.extend(object.sample_surface(params.candidate_samples, 0x5eed).points);
        Ok(Self {
            environment,
            candidates,
            params,
        })
    }

    pub fn candidates(&self) -> &[Vector3<f64>] {
        &self.candidates
    }

    /// Deepest candidate `(index, signed distance)` for the object at `pose`.
    pub fn deepest(&self, pose: &Pose) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, p) in self.candidates.iter().enumerate() {
            let v = self.environment.signed_distance(&pose.act(p)).value;
            if v < best.1 {
                best = (i, v);
            }
        }
        best
    }

    /// Solves the in-hand displacement for gripper pose `gripper`.
    pub fn resolve(&self, gripper: &Pose, rest: &Pose) -> Result<SimState> {
        let (_, depth) = self.deepest(&gripper.compose(rest));
        if depth >= 0.0 {
            return Ok(SimState {
                displacement: Pose::identity(),
                wrench: Vector6::zeros(),
                contact: None,
            });
        }
        match self.params.contact {
            ContactModel::Rigid => self.resolve_rigid(gripper, rest),
            ContactModel::Penalty { stiffness } => self.resolve_penalty(gripper, rest, stiffness),
        }
    }

    /// Displacement consistent with force `lambda · normal` at candidate `idx`.
    fn equilibrium(&self, gripper: &Pose, rest: &Pose, idx: usize, lambda: f64, normal: &Vector3<f64>) -> (Pose, Vector6<f64>) {
        let local = rest.act(&self.candidates[idx]);
        let force = normal * lambda;
        let mut delta = Pose::identity();
        let mut wrench = Vector6::zeros();
        for _ in 0..100 {
            let c = gripper.act(&delta.act(&local));
            let w = contact_jacobian_wrench(&c, &force, gripper);
            let change = (w - wrench).amax();
            wrench = w;
            delta = self.params.compliance.displacement(&wrench);
            if change < 1e-14 * (1.0 + lambda) {
                break;
            }
        }
        (delta, wrench)
    }

    fn resolve_rigid(&self, gripper: &Pose, rest: &Pose) -> Result<SimState> {
        let mut delta = Pose::identity();
        let mut lambda_hint = 1.0;
        for _ in 0..self.params.max_iters.max(1) {
            let (idx, _) = self.deepest(&gripper.compose(&delta.compose(rest)));
            let world = |d: &Pose| gripper.act(&d.act(&rest.act(&self.candidates[idx])));
            let mut normal = self.environment.signed_distance(&world(&delta)).gradient;
            let mut lambda = 0.0;
            for _ in 0..20 {
                let phi = |l: f64| {
                    let (d, _) = self.equilibrium(gripper, rest, idx, l, &normal);
                    self.environment.signed_distance(&world(&d)).value
                };
                lambda = solve_increasing(phi, lambda_hint).ok_or(Error::NoConvergence {
                    iterations: self.params.max_iters,
                    residual: f64::NAN,
                })?;
                let (d, _) = self.equilibrium(gripper, rest, idx, lambda, &normal);
                let n2 = self.environment.signed_distance(&world(&d)).gradient;
                let moved = (n2 - normal).amax();
                normal = n2;
                delta = d;
                if moved < 1e-13 {
                    break;
                }
            }
            lambda_hint = lambda.max(1e-3);
            let (next, depth) = self.deepest(&gripper.compose(&delta.compose(rest)));
            if next == idx || depth >= -1e-12 {
                let (delta, wrench) = self.equilibrium(gripper, rest, idx, lambda, &normal);
                let c = world(&delta);
                return Ok(self.finish(delta, wrench, c, normal * lambda, gripper));
            }
        }
        Err(Error::NoConvergence {
            iterations: self.params.max_iters,
            residual: f64::NAN,
        })
    }

    fn resolve_penalty(&self, gripper: &Pose, rest: &Pose, stiffness: f64) -> Result<SimState> {
        let k = &self.params.compliance;
        let alpha = if k.translational.is_finite() {
            k.translational / (k.translational + stiffness)
        } else {
            1.0
        };
        let mut wrench = Vector6::zeros();
        let mut last = Vector6::zeros();
        for _ in 0..self.params.max_iters {
            let delta = k.displacement(&wrench);
            let pose = gripper.compose(&delta.compose(rest));
            let (idx, depth) = self.deepest(&pose);
            let (target, contact) = if depth < 0.0 {
                let c = pose.act(&self.candidates[idx]);
                let n = self.environment.signed_distance(&c).gradient;
                let f = n * (-depth * stiffness);
                (contact_jacobian_wrench(&c, &f, gripper), Some((c, f)))
            } else {
                (Vector6::zeros(), None)
            };
            let diff = target - wrench;
            if diff.norm() < self.params.wrench_tol {
                return Ok(match contact {
                    Some((c, f)) => self.finish(delta, target, c, f, gripper),
                    None => SimState {
                        displacement: delta,
                        wrench: target,
                        contact: None,
                    },
                });
            }
            last = diff;
            wrench += diff * alpha;
        }
        Err(Error::NoConvergence {
            iterations: self.params.max_iters,
            residual: last.norm(),
        })
    }

    fn finish(&self, delta: Pose, wrench: Vector6<f64>, c: Vector3<f64>, f: Vector3<f64>, gripper: &Pose) -> SimState {
        if f.norm() <= self.params.contact_force_threshold {
            return SimState {
                displacement: Pose::identity(),
                wrench: Vector6::zeros(),
                contact: None,
            };
        }
        // Report the wrench of the final contact exactly.
        let w = contact_jacobian_wrench(&c, &f, gripper);
        debug_assert!((w - wrench).amax() < 1e-6);
        SimState {
            displacement: delta,
            wrench: w,
            contact: Some((c, f)),
        }
    }
}

/// Root of a non-decreasing function with `phi(0) < 0`, by bracketing and
/// bisection on the secant.
fn solve_increasing(phi: impl Fn(f64) -> f64, hint: f64) -> Option<f64> {
    let mut lo = 0.0;
    let mut f_lo = phi(lo);
    if f_lo >= 0.0 {
        return Some(0.0);
    }
    let mut hi = hint.max(1e-3);
    let mut f_hi = phi(hi);
    let mut expand = 0;
    while f_hi < 0.0 {
        lo = hi;
        f_lo = f_hi;
        hi *= 2.0;
        f_hi = phi(hi);
        expand += 1;
        if expand > 60 || hi > 1e7 {
            return None;
        }
    }
    for it in 0..200 {
        // Illinois-style regula falsi with periodic bisection.
        let mut x = if it % 4 == 3 {
            0.5 * (lo + hi)
        } else {
            lo - f_lo * (hi - lo) / (f_hi - f_lo)
        };
        if !(x > lo && x < hi) {
            x = 0.5 * (lo + hi);
        }
        let fx = phi(x);
        if fx.abs() < 1e-14 || hi - lo < 1e-13 * (1.0 + hi) {
            return Some(x);
        }
        if fx < 0.0 {
            lo = x;
            f_lo = fx;
        } else {
            hi = x;
            f_hi = fx;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Runs the simulator along a gripper trajectory and draws noisy observations.
pub fn simulate(
    object: &TriangleMesh,
    environment: &TriangleMesh,
    rest: &Pose,
    trajectory: &[Pose],
    params: &SimParams,
    seed: u64,
) -> Result<Simulation> {
    if trajectory.is_empty() {
        return Err(Error::InvalidInput("trajectory is empty".into()));
    }
    let sim = ContactSimulator::new(object, environment, *params)?;
    let (_, clearance) = sim.deepest(&trajectory[0].compose(rest));
    if clearance <= params.initial_clearance {
        return Err(Error::InitialPenetration { depth: -clearance });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = &params.noise;
    let mut observations = Vec::with_capacity(trajectory.len());
    let mut states = Vec::with_capacity(trajectory.len());
    let mut object_poses = Vec::with_capacity(trajectory.len());
    for g in trajectory {
        let state = sim.resolve(g, rest)?;
        let dn = Twist::new(
            gaussian(&mut rng, noise.displacement_rot),
            gaussian(&mut rng, noise.displacement_rot),
            gaussian(&mut rng, noise.displacement_rot),
            gaussian(&mut rng, noise.displacement_trans),
            gaussian(&mut rng, noise.displacement_trans),
            gaussian(&mut rng, noise.displacement_trans),
        );
        let wn = Vector6::new(
            gaussian(&mut rng, noise.force),
            gaussian(&mut rng, noise.force),
            gaussian(&mut rng, noise.force),
            gaussian(&mut rng, noise.torque),
            gaussian(&mut rng, noise.torque),
            gaussian(&mut rng, noise.torque),
        );
        observations.push(TimestepObservation {
            gripper: *g,
            displacement: state.displacement.retract(&dn),
            wrench: state.wrench + wn,
            in_contact: state.contact.is_some(),
        });
        object_poses.push(g.compose(&state.displacement.compose(rest)));
        states.push(state);
    }
    Ok(Simulation {
        observations,
        states,
        object_poses,
    })
}

fn gaussian(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).expect("positive sigma").sample(rng)
    } else {
        0.0
    }
}

fn perturb(points: &mut [Vector3<f64>], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        for p in points {
            *p += Vector3::new(gaussian(rng, sigma), gaussian(rng, sigma), gaussian(rng, sigma));
        }
    }
}

/// Two rectangular tactile pads facing each other across the gripper y axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerPatch {
    /// Pad extent along gripper x (m).
    pub width: f64,
    /// Pad extent along gripper z (m).
    pub height: f64,
    /// Pad centre along gripper z (m).
    pub center_z: f64,
    /// Contact band depth measured from each pad plane (m).
    pub band: f64,
}

impl Default for FingerPatch {
    fn default() -> Self {
        Self {
            width: 0.024,
            height: 0.018,
            center_z: 0.0,
            band: 1.5e-3,
        }
    }
}

/// Tactile cloud in the gripper frame: of `n` object surface samples, those
/// touching either pad, perturbed by isotropic noise `sigma`.
pub fn render_tactile_cloud(
    object: &TriangleMesh,
    rest: &Pose,
    patch: &FingerPatch,
    n: usize,
    sigma: f64,
    seed: u64,
) -> Result<PointCloud> {
    let samples = object.sample_surface(n, seed).transformed(rest, Frame::Gripper);
    let in_window: Vec<_> = samples
        .points
        .into_iter()
        .filter(|p| p.x.abs() <= 0.5 * patch.width && (p.z - patch.center_z).abs() <= 0.5 * patch.height)
        .collect();
    if in_window.is_empty() {
        return Err(Error::EmptyPatch);
    }
    let y_max = in_window.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
    let y_min = in_window.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
    let mut points: Vec<_> = in_window
        .into_iter()
        .filter(|p| p.y >= y_max - patch.band || p.y <= y_min + patch.band)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7ac7);
    perturb(&mut points, sigma, &mut rng);
    Ok(PointCloud::new(points, Frame::Gripper))
}

/// Partial view from `viewpoint` (world): of `n` surface samples of the
/// object at `pose`, those whose outward normal faces the viewpoint.
pub fn render_visual_cloud(
    object: &TriangleMesh,
    pose: &Pose,
    viewpoint: &Vector3<f64>,
    n: usize,
    sigma: f64,
    seed: u64,
) -> PointCloud {
    let (points, faces) = object.sample_surface_with_faces(n, seed);
    let mut visible: Vec<_> = points
        .iter()
        .zip(faces)
        .filter_map(|(p, f)| {
            let x = pose.act(p);
            let normal = pose.rotate(&object.face_normals()[f]);
            (normal.dot(&(viewpoint - x)) > 0.0).then_some(x)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x715a);
    perturb(&mut visible, sigma, &mut rng);
    PointCloud::new(visible, Frame::World)
}

/// Candidate index minimizing `‖τ − C_l × f‖`; ties keep the lowest index.
pub fn ground_truth_contact_from_ft(force: &Vector3<f64>, torque: &Vector3<f64>, candidates: &[Vector3<f64>]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("no contact candidates".into()));
    }
    if !(force.norm() > 0.0) {
        return Err(Error::InvalidInput("force must be non-zero".into()));
    }
    // Residuals equal up to rounding count as ties.
    let tol = 1e-12 * (1.0 + torque.norm() + force.norm());
    let mut best = (0, f64::INFINITY);
    for (i, c) in candidates.iter().enumerate() {
        let e = (torque - c.cross(force)).norm();
        if e < best.1 - tol {
            best = (i, e);
        }
    }
    Ok(best.0)
}

/// Gripper poses for a contact-free approach followed by a set of pokes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PokeSpec {
    /// Rotation of the gripper about its grasp (y) axis (deg).
    pub tilt_deg: f64,
    /// Rotation of the gripper about its x axis (deg).
    pub roll_deg: f64,
    /// Press depth past first touch (m).
    pub depth: f64,
    /// World xy of the gripper during the poke (m).
    pub xy: Vector2<f64>,
}

impl Default for PokeSpec {
    fn default() -> Self {
        Self {
            tilt_deg: 0.0,
            roll_deg: 0.0,
            depth: 3e-3,
            xy: Vector2::zeros(),
        }
    }
}

/// Gripper orientation pointing down (gripper z = world −z), then tilted.
pub fn poke_orientation(tilt_deg: f64, roll_deg: f64) -> Pose {
    let down = Pose::from_axis_angle(&Vector3::x(), std::f64::consts::PI);
    down.compose(&Pose::from_axis_angle(&Vector3::y(), tilt_deg.to_radians()))
        .compose(&Pose::from_axis_angle(&Vector3::x(), roll_deg.to_radians()))
}

/// Builds `[approach, poke_1, …]`: the approach hovers `clearance` above
/// first touch, each poke presses `depth` past first touch.
pub fn poke_trajectory(
    object: &TriangleMesh,
    environment: &TriangleMesh,
    rest: &Pose,
    pokes: &[PokeSpec],
    clearance: f64,
) -> Result<Vec<Pose>> {
    let sim = ContactSimulator::new(
        object,
        environment,
        SimParams {
            candidate_samples: 0,
            ..Default::default()
        },
    )?;
    let touch = |orientation: Pose, xy: Vector2<f64>| -> Result<Pose> {
        let mut z = 0.5;
        for _ in 0..100 {
            let g = Pose::new(*orientation.rotation(), Vector3::new(xy.x, xy.y, z));
            let (_, d) = sim.deepest(&g.compose(rest));
            if d.abs() < 1e-13 {
                return Ok(g);
            }
            z -= d;
        }
        Err(Error::InvalidInput("could not find first-touch height".into()))
    };
    let mut out = Vec::with_capacity(pokes.len() + 1);
    let start = touch(poke_orientation(0.0, 0.0), pokes.first().map(|p| p.xy).unwrap_or_default())?;
    out.push(Pose::new(*start.rotation(), start.translation() + Vector3::new(0.0, 0.0, clearance)));
    for p in pokes {
        let g = touch(poke_orientation(p.tilt_deg, p.roll_deg), p.xy)?;
        out.push(Pose::new(*g.rotation(), g.translation() - Vector3::new(0.0, 0.0, p.depth)));
    }
    Ok(out)
}
