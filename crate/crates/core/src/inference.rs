//! Multi-hypothesis estimation: seed rest-pose particles, solve each one
//! independently over the whole trajectory, keep the lowest-cost solution.

use std::sync::Arc;

use nalgebra::{UnitQuaternion, Vector3};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};
use crate::factors::{detect_contact, object_pose_at, NoiseModel, TimestepObservation};
use crate::graph::{FactorGraphState, Values};
use crate::icp::{icp_register, IcpParams};
use crate::lie::Pose;
use crate::mesh::TriangleMesh;
use crate::solver::{complete_values, extend_and_resolve, solve, SolveReport, SolverParams};

/// Costs closer than this are ties, resolved by the lower particle id.
pub const COST_TIE: f64 = 1e-12;

/// Where the object is expected to be held: the object axis that ends up
/// along the gripper's grasp axis, and the object point at the grasp centre.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspPrior {
    pub object_axis: Vector3<f64>,
    pub center: Vector3<f64>,
}

impl Default for GraspPrior {
    fn default() -> Self {
        Self {
            object_axis: Vector3::y(),
            center: Vector3::zeros(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub noise: NoiseModel,
    /// Contact threshold on the Mahalanobis norm of the wrench.
    pub contact_epsilon: f64,
    /// Re-derive contact flags from the measured wrench instead of trusting
    /// the recorded flags.
    pub detect_contact: bool,
    /// Number of particles `K`.
    pub particles: usize,
    /// Rotations about the grasp axis tried per canonical axis.
    pub sweep_angles: usize,
    /// Object axes tried along the grasp axis; empty means the grasp prior's.
    pub canonical_axes: Vec<Vector3<f64>>,
    /// Grasp (closing) axis in the gripper frame.
    pub grasp_axis: Vector3<f64>,
    /// Object surface samples used by the non-penetration factor.
    pub object_samples: usize,
    /// Cloud points used for particle ICP.
    pub icp_points: usize,
    pub seed: u64,
    pub icp: IcpParams,
    pub solver: SolverParams,
    /// Vertex tolerance (m) when testing whether two solutions differ by an
    /// object symmetry.
    pub symmetry_tol: f64,
    /// Largest total-cost excess of a symmetric twin preferred for its
    /// lower id.
    pub symmetry_cost_slack: f64,
    /// Same for ICP fitness (m).
    pub symmetry_fitness_slack: f64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            noise: NoiseModel::default(),
            contact_epsilon: 4.479,
            detect_contact: true,
            particles: 8,
            sweep_angles: 8,
            canonical_axes: Vec::new(),
            grasp_axis: Vector3::y(),
            object_samples: 300,
            icp_points: 300,
            seed: 0,
            icp: IcpParams::default(),
            solver: SolverParams::default(),
            symmetry_tol: 3e-3,
            symmetry_cost_slack: 1.0,
            symmetry_fitness_slack: 2e-5,
        }
    }
}

impl EstimatorConfig {
    pub fn validate(&self) -> Result<()> {
        self.noise.validate()?;
        self.solver.validate()?;
        if self.particles == 0 || self.sweep_angles == 0 || self.object_samples == 0 || self.icp_points == 0 {
            return Err(Error::InvalidInput(
                "particles, sweep_angles, object_samples and icp_points must be at least 1".into(),
            ));
        }
        if ![self.contact_epsilon, self.symmetry_tol, self.symmetry_cost_slack, self.symmetry_fitness_slack]
            .iter()
            .all(|x| *x >= 0.0)
        {
            return Err(Error::InvalidInput("contact_epsilon and symmetry settings must be non-negative".into()));
        }
        if !(self.grasp_axis.norm() > 0.0) || self.canonical_axes.iter().any(|a| !(a.norm() > 0.0)) {
            return Err(Error::InvalidInput("axes must be non-zero".into()));
        }
        Ok(())
    }
}

/// Everything the estimators consume.
#[derive(Debug, Clone)]
pub struct Problem {
    pub object: Arc<TriangleMesh>,
    pub environment: Arc<TriangleMesh>,
    /// Object cloud in the t = 0 gripper frame.
    pub cloud: PointCloud,
    pub observations: Vec<TimestepObservation>,
    pub grasp_prior: GraspPrior,
}

impl Problem {
    fn validate(&self) -> Result<()> {
        self.cloud.expect(Frame::Gripper, "observed cloud")?;
        if self.cloud.is_empty() {
            return Err(Error::InvalidInput("observed cloud is empty".into()));
        }
        if self.observations.is_empty() {
            return Err(Error::InvalidInput("no observations".into()));
        }
        Ok(())
    }

    /// Observations with contact flags as the estimator will use them.
    pub fn flagged_observations(&self, config: &EstimatorConfig) -> Vec<TimestepObservation> {
        self.observations
            .iter()
            .map(|o| TimestepObservation {
                in_contact: if config.detect_contact {
                    detect_contact(&o.wrench, &config.noise, config.contact_epsilon)
                } else {
                    o.in_contact
                },
                ..*o
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleSummary {
    pub id: usize,
    /// Total cost, absent when the particle's solve failed.
    pub cost: Option<f64>,
    /// `exp(-cost)`, zero for failed particles.
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub id: usize,
    pub initial_rest_pose: Pose,
    pub report: Option<SolveReport>,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactEstimate {
    pub point: Vector3<f64>,
    pub force: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub rest_pose: Pose,
    pub object_poses: Vec<Pose>,
    /// Present exactly at the timesteps flagged as in contact.
    pub contacts: Vec<Option<ContactEstimate>>,
    pub cost: f64,
    pub selected: usize,
    /// Per timestep, one entry per particle in id order.
    pub trace: Vec<Vec<ParticleSummary>>,
}

/// Rotation taking `object_axis` onto `grasp_axis`, followed by `angle`
/// about `grasp_axis`.
pub fn grasp_orientation(object_axis: &Vector3<f64>, grasp_axis: &Vector3<f64>, angle: f64) -> UnitQuaternion<f64> {
    let a = object_axis.normalize();
    let b = grasp_axis.normalize();
    let align = UnitQuaternion::rotation_between(&a, &b).unwrap_or_else(|| {
        // Antiparallel: half turn about any axis orthogonal to `a`.
        let helper = if a.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(a.cross(&helper)), std::f64::consts::PI)
    });
    UnitQuaternion::from_axis_angle(&nalgebra::Unit::new_normalize(b), angle) * align
}

/// A rest-pose particle with its ICP fitness.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub pose: Pose,
    pub fitness: f64,
}

/// Seeds orientations by sweeping about the grasp axis for each canonical
/// object axis, places each seed so the grasp centre lands on the cloud
/// centroid, refines with ICP and keeps the `k` best by fitness.
pub fn sample_initial_particles(
    cloud: &PointCloud,
    object: &TriangleMesh,
    prior: &GraspPrior,
    k: usize,
    config: &EstimatorConfig,
) -> Result<Vec<Particle>> {
    config.validate()?;
    if k == 0 {
        return Err(Error::InvalidInput("at least one particle is required".into()));
    }
    if cloud.is_empty() {
        return Err(Error::InvalidInput("cloud is empty".into()));
    }
    let axes = if config.canonical_axes.is_empty() {
        vec![prior.object_axis]
    } else {
        config.canonical_axes.clone()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let subset = if cloud.len() > config.icp_points {
        let mut idx = sample(&mut rng, cloud.len(), config.icp_points).into_vec();
        idx.sort_unstable();
        PointCloud::new(idx.into_iter().map(|i| cloud.points[i]).collect(), cloud.frame)
    } else {
        cloud.clone()
    };
    let centroid = cloud.centroid();
    let seeds: Vec<Pose> = axes
        .iter()
        .flat_map(|axis| {
            (0..config.sweep_angles).map(move |j| {
                let angle = std::f64::consts::TAU * j as f64 / config.sweep_angles as f64;
                let r = grasp_orientation(axis, &config.grasp_axis, angle);
                Pose::new(r, centroid - r * prior.center)
            })
        })
        .collect();
    let mut particles = seeds
        .par_iter()
        .map(|seed| {
            let fit = icp_register(&subset, object, seed.inverse(), &config.icp)?;
            Ok(Particle {
                pose: fit.pose.inverse(),
                fitness: fit.fitness,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if particles.len() > k {
        let mut order: Vec<usize> = (0..particles.len()).collect();
        order.sort_by(|&a, &b| particles[a].fitness.total_cmp(&particles[b].fitness).then(a.cmp(&b)));
        order.truncate(k);
        order.sort_unstable();
        particles = order.into_iter().map(|i| particles[i]).collect();
    }
    Ok(particles)
}

/// Whether `b = a · s` for a rigid symmetry `s` of the object, judged by
/// matching every transformed vertex to some vertex within `tol`. With
/// `nontrivial`, near-identity `s` (no vertex moving more than `tol`) does
/// not count.
pub fn symmetry_equivalent(a: &Pose, b: &Pose, object: &TriangleMesh, tol: f64, nontrivial: bool) -> bool {
    let s = a.inverse().compose(b);
    let verts = object.vertices();
    if nontrivial && verts.iter().all(|v| (s.act(v) - v).norm() <= tol) {
        return false;
    }
    verts.iter().all(|v| {
        let m = s.act(v);
        verts.iter().any(|w| (m - w).norm() <= tol)
    })
}

/// Lowest cost with ties (within [`COST_TIE`]) going to the lowest id. A
/// lower-id solution that is the same placement up to a non-trivial object
/// symmetry, with cost within `slack` of the best, is preferred: symmetric
/// twins cannot be told apart by the data, and the lowest id is the seed
/// nearest the nominal grasp.
pub fn select_particle(
    costs: &[Option<f64>],
    poses: &[Pose],
    object: &TriangleMesh,
    symmetry_tol: f64,
    slack: f64,
) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, c) in costs.iter().enumerate() {
        if let Some(c) = *c {
            if best.is_none_or(|(_, b)| c < b - COST_TIE) {
                best = Some((i, c));
            }
        }
    }
    let (bi, bc) = best?;
    (0..bi)
        .find(|&i| {
            costs[i].is_some_and(|c| c <= bc + slack)
                && symmetry_equivalent(&poses[bi], &poses[i], object, symmetry_tol, true)
        })
        .or(Some(bi))
}

fn weight(cost: Option<f64>) -> f64 {
    cost.map_or(0.0, |c| (-c).exp())
}

/// Solves one particle through every timestep; returns the final report and
/// the cost after each timestep.
fn run_particle(
    problem: &Problem,
    observations: &[TimestepObservation],
    samples: &PointCloud,
    init: Pose,
    config: &EstimatorConfig,
) -> Result<(SolveReport, Vec<f64>)> {
    let mut state = FactorGraphState::new(
        problem.object.clone(),
        problem.environment.clone(),
        problem.cloud.clone(),
        samples.clone(),
        config.noise,
    )?;
    state.push_observation(observations[0])?;
    let mut report = solve(&state, complete_values(&Values::new(init), &state), &config.solver)?;
    let mut costs = vec![report.cost];
    for obs in &observations[1..] {
        state.push_observation(*obs)?;
        report = extend_and_resolve(&report, &state, &config.solver)?;
        costs.push(report.cost);
    }
    Ok((report, costs))
}

/// Full pipeline: particle seeding followed by [`run_tacgraph_with_particles`].
pub fn run_tacgraph(problem: &Problem, config: &EstimatorConfig) -> Result<EstimationResult> {
    problem.validate()?;
    let particles = sample_initial_particles(&problem.cloud, &problem.object, &problem.grasp_prior, config.particles, config)?;
    let inits: Vec<Pose> = particles.iter().map(|p| p.pose).collect();
    run_tacgraph_with_particles(problem, &inits, config).map(|(r, _)| r)
}

/// Solves every particle independently and selects the lowest total cost.
pub fn run_tacgraph_with_particles(
    problem: &Problem,
    inits: &[Pose],
    config: &EstimatorConfig,
) -> Result<(EstimationResult, Vec<Hypothesis>)> {
    problem.validate()?;
    config.validate()?;
    if inits.is_empty() {
        return Err(Error::InvalidInput("at least one particle is required".into()));
    }
    let observations = problem.flagged_observations(config);
    let samples = problem.object.sample_surface(config.object_samples, config.seed ^ 0x0b1ec7);
    let outcomes: Vec<Result<(SolveReport, Vec<f64>)>> = inits
        .par_iter()
        .map(|init| run_particle(problem, &observations, &samples, *init, config))
        .collect();

    let steps = observations.len();
    let mut trace = vec![Vec::with_capacity(inits.len()); steps];
    let mut hypotheses = Vec::with_capacity(inits.len());
    let mut last_err = None;
    for (id, (init, outcome)) in inits.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok((report, costs)) => {
                for (t, c) in costs.iter().enumerate() {
                    trace[t].push(ParticleSummary { id, cost: Some(*c), weight: weight(Some(*c)) });
                }
                hypotheses.push(Hypothesis {
                    id,
                    initial_rest_pose: *init,
                    weight: weight(Some(report.cost)),
                    report: Some(report),
                });
            }
            Err(e) => {
                log::debug!("particle {id} failed: {e}");
                for row in trace.iter_mut() {
                    row.push(ParticleSummary { id, cost: None, weight: 0.0 });
                }
                hypotheses.push(Hypothesis {
                    id,
                    initial_rest_pose: *init,
                    report: None,
                    weight: 0.0,
                });
                last_err = Some(e);
            }
        }
    }
    let costs: Vec<Option<f64>> = hypotheses.iter().map(|h| h.report.as_ref().map(|r| r.cost)).collect();
    let poses: Vec<Pose> = hypotheses
        .iter()
        .map(|h| h.report.as_ref().map_or(h.initial_rest_pose, |r| r.values.rest_pose))
        .collect();
    let Some(selected) = select_particle(&costs, &poses, &problem.object, config.symmetry_tol, config.symmetry_cost_slack) else {
        let e = last_err.unwrap_or(Error::InvalidInput("no particles".into()));
        return Err(Error::AllParticlesFailed(Box::new(e)));
    };
    let report = hypotheses[selected].report.as_ref().expect("selected particle solved");
    let rest = report.values.rest_pose;
    let contacts = observations
        .iter()
        .enumerate()
        .map(|(t, o)| {
            o.in_contact.then(|| {
                let (point, force) = report.values.contact(t).expect("contact variable for flagged timestep");
                ContactEstimate { point, force }
            })
        })
        .collect();
    let result = EstimationResult {
        rest_pose: rest,
        object_poses: observations.iter().map(|o| object_pose_at(&rest, o)).collect(),
        contacts,
        cost: report.cost,
        selected,
        trace,
    };
    Ok((result, hypotheses))
}

/// Shape-matching baseline: the best-fitting ICP particle is the pose; the
/// object sample closest to the environment is the contact, carrying the
/// measured force.
pub fn run_icp_baseline(problem: &Problem, config: &EstimatorConfig) -> Result<EstimationResult> {
    problem.validate()?;
    let particles = sample_initial_particles(&problem.cloud, &problem.object, &problem.grasp_prior, config.particles, config)?;
    let fitness: Vec<Option<f64>> = particles.iter().map(|p| Some(p.fitness)).collect();
    let poses: Vec<Pose> = particles.iter().map(|p| p.pose).collect();
    let selected = select_particle(&fitness, &poses, &problem.object, config.symmetry_tol, config.symmetry_fitness_slack).expect("non-empty particle set");
    let rest = poses[selected];
    let observations = problem.flagged_observations(config);
    let samples = problem.object.sample_surface(config.object_samples, config.seed ^ 0x0b1ec7);
    let object_poses: Vec<Pose> = observations.iter().map(|o| object_pose_at(&rest, o)).collect();
    let contacts = observations
        .iter()
        .zip(&object_poses)
        .map(|(o, pose)| {
            o.in_contact.then(|| {
                let mut best = (f64::INFINITY, Vector3::zeros());
                for p in &samples.points {
                    let x = pose.act(p);
                    let d = problem.environment.signed_distance(&x).value;
                    if d < best.0 {
                        best = (d, x);
                    }
                }
                ContactEstimate {
                    point: best.1,
                    force: o.gripper.rotate(&o.force()),
                }
            })
        })
        .collect();
    let row: Vec<ParticleSummary> = particles
        .iter()
        .enumerate()
        .map(|(id, p)| ParticleSummary { id, cost: Some(p.fitness), weight: weight(Some(p.fitness)) })
        .collect();
    Ok(EstimationResult {
        rest_pose: rest,
        object_poses,
        contacts,
        cost: particles[selected].fitness,
        selected,
        trace: vec![row; observations.len()],
    })
}
