//! Generator configuration, the scenario document, and scenario generation.
//!
//! Both documents carry `"schema": 1`. Scenario files reference meshes by
//! paths relative to the scenario file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::{Frame, PointCloud};
use crate::error::{Error, Result};
use crate::factors::TimestepObservation;
use crate::inference::{grasp_orientation, EstimatorConfig, GraspPrior, Problem};
use crate::lie::Pose;
use crate::mesh::obj::load_mesh;
use crate::mesh::{shapes, TriangleMesh};
use crate::sim::{poke_trajectory, render_tactile_cloud, render_visual_cloud, simulate, FingerPatch, PokeSpec, SimParams};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ShapeSpec {
    Box { size: Vector3<f64> },
    Cylinder { radius: f64, height: f64, segments: usize },
    LShape { long: f64, short: f64, width: f64, thickness: f64 },
    Wrench,
    /// Wavefront OBJ file, relative to the config file.
    Obj { path: PathBuf },
}

impl ShapeSpec {
    pub fn build(&self, base_dir: &Path) -> Result<TriangleMesh> {
        let positive = |xs: &[f64]| xs.iter().all(|x| x.is_finite() && *x > 0.0);
        let bad = |what: &str| Error::InvalidInput(format!("{what} dimensions must be positive"));
        match self {
            ShapeSpec::Box { size } if positive(size.as_slice()) => Ok(shapes::box_mesh(*size)),
            ShapeSpec::Box { .. } => Err(bad("box")),
            ShapeSpec::Cylinder { radius, height, segments } if positive(&[*radius, *height]) && *segments >= 3 => {
                Ok(shapes::cylinder(*radius, *height, *segments))
            }
            ShapeSpec::Cylinder { .. } => Err(bad("cylinder")),
            ShapeSpec::LShape { long, short, width, thickness }
                if positive(&[*long, *short, *width, *thickness]) && width < long && width < short =>
            {
                Ok(shapes::l_shape(*long, *short, *width, *thickness))
            }
            ShapeSpec::LShape { .. } => Err(bad("l_shape")),
            ShapeSpec::Wrench => Ok(shapes::wrench_like()),
            ShapeSpec::Obj { path } => load_mesh(base_dir.join(path)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectSpec {
    pub name: String,
    pub shape: ShapeSpec,
    #[serde(default)]
    pub grasp: GraspPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableSpec {
    pub size: Vector3<f64>,
    /// Height of the table top (m).
    pub top: f64,
}

impl Default for TableSpec {
    fn default() -> Self {
        Self {
            size: Vector3::new(0.4, 0.4, 0.05),
            top: 0.0,
        }
    }
}

/// How the true grasp deviates from the nominal one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraspRandomization {
    /// Rotation about the grasp axis drawn uniformly from ±this (deg).
    pub yaw_jitter_deg: f64,
    /// Draw the rotation from the estimator's sweep angles instead.
    pub yaw_on_sweep: bool,
    /// In-plane offset of the grasp centre, uniform in ±this per axis (m).
    pub offset: f64,
}

impl Default for GraspRandomization {
    fn default() -> Self {
        Self {
            yaw_jitter_deg: 10.0,
            yaw_on_sweep: false,
            offset: 3e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TactileSpec {
    pub patch: FingerPatch,
    /// Object surface samples drawn before cropping to the pads.
    pub samples: usize,
}

impl Default for TactileSpec {
    fn default() -> Self {
        Self {
            patch: FingerPatch::default(),
            samples: 3000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisualSpec {
    /// Camera position in the world (m).
    pub viewpoint: Vector3<f64>,
    /// Object surface samples drawn before visibility culling.
    pub samples: usize,
}

impl Default for VisualSpec {
    fn default() -> Self {
        Self {
            viewpoint: Vector3::new(0.3, -0.3, 0.35),
            samples: 1500,
        }
    }
}

pub fn default_pokes() -> Vec<PokeSpec> {
    [(0.0, 10.0), (30.0, -10.0), (-30.0, 10.0)]
        .into_iter()
        .map(|(tilt_deg, roll_deg)| PokeSpec {
            tilt_deg,
            roll_deg,
            ..Default::default()
        })
        .collect()
}

fn default_objects() -> Vec<ObjectSpec> {
    vec![
        ObjectSpec {
            name: "cube".into(),
            shape: ShapeSpec::Box { size: Vector3::repeat(0.04) },
            grasp: GraspPrior::default(),
        },
        ObjectSpec {
            name: "cylinder".into(),
            shape: ShapeSpec::Cylinder { radius: 0.02, height: 0.06, segments: 48 },
            grasp: GraspPrior { object_axis: Vector3::x(), center: Vector3::zeros() },
        },
        ObjectSpec {
            name: "l_shape".into(),
            shape: ShapeSpec::LShape { long: 0.06, short: 0.04, width: 0.02, thickness: 0.02 },
            grasp: GraspPrior { object_axis: Vector3::z(), center: Vector3::zeros() },
        },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub schema: u32,
    pub seed: u64,
    pub scenarios_per_object: usize,
    pub objects: Vec<ObjectSpec>,
    pub environment: TableSpec,
    pub grasp: GraspRandomization,
    pub pokes: Vec<PokeSpec>,
    /// Height above first touch of the contact-free first timestep (m).
    pub approach_clearance: f64,
    pub sim: SimParams,
    pub tactile: TactileSpec,
    pub visual: VisualSpec,
    pub estimator: EstimatorConfig,
    /// Attempts per scenario before giving up on unresolvable contacts.
    pub max_attempts: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            schema: SCHEMA_VERSION,
            seed: 0,
            scenarios_per_object: 20,
            objects: default_objects(),
            environment: TableSpec::default(),
            grasp: GraspRandomization::default(),
            pokes: default_pokes(),
            approach_clearance: 0.02,
            sim: SimParams::default(),
            tactile: TactileSpec::default(),
            visual: VisualSpec::default(),
            estimator: EstimatorConfig::default(),
            max_attempts: 10,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        if self.objects.is_empty() {
            return Err(Error::InvalidInput("no objects configured".into()));
        }
        let mut names: Vec<_> = self.objects.iter().map(|o| o.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) || names.iter().any(|n| !valid_name(n)) {
            return Err(Error::InvalidInput(
                "object names must be unique and use only [A-Za-z0-9_-]".into(),
            ));
        }
        if self.approach_clearance <= self.sim.initial_clearance {
            return Err(Error::InvalidInput("approach_clearance must exceed sim.initial_clearance".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::InvalidInput("max_attempts must be at least 1".into()));
        }
        self.estimator.validate()
    }

    /// Config with every noise source off.
    pub fn noiseless(mut self) -> Self {
        self.sim.noise = crate::sim::SimNoise::noiseless();
        self
    }
}

fn valid_name(n: &str) -> bool {
    !n.is_empty() && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContactTruth {
    pub point: Vector3<f64>,
    pub force: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub rest_pose: Pose,
    pub object_poses: Vec<Pose>,
    pub contacts: Vec<Option<ContactTruth>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub id: String,
    pub object: String,
    pub seed: u64,
    pub object_mesh: PathBuf,
    pub environment_mesh: PathBuf,
    pub grasp_prior: GraspPrior,
    pub trajectory: Vec<Pose>,
    pub observations: Vec<TimestepObservation>,
    /// Tactile cloud in the t = 0 gripper frame.
    pub tactile_cloud: PointCloud,
    /// Camera cloud in the world frame at t = 0.
    pub visual_cloud: PointCloud,
    pub noise: crate::sim::SimNoise,
    pub estimator: EstimatorConfig,
    pub ground_truth: Option<GroundTruth>,
}

/// Which clouds the estimator sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CloudMode {
    #[serde(rename = "tactile")]
    Tactile,
    #[serde(rename = "vision+tactile")]
    VisionTactile,
}

impl CloudMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            CloudMode::Tactile => "tactile",
            CloudMode::VisionTactile => "vision+tactile",
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::InvalidInput(format!("unsupported schema {} (expected {SCHEMA_VERSION})", self.schema)));
        }
        if self.observations.is_empty() || self.observations.len() != self.trajectory.len() {
            return Err(Error::InvalidInput("observation count must equal trajectory length".into()));
        }
        if self.observations.iter().zip(&self.trajectory).any(|(o, g)| o.gripper != *g) {
            return Err(Error::InvalidInput("observation gripper poses disagree with the trajectory".into()));
        }
        for o in &self.observations {
            o.validate()?;
        }
        self.tactile_cloud.expect(Frame::Gripper, "tactile_cloud")?;
        self.visual_cloud.expect(Frame::World, "visual_cloud")?;
        if let Some(gt) = &self.ground_truth {
            if gt.object_poses.len() != self.observations.len() || gt.contacts.len() != self.observations.len() {
                return Err(Error::InvalidInput("ground truth length must equal trajectory length".into()));
            }
        }
        self.estimator.validate()
    }

    /// Estimator input cloud for `mode`, in the t = 0 gripper frame.
    pub fn cloud(&self, mode: CloudMode) -> PointCloud {
        let mut points = self.tactile_cloud.points.clone();
        if mode == CloudMode::VisionTactile {
            let to_gripper = self.trajectory[0].inverse();
            points.extend(self.visual_cloud.points.iter().map(|p| to_gripper.act(p)));
        }
        PointCloud::new(points, Frame::Gripper)
    }

    pub fn load_meshes(&self, base_dir: &Path) -> Result<(Arc<TriangleMesh>, Arc<TriangleMesh>)> {
        Ok((
            Arc::new(load_mesh(base_dir.join(&self.object_mesh))?),
            Arc::new(load_mesh(base_dir.join(&self.environment_mesh))?),
        ))
    }

    pub fn problem(&self, object: Arc<TriangleMesh>, environment: Arc<TriangleMesh>, mode: CloudMode) -> Problem {
        Problem {
            object,
            environment,
            cloud: self.cloud(mode),
            observations: self.observations.clone(),
            grasp_prior: self.grasp_prior,
        }
    }
}

pub fn read_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let s: Scenario = serde_json::from_str(&text)?;
    s.validate()?;
    Ok(s)
}

/// Per-scenario seed: stream `stream` of the config seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.random()
}

/// Generates scenario `index` of object `object_index`. Mesh paths are
/// recorded as given; the caller decides where the meshes live.
pub fn generate_scenario(
    config: &GenConfig,
    object_index: usize,
    index: usize,
    object: &TriangleMesh,
    environment: &TriangleMesh,
    object_mesh: PathBuf,
    environment_mesh: PathBuf,
) -> Result<Scenario> {
    let spec = &config.objects[object_index];
    let base = derive_seed(config.seed, ((object_index as u64) << 32) | index as u64);
    let mut last = None;
    for attempt in 0..config.max_attempts {
        let seed = derive_seed(base, attempt as u64);
        match generate_attempt(config, spec, object, environment, seed) {
            Ok((rest, trajectory, sim, tactile, visual)) => {
                let ground_truth = GroundTruth {
                    rest_pose: rest,
                    object_poses: sim.object_poses.clone(),
                    contacts: sim
                        .states
                        .iter()
                        .map(|s| s.contact.map(|(point, force)| ContactTruth { point, force }))
                        .collect(),
                };
                let estimator = EstimatorConfig {
                    seed: derive_seed(seed, 1 << 40),
                    ..config.estimator.clone()
                };
                return Ok(Scenario {
                    schema: SCHEMA_VERSION,
                    id: format!("{}-{:03}", spec.name, index),
                    object: spec.name.clone(),
                    seed,
                    object_mesh,
                    environment_mesh,
                    grasp_prior: spec.grasp,
                    trajectory,
                    observations: sim.observations,
                    tactile_cloud: tactile,
                    visual_cloud: visual,
                    noise: config.sim.noise,
                    estimator,
                    ground_truth: Some(ground_truth),
                });
            }
            Err(e @ (Error::NoConvergence { .. } | Error::EmptyPatch | Error::InitialPenetration { .. })) => {
                log::debug!("{} #{index} attempt {attempt} rejected: {e}", spec.name);
                last = Some(e);
            }
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

type Attempt = (Pose, Vec<Pose>, crate::sim::Simulation, PointCloud, PointCloud);

fn generate_attempt(
    config: &GenConfig,
    spec: &ObjectSpec,
    object: &TriangleMesh,
    environment: &TriangleMesh,
    seed: u64,
) -> Result<Attempt> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = &config.grasp;
    let yaw = if g.yaw_on_sweep {
        let n = config.estimator.sweep_angles;
        std::f64::consts::TAU * rng.random_range(0..n) as f64 / n as f64
    } else {
        g.yaw_jitter_deg.to_radians() * rng.random_range(-1.0..=1.0)
    };
    let offset = Vector3::new(g.offset * rng.random_range(-1.0..=1.0), 0.0, g.offset * rng.random_range(-1.0..=1.0));
    let r = grasp_orientation(&spec.grasp.object_axis, &config.estimator.grasp_axis, yaw);
    let rest = Pose::new(r, offset - r * spec.grasp.center);

    let noise = config.sim.noise;
    let tactile = render_tactile_cloud(object, &rest, &config.tactile.patch, config.tactile.samples, noise.cloud, rng.random())?;
    let trajectory = poke_trajectory(object, environment, &rest, &config.pokes, config.approach_clearance)?;
    let sim = simulate(object, environment, &rest, &trajectory, &config.sim, rng.random())?;
    let visual = render_visual_cloud(
        object,
        &sim.object_poses[0],
        &config.visual.viewpoint,
        config.visual.samples,
        noise.cloud,
        rng.random(),
    );
    Ok((rest, trajectory, sim, tactile, visual))
}

/// Meshes for every configured object plus the table.
pub fn build_meshes(config: &GenConfig, base_dir: &Path) -> Result<(Vec<TriangleMesh>, TriangleMesh)> {
    let objects = config
        .objects
        .iter()
        .map(|o| o.shape.build(base_dir))
        .collect::<Result<Vec<_>>>()?;
    let env = shapes::table(config.environment.size, config.environment.top);
    Ok((objects, env))
}
