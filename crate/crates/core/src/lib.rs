//! Joint estimation of a grasped object's pose and its extrinsic contacts
//! from tactile geometry and grasp wrenches, posed as a factor graph.

pub mod cloud;
pub mod diagnostics;
pub mod error;
pub mod factors;
pub mod graph;
pub mod icp;
pub mod inference;
pub mod lie;
pub mod mesh;
pub mod metrics;
pub mod scenario;
pub mod sim;
pub mod solver;

pub use cloud::{Frame, PointCloud};
pub use error::{Error, Result};
pub use icp::{icp_register, IcpParams, IcpResult};
pub use lie::{Pose, Twist};
pub use mesh::{obj::load_mesh, SdfResult, TriangleMesh};
pub use factors::{NoiseModel, TimestepObservation};
pub use graph::{Factor, FactorGraphState, Values, VariableKey};
pub use solver::{solve, SolveReport, SolverParams};
