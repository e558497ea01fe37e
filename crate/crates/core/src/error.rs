use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("mesh is not watertight: edge ({0}, {1}) is used by {2} face(s) with matching winding")]
    NonWatertight(u32, u32, usize),

    #[error("mesh has no non-degenerate faces left after cleanup")]
    DegenerateFace,

    #[error("face {face} references vertex {index} but the mesh has {count} vertices")]
    IndexOutOfRange { face: usize, index: usize, count: usize },

    #[error("log map undefined near a half-turn (angle {angle:.9} rad)")]
    LogNearPi { angle: f64 },

    #[error("contact timestep {0} is missing its contact point or force variable")]
    MissingVariable(usize),

    #[error("normal equations stayed singular up to damping {lambda:e}")]
    SingularSystem { lambda: f64 },

    #[error("every particle failed: {0}")]
    AllParticlesFailed(Box<Error>),

    #[error("contact resolution did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("object starts in penetration with the environment (depth {depth:e} m)")]
    InitialPenetration { depth: f64 },

    #[error("no object surface samples fall inside the finger patches")]
    EmptyPatch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag for error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::NonWatertight(..) => "non_watertight",
            Error::DegenerateFace => "degenerate_face",
            Error::IndexOutOfRange { .. } => "index_out_of_range",
            Error::LogNearPi { .. } => "log_near_pi",
            Error::MissingVariable(_) => "missing_variable",
            Error::SingularSystem { .. } => "singular_system",
            Error::AllParticlesFailed(_) => "all_particles_failed",
            Error::NoConvergence { .. } => "no_convergence",
            Error::InitialPenetration { .. } => "initial_penetration",
            Error::EmptyPatch => "empty_patch",
            Error::InvalidInput(_) => "invalid_input",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
