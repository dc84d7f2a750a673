use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library reports. The CLI maps these onto exit codes
/// with [`Error::exit_code`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed file {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimMismatch { expected: String, actual: String },

    #[error("point ({:.4}, {:.4}, {:.4}) lies outside the grid", .0[0], .0[1], .0[2])]
    OutOfDomain([f64; 3]),

    #[error("mask has no {0} voxels")]
    DegenerateMask(&'static str),

    #[error("{} node ray(s) miss the zero level set; first failing node ({}, {})", .nodes.len(), .nodes[0].0, .nodes[0].1)]
    RayMiss { nodes: Vec<(usize, usize)> },

    #[error("non-positive camera depth {0:.6} in perspective projection")]
    BehindCamera(f64),

    #[error("deformed surface self-occludes under the camera at {} node(s)", .nodes.len())]
    SelfOcclusion { nodes: Vec<(usize, usize)> },

    #[error("non-finite energy at level {level}, iteration {iteration}")]
    NonFiniteEnergy { level: usize, iteration: usize },

    #[error("step size underflow at level {level}, iteration {iteration} (step {step:e})")]
    Stall {
        level: usize,
        iteration: usize,
        step: f64,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn dims(expected: impl std::fmt::Debug, actual: impl std::fmt::Debug) -> Self {
        Error::DimMismatch {
            expected: format!("{expected:?}"),
            actual: format!("{actual:?}"),
        }
    }

    /// 2 for I/O failures, 3 for validation failures, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } => 2,
            Error::NonFiniteEnergy { .. } | Error::Stall { .. } => 4,
            _ => 3,
        }
    }
}
