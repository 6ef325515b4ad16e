use std::fmt;

use thiserror::Error;

/// Pipeline stage in which a failure occurred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Validation,
    Orbit,
    Tangent,
    Shadow,
    Curvature,
    Oracle,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Stage::Validation => "validation",
            Stage::Orbit => "orbit",
            Stage::Tangent => "tangent sweep",
            Stage::Shadow => "shadowing solve",
            Stage::Curvature => "second-order sweep",
            Stage::Oracle => "finite-difference oracle",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{callback} returned a vector of length {got}, expected {expected}")]
    DimensionMismatch {
        callback: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value in {stage} at step {step}")]
    BlowUp { stage: Stage, step: usize },

    #[error(
        "degenerate tangent basis at segment {segment}: smallest R diagonal {min_diag:e}; \
         try fewer steps per segment"
    )]
    DegenerateBasis { segment: usize, min_diag: f64 },

    #[error("ill-conditioned {stage} at segment {segment}: {detail}")]
    Conditioning {
        stage: Stage,
        segment: usize,
        detail: String,
    },

    #[error("system failed derivative validation: {0}")]
    Validation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
