//! Error type shared by all meshing stages.

use crate::geo::Point2;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Query point outside the terrain parametric domain. Carries the closest
    /// point of the domain boundary.
    #[error("point ({:.6}, {:.6}) outside the terrain domain; closest boundary point ({:.6}, {:.6})", .query.x, .query.y, .closest.x, .closest.y)]
    OutOfDomain { query: Point2, closest: Point2 },

    /// Least-squares fit could not be solved (rank-deficient after exhausting
    /// all adjacency layers).
    #[error("degenerate polynomial fit at ({:.6}, {:.6}): {reason}", .center.x, .center.y)]
    DegenerateFit { center: Point2, reason: String },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("terrain input rejected: {0}")]
    TerrainInput(String),

    #[error("meshing failed: {0}")]
    Meshing(String),

    /// Adaptive loop exceeded its cycle cap; indicates an inconsistency
    /// between the metric fields and the minimum-size guard.
    #[error("refinement did not terminate after {cycles} cycles ({nodes} nodes, {flagged} still flagged)")]
    CycleCapExceeded {
        cycles: usize,
        nodes: usize,
        flagged: usize,
    },

    /// Sweeping produced an inverted prism that local optimization could not
    /// recover.
    #[error("sweep aborted at layer {layer}: prism {element} inverted after patch optimization")]
    SweepAbort { layer: usize, element: usize },

    #[error("mesh is not conformal: {0}")]
    Conformity(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("empty mesh: {0}")]
    EmptyMesh(&'static str),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<String>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }
}
