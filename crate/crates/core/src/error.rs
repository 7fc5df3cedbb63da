use std::fmt;

pub type Result<T> = std::result::Result<T, Error>;

/// Spatial axis of a grid, in storage order (`z` is vertical).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    Z,
    Y,
    X,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::Z, Axis::Y, Axis::X];

    /// Index into a `[z, y, x]` triple.
    pub fn index(self) -> usize {
        match self {
            Axis::Z => 0,
            Axis::Y => 1,
            Axis::X => 2,
        }
    }

    pub fn from_index(i: usize) -> Axis {
        Axis::ALL[i]
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Axis::Z => "z",
            Axis::Y => "y",
            Axis::X => "x",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid dimensions: {0}")]
    InvalidDims(String),

    #[error("axis {axis}: extent {extent} is smaller than window size {window}")]
    WindowTooLarge {
        axis: Axis,
        extent: usize,
        window: usize,
    },

    #[error("axis {axis}: extent {extent} must be even")]
    OddExtent { axis: Axis, extent: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("labels without a prompt entry: {0:?}")]
    MissingPrompt(Vec<u32>),

    #[error("query {query:?} outside grid bounds {bounds:?}")]
    OutOfBounds { query: [f64; 3], bounds: [usize; 3] },

    #[error("voxel {0:?} is not covered by any window")]
    Uncovered([usize; 3]),

    #[error("mask weights sum to zero at voxel {0:?}")]
    ZeroMaskSum([usize; 3]),

    #[error("position collision between target and adjacent frames at {0:?}")]
    PositionCollision([i64; 3]),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("stage-S produced no active voxels")]
    EmptyActiveSet,

    #[error("constraint mask is empty")]
    EmptyMask,

    #[error("no interior face pairs available for the seam baseline")]
    NoInteriorPairs,

    #[error("world extent {extent} along {axis} is not a multiple of tile size {tile}; pad by {padding}")]
    NotTileable {
        axis: Axis,
        extent: usize,
        tile: usize,
        padding: usize,
    },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
