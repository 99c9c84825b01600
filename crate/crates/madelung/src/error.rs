use thiserror::Error;

/// Errors shared across the crate.
#[derive(Debug, Error)]
pub enum MadelungError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("grid too large: {points} points exceeds the 2^26 budget")]
    GridTooLarge { points: usize },
    #[error("region contains no member points")]
    EmptyRegion,
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("initial state is not normalizable (norm = {norm:e})")]
    NonNormalizable { norm: f64 },
    #[error("linear solver failed to converge after {iterations} iterations (residual {residual:e})")]
    SolverDivergence { iterations: usize, residual: f64 },
    #[error("state vanishes everywhere above the density floor")]
    VanishingState,
    #[error("support is not simply connected: recorded circulation {circulation}")]
    NonSimplyConnectedSupport { circulation: f64 },
    #[error("support has {components} connected components; reconstruct per component")]
    DisconnectedSupport { components: usize },
    #[error("need at least {needed} consecutive snapshots, got {got}")]
    InsufficientSnapshots { needed: usize, got: usize },
    #[error("supports overlap in {points} points")]
    OverlappingSupports { points: usize },
    #[error("operator expectation is only defined on the full domain")]
    RegionNotSupported,
    #[error("eigensolver failure: {0}")]
    EigenSolveFailure(String),
    #[error("density below floor on requested points")]
    VanishingDensity,
    #[error("total probability would exceed 1 (mass = {mass})")]
    ProbabilityOverflow { mass: f64 },
    #[error("smallest radius {radius} is below twice the grid spacing {spacing}")]
    RadiusBelowGrid { radius: f64, spacing: f64 },
    #[error("loop sample leaves the grid at ({x}, {y}, {z})")]
    LoopLeavesGrid { x: f64, y: f64, z: f64 },
    #[error("grid forces evaluation within {r_min} of the z-axis")]
    AxisTooClose { r_min: f64 },
    #[error("advected region boundary degenerated: {0}")]
    BoundaryDegenerate(String),
    #[error("field contains non-finite values after {0}")]
    NonFinite(&'static str),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad field file: {0}")]
    BadFieldFile(String),
}

pub type Result<T> = std::result::Result<T, MadelungError>;
