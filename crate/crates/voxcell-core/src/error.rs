use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("voxel file size mismatch: expected {expected} bytes for dims {dims:?} ({dtype}), found {actual}")]
    SizeMismatch {
        expected: u64,
        actual: u64,
        dims: [usize; 3],
        dtype: String,
    },

    #[error("invalid voxel descriptor: {0}")]
    BadDescriptor(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("voxel count {requested} exceeds the configured limit {limit}")]
    VoxelLimit { requested: u128, limit: u128 },

    #[error("mesh/grid mismatch: {0}")]
    MeshMismatch(String),

    #[error("point {point:?} lies outside the voxel domain")]
    OutsideDomain { point: [f64; 3] },

    #[error("basis evaluated outside [-1, 1]: xi = {0}")]
    BasisDomain(f64),

    #[error("solver diverged (non-finite residual) at iteration {iteration}")]
    SolverDiverged { iteration: usize },

    #[error("solver did not reach tolerance {tolerance} in {iterations} iterations (residual {residual})")]
    SolverStalled {
        iterations: usize,
        residual: f64,
        tolerance: f64,
    },

    #[error("matrix is rank deficient (rank {rank} of {dim})")]
    RankDeficient { rank: usize, dim: usize },

    #[error("load case {case} failed: {source}")]
    LoadCase {
        case: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("measured gage strain is zero; cannot form an effective modulus")]
    ZeroGageStrain,

    #[error("effective tensor is singular and cannot be inverted")]
    SingularTensor,

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
