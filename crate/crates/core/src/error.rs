use thiserror::Error;

/// Errors produced by the relighting library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("albedo must lie in (0,1), got {albedo} on patch {patch}")]
    AlbedoOutOfRange { patch: usize, albedo: f64 },

    #[error("patch {patch} is degenerate (area {area})")]
    DegeneratePatch { patch: usize, area: f64 },

    #[error("non-finite value in {what}")]
    NonFinite { what: &'static str },

    #[error("luminaire {luminaire}: {reason}")]
    InvalidLuminaire { luminaire: usize, reason: String },

    #[error("affine map is singular or orientation-reversing (sigma_min {sigma_min}, det {det})")]
    SingularAffine { sigma_min: f64, det: f64 },

    #[error("patch index {index} out of range for a scene of {len} patches")]
    PatchIndex { index: usize, len: usize },

    #[error("visibility of a patch with itself is undefined (patch {0})")]
    SelfVisibility(usize),

    #[error("kernel entry K[{i}][{j}] = {value} exceeds the cap {cap}")]
    KernelCap {
        i: usize,
        j: usize,
        value: f64,
        cap: f64,
    },

    #[error("transport operator norm {norm} (row {row}) exceeds 1; discretization too coarse")]
    KernelNorm { row: usize, norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("scene has {patches} patches; dense solver cap is {cap}")]
    TooLarge { patches: usize, cap: usize },

    #[error("linear system is singular or ill-conditioned (condition estimate {condition:e})")]
    Singular { condition: f64 },

    #[error("emittance must be non-negative (entry {index} = {value})")]
    NegativeEmittance { index: usize, value: f64 },

    #[error("sup albedo p = {0} must be < 1")]
    Divergent(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semidefinite (eigenvalue {0:e})")]
    NotPsd(f64),

    #[error("generator matrix columns are not orthonormal (max deviation {0:e})")]
    NotOrthonormal(f64),

    #[error(
        "eigenvalue tie at rank {rank}: lambda_r - lambda_(r+1) = {gap:e}; perturb the input or reduce r"
    )]
    EigenTie { rank: usize, gap: f64 },

    #[error("eigenvalues must be sorted nonincreasing")]
    Unsorted,

    #[error("active-set solver did not converge within {0} iterations")]
    IterationCap(usize),

    #[error("optimality conditions violated by {0:e}")]
    Kkt(f64),

    #[error("field has non-positive mean {0}")]
    NonPositiveMean(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("insufficient points: {0}")]
    InsufficientPoints(String),

    #[error("BRDF returned non-positive value {0}")]
    NonPositiveBrdf(f64),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("{path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
