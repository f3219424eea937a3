use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Contract violations and runtime failures for the whole crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("matmul: inner dimensions disagree, [{m}, {k}] x [{k2}, {n}]")]
    MatmulDims { m: usize, k: usize, k2: usize, n: usize },
    #[error("{op}: requires a rank-2 tensor, got shape {shape:?}")]
    RankMismatch { op: &'static str, shape: Vec<usize> },
    #[error("invalid shape {shape:?}: every dimension must be positive")]
    InvalidShape { shape: Vec<usize> },
    #[error("shape {shape:?} holds {expected} values, got {got}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },
    #[error("axis {axis} out of range for rank-{rank} tensor")]
    InvalidAxis { axis: usize, rank: usize },
    #[error("step t={t} out of range 1..={steps}")]
    StepOutOfRange { t: usize, steps: usize },
    #[error("invalid noise schedule: {reason}")]
    InvalidSchedule { reason: String },
    #[error("ancestral step at t={t} draws noise and needs an rng")]
    MissingRng { t: usize },
    #[error("denoiser output has zero norm; score direction undefined")]
    DegenerateDirection,
    #[error("sampled guess frame count {frames} out of range 1..={rows}")]
    FrameCount { frames: usize, rows: usize },
    #[error("program must produce a scalar, got shape {shape:?}")]
    NonScalarOutput { shape: Vec<usize> },
    #[error("program takes {arity} inputs, got {got}")]
    ArityMismatch { arity: usize, got: usize },
    #[error("tangent shape {tangent:?} does not match input shape {input:?}")]
    TangentShape {
        tangent: Vec<usize>,
        input: Vec<usize>,
    },
    #[error("finite differences need h > 0, got {h}")]
    NonPositiveStep { h: f64 },
    #[error("training diverged at step {step}: loss is not finite")]
    TrainingDiverged { step: usize },
    #[error("checkpoint version {found:?} unsupported, expected {expected:?}")]
    CheckpointVersion { found: String, expected: &'static str },
    #[error("malformed checkpoint: {reason}")]
    MalformedCheckpoint { reason: String },
    #[error("invalid config: {reason}")]
    InvalidConfig { reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
