use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("invalid shape {shape:?} for {len} elements")]
    ElementCount { shape: Vec<usize>, len: usize },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("variable {0} does not belong to this tape")]
    DanglingVar(usize),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("invalid model spec: {0}")]
    InvalidSpec(String),

    #[error("{what} out of range: {value} (limit {limit})")]
    OutOfRange { what: &'static str, value: u128, limit: u128 },

    #[error("invalid architecture config: {0}")]
    InvalidConfig(String),

    #[error("missing surrogate: stage {stage}, site {site}, variant {variant}")]
    MissingSurrogate { stage: u8, site: usize, variant: String },

    #[error("distillation failed at sites {0:?}")]
    DistillFailed(Vec<String>),

    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },

    #[error("singular fit: {0}")]
    SingularFit(String),

    #[error("profile `{0}` is not calibrated for this request")]
    Uncalibrated(String),

    #[error("point {point:?} does not dominate reference {reference:?}")]
    NotDominatingRef { point: [f64; 2], reference: [f64; 2] },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("thread pool: {0}")]
    ThreadPool(String),
}
