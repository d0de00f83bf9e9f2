use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sigma table: {0}")]
    SigmaTable(String),

    #[error("frequency table line {line}: {reason}")]
    FrequencyTable { line: usize, reason: String },

    #[error("class `{name}` has {positives} positives out of {total}; need 0 < N_i < N")]
    DegenerateClass {
        name: String,
        positives: u64,
        total: u64,
    },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("incomplete skeleton: keypoint `{0}` is not labeled")]
    IncompleteSkeleton(&'static str),

    #[error("bounding box has non-positive extent ({w} x {h})")]
    DegenerateBox { w: f64, h: f64 },

    #[error("no labeled ground-truth keypoints")]
    NoLabeledKeypoints,

    #[error("empty evaluation set")]
    EmptyEvaluation,

    #[error("threshold {0} outside (0, 1)")]
    InvalidThreshold(f64),

    #[error("heatmap: {0}")]
    Heatmap(String),

    #[error("duplicate id `{0}`")]
    DuplicateId(String),

    #[error("descriptor dimension {actual} does not match index dimension {expected}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("k must be at least 1")]
    ZeroK,

    #[error("index file corrupt at byte {offset}: {reason}")]
    CorruptIndex { offset: u64, reason: String },

    #[error("annotation document invalid at line {line}, column {column}: {message}")]
    Document {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("mask: {0}")]
    Mask(String),

    #[error("split ratios: {0}")]
    SplitRatios(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
