//! Crate-wide error type.

use crate::data::Side;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // construction / generic
    #[error("invalid bounding box: {0}")]
    InvalidBox(String),
    #[error("invalid value: {0}")]
    InvalidValue(String),

    // annotation / detection parsing
    #[error("malformed document: {0}")]
    MalformedDocument(String),
    #[error("image '{image}' region {region}: missing or invalid field '{field}'")]
    MissingField {
        image: String,
        region: usize,
        field: &'static str,
    },
    #[error("malformed line {line}: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("duplicate frame id {0}")]
    DuplicateFrame(u64),
    #[error("empty dataset")]
    EmptyDataset,

    // detection evaluation
    #[error("prediction carries no confidence score")]
    UnscoredPrediction,
    #[error("no ground-truth boxes")]
    NoGroundTruth,
    #[error("empty class map")]
    EmptyClassMap,

    // tracking
    #[error("frame id {new} does not advance past previous frame id {prev}")]
    NonMonotonicFrame { prev: u64, new: u64 },

    // frame selection
    #[error("invalid frame range [{start}, {end}]")]
    InvalidRange { start: u64, end: u64 },
    #[error("plot '{plot_id}' has no metadata for side {side}")]
    MissingSide { plot_id: String, side: Side },

    // featurization
    #[error("detection carries no confidence score")]
    UnscoredDetection,
    #[error("malformed feature-grid header: {0}")]
    MalformedHeader(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value at element {0}")]
    NonFiniteValue(usize),

    // regression
    #[error("wrong view count: expected {expected}, got {got}")]
    WrongViewCount { expected: usize, got: usize },
    #[error("non-finite activation in {0}")]
    NonFiniteActivation(&'static str),
    #[error("forward cache is stale or missing")]
    StaleCache,
    #[error("empty sample set")]
    EmptySampleSet,
    #[error("training diverged at epoch {epoch} (loss {loss})")]
    DivergedTraining { epoch: usize, loss: f64 },
    #[error("checkpoint format version {got} unsupported (expected {expected})")]
    VersionMismatch { expected: u32, got: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    // ranking
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("zero variance in correlation input")]
    ZeroVariance,
    #[error("degenerate cutoff: selected set is empty")]
    DegenerateCutoff,
    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    // simulation
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
