//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

use crate::event::Polarity;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// An event field does not fit its bit width in the 40-bit format.
    #[error("event field `{field}` value {value} exceeds its {bits}-bit width")]
    FieldOverflow {
        field: &'static str,
        value: u64,
        bits: u32,
    },

    /// A binary event stream whose length is not a whole number of 5-byte words.
    #[error("event stream length {len} is not a multiple of 5 bytes")]
    TruncatedStream { len: usize },

    /// An I/O failure, annotated with the path that produced it.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A bad row or header in a text format (event CSV, curve CSV, predictions).
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },

    /// Nearest-neighbor query against an index with no points.
    #[error("nearest-neighbor query on an empty index")]
    EmptyIndex,

    /// A PLY header that cannot be interpreted.
    #[error("malformed PLY header: {0}")]
    MalformedPly(String),

    /// A PLY vertex coordinate that is not an integer value.
    #[error("PLY vertex at line {line}: coordinate `{value}` is not an integer")]
    NonIntegerCoordinate { line: usize, value: String },

    /// A metric that needs more points than the input provides.
    #[error("operation needs at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },

    /// NEG-POS ratio requested for a sequence without POS events.
    #[error("NEG-POS ratio undefined: sequence has no POS events")]
    UndefinedRatio,

    /// Aggregation over an empty collection.
    #[error("cannot aggregate an empty collection")]
    EmptyInput,

    /// Probability-based duplicate resolution without occupancy scores.
    #[error("probability duplicate resolution requires occupancy scores on the {polarity} cloud")]
    MissingScores { polarity: Polarity },

    /// Duplicate resolution with no non-duplicate points to vote.
    #[error("cannot resolve duplicates: every merged point is a different-polarity duplicate")]
    NoResolutionCandidates,

    /// Octree encoding of an empty cloud.
    #[error("cannot encode an empty point cloud")]
    EmptyCloud,

    /// A cloud whose extent exceeds the largest supported octree cube.
    #[error("coordinate extent {extent} exceeds the maximum octree cube side 2^{max_depth}")]
    CoordinateOverflow { extent: u64, max_depth: u32 },

    /// A bitstream header that cannot be parsed.
    #[error("malformed bitstream header: {0}")]
    MalformedHeader(String),

    /// A payload that desynchronizes the range decoder or contradicts the header.
    #[error("corrupt bitstream payload: {0}")]
    CorruptPayload(String),

    /// Bits-per-event with a zero event count.
    #[error("bits-per-event undefined for zero events")]
    ZeroEvents,

    /// An external codec command that exited with a failure status.
    #[error("external codec command failed (status {status}): `{command}`\n{stderr}")]
    ExternalCommandFailed {
        command: String,
        status: i32,
        stderr: String,
    },

    /// An external codec that did not produce an expected output file.
    #[error("external codec did not produce expected output `{path}` (command `{command}`)")]
    ExternalOutputMissing { command: String, path: PathBuf },

    /// An external codec template missing a required placeholder.
    #[error("external codec template is missing the `{placeholder}` placeholder")]
    BadCodecTemplate { placeholder: &'static str },

    /// A PSNR computation whose result is undefined for the given inputs.
    #[error("PSNR undefined: {0}")]
    UndefinedMetric(String),

    /// A PSNR peak that is not a positive finite number.
    #[error("PSNR peak must be positive and finite, got {0}")]
    InvalidPeak(f64),

    /// A rate-distortion curve with too few points for BD-Rate.
    #[error("BD-Rate needs at least {needed} curve points, `{label}` has {got}")]
    InsufficientPoints {
        label: String,
        needed: usize,
        got: usize,
    },

    /// Curve rates that are not strictly increasing and positive.
    #[error("curve `{label}`: rates must be finite, positive and strictly increasing")]
    BadCurveRates { label: String },

    /// BD-Rate curves whose score ranges do not overlap.
    #[error("BD-Rate curves have no overlapping score interval")]
    NoOverlap,

    /// A polynomial fit that cannot be solved (e.g. repeated scores).
    #[error("cannot fit rate curve: {0}")]
    FitFailed(String),

    /// A prediction for a sequence that has no ground-truth label.
    #[error("prediction for unknown sequence `{0}`")]
    UnknownSequence(String),

    /// An event outside the requested tensor grid.
    #[error("event at (x={x}, y={y}) is outside the {width}x{height} tensor grid")]
    CoordinateOutOfGrid {
        x: u8,
        y: u8,
        width: usize,
        height: usize,
    },

    /// A tensor container whose header and payload disagree.
    #[error("tensor container mismatch: {0}")]
    TensorMismatch(String),

    /// A pipeline job that violates its own invariants.
    #[error("invalid pipeline job: {0}")]
    InvalidJob(String),
}

impl Error {
    /// Wrap an I/O error with the path it concerns.
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;
