//! Error type shared across the audit toolkit.

use thiserror::Error;

/// Typed failure for every fallible operation in the toolkit.
///
/// Validation reports the first violation it encounters; no operation
/// ever hands back a partially constructed value.
#[derive(Debug, Error)]
pub enum AuditError {
    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite logit at row {row}, column {col}")]
    NonFiniteLogit { row: usize, col: usize },

    #[error("target out of range: query {query} targets candidate {target} but pool has {num_candidates} candidates")]
    TargetOutOfRange {
        query: usize,
        target: usize,
        num_candidates: usize,
    },

    #[error("bucket id {bucket} out of range for candidate {candidate} (num_buckets = {num_buckets})")]
    BucketOutOfRange {
        candidate: usize,
        bucket: usize,
        num_buckets: usize,
    },

    #[error("empty bucket {bucket}")]
    EmptyBucket { bucket: usize },

    #[error("group id {group} out of range for query {query} (num_groups = {num_groups})")]
    GroupOutOfRange {
        query: usize,
        group: usize,
        num_groups: usize,
    },

    #[error("empty group {group}")]
    EmptyGroup { group: usize },

    #[error("duplicate (stimulus key, window index) pair: ({key:?}, {window}) shared by candidates {first} and {second}")]
    DuplicateStimulus {
        key: String,
        window: u64,
        first: usize,
        second: usize,
    },

    #[error("temporal order is not a strict total order within story {story}: queries {first} and {second} share order {order}")]
    OrderNotTotal {
        story: usize,
        first: usize,
        second: usize,
        order: i64,
    },

    #[error("missing metadata: {0}")]
    MissingMetadata(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty rank vector")]
    EmptyRanks,

    #[error("length mismatch: {context} ({left} vs {right})")]
    LengthMismatch {
        context: &'static str,
        left: usize,
        right: usize,
    },

    #[error("overlapping rank intervals: [{a_lo}, {a_hi}] and [{b_lo}, {b_hi}]")]
    OverlappingIntervals {
        a_lo: u32,
        a_hi: u32,
        b_lo: u32,
        b_hi: u32,
    },

    #[error("empty bin list")]
    EmptyBins,

    #[error("group size {size} below the first bin edge {edge}")]
    BinCoverage { size: usize, edge: usize },

    #[error("zero variance in {0}; correlation undefined")]
    ZeroVariance(&'static str),

    #[error("empty cluster set")]
    EmptyClusters,

    #[error("infeasible synthetic configuration: {0}")]
    InfeasibleConfig(String),

    #[error("pool size {size} is below the number of distinct targets {num_targets}")]
    PoolSizeTooSmall { size: usize, num_targets: usize },

    #[error("unsupported output format {format:?} for this report")]
    UnsupportedFormat { format: String },

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: truncated logit file (expected {expected} bytes, got {actual})")]
    TruncatedFile {
        path: String,
        expected: u64,
        actual: u64,
    },

    #[error("{path}: bad magic bytes (expected \"GCBL\")")]
    BadMagic { path: String },

    #[error("{path}: unsupported logit file version {version}")]
    BadVersion { path: String, version: u32 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

impl AuditError {
    /// Stable machine-readable code for the error object emitted by the CLI.
    pub fn kind(&self) -> &'static str {
        match self {
            AuditError::DimensionMismatch { .. } => "dimension_mismatch",
            AuditError::NonFiniteLogit { .. } => "non_finite_logit",
            AuditError::TargetOutOfRange { .. } => "target_out_of_range",
            AuditError::BucketOutOfRange { .. } => "bucket_out_of_range",
            AuditError::EmptyBucket { .. } => "empty_bucket",
            AuditError::GroupOutOfRange { .. } => "group_out_of_range",
            AuditError::EmptyGroup { .. } => "empty_group",
            AuditError::DuplicateStimulus { .. } => "duplicate_stimulus",
            AuditError::OrderNotTotal { .. } => "order_not_total",
            AuditError::MissingMetadata(_) => "missing_metadata",
            AuditError::InvalidConfig(_) => "invalid_config",
            AuditError::EmptyRanks => "empty_ranks",
            AuditError::LengthMismatch { .. } => "length_mismatch",
            AuditError::OverlappingIntervals { .. } => "overlapping_intervals",
            AuditError::EmptyBins => "empty_bins",
            AuditError::BinCoverage { .. } => "bin_coverage",
            AuditError::ZeroVariance(_) => "zero_variance",
            AuditError::EmptyClusters => "empty_clusters",
            AuditError::InfeasibleConfig(_) => "infeasible_config",
            AuditError::PoolSizeTooSmall { .. } => "pool_size_too_small",
            AuditError::UnsupportedFormat { .. } => "unsupported_format",
            AuditError::Io { .. } => "io",
            AuditError::TruncatedFile { .. } => "truncated_file",
            AuditError::BadMagic { .. } => "bad_magic",
            AuditError::BadVersion { .. } => "bad_version",
            AuditError::Parse { .. } => "parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, AuditError>;
