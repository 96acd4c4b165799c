//! Score-space audit toolkit for closed-set retrieval.
//!
//! Takes precomputed query-by-candidate logit matrices plus bucket/group
//! manifests and reproduces a full attribution audit: baseline metrics,
//! the group context bias correction and its controlled variants, oracle
//! bucket diagnostics, grouping and evidence-attenuation controls,
//! clustered bootstrap inference, flip diagnostics, and complexity op
//! counts. A planted-signal generator makes every qualitative claim
//! verifiable without any model exports.
//!
//! All operations are pure functions over immutable, validated inputs;
//! seeded randomness derives per-row / per-resample sub-seeds so results
//! are independent of evaluation order.

pub mod bundle;
pub mod error;
pub mod gcb;
pub mod io;
pub mod opcount;
pub mod oracle;
pub mod perturb;
pub mod report;
pub mod scoring;
mod seed;
pub mod stats;
pub mod synth;

pub use bundle::{
    bucket_sizes, validate_bundle, AuditBundle, CandidatePool, LogitMatrix, QuerySet, StimulusId,
};
pub use error::{AuditError, Result};
pub use gcb::{
    apply_gcb, apply_gcb_single, apply_hard_pruning, bucket_hit_mask, extract_evidence,
    pool_bucket_support, Aggregator, BucketSupport, GcbConfig, GcbRun, LocalEvidence, Normalizer,
};
pub use opcount::{opcount, OpCountDims, OpCountReport};
pub use oracle::{decompose_headroom, oracle_within_bucket, HeadroomDecomposition, OracleReport};
pub use perturb::{
    attenuate_logits, attenuation_sweep, perturb_groups, AttenuationConfig, PerturbConfig,
    PerturbKind,
};
pub use report::{
    emit_report, run_attenuation, run_audit, run_gamma_sweep, run_perturb_series, run_pool_sweep,
    subsample_pool, AuditOptions, AuditReport, GcbVariant, OutputFormat,
};
pub use scoring::{
    compute_bundle_ranks, compute_logits, compute_metrics, compute_ranks, compute_ranks_pruned,
    flip_analysis, length_binned_delta, rank_bucket_correction, EmbeddingWindow, FlipCounts,
    MetricsReport, RankInterval, RankVector, ScoringConfig, DEFAULT_KS, PRUNED_LOGIT,
};
pub use stats::{
    bucket_size_inflation_correlation, paired_cluster_bootstrap, spearman, BootstrapConfig,
    BootstrapResult, MetricKind,
};
pub use synth::{generate, generate_sweep, SynthConfig};
