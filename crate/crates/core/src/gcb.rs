//! Group context bias: an inference-time additive, bucket-constant logit
//! correction that pools retained cross-window evidence at the sentence-
//! bucket level, plus its controlled variants (single-window pooling, hard
//! pruning, normalizer/aggregator/gate ablations).
//!
//! The correction never mutates the input matrix and, being bucket-constant,
//! preserves within-bucket ordering exactly.

use serde::{Deserialize, Serialize};

use crate::bundle::{AuditBundle, CandidatePool, LogitMatrix};
use crate::error::{AuditError, Result};
use crate::scoring::PRUNED_LOGIT;

/// Bucket-size normalizer applied to pooled support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalizer {
    /// No exposure control.
    None,
    /// Divide by the square root of the bucket size.
    BucketSqrt,
    /// Divide by the bucket size.
    BucketCount,
    /// Divide by the number of retained evidence items for the bucket.
    KeptCount,
}

/// How retained evidence for a bucket is collapsed into one value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregator {
    /// Mean of the largest `min(m, available)` excess scores.
    MeanTopM,
    /// Natural log-sum-exp over the same top elements.
    LseTopM,
}

/// Hyperparameters of the correction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GcbConfig {
    /// Top-K retention count per query row.
    pub k: usize,
    /// Gate quantile in (0, 1) over the full row.
    pub q: f64,
    /// Evidence count entering the bucket aggregation.
    pub m: usize,
    /// Number of buckets receiving the bias.
    pub s: usize,
    /// Bias scale.
    pub gamma: f64,
    pub normalizer: Normalizer,
    pub aggregator: Aggregator,
    /// When false, all top-K candidates are retained regardless of the
    /// quantile threshold.
    pub gate_enabled: bool,
    /// When false, excess scores are the raw logits instead of the offset
    /// against the quantile threshold.
    pub subtract_threshold: bool,
}

impl Default for GcbConfig {
    fn default() -> Self {
        Self {
            k: 128,
            q: 0.95,
            m: 3,
            s: 3,
            gamma: 0.7,
            normalizer: Normalizer::BucketSqrt,
            aggregator: Aggregator::MeanTopM,
            gate_enabled: true,
            subtract_threshold: true,
        }
    }
}

impl GcbConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(AuditError::InvalidConfig("K must be at least 1".into()));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(AuditError::InvalidConfig("q must lie in (0, 1)".into()));
        }
        if self.m < 1 {
            return Err(AuditError::InvalidConfig("m must be at least 1".into()));
        }
        if self.s < 1 {
            return Err(AuditError::InvalidConfig("S must be at least 1".into()));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(AuditError::InvalidConfig("gamma must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Retained local evidence for one query row.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalEvidence {
    /// Indices of the `min(K, N)` largest logits, ties broken by ascending
    /// candidate index.
    pub topk_indices: Vec<usize>,
    /// Quantile threshold over the full row.
    pub threshold: f64,
    /// Retained candidate indices (gated subset of `topk_indices`).
    pub retained: Vec<usize>,
    /// Excess score per retained candidate, aligned with `retained`.
    pub excess: Vec<f64>,
}

/// Linear-interpolation quantile between adjacent order statistics.
pub(crate) fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    quantile_sorted(&sorted, q)
}

/// Same, over already-sorted values.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = q * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Indices of the `k` largest values, ties broken by ascending index.
fn top_k_indices(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k.min(row.len()));
    idx
}

/// Extract the retained candidate set and excess scores for one query row.
pub fn extract_evidence(row: &[f64], cfg: &GcbConfig) -> LocalEvidence {
    let topk_indices = top_k_indices(row, cfg.k);
    let threshold = quantile(row, cfg.q);
    let retained: Vec<usize> = if cfg.gate_enabled {
        topk_indices
            .iter()
            .copied()
            .filter(|&j| row[j] >= threshold)
            .collect()
    } else {
        topk_indices.clone()
    };
    let excess = retained
        .iter()
        .map(|&j| {
            if cfg.subtract_threshold {
                row[j] - threshold
            } else {
                row[j]
            }
        })
        .collect();
    LocalEvidence {
        topk_indices,
        threshold,
        retained,
        excess,
    }
}

/// Pooled per-bucket support for one query group.
#[derive(Debug, Clone, PartialEq)]
pub struct BucketSupport {
    /// Normalized support per bucket; zero for buckets with no evidence.
    pub support: Vec<f64>,
    /// Up to S bucket ids with the largest strictly positive support,
    /// ties broken by ascending bucket id. Sorted ascending.
    pub selected: Vec<usize>,
    /// Number of retained evidence items per bucket.
    pub evidence_counts: Vec<usize>,
}

impl BucketSupport {
    pub fn is_selected(&self, bucket: usize) -> bool {
        self.selected.binary_search(&bucket).is_ok()
    }
}

fn aggregate_top_m(values: &mut [f64], m: usize, aggregator: Aggregator) -> f64 {
    values.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    let take = m.min(values.len());
    let top = &values[..take];
    match aggregator {
        Aggregator::MeanTopM => top.iter().sum::<f64>() / take as f64,
        Aggregator::LseTopM => top.iter().map(|v| v.exp()).sum::<f64>().ln(),
    }
}

/// Pool retained evidence from a group of query rows into per-bucket
/// support and select the top-S supported buckets.
pub fn pool_bucket_support(
    evidence: &[LocalEvidence],
    candidates: &CandidatePool,
    cfg: &GcbConfig,
) -> BucketSupport {
    let m_buckets = candidates.num_buckets();
    let mut pooled: Vec<Vec<f64>> = vec![Vec::new(); m_buckets];
    for ev in evidence {
        for (&j, &e) in ev.retained.iter().zip(ev.excess.iter()) {
            pooled[candidates.bucket_of(j)].push(e);
        }
    }
    let evidence_counts: Vec<usize> = pooled.iter().map(Vec::len).collect();
    let mut support = vec![0.0; m_buckets];
    for (s, values) in pooled.iter_mut().enumerate() {
        if values.is_empty() {
            continue;
        }
        let aggregated = aggregate_top_m(values, cfg.m, cfg.aggregator);
        let norm = match cfg.normalizer {
            Normalizer::None => 1.0,
            Normalizer::BucketSqrt => 1.0 / (candidates.bucket_members(s).len() as f64).sqrt(),
            Normalizer::BucketCount => 1.0 / candidates.bucket_members(s).len() as f64,
            Normalizer::KeptCount => 1.0 / evidence_counts[s] as f64,
        };
        support[s] = norm * aggregated;
    }
    let mut positive: Vec<usize> = (0..m_buckets).filter(|&s| support[s] > 0.0).collect();
    positive.sort_by(|&a, &b| support[b].partial_cmp(&support[a]).unwrap().then(a.cmp(&b)));
    positive.truncate(cfg.s);
    positive.sort_unstable();
    BucketSupport {
        support,
        selected: positive,
        evidence_counts,
    }
}

/// One pooled run over a bundle: per-group bucket supports computed once
/// and reused by the corrected matrix, the pruned matrix, and the bucket
/// hit mask, so the three views describe the same selection.
#[derive(Debug, Clone)]
pub struct GcbRun {
    /// Support per group id (or per query when pooling is singleton).
    supports: Vec<BucketSupport>,
    /// Group members aligned with `supports`.
    members: Vec<Vec<usize>>,
    gamma: f64,
}

impl GcbRun {
    /// Pool evidence over the bundle's sentence groups.
    pub fn grouped(bundle: &AuditBundle, cfg: &GcbConfig) -> Result<Self> {
        cfg.validate()?;
        let queries = bundle.queries();
        let members: Vec<Vec<usize>> = (0..queries.num_groups())
            .map(|g| queries.group_members(g).to_vec())
            .collect();
        Ok(Self::pooled(bundle, cfg, members))
    }

    /// Pool evidence per query window, i.e. over the singleton partition.
    pub fn singleton(bundle: &AuditBundle, cfg: &GcbConfig) -> Result<Self> {
        cfg.validate()?;
        let members: Vec<Vec<usize>> = (0..bundle.queries().len()).map(|b| vec![b]).collect();
        Ok(Self::pooled(bundle, cfg, members))
    }

    fn pooled(bundle: &AuditBundle, cfg: &GcbConfig, members: Vec<Vec<usize>>) -> Self {
        let logits = bundle.logits();
        let supports = members
            .iter()
            .map(|group| {
                let evidence: Vec<LocalEvidence> = group
                    .iter()
                    .map(|&b| extract_evidence(logits.row(b), cfg))
                    .collect();
                pool_bucket_support(&evidence, bundle.candidates(), cfg)
            })
            .collect();
        Self {
            supports,
            members,
            gamma: cfg.gamma,
        }
    }

    pub fn supports(&self) -> &[BucketSupport] {
        &self.supports
    }

    /// New matrix with the additive bucket-constant bias applied to every
    /// candidate of a selected bucket; the input matrix is untouched.
    pub fn corrected_matrix(&self, bundle: &AuditBundle) -> LogitMatrix {
        self.corrected_matrix_with_gamma(bundle, self.gamma)
    }

    /// Same supports under a different bias scale; used by the gain sweep,
    /// which varies only the additive scale.
    pub fn corrected_matrix_with_gamma(&self, bundle: &AuditBundle, gamma: f64) -> LogitMatrix {
        let logits = bundle.logits();
        let pool = bundle.candidates();
        let n = logits.num_candidates();
        let mut out = logits.values().to_vec();
        for (support, group) in self.supports.iter().zip(&self.members) {
            for &bucket in &support.selected {
                let bias = gamma * support.support[bucket];
                for &b in group {
                    let base = b * n;
                    for &j in pool.bucket_members(bucket) {
                        out[base + j] += bias;
                    }
                }
            }
        }
        LogitMatrix::from_raw(out, logits.num_queries(), n)
    }

    /// New matrix keeping original logits inside the selected buckets and
    /// the pruning sentinel everywhere else.
    pub fn pruned_matrix(&self, bundle: &AuditBundle) -> LogitMatrix {
        let logits = bundle.logits();
        let pool = bundle.candidates();
        let n = logits.num_candidates();
        let mut out = vec![PRUNED_LOGIT; logits.values().len()];
        for (support, group) in self.supports.iter().zip(&self.members) {
            for &bucket in &support.selected {
                for &b in group {
                    let base = b * n;
                    for &j in pool.bucket_members(bucket) {
                        out[base + j] = logits.row(b)[j];
                    }
                }
            }
        }
        LogitMatrix::from_raw(out, logits.num_queries(), n)
    }

    /// Whether each query's ground-truth bucket is among its group's
    /// selected buckets.
    pub fn hit_mask(&self, bundle: &AuditBundle) -> Vec<bool> {
        let pool = bundle.candidates();
        let queries = bundle.queries();
        let mut mask = vec![false; queries.len()];
        for (support, group) in self.supports.iter().zip(&self.members) {
            for &b in group {
                mask[b] = support.is_selected(pool.bucket_of(queries.target_of(b)));
            }
        }
        mask
    }

    /// Operation counters for the complexity report.
    pub fn counters(&self, bundle: &AuditBundle, cfg: &GcbConfig) -> GcbCounters {
        let logits = bundle.logits();
        let pool = bundle.candidates();
        let num_queries = logits.num_queries();
        let mut retained_total = 0u64;
        let mut unique_buckets_total = 0u64;
        for b in 0..num_queries {
            let ev = extract_evidence(logits.row(b), cfg);
            retained_total += ev.retained.len() as u64;
            let mut buckets: Vec<usize> = ev.retained.iter().map(|&j| pool.bucket_of(j)).collect();
            buckets.sort_unstable();
            buckets.dedup();
            unique_buckets_total += buckets.len() as u64;
        }
        let bucket_writes_total: u64 = self.supports.iter().map(|s| s.selected.len() as u64).sum();
        GcbCounters {
            num_queries: num_queries as u64,
            num_groups: self.members.len() as u64,
            retained_total,
            unique_buckets_total,
            fuse_adds_total: num_queries as u64 * logits.num_candidates() as u64,
            bucket_writes_total,
        }
    }
}

/// Raw counter totals from one pooled run; see the complexity report for
/// the per-query views.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GcbCounters {
    pub num_queries: u64,
    pub num_groups: u64,
    /// Total retained (gated top-K) elements over all query rows.
    pub retained_total: u64,
    /// Total distinct buckets touched by retained evidence, per query row.
    pub unique_buckets_total: u64,
    /// One fused add per (query, candidate) pair.
    pub fuse_adds_total: u64,
    /// Total selected-bucket writes over all groups.
    pub bucket_writes_total: u64,
}

/// Corrected logits with evidence pooled over sentence groups.
pub fn apply_gcb(bundle: &AuditBundle, cfg: &GcbConfig) -> Result<LogitMatrix> {
    Ok(GcbRun::grouped(bundle, cfg)?.corrected_matrix(bundle))
}

/// Corrected logits with pooling removed: every query group is a singleton.
pub fn apply_gcb_single(bundle: &AuditBundle, cfg: &GcbConfig) -> Result<LogitMatrix> {
    Ok(GcbRun::singleton(bundle, cfg)?.corrected_matrix(bundle))
}

/// Logits restricted to the selected buckets, sentinel elsewhere.
pub fn apply_hard_pruning(bundle: &AuditBundle, cfg: &GcbConfig) -> Result<LogitMatrix> {
    Ok(GcbRun::grouped(bundle, cfg)?.pruned_matrix(bundle))
}

/// Per-query indicator of the ground-truth bucket being selected.
pub fn bucket_hit_mask(bundle: &AuditBundle, cfg: &GcbConfig) -> Result<Vec<bool>> {
    Ok(GcbRun::grouped(bundle, cfg)?.hit_mask(bundle))
}
