//! Retrieval scoring: logits from embedding pairs, target ranks, the
//! headline metrics (R@K, MRR, MedR), and the flip / rank-interval /
//! length-binned error diagnostics.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::bundle::{AuditBundle, LogitMatrix, QuerySet};
use crate::error::{AuditError, Result};

/// Default recall cutoffs used throughout the reports.
pub const DEFAULT_KS: [usize; 3] = [1, 5, 10];

/// Sentinel written into pruned candidate slots: the most negative finite
/// `f32`, so pruned matrices stay serializable in the 32-bit logit format.
pub const PRUNED_LOGIT: f64 = f32::MIN as f64;

/// A dense feature-by-time embedding window.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingWindow {
    values: Vec<f64>,
    dim: usize,
    steps: usize,
}

impl EmbeddingWindow {
    pub fn new(values: Vec<f64>, dim: usize, steps: usize) -> Result<Self> {
        if dim == 0 || steps == 0 {
            return Err(AuditError::InvalidConfig(
                "embedding window needs positive dimensions".into(),
            ));
        }
        if values.len() != dim * steps {
            return Err(AuditError::DimensionMismatch {
                context: "embedding value count",
                expected: dim * steps,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AuditError::InvalidConfig(
                "embedding window contains non-finite values".into(),
            ));
        }
        Ok(Self { values, dim, steps })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn frobenius_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn frobenius_dot(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Numerical-stability knob for candidate normalization.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ScoringConfig {
    pub epsilon: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self { epsilon: 1e-8 }
    }
}

/// One logit row: the Frobenius inner product of the query window with each
/// candidate window normalized by its Frobenius norm plus epsilon.
pub fn compute_logits(
    neural: &EmbeddingWindow,
    audio_candidates: &[EmbeddingWindow],
    cfg: &ScoringConfig,
) -> Result<Vec<f64>> {
    if cfg.epsilon <= 0.0 {
        return Err(AuditError::InvalidConfig("epsilon must be positive".into()));
    }
    let mut row = Vec::with_capacity(audio_candidates.len());
    for candidate in audio_candidates {
        if candidate.dim() != neural.dim() || candidate.steps() != neural.steps() {
            return Err(AuditError::DimensionMismatch {
                context: "embedding window shape",
                expected: neural.dim() * neural.steps(),
                actual: candidate.dim() * candidate.steps(),
            });
        }
        row.push(neural.frobenius_dot(candidate) / (candidate.frobenius_norm() + cfg.epsilon));
    }
    Ok(row)
}

/// Per-query target ranks, each in `[1, N]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankVector {
    ranks: Vec<u32>,
}

impl RankVector {
    pub fn new(ranks: Vec<u32>) -> Self {
        Self { ranks }
    }

    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.ranks
    }

    pub fn get(&self, query: usize) -> u32 {
        self.ranks[query]
    }
}

/// Competition rank of the target within one row: 1 plus the number of
/// strictly larger logits plus the number of tied logits at a smaller
/// candidate index. Deterministic and order-independent.
pub fn rank_in_row(row: &[f64], target: usize) -> u32 {
    let t = row[target];
    let mut ahead = 0u32;
    for (j, &v) in row.iter().enumerate() {
        if v > t || (v == t && j < target) {
            ahead += 1;
        }
    }
    ahead + 1
}

/// Target ranks over the full candidate pool.
pub fn compute_ranks(logits: &LogitMatrix, queries: &QuerySet) -> RankVector {
    let ranks = (0..logits.num_queries())
        .map(|w| rank_in_row(logits.row(w), queries.target_of(w)))
        .collect();
    RankVector::new(ranks)
}

/// Convenience wrapper over a validated bundle.
pub fn compute_bundle_ranks(bundle: &AuditBundle) -> RankVector {
    compute_ranks(bundle.logits(), bundle.queries())
}

/// Target ranks on a hard-pruned matrix. Rows where every candidate was
/// pruned carry no ranking information; they are assigned rank N so that
/// fully pruned queries never count as recalled.
pub fn compute_ranks_pruned(logits: &LogitMatrix, queries: &QuerySet) -> RankVector {
    let n = logits.num_candidates() as u32;
    let ranks = (0..logits.num_queries())
        .map(|w| {
            let row = logits.row(w);
            if row.iter().all(|&v| v == PRUNED_LOGIT) {
                n
            } else {
                rank_in_row(row, queries.target_of(w))
            }
        })
        .collect();
    RankVector::new(ranks)
}

/// Index of the top-ranked candidate in a row (smallest index among maxima).
pub fn top1_of_row(row: &[f64]) -> usize {
    let mut best = 0usize;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// The headline retrieval metrics over one rank vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Fraction of queries with rank at most K, per requested K.
    pub r_at_k: BTreeMap<usize, f64>,
    /// Mean reciprocal rank.
    pub mrr: f64,
    /// Median rank; mean of the two middle ranks when the count is even.
    pub medr: f64,
    pub num_queries: usize,
}

impl MetricsReport {
    /// R@K for a cutoff present in the report.
    pub fn r_at(&self, k: usize) -> f64 {
        self.r_at_k[&k]
    }
}

/// R@K, MRR, and MedR over the given ranks. `ks` is deduplicated and sorted.
pub fn compute_metrics(ranks: &RankVector, ks: &[usize]) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(AuditError::EmptyRanks);
    }
    let b = ranks.len() as f64;
    let mut r_at_k = BTreeMap::new();
    for &k in ks {
        let hits = ranks.as_slice().iter().filter(|&&r| (r as usize) <= k).count();
        r_at_k.insert(k, hits as f64 / b);
    }
    let mrr = ranks.as_slice().iter().map(|&r| 1.0 / f64::from(r)).sum::<f64>() / b;
    let mut sorted: Vec<u32> = ranks.as_slice().to_vec();
    sorted.sort_unstable();
    let mid = sorted.len() / 2;
    let medr = if sorted.len() % 2 == 1 {
        f64::from(sorted[mid])
    } else {
        (f64::from(sorted[mid - 1]) + f64::from(sorted[mid])) / 2.0
    };
    Ok(MetricsReport {
        r_at_k,
        mrr,
        medr,
        num_queries: ranks.len(),
    })
}

/// Top-1 transition counts between two rank vectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipCounts {
    /// Queries Top-1 before but not after.
    pub good_to_bad: usize,
    /// Queries not Top-1 before but Top-1 after.
    pub bad_to_good: usize,
    /// `bad_to_good - good_to_bad`.
    pub net: i64,
    /// `(b2g - g2b) / (b2g + g2b)`; `None` when no flips occurred.
    pub balance: Option<f64>,
}

/// Count good-to-bad and bad-to-good Top-1 flips between two conditions.
pub fn flip_analysis(before: &RankVector, after: &RankVector) -> Result<FlipCounts> {
    if before.len() != after.len() {
        return Err(AuditError::LengthMismatch {
            context: "flip analysis rank vectors",
            left: before.len(),
            right: after.len(),
        });
    }
    let mut good_to_bad = 0usize;
    let mut bad_to_good = 0usize;
    for (&b, &a) in before.as_slice().iter().zip(after.as_slice()) {
        match (b == 1, a == 1) {
            (true, false) => good_to_bad += 1,
            (false, true) => bad_to_good += 1,
            _ => {}
        }
    }
    let total = good_to_bad + bad_to_good;
    let balance = if total == 0 {
        None
    } else {
        Some((bad_to_good as f64 - good_to_bad as f64) / total as f64)
    };
    Ok(FlipCounts {
        good_to_bad,
        bad_to_good,
        net: bad_to_good as i64 - good_to_bad as i64,
        balance,
    })
}

/// Inclusive rank interval; `hi = None` means unbounded above.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankInterval {
    pub lo: u32,
    pub hi: Option<u32>,
}

impl RankInterval {
    pub fn contains(&self, rank: u32) -> bool {
        rank >= self.lo && self.hi.is_none_or(|hi| rank <= hi)
    }
}

/// The conventional error strata: ranks 2-5, 6-10, and above 10.
pub fn default_rank_intervals() -> Vec<RankInterval> {
    vec![
        RankInterval { lo: 2, hi: Some(5) },
        RankInterval { lo: 6, hi: Some(10) },
        RankInterval { lo: 11, hi: None },
    ]
}

/// Per-interval Top-1 correction counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankBucketRow {
    pub interval: RankInterval,
    /// Queries whose before-rank falls in the interval.
    pub total: usize,
    /// Of those, queries promoted to Top-1 after.
    pub corrected: usize,
    /// `corrected / total`; `None` for empty intervals.
    pub rate: Option<f64>,
}

/// Among queries whose before-rank falls in each interval, the fraction
/// promoted to Top-1 afterwards. Intervals must not overlap.
pub fn rank_bucket_correction(
    before: &RankVector,
    after: &RankVector,
    intervals: &[RankInterval],
) -> Result<Vec<RankBucketRow>> {
    if before.len() != after.len() {
        return Err(AuditError::LengthMismatch {
            context: "rank bucket correction rank vectors",
            left: before.len(),
            right: after.len(),
        });
    }
    for (i, a) in intervals.iter().enumerate() {
        for b in intervals.iter().skip(i + 1) {
            let a_hi = a.hi.unwrap_or(u32::MAX);
            let b_hi = b.hi.unwrap_or(u32::MAX);
            if a.lo <= b_hi && b.lo <= a_hi {
                return Err(AuditError::OverlappingIntervals {
                    a_lo: a.lo,
                    a_hi,
                    b_lo: b.lo,
                    b_hi,
                });
            }
        }
    }
    Ok(intervals
        .iter()
        .map(|&interval| {
            let mut total = 0usize;
            let mut corrected = 0usize;
            for (&b, &a) in before.as_slice().iter().zip(after.as_slice()) {
                if interval.contains(b) {
                    total += 1;
                    if a == 1 {
                        corrected += 1;
                    }
                }
            }
            RankBucketRow {
                interval,
                total,
                corrected,
                rate: (total > 0).then(|| corrected as f64 / total as f64),
            }
        })
        .collect())
}

/// R@1 before/after and delta for one group-size bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LengthBinRow {
    /// Inclusive lower edge on group size.
    pub lo: usize,
    /// Exclusive upper edge; `None` for the last, open-ended bin.
    pub hi: Option<usize>,
    pub population: usize,
    pub r1_before: Option<f64>,
    pub r1_after: Option<f64>,
    pub delta_r1: Option<f64>,
}

/// Bin queries by the size of their sentence group and report per-bin R@1
/// before/after. `bin_edges` are ascending lower edges; the last bin is
/// open-ended. Every group size must be at or above the first edge so the
/// bins partition the queries.
pub fn length_binned_delta(
    before: &RankVector,
    after: &RankVector,
    queries: &QuerySet,
    bin_edges: &[usize],
) -> Result<Vec<LengthBinRow>> {
    if bin_edges.is_empty() {
        return Err(AuditError::EmptyBins);
    }
    if before.len() != after.len() || before.len() != queries.len() {
        return Err(AuditError::LengthMismatch {
            context: "length binned delta inputs",
            left: before.len(),
            right: after.len().max(queries.len()),
        });
    }
    let mut edges = bin_edges.to_vec();
    edges.sort_unstable();
    edges.dedup();
    let nbins = edges.len();
    let mut pops = vec![0usize; nbins];
    let mut hits_before = vec![0usize; nbins];
    let mut hits_after = vec![0usize; nbins];
    for query in 0..queries.len() {
        let size = queries.group_members(queries.group_of(query)).len();
        if size < edges[0] {
            return Err(AuditError::BinCoverage {
                size,
                edge: edges[0],
            });
        }
        let bin = edges.partition_point(|&e| e <= size) - 1;
        pops[bin] += 1;
        if before.get(query) == 1 {
            hits_before[bin] += 1;
        }
        if after.get(query) == 1 {
            hits_after[bin] += 1;
        }
    }
    Ok((0..nbins)
        .map(|i| {
            let population = pops[i];
            let rb = (population > 0).then(|| hits_before[i] as f64 / population as f64);
            let ra = (population > 0).then(|| hits_after[i] as f64 / population as f64);
            LengthBinRow {
                lo: edges[i],
                hi: edges.get(i + 1).copied(),
                population,
                r1_before: rb,
                r1_after: ra,
                delta_r1: rb.zip(ra).map(|(b, a)| a - b),
            }
        })
        .collect())
}
