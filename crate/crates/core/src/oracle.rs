//! Oracle sentence-bucket diagnostic and the headroom decomposition that
//! splits the oracle gap into bucket identification and conditional
//! recovery.
//!
//! The oracle is a diagnostic only: it ranks each target among its own
//! bucket's candidates with unchanged logits, and nothing here ever feeds
//! ground-truth buckets into the bias's bucket selection.

use serde::{Deserialize, Serialize};

use crate::bundle::AuditBundle;
use crate::error::Result;
use crate::gcb::{GcbConfig, GcbRun};
use crate::scoring::{
    compute_bundle_ranks, compute_metrics, compute_ranks, compute_ranks_pruned,
    default_rank_intervals, MetricsReport, RankInterval, RankVector, DEFAULT_KS,
};

/// Within-bucket ranks and their metrics, plus the R@1 headroom over the
/// full-pool baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub within_bucket_ranks: RankVector,
    pub metrics: MetricsReport,
    pub base_r1: f64,
    pub oracle_r1: f64,
    /// `oracle_r1 - base_r1`.
    pub headroom: f64,
}

/// Rank every target among the candidates of its own bucket, using the
/// unchanged logits and the standard tie rule restricted to the bucket.
pub fn oracle_within_bucket(bundle: &AuditBundle) -> Result<OracleReport> {
    let logits = bundle.logits();
    let pool = bundle.candidates();
    let queries = bundle.queries();
    let ranks: Vec<u32> = (0..queries.len())
        .map(|w| {
            let target = queries.target_of(w);
            let row = logits.row(w);
            let t = row[target];
            let mut ahead = 0u32;
            for &j in pool.bucket_members(pool.bucket_of(target)) {
                if row[j] > t || (row[j] == t && j < target) {
                    ahead += 1;
                }
            }
            ahead + 1
        })
        .collect();
    let within = RankVector::new(ranks);
    let metrics = compute_metrics(&within, &DEFAULT_KS)?;
    let base = compute_metrics(&compute_bundle_ranks(bundle), &DEFAULT_KS)?;
    let base_r1 = base.r_at(1);
    let oracle_r1 = metrics.r_at(1);
    Ok(OracleReport {
        within_bucket_ranks: within,
        metrics,
        base_r1,
        oracle_r1,
        headroom: oracle_r1 - base_r1,
    })
}

/// Which queries a decomposition row aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubsetKind {
    All,
    BucketHit,
    BucketMiss,
    BaselineErrors,
    ErrorsBucketHit,
    ErrorsBucketMiss,
}

/// One row of the headroom decomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRow {
    pub subset: SubsetKind,
    pub num_queries: usize,
    pub bucket_hit_rate: Option<f64>,
    pub base_r1: Option<f64>,
    pub gcb_r1: Option<f64>,
    pub hard_prune_r1: Option<f64>,
    pub oracle_r1: Option<f64>,
}

/// Top-1 correction conditioned on the baseline rank interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankConditionalRow {
    pub interval: RankInterval,
    pub num_queries: usize,
    pub corrected: usize,
    pub correction_rate: Option<f64>,
    pub bucket_hit_rate: Option<f64>,
    pub oracle_r1: Option<f64>,
}

/// The oracle-vs-bias gap decomposed over baseline correctness and bucket
/// identification, from a single pooled run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadroomDecomposition {
    pub subsets: Vec<SubsetRow>,
    pub rank_conditional: Vec<RankConditionalRow>,
}

fn rate_within(mask: &[bool], pred: impl Fn(usize) -> bool) -> (usize, Option<f64>) {
    let total = mask.iter().filter(|&&m| m).count();
    if total == 0 {
        return (0, None);
    }
    let hits = mask
        .iter()
        .enumerate()
        .filter(|&(i, &m)| m && pred(i))
        .count();
    (total, Some(hits as f64 / total as f64))
}

/// Decompose the oracle headroom over the six subsets defined by baseline
/// Top-1 correctness and the bucket-hit mask. The bucket supports are
/// computed once and shared by the corrected, pruned, and mask views.
pub fn decompose_headroom(bundle: &AuditBundle, cfg: &GcbConfig) -> Result<HeadroomDecomposition> {
    let run = GcbRun::grouped(bundle, cfg)?;
    let base_ranks = compute_bundle_ranks(bundle);
    let gcb_ranks = compute_ranks(&run.corrected_matrix(bundle), bundle.queries());
    let prune_ranks = compute_ranks_pruned(&run.pruned_matrix(bundle), bundle.queries());
    let oracle_ranks = oracle_within_bucket(bundle)?.within_bucket_ranks;
    let hit = run.hit_mask(bundle);

    let b = bundle.queries().len();
    let is_error: Vec<bool> = (0..b).map(|w| base_ranks.get(w) > 1).collect();

    let membership = |kind: SubsetKind| -> Vec<bool> {
        (0..b)
            .map(|w| match kind {
                SubsetKind::All => true,
                SubsetKind::BucketHit => hit[w],
                SubsetKind::BucketMiss => !hit[w],
                SubsetKind::BaselineErrors => is_error[w],
                SubsetKind::ErrorsBucketHit => is_error[w] && hit[w],
                SubsetKind::ErrorsBucketMiss => is_error[w] && !hit[w],
            })
            .collect()
    };

    let subsets = [
        SubsetKind::All,
        SubsetKind::BucketHit,
        SubsetKind::BucketMiss,
        SubsetKind::BaselineErrors,
        SubsetKind::ErrorsBucketHit,
        SubsetKind::ErrorsBucketMiss,
    ]
    .into_iter()
    .map(|kind| {
        let mask = membership(kind);
        let (num_queries, bucket_hit_rate) = rate_within(&mask, |w| hit[w]);
        let (_, base_r1) = rate_within(&mask, |w| base_ranks.get(w) == 1);
        let (_, gcb_r1) = rate_within(&mask, |w| gcb_ranks.get(w) == 1);
        let (_, hard_prune_r1) = rate_within(&mask, |w| prune_ranks.get(w) == 1);
        let (_, oracle_r1) = rate_within(&mask, |w| oracle_ranks.get(w) == 1);
        SubsetRow {
            subset: kind,
            num_queries,
            bucket_hit_rate,
            base_r1,
            gcb_r1,
            hard_prune_r1,
            oracle_r1,
        }
    })
    .collect();

    let rank_conditional = default_rank_intervals()
        .into_iter()
        .map(|interval| {
            let mask: Vec<bool> = (0..b).map(|w| interval.contains(base_ranks.get(w))).collect();
            let (num_queries, correction_rate) = rate_within(&mask, |w| gcb_ranks.get(w) == 1);
            let corrected = mask
                .iter()
                .enumerate()
                .filter(|&(w, &m)| m && gcb_ranks.get(w) == 1)
                .count();
            let (_, bucket_hit_rate) = rate_within(&mask, |w| hit[w]);
            let (_, oracle_r1) = rate_within(&mask, |w| oracle_ranks.get(w) == 1);
            RankConditionalRow {
                interval,
                num_queries,
                corrected,
                correction_rate,
                bucket_hit_rate,
                oracle_r1,
            }
        })
        .collect();

    Ok(HeadroomDecomposition {
        subsets,
        rank_conditional,
    })
}
