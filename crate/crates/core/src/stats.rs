//! Resampling statistics: paired cluster bootstrap for metric deltas and
//! Spearman rank correlation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::AuditBundle;
use crate::error::{AuditError, Result};
use crate::scoring::RankVector;
use crate::seed::mix;

/// Which scalar metric the bootstrap compares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    RAtK(usize),
    Mrr,
}

impl MetricKind {
    fn per_query(&self, rank: u32) -> f64 {
        match self {
            MetricKind::RAtK(k) => {
                if (rank as usize) <= *k {
                    1.0
                } else {
                    0.0
                }
            }
            MetricKind::Mrr => 1.0 / f64::from(rank),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub num_resamples: usize,
    /// Confidence level in (0, 1).
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            num_resamples: 10_000,
            confidence: 0.95,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    fn validate(&self) -> Result<()> {
        if self.num_resamples < 1 {
            return Err(AuditError::InvalidConfig(
                "num_resamples must be at least 1".into(),
            ));
        }
        if !(self.confidence > 0.0 && self.confidence < 1.0) {
            return Err(AuditError::InvalidConfig(
                "confidence must lie in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Observed delta, percentile interval, and two-sided p-value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point_delta: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Two-sided, floored at `1 / num_resamples`.
    pub p_value: f64,
}

/// Paired cluster bootstrap over query groups: clusters are resampled with
/// replacement and the same resampled multiset is applied to both rank
/// vectors; a cluster drawn k times contributes k times. Each resample
/// draws from a sub-seed keyed by (seed, resample index), so the result is
/// independent of evaluation order.
pub fn paired_cluster_bootstrap(
    before: &RankVector,
    after: &RankVector,
    clusters: &[usize],
    metric: MetricKind,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    cfg.validate()?;
    if before.len() != after.len() || before.len() != clusters.len() {
        return Err(AuditError::LengthMismatch {
            context: "bootstrap inputs",
            left: before.len(),
            right: after.len().max(clusters.len()),
        });
    }
    if clusters.is_empty() {
        return Err(AuditError::EmptyClusters);
    }

    // Per-cluster sufficient statistics: metric sums and counts.
    let num_clusters = clusters.iter().copied().max().unwrap() + 1;
    let mut sums_before = vec![0.0f64; num_clusters];
    let mut sums_after = vec![0.0f64; num_clusters];
    let mut counts = vec![0usize; num_clusters];
    for (w, &c) in clusters.iter().enumerate() {
        sums_before[c] += metric.per_query(before.get(w));
        sums_after[c] += metric.per_query(after.get(w));
        counts[c] += 1;
    }
    if counts.contains(&0) {
        return Err(AuditError::EmptyClusters);
    }

    let total: usize = counts.iter().sum();
    let point_delta =
        (sums_after.iter().sum::<f64>() - sums_before.iter().sum::<f64>()) / total as f64;

    let mut deltas = Vec::with_capacity(cfg.num_resamples);
    let mut at_or_below = 0usize;
    let mut at_or_above = 0usize;
    for resample in 0..cfg.num_resamples {
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, resample as u64));
        let mut sum_b = 0.0f64;
        let mut sum_a = 0.0f64;
        let mut n = 0usize;
        for _ in 0..num_clusters {
            let c = rng.gen_range(0..num_clusters);
            sum_b += sums_before[c];
            sum_a += sums_after[c];
            n += counts[c];
        }
        let delta = (sum_a - sum_b) / n as f64;
        if delta <= 0.0 {
            at_or_below += 1;
        }
        if delta >= 0.0 {
            at_or_above += 1;
        }
        deltas.push(delta);
    }
    deltas.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let tail = (1.0 - cfg.confidence) / 2.0;
    let ci_low = crate::gcb::quantile_sorted(&deltas, tail);
    let ci_high = crate::gcb::quantile_sorted(&deltas, 1.0 - tail);

    let r = cfg.num_resamples as f64;
    let frac_below = at_or_below as f64 / r;
    let frac_above = at_or_above as f64 / r;
    let p_value = (2.0 * frac_below.min(frac_above)).clamp(1.0 / r, 1.0);

    Ok(BootstrapResult {
        point_delta,
        ci_low,
        ci_high,
        p_value,
    })
}

fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        // Mid-rank for the tie run [i, j].
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with mid-rank ties: the Pearson correlation of
/// the average-ranked values. Errors when either input has zero variance.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(AuditError::LengthMismatch {
            context: "spearman inputs",
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(AuditError::InvalidConfig(
            "spearman needs at least two observations".into(),
        ));
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 {
        return Err(AuditError::ZeroVariance("the first input"));
    }
    if vy == 0.0 {
        return Err(AuditError::ZeroVariance("the second input"));
    }
    Ok(cov / (vx * vy).sqrt())
}

/// Spearman correlation between each query's ground-truth bucket size and
/// the indicator of a correction-induced Top-1 gain (rank above 1 before,
/// rank 1 after). One reading of "inflation correlates with bucket size";
/// undefined (zero variance) when no query flips.
pub fn bucket_size_inflation_correlation(
    bundle: &AuditBundle,
    before: &RankVector,
    after: &RankVector,
) -> Result<f64> {
    if before.len() != bundle.queries().len() || after.len() != bundle.queries().len() {
        return Err(AuditError::LengthMismatch {
            context: "inflation correlation inputs",
            left: before.len(),
            right: after.len(),
        });
    }
    let pool = bundle.candidates();
    let queries = bundle.queries();
    let sizes: Vec<f64> = (0..queries.len())
        .map(|w| pool.bucket_members(pool.bucket_of(queries.target_of(w))).len() as f64)
        .collect();
    let gains: Vec<f64> = (0..queries.len())
        .map(|w| {
            if before.get(w) > 1 && after.get(w) == 1 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    spearman(&sizes, &gains)
}
