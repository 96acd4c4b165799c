//! Audit drivers and report types: the full audit, the gain and pool-size
//! sweeps, perturbation and attenuation series, and report emission.
//!
//! Every report embeds its resolved configuration and a schema version so
//! outputs are attributable; identical inputs and seeds produce
//! byte-identical reports.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::bundle::{validate_bundle, AuditBundle, CandidatePool, LogitMatrix, QuerySet};
use crate::error::{AuditError, Result};
use crate::gcb::{GcbConfig, GcbRun};
use crate::oracle::{decompose_headroom, oracle_within_bucket, HeadroomDecomposition};
use crate::perturb::{
    attenuation_sweep, perturb_groups, AttenuationPoint, PerturbConfig, PerturbKind,
};
use crate::scoring::{
    compute_metrics, compute_ranks, compute_ranks_pruned, default_rank_intervals, flip_analysis,
    top1_of_row, FlipCounts, MetricsReport, RankBucketRow, DEFAULT_KS,
};
use crate::seed::mix;
use crate::stats::{paired_cluster_bootstrap, BootstrapConfig, BootstrapResult, MetricKind};

pub const SCHEMA_VERSION: u32 = 1;

/// Which correction the audit contrasts against the baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GcbVariant {
    #[default]
    Full,
    /// Singleton pooling: removes the cross-window contribution.
    Single,
    /// Candidates outside the selected buckets are dropped from ranking.
    Prune,
}

/// Options for the full audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditOptions {
    pub ks: Vec<usize>,
    pub variant: GcbVariant,
    /// Run paired cluster bootstraps for the R@1 and MRR deltas.
    pub bootstrap: Option<BootstrapConfig>,
}

impl Default for AuditOptions {
    fn default() -> Self {
        Self {
            ks: DEFAULT_KS.to_vec(),
            variant: GcbVariant::Full,
            bootstrap: None,
        }
    }
}

/// Shape summary embedded in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleShape {
    pub num_queries: usize,
    pub num_candidates: usize,
    pub num_buckets: usize,
    pub num_groups: usize,
}

impl BundleShape {
    fn of(bundle: &AuditBundle) -> Self {
        Self {
            num_queries: bundle.queries().len(),
            num_candidates: bundle.candidates().num_candidates(),
            num_buckets: bundle.candidates().num_buckets(),
            num_groups: bundle.queries().num_groups(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub r_at_k: BTreeMap<usize, f64>,
    pub mrr: f64,
    pub medr: f64,
}

fn delta_of(base: &MetricsReport, after: &MetricsReport) -> DeltaReport {
    DeltaReport {
        r_at_k: base
            .r_at_k
            .keys()
            .map(|&k| (k, after.r_at(k) - base.r_at(k)))
            .collect(),
        mrr: after.mrr - base.mrr,
        medr: after.medr - base.medr,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub metrics: MetricsReport,
    pub base_r1: f64,
    pub oracle_r1: f64,
    pub headroom: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSection {
    pub config: BootstrapConfig,
    pub delta_r1: BootstrapResult,
    pub delta_mrr: BootstrapResult,
}

/// The full audit over one bundle: baseline and corrected metrics, deltas,
/// flip and rank-interval diagnostics, the oracle view, and the headroom
/// decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub shape: BundleShape,
    pub gcb: GcbConfig,
    pub options: AuditOptions,
    pub base: MetricsReport,
    pub corrected: MetricsReport,
    pub delta: DeltaReport,
    pub flips: FlipCounts,
    pub rank_buckets: Vec<RankBucketRow>,
    pub oracle: OracleSummary,
    pub headroom: HeadroomDecomposition,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSection>,
}

/// Run the audit with the requested variant.
pub fn run_audit(
    bundle: &AuditBundle,
    gcb_cfg: &GcbConfig,
    options: &AuditOptions,
) -> Result<AuditReport> {
    let base_ranks = compute_ranks(bundle.logits(), bundle.queries());
    let after_ranks = match options.variant {
        GcbVariant::Full => {
            let run = GcbRun::grouped(bundle, gcb_cfg)?;
            compute_ranks(&run.corrected_matrix(bundle), bundle.queries())
        }
        GcbVariant::Single => {
            let run = GcbRun::singleton(bundle, gcb_cfg)?;
            compute_ranks(&run.corrected_matrix(bundle), bundle.queries())
        }
        GcbVariant::Prune => {
            let run = GcbRun::grouped(bundle, gcb_cfg)?;
            compute_ranks_pruned(&run.pruned_matrix(bundle), bundle.queries())
        }
    };

    let base = compute_metrics(&base_ranks, &options.ks)?;
    let corrected = compute_metrics(&after_ranks, &options.ks)?;
    let delta = delta_of(&base, &corrected);
    let flips = flip_analysis(&base_ranks, &after_ranks)?;
    let rank_buckets = crate::scoring::rank_bucket_correction(
        &base_ranks,
        &after_ranks,
        &default_rank_intervals(),
    )?;
    let oracle_full = oracle_within_bucket(bundle)?;
    let oracle = OracleSummary {
        metrics: oracle_full.metrics,
        base_r1: oracle_full.base_r1,
        oracle_r1: oracle_full.oracle_r1,
        headroom: oracle_full.headroom,
    };
    let headroom = decompose_headroom(bundle, gcb_cfg)?;
    let bootstrap = match &options.bootstrap {
        None => None,
        Some(cfg) => Some(BootstrapSection {
            config: *cfg,
            delta_r1: paired_cluster_bootstrap(
                &base_ranks,
                &after_ranks,
                bundle.queries().group_map(),
                MetricKind::RAtK(1),
                cfg,
            )?,
            delta_mrr: paired_cluster_bootstrap(
                &base_ranks,
                &after_ranks,
                bundle.queries().group_map(),
                MetricKind::Mrr,
                cfg,
            )?,
        }),
    };

    Ok(AuditReport {
        schema_version: SCHEMA_VERSION,
        shape: BundleShape::of(bundle),
        gcb: *gcb_cfg,
        options: options.clone(),
        base,
        corrected,
        delta,
        flips,
        rank_buckets,
        oracle,
        headroom,
        bootstrap,
    })
}

/// One row of the gain sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSweepRow {
    pub gamma: f64,
    pub delta_r1: f64,
    pub bad_to_good: usize,
    pub good_to_bad: usize,
    /// `b2g / g2b`; `None` when there are no regressions.
    pub correction_ratio: Option<f64>,
    /// Regressions as a fraction of baseline hits; `None` without hits.
    pub g2b_over_base_hits: Option<f64>,
    /// Fraction of queries whose Top-1 candidate changed.
    pub top1_changed: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GammaSweepReport {
    pub schema_version: u32,
    pub shape: BundleShape,
    pub gcb: GcbConfig,
    pub rows: Vec<GammaSweepRow>,
}

/// Vary only the additive gain over one pooled run: supports, selection,
/// grouping, and every other hyperparameter stay fixed.
pub fn run_gamma_sweep(
    bundle: &AuditBundle,
    gcb_cfg: &GcbConfig,
    gammas: &[f64],
) -> Result<GammaSweepReport> {
    let run = GcbRun::grouped(bundle, gcb_cfg)?;
    let base_ranks = compute_ranks(bundle.logits(), bundle.queries());
    let base_r1 = compute_metrics(&base_ranks, &[1])?.r_at(1);
    let base_hits = base_ranks.as_slice().iter().filter(|&&r| r == 1).count();
    let base_top1: Vec<usize> = (0..bundle.queries().len())
        .map(|w| top1_of_row(bundle.logits().row(w)))
        .collect();

    let mut rows = Vec::with_capacity(gammas.len());
    for &gamma in gammas {
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return Err(AuditError::InvalidConfig("gamma must be finite and >= 0".into()));
        }
        let corrected = run.corrected_matrix_with_gamma(bundle, gamma);
        let after_ranks = compute_ranks(&corrected, bundle.queries());
        let after_r1 = compute_metrics(&after_ranks, &[1])?.r_at(1);
        let flips = flip_analysis(&base_ranks, &after_ranks)?;
        let changed = (0..bundle.queries().len())
            .filter(|&w| top1_of_row(corrected.row(w)) != base_top1[w])
            .count();
        rows.push(GammaSweepRow {
            gamma,
            delta_r1: after_r1 - base_r1,
            bad_to_good: flips.bad_to_good,
            good_to_bad: flips.good_to_bad,
            correction_ratio: (flips.good_to_bad > 0)
                .then(|| flips.bad_to_good as f64 / flips.good_to_bad as f64),
            g2b_over_base_hits: (base_hits > 0)
                .then(|| flips.good_to_bad as f64 / base_hits as f64),
            top1_changed: changed as f64 / bundle.queries().len() as f64,
        });
    }
    Ok(GammaSweepReport {
        schema_version: SCHEMA_VERSION,
        shape: BundleShape::of(bundle),
        gcb: *gcb_cfg,
        rows,
    })
}

/// One row of the candidate-pool-size sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolSweepRow {
    pub size: usize,
    pub num_buckets: usize,
    pub base: MetricsReport,
    pub corrected: MetricsReport,
    pub delta_r1: f64,
    pub delta_mrr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoolSweepReport {
    pub schema_version: u32,
    pub shape: BundleShape,
    pub gcb: GcbConfig,
    pub seed: u64,
    pub rows: Vec<PoolSweepRow>,
}

/// Subsample the candidate pool to the requested size with every target
/// retained, rebuild the bucket structure over the survivors, and recompute
/// the audit metrics.
pub fn subsample_pool(bundle: &AuditBundle, size: usize, seed: u64) -> Result<AuditBundle> {
    let n = bundle.candidates().num_candidates();
    if size > n {
        return Err(AuditError::InvalidConfig(format!(
            "pool size {size} exceeds candidate count {n}"
        )));
    }
    let mut targets: Vec<usize> = bundle.queries().targets().to_vec();
    targets.sort_unstable();
    targets.dedup();
    if size < targets.len() {
        return Err(AuditError::PoolSizeTooSmall {
            size,
            num_targets: targets.len(),
        });
    }
    let is_target = {
        let mut mask = vec![false; n];
        for &t in &targets {
            mask[t] = true;
        }
        mask
    };
    let mut rest: Vec<usize> = (0..n).filter(|&j| !is_target[j]).collect();
    let need = size - targets.len();
    // Partial Fisher-Yates: the first `need` entries are a uniform sample
    // without replacement.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in 0..need {
        let j = rng.gen_range(i..rest.len());
        rest.swap(i, j);
    }
    let mut kept: Vec<usize> = targets.iter().copied().chain(rest[..need].iter().copied()).collect();
    kept.sort_unstable();

    let mut new_index = vec![usize::MAX; n];
    for (new, &old) in kept.iter().enumerate() {
        new_index[old] = new;
    }
    // Compact the surviving bucket ids in ascending order.
    let pool = bundle.candidates();
    let mut old_buckets: Vec<usize> = kept.iter().map(|&j| pool.bucket_of(j)).collect();
    let mut sorted_buckets = old_buckets.clone();
    sorted_buckets.sort_unstable();
    sorted_buckets.dedup();
    let bucket_relabel: std::collections::HashMap<usize, usize> = sorted_buckets
        .iter()
        .enumerate()
        .map(|(new, &old)| (old, new))
        .collect();
    for b in &mut old_buckets {
        *b = bucket_relabel[b];
    }
    let mut new_pool = CandidatePool::new(old_buckets, sorted_buckets.len())?;
    if let Some(stimulus) = pool.stimulus() {
        new_pool =
            new_pool.with_stimulus(kept.iter().map(|&j| stimulus[j].clone()).collect())?;
    }

    let queries = bundle.queries();
    let new_targets: Vec<usize> = queries.targets().iter().map(|&t| new_index[t]).collect();
    let mut new_queries = QuerySet::new(new_targets, queries.group_map().to_vec())?;
    if let Some(stories) = queries.story_map() {
        new_queries = new_queries.with_stories(stories.to_vec())?;
    }
    if let Some(orders) = queries.order_map() {
        new_queries = new_queries.with_order(orders.to_vec())?;
    }
    if let Some(keys) = queries.stimulus_keys() {
        new_queries = new_queries.with_stimulus_keys(keys.to_vec())?;
    }

    let logits = bundle.logits();
    let mut values = Vec::with_capacity(logits.num_queries() * kept.len());
    for w in 0..logits.num_queries() {
        let row = logits.row(w);
        values.extend(kept.iter().map(|&j| row[j]));
    }
    let new_logits = LogitMatrix::new(values, logits.num_queries(), kept.len())?;
    validate_bundle(new_logits, new_pool, new_queries)
}

/// Audit the bundle at each pool size; size `i` samples from the sub-seed
/// keyed by (seed, i).
pub fn run_pool_sweep(
    bundle: &AuditBundle,
    gcb_cfg: &GcbConfig,
    sizes: &[usize],
    seed: u64,
) -> Result<PoolSweepReport> {
    let mut rows = Vec::with_capacity(sizes.len());
    for (i, &size) in sizes.iter().enumerate() {
        let sub = subsample_pool(bundle, size, mix(seed, i as u64))?;
        let base_ranks = compute_ranks(sub.logits(), sub.queries());
        let corrected = crate::gcb::apply_gcb(&sub, gcb_cfg)?;
        let after_ranks = compute_ranks(&corrected, sub.queries());
        let base = compute_metrics(&base_ranks, &DEFAULT_KS)?;
        let corrected = compute_metrics(&after_ranks, &DEFAULT_KS)?;
        rows.push(PoolSweepRow {
            size,
            num_buckets: sub.candidates().num_buckets(),
            delta_r1: corrected.r_at(1) - base.r_at(1),
            delta_mrr: corrected.mrr - base.mrr,
            base,
            corrected,
        });
    }
    Ok(PoolSweepReport {
        schema_version: SCHEMA_VERSION,
        shape: BundleShape::of(bundle),
        gcb: *gcb_cfg,
        seed,
        rows,
    })
}

/// One probability level of the grouping-perturbation series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbSeriesRow {
    pub p: f64,
    pub moved: usize,
    pub skipped: usize,
    pub base_r1: f64,
    pub gcb_r1: f64,
    pub delta_r1: f64,
    pub base_mrr: f64,
    pub gcb_mrr: f64,
    pub delta_mrr: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerturbSeriesReport {
    pub schema_version: u32,
    pub shape: BundleShape,
    pub gcb: GcbConfig,
    pub kind: PerturbKind,
    pub seed: u64,
    pub rows: Vec<PerturbSeriesRow>,
}

/// Audit the bundle under perturbed groupings. Base metrics are computed
/// on the untouched logits and targets, so they are identical in every row;
/// only the pooled correction responds to the grouping.
pub fn run_perturb_series(
    bundle: &AuditBundle,
    gcb_cfg: &GcbConfig,
    kind: PerturbKind,
    ps: &[f64],
    seed: u64,
) -> Result<PerturbSeriesReport> {
    let base_ranks = compute_ranks(bundle.logits(), bundle.queries());
    let base = compute_metrics(&base_ranks, &DEFAULT_KS)?;
    let mut rows = Vec::with_capacity(ps.len());
    for (i, &p) in ps.iter().enumerate() {
        let outcome = perturb_groups(
            bundle.queries(),
            &PerturbConfig {
                kind,
                p,
                seed: mix(seed, i as u64),
            },
        )?;
        let perturbed = bundle.with_queries(outcome.queries)?;
        let corrected = crate::gcb::apply_gcb(&perturbed, gcb_cfg)?;
        let after_ranks = compute_ranks(&corrected, perturbed.queries());
        let gcb = compute_metrics(&after_ranks, &DEFAULT_KS)?;
        rows.push(PerturbSeriesRow {
            p,
            moved: outcome.moved,
            skipped: outcome.skipped,
            base_r1: base.r_at(1),
            gcb_r1: gcb.r_at(1),
            delta_r1: gcb.r_at(1) - base.r_at(1),
            base_mrr: base.mrr,
            gcb_mrr: gcb.mrr,
            delta_mrr: gcb.mrr - base.mrr,
        });
    }
    Ok(PerturbSeriesReport {
        schema_version: SCHEMA_VERSION,
        shape: BundleShape::of(bundle),
        gcb: *gcb_cfg,
        kind,
        seed,
        rows,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttenuationReport {
    pub schema_version: u32,
    pub shape: BundleShape,
    pub gcb: GcbConfig,
    pub seed: u64,
    pub rows: Vec<AttenuationPoint>,
}

/// Attenuation sweep wrapped in a report envelope.
pub fn run_attenuation(
    bundle: &AuditBundle,
    gcb_cfg: &GcbConfig,
    alphas: &[f64],
    seed: u64,
) -> Result<AttenuationReport> {
    Ok(AttenuationReport {
        schema_version: SCHEMA_VERSION,
        shape: BundleShape::of(bundle),
        gcb: *gcb_cfg,
        seed,
        rows: attenuation_sweep(bundle, gcb_cfg, alphas, seed)?,
    })
}

/// Output format for report emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Json,
    Csv,
}

/// A serializable report, optionally with a CSV rendering for the
/// table-shaped outputs.
pub trait Report: Serialize {
    fn csv(&self) -> Option<String> {
        None
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

impl Report for AuditReport {}
impl Report for crate::opcount::OpCountReport {}

impl Report for GammaSweepReport {
    fn csv(&self) -> Option<String> {
        let mut out =
            String::from("gamma,delta_r1,bad_to_good,good_to_bad,correction_ratio,g2b_over_base_hits,top1_changed\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.gamma,
                row.delta_r1,
                row.bad_to_good,
                row.good_to_bad,
                fmt_opt(row.correction_ratio),
                fmt_opt(row.g2b_over_base_hits),
                row.top1_changed
            ));
        }
        Some(out)
    }
}

impl Report for PoolSweepReport {
    fn csv(&self) -> Option<String> {
        let mut out = String::from("size,num_buckets,base_r1,gcb_r1,delta_r1,base_mrr,gcb_mrr,delta_mrr\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.size,
                row.num_buckets,
                row.base.r_at(1),
                row.corrected.r_at(1),
                row.delta_r1,
                row.base.mrr,
                row.corrected.mrr,
                row.delta_mrr
            ));
        }
        Some(out)
    }
}

impl Report for PerturbSeriesReport {
    fn csv(&self) -> Option<String> {
        let mut out =
            String::from("p,moved,skipped,base_r1,gcb_r1,delta_r1,base_mrr,gcb_mrr,delta_mrr\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row.p,
                row.moved,
                row.skipped,
                row.base_r1,
                row.gcb_r1,
                row.delta_r1,
                row.base_mrr,
                row.gcb_mrr,
                row.delta_mrr
            ));
        }
        Some(out)
    }
}

impl Report for AttenuationReport {
    fn csv(&self) -> Option<String> {
        let mut out = String::from("alpha,base_r1,gcb_r1,delta_r1,base_mrr,gcb_mrr,delta_mrr\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                row.alpha, row.base_r1, row.gcb_r1, row.delta_r1, row.base_mrr, row.gcb_mrr, row.delta_mrr
            ));
        }
        Some(out)
    }
}

/// Render a report to the writer with stable field ordering.
pub fn emit_report<R: Report>(report: &R, format: OutputFormat, out: &mut impl Write) -> Result<()> {
    let rendered = match format {
        OutputFormat::Json => {
            let mut s = serde_json::to_string_pretty(report)
                .map_err(|e| AuditError::InvalidConfig(e.to_string()))?;
            s.push('\n');
            s
        }
        OutputFormat::Csv => report.csv().ok_or(AuditError::UnsupportedFormat {
            format: "csv".into(),
        })?,
    };
    out.write_all(rendered.as_bytes()).map_err(|e| AuditError::Io {
        path: "<output>".into(),
        source: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn small_bundle() -> AuditBundle {
        generate(&SynthConfig {
            num_queries: 80,
            num_candidates: 60,
            num_buckets: 12,
            group_size: 8,
            num_stories: 2,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_gamma_audit_has_all_zero_deltas() {
        let bundle = small_bundle();
        let cfg = GcbConfig {
            gamma: 0.0,
            ..GcbConfig::default()
        };
        let report = run_audit(&bundle, &cfg, &AuditOptions::default()).unwrap();
        assert!(report.delta.r_at_k.values().all(|&d| d == 0.0));
        assert_eq!(report.delta.mrr, 0.0);
        assert_eq!(report.flips.net, 0);
    }

    #[test]
    fn positive_gain_on_planted_bundle() {
        let bundle = generate(&SynthConfig {
            num_queries: 400,
            num_candidates: 200,
            num_buckets: 20,
            group_size: 10,
            num_stories: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let report = run_audit(&bundle, &GcbConfig::default(), &AuditOptions::default()).unwrap();
        assert!(report.delta.r_at_k[&1] > 0.0, "delta = {:?}", report.delta);
        assert!(report.flips.net > 0);
    }

    #[test]
    fn single_query_bundle_report_is_well_formed() {
        let logits = LogitMatrix::new(vec![1.0, 3.0, 2.0], 1, 3).unwrap();
        let candidates = CandidatePool::new(vec![0, 0, 1], 2).unwrap();
        let queries = QuerySet::new(vec![2], vec![0]).unwrap();
        let bundle = validate_bundle(logits, candidates, queries).unwrap();
        let report = run_audit(&bundle, &GcbConfig::default(), &AuditOptions::default()).unwrap();
        assert_eq!(report.base.medr, 2.0);
        assert_eq!(report.shape.num_queries, 1);
    }

    #[test]
    fn gamma_sweep_zero_row_is_all_zero() {
        let bundle = small_bundle();
        let report = run_gamma_sweep(&bundle, &GcbConfig::default(), &[0.0]).unwrap();
        let row = &report.rows[0];
        assert_eq!(row.delta_r1, 0.0);
        assert_eq!((row.bad_to_good, row.good_to_bad), (0, 0));
        assert_eq!(row.correction_ratio, None);
        assert_eq!(row.top1_changed, 0.0);
    }

    #[test]
    fn gamma_sweep_top1_changes_monotone_on_planted_bundle() {
        let bundle = small_bundle();
        let report =
            run_gamma_sweep(&bundle, &GcbConfig::default(), &[0.4, 0.7, 1.4]).unwrap();
        let changed: Vec<f64> = report.rows.iter().map(|r| r.top1_changed).collect();
        assert!(changed[0] <= changed[1] && changed[1] <= changed[2], "{changed:?}");
    }

    #[test]
    fn full_size_pool_sweep_matches_direct_audit() {
        let bundle = small_bundle();
        let n = bundle.candidates().num_candidates();
        let sweep = run_pool_sweep(&bundle, &GcbConfig::default(), &[n], 123).unwrap();
        let audit = run_audit(&bundle, &GcbConfig::default(), &AuditOptions::default()).unwrap();
        assert_eq!(sweep.rows[0].base, audit.base);
        assert_eq!(sweep.rows[0].corrected, audit.corrected);
    }

    #[test]
    fn pool_sweep_rejects_sizes_below_target_count() {
        let bundle = small_bundle();
        let distinct = {
            let mut t = bundle.queries().targets().to_vec();
            t.sort_unstable();
            t.dedup();
            t.len()
        };
        let err = run_pool_sweep(&bundle, &GcbConfig::default(), &[distinct - 1], 3).unwrap_err();
        assert!(matches!(err, AuditError::PoolSizeTooSmall { .. }));
    }

    #[test]
    fn pool_at_target_count_contains_only_targets() {
        let bundle = generate(&SynthConfig {
            num_queries: 40,
            num_candidates: 60,
            num_buckets: 4,
            group_size: 10,
            num_stories: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut targets = bundle.queries().targets().to_vec();
        targets.sort_unstable();
        targets.dedup();
        let sub = subsample_pool(&bundle, targets.len(), 9).unwrap();
        assert_eq!(sub.candidates().num_candidates(), targets.len());
        // Every surviving candidate is some query's target.
        let mut sub_targets = sub.queries().targets().to_vec();
        sub_targets.sort_unstable();
        sub_targets.dedup();
        assert_eq!(sub_targets.len(), sub.candidates().num_candidates());
    }

    #[test]
    fn perturb_series_base_metrics_are_invariant() {
        let bundle = small_bundle();
        let report = run_perturb_series(
            &bundle,
            &GcbConfig::default(),
            PerturbKind::RandomWithinStory,
            &[0.0, 0.5, 1.0],
            5,
        )
        .unwrap();
        let first = report.rows[0].base_r1;
        assert!(report.rows.iter().all(|r| r.base_r1 == first));
    }

    #[test]
    fn json_round_trip_is_byte_stable() {
        let bundle = small_bundle();
        let report = run_audit(&bundle, &GcbConfig::default(), &AuditOptions::default()).unwrap();
        let mut first = Vec::new();
        emit_report(&report, OutputFormat::Json, &mut first).unwrap();
        let value: serde_json::Value = serde_json::from_slice(&first).unwrap();
        let mut second = serde_json::to_string_pretty(&value).unwrap();
        second.push('\n');
        assert_eq!(String::from_utf8(first).unwrap(), second);
    }

    #[test]
    fn csv_has_one_row_per_gamma() {
        let bundle = small_bundle();
        let report = run_gamma_sweep(&bundle, &GcbConfig::default(), &[0.0, 0.7, 1.4]).unwrap();
        let mut out = Vec::new();
        emit_report(&report, OutputFormat::Csv, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("gamma,"));
    }

    #[test]
    fn csv_on_audit_report_is_unsupported() {
        let bundle = small_bundle();
        let report = run_audit(&bundle, &GcbConfig::default(), &AuditOptions::default()).unwrap();
        let mut out = Vec::new();
        assert!(matches!(
            emit_report(&report, OutputFormat::Csv, &mut out),
            Err(AuditError::UnsupportedFormat { .. })
        ));
    }
}
