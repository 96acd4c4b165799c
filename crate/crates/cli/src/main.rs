//! Command-line surface of the audit toolkit.
//!
//! Subcommands: `validate`, `metrics`, `gcb`, `oracle`, `decompose`,
//! `perturb`, `attenuate`, `bootstrap`, `gamma-sweep`, `pool-sweep`,
//! `synth`, `opcount`. Reports go to stdout or `--out` as JSON (default)
//! or CSV for the table-shaped sweeps. Failures exit nonzero with a
//! machine-readable error object on stderr.

use std::fs::File;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gcb_audit::bundle::AuditBundle;
use gcb_audit::error::{AuditError, Result};
use gcb_audit::gcb::{Aggregator, GcbConfig, GcbRun, Normalizer};
use gcb_audit::opcount::{opcount, OpCountDims};
use gcb_audit::perturb::PerturbKind;
use gcb_audit::report::{
    emit_report, run_attenuation, run_audit, run_gamma_sweep, run_perturb_series, run_pool_sweep,
    AuditOptions, BundleShape, GcbVariant, OutputFormat, Report, SCHEMA_VERSION,
};
use gcb_audit::scoring::{compute_bundle_ranks, compute_metrics, compute_ranks, MetricsReport};
use gcb_audit::stats::{paired_cluster_bootstrap, BootstrapConfig, BootstrapResult, MetricKind};
use gcb_audit::synth::{generate, SynthConfig};

#[derive(Parser)]
#[command(name = "gcb-audit", version, about = "Score-space audit of closed-set retrieval logits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct BundleArgs {
    /// Binary logit matrix (GCBL format).
    #[arg(long)]
    logits: PathBuf,
    /// Candidate manifest (JSON lines).
    #[arg(long)]
    candidates: PathBuf,
    /// Query manifest (JSON lines).
    #[arg(long)]
    queries: PathBuf,
}

impl BundleArgs {
    fn load(&self) -> Result<AuditBundle> {
        gcb_audit::io::load_bundle(&self.logits, &self.candidates, &self.queries)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum NormalizerArg {
    None,
    BucketSqrt,
    BucketCount,
    KeptCount,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregatorArg {
    MeanTopM,
    LseTopM,
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Full,
    Single,
    Prune,
}

#[derive(Clone, Copy, ValueEnum)]
enum KindArg {
    NeighbourOnce,
    RandomWithinStory,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => OutputFormat::Json,
            FormatArg::Csv => OutputFormat::Csv,
        }
    }
}

/// Correction hyperparameters: a JSON config file, inline overrides, or the
/// fixed default setting.
#[derive(Args)]
struct GcbArgs {
    /// JSON file holding a GcbConfig; inline flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Top-K retention count.
    #[arg(long)]
    k: Option<usize>,
    /// Gate quantile in (0, 1).
    #[arg(long)]
    q: Option<f64>,
    /// Evidence count for the bucket aggregation.
    #[arg(long)]
    m: Option<usize>,
    /// Number of biased buckets.
    #[arg(long)]
    s: Option<usize>,
    /// Bias scale.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long, value_enum)]
    normalizer: Option<NormalizerArg>,
    #[arg(long, value_enum)]
    aggregator: Option<AggregatorArg>,
    /// Disable the quantile gate.
    #[arg(long)]
    no_gate: bool,
    /// Keep raw logits instead of threshold-offset excess scores.
    #[arg(long)]
    no_threshold_offset: bool,
}

impl GcbArgs {
    fn resolve(&self) -> Result<GcbConfig> {
        let mut cfg = match &self.config {
            None => GcbConfig::default(),
            Some(path) => {
                let file = File::open(path).map_err(|e| AuditError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                serde_json::from_reader(file).map_err(|e| AuditError::Parse {
                    path: path.display().to_string(),
                    line: 0,
                    message: e.to_string(),
                })?
            }
        };
        if let Some(k) = self.k {
            cfg.k = k;
        }
        if let Some(q) = self.q {
            cfg.q = q;
        }
        if let Some(m) = self.m {
            cfg.m = m;
        }
        if let Some(s) = self.s {
            cfg.s = s;
        }
        if let Some(gamma) = self.gamma {
            cfg.gamma = gamma;
        }
        if let Some(n) = self.normalizer {
            cfg.normalizer = match n {
                NormalizerArg::None => Normalizer::None,
                NormalizerArg::BucketSqrt => Normalizer::BucketSqrt,
                NormalizerArg::BucketCount => Normalizer::BucketCount,
                NormalizerArg::KeptCount => Normalizer::KeptCount,
            };
        }
        if let Some(a) = self.aggregator {
            cfg.aggregator = match a {
                AggregatorArg::MeanTopM => Aggregator::MeanTopM,
                AggregatorArg::LseTopM => Aggregator::LseTopM,
            };
        }
        if self.no_gate {
            cfg.gate_enabled = false;
        }
        if self.no_threshold_offset {
            cfg.subtract_threshold = false;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct OutputArgs {
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
}

impl OutputArgs {
    fn emit<R: Report>(&self, report: &R) -> Result<()> {
        match &self.out {
            None => {
                let stdout = std::io::stdout();
                emit_report(report, self.format.into(), &mut stdout.lock())
            }
            Some(path) => {
                let mut file = File::create(path).map_err(|e| AuditError::Io {
                    path: path.display().to_string(),
                    source: e,
                })?;
                emit_report(report, self.format.into(), &mut file)
            }
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Load and cross-validate a bundle.
    Validate {
        #[command(flatten)]
        bundle: BundleArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Baseline retrieval metrics.
    Metrics {
        #[command(flatten)]
        bundle: BundleArgs,
        /// Recall cutoffs.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10])]
        ks: Vec<usize>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Full audit: base vs corrected metrics, flips, oracle, decomposition.
    Gcb {
        #[command(flatten)]
        bundle: BundleArgs,
        #[command(flatten)]
        gcb: GcbArgs,
        #[arg(long, value_enum, default_value = "full")]
        variant: VariantArg,
        /// Recall cutoffs.
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 5, 10])]
        ks: Vec<usize>,
        /// Attach paired cluster bootstrap intervals with this many resamples.
        #[arg(long)]
        bootstrap: Option<usize>,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the corrected (or pruned) logit matrix here.
        #[arg(long)]
        emit_logits: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Within-bucket oracle diagnostic.
    Oracle {
        #[command(flatten)]
        bundle: BundleArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Oracle-vs-correction headroom decomposition.
    Decompose {
        #[command(flatten)]
        bundle: BundleArgs,
        #[command(flatten)]
        gcb: GcbArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Audit under perturbed query-to-group assignments.
    Perturb {
        #[command(flatten)]
        bundle: BundleArgs,
        #[command(flatten)]
        gcb: GcbArgs,
        #[arg(long, value_enum)]
        kind: KindArg,
        /// Perturbation probabilities, one series row each.
        #[arg(long, value_delimiter = ',', required = true)]
        p: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the perturbed query manifest (single probability only).
        #[arg(long)]
        emit_queries: Option<PathBuf>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Audit under standardized row-permutation attenuation.
    Attenuate {
        #[command(flatten)]
        bundle: BundleArgs,
        #[command(flatten)]
        gcb: GcbArgs,
        /// Evidence fractions, one series row each.
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Paired sentence-cluster bootstrap for the base-vs-corrected delta.
    Bootstrap {
        #[command(flatten)]
        bundle: BundleArgs,
        #[command(flatten)]
        gcb: GcbArgs,
        /// Metric to compare: r@K (e.g. r@1) or mrr.
        #[arg(long, default_value = "r@1", value_parser = parse_metric)]
        metric: MetricKind,
        #[arg(long, default_value_t = 10_000)]
        resamples: usize,
        #[arg(long, default_value_t = 0.95)]
        confidence: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Vary only the bias scale over one pooled run.
    GammaSweep {
        #[command(flatten)]
        bundle: BundleArgs,
        #[command(flatten)]
        gcb: GcbArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        gammas: Vec<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Audit across subsampled candidate-pool sizes (targets retained).
    PoolSweep {
        #[command(flatten)]
        bundle: BundleArgs,
        #[command(flatten)]
        gcb: GcbArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Generate a planted-signal bundle and write its three files.
    Synth {
        /// Output path for the logit matrix.
        #[arg(long)]
        logits: PathBuf,
        /// Output path for the candidate manifest.
        #[arg(long)]
        candidates: PathBuf,
        /// Output path for the query manifest.
        #[arg(long)]
        queries: PathBuf,
        #[arg(long, default_value_t = 2000)]
        num_queries: usize,
        #[arg(long, default_value_t = 500)]
        num_candidates: usize,
        #[arg(long, default_value_t = 50)]
        num_buckets: usize,
        #[arg(long, default_value_t = 10)]
        group_size: usize,
        #[arg(long, default_value_t = 4)]
        num_stories: usize,
        #[arg(long, default_value_t = 2.0)]
        target_strength: f64,
        #[arg(long, default_value_t = 1.0)]
        bucket_affinity: f64,
        #[arg(long, default_value_t = 1.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Exact similarity MACs and optional correction counters.
    Opcount {
        /// Query-window count Q.
        #[arg(long)]
        queries_count: u64,
        /// Candidate count N.
        #[arg(long)]
        candidates_count: u64,
        /// Feature dimension D.
        #[arg(long)]
        feature_dim: u64,
        /// Time steps T.
        #[arg(long)]
        time_steps: u64,
        /// Bundle files for the correction counters (all three or none).
        #[arg(long)]
        logits: Option<PathBuf>,
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long)]
        queries: Option<PathBuf>,
        #[command(flatten)]
        gcb: GcbArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

fn parse_metric(s: &str) -> std::result::Result<MetricKind, String> {
    let lower = s.to_ascii_lowercase();
    if lower == "mrr" {
        return Ok(MetricKind::Mrr);
    }
    if let Some(k) = lower.strip_prefix("r@") {
        let k: usize = k
            .parse()
            .map_err(|_| format!("bad recall cutoff in {s:?}"))?;
        if k == 0 {
            return Err("recall cutoff must be positive".into());
        }
        return Ok(MetricKind::RAtK(k));
    }
    Err(format!("unknown metric {s:?}; expected r@K or mrr"))
}

#[derive(Serialize)]
struct ValidationReport {
    schema_version: u32,
    valid: bool,
    shape: BundleShape,
    has_stories: bool,
    has_order: bool,
    has_stimulus_keys: bool,
}

impl Report for ValidationReport {}

#[derive(Serialize)]
struct MetricsCommandReport {
    schema_version: u32,
    shape: BundleShape,
    ks: Vec<usize>,
    metrics: MetricsReport,
}

impl Report for MetricsCommandReport {}

#[derive(Serialize)]
struct OracleCommandReport {
    schema_version: u32,
    shape: BundleShape,
    metrics: MetricsReport,
    base_r1: f64,
    oracle_r1: f64,
    headroom: f64,
}

impl Report for OracleCommandReport {}

#[derive(Serialize)]
struct DecomposeReport {
    schema_version: u32,
    shape: BundleShape,
    gcb: GcbConfig,
    decomposition: gcb_audit::HeadroomDecomposition,
}

impl Report for DecomposeReport {}

#[derive(Serialize)]
struct BootstrapReport {
    schema_version: u32,
    shape: BundleShape,
    gcb: GcbConfig,
    metric: MetricKind,
    config: BootstrapConfig,
    result: BootstrapResult,
}

impl Report for BootstrapReport {}

#[derive(Serialize)]
struct SynthReport {
    schema_version: u32,
    config: SynthConfig,
    shape: BundleShape,
    logits: String,
    candidates: String,
    queries: String,
}

impl Report for SynthReport {}

fn shape_of(bundle: &AuditBundle) -> BundleShape {
    BundleShape {
        num_queries: bundle.queries().len(),
        num_candidates: bundle.candidates().num_candidates(),
        num_buckets: bundle.candidates().num_buckets(),
        num_groups: bundle.queries().num_groups(),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Validate { bundle, output } => {
            let b = bundle.load()?;
            output.emit(&ValidationReport {
                schema_version: SCHEMA_VERSION,
                valid: true,
                shape: shape_of(&b),
                has_stories: b.queries().story_map().is_some(),
                has_order: b.queries().order_map().is_some(),
                has_stimulus_keys: b.queries().stimulus_keys().is_some(),
            })
        }
        Command::Metrics { bundle, ks, output } => {
            let b = bundle.load()?;
            let metrics = compute_metrics(&compute_bundle_ranks(&b), &ks)?;
            output.emit(&MetricsCommandReport {
                schema_version: SCHEMA_VERSION,
                shape: shape_of(&b),
                ks,
                metrics,
            })
        }
        Command::Gcb {
            bundle,
            gcb,
            variant,
            ks,
            bootstrap,
            confidence,
            seed,
            emit_logits,
            output,
        } => {
            let b = bundle.load()?;
            let cfg = gcb.resolve()?;
            let variant = match variant {
                VariantArg::Full => GcbVariant::Full,
                VariantArg::Single => GcbVariant::Single,
                VariantArg::Prune => GcbVariant::Prune,
            };
            let options = AuditOptions {
                ks,
                variant,
                bootstrap: bootstrap.map(|num_resamples| BootstrapConfig {
                    num_resamples,
                    confidence,
                    seed,
                }),
            };
            let report = run_audit(&b, &cfg, &options)?;
            if let Some(path) = emit_logits {
                let matrix = match variant {
                    GcbVariant::Full => GcbRun::grouped(&b, &cfg)?.corrected_matrix(&b),
                    GcbVariant::Single => GcbRun::singleton(&b, &cfg)?.corrected_matrix(&b),
                    GcbVariant::Prune => GcbRun::grouped(&b, &cfg)?.pruned_matrix(&b),
                };
                gcb_audit::io::write_logits(&matrix, &path)?;
            }
            output.emit(&report)
        }
        Command::Oracle { bundle, output } => {
            let b = bundle.load()?;
            let report = gcb_audit::oracle_within_bucket(&b)?;
            output.emit(&OracleCommandReport {
                schema_version: SCHEMA_VERSION,
                shape: shape_of(&b),
                metrics: report.metrics,
                base_r1: report.base_r1,
                oracle_r1: report.oracle_r1,
                headroom: report.headroom,
            })
        }
        Command::Decompose { bundle, gcb, output } => {
            let b = bundle.load()?;
            let cfg = gcb.resolve()?;
            output.emit(&DecomposeReport {
                schema_version: SCHEMA_VERSION,
                shape: shape_of(&b),
                gcb: cfg,
                decomposition: gcb_audit::decompose_headroom(&b, &cfg)?,
            })
        }
        Command::Perturb {
            bundle,
            gcb,
            kind,
            p,
            seed,
            emit_queries,
            output,
        } => {
            let b = bundle.load()?;
            let cfg = gcb.resolve()?;
            let kind = match kind {
                KindArg::NeighbourOnce => PerturbKind::NeighbourOnce,
                KindArg::RandomWithinStory => PerturbKind::RandomWithinStory,
            };
            if let Some(path) = emit_queries {
                if p.len() != 1 {
                    return Err(AuditError::InvalidConfig(
                        "--emit-queries requires exactly one probability".into(),
                    ));
                }
                let outcome = gcb_audit::perturb_groups(
                    b.queries(),
                    &gcb_audit::PerturbConfig { kind, p: p[0], seed },
                )?;
                gcb_audit::io::write_queries(&outcome.queries, &path)?;
            }
            output.emit(&run_perturb_series(&b, &cfg, kind, &p, seed)?)
        }
        Command::Attenuate {
            bundle,
            gcb,
            alphas,
            seed,
            output,
        } => {
            let b = bundle.load()?;
            let cfg = gcb.resolve()?;
            output.emit(&run_attenuation(&b, &cfg, &alphas, seed)?)
        }
        Command::Bootstrap {
            bundle,
            gcb,
            metric,
            resamples,
            confidence,
            seed,
            output,
        } => {
            let b = bundle.load()?;
            let cfg = gcb.resolve()?;
            let base = compute_bundle_ranks(&b);
            let corrected = compute_ranks(&gcb_audit::apply_gcb(&b, &cfg)?, b.queries());
            let boot_cfg = BootstrapConfig {
                num_resamples: resamples,
                confidence,
                seed,
            };
            let result = paired_cluster_bootstrap(
                &base,
                &corrected,
                b.queries().group_map(),
                metric,
                &boot_cfg,
            )?;
            output.emit(&BootstrapReport {
                schema_version: SCHEMA_VERSION,
                shape: shape_of(&b),
                gcb: cfg,
                metric,
                config: boot_cfg,
                result,
            })
        }
        Command::GammaSweep {
            bundle,
            gcb,
            gammas,
            output,
        } => {
            let b = bundle.load()?;
            let cfg = gcb.resolve()?;
            output.emit(&run_gamma_sweep(&b, &cfg, &gammas)?)
        }
        Command::PoolSweep {
            bundle,
            gcb,
            sizes,
            seed,
            output,
        } => {
            let b = bundle.load()?;
            let cfg = gcb.resolve()?;
            output.emit(&run_pool_sweep(&b, &cfg, &sizes, seed)?)
        }
        Command::Synth {
            logits,
            candidates,
            queries,
            num_queries,
            num_candidates,
            num_buckets,
            group_size,
            num_stories,
            target_strength,
            bucket_affinity,
            noise_sigma,
            seed,
            output,
        } => {
            let config = SynthConfig {
                num_queries,
                num_candidates,
                num_buckets,
                group_size,
                num_stories,
                target_strength,
                bucket_affinity,
                noise_sigma,
                seed,
            };
            let bundle = generate(&config)?;
            gcb_audit::io::save_bundle(&bundle, &logits, &candidates, &queries)?;
            output.emit(&SynthReport {
                schema_version: SCHEMA_VERSION,
                config,
                shape: shape_of(&bundle),
                logits: logits.display().to_string(),
                candidates: candidates.display().to_string(),
                queries: queries.display().to_string(),
            })
        }
        Command::Opcount {
            queries_count,
            candidates_count,
            feature_dim,
            time_steps,
            logits,
            candidates,
            queries,
            gcb,
            output,
        } => {
            let dims = OpCountDims {
                q: queries_count,
                n: candidates_count,
                d: feature_dim,
                t: time_steps,
            };
            let counters = match (logits, candidates, queries) {
                (Some(l), Some(c), Some(q)) => {
                    let b = gcb_audit::io::load_bundle(&l, &c, &q)?;
                    let cfg = gcb.resolve()?;
                    Some(GcbRun::grouped(&b, &cfg)?.counters(&b, &cfg))
                }
                (None, None, None) => None,
                _ => {
                    return Err(AuditError::InvalidConfig(
                        "provide all of --logits/--candidates/--queries or none".into(),
                    ))
                }
            };
            output.emit(&opcount(&dims, counters)?)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let object = serde_json::json!({
                "error": { "kind": err.kind(), "message": err.to_string() }
            });
            eprintln!("{object}");
            ExitCode::FAILURE
        }
    }
}
