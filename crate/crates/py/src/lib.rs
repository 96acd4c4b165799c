//! Python bindings: bundles, the bias configuration, and the audit
//! drivers. Reports cross the boundary as plain dicts/lists mirroring the
//! JSON report schema.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use std::path::PathBuf;

use gcb_audit::bundle::AuditBundle;
use gcb_audit::error::AuditError;
use gcb_audit::gcb::{Aggregator, GcbConfig, GcbRun, Normalizer};
use gcb_audit::perturb::PerturbKind;
use gcb_audit::report::{AuditOptions, GcbVariant};
use gcb_audit::scoring::{EmbeddingWindow, ScoringConfig, DEFAULT_KS};
use gcb_audit::stats::{BootstrapConfig, MetricKind};
use gcb_audit::synth::SynthConfig;

fn py_err(err: AuditError) -> PyErr {
    PyValueError::new_err(format!("[{}] {err}", err.kind()))
}

fn json_to_py(py: Python<'_>, value: &serde_json::Value) -> PyResult<Py<PyAny>> {
    Ok(match value {
        serde_json::Value::Null => py.None(),
        serde_json::Value::Bool(b) => b.into_pyobject(py)?.to_owned().unbind().into_any(),
        serde_json::Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_pyobject(py)?.unbind().into_any()
            } else if let Some(u) = n.as_u64() {
                u.into_pyobject(py)?.unbind().into_any()
            } else {
                n.as_f64().unwrap().into_pyobject(py)?.unbind().into_any()
            }
        }
        serde_json::Value::String(s) => s.into_pyobject(py)?.unbind().into_any(),
        serde_json::Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(json_to_py(py, item)?)?;
            }
            list.unbind().into_any()
        }
        serde_json::Value::Object(map) => {
            let dict = PyDict::new(py);
            for (key, item) in map {
                dict.set_item(key, json_to_py(py, item)?)?;
            }
            dict.unbind().into_any()
        }
    })
}

fn to_py_report<T: serde::Serialize>(py: Python<'_>, report: &T) -> PyResult<Py<PyAny>> {
    let value = serde_json::to_value(report)
        .map_err(|e| PyValueError::new_err(format!("serialization failed: {e}")))?;
    json_to_py(py, &value)
}

fn parse_metric(s: &str) -> PyResult<MetricKind> {
    let lower = s.to_ascii_lowercase();
    if lower == "mrr" {
        return Ok(MetricKind::Mrr);
    }
    if let Some(k) = lower.strip_prefix("r@") {
        if let Ok(k) = k.parse::<usize>() {
            if k > 0 {
                return Ok(MetricKind::RAtK(k));
            }
        }
    }
    Err(PyValueError::new_err(format!(
        "unknown metric {s:?}; expected 'r@K' or 'mrr'"
    )))
}

fn parse_kind(s: &str) -> PyResult<PerturbKind> {
    match s {
        "neighbour_once" => Ok(PerturbKind::NeighbourOnce),
        "random_within_story" => Ok(PerturbKind::RandomWithinStory),
        _ => Err(PyValueError::new_err(format!(
            "unknown perturbation kind {s:?}; expected 'neighbour_once' or 'random_within_story'"
        ))),
    }
}

/// Correction hyperparameters.
#[pyclass(name = "GcbConfig", module = "gcb_audit_py", from_py_object)]
#[derive(Clone)]
struct PyGcbConfig {
    inner: GcbConfig,
}

#[pymethods]
impl PyGcbConfig {
    #[new]
    #[pyo3(signature = (k=128, q=0.95, m=3, s=3, gamma=0.7, normalizer="bucket_sqrt", aggregator="mean_top_m", gate_enabled=true, subtract_threshold=true))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        k: usize,
        q: f64,
        m: usize,
        s: usize,
        gamma: f64,
        normalizer: &str,
        aggregator: &str,
        gate_enabled: bool,
        subtract_threshold: bool,
    ) -> PyResult<Self> {
        let normalizer = match normalizer {
            "none" => Normalizer::None,
            "bucket_sqrt" => Normalizer::BucketSqrt,
            "bucket_count" => Normalizer::BucketCount,
            "kept_count" => Normalizer::KeptCount,
            _ => {
                return Err(PyValueError::new_err(format!(
                    "unknown normalizer {normalizer:?}"
                )))
            }
        };
        let aggregator = match aggregator {
            "mean_top_m" => Aggregator::MeanTopM,
            "lse_top_m" => Aggregator::LseTopM,
            _ => {
                return Err(PyValueError::new_err(format!(
                    "unknown aggregator {aggregator:?}"
                )))
            }
        };
        let inner = GcbConfig {
            k,
            q,
            m,
            s,
            gamma,
            normalizer,
            aggregator,
            gate_enabled,
            subtract_threshold,
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py_report(py, &self.inner)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.inner)
    }
}

fn resolve_cfg(cfg: Option<PyGcbConfig>) -> GcbConfig {
    cfg.map_or_else(GcbConfig::default, |c| c.inner)
}

/// A validated (logits, candidates, queries) triple.
#[pyclass(name = "Bundle", module = "gcb_audit_py")]
struct PyBundle {
    inner: AuditBundle,
}

#[pymethods]
impl PyBundle {
    /// Generate a planted-signal bundle.
    #[staticmethod]
    #[pyo3(signature = (num_queries=2000, num_candidates=500, num_buckets=50, group_size=10, num_stories=4, target_strength=2.0, bucket_affinity=1.0, noise_sigma=1.0, seed=7))]
    #[allow(clippy::too_many_arguments)]
    fn synth(
        num_queries: usize,
        num_candidates: usize,
        num_buckets: usize,
        group_size: usize,
        num_stories: usize,
        target_strength: f64,
        bucket_affinity: f64,
        noise_sigma: f64,
        seed: u64,
    ) -> PyResult<Self> {
        let cfg = SynthConfig {
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
        Ok(Self {
            inner: gcb_audit::synth::generate(&cfg).map_err(py_err)?,
        })
    }

    /// Load a bundle from its three files.
    #[staticmethod]
    fn load(logits: PathBuf, candidates: PathBuf, queries: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: gcb_audit::io::load_bundle(&logits, &candidates, &queries).map_err(py_err)?,
        })
    }

    /// Write the bundle's three files.
    fn save(&self, logits: PathBuf, candidates: PathBuf, queries: PathBuf) -> PyResult<()> {
        gcb_audit::io::save_bundle(&self.inner, &logits, &candidates, &queries).map_err(py_err)
    }

    #[getter]
    fn num_queries(&self) -> usize {
        self.inner.queries().len()
    }

    #[getter]
    fn num_candidates(&self) -> usize {
        self.inner.candidates().num_candidates()
    }

    #[getter]
    fn num_buckets(&self) -> usize {
        self.inner.candidates().num_buckets()
    }

    #[getter]
    fn num_groups(&self) -> usize {
        self.inner.queries().num_groups()
    }

    /// Target ranks over the full pool.
    fn ranks(&self) -> Vec<u32> {
        gcb_audit::scoring::compute_bundle_ranks(&self.inner)
            .as_slice()
            .to_vec()
    }

    /// Baseline metrics at the given recall cutoffs.
    #[pyo3(signature = (ks=None))]
    fn base_metrics(&self, py: Python<'_>, ks: Option<Vec<usize>>) -> PyResult<Py<PyAny>> {
        let ks = ks.unwrap_or_else(|| DEFAULT_KS.to_vec());
        let ranks = gcb_audit::scoring::compute_bundle_ranks(&self.inner);
        let metrics = gcb_audit::scoring::compute_metrics(&ranks, &ks).map_err(py_err)?;
        to_py_report(py, &metrics)
    }

    /// Per-candidate bucket sizes.
    fn bucket_sizes(&self) -> Vec<usize> {
        gcb_audit::bundle::bucket_sizes(self.inner.candidates())
    }

    fn __repr__(&self) -> String {
        format!(
            "Bundle(num_queries={}, num_candidates={}, num_buckets={}, num_groups={})",
            self.num_queries(),
            self.num_candidates(),
            self.num_buckets(),
            self.num_groups()
        )
    }
}

/// New bundle carrying the bias-corrected logits.
#[pyfunction]
#[pyo3(signature = (bundle, cfg=None))]
fn apply_gcb(bundle: &PyBundle, cfg: Option<PyGcbConfig>) -> PyResult<PyBundle> {
    let corrected = gcb_audit::gcb::apply_gcb(&bundle.inner, &resolve_cfg(cfg)).map_err(py_err)?;
    Ok(PyBundle {
        inner: bundle.inner.with_logits(corrected).map_err(py_err)?,
    })
}

/// New bundle corrected with singleton (per-window) pooling.
#[pyfunction]
#[pyo3(signature = (bundle, cfg=None))]
fn apply_gcb_single(bundle: &PyBundle, cfg: Option<PyGcbConfig>) -> PyResult<PyBundle> {
    let corrected =
        gcb_audit::gcb::apply_gcb_single(&bundle.inner, &resolve_cfg(cfg)).map_err(py_err)?;
    Ok(PyBundle {
        inner: bundle.inner.with_logits(corrected).map_err(py_err)?,
    })
}

/// New bundle with candidates outside the selected buckets pruned.
#[pyfunction]
#[pyo3(signature = (bundle, cfg=None))]
fn apply_hard_pruning(bundle: &PyBundle, cfg: Option<PyGcbConfig>) -> PyResult<PyBundle> {
    let pruned =
        gcb_audit::gcb::apply_hard_pruning(&bundle.inner, &resolve_cfg(cfg)).map_err(py_err)?;
    Ok(PyBundle {
        inner: bundle.inner.with_logits(pruned).map_err(py_err)?,
    })
}

/// Full audit report as a dict.
#[pyfunction]
#[pyo3(signature = (bundle, cfg=None, ks=None, variant="full", bootstrap=None, confidence=0.95, seed=0))]
#[allow(clippy::too_many_arguments)]
fn audit(
    py: Python<'_>,
    bundle: &PyBundle,
    cfg: Option<PyGcbConfig>,
    ks: Option<Vec<usize>>,
    variant: &str,
    bootstrap: Option<usize>,
    confidence: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let variant = match variant {
        "full" => GcbVariant::Full,
        "single" => GcbVariant::Single,
        "prune" => GcbVariant::Prune,
        _ => {
            return Err(PyValueError::new_err(format!(
                "unknown variant {variant:?}; expected 'full', 'single', or 'prune'"
            )))
        }
    };
    let options = AuditOptions {
        ks: ks.unwrap_or_else(|| DEFAULT_KS.to_vec()),
        variant,
        bootstrap: bootstrap.map(|num_resamples| BootstrapConfig {
            num_resamples,
            confidence,
            seed,
        }),
    };
    let report =
        gcb_audit::report::run_audit(&bundle.inner, &resolve_cfg(cfg), &options).map_err(py_err)?;
    to_py_report(py, &report)
}

/// Within-bucket oracle diagnostic.
#[pyfunction]
fn oracle(py: Python<'_>, bundle: &PyBundle) -> PyResult<Py<PyAny>> {
    let report = gcb_audit::oracle::oracle_within_bucket(&bundle.inner).map_err(py_err)?;
    to_py_report(py, &report)
}

/// Oracle-vs-correction headroom decomposition.
#[pyfunction]
#[pyo3(signature = (bundle, cfg=None))]
fn decompose(py: Python<'_>, bundle: &PyBundle, cfg: Option<PyGcbConfig>) -> PyResult<Py<PyAny>> {
    let report =
        gcb_audit::oracle::decompose_headroom(&bundle.inner, &resolve_cfg(cfg)).map_err(py_err)?;
    to_py_report(py, &report)
}

/// Gain sweep over one pooled run.
#[pyfunction]
#[pyo3(signature = (bundle, gammas, cfg=None))]
fn gamma_sweep(
    py: Python<'_>,
    bundle: &PyBundle,
    gammas: Vec<f64>,
    cfg: Option<PyGcbConfig>,
) -> PyResult<Py<PyAny>> {
    let report = gcb_audit::report::run_gamma_sweep(&bundle.inner, &resolve_cfg(cfg), &gammas)
        .map_err(py_err)?;
    to_py_report(py, &report)
}

/// Candidate-pool-size sweep with targets retained.
#[pyfunction]
#[pyo3(signature = (bundle, sizes, cfg=None, seed=0))]
fn pool_sweep(
    py: Python<'_>,
    bundle: &PyBundle,
    sizes: Vec<usize>,
    cfg: Option<PyGcbConfig>,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let report = gcb_audit::report::run_pool_sweep(&bundle.inner, &resolve_cfg(cfg), &sizes, seed)
        .map_err(py_err)?;
    to_py_report(py, &report)
}

/// Evidence-attenuation sweep.
#[pyfunction]
#[pyo3(signature = (bundle, alphas, cfg=None, seed=0))]
fn attenuation_sweep(
    py: Python<'_>,
    bundle: &PyBundle,
    alphas: Vec<f64>,
    cfg: Option<PyGcbConfig>,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let report = gcb_audit::report::run_attenuation(&bundle.inner, &resolve_cfg(cfg), &alphas, seed)
        .map_err(py_err)?;
    to_py_report(py, &report)
}

/// Grouping-perturbation series.
#[pyfunction]
#[pyo3(signature = (bundle, kind, ps, cfg=None, seed=0))]
fn perturb_series(
    py: Python<'_>,
    bundle: &PyBundle,
    kind: &str,
    ps: Vec<f64>,
    cfg: Option<PyGcbConfig>,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let report = gcb_audit::report::run_perturb_series(
        &bundle.inner,
        &resolve_cfg(cfg),
        parse_kind(kind)?,
        &ps,
        seed,
    )
    .map_err(py_err)?;
    to_py_report(py, &report)
}

/// New bundle with perturbed query-to-group assignments.
#[pyfunction]
fn perturb(bundle: &PyBundle, kind: &str, p: f64, seed: u64) -> PyResult<PyBundle> {
    let outcome = gcb_audit::perturb::perturb_groups(
        bundle.inner.queries(),
        &gcb_audit::perturb::PerturbConfig {
            kind: parse_kind(kind)?,
            p,
            seed,
        },
    )
    .map_err(py_err)?;
    Ok(PyBundle {
        inner: bundle.inner.with_queries(outcome.queries).map_err(py_err)?,
    })
}

/// New bundle with each logit row mixed with a standardized permutation
/// of itself at evidence fraction `alpha`.
#[pyfunction]
#[pyo3(signature = (bundle, alpha, seed=0))]
fn attenuate(bundle: &PyBundle, alpha: f64, seed: u64) -> PyResult<PyBundle> {
    let attenuated = gcb_audit::perturb::attenuate_logits(
        bundle.inner.logits(),
        &gcb_audit::perturb::AttenuationConfig { alpha, seed },
    )
    .map_err(py_err)?;
    Ok(PyBundle {
        inner: bundle.inner.with_logits(attenuated).map_err(py_err)?,
    })
}

/// Per-query indicator of the ground-truth bucket being selected.
#[pyfunction]
#[pyo3(signature = (bundle, cfg=None))]
fn bucket_hit_mask(bundle: &PyBundle, cfg: Option<PyGcbConfig>) -> PyResult<Vec<bool>> {
    gcb_audit::gcb::bucket_hit_mask(&bundle.inner, &resolve_cfg(cfg)).map_err(py_err)
}

/// Per-bin R@1 before/after the correction, binned by sentence-group size.
/// `edges` are ascending lower bin edges; the last bin is open-ended.
#[pyfunction]
#[pyo3(signature = (bundle, edges, cfg=None))]
fn length_binned(
    py: Python<'_>,
    bundle: &PyBundle,
    edges: Vec<usize>,
    cfg: Option<PyGcbConfig>,
) -> PyResult<Py<PyAny>> {
    let before = gcb_audit::scoring::compute_bundle_ranks(&bundle.inner);
    let corrected = gcb_audit::gcb::apply_gcb(&bundle.inner, &resolve_cfg(cfg)).map_err(py_err)?;
    let after = gcb_audit::scoring::compute_ranks(&corrected, bundle.inner.queries());
    let rows =
        gcb_audit::scoring::length_binned_delta(&before, &after, bundle.inner.queries(), &edges)
            .map_err(py_err)?;
    to_py_report(py, &rows)
}

/// Spearman correlation between ground-truth bucket size and the
/// indicator of a correction-induced Top-1 gain.
#[pyfunction]
#[pyo3(signature = (bundle, cfg=None))]
fn bucket_size_inflation(bundle: &PyBundle, cfg: Option<PyGcbConfig>) -> PyResult<f64> {
    let before = gcb_audit::scoring::compute_bundle_ranks(&bundle.inner);
    let corrected = gcb_audit::gcb::apply_gcb(&bundle.inner, &resolve_cfg(cfg)).map_err(py_err)?;
    let after = gcb_audit::scoring::compute_ranks(&corrected, bundle.inner.queries());
    gcb_audit::stats::bucket_size_inflation_correlation(&bundle.inner, &before, &after)
        .map_err(py_err)
}

/// Paired sentence-cluster bootstrap for the base-vs-corrected delta.
#[pyfunction]
#[pyo3(signature = (bundle, cfg=None, metric="r@1", resamples=10_000, confidence=0.95, seed=0))]
fn bootstrap_delta(
    py: Python<'_>,
    bundle: &PyBundle,
    cfg: Option<PyGcbConfig>,
    metric: &str,
    resamples: usize,
    confidence: f64,
    seed: u64,
) -> PyResult<Py<PyAny>> {
    let base = gcb_audit::scoring::compute_bundle_ranks(&bundle.inner);
    let corrected = gcb_audit::gcb::apply_gcb(&bundle.inner, &resolve_cfg(cfg)).map_err(py_err)?;
    let after = gcb_audit::scoring::compute_ranks(&corrected, bundle.inner.queries());
    let result = gcb_audit::stats::paired_cluster_bootstrap(
        &base,
        &after,
        bundle.inner.queries().group_map(),
        parse_metric(metric)?,
        &BootstrapConfig {
            num_resamples: resamples,
            confidence,
            seed,
        },
    )
    .map_err(py_err)?;
    to_py_report(py, &result)
}

/// Exact similarity MAC counts.
#[pyfunction]
#[pyo3(signature = (q, n, d, t, bundle=None, cfg=None))]
fn opcount(
    py: Python<'_>,
    q: u64,
    n: u64,
    d: u64,
    t: u64,
    bundle: Option<&PyBundle>,
    cfg: Option<PyGcbConfig>,
) -> PyResult<Py<PyAny>> {
    let counters = match bundle {
        None => None,
        Some(b) => {
            let cfg = resolve_cfg(cfg);
            let run = GcbRun::grouped(&b.inner, &cfg).map_err(py_err)?;
            Some(run.counters(&b.inner, &cfg))
        }
    };
    let report =
        gcb_audit::opcount::opcount(&gcb_audit::opcount::OpCountDims { q, n, d, t }, counters)
            .map_err(py_err)?;
    to_py_report(py, &report)
}

/// Spearman rank correlation with mid-rank ties.
#[pyfunction]
fn spearman(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    gcb_audit::stats::spearman(&x, &y).map_err(py_err)
}

/// One logit row from a query window and candidate windows (rows are
/// feature-major: `window[d][t]`).
#[pyfunction]
#[pyo3(signature = (neural, candidates, epsilon=1e-8))]
fn compute_logits(
    neural: Vec<Vec<f64>>,
    candidates: Vec<Vec<Vec<f64>>>,
    epsilon: f64,
) -> PyResult<Vec<f64>> {
    let to_window = |rows: &[Vec<f64>]| -> PyResult<EmbeddingWindow> {
        let dim = rows.len();
        let steps = rows.first().map_or(0, Vec::len);
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        EmbeddingWindow::new(flat, dim, steps).map_err(py_err)
    };
    let query = to_window(&neural)?;
    let pool = candidates
        .iter()
        .map(|c| to_window(c))
        .collect::<PyResult<Vec<_>>>()?;
    gcb_audit::scoring::compute_logits(&query, &pool, &ScoringConfig { epsilon }).map_err(py_err)
}

#[pymodule]
fn gcb_audit_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyBundle>()?;
    m.add_class::<PyGcbConfig>()?;
    m.add_function(wrap_pyfunction!(apply_gcb, m)?)?;
    m.add_function(wrap_pyfunction!(apply_gcb_single, m)?)?;
    m.add_function(wrap_pyfunction!(apply_hard_pruning, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(oracle, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(pool_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(attenuation_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(perturb_series, m)?)?;
    m.add_function(wrap_pyfunction!(perturb, m)?)?;
    m.add_function(wrap_pyfunction!(attenuate, m)?)?;
    m.add_function(wrap_pyfunction!(bucket_hit_mask, m)?)?;
    m.add_function(wrap_pyfunction!(length_binned, m)?)?;
    m.add_function(wrap_pyfunction!(bucket_size_inflation, m)?)?;
    m.add_function(wrap_pyfunction!(bootstrap_delta, m)?)?;
    m.add_function(wrap_pyfunction!(opcount, m)?)?;
    m.add_function(wrap_pyfunction!(spearman, m)?)?;
    m.add_function(wrap_pyfunction!(compute_logits, m)?)?;
    Ok(())
}
