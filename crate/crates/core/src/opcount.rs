//! Complexity-only operation counts: exact similarity MACs by tensor shape
//! plus implementation-level counters from a pooled correction run.

use serde::{Deserialize, Serialize};

use crate::error::{AuditError, Result};
use crate::gcb::GcbCounters;

/// Tensor shape of the similarity stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCountDims {
    /// Query windows.
    pub q: u64,
    /// Candidates.
    pub n: u64,
    /// Feature dimension.
    pub d: u64,
    /// Time steps.
    pub t: u64,
}

/// Correction counters in per-query and total form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcbOpCounts {
    pub retained_per_query: f64,
    pub retained_total: u64,
    pub unique_buckets_per_query: f64,
    pub unique_buckets_total: u64,
    pub fuse_adds_per_query: u64,
    pub fuse_adds_total: u64,
    pub bucket_writes_per_query: f64,
    pub bucket_writes_total: u64,
}

impl From<GcbCounters> for GcbOpCounts {
    fn from(c: GcbCounters) -> Self {
        let q = c.num_queries as f64;
        Self {
            retained_per_query: c.retained_total as f64 / q,
            retained_total: c.retained_total,
            unique_buckets_per_query: c.unique_buckets_total as f64 / q,
            unique_buckets_total: c.unique_buckets_total,
            fuse_adds_per_query: c.fuse_adds_total / c.num_queries,
            fuse_adds_total: c.fuse_adds_total,
            bucket_writes_per_query: c.bucket_writes_total as f64 / q,
            bucket_writes_total: c.bucket_writes_total,
        }
    }
}

/// Exact integer op counts with 3-significant-figure scientific renderings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpCountReport {
    pub schema_version: u32,
    pub dims: OpCountDims,
    /// `N * D * T`, exact.
    pub per_query_macs: u64,
    /// `Q * N * D * T`, exact.
    pub total_macs: u64,
    pub per_query_macs_sci: String,
    pub total_macs_sci: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gcb: Option<GcbOpCounts>,
}

/// Render an exact count as `m.mm'e'X` with three significant figures.
pub fn sci3(x: u128) -> String {
    if x == 0 {
        return "0.00e0".to_string();
    }
    let digits = x.to_string();
    let mut exponent = digits.len() as i32 - 1;
    let mut mantissa: u128 = if digits.len() <= 3 {
        x * 10u128.pow(3 - digits.len() as u32)
    } else {
        let scale = 10u128.pow(digits.len() as u32 - 3);
        let q = x / scale;
        let r = x % scale;
        q + u128::from(r * 2 >= scale)
    };
    if mantissa == 1000 {
        mantissa = 100;
        exponent += 1;
    }
    format!("{}.{:02}e{}", mantissa / 100, mantissa % 100, exponent)
}

/// Exact similarity MAC counts for the given shape, optionally extended
/// with counters from a pooled run. Products are taken in 128-bit and must
/// fit the report's 64-bit fields.
pub fn opcount(dims: &OpCountDims, counters: Option<GcbCounters>) -> Result<OpCountReport> {
    if dims.q == 0 || dims.n == 0 || dims.d == 0 || dims.t == 0 {
        return Err(AuditError::InvalidConfig(
            "op-count dimensions must all be positive".into(),
        ));
    }
    let per_query: u128 = u128::from(dims.n) * u128::from(dims.d) * u128::from(dims.t);
    let total: u128 = u128::from(dims.q) * per_query;
    let per_query_macs = u64::try_from(per_query)
        .map_err(|_| AuditError::InvalidConfig("per-query MAC count overflows 64 bits".into()))?;
    let total_macs = u64::try_from(total)
        .map_err(|_| AuditError::InvalidConfig("total MAC count overflows 64 bits".into()))?;
    Ok(OpCountReport {
        schema_version: 1,
        dims: *dims,
        per_query_macs,
        total_macs,
        per_query_macs_sci: sci3(per_query),
        total_macs_sci: sci3(total),
        gcb: counters.map(GcbOpCounts::from),
    })
}
