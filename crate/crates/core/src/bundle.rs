//! Shared data model: logit matrix, candidate pool, query set, and the
//! validated bundle every audit operation consumes.
//!
//! Candidate and query ids are dense integers; external string ids live in
//! manifests and are resolved at load time. All types are immutable after
//! validation and safe to share across threads.

use crate::error::{AuditError, Result};

/// Dense row-major matrix of local retrieval scores, one row per query
/// window and one column per candidate.
///
/// Logits are stored and compared at 32-bit precision: values entering via
/// [`LogitMatrix::from_f32`] are widened to `f64` exactly, so comparisons
/// and the binary round trip are bit-identical to the `f32` source.
/// Derived matrices (bias-corrected, attenuated) keep full `f64` precision
/// internally and round to `f32` only when written back to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitMatrix {
    values: Vec<f64>,
    num_queries: usize,
    num_candidates: usize,
}

impl LogitMatrix {
    /// Build from `f32` values in row-major order, e.g. as loaded from a
    /// logit file. Every value is checked finite.
    pub fn from_f32(values: &[f32], num_queries: usize, num_candidates: usize) -> Result<Self> {
        let wide: Vec<f64> = values.iter().map(|&v| f64::from(v)).collect();
        Self::new(wide, num_queries, num_candidates)
    }

    /// Build from `f64` values in row-major order.
    pub fn new(values: Vec<f64>, num_queries: usize, num_candidates: usize) -> Result<Self> {
        if num_queries < 1 {
            return Err(AuditError::InvalidConfig(
                "logit matrix needs at least one query row".into(),
            ));
        }
        if num_candidates < 2 {
            return Err(AuditError::InvalidConfig(
                "logit matrix needs at least two candidates".into(),
            ));
        }
        if values.len() != num_queries * num_candidates {
            return Err(AuditError::DimensionMismatch {
                context: "logit value count",
                expected: num_queries * num_candidates,
                actual: values.len(),
            });
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(AuditError::NonFiniteLogit {
                row: pos / num_candidates,
                col: pos % num_candidates,
            });
        }
        Ok(Self {
            values,
            num_queries,
            num_candidates,
        })
    }

    pub fn num_queries(&self) -> usize {
        self.num_queries
    }

    pub fn num_candidates(&self) -> usize {
        self.num_candidates
    }

    /// One query row as a slice of length `num_candidates`.
    pub fn row(&self, query: usize) -> &[f64] {
        let n = self.num_candidates;
        &self.values[query * n..(query + 1) * n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row-major values rounded to `f32`, the on-disk precision.
    pub fn values_f32(&self) -> Vec<f32> {
        self.values.iter().map(|&v| v as f32).collect()
    }

    pub(crate) fn from_raw(values: Vec<f64>, num_queries: usize, num_candidates: usize) -> Self {
        debug_assert_eq!(values.len(), num_queries * num_candidates);
        Self {
            values,
            num_queries,
            num_candidates,
        }
    }
}

/// Stimulus identity carried per candidate for de-duplication checks.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct StimulusId {
    pub key: String,
    pub window: u64,
}

/// Candidate identities and their sentence-bucket partition.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePool {
    bucket_of: Vec<usize>,
    num_buckets: usize,
    bucket_members: Vec<Vec<usize>>,
    stimulus: Option<Vec<StimulusId>>,
}

impl CandidatePool {
    /// Build a pool from the candidate-to-bucket map. Every bucket id must
    /// be in range and every bucket non-empty; `bucket_members` is derived
    /// as the exact inverse of `bucket_of`.
    pub fn new(bucket_of: Vec<usize>, num_buckets: usize) -> Result<Self> {
        if bucket_of.is_empty() {
            return Err(AuditError::InvalidConfig("empty candidate pool".into()));
        }
        if num_buckets == 0 {
            return Err(AuditError::InvalidConfig("num_buckets must be positive".into()));
        }
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_buckets];
        for (candidate, &bucket) in bucket_of.iter().enumerate() {
            if bucket >= num_buckets {
                return Err(AuditError::BucketOutOfRange {
                    candidate,
                    bucket,
                    num_buckets,
                });
            }
            members[bucket].push(candidate);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(AuditError::EmptyBucket { bucket: empty });
        }
        Ok(Self {
            bucket_of,
            num_buckets,
            bucket_members: members,
            stimulus: None,
        })
    }

    /// Attach per-candidate stimulus identities. Pairs must be unique.
    pub fn with_stimulus(mut self, stimulus: Vec<StimulusId>) -> Result<Self> {
        if stimulus.len() != self.bucket_of.len() {
            return Err(AuditError::DimensionMismatch {
                context: "stimulus metadata length",
                expected: self.bucket_of.len(),
                actual: stimulus.len(),
            });
        }
        let mut seen: std::collections::HashMap<(&str, u64), usize> =
            std::collections::HashMap::with_capacity(stimulus.len());
        for (candidate, id) in stimulus.iter().enumerate() {
            if let Some(&first) = seen.get(&(id.key.as_str(), id.window)) {
                return Err(AuditError::DuplicateStimulus {
                    key: id.key.clone(),
                    window: id.window,
                    first,
                    second: candidate,
                });
            }
            seen.insert((id.key.as_str(), id.window), candidate);
        }
        self.stimulus = Some(stimulus);
        Ok(self)
    }

    pub fn num_candidates(&self) -> usize {
        self.bucket_of.len()
    }

    pub fn num_buckets(&self) -> usize {
        self.num_buckets
    }

    /// Bucket id of candidate `j`.
    pub fn bucket_of(&self, candidate: usize) -> usize {
        self.bucket_of[candidate]
    }

    pub fn bucket_map(&self) -> &[usize] {
        &self.bucket_of
    }

    /// Candidate indices of bucket `s`, ascending.
    pub fn bucket_members(&self, bucket: usize) -> &[usize] {
        &self.bucket_members[bucket]
    }

    pub fn stimulus(&self) -> Option<&[StimulusId]> {
        self.stimulus.as_deref()
    }
}

/// Per-bucket candidate counts; `sizes[s] = |B_s|` and the sizes sum to N.
pub fn bucket_sizes(pool: &CandidatePool) -> Vec<usize> {
    (0..pool.num_buckets())
        .map(|s| pool.bucket_members(s).len())
        .collect()
}

/// Query identities: targets, sentence groups, and optional story/order
/// metadata used by the grouping perturbations.
#[derive(Debug, Clone, PartialEq)]
pub struct QuerySet {
    target_of: Vec<usize>,
    group_of: Vec<usize>,
    num_groups: usize,
    group_members: Vec<Vec<usize>>,
    story_of: Option<Vec<usize>>,
    order_of: Option<Vec<i64>>,
    stimulus_key_of: Option<Vec<String>>,
}

impl QuerySet {
    /// Build from the per-query target and group maps. Group ids must be
    /// dense `0..num_groups` with every group non-empty. Target indices are
    /// range-checked later, against the candidate pool, in
    /// [`validate_bundle`].
    pub fn new(target_of: Vec<usize>, group_of: Vec<usize>) -> Result<Self> {
        if target_of.is_empty() {
            return Err(AuditError::InvalidConfig("empty query set".into()));
        }
        if group_of.len() != target_of.len() {
            return Err(AuditError::DimensionMismatch {
                context: "group map length",
                expected: target_of.len(),
                actual: group_of.len(),
            });
        }
        let num_groups = group_of.iter().copied().max().map_or(0, |m| m + 1);
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_groups];
        for (query, &group) in group_of.iter().enumerate() {
            members[group].push(query);
        }
        if let Some(empty) = members.iter().position(Vec::is_empty) {
            return Err(AuditError::EmptyGroup { group: empty });
        }
        Ok(Self {
            target_of,
            group_of,
            num_groups,
            group_members: members,
            story_of: None,
            order_of: None,
            stimulus_key_of: None,
        })
    }

    /// Attach per-query story ids.
    pub fn with_stories(mut self, story_of: Vec<usize>) -> Result<Self> {
        if story_of.len() != self.len() {
            return Err(AuditError::DimensionMismatch {
                context: "story map length",
                expected: self.len(),
                actual: story_of.len(),
            });
        }
        self.story_of = Some(story_of);
        self.check_order()?;
        Ok(self)
    }

    /// Attach per-query temporal order indices. Within each story the order
    /// must be a strict total order (no duplicates).
    pub fn with_order(mut self, order_of: Vec<i64>) -> Result<Self> {
        if order_of.len() != self.len() {
            return Err(AuditError::DimensionMismatch {
                context: "order map length",
                expected: self.len(),
                actual: order_of.len(),
            });
        }
        self.order_of = Some(order_of);
        self.check_order()?;
        Ok(self)
    }

    /// Attach per-query stimulus keys (provenance only).
    pub fn with_stimulus_keys(mut self, keys: Vec<String>) -> Result<Self> {
        if keys.len() != self.len() {
            return Err(AuditError::DimensionMismatch {
                context: "stimulus key length",
                expected: self.len(),
                actual: keys.len(),
            });
        }
        self.stimulus_key_of = Some(keys);
        Ok(self)
    }

    fn check_order(&self) -> Result<()> {
        let Some(order) = &self.order_of else {
            return Ok(());
        };
        // Queries without story metadata are treated as one implicit story.
        let mut seen: std::collections::HashMap<(usize, i64), usize> =
            std::collections::HashMap::with_capacity(order.len());
        for query in 0..self.len() {
            let story = self.story_of.as_ref().map_or(0, |s| s[query]);
            if let Some(&first) = seen.get(&(story, order[query])) {
                return Err(AuditError::OrderNotTotal {
                    story,
                    first,
                    second: query,
                    order: order[query],
                });
            }
            seen.insert((story, order[query]), query);
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.target_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.target_of.is_empty()
    }

    /// Target candidate index of query `w`.
    pub fn target_of(&self, query: usize) -> usize {
        self.target_of[query]
    }

    pub fn targets(&self) -> &[usize] {
        &self.target_of
    }

    /// Sentence-group id of query `w`.
    pub fn group_of(&self, query: usize) -> usize {
        self.group_of[query]
    }

    pub fn group_map(&self) -> &[usize] {
        &self.group_of
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    /// Query indices of group `g`, ascending.
    pub fn group_members(&self, group: usize) -> &[usize] {
        &self.group_members[group]
    }

    pub fn story_map(&self) -> Option<&[usize]> {
        self.story_of.as_deref()
    }

    pub fn order_map(&self) -> Option<&[i64]> {
        self.order_of.as_deref()
    }

    pub fn stimulus_keys(&self) -> Option<&[String]> {
        self.stimulus_key_of.as_deref()
    }
}

/// A validated (logits, candidates, queries) triple with mutually
/// consistent dimensions. Construction goes through [`validate_bundle`].
#[derive(Debug, Clone)]
pub struct AuditBundle {
    logits: LogitMatrix,
    candidates: CandidatePool,
    queries: QuerySet,
}

impl AuditBundle {
    pub fn logits(&self) -> &LogitMatrix {
        &self.logits
    }

    pub fn candidates(&self) -> &CandidatePool {
        &self.candidates
    }

    pub fn queries(&self) -> &QuerySet {
        &self.queries
    }

    /// Same manifests over a replacement logit matrix of equal shape.
    pub fn with_logits(&self, logits: LogitMatrix) -> Result<Self> {
        validate_bundle(logits, self.candidates.clone(), self.queries.clone())
    }

    /// Same logits and candidates over a replacement query set of equal size.
    pub fn with_queries(&self, queries: QuerySet) -> Result<Self> {
        validate_bundle(self.logits.clone(), self.candidates.clone(), queries)
    }
}

/// Cross-validate the three inputs and assemble the bundle, reporting the
/// first violation found: dimension mismatches, non-finite logits, then
/// out-of-range targets.
pub fn validate_bundle(
    logits: LogitMatrix,
    candidates: CandidatePool,
    queries: QuerySet,
) -> Result<AuditBundle> {
    if logits.num_candidates() != candidates.num_candidates() {
        return Err(AuditError::DimensionMismatch {
            context: "candidate count",
            expected: logits.num_candidates(),
            actual: candidates.num_candidates(),
        });
    }
    if logits.num_queries() != queries.len() {
        return Err(AuditError::DimensionMismatch {
            context: "query count",
            expected: logits.num_queries(),
            actual: queries.len(),
        });
    }
    if let Some(pos) = logits.values().iter().position(|v| !v.is_finite()) {
        return Err(AuditError::NonFiniteLogit {
            row: pos / logits.num_candidates(),
            col: pos % logits.num_candidates(),
        });
    }
    let n = candidates.num_candidates();
    for (query, &target) in queries.targets().iter().enumerate() {
        if target >= n {
            return Err(AuditError::TargetOutOfRange {
                query,
                target,
                num_candidates: n,
            });
        }
    }
    Ok(AuditBundle {
        logits,
        candidates,
        queries,
    })
}
