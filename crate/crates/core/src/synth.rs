//! Synthetic planted-signal bundles: local target evidence plus
//! bucket-consistent structure over Gaussian noise, so the qualitative
//! audit claims are reproducible at desk scale without any model exports.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bundle::{
    validate_bundle, AuditBundle, CandidatePool, LogitMatrix, QuerySet, StimulusId,
};
use crate::error::{AuditError, Result};
use crate::seed::mix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_queries: usize,
    pub num_candidates: usize,
    pub num_buckets: usize,
    /// Queries per sentence group; the last group may be smaller when it
    /// does not divide `num_queries`.
    pub group_size: usize,
    pub num_stories: usize,
    /// Added to the true target's logit.
    pub target_strength: f64,
    /// Added to every candidate sharing the target's bucket.
    pub bucket_affinity: f64,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_queries: 2000,
            num_candidates: 500,
            num_buckets: 50,
            group_size: 10,
            num_stories: 4,
            target_strength: 2.0,
            bucket_affinity: 1.0,
            noise_sigma: 1.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.num_candidates < 2 {
            return Err(AuditError::InfeasibleConfig(
                "need at least two candidates".into(),
            ));
        }
        if self.num_buckets == 0 || self.num_buckets > self.num_candidates {
            return Err(AuditError::InfeasibleConfig(format!(
                "num_buckets {} must lie in [1, {}]",
                self.num_buckets, self.num_candidates
            )));
        }
        if self.num_queries == 0 {
            return Err(AuditError::InfeasibleConfig("need at least one query".into()));
        }
        if self.group_size == 0 {
            return Err(AuditError::InfeasibleConfig("group_size must be positive".into()));
        }
        let num_groups = self.num_queries.div_ceil(self.group_size);
        if self.num_stories == 0 || self.num_stories > num_groups {
            return Err(AuditError::InfeasibleConfig(format!(
                "num_stories {} must lie in [1, {num_groups}]",
                self.num_stories
            )));
        }
        if self.noise_sigma <= 0.0 {
            return Err(AuditError::InfeasibleConfig("noise_sigma must be positive".into()));
        }
        if self.target_strength < 0.0 || self.bucket_affinity < 0.0 {
            return Err(AuditError::InfeasibleConfig(
                "signal strengths must be non-negative".into(),
            ));
        }
        Ok(())
    }

    fn num_groups(&self) -> usize {
        self.num_queries.div_ceil(self.group_size)
    }
}

fn build_structure(cfg: &SynthConfig) -> Result<(CandidatePool, QuerySet)> {
    let n = cfg.num_candidates;
    let m = cfg.num_buckets;
    // Even contiguous split; the first n % m buckets get one extra member.
    let base = n / m;
    let extra = n % m;
    let mut bucket_of = Vec::with_capacity(n);
    for s in 0..m {
        let size = base + usize::from(s < extra);
        bucket_of.extend(std::iter::repeat_n(s, size));
    }
    let stimulus: Vec<StimulusId> = {
        let mut within = vec![0u64; m];
        bucket_of
            .iter()
            .map(|&s| {
                let id = StimulusId {
                    key: format!("synth-bucket-{s}"),
                    window: within[s],
                };
                within[s] += 1;
                id
            })
            .collect()
    };
    let candidates = CandidatePool::new(bucket_of, m)?.with_stimulus(stimulus)?;

    let num_groups = cfg.num_groups();
    let mut target_of = Vec::with_capacity(cfg.num_queries);
    let mut group_of = Vec::with_capacity(cfg.num_queries);
    let mut story_of = Vec::with_capacity(cfg.num_queries);
    let mut order_of = Vec::with_capacity(cfg.num_queries);
    let mut keys = Vec::with_capacity(cfg.num_queries);
    let mut story_clock = vec![0i64; cfg.num_stories];
    for w in 0..cfg.num_queries {
        let g = w / cfg.group_size;
        let bucket = g % cfg.num_buckets;
        let members = candidates.bucket_members(bucket);
        let target = members[(w % cfg.group_size) % members.len()];
        let story = g * cfg.num_stories / num_groups;
        target_of.push(target);
        group_of.push(g);
        story_of.push(story);
        order_of.push(story_clock[story]);
        story_clock[story] += 1;
        let id = &candidates.stimulus().unwrap()[target];
        keys.push(format!("{}#{}", id.key, id.window));
    }
    let queries = QuerySet::new(target_of, group_of)?
        .with_stories(story_of)?
        .with_order(order_of)?
        .with_stimulus_keys(keys)?;
    Ok((candidates, queries))
}

fn generate_with_noise_seed(cfg: &SynthConfig, noise_seed: u64) -> Result<AuditBundle> {
    cfg.validate()?;
    let (candidates, queries) = build_structure(cfg)?;
    let normal = Normal::new(0.0, cfg.noise_sigma)
        .map_err(|e| AuditError::InfeasibleConfig(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    let n = cfg.num_candidates;
    let mut values = Vec::with_capacity(cfg.num_queries * n);
    for w in 0..cfg.num_queries {
        let target = queries.target_of(w);
        let target_bucket = candidates.bucket_of(target);
        for j in 0..n {
            let mut v = normal.sample(&mut rng);
            if j == target {
                v += cfg.target_strength;
            }
            if candidates.bucket_of(j) == target_bucket {
                v += cfg.bucket_affinity;
            }
            // Quantize to the on-disk precision so a generated bundle and
            // its round-tripped copy are bit-identical.
            values.push(f64::from(v as f32));
        }
    }
    let logits = LogitMatrix::new(values, cfg.num_queries, n)?;
    validate_bundle(logits, candidates, queries)
}

/// Generate one planted-signal bundle. Deterministic in the config.
pub fn generate(cfg: &SynthConfig) -> Result<AuditBundle> {
    generate_with_noise_seed(cfg, cfg.seed)
}

/// One bundle per target strength, sharing the bucket/group structure.
/// Bundle `i` draws its noise from the sub-seed keyed by (seed, i), so
/// repeated strengths yield structurally identical bundles with fresh
/// noise.
pub fn generate_sweep(cfg: &SynthConfig, strengths: &[f64]) -> Result<Vec<AuditBundle>> {
    strengths
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let point = SynthConfig {
                target_strength: a,
                ..*cfg
            };
            generate_with_noise_seed(&point, mix(cfg.seed, i as u64))
        })
        .collect()
}
