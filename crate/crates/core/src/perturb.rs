//! Attribution controls that degrade structure or evidence: grouping
//! perturbations on the query side and standardized row-permutation
//! attenuation on the logit side.
//!
//! Baseline retrieval depends only on logits and targets, so it is
//! invariant under any grouping perturbation; only the pooled correction
//! reacts.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bundle::{AuditBundle, LogitMatrix, QuerySet};
use crate::error::{AuditError, Result};
use crate::gcb::{apply_gcb, GcbConfig};
use crate::scoring::{compute_metrics, compute_ranks, DEFAULT_KS};
use crate::seed::mix;

/// Which grouping perturbation to apply.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PerturbKind {
    /// Group-boundary windows move once to the temporally adjacent group
    /// of the same story; no cascading.
    NeighbourOnce,
    /// Each query is reassigned uniformly to a different group of the same
    /// story.
    RandomWithinStory,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerturbConfig {
    pub kind: PerturbKind,
    /// Per-query perturbation probability.
    pub p: f64,
    pub seed: u64,
}

impl PerturbConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(AuditError::InvalidConfig("p must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// A perturbed query set plus bookkeeping about what actually moved.
#[derive(Debug, Clone)]
pub struct PerturbOutcome {
    pub queries: QuerySet,
    /// Queries whose group assignment changed.
    pub moved: usize,
    /// Draws that fired but had no valid destination (single-group story).
    pub skipped: usize,
}

/// Perturb query-to-group assignments, leaving targets and logits alone.
/// Deterministic given the seed; decisions are drawn in ascending query
/// order against the original grouping, then applied simultaneously.
///
/// After reassignment, group ids are compacted in ascending order so the
/// result satisfies the dense-id invariant; when no group empties this is
/// the identity relabeling.
pub fn perturb_groups(queries: &QuerySet, cfg: &PerturbConfig) -> Result<PerturbOutcome> {
    cfg.validate()?;
    let stories = queries
        .story_map()
        .ok_or(AuditError::MissingMetadata("story ids are required by grouping perturbations"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut new_group: Vec<usize> = queries.group_map().to_vec();
    let mut moved = 0usize;
    let mut skipped = 0usize;

    match cfg.kind {
        PerturbKind::NeighbourOnce => {
            let orders = queries.order_map().ok_or(AuditError::MissingMetadata(
                "temporal order is required by the neighbour perturbation",
            ))?;
            // Per-story timeline, ascending temporal order.
            let num_stories = stories.iter().copied().max().map_or(0, |m| m + 1);
            let mut timelines: Vec<Vec<usize>> = vec![Vec::new(); num_stories];
            for w in 0..queries.len() {
                timelines[stories[w]].push(w);
            }
            for timeline in &mut timelines {
                timeline.sort_by_key(|&w| orders[w]);
            }
            // Temporal position of each query inside its story.
            let mut pos = vec![0usize; queries.len()];
            for timeline in &timelines {
                for (i, &w) in timeline.iter().enumerate() {
                    pos[w] = i;
                }
            }
            let is_extreme = |w: usize, towards_prev: bool| -> bool {
                let group = queries.group_of(w);
                queries.group_members(group).iter().all(|&other| {
                    other == w
                        || stories[other] != stories[w]
                        || if towards_prev {
                            orders[other] > orders[w]
                        } else {
                            orders[other] < orders[w]
                        }
                })
            };
            for w in 0..queries.len() {
                let timeline = &timelines[stories[w]];
                let i = pos[w];
                // First of its group moves backward; last moves forward;
                // story-initial/final boundaries have no destination.
                let destination = if is_extreme(w, true) {
                    (i > 0).then(|| queries.group_of(timeline[i - 1]))
                } else if is_extreme(w, false) {
                    (i + 1 < timeline.len()).then(|| queries.group_of(timeline[i + 1]))
                } else {
                    None
                };
                let Some(dest) = destination else { continue };
                if dest == queries.group_of(w) {
                    continue;
                }
                if rng.gen::<f64>() < cfg.p {
                    new_group[w] = dest;
                    moved += 1;
                }
            }
        }
        PerturbKind::RandomWithinStory => {
            let num_stories = stories.iter().copied().max().map_or(0, |m| m + 1);
            let mut story_groups: Vec<Vec<usize>> = vec![Vec::new(); num_stories];
            for w in 0..queries.len() {
                story_groups[stories[w]].push(queries.group_of(w));
            }
            for groups in &mut story_groups {
                groups.sort_unstable();
                groups.dedup();
            }
            for w in 0..queries.len() {
                if rng.gen::<f64>() >= cfg.p {
                    continue;
                }
                let groups = &story_groups[stories[w]];
                if groups.len() < 2 {
                    skipped += 1;
                    continue;
                }
                let own = queries.group_of(w);
                // Uniform over the other groups of the story.
                let pick = rng.gen_range(0..groups.len() - 1);
                let own_pos = groups.binary_search(&own).expect("own group listed");
                let dest = if pick >= own_pos { groups[pick + 1] } else { groups[pick] };
                new_group[w] = dest;
                moved += 1;
            }
        }
    }

    // Compact group ids (ascending) in case a group emptied.
    let max_group = new_group.iter().copied().max().unwrap_or(0);
    let mut occupied = vec![false; max_group + 1];
    for &g in &new_group {
        occupied[g] = true;
    }
    let mut relabel = vec![usize::MAX; max_group + 1];
    let mut next = 0usize;
    for (g, &used) in occupied.iter().enumerate() {
        if used {
            relabel[g] = next;
            next += 1;
        }
    }
    for g in &mut new_group {
        *g = relabel[*g];
    }

    let mut perturbed = QuerySet::new(queries.targets().to_vec(), new_group)?
        .with_stories(stories.to_vec())?;
    if let Some(orders) = queries.order_map() {
        perturbed = perturbed.with_order(orders.to_vec())?;
    }
    if let Some(keys) = queries.stimulus_keys() {
        perturbed = perturbed.with_stimulus_keys(keys.to_vec())?;
    }
    Ok(PerturbOutcome {
        queries: perturbed,
        moved,
        skipped,
    })
}

/// Evidence fraction for the standardized permutation mix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationConfig {
    /// Retained target-specific evidence, in [0, 1].
    pub alpha: f64,
    pub seed: u64,
}

impl AttenuationConfig {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(AuditError::InvalidConfig("alpha must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// A row together with its standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizedRow {
    pub mu: f64,
    pub sigma: f64,
    pub z: Vec<f64>,
}

/// Mean / population standard deviation standardization of one row.
/// Constant rows get `sigma = 0` and `z = 0`.
pub fn standardize_row(row: &[f64]) -> StandardizedRow {
    let n = row.len() as f64;
    let mu = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let sigma = var.sqrt();
    let z = if sigma > 0.0 {
        row.iter().map(|v| (v - mu) / sigma).collect()
    } else {
        vec![0.0; row.len()]
    };
    StandardizedRow { mu, sigma, z }
}

/// Mix each standardized row with a standardized permutation of itself and
/// restore the original row moments:
/// `out = mu + sigma * (sqrt(alpha) * Z + sqrt(1 - alpha) * Z_perm)`.
///
/// The permuted row has the same value multiset, hence the same mean and
/// standard deviation, so its standardization is exactly the permutation
/// of `Z`. Permutations are drawn independently per row from sub-seeds
/// keyed by (seed, row index). Constant rows pass through unchanged, and
/// `alpha = 1` returns the input unchanged (the permutation weight is
/// exactly zero).
pub fn attenuate_logits(logits: &LogitMatrix, cfg: &AttenuationConfig) -> Result<LogitMatrix> {
    cfg.validate()?;
    if cfg.alpha == 1.0 {
        return Ok(logits.clone());
    }
    let n = logits.num_candidates();
    let w_clean = cfg.alpha.sqrt();
    let w_perm = (1.0 - cfg.alpha).sqrt();
    let mut out = Vec::with_capacity(logits.values().len());
    for w in 0..logits.num_queries() {
        let row = logits.row(w);
        let std = standardize_row(row);
        if std.sigma == 0.0 {
            out.extend_from_slice(row);
            continue;
        }
        let mut perm: Vec<usize> = (0..n).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, w as u64));
        perm.shuffle(&mut rng);
        for (j, &source) in perm.iter().enumerate() {
            let mixed = w_clean * std.z[j] + w_perm * std.z[source];
            out.push(std.mu + std.sigma * mixed);
        }
    }
    LogitMatrix::new(out, logits.num_queries(), n)
}

/// One attenuation level of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttenuationPoint {
    pub alpha: f64,
    pub base_r1: f64,
    pub gcb_r1: f64,
    pub delta_r1: f64,
    pub base_mrr: f64,
    pub gcb_mrr: f64,
    pub delta_mrr: f64,
}

/// Recompute the base and corrected metrics at each attenuation level with
/// the grouping and correction hyperparameters held fixed. The same seed
/// (hence the same per-row permutations) is shared across levels.
pub fn attenuation_sweep(
    bundle: &AuditBundle,
    gcb_cfg: &GcbConfig,
    alphas: &[f64],
    seed: u64,
) -> Result<Vec<AttenuationPoint>> {
    let mut points = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let attenuated = attenuate_logits(bundle.logits(), &AttenuationConfig { alpha, seed })?;
        let att_bundle = bundle.with_logits(attenuated)?;
        let base_ranks = compute_ranks(att_bundle.logits(), att_bundle.queries());
        let corrected = apply_gcb(&att_bundle, gcb_cfg)?;
        let gcb_ranks = compute_ranks(&corrected, att_bundle.queries());
        let base = compute_metrics(&base_ranks, &DEFAULT_KS)?;
        let gcb = compute_metrics(&gcb_ranks, &DEFAULT_KS)?;
        points.push(AttenuationPoint {
            alpha,
            base_r1: base.r_at(1),
            gcb_r1: gcb.r_at(1),
            delta_r1: gcb.r_at(1) - base.r_at(1),
            base_mrr: base.mrr,
            gcb_mrr: gcb.mrr,
            delta_mrr: gcb.mrr - base.mrr,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// One story, two adjacent groups of three windows each.
    fn six_query_story() -> QuerySet {
        QuerySet::new(vec![0; 6], vec![0, 0, 0, 1, 1, 1])
            .unwrap()
            .with_stories(vec![0; 6])
            .unwrap()
            .with_order(vec![0, 1, 2, 3, 4, 5])
            .unwrap()
    }

    #[test]
    fn zero_probability_changes_nothing() {
        let queries = six_query_story();
        for kind in [PerturbKind::NeighbourOnce, PerturbKind::RandomWithinStory] {
            let out = perturb_groups(&queries, &PerturbConfig { kind, p: 0.0, seed: 1 }).unwrap();
            assert_eq!(out.queries.group_map(), queries.group_map());
            assert_eq!(out.moved, 0);
        }
    }

    #[test]
    fn neighbour_once_moves_internal_boundary_windows() {
        let queries = six_query_story();
        let out = perturb_groups(
            &queries,
            &PerturbConfig {
                kind: PerturbKind::NeighbourOnce,
                p: 1.0,
                seed: 3,
            },
        )
        .unwrap();
        // Last of group 0 moves forward, first of group 1 moves backward;
        // the story-initial and story-final boundary windows have nowhere
        // to go.
        assert_eq!(out.queries.group_map(), &[0, 0, 1, 0, 1, 1]);
        assert_eq!(out.moved, 2);
    }

    #[test]
    fn single_group_story_is_skipped_with_warning() {
        let queries = QuerySet::new(vec![0; 3], vec![0, 0, 0])
            .unwrap()
            .with_stories(vec![0; 3])
            .unwrap();
        let out = perturb_groups(
            &queries,
            &PerturbConfig {
                kind: PerturbKind::RandomWithinStory,
                p: 1.0,
                seed: 5,
            },
        )
        .unwrap();
        assert_eq!(out.queries.group_map(), queries.group_map());
        assert_eq!(out.moved, 0);
        assert_eq!(out.skipped, 3);
    }

    #[test]
    fn random_within_story_stays_inside_the_story() {
        let queries = QuerySet::new(vec![0; 8], vec![0, 0, 1, 1, 2, 2, 3, 3])
            .unwrap()
            .with_stories(vec![0, 0, 0, 0, 1, 1, 1, 1])
            .unwrap();
        let out = perturb_groups(
            &queries,
            &PerturbConfig {
                kind: PerturbKind::RandomWithinStory,
                p: 1.0,
                seed: 11,
            },
        )
        .unwrap();
        assert_eq!(out.moved, 8);
        for w in 0..8 {
            let g = out.queries.group_of(w);
            assert_ne!(g, queries.group_of(w));
            // Story 0 holds groups {0, 1}; story 1 holds {2, 3}.
            if w < 4 {
                assert!(g <= 1);
            } else {
                assert!(g >= 2);
            }
        }
    }

    #[test]
    fn perturbation_is_seed_deterministic() {
        let queries = QuerySet::new(vec![0; 8], vec![0, 0, 1, 1, 2, 2, 3, 3])
            .unwrap()
            .with_stories(vec![0; 8])
            .unwrap();
        let cfg = PerturbConfig {
            kind: PerturbKind::RandomWithinStory,
            p: 0.5,
            seed: 42,
        };
        let a = perturb_groups(&queries, &cfg).unwrap();
        let b = perturb_groups(&queries, &cfg).unwrap();
        assert_eq!(a.queries.group_map(), b.queries.group_map());
    }

    #[test]
    fn missing_metadata_is_an_error() {
        let queries = QuerySet::new(vec![0; 2], vec![0, 1]).unwrap();
        let err = perturb_groups(
            &queries,
            &PerturbConfig {
                kind: PerturbKind::RandomWithinStory,
                p: 0.5,
                seed: 0,
            },
        )
        .unwrap_err();
        assert!(matches!(err, AuditError::MissingMetadata(_)));
    }

    #[test]
    fn standardized_row_has_zero_mean_unit_std() {
        let std = standardize_row(&[0.0, 1.0, 2.0, 3.0]);
        let n = std.z.len() as f64;
        let mean = std.z.iter().sum::<f64>() / n;
        let var = std.z.iter().map(|v| v * v).sum::<f64>() / n;
        assert!(mean.abs() < 1e-6);
        assert_relative_eq!(var.sqrt(), 1.0, max_relative = 1e-6);
    }

    #[test]
    fn alpha_one_is_identity() {
        let m = LogitMatrix::new(vec![0.5, -1.0, 2.0, 3.5, 0.0, 1.0], 2, 3).unwrap();
        let out = attenuate_logits(&m, &AttenuationConfig { alpha: 1.0, seed: 9 }).unwrap();
        assert_eq!(out.values(), m.values());
    }

    #[test]
    fn alpha_zero_is_a_permutation_up_to_round_trip() {
        let m = LogitMatrix::new(vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0], 1, 8).unwrap();
        let out = attenuate_logits(&m, &AttenuationConfig { alpha: 0.0, seed: 9 }).unwrap();
        let mut original: Vec<f64> = m.row(0).to_vec();
        let mut permuted: Vec<f64> = out.row(0).to_vec();
        original.sort_by(|a, b| a.partial_cmp(b).unwrap());
        permuted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for (a, b) in original.iter().zip(&permuted) {
            assert_relative_eq!(a, b, epsilon = 1e-9);
        }
        // Target-specific placement is destroyed for some entry.
        assert_ne!(out.row(0), m.row(0));
    }

    #[test]
    fn half_mix_matches_direct_formula() {
        // Row [0,1,2,3]; recompute the mix against an inline transcription
        // with the same per-row permutation.
        let m = LogitMatrix::new(vec![0.0, 1.0, 2.0, 3.0], 1, 4).unwrap();
        let seed = 17;
        let out = attenuate_logits(&m, &AttenuationConfig { alpha: 0.5, seed }).unwrap();

        let std = standardize_row(m.row(0));
        let mut perm: Vec<usize> = (0..4).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0));
        perm.shuffle(&mut rng);
        for (j, &source) in perm.iter().enumerate() {
            let expected =
                std.mu + std.sigma * (0.5_f64.sqrt() * std.z[j] + 0.5_f64.sqrt() * std.z[source]);
            assert_relative_eq!(out.row(0)[j], expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn attenuation_preserves_row_moments_approximately() {
        let values: Vec<f64> = (0..64).map(|i| ((i * 37 % 64) as f64) / 7.0 - 3.0).collect();
        let m = LogitMatrix::new(values, 1, 64).unwrap();
        let before = standardize_row(m.row(0));
        let out = attenuate_logits(&m, &AttenuationConfig { alpha: 0.5, seed: 23 }).unwrap();
        let after = standardize_row(out.row(0));
        assert_relative_eq!(after.mu, before.mu, max_relative = 1e-4, epsilon = 1e-9);
        assert_relative_eq!(after.sigma, before.sigma, max_relative = 1e-1);
    }

    #[test]
    fn constant_rows_pass_through() {
        let m = LogitMatrix::new(vec![2.0; 6], 2, 3).unwrap();
        let out = attenuate_logits(&m, &AttenuationConfig { alpha: 0.25, seed: 1 }).unwrap();
        assert_eq!(out.values(), m.values());
    }

    #[test]
    fn sweep_at_alpha_one_reproduces_the_unattenuated_audit_exactly() {
        let bundle = crate::synth::generate(&crate::synth::SynthConfig {
            num_queries: 60,
            num_candidates: 40,
            num_buckets: 8,
            group_size: 6,
            num_stories: 2,
            ..crate::synth::SynthConfig::default()
        })
        .unwrap();
        let cfg = GcbConfig::default();
        let points = attenuation_sweep(&bundle, &cfg, &[1.0], 99).unwrap();
        let base = compute_metrics(
            &compute_ranks(bundle.logits(), bundle.queries()),
            &DEFAULT_KS,
        )
        .unwrap();
        let corrected = apply_gcb(&bundle, &cfg).unwrap();
        let gcb = compute_metrics(&compute_ranks(&corrected, bundle.queries()), &DEFAULT_KS).unwrap();
        assert_eq!(points[0].base_r1.to_bits(), base.r_at(1).to_bits());
        assert_eq!(points[0].gcb_r1.to_bits(), gcb.r_at(1).to_bits());
        assert_eq!(points[0].base_mrr.to_bits(), base.mrr.to_bits());
    }

    #[test]
    fn empty_alpha_list_gives_empty_sweep() {
        let logits = LogitMatrix::new(vec![1.0, 0.0, 0.0, 1.0], 2, 2).unwrap();
        let candidates = crate::bundle::CandidatePool::new(vec![0, 1], 2).unwrap();
        let queries = QuerySet::new(vec![0, 1], vec![0, 1]).unwrap();
        let bundle = crate::bundle::validate_bundle(logits, candidates, queries).unwrap();
        let points = attenuation_sweep(&bundle, &GcbConfig::default(), &[], 0).unwrap();
        assert!(points.is_empty());
    }
}
