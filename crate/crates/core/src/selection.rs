//! Trajectory-level instantiation of a bucket allocation, reward scoring, and
//! subset-restricted group-normalized advantages.
//!
//! Selection is deliberately reward-blind: [`instantiate`] sees only depths
//! and a seed. Rewards enter afterwards, and advantages are normalized within
//! each prompt group restricted to the retained trajectories — groups with no
//! retained member are excluded from the update entirely.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{RolloutBatch, Trajectory};

/// Floor for the advantage denominator, guarding zero-variance groups.
pub const EPSILON_NUM: f64 = 1e-6;

/// The concrete trajectory subset drawn for one update.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectedSet {
    /// Retained trajectory ids, grouped by bucket in ascending depth order
    /// and in batch order within each bucket.
    pub trajectory_ids: Vec<String>,
    /// How many ids were drawn from each bucket; mirrors the feasible
    /// allocation that produced this set.
    pub per_bucket_draws: Vec<usize>,
    /// Seed the draws were made with.
    pub seed: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SelectionError {
    #[error("feasible allocation has {got} buckets, batch needs {expected}")]
    LengthMismatch { got: usize, expected: usize },
    #[error("bucket {bucket}: allocation {requested} exceeds membership {available}")]
    AllocationExceedsBucket { bucket: usize, requested: usize, available: usize },
}

/// Draw exactly `feasible[s]` trajectories from each depth bucket, uniformly
/// without replacement, deterministically in `(batch, feasible, seed)`.
pub fn instantiate(
    batch: &RolloutBatch,
    feasible: &[usize],
    seed: u64,
) -> Result<SelectedSet, SelectionError> {
    if feasible.len() != batch.s_max + 1 {
        return Err(SelectionError::LengthMismatch {
            got: feasible.len(),
            expected: batch.s_max + 1,
        });
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); batch.s_max + 1];
    for (index, trajectory) in batch.trajectories.iter().enumerate() {
        buckets[trajectory.clamped_depth].push(index);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trajectory_ids = Vec::with_capacity(feasible.iter().sum());
    for (bucket, members) in buckets.iter().enumerate() {
        let requested = feasible[bucket];
        if requested > members.len() {
            return Err(SelectionError::AllocationExceedsBucket {
                bucket,
                requested,
                available: members.len(),
            });
        }
        let mut chosen = rand::seq::index::sample(&mut rng, members.len(), requested).into_vec();
        chosen.sort_unstable();
        trajectory_ids
            .extend(chosen.into_iter().map(|i| batch.trajectories[members[i]].id.clone()));
    }
    Ok(SelectedSet { trajectory_ids, per_bucket_draws: feasible.to_vec(), seed })
}

/// Open-domain QA answer normalization: lowercase, drop ASCII punctuation,
/// drop the articles a/an/the, collapse whitespace.
pub fn normalize_answer(answer: &str) -> String {
    let lowered = answer.to_lowercase();
    let stripped: String = lowered.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    stripped
        .split_whitespace()
        .filter(|token| !matches!(*token, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Token-level F1 between two whitespace-tokenized strings, with multiset
/// overlap. Callers normalize first.
pub fn token_f1(prediction: &str, gold: &str) -> f64 {
    let predicted: Vec<&str> = prediction.split_whitespace().collect();
    let reference: Vec<&str> = gold.split_whitespace().collect();
    if predicted.is_empty() && reference.is_empty() {
        return 1.0;
    }
    if predicted.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut available: HashMap<&str, usize> = HashMap::new();
    for token in &reference {
        *available.entry(token).or_insert(0) += 1;
    }
    let mut common = 0usize;
    for token in &predicted {
        if let Some(budget) = available.get_mut(token) {
            if *budget > 0 {
                *budget -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / predicted.len() as f64;
    let recall = common as f64 / reference.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Blend answer quality with format compliance:
/// `F1 * (1 - lambda_f) + lambda_f * fmt`, where F1 is the best token F1
/// against any gold answer (0 when no answer was extracted) and `fmt` is 1
/// iff the transcript is format-valid.
pub fn compute_reward(trajectory: &Trajectory, gold_answers: &[String], lambda_f: f64) -> f64 {
    assert!((0.0..=1.0).contains(&lambda_f), "lambda_f must be in [0, 1]");
    let f1 = match &trajectory.extracted_answer {
        None => 0.0,
        Some(answer) => {
            let predicted = normalize_answer(answer);
            gold_answers
                .iter()
                .map(|gold| token_f1(&predicted, &normalize_answer(gold)))
                .fold(0.0, f64::max)
        }
    };
    let fmt = if trajectory.format_valid { 1.0 } else { 0.0 };
    f1 * (1.0 - lambda_f) + lambda_f * fmt
}

/// Per-trajectory reward and advantage for the retained subset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageEntry {
    pub id: String,
    pub reward: f64,
    pub advantage: f64,
}

/// Advantages for a selected subset plus the prompt groups that lost all
/// their rollouts to selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantageTable {
    pub entries: Vec<AdvantageEntry>,
    pub excluded_groups: Vec<usize>,
}

/// Group-normalize rewards over the retained subset only.
///
/// `rewards[i]` belongs to `selected.trajectory_ids[i]`. Within each retained
/// group the advantage is `(r - mean) / max(pop_std, EPSILON_NUM)`; singleton
/// and zero-variance groups get advantages of exactly zero. Groups with no
/// retained trajectory are listed in `excluded_groups`.
///
/// Panics if a selected id is missing from the batch or the reward slice
/// length disagrees with the selection.
pub fn compute_advantages(
    batch: &RolloutBatch,
    selected: &SelectedSet,
    rewards: &[f64],
) -> AdvantageTable {
    assert_eq!(
        rewards.len(),
        selected.trajectory_ids.len(),
        "one reward per selected trajectory"
    );
    let group_of: HashMap<&str, usize> = batch
        .trajectories
        .iter()
        .map(|t| (t.id.as_str(), t.group_id))
        .collect();

    let mut members: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (position, id) in selected.trajectory_ids.iter().enumerate() {
        let group = *group_of
            .get(id.as_str())
            .unwrap_or_else(|| panic!("selected id {id:?} not in batch"));
        members.entry(group).or_default().push(position);
    }

    let mut advantages = vec![0.0; rewards.len()];
    for positions in members.values() {
        let group_rewards: Vec<f64> = positions.iter().map(|&p| rewards[p]).collect();
        let identical = group_rewards.iter().all(|&r| r == group_rewards[0]);
        if positions.len() == 1 || identical {
            continue;
        }
        let n = group_rewards.len() as f64;
        let mean = group_rewards.iter().sum::<f64>() / n;
        let variance =
            group_rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
        let denominator = variance.sqrt().max(EPSILON_NUM);
        for &position in positions {
            advantages[position] = (rewards[position] - mean) / denominator;
        }
    }

    let retained: BTreeSet<usize> = members.keys().copied().collect();
    let excluded_groups =
        (0..batch.n_prompts).filter(|g| !retained.contains(g)).collect();

    let entries = selected
        .trajectory_ids
        .iter()
        .zip(rewards)
        .zip(&advantages)
        .map(|((id, &reward), &advantage)| AdvantageEntry { id: id.clone(), reward, advantage })
        .collect();
    AdvantageTable { entries, excluded_groups }
}
