//! Synthetic training-dynamics simulator.
//!
//! Each step samples a rollout batch whose depths follow a binomial law with
//! a logistic-in-step success probability, runs the bucketize → plan →
//! repair → instantiate → reward → advantage pipeline for a chosen selection
//! strategy, and logs one [`StepRecord`]. No model is involved: transcripts
//! are synthesized so the parser recovers the sampled depth, which keeps the
//! full text path exercised end to end.
//!
//! Depth sampling, reward sampling, and within-bucket selection draw from
//! three disjoint RNG streams derived from one seed, so changing the reward
//! model can never perturb depths or selection, and runs are reproducible
//! from the single seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{
    anti_plan, auto_plan, bucketize, maybe_advance_phase, phase_plan, sdga_repair, PhaseState,
};
use crate::selection::{compute_advantages, compute_reward, instantiate, SelectedSet};
use crate::trajectory::{synthetic_transcript, RolloutBatch, Trajectory};

/// Batch geometry and reward weighting used when nothing else is specified.
pub mod defaults {
    pub const N_PROMPTS: usize = 64;
    pub const ROLLOUTS_PER_PROMPT: usize = 3;
    pub const BUDGET: usize = 96;
    pub const S_MAX: usize = 5;
    pub const LAMBDA_F: f64 = 0.2;
    pub const STEPS: usize = 200;
}

/// How per-trajectory depth evolves over steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum DepthSchedule {
    /// Binomial success probability `sigmoid(intercept + slope * step)`.
    Logistic { intercept: f64, slope: f64 },
}

impl DepthSchedule {
    /// Per-trial success probability at `step`, shifted by the (already
    /// coupling-scaled) closed-loop feedback term.
    pub fn success_probability(&self, step: usize, coupled_shift: f64) -> f64 {
        match self {
            DepthSchedule::Logistic { intercept, slope } => {
                sigmoid(intercept + slope * step as f64 + coupled_shift)
            }
        }
    }

    /// Open-loop expected depth at `step`: `s_max * p`. Exactly monotone in
    /// `step` whenever the slope is positive.
    pub fn analytic_mean_depth(&self, s_max: usize, step: usize) -> f64 {
        s_max as f64 * self.success_probability(step, 0.0)
    }

    fn validate(&self) -> Result<(), SimConfigError> {
        match self {
            DepthSchedule::Logistic { intercept, slope } => {
                if !intercept.is_finite() {
                    return Err(SimConfigError::NonFiniteParameter {
                        field: "depth_schedule.intercept",
                        value: *intercept,
                    });
                }
                if !slope.is_finite() {
                    return Err(SimConfigError::NonFiniteParameter {
                        field: "depth_schedule.slope",
                        value: *slope,
                    });
                }
                Ok(())
            }
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Correctness model: `P(correct) = clamp(base + gain * depth + noise * N(0,1))`,
/// thresholded to a binary answer and blended with the format term.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardModel {
    pub base_accuracy: f64,
    pub depth_gain: f64,
    pub noise: f64,
    pub lambda_f: f64,
}

impl Default for RewardModel {
    fn default() -> Self {
        RewardModel { base_accuracy: 0.15, depth_gain: 0.15, noise: 0.05, lambda_f: defaults::LAMBDA_F }
    }
}

impl RewardModel {
    fn validate(&self) -> Result<(), SimConfigError> {
        for (field, value) in [
            ("reward_model.base_accuracy", self.base_accuracy),
            ("reward_model.depth_gain", self.depth_gain),
            ("reward_model.noise", self.noise),
        ] {
            if !value.is_finite() {
                return Err(SimConfigError::NonFiniteParameter { field, value });
            }
        }
        if self.noise < 0.0 {
            return Err(SimConfigError::NegativeNoise(self.noise));
        }
        if !(0.0..=1.0).contains(&self.lambda_f) {
            return Err(SimConfigError::BadLambda(self.lambda_f));
        }
        Ok(())
    }
}

/// Full simulation configuration. `Default` matches the standard batch
/// geometry (64 prompts x 3 rollouts, budget 96, depth cap 5) with a
/// saturating open-loop schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub n_prompts: usize,
    pub rollouts_per_prompt: usize,
    pub budget: usize,
    pub s_max: usize,
    pub steps: usize,
    pub depth_schedule: DepthSchedule,
    pub reward_model: RewardModel,
    pub coupling: f64,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_prompts: defaults::N_PROMPTS,
            rollouts_per_prompt: defaults::ROLLOUTS_PER_PROMPT,
            budget: defaults::BUDGET,
            s_max: defaults::S_MAX,
            steps: defaults::STEPS,
            depth_schedule: DepthSchedule::Logistic { intercept: -4.0, slope: 0.06 },
            reward_model: RewardModel::default(),
            coupling: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SimConfigError {
    #[error("{field} must be at least 1")]
    ZeroField { field: &'static str },
    #[error("{field} must be finite, got {value}")]
    NonFiniteParameter { field: &'static str, value: f64 },
    #[error("coupling must be finite and >= 0, got {0}")]
    BadCoupling(f64),
    #[error("reward noise must be >= 0, got {0}")]
    NegativeNoise(f64),
    #[error("lambda_f must be in [0, 1], got {0}")]
    BadLambda(f64),
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimConfigError> {
        for (field, value) in [
            ("n_prompts", self.n_prompts),
            ("rollouts_per_prompt", self.rollouts_per_prompt),
            ("budget", self.budget),
            ("s_max", self.s_max),
        ] {
            if value == 0 {
                return Err(SimConfigError::ZeroField { field });
            }
        }
        self.depth_schedule.validate()?;
        self.reward_model.validate()?;
        if !self.coupling.is_finite() || self.coupling < 0.0 {
            return Err(SimConfigError::BadCoupling(self.coupling));
        }
        Ok(())
    }
}

/// Selection strategy a simulated run applies every step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Auto,
    Phase,
    Anti,
    /// Draw the budget uniformly at random from the pool.
    Random,
    /// Keep the entire pool; the budget is ignored.
    Full,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Strategy::Auto => "auto",
            Strategy::Phase => "phase",
            Strategy::Anti => "anti",
            Strategy::Random => "random",
            Strategy::Full => "full",
        };
        write!(f, "{name}")
    }
}

#[derive(Debug, Error)]
#[error("unknown strategy {0:?}, expected auto, phase, anti, random, or full")]
pub struct ParseStrategyError(String);

impl std::str::FromStr for Strategy {
    type Err = ParseStrategyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(Strategy::Auto),
            "phase" => Ok(Strategy::Phase),
            "anti" => Ok(Strategy::Anti),
            "random" => Ok(Strategy::Random),
            "full" => Ok(Strategy::Full),
            other => Err(ParseStrategyError(other.to_string())),
        }
    }
}

/// One logged simulation step, in CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub phase: usize,
    pub depth_histogram: Vec<usize>,
    pub mean_batch_depth: f64,
    pub mean_selected_depth: f64,
    pub mean_reward_selected: f64,
    pub clipped: bool,
}

impl StepRecord {
    /// Header matching [`StepRecord::csv_row`]: histogram columns are
    /// `h0..h{s_max}`.
    pub fn csv_header(s_max: usize) -> String {
        let mut columns = vec!["step".to_string(), "phase".to_string()];
        columns.extend((0..=s_max).map(|s| format!("h{s}")));
        columns.extend(
            ["mean_batch_depth", "mean_selected_depth", "mean_reward_selected", "clipped"]
                .map(str::to_string),
        );
        columns.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut fields = vec![self.step.to_string(), self.phase.to_string()];
        fields.extend(self.depth_histogram.iter().map(usize::to_string));
        fields.push(self.mean_batch_depth.to_string());
        fields.push(self.mean_selected_depth.to_string());
        fields.push(self.mean_reward_selected.to_string());
        fields.push(self.clipped.to_string());
        fields.join(",")
    }
}

const STREAM_DEPTH: u64 = 1;
const STREAM_REWARD: u64 = 2;
const STREAM_SELECT: u64 = 3;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for one (seed, step, stream) triple; streams never overlap.
fn derive_seed(seed: u64, step: usize, stream: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ splitmix64(((step as u64) << 3) | stream))
}

/// Gold answer associated with a prompt group.
pub fn gold_answer(group: usize) -> String {
    format!("entity {group}")
}

/// Sample one step's rollout batch. `feedback` is the raw
/// selected-minus-batch mean depth of the previous step; it shifts the
/// logit by `coupling * feedback`, so coupling zero reproduces the open-loop
/// schedule exactly.
pub fn sample_batch(config: &SimConfig, step: usize, feedback: f64) -> RolloutBatch {
    let p = config
        .depth_schedule
        .success_probability(step, config.coupling * feedback)
        .clamp(0.0, 1.0);
    let mut depth_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, step, STREAM_DEPTH));
    let mut reward_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, step, STREAM_REWARD));

    let mut trajectories = Vec::with_capacity(config.n_prompts * config.rollouts_per_prompt);
    for group in 0..config.n_prompts {
        let gold = gold_answer(group);
        for rollout in 0..config.rollouts_per_prompt {
            let depth = (0..config.s_max).filter(|_| depth_rng.random_bool(p)).count();
            let shift: f64 = reward_rng.sample(StandardNormal);
            let p_correct = (config.reward_model.base_accuracy
                + config.reward_model.depth_gain * depth as f64
                + config.reward_model.noise * shift)
                .clamp(0.0, 1.0);
            let correct = reward_rng.random_bool(p_correct);
            let answer = if correct { gold.as_str() } else { "unknown" };
            let text = synthetic_transcript(depth, &gold, answer);
            trajectories.push(Trajectory::parse(
                format!("s{step}-p{group}-r{rollout}"),
                group,
                text,
                config.s_max,
            ));
        }
    }
    RolloutBatch::new(trajectories, config.n_prompts, config.rollouts_per_prompt, config.s_max)
        .expect("synthetic batch always satisfies the group structure")
}

fn mean_depth(trajectories: &[&Trajectory]) -> f64 {
    trajectories.iter().map(|t| t.clamped_depth as f64).sum::<f64>() / trajectories.len() as f64
}

/// Run the per-step pipeline (sample, bucketize, plan + repair per strategy,
/// instantiate, reward, advantage) and log one record per step.
pub fn run_simulation(
    config: &SimConfig,
    strategy: Strategy,
) -> Result<Vec<StepRecord>, SimConfigError> {
    config.validate()?;
    let mut records = Vec::with_capacity(config.steps);
    let mut phase = PhaseState::default();
    let mut feedback = 0.0;

    for step in 0..config.steps {
        let batch = sample_batch(config, step, feedback);
        let stats = bucketize(&batch);
        let select_seed = derive_seed(config.seed, step, STREAM_SELECT);

        let (selected, clipped) = match strategy {
            Strategy::Auto => {
                let plan = auto_plan(config.s_max, config.budget);
                let outcome = sdga_repair(stats.capacities(), &plan.targets, &plan.priorities);
                let selected = instantiate(&batch, &outcome.feasible, select_seed)
                    .expect("repair output is feasible");
                (selected, outcome.clipped)
            }
            Strategy::Phase => {
                phase = maybe_advance_phase(phase, stats.capacities(), config.budget);
                let plan = phase_plan(config.s_max, config.budget, phase);
                let outcome = sdga_repair(stats.capacities(), &plan.targets, &plan.priorities);
                let selected = instantiate(&batch, &outcome.feasible, select_seed)
                    .expect("repair output is feasible");
                (selected, outcome.clipped)
            }
            Strategy::Anti => {
                let plan = anti_plan(config.s_max, config.budget);
                let outcome = sdga_repair(stats.capacities(), &plan.targets, &plan.priorities);
                let selected = instantiate(&batch, &outcome.feasible, select_seed)
                    .expect("repair output is feasible");
                (selected, outcome.clipped)
            }
            Strategy::Random => {
                let want = config.budget.min(batch.len());
                let mut rng = ChaCha8Rng::seed_from_u64(select_seed);
                let mut chosen =
                    rand::seq::index::sample(&mut rng, batch.len(), want).into_vec();
                chosen.sort_unstable();
                let selected = selected_from_indices(&batch, &chosen, select_seed);
                (selected, config.budget > batch.len())
            }
            Strategy::Full => {
                let all: Vec<usize> = (0..batch.len()).collect();
                (selected_from_indices(&batch, &all, select_seed), false)
            }
        };

        let by_id: std::collections::HashMap<&str, &Trajectory> =
            batch.trajectories.iter().map(|t| (t.id.as_str(), t)).collect();
        let retained: Vec<&Trajectory> =
            selected.trajectory_ids.iter().map(|id| by_id[id.as_str()]).collect();
        let rewards: Vec<f64> = retained
            .iter()
            .map(|t| compute_reward(t, &[gold_answer(t.group_id)], config.reward_model.lambda_f))
            .collect();
        let _advantages = compute_advantages(&batch, &selected, &rewards);

        let all: Vec<&Trajectory> = batch.trajectories.iter().collect();
        let mean_batch_depth = mean_depth(&all);
        let mean_selected_depth = mean_depth(&retained);
        let mean_reward_selected = rewards.iter().sum::<f64>() / rewards.len() as f64;

        records.push(StepRecord {
            step,
            phase: phase.phase(),
            depth_histogram: stats.capacities().to_vec(),
            mean_batch_depth,
            mean_selected_depth,
            mean_reward_selected,
            clipped,
        });
        feedback = mean_selected_depth - mean_batch_depth;
    }
    Ok(records)
}

fn selected_from_indices(batch: &RolloutBatch, indices: &[usize], seed: u64) -> SelectedSet {
    let mut per_bucket_draws = vec![0usize; batch.s_max + 1];
    let mut trajectory_ids = Vec::with_capacity(indices.len());
    for &index in indices {
        let trajectory = &batch.trajectories[index];
        per_bucket_draws[trajectory.clamped_depth] += 1;
        trajectory_ids.push(trajectory.id.clone());
    }
    SelectedSet { trajectory_ids, per_bucket_draws, seed }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn small_config() -> SimConfig {
        SimConfig {
            n_prompts: 16,
            rollouts_per_prompt: 3,
            budget: 24,
            steps: 30,
            seed: 7,
            ..SimConfig::default()
        }
    }

    #[test]
    fn flat_schedule_hits_binomial_mean() {
        let config = SimConfig {
            depth_schedule: DepthSchedule::Logistic { intercept: 0.0, slope: 0.0 },
            seed: 11,
            ..SimConfig::default()
        };
        let batch = sample_batch(&config, 0, 0.0);
        assert_eq!(batch.len(), 192);
        let mean = batch.trajectories.iter().map(|t| t.clamped_depth as f64).sum::<f64>() / 192.0;
        assert!((mean - 2.5).abs() < 0.15, "mean {mean} strays from 2.5");
    }

    #[test]
    fn saturated_schedule_concentrates_at_s_max() {
        let config = SimConfig {
            depth_schedule: DepthSchedule::Logistic { intercept: 8.0, slope: 0.0 },
            ..SimConfig::default()
        };
        let batch = sample_batch(&config, 0, 0.0);
        let deepest = batch.trajectories.iter().filter(|t| t.clamped_depth == 5).count();
        assert!(deepest > 180, "only {deepest}/192 at the cap");
    }

    #[test]
    fn transcripts_round_trip_through_parser() {
        let batch = sample_batch(&small_config(), 3, 0.0);
        for trajectory in &batch.trajectories {
            assert!(trajectory.format_valid);
            assert_eq!(trajectory.search_count, trajectory.clamped_depth);
        }
    }

    #[test]
    fn identical_configs_reproduce_records_exactly() {
        let config = small_config();
        let a = run_simulation(&config, Strategy::Phase).unwrap();
        let b = run_simulation(&config, Strategy::Phase).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn open_loop_batches_are_strategy_independent() {
        let config = small_config();
        let auto = run_simulation(&config, Strategy::Auto).unwrap();
        let anti = run_simulation(&config, Strategy::Anti).unwrap();
        for (a, b) in auto.iter().zip(&anti) {
            assert_eq!(a.depth_histogram, b.depth_histogram);
            assert_eq!(a.mean_batch_depth, b.mean_batch_depth);
        }
    }

    #[test]
    fn full_strategy_selects_the_whole_batch() {
        let records = run_simulation(&small_config(), Strategy::Full).unwrap();
        for record in &records {
            assert_eq!(record.mean_selected_depth, record.mean_batch_depth);
            assert!(!record.clipped);
        }
    }

    #[test]
    fn selected_depth_ordering_holds_per_step() {
        let config = small_config();
        let auto = run_simulation(&config, Strategy::Auto).unwrap();
        let random = run_simulation(&config, Strategy::Random).unwrap();
        let anti = run_simulation(&config, Strategy::Anti).unwrap();
        for ((a, r), n) in auto.iter().zip(&random).zip(&anti) {
            assert!(a.mean_selected_depth >= r.mean_selected_depth);
            assert!(r.mean_selected_depth >= n.mean_selected_depth);
        }
    }

    #[test]
    fn phase_run_is_monotone() {
        let records = run_simulation(&small_config(), Strategy::Phase).unwrap();
        for pair in records.windows(2) {
            assert!(pair[1].phase >= pair[0].phase);
        }
    }

    #[test]
    fn reward_noise_never_touches_selection() {
        let quiet = SimConfig {
            reward_model: RewardModel { noise: 0.0, ..RewardModel::default() },
            ..small_config()
        };
        let loud = SimConfig {
            reward_model: RewardModel { noise: 0.9, ..RewardModel::default() },
            ..small_config()
        };
        for step in 0..5 {
            let batch_quiet = sample_batch(&quiet, step, 0.0);
            let batch_loud = sample_batch(&loud, step, 0.0);
            let depths = |b: &RolloutBatch| {
                b.trajectories.iter().map(|t| t.clamped_depth).collect::<Vec<_>>()
            };
            assert_eq!(depths(&batch_quiet), depths(&batch_loud));

            let plan = auto_plan(quiet.s_max, quiet.budget);
            let select = |b: &RolloutBatch| {
                let stats = bucketize(b);
                let outcome = sdga_repair(stats.capacities(), &plan.targets, &plan.priorities);
                instantiate(b, &outcome.feasible, derive_seed(quiet.seed, step, STREAM_SELECT))
                    .unwrap()
            };
            assert_eq!(select(&batch_quiet), select(&batch_loud));
        }
    }

    #[test]
    fn zero_steps_yield_no_records() {
        let config = SimConfig { steps: 0, ..small_config() };
        assert!(run_simulation(&config, Strategy::Auto).unwrap().is_empty());
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let zero = SimConfig { budget: 0, ..SimConfig::default() };
        assert_eq!(zero.validate().unwrap_err(), SimConfigError::ZeroField { field: "budget" });

        let nan = SimConfig {
            depth_schedule: DepthSchedule::Logistic { intercept: f64::NAN, slope: 0.0 },
            ..SimConfig::default()
        };
        assert!(matches!(nan.validate().unwrap_err(), SimConfigError::NonFiniteParameter { .. }));

        let negative = SimConfig { coupling: -1.0, ..SimConfig::default() };
        assert_eq!(negative.validate().unwrap_err(), SimConfigError::BadCoupling(-1.0));
    }

    #[test]
    fn csv_row_matches_header_arity() {
        let record = StepRecord {
            step: 3,
            phase: 1,
            depth_histogram: vec![1, 2, 3, 4, 5, 6],
            mean_batch_depth: 2.5,
            mean_selected_depth: 3.25,
            mean_reward_selected: 0.4,
            clipped: false,
        };
        let header = StepRecord::csv_header(5);
        assert_eq!(header.split(',').count(), record.csv_row().split(',').count());
        assert!(record.csv_row().starts_with("3,1,1,2,3,4,5,6,"));
    }

    proptest! {
        #[test]
        fn analytic_mean_is_monotone_for_positive_slope(
            intercept in -6.0f64..6.0,
            slope in 0.001f64..0.5,
            s_max in 1usize..=8,
        ) {
            let schedule = DepthSchedule::Logistic { intercept, slope };
            let mut previous = f64::NEG_INFINITY;
            for step in 0..50 {
                let mean = schedule.analytic_mean_depth(s_max, step);
                prop_assert!(mean >= previous);
                previous = mean;
            }
        }

        #[test]
        fn coupling_zero_recovers_open_loop(feedback in -5.0f64..5.0, step in 0usize..100) {
            let schedule = DepthSchedule::Logistic { intercept: -1.0, slope: 0.05 };
            let open = schedule.success_probability(step, 0.0);
            let config = SimConfig { coupling: 0.0, depth_schedule: schedule.clone(), ..SimConfig::default() };
            let shifted = config.depth_schedule.success_probability(step, config.coupling * feedback);
            prop_assert_eq!(open, shifted);
        }
    }
}
