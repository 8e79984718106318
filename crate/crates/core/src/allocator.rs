//! Search-depth greedy allocation (SDGA).
//!
//! A rollout batch is partitioned by clamped search depth into buckets
//! `0..=s_max` with capacities `c_s`. A plan assigns each bucket a target
//! allocation `t_s` (with `Σ t_s = K`, the update budget) and a priority
//! `p_s` (a permutation of `1..=s_max+1`, smaller is higher). The repair
//! operator [`sdga_repair`] turns targets into a feasible allocation
//! `0 <= f_s <= c_s` by greedy overflow redistribution in priority order.
//!
//! Three plan families are provided:
//!
//! * [`auto_plan`] targets the deepest bucket and prefers deeper buckets when
//!   redistributing, so the budget always lands on the deepest trajectories
//!   the batch can supply.
//! * [`phase_plan`] targets bucket `k+1` for a monotone curriculum threshold
//!   `k`, preferring deeper buckets next and shallower ones last. At
//!   `k = s_max - 1` it coincides with [`auto_plan`].
//! * [`anti_plan`] reverses the auto ordering and drains the shallowest
//!   buckets first; it exists as a directional control.
//!
//! All functions here are pure; [`PhaseState`] is the only stateful piece and
//! only ever advances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::trajectory::{RolloutBatch, Trajectory};

/// Per-depth capacities `c_s` for one batch, `s` in `0..=s_max`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BucketStats {
    capacities: Vec<usize>,
}

impl BucketStats {
    /// Wrap a dense capacity vector indexed by depth. Empty buckets carry
    /// capacity zero rather than being omitted.
    ///
    /// Panics if `capacities` is empty.
    pub fn new(capacities: Vec<usize>) -> Self {
        assert!(!capacities.is_empty(), "need at least bucket 0");
        BucketStats { capacities }
    }

    /// Count trajectories per clamped depth.
    pub fn from_trajectories(trajectories: &[Trajectory], s_max: usize) -> Self {
        let mut capacities = vec![0usize; s_max + 1];
        for trajectory in trajectories {
            capacities[trajectory.clamped_depth] += 1;
        }
        BucketStats { capacities }
    }

    pub fn capacities(&self) -> &[usize] {
        &self.capacities
    }

    pub fn s_max(&self) -> usize {
        self.capacities.len() - 1
    }

    /// Total capacity, i.e. the batch size when built from a batch.
    pub fn total(&self) -> usize {
        self.capacities.iter().sum()
    }

    /// Supply strictly deeper than `depth`: `Σ_{s > depth} c_s`.
    pub fn supply_above(&self, depth: usize) -> usize {
        self.capacities.iter().skip(depth + 1).sum()
    }
}

/// Partition a batch into depth buckets.
pub fn bucketize(batch: &RolloutBatch) -> BucketStats {
    BucketStats::from_trajectories(&batch.trajectories, batch.s_max)
}

/// Target allocations and priorities for one plan, both indexed by depth.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlanSpec {
    /// Desired per-bucket allocations, summing to the budget.
    pub targets: Vec<usize>,
    /// Priority values, a permutation of `1..=s_max+1`; smaller is higher.
    pub priorities: Vec<usize>,
}

/// Monotone curriculum threshold `k` in `0..=s_max-1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseState {
    phase: usize,
}

impl PhaseState {
    pub fn new(phase: usize) -> Self {
        PhaseState { phase }
    }

    pub fn phase(&self) -> usize {
        self.phase
    }
}

impl Default for PhaseState {
    fn default() -> Self {
        PhaseState::new(0)
    }
}

/// Plan targeting the deepest bucket: `t_{s_max} = K`, priorities
/// `p_s = s_max - s + 1` (deepest first).
pub fn auto_plan(s_max: usize, k_budget: usize) -> PlanSpec {
    assert!(s_max >= 1, "s_max must be at least 1");
    assert!(k_budget >= 1, "budget must be at least 1");
    let mut targets = vec![0; s_max + 1];
    targets[s_max] = k_budget;
    let priorities = (0..=s_max).map(|s| s_max - s + 1).collect();
    PlanSpec { targets, priorities }
}

/// Plan targeting bucket `k+1` at phase `k`: priorities run
/// `k+1, k+2, …, s_max, k, k-1, …, 0`, so redistribution prefers deeper
/// buckets before falling back to shallower ones.
pub fn phase_plan(s_max: usize, k_budget: usize, state: PhaseState) -> PlanSpec {
    assert!(s_max >= 1, "s_max must be at least 1");
    assert!(k_budget >= 1, "budget must be at least 1");
    let k = state.phase();
    assert!(k < s_max, "phase {k} out of range for s_max {s_max}");
    let mut targets = vec![0; s_max + 1];
    targets[k + 1] = k_budget;
    let priorities = (0..=s_max)
        .map(|s| if s > k { s - k } else { s_max + 1 - s })
        .collect();
    PlanSpec { targets, priorities }
}

/// Plan reversing the auto ordering: `t_0 = K`, priorities `p_s = s + 1`
/// (shallowest first).
pub fn anti_plan(s_max: usize, k_budget: usize) -> PlanSpec {
    assert!(s_max >= 1, "s_max must be at least 1");
    assert!(k_budget >= 1, "budget must be at least 1");
    let mut targets = vec![0; s_max + 1];
    targets[0] = k_budget;
    let priorities = (0..=s_max).map(|s| s + 1).collect();
    PlanSpec { targets, priorities }
}

/// Advance the phase from `k` to `k+1` when buckets strictly above the
/// current target bucket can already supply the full budget:
/// `Σ_{s > k+1} c_s >= K`. At most one advance per call, and never past
/// `s_max - 1`, so any call sequence yields a non-decreasing phase.
pub fn maybe_advance_phase(
    state: PhaseState,
    capacities: &[usize],
    k_budget: usize,
) -> PhaseState {
    let s_max = capacities.len() - 1;
    let k = state.phase();
    if k + 1 >= s_max {
        return state;
    }
    let supply_above_target: usize = capacities.iter().skip(k + 2).sum();
    if supply_above_target >= k_budget {
        PhaseState::new(k + 1)
    } else {
        state
    }
}

/// Result of repairing a target allocation against bucket capacities.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RepairOutcome {
    /// Feasible per-bucket allocations, `0 <= f_s <= c_s`.
    pub feasible: Vec<usize>,
    /// Set when total capacity was below the budget and the whole batch was
    /// returned instead.
    pub clipped: bool,
}

/// Greedy overflow redistribution.
///
/// Buckets are processed in ascending priority value. When a bucket's target
/// exceeds its capacity, the overflow first fills spare capacity of
/// later-priority buckets in priority order, then of earlier-priority buckets
/// walked in reverse (nearest rank first). When `Σ targets <= Σ capacities`
/// the total allocation is preserved; otherwise the all-capacity allocation
/// is returned with `clipped` set.
///
/// Panics if the slices disagree in length or `priorities` is not a
/// permutation of `1..=len`.
pub fn sdga_repair(capacities: &[usize], targets: &[usize], priorities: &[usize]) -> RepairOutcome {
    let n = capacities.len();
    assert_eq!(targets.len(), n, "targets/capacities length mismatch");
    assert_eq!(priorities.len(), n, "priorities/capacities length mismatch");
    assert!(is_permutation(priorities), "priorities must be a permutation of 1..=len");

    let budget: usize = targets.iter().sum();
    if capacities.iter().sum::<usize>() < budget {
        return RepairOutcome { feasible: capacities.to_vec(), clipped: true };
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by_key(|&s| priorities[s]);

    let mut feasible = targets.to_vec();
    for position in 0..n {
        let bucket = order[position];
        if feasible[bucket] <= capacities[bucket] {
            continue;
        }
        let mut overflow = feasible[bucket] - capacities[bucket];
        feasible[bucket] = capacities[bucket];

        for &receiver in &order[position + 1..] {
            if overflow == 0 {
                break;
            }
            let spare = capacities[receiver].saturating_sub(feasible[receiver]);
            let moved = spare.min(overflow);
            feasible[receiver] += moved;
            overflow -= moved;
        }
        if overflow > 0 {
            for &receiver in order[..position].iter().rev() {
                if overflow == 0 {
                    break;
                }
                let spare = capacities[receiver].saturating_sub(feasible[receiver]);
                let moved = spare.min(overflow);
                feasible[receiver] += moved;
                overflow -= moved;
            }
        }
        debug_assert_eq!(overflow, 0, "overflow cannot survive when budget <= capacity");
    }
    RepairOutcome { feasible, clipped: false }
}

fn is_permutation(priorities: &[usize]) -> bool {
    let mut seen = vec![false; priorities.len()];
    for &p in priorities {
        if p == 0 || p > priorities.len() || seen[p - 1] {
            return false;
        }
        seen[p - 1] = true;
    }
    true
}

/// A fully resolved allocation: the plan plus its repaired result.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AllocationPlan {
    pub targets: Vec<usize>,
    pub priorities: Vec<usize>,
    pub feasible: Vec<usize>,
    pub budget: usize,
    pub clipped: bool,
}

impl PlanSpec {
    /// Repair this plan against the given capacities.
    pub fn repair(&self, capacities: &[usize]) -> AllocationPlan {
        let outcome = sdga_repair(capacities, &self.targets, &self.priorities);
        AllocationPlan {
            targets: self.targets.clone(),
            priorities: self.priorities.clone(),
            feasible: outcome.feasible,
            budget: self.targets.iter().sum(),
            clipped: outcome.clipped,
        }
    }
}

/// The three plan families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SdgaVariant {
    Auto,
    Phase,
    Anti,
}

impl std::fmt::Display for SdgaVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SdgaVariant::Auto => write!(f, "auto"),
            SdgaVariant::Phase => write!(f, "phase"),
            SdgaVariant::Anti => write!(f, "anti"),
        }
    }
}

#[derive(Debug, Error)]
#[error("unknown variant {0:?}, expected auto, phase, or anti")]
pub struct ParseVariantError(String);

impl std::str::FromStr for SdgaVariant {
    type Err = ParseVariantError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "auto" => Ok(SdgaVariant::Auto),
            "phase" => Ok(SdgaVariant::Phase),
            "anti" => Ok(SdgaVariant::Anti),
            other => Err(ParseVariantError(other.to_string())),
        }
    }
}
