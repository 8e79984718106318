//! Retrieval coverage of a selected set, and exhaustive verification that
//! depth-greedy selection maximizes it on small pools.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::allocator::{anti_plan, auto_plan, sdga_repair, BucketStats};
use crate::trajectory::Trajectory;

/// Largest pool size accepted for exhaustive subset enumeration.
/// C(24, 12) is about 2.7M subsets, still well under a second.
pub const MAX_ENUMERATION_POOL: usize = 24;

/// What counts as one unit of retrieval coverage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoverageMode {
    /// One unit per counted search call (clamped depth).
    Structural,
    /// One unit per query token across counted search calls.
    Token,
}

impl std::fmt::Display for CoverageMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CoverageMode::Structural => write!(f, "structural"),
            CoverageMode::Token => write!(f, "token"),
        }
    }
}

#[derive(Debug, Error)]
#[error("unknown coverage mode {0:?}, expected structural or token")]
pub struct ParseModeError(String);

impl std::str::FromStr for CoverageMode {
    type Err = ParseModeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structural" => Ok(CoverageMode::Structural),
            "token" => Ok(CoverageMode::Token),
            other => Err(ParseModeError(other.to_string())),
        }
    }
}

fn weight(trajectory: &Trajectory, mode: CoverageMode) -> u64 {
    match mode {
        CoverageMode::Structural => trajectory.clamped_depth as u64,
        CoverageMode::Token => trajectory.retrieval_token_count as u64,
    }
}

/// Total retrieval decision points across a selection.
pub fn coverage(selected: &[Trajectory], mode: CoverageMode) -> u64 {
    selected.iter().map(|t| weight(t, mode)).sum()
}

/// Outcome of checking a depth-greedy selection against the exhaustive
/// optimum on one pool.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub selection_coverage: u64,
    pub optimal_coverage: u64,
    pub is_optimal: bool,
    pub n_subsets_checked: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CoverageError {
    #[error("pool of {got} trajectories exceeds the enumeration bound {MAX_ENUMERATION_POOL}")]
    PoolTooLarge { got: usize },
    #[error("budget {budget} exceeds pool size {pool}")]
    BudgetTooLarge { budget: usize, pool: usize },
}

/// Min and max weight sum over all size-`k` subsets, plus the subset count.
/// Enumerates bitmasks with Gosper's hack; `weights.len()` must be <= 24.
fn subset_extrema(weights: &[u64], k: usize) -> (u64, u64, u64) {
    let n = weights.len();
    debug_assert!(n <= MAX_ENUMERATION_POOL && k <= n);
    if k == 0 {
        return (0, 0, 1);
    }
    let mut minimum = u64::MAX;
    let mut maximum = 0u64;
    let mut checked = 0u64;
    let limit: u32 = 1 << n;
    let mut mask: u32 = (1 << k) - 1;
    while mask < limit {
        let mut total = 0u64;
        let mut bits = mask;
        while bits != 0 {
            let low = bits.trailing_zeros() as usize;
            total += weights[low];
            bits &= bits - 1;
        }
        minimum = minimum.min(total);
        maximum = maximum.max(total);
        checked += 1;

        // Gosper's hack: next k-subset in lexicographic bit order.
        let lowest = mask & mask.wrapping_neg();
        let ripple = mask + lowest;
        mask = ripple | (((mask ^ ripple) >> 2) / lowest);
    }
    (minimum, maximum, checked)
}

/// Coverage of the depth-greedy allocation on `pool` with budget `k_budget`.
/// Buckets are filled per the plan's priorities; within a bucket the draw
/// does not affect structural coverage, so members are taken in pool order.
fn greedy_selection_coverage(
    pool: &[Trajectory],
    k_budget: usize,
    mode: CoverageMode,
    deepest_first: bool,
) -> u64 {
    let s_max = pool.iter().map(|t| t.clamped_depth).max().unwrap_or(0).max(1);
    let stats = BucketStats::from_trajectories(pool, s_max);
    let plan = if deepest_first { auto_plan(s_max, k_budget) } else { anti_plan(s_max, k_budget) };
    let outcome = sdga_repair(stats.capacities(), &plan.targets, &plan.priorities);

    let mut selected = Vec::with_capacity(k_budget);
    let mut remaining = outcome.feasible;
    for trajectory in pool {
        let slot = &mut remaining[trajectory.clamped_depth];
        if *slot > 0 {
            *slot -= 1;
            selected.push(trajectory.clone());
        }
    }
    coverage(&selected, mode)
}

/// Enumerate every size-`k_budget` subset of `pool`, record the maximum
/// coverage, and compare it with the coverage of the depth-greedy (auto)
/// selection on the same pool.
pub fn verify_topk_optimality(
    pool: &[Trajectory],
    k_budget: usize,
    mode: CoverageMode,
) -> Result<CoverageReport, CoverageError> {
    if pool.len() > MAX_ENUMERATION_POOL {
        return Err(CoverageError::PoolTooLarge { got: pool.len() });
    }
    if k_budget > pool.len() {
        return Err(CoverageError::BudgetTooLarge { budget: k_budget, pool: pool.len() });
    }
    let weights: Vec<u64> = pool.iter().map(|t| weight(t, mode)).collect();
    let (_, optimal_coverage, n_subsets_checked) = subset_extrema(&weights, k_budget);
    let selection_coverage =
        if k_budget == 0 { 0 } else { greedy_selection_coverage(pool, k_budget, mode, true) };
    Ok(CoverageReport {
        selection_coverage,
        optimal_coverage,
        is_optimal: selection_coverage == optimal_coverage,
        n_subsets_checked,
    })
}

/// Mirror check: the anti plan's coverage against the exhaustive minimum.
pub fn verify_antik_minimality(
    pool: &[Trajectory],
    k_budget: usize,
    mode: CoverageMode,
) -> Result<CoverageReport, CoverageError> {
    if pool.len() > MAX_ENUMERATION_POOL {
        return Err(CoverageError::PoolTooLarge { got: pool.len() });
    }
    if k_budget > pool.len() {
        return Err(CoverageError::BudgetTooLarge { budget: k_budget, pool: pool.len() });
    }
    let weights: Vec<u64> = pool.iter().map(|t| weight(t, mode)).collect();
    let (minimal_coverage, _, n_subsets_checked) = subset_extrema(&weights, k_budget);
    let selection_coverage =
        if k_budget == 0 { 0 } else { greedy_selection_coverage(pool, k_budget, mode, false) };
    Ok(CoverageReport {
        selection_coverage,
        optimal_coverage: minimal_coverage,
        is_optimal: selection_coverage == minimal_coverage,
        n_subsets_checked,
    })
}
