//! Instance generators shared by the benchmarks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sdga_core::trajectory::{synthetic_transcript, Trajectory};

/// One random repair instance: capacities, an arbitrary target composition of
/// a budget within supply, and a shuffled priority permutation.
pub struct RepairInstance {
    pub capacities: Vec<usize>,
    pub targets: Vec<usize>,
    pub priorities: Vec<usize>,
}

pub fn repair_instances(count: usize, s_max: usize, seed: u64) -> Vec<RepairInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = s_max + 1;
    (0..count)
        .map(|_| {
            let capacities: Vec<usize> = (0..n).map(|_| rng.random_range(0..=50)).collect();
            let total: usize = capacities.iter().sum();
            let budget = if total == 0 { 0 } else { rng.random_range(0..=total) };
            let mut targets = vec![0usize; n];
            for _ in 0..budget {
                targets[rng.random_range(0..n)] += 1;
            }
            let mut priorities: Vec<usize> = (1..=n).collect();
            priorities.shuffle(&mut rng);
            RepairInstance { capacities, targets, priorities }
        })
        .collect()
}

/// A pool of parsed trajectories with random depths in `0..=s_max`.
pub fn trajectory_pool(count: usize, s_max: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let depth = rng.random_range(0..=s_max);
            Trajectory::parse(
                format!("p{i}"),
                0,
                synthetic_transcript(depth, "benchmark topic", "benchmark answer"),
                s_max,
            )
        })
        .collect()
}
