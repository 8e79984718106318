//! Depth-bucketized rollout selection for verifiable-reward agent training.
//!
//! The pipeline mirrors one training step of a search agent: parse rollout
//! transcripts into [`trajectory::Trajectory`] values, bucket them by search
//! depth ([`allocator::bucketize`]), convert a target allocation into a
//! feasible one under bucket capacities ([`allocator::sdga_repair`]),
//! instantiate the concrete trajectory subset
//! ([`selection::instantiate`]), score rewards, and normalize advantages
//! within retained prompt groups. [`coverage`] verifies by exhaustive
//! enumeration that the deepest-first allocation maximizes retrieval
//! coverage, and [`sim`] replays the whole loop on synthetic batches to
//! reproduce the curriculum dynamics without a model.

pub mod allocator;
pub mod coverage;
pub mod selection;
pub mod sim;
pub mod trajectory;

pub use allocator::{
    anti_plan, auto_plan, bucketize, maybe_advance_phase, phase_plan, sdga_repair, AllocationPlan,
    BucketStats, PhaseState, PlanSpec, RepairOutcome, SdgaVariant,
};
pub use coverage::{
    coverage, verify_antik_minimality, verify_topk_optimality, CoverageMode, CoverageReport,
};
pub use selection::{
    compute_advantages, compute_reward, instantiate, normalize_answer, token_f1, AdvantageEntry,
    AdvantageTable, SelectedSet, SelectionError,
};
pub use sim::{run_simulation, sample_batch, SimConfig, StepRecord, Strategy};
pub use trajectory::{
    check_format, parse_trajectory, read_transcript_records, synthetic_transcript, BatchError,
    RolloutBatch, Trajectory, TranscriptRecord,
};
