//! `sdga` — one-shot allocation, transcript parsing, batch selection,
//! coverage verification, and training-dynamics simulation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use sdga_core::allocator::{
    anti_plan, auto_plan, bucketize, maybe_advance_phase, phase_plan, PhaseState, PlanSpec,
    SdgaVariant,
};
use sdga_core::selection::{compute_advantages, compute_reward, instantiate};
use sdga_core::sim::{run_simulation, SimConfig, StepRecord, Strategy};
use sdga_core::trajectory::{read_transcript_records, RolloutBatch, Trajectory, TranscriptRecord};
use sdga_core::{verify_topk_optimality, CoverageMode};

#[derive(Parser)]
#[command(name = "sdga", version, about = "Depth-bucketized rollout selection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Repair one JSON allocation request against bucket capacities
    Allocate(AllocateArgs),
    /// Parse transcript JSONL into structured trajectory rows
    Parse(ParseArgs),
    /// Select a budgeted subset of a rollout batch and score it
    Select(SelectArgs),
    /// Check depth-greedy coverage against the exhaustive optimum
    Verify(VerifyArgs),
    /// Run the synthetic training-dynamics simulator
    Simulate(SimulateArgs),
}

fn main() {
    if let Err(error) = run() {
        eprintln!("error: {error:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Allocate(args) => allocate(args),
        Command::Parse(args) => parse(args),
        Command::Select(args) => select(args),
        Command::Verify(args) => verify(args),
        Command::Simulate(args) => simulate(args),
    }
}

fn open_input(path: Option<&Path>) -> Result<Box<dyn BufRead>> {
    match path {
        None => Ok(Box::new(BufReader::new(io::stdin()))),
        Some(path) => {
            let file =
                File::open(path).with_context(|| format!("opening {}", path.display()))?;
            Ok(Box::new(BufReader::new(file)))
        }
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    match path {
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
        Some(path) => {
            let file =
                File::create(path).with_context(|| format!("creating {}", path.display()))?;
            Ok(Box::new(BufWriter::new(file)))
        }
    }
}

fn parse_variant(s: &str) -> Result<SdgaVariant, String> {
    s.parse().map_err(|e: sdga_core::allocator::ParseVariantError| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: sdga_core::sim::ParseStrategyError| e.to_string())
}

fn parse_mode(s: &str) -> Result<CoverageMode, String> {
    s.parse().map_err(|e: sdga_core::coverage::ParseModeError| e.to_string())
}

// ---------------------------------------------------------------------------
// allocate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct AllocateArgs {
    /// JSON request file; stdin when omitted
    #[arg(long)]
    input: Option<PathBuf>,
    /// JSON response file; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Deserialize)]
struct AllocateRequest {
    capacities: Vec<usize>,
    variant: SdgaVariant,
    k: usize,
    #[serde(default)]
    phase: Option<usize>,
}

#[derive(Serialize)]
struct AllocateResponse {
    feasible: Vec<usize>,
    clipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    new_phase: Option<usize>,
}

fn allocate(args: AllocateArgs) -> Result<()> {
    let mut raw = String::new();
    open_input(args.input.as_deref())?.read_to_string(&mut raw)?;
    let request: AllocateRequest =
        serde_json::from_str(&raw).context("malformed allocation request")?;

    if request.capacities.len() < 2 {
        bail!("need capacities for at least buckets 0 and 1");
    }
    if request.k == 0 {
        bail!("budget k must be at least 1");
    }
    let s_max = request.capacities.len() - 1;
    let (plan, new_phase): (PlanSpec, Option<usize>) = match request.variant {
        SdgaVariant::Auto => (auto_plan(s_max, request.k), None),
        SdgaVariant::Anti => (anti_plan(s_max, request.k), None),
        SdgaVariant::Phase => {
            let phase = request.phase.context("phase variant requires a \"phase\" field")?;
            if phase > s_max - 1 {
                bail!("phase {phase} out of range 0..={}", s_max - 1);
            }
            let advanced =
                maybe_advance_phase(PhaseState::new(phase), &request.capacities, request.k);
            (phase_plan(s_max, request.k, advanced), Some(advanced.phase()))
        }
    };

    let allocation = plan.repair(&request.capacities);
    let response = AllocateResponse {
        feasible: allocation.feasible,
        clipped: allocation.clipped,
        new_phase,
    };
    let mut output = open_output(args.output.as_deref())?;
    writeln!(output, "{}", serde_json::to_string(&response)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// parse
// ---------------------------------------------------------------------------

#[derive(Args)]
struct ParseArgs {
    /// Transcript JSONL ({"id", "group_id", "text"}); stdin when omitted
    #[arg(long)]
    input: Option<PathBuf>,
    /// Parsed JSONL output; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,
    /// Depth cap for bucket assignment
    #[arg(long, default_value_t = 5)]
    s_max: usize,
}

#[derive(Serialize)]
struct ParsedRow<'a> {
    id: &'a str,
    group_id: usize,
    search_count: usize,
    clamped_depth: usize,
    retrieval_token_count: usize,
    format_valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    extracted_answer: Option<&'a str>,
}

fn parse(args: ParseArgs) -> Result<()> {
    let records = read_transcript_records(open_input(args.input.as_deref())?)?;
    let mut output = open_output(args.output.as_deref())?;
    for (_, record) in &records {
        let trajectory = Trajectory::parse(&*record.id, record.group_id, &*record.text, args.s_max);
        let row = ParsedRow {
            id: &trajectory.id,
            group_id: trajectory.group_id,
            search_count: trajectory.search_count,
            clamped_depth: trajectory.clamped_depth,
            retrieval_token_count: trajectory.retrieval_token_count,
            format_valid: trajectory.format_valid,
            extracted_answer: trajectory.extracted_answer.as_deref(),
        };
        writeln!(output, "{}", serde_json::to_string(&row)?)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SelectArgs {
    /// Transcript JSONL with per-line gold_answers; stdin when omitted
    #[arg(long)]
    input: Option<PathBuf>,
    /// Per-trajectory JSONL plus a trailing summary line; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_parser = parse_variant, default_value = "auto")]
    variant: SdgaVariant,
    /// Update budget
    #[arg(long, default_value_t = 96)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    s_max: usize,
    /// Format-reward weight in the blended reward
    #[arg(long, default_value_t = 0.2)]
    lambda_f: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Curriculum phase consumed by the phase variant
    #[arg(long, default_value_t = 0)]
    phase: usize,
}

#[derive(Serialize)]
struct SelectRow<'a> {
    id: &'a str,
    depth: usize,
    selected: bool,
    reward: Option<f64>,
    advantage: Option<f64>,
}

#[derive(Serialize)]
struct SelectSummary {
    excluded_groups: Vec<usize>,
    clipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    new_phase: Option<usize>,
}

/// Validate the prompt-group structure with line-numbered diagnostics and
/// build the batch.
fn build_batch(
    records: &[(usize, TranscriptRecord)],
    s_max: usize,
) -> Result<RolloutBatch> {
    if records.is_empty() {
        bail!("no trajectories in input");
    }
    let mut id_lines: HashMap<&str, usize> = HashMap::new();
    for (line, record) in records {
        if let Some(previous) = id_lines.insert(&record.id, *line) {
            bail!("line {line}: duplicate trajectory id {:?} (first seen on line {previous})", record.id);
        }
    }
    let n_prompts = records.iter().map(|(_, r)| r.group_id).max().unwrap() + 1;
    if !records.len().is_multiple_of(n_prompts) {
        bail!(
            "{} trajectories cannot split evenly over {} prompt groups",
            records.len(),
            n_prompts
        );
    }
    let rollouts_per_prompt = records.len() / n_prompts;
    let mut counts = vec![0usize; n_prompts];
    let mut last_line = vec![0usize; n_prompts];
    for (line, record) in records {
        counts[record.group_id] += 1;
        last_line[record.group_id] = *line;
    }
    for (group, &count) in counts.iter().enumerate() {
        if count == 0 {
            bail!("group {group} has no rollouts, expected {rollouts_per_prompt}");
        }
        if count != rollouts_per_prompt {
            bail!(
                "line {}: group {group} has {count} rollouts, expected {rollouts_per_prompt}",
                last_line[group]
            );
        }
    }
    let trajectories = records
        .iter()
        .map(|(_, r)| Trajectory::parse(&*r.id, r.group_id, &*r.text, s_max))
        .collect();
    RolloutBatch::new(trajectories, n_prompts, rollouts_per_prompt, s_max)
        .context("batch validation failed")
}

fn select(args: SelectArgs) -> Result<()> {
    if args.k == 0 {
        bail!("budget k must be at least 1");
    }
    if !(0.0..=1.0).contains(&args.lambda_f) {
        bail!("lambda_f must be in [0, 1]");
    }
    let records = read_transcript_records(open_input(args.input.as_deref())?)?;
    for (line, record) in &records {
        match &record.gold_answers {
            Some(golds) if !golds.is_empty() => {}
            _ => bail!("line {line}: missing gold_answers"),
        }
    }
    let batch = build_batch(&records, args.s_max)?;
    let golds_by_id: HashMap<&str, &Vec<String>> = records
        .iter()
        .map(|(_, r)| (r.id.as_str(), r.gold_answers.as_ref().expect("validated above")))
        .collect();

    let stats = bucketize(&batch);
    let (plan, new_phase) = match args.variant {
        SdgaVariant::Auto => (auto_plan(args.s_max, args.k), None),
        SdgaVariant::Anti => (anti_plan(args.s_max, args.k), None),
        SdgaVariant::Phase => {
            if args.phase > args.s_max - 1 {
                bail!("phase {} out of range 0..={}", args.phase, args.s_max - 1);
            }
            let advanced =
                maybe_advance_phase(PhaseState::new(args.phase), stats.capacities(), args.k);
            (phase_plan(args.s_max, args.k, advanced), Some(advanced.phase()))
        }
    };
    let allocation = plan.repair(stats.capacities());
    let selected = instantiate(&batch, &allocation.feasible, args.seed)
        .context("instantiating the repaired allocation")?;

    let by_id: HashMap<&str, &Trajectory> =
        batch.trajectories.iter().map(|t| (t.id.as_str(), t)).collect();
    let rewards: Vec<f64> = selected
        .trajectory_ids
        .iter()
        .map(|id| compute_reward(by_id[id.as_str()], golds_by_id[id.as_str()], args.lambda_f))
        .collect();
    let table = compute_advantages(&batch, &selected, &rewards);
    let scored: HashMap<&str, (f64, f64)> = table
        .entries
        .iter()
        .map(|e| (e.id.as_str(), (e.reward, e.advantage)))
        .collect();

    let mut output = open_output(args.output.as_deref())?;
    for (_, record) in &records {
        let trajectory = by_id[record.id.as_str()];
        let score = scored.get(record.id.as_str());
        let row = SelectRow {
            id: &record.id,
            depth: trajectory.clamped_depth,
            selected: score.is_some(),
            reward: score.map(|s| s.0),
            advantage: score.map(|s| s.1),
        };
        writeln!(output, "{}", serde_json::to_string(&row)?)?;
    }
    let summary = SelectSummary {
        excluded_groups: table.excluded_groups,
        clipped: allocation.clipped,
        new_phase,
    };
    writeln!(output, "{}", serde_json::to_string(&summary)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Args)]
struct VerifyArgs {
    /// Transcript JSONL forming the candidate pool; stdin when omitted
    #[arg(long)]
    input: Option<PathBuf>,
    /// JSON coverage report; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,
    /// Selection budget to verify
    #[arg(long)]
    k: usize,
    #[arg(long, default_value_t = 5)]
    s_max: usize,
    /// Coverage mode: structural or token
    #[arg(long, value_parser = parse_mode, default_value = "structural")]
    mode: CoverageMode,
}

fn verify(args: VerifyArgs) -> Result<()> {
    let records = read_transcript_records(open_input(args.input.as_deref())?)?;
    let pool: Vec<Trajectory> = records
        .iter()
        .map(|(_, r)| Trajectory::parse(&*r.id, r.group_id, &*r.text, args.s_max))
        .collect();
    let report = verify_topk_optimality(&pool, args.k, args.mode)?;
    let mut output = open_output(args.output.as_deref())?;
    writeln!(output, "{}", serde_json::to_string(&report)?)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

#[derive(Args)]
struct SimulateArgs {
    /// TOML (default) or JSON config file; flags below override its values
    #[arg(long)]
    config: Option<PathBuf>,
    /// CSV step log; stdout when omitted
    #[arg(long)]
    output: Option<PathBuf>,
    /// Optional JSONL copy of the step records
    #[arg(long)]
    jsonl: Option<PathBuf>,
    /// Selection strategy: auto, phase, anti, random, or full
    #[arg(long, value_parser = parse_strategy)]
    variant: Option<Strategy>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Update budget
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    s_max: Option<usize>,
    #[arg(long)]
    lambda_f: Option<f64>,
}

#[derive(Default, Deserialize)]
struct SimulateFile {
    #[serde(default)]
    strategy: Option<Strategy>,
    #[serde(flatten)]
    config: SimConfig,
}

impl SimulateFile {
    fn load(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
        } else {
            toml::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
        }
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut file = match &args.config {
        Some(path) => SimulateFile::load(path)?,
        None => SimulateFile::default(),
    };
    if let Some(steps) = args.steps {
        file.config.steps = steps;
    }
    if let Some(seed) = args.seed {
        file.config.seed = seed;
    }
    if let Some(k) = args.k {
        file.config.budget = k;
    }
    if let Some(s_max) = args.s_max {
        file.config.s_max = s_max;
    }
    if let Some(lambda_f) = args.lambda_f {
        file.config.reward_model.lambda_f = lambda_f;
    }
    let strategy = args.variant.or(file.strategy).unwrap_or(Strategy::Phase);
    let config = file.config;
    config.validate()?;

    let records = run_simulation(&config, strategy)?;

    let mut output = open_output(args.output.as_deref())?;
    writeln!(output, "{}", StepRecord::csv_header(config.s_max))?;
    for record in &records {
        writeln!(output, "{}", record.csv_row())?;
    }
    output.flush()?;

    if let Some(path) = &args.jsonl {
        let mut jsonl = open_output(Some(path))?;
        for record in &records {
            writeln!(jsonl, "{}", serde_json::to_string(record)?)?;
        }
        jsonl.flush()?;
    }

    match records.last() {
        Some(last) => eprintln!(
            "strategy={strategy} steps={} final_phase={} mean_batch_depth={:.4} \
             mean_selected_depth={:.4} mean_reward_selected={:.4}",
            config.steps,
            last.phase,
            last.mean_batch_depth,
            last.mean_selected_depth,
            last.mean_reward_selected
        ),
        None => eprintln!("strategy={strategy} steps=0"),
    }
    Ok(())
}
