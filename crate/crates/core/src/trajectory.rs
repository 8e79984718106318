//! Transcript parsing for search-agent rollouts.
//!
//! A rollout transcript interleaves four tag-delimited block kinds:
//! `<think>…</think>` reasoning, `<search>…</search>` queries,
//! `<information>…</information>` retrieved results, and one final
//! `<answer>…</answer>`. This module turns raw transcript text into
//! [`Trajectory`] values carrying the quantities the allocation and reward
//! layers consume: search depth, format validity, retrieval token counts, and
//! the extracted answer.
//!
//! Parsing is total: malformed text never fails, it just yields a depth of
//! zero and/or `format_valid == false`. Tag matching is exact and
//! case-sensitive, and blocks do not nest — a tag token appearing inside
//! another block makes the transcript format-invalid.

use std::collections::HashMap;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

const OPEN_TAGS: [&str; 4] = ["<think>", "<search>", "<information>", "<answer>"];
const CLOSE_TAGS: [&str; 4] = ["</think>", "</search>", "</information>", "</answer>"];

const SEARCH: usize = 1;
const INFORMATION: usize = 2;
const ANSWER: usize = 3;

/// One rollout: the transcript plus everything derived from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Opaque identifier, unique within a batch.
    pub id: String,
    /// Index of the prompt this rollout answers, in `0..n_prompts`.
    pub group_id: usize,
    /// Full transcript text.
    pub text: String,
    /// Number of well-formed search blocks with non-empty query, each
    /// immediately followed (up to whitespace) by a non-empty information
    /// block.
    pub search_count: usize,
    /// `min(search_count, s_max)` — the bucket index this rollout lands in.
    pub clamped_depth: usize,
    /// Whitespace-delimited tokens across the queries of the counted search
    /// blocks. Zero exactly when `search_count` is zero.
    pub retrieval_token_count: usize,
    /// Content of the answer block, trimmed, when the transcript contains
    /// exactly one well-formed answer block.
    pub extracted_answer: Option<String>,
    /// Whether the transcript follows the full tag protocol, per
    /// [`check_format`].
    pub format_valid: bool,
}

impl Trajectory {
    /// Parse a transcript and attach an id and prompt-group index.
    ///
    /// Panics if `s_max` is zero.
    pub fn parse(
        id: impl Into<String>,
        group_id: usize,
        text: impl Into<String>,
        s_max: usize,
    ) -> Self {
        assert!(s_max >= 1, "s_max must be at least 1");
        let text = text.into();
        let (search_count, retrieval_token_count) = scan_search_pairs(&text);
        Trajectory {
            id: id.into(),
            group_id,
            search_count,
            clamped_depth: search_count.min(s_max),
            retrieval_token_count,
            extracted_answer: scan_unique_answer(&text),
            format_valid: check_format(&text),
            text,
        }
    }
}

/// Parse a bare transcript with a placeholder id and group 0.
pub fn parse_trajectory(text: &str, s_max: usize) -> Trajectory {
    Trajectory::parse("", 0, text, s_max)
}

/// Check whether a transcript follows the agent tag protocol:
///
/// * every tag block is properly opened and closed, with no nesting or
///   interleaving of blocks,
/// * every search block is immediately followed (as the next block) by an
///   information block,
/// * exactly one answer block exists and it terminates the transcript (only
///   whitespace may follow it).
pub fn check_format(text: &str) -> bool {
    let Some(blocks) = scan_flat_blocks(text) else {
        return false;
    };
    for (i, block) in blocks.iter().enumerate() {
        if block.kind == SEARCH {
            match blocks.get(i + 1) {
                Some(next) if next.kind == INFORMATION => {}
                _ => return false,
            }
        }
    }
    if blocks.iter().filter(|b| b.kind == ANSWER).count() != 1 {
        return false;
    }
    let last = blocks.last().expect("answer block exists");
    last.kind == ANSWER && text[last.end..].trim().is_empty()
}

/// Build a well-formed transcript with `depth` search/information rounds that
/// ends in a single answer block. [`parse_trajectory`] recovers exactly
/// `depth` from the result. `topic` and `answer` must not contain tag markup.
pub fn synthetic_transcript(depth: usize, topic: &str, answer: &str) -> String {
    use std::fmt::Write;
    let mut text = String::new();
    for round in 0..depth {
        writeln!(
            text,
            "<think> round {round}: need more evidence on {topic}. </think> \
             <search> {topic} detail {round} </search> \
             <information> doc {round}: notes about {topic}. </information>"
        )
        .expect("writing to String cannot fail");
    }
    write!(text, "<think> ready to answer. </think> <answer> {answer} </answer>")
        .expect("writing to String cannot fail");
    text
}

struct TagToken {
    kind: usize,
    closing: bool,
    end: usize,
}

fn scan_tag_tokens(text: &str) -> Vec<TagToken> {
    let bytes = text.as_bytes();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'<' {
            let rest = &text[i..];
            let mut matched = None;
            for kind in 0..OPEN_TAGS.len() {
                if rest.starts_with(OPEN_TAGS[kind]) {
                    matched = Some((kind, false, OPEN_TAGS[kind].len()));
                    break;
                }
                if rest.starts_with(CLOSE_TAGS[kind]) {
                    matched = Some((kind, true, CLOSE_TAGS[kind].len()));
                    break;
                }
            }
            if let Some((kind, closing, len)) = matched {
                tokens.push(TagToken { kind, closing, end: i + len });
                i += len;
                continue;
            }
        }
        i += 1;
    }
    tokens
}

struct Block {
    kind: usize,
    end: usize,
}

/// Group the tag tokens of `text` into a flat block sequence. Returns `None`
/// when the token stream is not strictly open/close alternating with matching
/// kinds — i.e. on stray closers, unclosed openers, or any tag inside a block.
fn scan_flat_blocks(text: &str) -> Option<Vec<Block>> {
    let mut blocks = Vec::new();
    let mut open: Option<usize> = None;
    for token in scan_tag_tokens(text) {
        match open {
            None => {
                if token.closing {
                    return None;
                }
                open = Some(token.kind);
            }
            Some(kind) => {
                if !token.closing || token.kind != kind {
                    return None;
                }
                blocks.push(Block { kind, end: token.end });
                open = None;
            }
        }
    }
    if open.is_some() {
        return None;
    }
    Some(blocks)
}

/// First well-formed `open…close` block at or after `from`, as
/// `(content_start, content_end, block_end)`. The block closes at the first
/// closing tag after the opener.
fn find_block_at_or_after(
    text: &str,
    from: usize,
    open: &str,
    close: &str,
) -> Option<(usize, usize, usize)> {
    let open_rel = text[from..].find(open)?;
    let content_start = from + open_rel + open.len();
    let close_rel = text[content_start..].find(close)?;
    let content_end = content_start + close_rel;
    Some((content_start, content_end, content_end + close.len()))
}

/// Left-to-right scan counting maximal search blocks with a non-empty query
/// immediately followed (up to whitespace) by a non-empty information block.
/// Also totals the query tokens of counted blocks.
fn scan_search_pairs(text: &str) -> (usize, usize) {
    let mut count = 0;
    let mut query_tokens = 0;
    let mut pos = 0;
    while let Some((query_start, query_end, search_end)) =
        find_block_at_or_after(text, pos, "<search>", "</search>")
    {
        pos = search_end;
        let query = &text[query_start..query_end];
        if query.trim().is_empty() {
            continue;
        }
        let tail = &text[search_end..];
        let gap = tail.len() - tail.trim_start().len();
        let info_open = search_end + gap;
        if !text[info_open..].starts_with("<information>") {
            continue;
        }
        let info_start = info_open + "<information>".len();
        let Some(close_rel) = text[info_start..].find("</information>") else {
            continue;
        };
        if text[info_start..info_start + close_rel].trim().is_empty() {
            continue;
        }
        count += 1;
        query_tokens += query.split_whitespace().count();
        pos = info_start + close_rel + "</information>".len();
    }
    (count, query_tokens)
}

/// Content of the unique well-formed answer block, trimmed; `None` when the
/// transcript has zero or several answer blocks.
fn scan_unique_answer(text: &str) -> Option<String> {
    let mut pos = 0;
    let mut found: Option<&str> = None;
    while let Some((content_start, content_end, end)) =
        find_block_at_or_after(text, pos, "<answer>", "</answer>")
    {
        if found.is_some() {
            return None;
        }
        found = Some(&text[content_start..content_end]);
        pos = end;
    }
    found.map(|s| s.trim().to_string())
}

/// Group-structure violations detected when assembling a [`RolloutBatch`].
#[derive(Debug, Error, PartialEq, Eq)]
pub enum BatchError {
    #[error("batch is empty")]
    Empty,
    #[error("batch has {got} trajectories, expected {expected} (n_prompts * rollouts_per_prompt)")]
    WrongLength { got: usize, expected: usize },
    #[error("group {group} appears {got} times, expected {expected}")]
    GroupCount { group: usize, got: usize, expected: usize },
    #[error("group id {group} out of range for {n_prompts} prompts")]
    GroupOutOfRange { group: usize, n_prompts: usize },
    #[error("duplicate trajectory id {0:?}")]
    DuplicateId(String),
    #[error("trajectory {id:?} has depth {depth}, above s_max {s_max}")]
    DepthOutOfRange { id: String, depth: usize, s_max: usize },
}

/// One training step's rollout pool: `n_prompts` groups of
/// `rollouts_per_prompt` trajectories each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutBatch {
    pub trajectories: Vec<Trajectory>,
    pub n_prompts: usize,
    pub rollouts_per_prompt: usize,
    pub s_max: usize,
}

impl RolloutBatch {
    /// Validate the group structure: exactly `n_prompts * rollouts_per_prompt`
    /// trajectories, every group id in `0..n_prompts` appearing exactly
    /// `rollouts_per_prompt` times, unique ids, and depths within `0..=s_max`.
    pub fn new(
        trajectories: Vec<Trajectory>,
        n_prompts: usize,
        rollouts_per_prompt: usize,
        s_max: usize,
    ) -> Result<Self, BatchError> {
        if n_prompts == 0 || rollouts_per_prompt == 0 || trajectories.is_empty() {
            return Err(BatchError::Empty);
        }
        let expected = n_prompts * rollouts_per_prompt;
        if trajectories.len() != expected {
            return Err(BatchError::WrongLength { got: trajectories.len(), expected });
        }
        let mut counts = vec![0usize; n_prompts];
        let mut seen = HashMap::with_capacity(trajectories.len());
        for trajectory in &trajectories {
            if trajectory.group_id >= n_prompts {
                return Err(BatchError::GroupOutOfRange {
                    group: trajectory.group_id,
                    n_prompts,
                });
            }
            if trajectory.clamped_depth > s_max {
                return Err(BatchError::DepthOutOfRange {
                    id: trajectory.id.clone(),
                    depth: trajectory.clamped_depth,
                    s_max,
                });
            }
            if seen.insert(trajectory.id.clone(), ()).is_some() {
                return Err(BatchError::DuplicateId(trajectory.id.clone()));
            }
            counts[trajectory.group_id] += 1;
        }
        for (group, &got) in counts.iter().enumerate() {
            if got != rollouts_per_prompt {
                return Err(BatchError::GroupCount { group, got, expected: rollouts_per_prompt });
            }
        }
        Ok(RolloutBatch { trajectories, n_prompts, rollouts_per_prompt, s_max })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// One line of transcript JSONL input.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub id: String,
    pub group_id: usize,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_answers: Option<Vec<String>>,
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Read transcript records from JSONL, one object per non-blank line.
/// Returns `(line_number, record)` pairs so callers can point diagnostics at
/// the offending input line.
pub fn read_transcript_records<R: BufRead>(
    reader: R,
) -> Result<Vec<(usize, TranscriptRecord)>, JsonlError> {
    let mut records = Vec::new();
    for (index, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let number = index + 1;
        let record = serde_json::from_str(&line)
            .map_err(|source| JsonlError::Parse { line: number, source })?;
        records.push((number, record));
    }
    Ok(records)
}
