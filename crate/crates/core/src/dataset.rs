//! Refinement-tuning records: accepted trajectories as ReAct chats with a
//! loss flag on every assistant message.
//!
//! User messages carry DM observations, assistant messages the player's
//! `Thought:`/`Action:` pair. Masks are per message; a trainer must zero the
//! loss of every token in a message whose `loss` is false.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chat::ChatRole;
use crate::script::Script;
use crate::trajectory::{Trajectory, Turn};
use crate::verifier::{verify_trajectory, VerificationSignal, VerifyError};

/// Which loss mask a record carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Error turns masked out.
    Standard,
    /// Corpus generated without error/refine steps; not derivable from an
    /// accepted refinement trajectory.
    NoRefinement,
    /// Error turns and the refine step after each error run masked out.
    MaskRefinement,
    /// Nothing masked.
    LearnAll,
}

impl MaskMode {
    pub fn as_str(self) -> &'static str {
        match self {
            MaskMode::Standard => "standard",
            MaskMode::NoRefinement => "no_refinement",
            MaskMode::MaskRefinement => "mask_refinement",
            MaskMode::LearnAll => "learn_all",
        }
    }
}

impl fmt::Display for MaskMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MaskMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "standard" => Ok(MaskMode::Standard),
            "no_refinement" => Ok(MaskMode::NoRefinement),
            "mask_refinement" => Ok(MaskMode::MaskRefinement),
            "learn_all" => Ok(MaskMode::LearnAll),
            other => Err(format!("unknown mask mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MaskedMessage {
    pub role: ChatRole,
    pub content: String,
    pub loss: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub id: String,
    pub persona_id: String,
    pub source: MaskMode,
    pub messages: Vec<MaskedMessage>,
    /// Ordinals (among assistant messages) of every message with `loss = false`.
    pub error_turn_indices: Vec<usize>,
}

impl DatasetRecord {
    pub fn assistant_mask(&self) -> Vec<bool> {
        self.messages
            .iter()
            .filter(|m| m.role == ChatRole::Assistant)
            .map(|m| m.loss)
            .collect()
    }

    pub fn masked_count(&self) -> usize {
        self.assistant_mask().iter().filter(|l| !**l).count()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CompileError {
    #[error("trajectory was not accepted by the verifier: {0:?}")]
    NotAccepted(VerificationSignal),
    #[error("mask mode `{0}` cannot be compiled from a refinement trajectory")]
    ModeUnavailable(MaskMode),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

/// Identity fields copied into a compiled record.
#[derive(Debug, Clone)]
pub struct RecordMeta {
    pub id: String,
    pub persona_id: String,
}

fn system_prompt(script: &Script) -> String {
    let mut s = String::from(
        "You are an agent interacting with a text environment. At every turn, think about \
         the situation and then issue exactly one action, using this format:\n\
         Thought: <your reasoning>\nAction: <your action>\n\nAvailable actions:\n",
    );
    for spec in script.action_specs() {
        s.push_str("- ");
        s.push_str(&spec.name);
        if let Some(d) = &spec.description {
            s.push_str(": ");
            s.push_str(d);
        }
        if let Some(f) = &spec.special_format {
            s.push_str(" (format: ");
            s.push_str(f);
            s.push(')');
        }
        s.push('\n');
    }
    s
}

/// Loss flags for each player turn of `traj` under `mode`.
fn loss_flags(traj: &Trajectory, mode: MaskMode) -> Vec<bool> {
    let turns = traj.turns();
    let errors: Vec<bool> = turns
        .iter()
        .enumerate()
        .filter(|(_, t)| matches!(t, Turn::Player(_)))
        .map(|(i, _)| turns.get(i + 1).and_then(Turn::as_dm).is_some_and(|d| d.has_error()))
        .collect();
    let n = errors.len();
    let mut flags: Vec<bool> = match mode {
        MaskMode::LearnAll => vec![true; n],
        _ => errors.iter().map(|e| !e).collect(),
    };
    if mode == MaskMode::MaskRefinement {
        for i in 1..n {
            if !errors[i] && errors[i - 1] {
                flags[i] = false;
            }
        }
    }
    if let Some(last) = flags.last_mut() {
        *last = true;
    }
    flags
}

/// Compiles an accepted trajectory into a chat record.
pub fn compile_record(
    script: &Script,
    traj: &Trajectory,
    mode: MaskMode,
    meta: &RecordMeta,
) -> Result<DatasetRecord, CompileError> {
    if mode == MaskMode::NoRefinement {
        return Err(CompileError::ModeUnavailable(mode));
    }
    let verdict = verify_trajectory(script, &Ok(traj.clone()), &[])?;
    if !verdict.signal.is_accept() {
        return Err(CompileError::NotAccepted(verdict.signal));
    }

    let flags = loss_flags(traj, mode);
    let mut messages = vec![MaskedMessage {
        role: ChatRole::System,
        content: system_prompt(script),
        loss: false,
    }];
    let turns = traj.turns();
    let mut player_ordinal = 0;
    // The final DM turn has no assistant reply and is dropped.
    for (i, turn) in turns.iter().enumerate().take(turns.len() - 1) {
        match turn {
            Turn::Dm(d) => {
                let content = if i == 0 {
                    format!("Your task: {}\n\n{}", script.goal, d.observation)
                } else {
                    d.observation.clone()
                };
                messages.push(MaskedMessage {
                    role: ChatRole::User,
                    content,
                    loss: false,
                });
            }
            Turn::Player(p) => {
                messages.push(MaskedMessage {
                    role: ChatRole::Assistant,
                    content: format!("Thought: {}\nAction: {}", p.thought, p.action),
                    loss: flags[player_ordinal],
                });
                player_ordinal += 1;
            }
        }
    }
    let error_turn_indices = flags
        .iter()
        .enumerate()
        .filter(|(_, l)| !**l)
        .map(|(i, _)| i)
        .collect();
    Ok(DatasetRecord {
        id: meta.id.clone(),
        persona_id: meta.persona_id.clone(),
        source: mode,
        messages,
        error_turn_indices,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("expected {expected} per-message losses, got {got}")]
pub struct LengthMismatch {
    pub expected: usize,
    pub got: usize,
}

/// Sum of `per_message_losses` over assistant messages whose `loss` flag is
/// set. Entries are expected to be non-negative losses, one per assistant
/// message in order.
pub fn masked_loss(record: &DatasetRecord, per_message_losses: &[f64]) -> Result<f64, LengthMismatch> {
    let mask = record.assistant_mask();
    if mask.len() != per_message_losses.len() {
        return Err(LengthMismatch {
            expected: mask.len(),
            got: per_message_losses.len(),
        });
    }
    Ok(mask
        .iter()
        .zip(per_message_losses)
        .filter(|(keep, _)| **keep)
        .map(|(_, l)| *l)
        .sum())
}

/// Tallies maximal runs of consecutive masked assistant messages by length.
pub fn error_run_histogram<'a, I>(records: I) -> BTreeMap<usize, usize>
where
    I: IntoIterator<Item = &'a DatasetRecord>,
{
    let mut hist = BTreeMap::new();
    for record in records {
        let mut run = 0;
        for keep in record.assistant_mask().into_iter().chain(std::iter::once(true)) {
            if keep {
                if run > 0 {
                    *hist.entry(run).or_insert(0) += 1;
                }
                run = 0;
            } else {
                run += 1;
            }
        }
    }
    hist
}

/// Structural checks applied to imported records.
pub fn check_record(record: &DatasetRecord) -> Result<(), String> {
    let mut body = record.messages.as_slice();
    if let Some(first) = body.first() {
        if first.role == ChatRole::System {
            body = &body[1..];
        }
    }
    for (i, m) in body.iter().enumerate() {
        let expected = if i % 2 == 0 {
            ChatRole::User
        } else {
            ChatRole::Assistant
        };
        if m.role != expected {
            return Err(format!("message {i} after the system prompt should be {expected:?}"));
        }
    }
    if record
        .messages
        .iter()
        .any(|m| m.role != ChatRole::Assistant && m.loss)
    {
        return Err("system and user messages must have loss = false".into());
    }
    let mask = record.assistant_mask();
    if mask.last() == Some(&false) {
        return Err("final assistant message must have loss = true".into());
    }
    let masked: Vec<usize> = mask
        .iter()
        .enumerate()
        .filter(|(_, l)| !**l)
        .map(|(i, _)| i)
        .collect();
    if masked != record.error_turn_indices {
        return Err("error_turn_indices disagree with message loss flags".into());
    }
    Ok(())
}

#[derive(Debug, Error)]
pub enum JsonlError {
    #[error("line {line}: invalid JSON: {message}")]
    LineSyntax { line: usize, message: String },
    #[error("line {line}: schema violation: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn export_jsonl<'a, W, I>(records: I, mut out: W) -> std::io::Result<()>
where
    W: Write,
    I: IntoIterator<Item = &'a DatasetRecord>,
{
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn import_jsonl<R: BufRead>(input: R) -> Result<Vec<DatasetRecord>, JsonlError> {
    let mut out = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(&line).map_err(|e| {
            if e.is_data() {
                JsonlError::SchemaViolation {
                    line: line_no,
                    message: e.to_string(),
                }
            } else {
                JsonlError::LineSyntax {
                    line: line_no,
                    message: e.to_string(),
                }
            }
        })?;
        check_record(&record).map_err(|message| JsonlError::SchemaViolation {
            line: line_no,
            message,
        })?;
        out.push(record);
    }
    Ok(out)
}
