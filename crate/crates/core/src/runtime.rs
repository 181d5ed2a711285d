//! Deterministic script interpreter and trajectory replay.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::script::{serialize_script, validate_script, EnvironmentNode, Script, Violation};
use crate::trajectory::{Trajectory, Turn};
use crate::verifier::{action_explained, match_action, MatchResult, VerifyError};

pub const DEFAULT_MAX_STEPS: usize = 30;

/// Leading verbs whose single object is looked up in the environment tree.
const EXAMINE_VERBS: [&str; 6] = ["examine", "look", "open", "read", "inspect", "check"];

/// Upper bound on template instantiations tried per condition.
const BINDING_SEARCH_LIMIT: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RuntimeError {
    #[error("script is invalid: {0:?}")]
    InvalidScript(Vec<Violation>),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("episode is over")]
    EpisodeOver,
    #[error("step budget of {0} exhausted")]
    StepBudgetExhausted(usize),
}

/// How each completion condition is tracked.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InitDiagnostics {
    /// Canonical action for each condition; `None` means manual.
    pub bindings: Vec<Option<String>>,
}

impl InitDiagnostics {
    pub fn manual(&self) -> Vec<usize> {
        self.bindings
            .iter()
            .enumerate()
            .filter(|(_, b)| b.is_none())
            .map(|(i, _)| i)
            .collect()
    }

    pub fn tracked(&self) -> usize {
        self.bindings.iter().filter(|b| b.is_some()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// Hex sha256 of the canonical script serialization.
    pub script_ref: String,
    pub satisfied: BTreeSet<usize>,
    pub history: Vec<(String, MatchResult)>,
    pub step_count: usize,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepOutcome {
    pub observation: String,
    pub parameter_error: bool,
    pub unmatched: bool,
    pub progress: f64,
    pub done: bool,
}

/// A compiled script. Cheap to clone and share across threads.
#[derive(Debug, Clone)]
pub struct Environment {
    script: Arc<Script>,
    script_ref: String,
    diagnostics: InitDiagnostics,
    max_steps: usize,
}

fn bind_condition(script: &Script, condition: &str) -> Option<String> {
    let mut best: Option<String> = None;
    for spec in script.action_specs().filter(|s| s.verifiable) {
        for inst in spec.template().all_instances(&spec.parameters, BINDING_SEARCH_LIMIT) {
            if condition.contains(&inst) && best.as_ref().is_none_or(|b| inst.len() > b.len()) {
                best = Some(inst);
            }
        }
        if spec.template().placeholders().is_empty()
            && condition.contains(&spec.name)
            && best.as_ref().is_none_or(|b| spec.name.len() > b.len())
        {
            best = Some(spec.name.clone());
        }
    }
    best
}

impl Environment {
    pub fn new(script: Script) -> Result<Self, RuntimeError> {
        Self::with_max_steps(script, DEFAULT_MAX_STEPS)
    }

    pub fn with_max_steps(script: Script, max_steps: usize) -> Result<Self, RuntimeError> {
        let violations = validate_script(&script);
        if !violations.is_empty() {
            return Err(RuntimeError::InvalidScript(violations));
        }
        let script_ref = hex::encode(Sha256::digest(serialize_script(&script).as_bytes()));
        let bindings = script
            .completion_conditions
            .iter()
            .map(|c| bind_condition(&script, c))
            .collect();
        Ok(Environment {
            script: Arc::new(script),
            script_ref,
            diagnostics: InitDiagnostics { bindings },
            max_steps,
        })
    }

    pub fn script(&self) -> &Script {
        &self.script
    }

    pub fn diagnostics(&self) -> &InitDiagnostics {
        &self.diagnostics
    }

    pub fn max_steps(&self) -> usize {
        self.max_steps
    }

    pub fn init(&self) -> EnvState {
        EnvState {
            script_ref: self.script_ref.clone(),
            satisfied: BTreeSet::new(),
            history: Vec::new(),
            step_count: 0,
            done: false,
        }
    }

    pub fn initial_observation(&self) -> &str {
        &self.script.initial_state
    }

    /// Satisfied tracked conditions over all tracked conditions; 0 when no
    /// condition is tracked.
    pub fn progress(&self, state: &EnvState) -> f64 {
        match self.diagnostics.tracked() {
            0 => 0.0,
            n => state.satisfied.len() as f64 / n as f64,
        }
    }

    fn describe(&self, m: &MatchResult, action_text: &str) -> String {
        let name = m.action_name.as_deref().unwrap_or_default();
        let verb = name.split_whitespace().next().unwrap_or_default();
        if EXAMINE_VERBS.contains(&verb) && m.captures.len() == 1 {
            let target = m.captures.values().next().expect("one capture");
            let mut found: Option<&EnvironmentNode> = None;
            self.script.environment.walk(&mut |n| {
                if found.is_none() && n.name == *target {
                    found = Some(n);
                }
            });
            if let Some(node) = found {
                return node
                    .information
                    .clone()
                    .unwrap_or_else(|| format!("You see nothing special about {target}."));
            }
        }
        format!("You {action_text}.")
    }

    pub fn step(&self, state: &EnvState, action_text: &str) -> Result<(EnvState, StepOutcome), RuntimeError> {
        if state.done {
            return Err(RuntimeError::EpisodeOver);
        }
        if state.step_count >= self.max_steps {
            return Err(RuntimeError::StepBudgetExhausted(self.max_steps));
        }
        let m = match_action(action_text, self.script.action_specs())?;
        let mut next = state.clone();
        let (observation, unmatched, parameter_error) = if !m.matched {
            ("Nothing happens.".to_owned(), true, false)
        } else if !m.params_valid {
            (format!("You cannot do that: {action_text}."), false, true)
        } else {
            for (i, b) in self.diagnostics.bindings.iter().enumerate() {
                if b.as_deref() == Some(action_text) {
                    next.satisfied.insert(i);
                }
            }
            (self.describe(&m, action_text), false, false)
        };
        next.history.push((action_text.to_owned(), m));
        next.step_count += 1;
        let tracked = self.diagnostics.tracked();
        next.done = tracked > 0 && next.satisfied.len() == tracked;
        let outcome = StepOutcome {
            observation,
            parameter_error,
            unmatched,
            progress: self.progress(&next),
            done: next.done,
        };
        Ok((next, outcome))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub turn: usize,
    pub matched: bool,
    pub params_valid: bool,
    /// The following DM turn's `parameter_error`.
    pub dm_flag: bool,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub entries: Vec<ReplayEntry>,
}

impl ReplayReport {
    pub fn inconsistencies(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| !e.consistent)
            .map(|e| e.turn)
            .collect()
    }
}

/// Re-checks each player action against the script and the DM's verdict.
pub fn replay(script: &Script, traj: &Trajectory) -> Result<ReplayReport, RuntimeError> {
    let turns = traj.turns();
    let mut entries = Vec::new();
    for (i, turn) in turns.iter().enumerate() {
        let Turn::Player(p) = turn else { continue };
        let m = match_action(&p.action, script.action_specs())?;
        let next_dm = turns.get(i + 1).and_then(Turn::as_dm);
        let consistent = match next_dm {
            Some(dm) => action_explained(&m, dm),
            None => m.matched && m.params_valid,
        };
        entries.push(ReplayEntry {
            turn: p.turn,
            matched: m.matched,
            params_valid: m.params_valid,
            dm_flag: next_dm.is_some_and(|d| d.parameter_error),
            consistent,
        });
    }
    Ok(ReplayReport { entries })
}
