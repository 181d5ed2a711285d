//! Generation loop: persona → script → trajectory → verdict, under a fixed
//! per-persona call budget.

mod client;
mod persona;
mod prompt;
pub mod synthetic;

use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use client::{
    ChatClient, ChatRequest, HttpChatClient, RateLimitedClient, RecordingClient, StubClient, TransportError,
};
pub use persona::{load_personas, sample_personas, PersonaError};
pub use prompt::{
    render_script_prompt, render_trajectory_prompt, Exemplars, PromptError, TrajectoryRound, SCRIPT_FORMAT,
    TRAJECTORY_FORMAT,
};

use crate::chat::ChatMessage;
use crate::script::{parse_script, validate_script, Persona, Script};
use crate::trajectory::{parse_trajectory, parse_turns, serialize_turns, Trajectory, TrajectoryParseError, Turn};
use crate::verifier::{verify_trajectory, SignalKind, VerificationSignal, VerifyError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    pub script_shot_count: usize,
    pub trajectory_shot_count: usize,
    pub call_budget: usize,
    pub temperature: f64,
    pub seed: u64,
    pub model_name: String,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            script_shot_count: 3,
            trajectory_shot_count: 1,
            call_budget: 4,
            temperature: 0.7,
            seed: 0,
            model_name: "gpt-4o".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("call_budget must be at least 2, got {0}")]
    BudgetTooSmall(usize),
    #[error("temperature must be a finite non-negative number")]
    BadTemperature,
    #[error("only one trajectory exemplar is supported, got trajectory_shot_count = {0}")]
    TrajectoryShots(usize),
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.call_budget < 2 {
            return Err(ConfigError::BudgetTooSmall(self.call_budget));
        }
        if !self.temperature.is_finite() || self.temperature < 0.0 {
            return Err(ConfigError::BadTemperature);
        }
        if self.trajectory_shot_count != 1 {
            return Err(ConfigError::TrajectoryShots(self.trajectory_shot_count));
        }
        Ok(())
    }
}

/// Why a persona produced no accepted pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Failure {
    /// The last script attempt was unusable.
    ScriptRejected { problems: Vec<String> },
    /// The last trajectory attempt was not accepted.
    Trajectory { signal: VerificationSignal },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisOutcome {
    pub persona: Persona,
    pub script: Option<Script>,
    pub trajectory: Option<Trajectory>,
    pub accepted: bool,
    pub calls_used: usize,
    pub failure: Option<Failure>,
    pub model: String,
    pub temperature: f64,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("persona `{persona}`: transport failure after {calls_used} calls: {source}")]
    Transport {
        persona: String,
        calls_used: usize,
        #[source]
        source: TransportError,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

enum Round {
    First,
    Continue { prefix: Vec<Turn>, signal: VerificationSignal },
    Regenerate { rejected: String, signal: VerificationSignal },
}

fn script_problems(text: &str) -> Result<Script, Vec<String>> {
    let script = parse_script(text).map_err(|e| vec![e.to_string()])?;
    let violations = validate_script(&script);
    if violations.is_empty() {
        Ok(script)
    } else {
        Err(violations.iter().map(ToString::to_string).collect())
    }
}

/// Parses a continuation and splices it after `prefix`.
fn splice(prefix: &[Turn], text: &str) -> Result<Trajectory, TrajectoryParseError> {
    let mut turns = prefix.to_vec();
    turns.extend(parse_turns(text, prefix.len())?);
    Trajectory::new(turns)
}

/// All turns of a failed attempt, for the regeneration prompt. An attempt
/// that produced no usable turn is shown as raw text.
fn rejected_text(outcome: &Result<Trajectory, TrajectoryParseError>, raw: &str) -> String {
    match outcome {
        Ok(t) => serialize_turns(t.turns()),
        Err(_) => raw.to_owned(),
    }
}

/// Runs one persona to acceptance or budget exhaustion. Every completion
/// request, whether for a script, a fresh trajectory or a continuation,
/// costs one unit of `cfg.call_budget`.
pub fn synthesize<C: ChatClient + ?Sized>(
    persona: &Persona,
    client: &C,
    cfg: &GenerationConfig,
    exemplars: &Exemplars,
) -> Result<SynthesisOutcome, SynthesisError> {
    cfg.validate()?;
    let mut calls = 0;
    let mut script: Option<Script> = None;
    let mut script_feedback: Option<Vec<String>> = None;
    let mut round = Round::First;
    let mut failure = None;

    let call = |messages: Vec<ChatMessage>, calls: &mut usize| {
        let request = ChatRequest {
            model: cfg.model_name.clone(),
            messages,
            temperature: cfg.temperature,
        };
        *calls += 1;
        client.complete(&request).map_err(|source| SynthesisError::Transport {
            persona: persona.id.clone(),
            calls_used: *calls,
            source,
        })
    };

    while calls < cfg.call_budget {
        let Some(current) = &script else {
            let messages = render_script_prompt(
                persona,
                &exemplars.scripts,
                cfg.script_shot_count,
                script_feedback.as_deref(),
            )?;
            let text = call(messages, &mut calls)?;
            match script_problems(&text) {
                Ok(s) => {
                    script = Some(s);
                    round = Round::First;
                }
                Err(problems) => {
                    failure = Some(Failure::ScriptRejected {
                        problems: problems.clone(),
                    });
                    script_feedback = Some(problems);
                }
            }
            continue;
        };

        let exemplar = (&exemplars.trajectory.0, &exemplars.trajectory.1);
        let view = match &round {
            Round::First => TrajectoryRound::First,
            Round::Continue { prefix, signal } => TrajectoryRound::Continue { prefix, signal },
            Round::Regenerate { rejected, signal } => TrajectoryRound::Regenerate { rejected, signal },
        };
        let messages = render_trajectory_prompt(current, exemplar, view);
        let text = call(messages, &mut calls)?;
        let prior: Vec<Turn> = match &round {
            Round::Continue { prefix, .. } => prefix.clone(),
            _ => Vec::new(),
        };
        let outcome = if prior.is_empty() {
            parse_trajectory(&text)
        } else {
            splice(&prior, &text)
        };
        let verdict = verify_trajectory(current, &outcome, &prior)?;
        match verdict.signal.kind {
            SignalKind::Accept => {
                return Ok(SynthesisOutcome {
                    persona: persona.clone(),
                    script,
                    trajectory: Some(Trajectory::new(verdict.prefix).expect("accepted turns are well-formed")),
                    accepted: true,
                    calls_used: calls,
                    failure: None,
                    model: cfg.model_name.clone(),
                    temperature: cfg.temperature,
                });
            }
            SignalKind::TruncateAndContinue => {
                failure = Some(Failure::Trajectory { signal: verdict.signal });
                round = Round::Continue {
                    prefix: verdict.prefix,
                    signal: verdict.signal,
                };
            }
            SignalKind::Regenerate => {
                failure = Some(Failure::Trajectory { signal: verdict.signal });
                round = Round::Regenerate {
                    rejected: rejected_text(&outcome, &text),
                    signal: verdict.signal,
                };
            }
        }
    }

    Ok(SynthesisOutcome {
        persona: persona.clone(),
        script,
        trajectory: None,
        accepted: false,
        calls_used: calls,
        failure,
        model: cfg.model_name.clone(),
        temperature: cfg.temperature,
    })
}

/// Synthesizes every persona on a pool of `workers` threads. Results come
/// back in persona order regardless of completion order.
pub fn synthesize_all<C: ChatClient + ?Sized>(
    personas: &[Persona],
    client: &C,
    cfg: &GenerationConfig,
    exemplars: &Exemplars,
    workers: usize,
) -> Vec<Result<SynthesisOutcome, SynthesisError>> {
    let next = Mutex::new(0usize);
    let sink: Mutex<Vec<(usize, Result<SynthesisOutcome, SynthesisError>)>> = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, personas.len().max(1)) {
            s.spawn(|| loop {
                let i = {
                    let mut n = next.lock().expect("queue poisoned");
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some(p) = personas.get(i) else { break };
                let r = synthesize(p, client, cfg, exemplars);
                tracing::debug!(persona = %p.id, ok = r.as_ref().is_ok_and(|o| o.accepted), "persona done");
                sink.lock().expect("sink poisoned").push((i, r));
            });
        }
    });
    let mut results = sink.into_inner().expect("sink poisoned");
    results.sort_by_key(|(i, _)| *i);
    results.into_iter().map(|(_, r)| r).collect()
}
