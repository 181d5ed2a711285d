//! Few-shot prompt rendering for script and trajectory generation.

use thiserror::Error;

use crate::chat::ChatMessage;
use crate::script::{parse_script, serialize_script, Persona, Script};
use crate::trajectory::{parse_trajectory, serialize_trajectory, serialize_turns, Trajectory, Turn};
use crate::verifier::VerificationSignal;

/// Output contract for script generation.
pub const SCRIPT_FORMAT: &str = r#"Reply with one JSON object and nothing else:
{
  "Thought": string, your plan for the environment, the goal and the actions,
  "Environment": {
    "initial state": string, what the player sees at the start,
    "places and objects": {
      "<name>": {
        "information": string (optional), shown to the player when the place or object is entered or examined,
        "location": string (optional),
        "relative location": [string] (optional),
        "<note title>": string (optional), a fact only the DM knows,
        "<child name>": { ...same shape, nested as deep as needed... }
      }
    },
    "player": { "information": string, the player's limits }
  },
  "Goal": string, a concrete task,
  "Completion Conditions": [string], conditions that together mean the task is done,
  "Available Actions": {
    "<action name with {placeholders}>": {
      "description": string (optional),
      "special format": string (optional), only for free-form actions such as answers or code edits,
      "verification code": string, a regular expression that the full action text must match,
      "parameters": { "<placeholder>": [string], every allowed value }
    }
  }
}
Add distractor places and objects so that mistakes are possible."#;

/// Output contract for trajectory generation.
pub const TRAJECTORY_FORMAT: &str = r#"Reply with one JSON list of turns and nothing else. Turns alternate DM, Player, DM, ... starting with the DM at turn 0 and ending with the DM.
DM turn:
{"turn": int, "role": "DM", "Thought": string, "Observation": string,
 "parameter_error": bool, "place_error": bool, "logic_error": bool,
 "progress_rate": float from 0.0 to 1.0, "finished": bool}
Player turn:
{"turn": int, "role": "Player", "Thought": string, "Action": string}
Rules:
- The DM sets an error flag when the player's previous action has a wrong parameter, is done in the wrong place, or makes no sense.
- Player actions must follow the script's available actions and parameters exactly.
- The player makes at least two mistakes, reads the DM's feedback and corrects itself.
- The final DM turn has no error flags, "finished": true, "progress_rate": 1.0, and its Observation contains "Task Succeed"."#;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("expected {expected} script exemplars, got {got}")]
    ExemplarCountMismatch { expected: usize, got: usize },
}

/// Few-shot material for both prompt kinds.
#[derive(Debug, Clone)]
pub struct Exemplars {
    pub scripts: Vec<(Persona, Script)>,
    pub trajectory: (Script, Trajectory),
}

impl Exemplars {
    /// The hand-written exemplars shipped with the crate.
    pub fn builtin() -> Self {
        let persona = |id: &str, text: &str| Persona::new(id, text).expect("non-empty persona");
        let script = |text: &str| parse_script(text).expect("bundled exemplar script parses");
        Exemplars {
            scripts: vec![
                (
                    persona("exemplar-1", include_str!("../../fixtures/exemplars/persona_1.txt").trim()),
                    script(include_str!("../../fixtures/exemplars/script_1.json")),
                ),
                (
                    persona("exemplar-2", include_str!("../../fixtures/exemplars/persona_2.txt").trim()),
                    script(include_str!("../../fixtures/exemplars/script_2.json")),
                ),
                (
                    persona("exemplar-3", include_str!("../../fixtures/exemplars/persona_3.txt").trim()),
                    script(include_str!("../../fixtures/exemplars/script_3.json")),
                ),
            ],
            trajectory: (
                script(include_str!("../../fixtures/exemplars/script_1.json")),
                parse_trajectory(include_str!("../../fixtures/exemplars/trajectory_1.json"))
                    .expect("bundled exemplar trajectory parses"),
            ),
        }
    }
}

pub fn render_script_prompt(
    persona: &Persona,
    exemplars: &[(Persona, Script)],
    shot_count: usize,
    feedback: Option<&[String]>,
) -> Result<Vec<ChatMessage>, PromptError> {
    if exemplars.len() != shot_count {
        return Err(PromptError::ExemplarCountMismatch {
            expected: shot_count,
            got: exemplars.len(),
        });
    }
    let mut msgs = vec![ChatMessage::system(format!(
        "You design text-adventure scripts for a game master (DM) and a player. \
         Base the world, the task and the actions on the given persona.\n\n{SCRIPT_FORMAT}"
    ))];
    for (p, s) in exemplars {
        msgs.push(ChatMessage::user(format!("Persona: {}", p.description)));
        msgs.push(ChatMessage::assistant(serialize_script(s)));
    }
    let mut last = format!("Persona: {}", persona.description);
    if let Some(problems) = feedback.filter(|p| !p.is_empty()) {
        last.push_str("\n\nYour previous script for this persona was rejected:\n");
        for p in problems {
            last.push_str("- ");
            last.push_str(p);
            last.push('\n');
        }
        last.push_str("Write a new script that fixes these problems.");
    }
    msgs.push(ChatMessage::user(last));
    Ok(msgs)
}

/// Which kind of trajectory request to render.
#[derive(Debug, Clone, Copy)]
pub enum TrajectoryRound<'a> {
    First,
    /// Keep `prefix` and ask for the turns after it.
    Continue {
        prefix: &'a [Turn],
        signal: &'a VerificationSignal,
    },
    /// Show the whole failed attempt and ask for a fresh trajectory.
    Regenerate {
        rejected: &'a str,
        signal: &'a VerificationSignal,
    },
}

fn failure_text(signal: &VerificationSignal) -> String {
    let reason = signal.reason.map_or("verification failed", |r| r.describe());
    match signal.at_turn {
        Some(t) => format!("turn {t}: {reason}"),
        None => reason.to_owned(),
    }
}

pub fn render_trajectory_prompt(
    script: &Script,
    exemplar: (&Script, &Trajectory),
    round: TrajectoryRound<'_>,
) -> Vec<ChatMessage> {
    let mut msgs = vec![
        ChatMessage::system(format!(
            "You simulate a game between a DM and a player following a script. \
             The DM describes what happens and judges each player action; the player \
             thinks and acts.\n\n{TRAJECTORY_FORMAT}"
        )),
        ChatMessage::user(format!("Script:\n{}", serialize_script(exemplar.0))),
        ChatMessage::assistant(serialize_trajectory(exemplar.1)),
    ];
    let mut last = format!("Script:\n{}", serialize_script(script));
    match round {
        TrajectoryRound::First => {
            last.push_str("\nWrite the full trajectory.");
        }
        TrajectoryRound::Continue { prefix, signal } => {
            let next = prefix.len();
            last.push_str(&format!(
                "\nThese turns were checked and are kept:\n{}\nThe turn after them was rejected ({}).\n\
                 Continue the game. Output a JSON list containing only the turns numbered {next} and later.",
                serialize_turns(prefix),
                failure_text(signal),
            ));
        }
        TrajectoryRound::Regenerate { rejected, signal } => {
            last.push_str(&format!(
                "\nYour previous trajectory was rejected ({}). All of its turns:\n{}\n\
                 Write a new trajectory from turn 0.",
                failure_text(signal),
                rejected.trim_end(),
            ));
        }
    }
    msgs.push(ChatMessage::user(last));
    msgs
}
