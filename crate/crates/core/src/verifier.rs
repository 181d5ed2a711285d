//! Action matching and the trajectory verification state machine.
//!
//! A trajectory is walked turn by turn. Player actions are checked against
//! the script's verification codes only when the following DM turn raised
//! no error. The final DM turn must be clean, must report `Task Succeed`,
//! and the whole trajectory must contain at least two error-refine turns.
//! Failures either keep a verified prefix and request a continuation, or
//! discard everything and request a fresh trajectory.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::script::{compile_verification_code, ActionSpec, Script};
use crate::trajectory::{DmTurn, Trajectory, TrajectoryParseError, Turn};

/// Literal substring the final DM observation must contain.
pub const COMPLETION_MARKER: &str = "Task Succeed";

/// Accepted trajectories need strictly more than this many error turns.
pub const MAX_REJECTED_ERROR_TURNS: usize = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    pub matched: bool,
    pub action_name: Option<String>,
    pub captures: IndexMap<String, String>,
    pub params_valid: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    #[error("verification code of action `{action}` does not compile: {message}")]
    InvalidScript { action: String, message: String },
    #[error("parse outcome does not extend the verified prefix")]
    PrefixMismatch,
}

/// Tests `specs` in order; the first whose verification code matches the
/// whole of `action_text` wins.
pub fn match_action<'a, I>(action_text: &str, specs: I) -> Result<MatchResult, VerifyError>
where
    I: IntoIterator<Item = &'a ActionSpec>,
{
    for spec in specs {
        let re = compile_verification_code(&spec.verification_code).map_err(|e| {
            VerifyError::InvalidScript {
                action: spec.name.clone(),
                message: e.to_string(),
            }
        })?;
        let Some(caps) = re.captures(action_text) else {
            continue;
        };
        let template = spec.template();
        let occurrences = template.placeholder_occurrences();
        let mut captures = IndexMap::new();
        for (k, group) in caps.iter().skip(1).enumerate() {
            if let (Some(name), Some(m)) = (occurrences.get(k), group) {
                captures
                    .entry((*name).to_owned())
                    .or_insert_with(|| m.as_str().to_owned());
            }
        }
        let names = template.placeholders();
        if names.iter().any(|n| !captures.contains_key(*n)) {
            // The code has too few groups; read values off the template.
            if let Ok(fallback) = compile_verification_code(&template.capture_regex_source()) {
                if let Some(fc) = fallback.captures(action_text) {
                    for (k, group) in fc.iter().skip(1).enumerate() {
                        if let (Some(name), Some(m)) = (occurrences.get(k), group) {
                            captures
                                .entry((*name).to_owned())
                                .or_insert_with(|| m.as_str().to_owned());
                        }
                    }
                }
            }
        }
        let params_valid = !spec.verifiable
            || names.iter().all(|n| match (captures.get(*n), spec.parameters.get(*n)) {
                (Some(v), Some(allowed)) => allowed.iter().any(|a| a == v),
                _ => false,
            });
        // Reorder captures to template order for stable output.
        let captures = names
            .iter()
            .filter_map(|n| captures.get(*n).map(|v| ((*n).to_owned(), v.clone())))
            .collect();
        return Ok(MatchResult {
            matched: true,
            action_name: Some(spec.name.clone()),
            captures,
            params_valid,
        });
    }
    Ok(MatchResult::default())
}

/// Whether a player action is acceptable given the DM's evaluation of it.
///
/// With no DM flag the action must match with valid parameters. A flagged
/// action that matches no template at all is a legitimate error step under
/// any flag; a matched action with bad parameters needs `parameter_error`.
pub fn action_explained(m: &MatchResult, next_dm: &DmTurn) -> bool {
    if !next_dm.has_error() {
        m.matched && m.params_valid
    } else if !m.matched {
        true
    } else {
        m.params_valid || next_dm.parameter_error
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SignalKind {
    Accept,
    TruncateAndContinue,
    Regenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reason {
    JsonFormat,
    KeySchema,
    UnmatchedAction,
    UnfinishedTask,
    FinalTurnHasError,
    TooFewErrorRefineTurns,
}

impl Reason {
    /// Feedback text used when re-prompting the generator.
    pub fn describe(self) -> &'static str {
        match self {
            Reason::JsonFormat => "the output at this turn is not valid JSON",
            Reason::KeySchema => {
                "the JSON keys, roles or turn numbers at this turn do not match the required format"
            }
            Reason::UnmatchedAction => {
                "the player's action does not match any available action with valid parameters, \
                 and the DM did not report an error for it"
            }
            Reason::UnfinishedTask => {
                "the trajectory ended without the DM confirming the task is finished with 'Task Succeed'"
            }
            Reason::FinalTurnHasError => "the final DM turn reports an error",
            Reason::TooFewErrorRefineTurns => {
                "the trajectory contains fewer than two error turns followed by a refinement"
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerificationSignal {
    pub kind: SignalKind,
    pub at_turn: Option<usize>,
    pub reason: Option<Reason>,
}

impl VerificationSignal {
    pub fn accept() -> Self {
        VerificationSignal {
            kind: SignalKind::Accept,
            at_turn: None,
            reason: None,
        }
    }

    pub fn regenerate(reason: Reason) -> Self {
        VerificationSignal {
            kind: SignalKind::Regenerate,
            at_turn: None,
            reason: Some(reason),
        }
    }

    /// Truncation at turn 0 would keep nothing, so it becomes a regeneration.
    pub fn truncate(at_turn: usize, reason: Reason) -> Self {
        if at_turn == 0 {
            return Self::regenerate(reason);
        }
        VerificationSignal {
            kind: SignalKind::TruncateAndContinue,
            at_turn: Some(at_turn),
            reason: Some(reason),
        }
    }

    pub fn is_accept(&self) -> bool {
        self.kind == SignalKind::Accept
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Verdict {
    pub prefix: Vec<Turn>,
    pub signal: VerificationSignal,
}

impl Verdict {
    fn truncate(turns: &[Turn], at: usize, reason: Reason) -> Self {
        let signal = VerificationSignal::truncate(at, reason);
        let prefix = if signal.kind == SignalKind::Regenerate {
            Vec::new()
        } else {
            turns[..at].to_vec()
        };
        Verdict { prefix, signal }
    }
}

pub fn count_error_turns(traj: &Trajectory) -> usize {
    traj.dm_turns().filter(|d| d.has_error()).count()
}

/// Runs the verification state machine.
///
/// `outcome` is either the full candidate trajectory (whose first
/// `prior_prefix.len()` turns must equal `prior_prefix`) or the parse error
/// from the latest generation. A parse error's recovered turns may cover the
/// whole trajectory or only the part after `prior_prefix`.
///
/// Turns inside `prior_prefix` are trusted and not re-checked, except that a
/// trailing player turn is re-checked against the DM turn that now follows.
pub fn verify_trajectory(
    script: &Script,
    outcome: &Result<Trajectory, TrajectoryParseError>,
    prior_prefix: &[Turn],
) -> Result<Verdict, VerifyError> {
    for spec in script.action_specs() {
        compile_verification_code(&spec.verification_code).map_err(|e| VerifyError::InvalidScript {
            action: spec.name.clone(),
            message: e.to_string(),
        })?;
    }

    let (turns, parse_error): (Vec<Turn>, Option<&TrajectoryParseError>) = match outcome {
        Ok(traj) => {
            if !traj.turns().starts_with(prior_prefix) {
                return Err(VerifyError::PrefixMismatch);
            }
            (traj.turns().to_vec(), None)
        }
        Err(err) => {
            let first = err.turn.checked_sub(err.parsed.len()).ok_or(VerifyError::PrefixMismatch)?;
            let turns = if first == prior_prefix.len() {
                let mut joined = prior_prefix.to_vec();
                joined.extend(err.parsed.iter().cloned());
                joined
            } else if first == 0 && err.parsed.starts_with(prior_prefix) {
                err.parsed.clone()
            } else {
                return Err(VerifyError::PrefixMismatch);
            };
            (turns, Some(err))
        }
    };

    let mut start = prior_prefix.len().min(turns.len());
    if start > 0 && matches!(turns[start - 1], Turn::Player(_)) {
        start -= 1;
    }
    let mut error_num = turns[..start]
        .iter()
        .filter_map(Turn::as_dm)
        .filter(|d| d.has_error())
        .count();
    let last = turns.len().checked_sub(1);

    for i in start..turns.len() {
        match &turns[i] {
            Turn::Player(p) => match turns.get(i + 1).and_then(Turn::as_dm) {
                Some(next_dm) => {
                    let m = match_action(&p.action, script.action_specs())?;
                    if !action_explained(&m, next_dm) {
                        return Ok(Verdict::truncate(&turns, i, Reason::UnmatchedAction));
                    }
                }
                None if parse_error.is_some() => break,
                None => return Ok(Verdict::truncate(&turns, i, Reason::UnfinishedTask)),
            },
            Turn::Dm(d) => {
                if d.has_error() {
                    error_num += 1;
                }
                if parse_error.is_none() && Some(i) == last {
                    if d.has_error() {
                        return Ok(Verdict::truncate(&turns, i, Reason::FinalTurnHasError));
                    }
                    if !d.observation.contains(COMPLETION_MARKER) || !d.finished {
                        return Ok(Verdict::truncate(&turns, i, Reason::UnfinishedTask));
                    }
                    if error_num <= MAX_REJECTED_ERROR_TURNS {
                        return Ok(Verdict {
                            prefix: Vec::new(),
                            signal: VerificationSignal::regenerate(Reason::TooFewErrorRefineTurns),
                        });
                    }
                    return Ok(Verdict {
                        prefix: turns,
                        signal: VerificationSignal::accept(),
                    });
                }
            }
        }
    }

    match parse_error {
        Some(err) => {
            let reason = if err.kind.is_format_error() {
                Reason::JsonFormat
            } else {
                Reason::KeySchema
            };
            Ok(Verdict::truncate(&turns, turns.len(), reason))
        }
        // Only reachable for an empty turn list, which `Trajectory` forbids.
        None => Ok(Verdict::truncate(&turns, 0, Reason::UnfinishedTask)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trajectory::{parse_trajectory, parse_turns, PlayerTurn};

    fn spec(name: &str, code: &str, params: &[(&str, &[&str])]) -> ActionSpec {
        ActionSpec {
            name: name.into(),
            description: None,
            special_format: None,
            verification_code: code.into(),
            parameters: params
                .iter()
                .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
                .collect(),
            verifiable: true,
        }
    }

    #[test]
    fn matches_with_captures() {
        let specs = [spec("go to {place}", "^go to (kitchen|hall)$", &[("place", &["kitchen", "hall"])])];
        let m = match_action("go to kitchen", &specs).unwrap();
        assert!(m.matched && m.params_valid);
        assert_eq!(m.captures.get("place").map(String::as_str), Some("kitchen"));
        assert_eq!(m.action_name.as_deref(), Some("go to {place}"));

        let m = match_action("go to attic", &specs).unwrap();
        assert_eq!(m, MatchResult::default());
    }

    #[test]
    fn matched_with_invalid_parameter() {
        let specs = [spec(
            "take {obj} from {recep}",
            r"^take (\w+) from (\w+)$",
            &[("obj", &["knife"]), ("recep", &["drawer"])],
        )];
        let m = match_action("take knife from table", &specs).unwrap();
        assert!(m.matched);
        assert!(!m.params_valid);
        // Brute-force membership over the allowed lists.
        let expected = m.captures.iter().all(|(k, v)| specs[0].parameters[k].contains(v));
        assert_eq!(m.params_valid, expected);
        assert_eq!(m.captures["recep"], "table");
    }

    #[test]
    fn declaration_order_breaks_ties() {
        let specs = [
            spec("look", "^look$", &[]),
            spec("look around", "^look( around)?$", &[]),
        ];
        let m = match_action("look", &specs).unwrap();
        assert_eq!(m.action_name.as_deref(), Some("look"));
    }

    #[test]
    fn groupless_code_falls_back_to_template() {
        let specs = [spec("open {thing}", "^open (?:box|door)$", &[("thing", &["box"])])];
        let m = match_action("open door", &specs).unwrap();
        assert!(m.matched);
        assert_eq!(m.captures["thing"], "door");
        assert!(!m.params_valid);
    }

    #[test]
    fn unverifiable_action_always_valid_parameters() {
        let mut s = spec("answer {text}", "^answer .+$", &[]);
        s.verifiable = false;
        let m = match_action("answer forty two", [&s]).unwrap();
        assert!(m.matched && m.params_valid);
    }

    #[test]
    fn code_matches_whole_action_only() {
        let specs = [spec("look", "look", &[])];
        assert!(!match_action("look around", &specs).unwrap().matched);
    }

    fn script() -> Script {
        crate::script::parse_script(
            r#"{"Thought": "", "Environment": {"initial state": "hall", "places and objects": {"hall": {}, "kitchen": {}},
              "player": {"information": ""}}, "Goal": "reach kitchen", "Completion Conditions": ["go to kitchen"],
              "Available Actions": {"go to {place}": {"verification code": "^go to (kitchen|hall)$",
              "parameters": {"place": ["kitchen", "hall"]}}}}"#,
        )
        .unwrap()
    }

    fn dm(turn: usize, error: bool, finished: bool) -> Turn {
        Turn::Dm(DmTurn {
            turn,
            thought: String::new(),
            observation: if finished { "Task Succeed".into() } else { "ok".into() },
            parameter_error: error,
            place_error: false,
            logic_error: false,
            progress_rate: if finished { 1.0 } else { 0.0 },
            finished,
        })
    }

    fn pl(turn: usize, action: &str) -> Turn {
        Turn::Player(PlayerTurn {
            turn,
            thought: String::new(),
            action: action.into(),
        })
    }

    fn traj(turns: Vec<Turn>) -> Result<Trajectory, TrajectoryParseError> {
        Ok(Trajectory::new(turns).unwrap())
    }

    #[test]
    fn accept_with_two_errors() {
        let t = vec![
            dm(0, false, false),
            pl(1, "fly"),
            dm(2, true, false),
            pl(3, "go to hall"),
            dm(4, false, false),
            pl(5, "go to attic"),
            dm(6, true, false),
            pl(7, "go to kitchen"),
            dm(8, false, true),
        ];
        let v = verify_trajectory(&script(), &traj(t.clone()), &[]).unwrap();
        assert!(v.signal.is_accept());
        assert_eq!(v.prefix, t);
    }

    #[test]
    fn one_error_regenerates() {
        let t = vec![
            dm(0, false, false),
            pl(1, "fly"),
            dm(2, true, false),
            pl(3, "go to kitchen"),
            dm(4, false, true),
        ];
        let v = verify_trajectory(&script(), &traj(t), &[]).unwrap();
        assert_eq!(v.signal, VerificationSignal::regenerate(Reason::TooFewErrorRefineTurns));
        assert!(v.prefix.is_empty());
    }

    #[test]
    fn only_final_turn_flagged_is_never_accepted() {
        let t = vec![dm(0, false, false), pl(1, "go to kitchen"), dm(2, true, true)];
        let tr = Trajectory::new(t).unwrap();
        assert_eq!(count_error_turns(&tr), 1);
        let v = verify_trajectory(&script(), &Ok(tr), &[]).unwrap();
        assert_eq!(v.signal, VerificationSignal::truncate(2, Reason::FinalTurnHasError));
    }

    #[test]
    fn unmatched_unflagged_action_truncates() {
        let t = vec![dm(0, false, false), pl(1, "fly"), dm(2, false, false), pl(3, "go to kitchen"), dm(4, false, true)];
        let v = verify_trajectory(&script(), &traj(t.clone()), &[]).unwrap();
        assert_eq!(v.signal, VerificationSignal::truncate(1, Reason::UnmatchedAction));
        assert_eq!(v.prefix, t[..1]);
    }

    #[test]
    fn invalid_param_under_logic_flag_truncates() {
        let mut flagged = dm(2, false, false);
        if let Turn::Dm(d) = &mut flagged {
            d.logic_error = true;
        }
        let specs_script = {
            let mut s = script();
            s.actions[0].verification_code = r"^go to (\w+)$".into();
            s
        };
        let t = vec![dm(0, false, false), pl(1, "go to attic"), flagged, pl(3, "go to kitchen"), dm(4, false, true)];
        let v = verify_trajectory(&specs_script, &traj(t), &[]).unwrap();
        assert_eq!(v.signal, VerificationSignal::truncate(1, Reason::UnmatchedAction));
    }

    #[test]
    fn parse_error_keeps_prefix() {
        let text = r#"[{"turn": 0, "role": "DM", "Thought": "", "Observation": "", "parameter_error": false,
            "place_error": false, "logic_error": false, "progress_rate": 0.0, "finished": false},
            {"turn": 1, "role": "Player", "Thought": "", "Action": "go to hall"},
            {"turn": 2, "role": "DM", "Thought": "", "Observation": ""}]"#;
        let outcome = parse_trajectory(text);
        let v = verify_trajectory(&script(), &outcome, &[]).unwrap();
        assert_eq!(v.signal, VerificationSignal::truncate(2, Reason::KeySchema));
        assert_eq!(v.prefix.len(), 2);
    }

    #[test]
    fn continuation_rechecks_trailing_player_turn() {
        let prior = vec![dm(0, false, false), pl(1, "fly")];
        let mut full = prior.clone();
        full.extend([dm(2, false, false), pl(3, "go to kitchen"), dm(4, false, true)]);
        let v = verify_trajectory(&script(), &traj(full), &prior).unwrap();
        assert_eq!(v.signal, VerificationSignal::truncate(1, Reason::UnmatchedAction));
    }

    #[test]
    fn continuation_parse_error_is_absolute() {
        let prior = vec![dm(0, true, false), pl(1, "go to hall")];
        let text = r#"[{"turn": 2, "role": "DM", "Thought": "", "Observation": "", "parameter_error": true,
            "place_error": false, "logic_error": false, "progress_rate": 0.0, "finished": false},
            {"turn": 3, "role": "Player"}]"#;
        let outcome: Result<Trajectory, _> = Err(parse_turns(text, 2).unwrap_err());
        let v = verify_trajectory(&script(), &outcome, &prior).unwrap();
        assert_eq!(v.signal, VerificationSignal::truncate(3, Reason::KeySchema));
        assert_eq!(v.prefix.len(), 3);
    }

    #[test]
    fn prefix_mismatch_is_an_error() {
        let prior = vec![dm(0, false, false), pl(1, "go to hall")];
        let t = vec![dm(0, false, false), pl(1, "go to kitchen"), dm(2, false, true)];
        assert_eq!(
            verify_trajectory(&script(), &traj(t), &prior),
            Err(VerifyError::PrefixMismatch)
        );
    }

    #[test]
    fn nothing_parsed_regenerates() {
        let outcome = parse_trajectory("I cannot do that.");
        let v = verify_trajectory(&script(), &outcome, &[]).unwrap();
        assert_eq!(v.signal, VerificationSignal::regenerate(Reason::JsonFormat));
    }
}
