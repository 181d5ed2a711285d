//! Alternating DM/player turn lists.
//!
//! DM turns carry even turn numbers and player turns odd ones, starting
//! from DM turn 0. Parsing reports the earliest offending turn together with
//! every turn that parsed cleanly before it, so a verifier can keep that
//! prefix and ask for a continuation.

use serde_json::{Map, Number, Value};
use thiserror::Error;

use crate::json::{self, ExtractError, JsonKind};

#[derive(Debug, Clone, PartialEq)]
pub struct DmTurn {
    pub turn: usize,
    pub thought: String,
    pub observation: String,
    pub parameter_error: bool,
    pub place_error: bool,
    pub logic_error: bool,
    pub progress_rate: f64,
    pub finished: bool,
}

/// True when the DM flagged the preceding player action in any way.
pub fn error_flag(turn: &DmTurn) -> bool {
    turn.parameter_error || turn.place_error || turn.logic_error
}

impl DmTurn {
    pub fn has_error(&self) -> bool {
        error_flag(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlayerTurn {
    pub turn: usize,
    pub thought: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Turn {
    Dm(DmTurn),
    Player(PlayerTurn),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Dm,
    Player,
}

impl Role {
    /// Role expected at list position `index`.
    pub fn at(index: usize) -> Role {
        if index % 2 == 0 {
            Role::Dm
        } else {
            Role::Player
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Role::Dm => "DM",
            Role::Player => "Player",
        }
    }
}

impl Turn {
    pub fn number(&self) -> usize {
        match self {
            Turn::Dm(d) => d.turn,
            Turn::Player(p) => p.turn,
        }
    }

    pub fn role(&self) -> Role {
        match self {
            Turn::Dm(_) => Role::Dm,
            Turn::Player(_) => Role::Player,
        }
    }

    pub fn as_dm(&self) -> Option<&DmTurn> {
        match self {
            Turn::Dm(d) => Some(d),
            Turn::Player(_) => None,
        }
    }

    pub fn as_player(&self) -> Option<&PlayerTurn> {
        match self {
            Turn::Player(p) => Some(p),
            Turn::Dm(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TurnErrorKind {
    #[error("no JSON array found")]
    NoJsonFound,
    #[error("JSON syntax error: {0}")]
    JsonSyntax(String),
    #[error("output contains more than one JSON array")]
    Ambiguous,
    #[error("trajectory has no turns")]
    Empty,
    #[error("turn is not a JSON object")]
    NotAnObject,
    #[error("keys do not match (missing {missing:?}, unexpected {extra:?}, mistyped {mistyped:?})")]
    KeyMismatch {
        missing: Vec<String>,
        extra: Vec<String>,
        mistyped: Vec<String>,
    },
    #[error("expected a {} turn, found {}", expected.as_str(), found.as_str())]
    RoleOrderViolation { expected: Role, found: Role },
    #[error("turn number {found} at position {expected}")]
    TurnNumberMismatch { expected: usize, found: usize },
    #[error("`{field}` out of range: {message}")]
    RangeViolation { field: String, message: String },
}

impl TurnErrorKind {
    /// Whole-output JSON problems, as opposed to per-turn schema problems.
    pub fn is_format_error(&self) -> bool {
        matches!(
            self,
            TurnErrorKind::NoJsonFound
                | TurnErrorKind::JsonSyntax(_)
                | TurnErrorKind::Ambiguous
                | TurnErrorKind::Empty
        )
    }
}

/// Parse failure at list position `turn`, with the turns before it.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("turn {turn}: {kind}")]
pub struct TrajectoryParseError {
    pub turn: usize,
    pub kind: TurnErrorKind,
    pub parsed: Vec<Turn>,
}

/// A trajectory whose structural invariants hold.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    turns: Vec<Turn>,
}

impl Trajectory {
    pub fn new(turns: Vec<Turn>) -> Result<Self, TrajectoryParseError> {
        if turns.is_empty() {
            return Err(TrajectoryParseError {
                turn: 0,
                kind: TurnErrorKind::Empty,
                parsed: Vec::new(),
            });
        }
        for (i, t) in turns.iter().enumerate() {
            if let Err(kind) = check_position(t, i) {
                return Err(TrajectoryParseError {
                    turn: i,
                    kind,
                    parsed: turns[..i].to_vec(),
                });
            }
        }
        Ok(Trajectory { turns })
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn into_turns(self) -> Vec<Turn> {
        self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn dm_turns(&self) -> impl Iterator<Item = &DmTurn> {
        self.turns.iter().filter_map(Turn::as_dm)
    }

    pub fn player_turns(&self) -> impl Iterator<Item = &PlayerTurn> {
        self.turns.iter().filter_map(Turn::as_player)
    }

    pub fn last_dm(&self) -> Option<&DmTurn> {
        self.turns.iter().rev().find_map(Turn::as_dm)
    }
}

fn check_position(turn: &Turn, index: usize) -> Result<(), TurnErrorKind> {
    let expected = Role::at(index);
    if turn.role() != expected {
        return Err(TurnErrorKind::RoleOrderViolation {
            expected,
            found: turn.role(),
        });
    }
    if turn.number() != index {
        return Err(TurnErrorKind::TurnNumberMismatch {
            expected: index,
            found: turn.number(),
        });
    }
    match turn {
        Turn::Dm(d) => {
            if !(0.0..=1.0).contains(&d.progress_rate) {
                return Err(TurnErrorKind::RangeViolation {
                    field: "progress_rate".into(),
                    message: format!("{} is outside [0, 1]", d.progress_rate),
                });
            }
            if d.finished && d.progress_rate != 1.0 {
                return Err(TurnErrorKind::RangeViolation {
                    field: "finished".into(),
                    message: format!("finished with progress_rate {}", d.progress_rate),
                });
            }
        }
        Turn::Player(p) => {
            if p.action.trim().is_empty() {
                return Err(TurnErrorKind::RangeViolation {
                    field: "Action".into(),
                    message: "action is empty".into(),
                });
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

const DM_KEYS: [&str; 9] = [
    "turn",
    "role",
    "Thought",
    "Observation",
    "parameter_error",
    "place_error",
    "logic_error",
    "progress_rate",
    "finished",
];
const PLAYER_KEYS: [&str; 4] = ["turn", "role", "Thought", "Action"];

fn strip_label<'a>(s: &'a str, label: &str) -> &'a str {
    let trimmed = s.trim_start();
    match trimmed.get(..label.len()) {
        Some(head) if head.eq_ignore_ascii_case(label) => trimmed[label.len()..].trim_start(),
        _ => s,
    }
}

fn parse_turn(value: &Value, index: usize) -> Result<Turn, TurnErrorKind> {
    let Value::Object(obj) = value else {
        return Err(TurnErrorKind::NotAnObject);
    };
    let role = match obj.get("role") {
        Some(Value::String(r)) if r == "DM" => Role::Dm,
        Some(Value::String(r)) if r == "Player" => Role::Player,
        Some(_) => {
            return Err(TurnErrorKind::KeyMismatch {
                missing: vec![],
                extra: vec![],
                mistyped: vec!["role".into()],
            })
        }
        None => {
            return Err(TurnErrorKind::KeyMismatch {
                missing: vec!["role".into()],
                extra: vec![],
                mistyped: vec![],
            })
        }
    };
    let expected: &[&str] = match role {
        Role::Dm => &DM_KEYS,
        Role::Player => &PLAYER_KEYS,
    };
    let missing: Vec<String> = expected
        .iter()
        .filter(|k| !obj.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    let extra: Vec<String> = obj
        .keys()
        .filter(|k| !expected.contains(&k.as_str()))
        .cloned()
        .collect();
    let mut mistyped = Vec::new();
    let mut get_str = |k: &str| match obj.get(k) {
        Some(Value::String(s)) => s.clone(),
        Some(_) => {
            mistyped.push(k.to_string());
            String::new()
        }
        None => String::new(),
    };
    let thought = get_str("Thought");
    let observation = if role == Role::Dm {
        get_str("Observation")
    } else {
        String::new()
    };
    let action = if role == Role::Player {
        get_str("Action")
    } else {
        String::new()
    };
    let turn_number = match obj.get("turn") {
        Some(Value::Number(n)) => match n.as_u64() {
            Some(v) => v as usize,
            None => {
                mistyped.push("turn".into());
                0
            }
        },
        Some(_) => {
            mistyped.push("turn".into());
            0
        }
        None => 0,
    };
    let mut get_bool = |k: &str| match obj.get(k) {
        Some(Value::Bool(b)) => *b,
        Some(_) => {
            mistyped.push(k.to_string());
            false
        }
        None => false,
    };
    let (parameter_error, place_error, logic_error, finished) = if role == Role::Dm {
        (
            get_bool("parameter_error"),
            get_bool("place_error"),
            get_bool("logic_error"),
            get_bool("finished"),
        )
    } else {
        (false, false, false, false)
    };
    let progress_rate = if role == Role::Dm {
        match obj.get("progress_rate") {
            Some(Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
            Some(_) => {
                mistyped.push("progress_rate".into());
                0.0
            }
            None => 0.0,
        }
    } else {
        0.0
    };
    if !(missing.is_empty() && extra.is_empty() && mistyped.is_empty()) {
        return Err(TurnErrorKind::KeyMismatch {
            missing,
            extra,
            mistyped,
        });
    }
    let turn = match role {
        Role::Dm => Turn::Dm(DmTurn {
            turn: turn_number,
            thought,
            observation,
            parameter_error,
            place_error,
            logic_error,
            progress_rate,
            finished,
        }),
        Role::Player => Turn::Player(PlayerTurn {
            turn: turn_number,
            thought: strip_label(&thought, "Thought:").to_owned(),
            action: strip_label(&action, "Action:").to_owned(),
        }),
    };
    check_position(&turn, index)?;
    Ok(turn)
}

fn parse_elements(values: &[Value], offset: usize) -> Result<Vec<Turn>, TrajectoryParseError> {
    let mut out = Vec::with_capacity(values.len());
    for (i, v) in values.iter().enumerate() {
        match parse_turn(v, offset + i) {
            Ok(t) => out.push(t),
            Err(kind) => {
                return Err(TrajectoryParseError {
                    turn: offset + i,
                    kind,
                    parsed: out,
                })
            }
        }
    }
    Ok(out)
}

/// Parses a list of turns whose first element must sit at position `offset`
/// in the full trajectory. Used directly for continuation output.
pub fn parse_turns(text: &str, offset: usize) -> Result<Vec<Turn>, TrajectoryParseError> {
    let cleaned = json::strip_fences(text);
    let fail = |turn, kind, parsed| TrajectoryParseError { turn, kind, parsed };
    match json::locate(&cleaned, JsonKind::Array) {
        Ok(located) => {
            let Value::Array(items) = located.value else {
                unreachable!("locate returns the requested kind")
            };
            if items.is_empty() {
                return Err(fail(offset, TurnErrorKind::Empty, Vec::new()));
            }
            parse_elements(&items, offset)
        }
        Err(ExtractError::NoJsonFound) => Err(fail(offset, TurnErrorKind::NoJsonFound, Vec::new())),
        Err(ExtractError::Ambiguous { .. }) => Err(fail(offset, TurnErrorKind::Ambiguous, Vec::new())),
        Err(ExtractError::Syntax {
            candidate_start,
            message,
            ..
        }) => {
            // Recover the well-formed leading turns of a broken array.
            let scan = json::split_array_elements(&cleaned, candidate_start);
            let mut values = Vec::new();
            for (i, element) in scan.elements.iter().enumerate() {
                match json::parse_strict(element) {
                    Ok(v) => values.push(v),
                    Err(e) => {
                        let parsed = parse_elements(&values, offset)?;
                        return Err(fail(offset + i, TurnErrorKind::JsonSyntax(e.to_string()), parsed));
                    }
                }
            }
            let parsed = parse_elements(&values, offset)?;
            Err(fail(
                offset + values.len(),
                TurnErrorKind::JsonSyntax(message),
                parsed,
            ))
        }
    }
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory, TrajectoryParseError> {
    Trajectory::new(parse_turns(text, 0)?)
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

pub fn turn_to_value(turn: &Turn) -> Value {
    let mut m = Map::new();
    match turn {
        Turn::Dm(d) => {
            m.insert("turn".into(), Value::from(d.turn));
            m.insert("role".into(), Value::from("DM"));
            m.insert("Thought".into(), Value::from(d.thought.clone()));
            m.insert("Observation".into(), Value::from(d.observation.clone()));
            m.insert("parameter_error".into(), Value::Bool(d.parameter_error));
            m.insert("place_error".into(), Value::Bool(d.place_error));
            m.insert("logic_error".into(), Value::Bool(d.logic_error));
            m.insert(
                "progress_rate".into(),
                Number::from_f64(d.progress_rate).map_or(Value::Null, Value::Number),
            );
            m.insert("finished".into(), Value::Bool(d.finished));
        }
        Turn::Player(p) => {
            m.insert("turn".into(), Value::from(p.turn));
            m.insert("role".into(), Value::from("Player"));
            m.insert("Thought".into(), Value::from(p.thought.clone()));
            m.insert("Action".into(), Value::from(p.action.clone()));
        }
    }
    Value::Object(m)
}

pub fn turns_to_value(turns: &[Turn]) -> Value {
    Value::Array(turns.iter().map(turn_to_value).collect())
}

/// Pretty-printed canonical JSON for any turn list, newline terminated.
pub fn serialize_turns(turns: &[Turn]) -> String {
    let mut s = serde_json::to_string_pretty(&turns_to_value(turns))
        .expect("turn values are always serializable");
    s.push('\n');
    s
}

pub fn serialize_trajectory(traj: &Trajectory) -> String {
    serialize_turns(traj.turns())
}

impl serde::Serialize for Trajectory {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        turns_to_value(&self.turns).serialize(s)
    }
}

impl<'de> serde::Deserialize<'de> for Trajectory {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(d)?;
        let Value::Array(items) = value else {
            return Err(serde::de::Error::custom("trajectory must be a JSON array"));
        };
        let turns = parse_elements(&items, 0).map_err(serde::de::Error::custom)?;
        Trajectory::new(turns).map_err(serde::de::Error::custom)
    }
}
