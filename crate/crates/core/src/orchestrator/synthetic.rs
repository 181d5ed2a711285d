//! A deterministic offline stand-in for the generator model.
//!
//! It answers script and trajectory prompts rendered by this crate with small
//! search tasks. Each persona is assigned a [`Behavior`] from a hash of its
//! description, so a corpus exercises every branch of the generation loop.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::client::{ChatClient, ChatRequest, TransportError};
use crate::chat::ChatRole;
use crate::json;
use crate::script::{parse_script, Script};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Behavior {
    /// Valid script, then a trajectory with two error turns.
    Clean,
    /// First trajectory breaks JSON at turn 4; the continuation fixes it.
    JsonErrorThenContinue,
    /// First script fails self-matching; the retry is valid.
    ScriptRetry,
    /// Every trajectory has a single error turn.
    AlwaysOneError,
    /// An unmatched action goes unflagged; the continuation repairs it.
    UnflaggedUnmatched,
    /// Valid script and a trajectory with three error turns.
    ThreeErrors,
    /// Three error turns, but the first trajectory stops before the task is
    /// done.
    Unfinished,
    /// Every script fails self-matching.
    BrokenScript,
}

impl Behavior {
    pub const ALL: [Behavior; 8] = [
        Behavior::Clean,
        Behavior::JsonErrorThenContinue,
        Behavior::ScriptRetry,
        Behavior::AlwaysOneError,
        Behavior::UnflaggedUnmatched,
        Behavior::ThreeErrors,
        Behavior::Unfinished,
        Behavior::BrokenScript,
    ];

    pub fn for_persona(description: &str) -> Behavior {
        Self::ALL[seed_byte(description, 0) as usize % Self::ALL.len()]
    }

    /// Whether a persona with this behavior is accepted within `budget` calls.
    pub fn accepted_within(self, budget: usize) -> bool {
        self.calls_to_accept().is_some_and(|n| n <= budget)
    }

    pub fn calls_to_accept(self) -> Option<usize> {
        match self {
            Behavior::Clean | Behavior::ThreeErrors => Some(2),
            Behavior::JsonErrorThenContinue
            | Behavior::ScriptRetry
            | Behavior::UnflaggedUnmatched
            | Behavior::Unfinished => Some(3),
            Behavior::AlwaysOneError | Behavior::BrokenScript => None,
        }
    }

    fn index(self) -> usize {
        Self::ALL.iter().position(|b| *b == self).expect("listed")
    }
}

fn seed_byte(text: &str, k: usize) -> u8 {
    Sha256::digest(text.as_bytes())[k]
}

const PLACES: [&str; 6] = ["hall", "study", "attic", "cellar", "garden", "pantry"];
const ITEMS: [&str; 6] = ["key", "map", "lantern", "ledger", "coin", "scarf"];

struct World {
    behavior: Behavior,
    places: [&'static str; 3],
    item: &'static str,
    decoy: &'static str,
}

impl World {
    fn for_persona(description: &str) -> World {
        let pick = |k: usize, n: usize| seed_byte(description, k) as usize % n;
        let p0 = pick(1, PLACES.len());
        let p1 = (p0 + 1 + pick(2, PLACES.len() - 1)) % PLACES.len();
        let mut p2 = (p1 + 1) % PLACES.len();
        if p2 == p0 {
            p2 = (p2 + 1) % PLACES.len();
        }
        let i0 = pick(3, ITEMS.len());
        World {
            behavior: Behavior::for_persona(description),
            places: [PLACES[p0], PLACES[p1], PLACES[p2]],
            item: ITEMS[i0],
            decoy: ITEMS[(i0 + 1) % ITEMS.len()],
        }
    }

    /// Recovers the world from a script this model wrote.
    fn from_script(script: &Script) -> Option<World> {
        let variant: usize = script.thought.rsplit("variant ").next()?.trim_end_matches('.').parse().ok()?;
        let places = &script.actions.get("go to {place}")?.parameters["place"];
        let items = &script.actions.get("take {obj}")?.parameters["obj"];
        let find = |list: &[&'static str], s: &str| list.iter().copied().find(|p| *p == s);
        Some(World {
            behavior: *Behavior::ALL.get(variant)?,
            places: [
                find(&PLACES, places.first()?)?,
                find(&PLACES, places.get(1)?)?,
                find(&PLACES, places.get(2)?)?,
            ],
            item: find(&ITEMS, items.first()?)?,
            decoy: find(&ITEMS, items.get(1)?)?,
        })
    }

    fn script(&self, persona: &str, broken: bool) -> Value {
        let [a, b, c] = self.places;
        let (item, decoy) = (self.item, self.decoy);
        let go_code = if broken {
            "^go to (nowhere)$".to_owned()
        } else {
            format!("^go to ({a}|{b}|{c})$")
        };
        json!({
            "Thought": format!("A search task for someone described as: {persona} The {item} is in the {b}; a {decoy} in the {a} is a distraction. variant {}.", self.behavior.index()),
            "Environment": {
                "initial state": format!("You stand at a crossing. Paths lead to the {a}, the {b} and the {c}."),
                "places and objects": {
                    a: {"information": format!("The {a} is dusty. A {decoy} lies on a shelf."),
                        decoy: {"information": format!("An ordinary {decoy}.")}},
                    b: {"information": format!("The {b} is quiet. A {item} rests on a table."),
                        "Hidden detail": format!("The {item} is the one the player needs."),
                        item: {"information": format!("The {item} you were looking for.")}},
                    c: {"information": format!("The {c} is empty.")}
                },
                "player": {"information": "The player can hold any number of items."}
            },
            "Goal": format!("Find the {item} and take it."),
            "Completion Conditions": [format!("go to {b}"), format!("take {item}")],
            "Available Actions": {
                "go to {place}": {
                    "description": "Walk to a place.",
                    "verification code": go_code,
                    "parameters": {"place": [a, b, c]}
                },
                "take {obj}": {
                    "description": "Pick up an item that is here.",
                    "verification code": format!("^take ({item}|{decoy})$"),
                    "parameters": {"obj": [item, decoy]}
                },
                "examine {obj}": {
                    "description": "Look closely at an item.",
                    "verification code": format!("^examine ({item}|{decoy})$"),
                    "parameters": {"obj": [item, decoy]}
                }
            }
        })
    }

    /// The reference trajectory: wrong place, wrong phrasing, then success.
    /// `extra_error` inserts a third error turn; `single_error` drops one.
    fn turns(&self, extra_error: bool, single_error: bool) -> Vec<Value> {
        let [a, b, c] = self.places;
        let (item, decoy) = (self.item, self.decoy);
        let dm = |obs: String, flags: (bool, bool, bool), progress: f64, finished: bool| {
            json!({"role": "DM", "Thought": "", "Observation": obs,
                   "parameter_error": flags.0, "place_error": flags.1, "logic_error": flags.2,
                   "progress_rate": progress, "finished": finished})
        };
        let player = |thought: &str, action: String| json!({"role": "Player", "Thought": thought, "Action": action});
        let clean = (false, false, false);
        let mut t = vec![
            dm(format!("You stand at a crossing. Paths lead to the {a}, the {b} and the {c}. Find the {item}."), clean, 0.0, false),
            player("Items are often kept in dusty rooms.", format!("go to {a}")),
            dm(format!("You are in the {a}. A {decoy} lies on a shelf."), clean, 0.0, false),
            player("Maybe it is here.", format!("take {item}")),
            dm(format!("There is no {item} in the {a}."), (false, true, false), 0.0, false),
            player(&format!("The {item} must be elsewhere; the {b} is worth a look."), format!("go to {b}")),
            dm(format!("You are in the {b}. A {item} rests on a table."), clean, 0.5, false),
        ];
        if !single_error {
            t.push(player("There it is.", format!("take the {item}")));
            t.push(dm("That action is not available here.".into(), (true, false, false), 0.5, false));
        }
        if extra_error {
            t.push(player("Let me try again.", format!("grab {item}")));
            t.push(dm("That action is not available here.".into(), (true, false, false), 0.5, false));
        }
        t.push(player("I should use the exact action form.", format!("take {item}")));
        t.push(dm(format!("You take the {item}. Task Succeed."), clean, 1.0, true));
        for (i, v) in t.iter_mut().enumerate() {
            let obj = v.as_object_mut().expect("turn object");
            let mut numbered = serde_json::Map::new();
            numbered.insert("turn".into(), json!(i));
            numbered.extend(std::mem::take(obj));
            *obj = numbered;
        }
        t
    }

    fn trajectory(&self, from: usize, first_round: bool) -> String {
        let turns = match self.behavior {
            Behavior::ThreeErrors | Behavior::Unfinished => self.turns(true, false),
            Behavior::AlwaysOneError => self.turns(false, true),
            _ => self.turns(false, false),
        };
        let from = from.min(turns.len());
        let body = |ts: &[Value]| serde_json::to_string_pretty(&Value::Array(ts.to_vec())).expect("json");
        if !first_round {
            return body(&turns[from..]);
        }
        match self.behavior {
            Behavior::JsonErrorThenContinue => {
                let good = body(&turns[..4]);
                let broken = serde_json::to_string_pretty(&turns[4]).expect("json").replacen("false", "fals", 1);
                format!("{},\n{}\n]", good.trim_end_matches(']').trim_end().trim_end_matches(','), broken)
            }
            Behavior::UnflaggedUnmatched => {
                let mut t = turns;
                t[8]["parameter_error"] = json!(false);
                t[8]["Observation"] = json!("You reach for it.");
                body(&t)
            }
            Behavior::Unfinished => {
                let mut t = turns;
                let last = t.len() - 1;
                t[last]["Observation"] = json!(format!("Your hand closes on the {}.", self.item));
                t[last]["progress_rate"] = json!(0.5);
                t[last]["finished"] = json!(false);
                body(&t)
            }
            _ => body(&turns),
        }
    }
}

const CONTINUE_MARK: &str = "only the turns numbered ";

/// See the module docs.
#[derive(Debug, Clone, Copy, Default)]
pub struct SyntheticModel;

impl SyntheticModel {
    fn answer(request: &ChatRequest) -> Result<String, TransportError> {
        let bad = |m: &str| TransportError::Response(format!("synthetic model: {m}"));
        let last = request
            .messages
            .iter()
            .rev()
            .find(|m| m.role == ChatRole::User)
            .ok_or_else(|| bad("no user message"))?;
        let text = last.content.as_str();

        if let Some(rest) = text.strip_prefix("Persona: ") {
            let persona = rest.split("\n\n").next().unwrap_or(rest);
            let world = World::for_persona(persona);
            let broken = match world.behavior {
                Behavior::BrokenScript => true,
                Behavior::ScriptRetry => !rest.contains("was rejected"),
                _ => false,
            };
            return Ok(serde_json::to_string_pretty(&world.script(persona, broken)).expect("json"));
        }

        let start = text.find('{').ok_or_else(|| bad("no script in prompt"))?;
        let end = json::balanced_end(text, start).ok_or_else(|| bad("unbalanced script"))?;
        let script = parse_script(&text[start..end]).map_err(|e| bad(&e.to_string()))?;
        let world = World::from_script(&script).ok_or_else(|| bad("script was not written by this model"))?;
        match text.find(CONTINUE_MARK) {
            Some(i) => {
                let n: usize = text[i + CONTINUE_MARK.len()..]
                    .split(' ')
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| bad("continuation turn number"))?;
                Ok(world.trajectory(n, false))
            }
            None => Ok(world.trajectory(0, true)),
        }
    }
}

impl ChatClient for SyntheticModel {
    fn complete(&self, request: &ChatRequest) -> Result<String, TransportError> {
        Self::answer(request)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worlds_have_distinct_places_and_items() {
        for i in 0..200 {
            let w = World::for_persona(&format!("persona {i}"));
            assert!(w.places[0] != w.places[1] && w.places[1] != w.places[2] && w.places[0] != w.places[2]);
            assert_ne!(w.item, w.decoy);
        }
    }

    #[test]
    fn every_behavior_occurs() {
        let mut seen = std::collections::HashSet::new();
        for i in 0..200 {
            seen.insert(Behavior::for_persona(&format!("persona {i}")));
        }
        assert_eq!(seen.len(), Behavior::ALL.len());
    }
}
