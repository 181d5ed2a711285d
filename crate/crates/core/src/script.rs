//! Script schema: the world definition a generator model emits for a persona.
//!
//! The JSON form uses the generation format's literal key names
//! (`"verification code"`, `"Available Actions"`, ...), so scripts copied
//! from model output parse without renaming.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::{OnceLock, RwLock};

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::json::{self, ExtractError, JsonKind};
use crate::template::Template;

/// A persona that seeds one script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    #[serde(rename = "persona")]
    pub description: String,
}

impl Persona {
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Result<Self, String> {
        let description = description.into();
        if description.trim().is_empty() {
            return Err("persona description is empty".into());
        }
        Ok(Persona {
            id: id.into(),
            description,
        })
    }
}

/// A DM-only fact attached to a node. The key is itself free text in the
/// generation format, so both halves are kept.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DmNote {
    pub key: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct EnvironmentNode {
    /// Empty for the root (`"places and objects"`).
    pub name: String,
    /// Shown to the player when the node is examined.
    pub information: Option<String>,
    pub dm_notes: Vec<DmNote>,
    /// Location relative to the parent node.
    pub location: Option<String>,
    pub relative_locations: Option<Vec<String>>,
    pub children: Vec<EnvironmentNode>,
}

impl EnvironmentNode {
    /// Depth-first search by exact name.
    pub fn find(&self, name: &str) -> Option<&EnvironmentNode> {
        if self.name == name {
            return Some(self);
        }
        self.children.iter().find_map(|c| c.find(name))
    }

    pub fn walk<'a>(&'a self, visit: &mut impl FnMut(&'a EnvironmentNode)) {
        visit(self);
        for c in &self.children {
            c.walk(visit);
        }
    }

    fn walk_mut(&mut self, visit: &mut impl FnMut(&mut EnvironmentNode)) {
        visit(self);
        for c in &mut self.children {
            c.walk_mut(visit);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActionSpec {
    /// Template such as `go to {place}`.
    pub name: String,
    pub description: Option<String>,
    pub special_format: Option<String>,
    pub verification_code: String,
    pub parameters: IndexMap<String, Vec<String>>,
    /// Unverifiable actions (free-text answers, code edits) skip parameter
    /// checks entirely.
    pub verifiable: bool,
}

impl ActionSpec {
    pub fn template(&self) -> Template {
        Template::parse(&self.name)
    }

    /// Actions with a `special format` are free-form by default.
    fn default_verifiable(special_format: &Option<String>) -> bool {
        special_format.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Script {
    pub thought: String,
    pub initial_state: String,
    pub environment: EnvironmentNode,
    pub player_info: String,
    pub goal: String,
    pub completion_conditions: Vec<String>,
    /// Keyed by `ActionSpec::name`, in declaration order.
    pub actions: IndexMap<String, ActionSpec>,
}

impl Script {
    pub fn action_specs(&self) -> impl Iterator<Item = &ActionSpec> {
        self.actions.values()
    }

    /// Applies `f` to every string a player or DM could read in the world
    /// (initial state, goal, conditions, node names and texts).
    pub(crate) fn map_world_text(&mut self, mut f: impl FnMut(&str) -> String) {
        self.initial_state = f(&self.initial_state);
        self.goal = f(&self.goal);
        self.player_info = f(&self.player_info);
        for c in &mut self.completion_conditions {
            *c = f(c);
        }
        self.environment.walk_mut(&mut |node| {
            node.name = f(&node.name);
            if let Some(i) = node.information.as_mut() {
                *i = f(i);
            }
            if let Some(l) = node.location.as_mut() {
                *l = f(l);
            }
            if let Some(rel) = node.relative_locations.as_mut() {
                for r in rel {
                    *r = f(r);
                }
            }
            for note in &mut node.dm_notes {
                note.key = f(&note.key);
                note.text = f(&note.text);
            }
        });
    }
}

// ---------------------------------------------------------------------------
// Errors and violations
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptParseError {
    #[error("no JSON object found")]
    NoJsonFound,
    #[error("JSON syntax error at byte {offset} (line {line}, column {column}): {message}")]
    JsonSyntax {
        offset: usize,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("output contains more than one JSON object")]
    AmbiguousJson,
    #[error("script schema violation: {}", .0.join("; "))]
    SchemaViolation(Vec<String>),
    #[error("verification code of action `{action}` does not compile: {message}")]
    RegexCompile { action: String, message: String },
}

impl From<ExtractError> for ScriptParseError {
    fn from(e: ExtractError) -> Self {
        match e {
            ExtractError::NoJsonFound => ScriptParseError::NoJsonFound,
            ExtractError::Syntax {
                offset,
                line,
                column,
                message,
                ..
            } => ScriptParseError::JsonSyntax {
                offset,
                line,
                column,
                message,
            },
            ExtractError::Ambiguous { .. } => ScriptParseError::AmbiguousJson,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    /// The first-value instantiation of the template is rejected by its own
    /// verification code.
    SelfMatchFailure { action: String, instance: String },
    MissingParameterValues { action: String, placeholder: String },
    RegexCompile { action: String, message: String },
    ActionKeyMismatch { key: String, name: String },
    DuplicateSibling { parent: String, name: String },
    EmptyGoal,
    NoCompletionConditions,
    NoActions,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::SelfMatchFailure { action, instance } => write!(
                f,
                "action `{action}`: its verification code does not match `{instance}`"
            ),
            Violation::MissingParameterValues {
                action,
                placeholder,
            } => write!(
                f,
                "action `{action}`: placeholder `{{{placeholder}}}` has no allowed values"
            ),
            Violation::RegexCompile { action, message } => {
                write!(f, "action `{action}`: verification code does not compile: {message}")
            }
            Violation::ActionKeyMismatch { key, name } => {
                write!(f, "action stored under `{key}` is named `{name}`")
            }
            Violation::DuplicateSibling { parent, name } => {
                write!(f, "duplicate node `{name}` under `{parent}`")
            }
            Violation::EmptyGoal => f.write_str("goal is empty"),
            Violation::NoCompletionConditions => f.write_str("no completion conditions"),
            Violation::NoActions => f.write_str("no available actions"),
        }
    }
}

// ---------------------------------------------------------------------------
// Verification codes
// ---------------------------------------------------------------------------

fn code_cache() -> &'static RwLock<HashMap<String, Regex>> {
    static CACHE: OnceLock<RwLock<HashMap<String, Regex>>> = OnceLock::new();
    CACHE.get_or_init(Default::default)
}

/// Compiles a verification code so that it must match the whole action
/// string. Results are cached process-wide.
pub fn compile_verification_code(code: &str) -> Result<Regex, regex::Error> {
    if let Some(re) = code_cache().read().expect("regex cache poisoned").get(code) {
        return Ok(re.clone());
    }
    let re = Regex::new(&format!("^(?:{code})$"))?;
    code_cache()
        .write()
        .expect("regex cache poisoned")
        .insert(code.to_owned(), re.clone());
    Ok(re)
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Issues(Vec<String>);

impl Issues {
    fn string(&mut self, obj: &Map<String, Value>, key: &str, path: &str) -> Option<String> {
        match obj.get(key) {
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.0.push(format!("{path}\"{key}\" must be a string"));
                None
            }
            None => {
                self.0.push(format!("{path}\"{key}\" is missing"));
                None
            }
        }
    }

    fn opt_string(&mut self, obj: &Map<String, Value>, key: &str, path: &str) -> Option<String> {
        match obj.get(key) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.clone()),
            Some(_) => {
                self.0.push(format!("{path}\"{key}\" must be a string"));
                None
            }
        }
    }

    fn object<'v>(
        &mut self,
        obj: &'v Map<String, Value>,
        key: &str,
        path: &str,
    ) -> Option<&'v Map<String, Value>> {
        match obj.get(key) {
            Some(Value::Object(m)) => Some(m),
            Some(_) => {
                self.0.push(format!("{path}\"{key}\" must be an object"));
                None
            }
            None => {
                self.0.push(format!("{path}\"{key}\" is missing"));
                None
            }
        }
    }

    fn string_list(&mut self, v: &Value, what: &str) -> Option<Vec<String>> {
        let Value::Array(items) = v else {
            self.0.push(format!("{what} must be a list of strings"));
            return None;
        };
        let mut out = Vec::with_capacity(items.len());
        for item in items {
            match item {
                Value::String(s) => out.push(s.clone()),
                _ => {
                    self.0.push(format!("{what} must contain only strings"));
                    return None;
                }
            }
        }
        Some(out)
    }
}

const NODE_INFORMATION: &str = "information";
const NODE_LOCATION: &str = "location";
const NODE_RELATIVE: &str = "relative location";

fn parse_node(name: &str, obj: &Map<String, Value>, path: &str, issues: &mut Issues) -> EnvironmentNode {
    let mut node = EnvironmentNode {
        name: name.to_owned(),
        ..Default::default()
    };
    for (key, value) in obj {
        let here = format!("{path}\"{key}\"");
        match key.as_str() {
            NODE_INFORMATION => match value {
                Value::String(s) => node.information = Some(s.clone()),
                _ => issues.0.push(format!("{here} must be a string")),
            },
            NODE_LOCATION => match value {
                Value::String(s) => node.location = Some(s.clone()),
                _ => issues.0.push(format!("{here} must be a string")),
            },
            NODE_RELATIVE => {
                node.relative_locations = issues.string_list(value, &here);
            }
            _ => match value {
                Value::Object(child) => {
                    let child_path = format!("{here}.");
                    node.children.push(parse_node(key, child, &child_path, issues));
                }
                Value::String(s) => node.dm_notes.push(DmNote {
                    key: key.clone(),
                    text: s.clone(),
                }),
                _ => issues
                    .0
                    .push(format!("{here} must be an object (child node) or a string (DM note)")),
            },
        }
    }
    node
}

fn parse_action(name: &str, obj: &Map<String, Value>, issues: &mut Issues) -> Option<ActionSpec> {
    let path = format!("\"Available Actions\".\"{name}\".");
    let description = issues.opt_string(obj, "description", &path);
    let special_format = issues.opt_string(obj, "special format", &path);
    let verification_code = issues.string(obj, "verification code", &path);
    let mut parameters = IndexMap::new();
    match obj.get("parameters") {
        None | Some(Value::Null) => {}
        Some(Value::Object(m)) => {
            for (p, v) in m {
                let what = format!("{path}\"parameters\".\"{p}\"");
                if let Some(list) = issues.string_list(v, &what) {
                    parameters.insert(p.clone(), list);
                }
            }
        }
        Some(_) => issues.0.push(format!("{path}\"parameters\" must be an object")),
    }
    let verifiable = match obj.get("verifiable") {
        None => ActionSpec::default_verifiable(&special_format),
        Some(Value::Bool(b)) => *b,
        Some(_) => {
            issues.0.push(format!("{path}\"verifiable\" must be a boolean"));
            true
        }
    };
    let spec = ActionSpec {
        name: name.to_owned(),
        description,
        special_format,
        verification_code: verification_code?,
        parameters,
        verifiable,
    };
    if spec.verifiable {
        for p in spec.template().placeholders() {
            if spec.parameters.get(p).is_none_or(|v| v.is_empty()) {
                issues
                    .0
                    .push(format!("{path}placeholder {{{p}}} has no allowed values"));
            }
        }
    }
    Some(spec)
}

/// Builds a [`Script`] from an already parsed JSON value.
pub fn script_from_value(value: &Value) -> Result<Script, ScriptParseError> {
    let Value::Object(root) = value else {
        return Err(ScriptParseError::SchemaViolation(vec![
            "script must be a JSON object".into(),
        ]));
    };
    let mut issues = Issues(Vec::new());
    let thought = issues.string(root, "Thought", "");
    let env = issues.object(root, "Environment", "");
    let mut initial_state = None;
    let mut environment = None;
    let mut player_info = None;
    if let Some(env) = env {
        initial_state = issues.string(env, "initial state", "\"Environment\".");
        if let Some(places) = issues.object(env, "places and objects", "\"Environment\".") {
            environment = Some(parse_node(
                "",
                places,
                "\"Environment\".\"places and objects\".",
                &mut issues,
            ));
        }
        if let Some(player) = issues.object(env, "player", "\"Environment\".") {
            player_info = issues.string(player, "information", "\"Environment\".\"player\".");
        }
    }
    let goal = issues.string(root, "Goal", "");
    if goal.as_deref().is_some_and(|g| g.trim().is_empty()) {
        issues.0.push("\"Goal\" is empty".into());
    }
    let completion_conditions = match root.get("Completion Conditions") {
        Some(v) => issues.string_list(v, "\"Completion Conditions\""),
        None => {
            issues.0.push("\"Completion Conditions\" is missing".into());
            None
        }
    };
    if completion_conditions.as_ref().is_some_and(Vec::is_empty) {
        issues.0.push("\"Completion Conditions\" is empty".into());
    }
    let mut actions = IndexMap::new();
    if let Some(map) = issues.object(root, "Available Actions", "") {
        if map.is_empty() {
            issues.0.push("\"Available Actions\" is empty".into());
        }
        for (name, v) in map {
            match v {
                Value::Object(obj) => {
                    if let Some(spec) = parse_action(name, obj, &mut issues) {
                        actions.insert(name.clone(), spec);
                    }
                }
                _ => issues
                    .0
                    .push(format!("\"Available Actions\".\"{name}\" must be an object")),
            }
        }
    }
    if !issues.0.is_empty() {
        return Err(ScriptParseError::SchemaViolation(issues.0));
    }
    let script = Script {
        thought: thought.unwrap_or_default(),
        initial_state: initial_state.unwrap_or_default(),
        environment: environment.unwrap_or_default(),
        player_info: player_info.unwrap_or_default(),
        goal: goal.unwrap_or_default(),
        completion_conditions: completion_conditions.unwrap_or_default(),
        actions,
    };
    for spec in script.action_specs() {
        if let Err(e) = compile_verification_code(&spec.verification_code) {
            return Err(ScriptParseError::RegexCompile {
                action: spec.name.clone(),
                message: e.to_string(),
            });
        }
    }
    Ok(script)
}

/// Extracts and parses a script from raw model output.
pub fn parse_script(text: &str) -> Result<Script, ScriptParseError> {
    let value = json::extract(text, JsonKind::Object)?;
    script_from_value(&value)
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

fn check_siblings(node: &EnvironmentNode, out: &mut Vec<Violation>) {
    let mut seen = HashSet::new();
    for c in &node.children {
        if !seen.insert(c.name.as_str()) {
            out.push(Violation::DuplicateSibling {
                parent: node.name.clone(),
                name: c.name.clone(),
            });
        }
        check_siblings(c, out);
    }
}

/// Returns every problem with `script`; an empty list means it is usable.
pub fn validate_script(script: &Script) -> Vec<Violation> {
    let mut out = Vec::new();
    if script.goal.trim().is_empty() {
        out.push(Violation::EmptyGoal);
    }
    if script.completion_conditions.is_empty() {
        out.push(Violation::NoCompletionConditions);
    }
    if script.actions.is_empty() {
        out.push(Violation::NoActions);
    }
    check_siblings(&script.environment, &mut out);
    for (key, spec) in &script.actions {
        if key != &spec.name {
            out.push(Violation::ActionKeyMismatch {
                key: key.clone(),
                name: spec.name.clone(),
            });
        }
        let re = match compile_verification_code(&spec.verification_code) {
            Ok(re) => re,
            Err(e) => {
                out.push(Violation::RegexCompile {
                    action: spec.name.clone(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        if !spec.verifiable {
            continue;
        }
        let template = spec.template();
        let mut complete = true;
        for p in template.placeholders() {
            if spec.parameters.get(p).is_none_or(|v| v.is_empty()) {
                complete = false;
                out.push(Violation::MissingParameterValues {
                    action: spec.name.clone(),
                    placeholder: p.to_owned(),
                });
            }
        }
        if !complete {
            continue;
        }
        let instance = template
            .first_instance(&spec.parameters)
            .expect("all placeholders have values");
        if !re.is_match(&instance) {
            out.push(Violation::SelfMatchFailure {
                action: spec.name.clone(),
                instance,
            });
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

fn node_to_value(node: &EnvironmentNode) -> Value {
    let mut m = Map::new();
    if let Some(i) = &node.information {
        m.insert(NODE_INFORMATION.into(), Value::String(i.clone()));
    }
    if let Some(l) = &node.location {
        m.insert(NODE_LOCATION.into(), Value::String(l.clone()));
    }
    if let Some(r) = &node.relative_locations {
        m.insert(
            NODE_RELATIVE.into(),
            Value::Array(r.iter().cloned().map(Value::String).collect()),
        );
    }
    for note in &node.dm_notes {
        m.insert(note.key.clone(), Value::String(note.text.clone()));
    }
    for c in &node.children {
        m.insert(c.name.clone(), node_to_value(c));
    }
    Value::Object(m)
}

/// Canonical JSON value with a fixed key order.
pub fn script_to_value(script: &Script) -> Value {
    let mut env = Map::new();
    env.insert("initial state".into(), Value::String(script.initial_state.clone()));
    env.insert("places and objects".into(), node_to_value(&script.environment));
    let mut player = Map::new();
    player.insert("information".into(), Value::String(script.player_info.clone()));
    env.insert("player".into(), Value::Object(player));

    let mut actions = Map::new();
    for spec in script.action_specs() {
        let mut a = Map::new();
        if let Some(d) = &spec.description {
            a.insert("description".into(), Value::String(d.clone()));
        }
        if let Some(s) = &spec.special_format {
            a.insert("special format".into(), Value::String(s.clone()));
        }
        a.insert(
            "verification code".into(),
            Value::String(spec.verification_code.clone()),
        );
        let params: Map<String, Value> = spec
            .parameters
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    Value::Array(v.iter().cloned().map(Value::String).collect()),
                )
            })
            .collect();
        a.insert("parameters".into(), Value::Object(params));
        if spec.verifiable != ActionSpec::default_verifiable(&spec.special_format) {
            a.insert("verifiable".into(), Value::Bool(spec.verifiable));
        }
        actions.insert(spec.name.clone(), Value::Object(a));
    }

    let mut root = Map::new();
    root.insert("Thought".into(), Value::String(script.thought.clone()));
    root.insert("Environment".into(), Value::Object(env));
    root.insert("Goal".into(), Value::String(script.goal.clone()));
    root.insert(
        "Completion Conditions".into(),
        Value::Array(
            script
                .completion_conditions
                .iter()
                .cloned()
                .map(Value::String)
                .collect(),
        ),
    );
    root.insert("Available Actions".into(), Value::Object(actions));
    Value::Object(root)
}

/// Pretty-printed canonical JSON, newline terminated.
pub fn serialize_script(script: &Script) -> String {
    let mut s = serde_json::to_string_pretty(&script_to_value(script))
        .expect("script values are always serializable");
    s.push('\n');
    s
}

impl Serialize for Script {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        script_to_value(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Script {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let value = Value::deserialize(d)?;
        script_from_value(&value).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "Thought": "t",
        "Environment": {
            "initial state": "You are in a hall.",
            "places and objects": {
                "hall": {"information": "A hall.", "secret": "DM only", "box": {"location": "on the floor"}},
                "kitchen": {},
                "relative location": ["the kitchen is north of the hall"]
            },
            "player": {"information": "You can carry one item."}
        },
        "Goal": "Go to the kitchen.",
        "Completion Conditions": ["The player goes to kitchen."],
        "Available Actions": {
            "go to {place}": {
                "description": "Move.",
                "verification code": "^go to (kitchen|hall)$",
                "parameters": {"place": ["kitchen", "hall"]}
            }
        }
    }"#;

    #[test]
    fn parses_minimal_script() {
        let s = parse_script(MINIMAL).unwrap();
        assert_eq!(s.actions.len(), 1);
        assert_eq!(s.completion_conditions.len(), 1);
        let hall = s.environment.find("hall").unwrap();
        assert_eq!(hall.information.as_deref(), Some("A hall."));
        assert_eq!(
            hall.dm_notes,
            vec![DmNote {
                key: "secret".into(),
                text: "DM only".into()
            }]
        );
        assert_eq!(hall.children[0].location.as_deref(), Some("on the floor"));
        assert_eq!(
            s.environment.relative_locations.as_deref(),
            Some(&["the kitchen is north of the hall".to_string()][..])
        );
        assert!(validate_script(&s).is_empty());
    }

    #[test]
    fn fenced_equals_bare() {
        let fenced = format!("Here is my script.\n```json\n{MINIMAL}\n```\n");
        assert_eq!(parse_script(&fenced).unwrap(), parse_script(MINIMAL).unwrap());
    }

    #[test]
    fn missing_keys_are_all_reported() {
        let err = parse_script(r#"{"Thought": "x", "Goal": 3}"#).unwrap_err();
        let ScriptParseError::SchemaViolation(list) = err else {
            panic!("expected schema violation");
        };
        assert!(list.iter().any(|m| m.contains("\"Environment\" is missing")));
        assert!(list.iter().any(|m| m.contains("\"Goal\" must be a string")));
        assert!(list.iter().any(|m| m.contains("\"Completion Conditions\" is missing")));
        assert!(list.iter().any(|m| m.contains("\"Available Actions\" is missing")));
    }

    #[test]
    fn bad_regex_is_reported_by_action() {
        let text = MINIMAL.replace("^go to (kitchen|hall)$", "^go to (kitchen$");
        assert!(matches!(
            parse_script(&text),
            Err(ScriptParseError::RegexCompile { action, .. }) if action == "go to {place}"
        ));
    }

    #[test]
    fn lookaround_is_outside_the_dialect() {
        let text = MINIMAL.replace("^go to (kitchen|hall)$", "^go to (?=k)(kitchen|hall)$");
        assert!(matches!(parse_script(&text), Err(ScriptParseError::RegexCompile { .. })));
    }

    #[test]
    fn duplicate_sibling_rejected_at_parse() {
        let text = MINIMAL.replace("\"kitchen\": {},", "\"kitchen\": {}, \"kitchen\": {},");
        assert!(matches!(parse_script(&text), Err(ScriptParseError::JsonSyntax { .. })));
    }

    #[test]
    fn self_match_failure() {
        let text = MINIMAL.replace("^go to (kitchen|hall)$", "^move to (kitchen)$");
        let s = parse_script(&text).unwrap();
        assert_eq!(
            validate_script(&s),
            vec![Violation::SelfMatchFailure {
                action: "go to {place}".into(),
                instance: "go to kitchen".into()
            }]
        );
    }

    #[test]
    fn unverifiable_action_skips_parameter_checks() {
        let mut s = parse_script(MINIMAL).unwrap();
        s.actions.insert(
            "answer {text}".into(),
            ActionSpec {
                name: "answer {text}".into(),
                description: None,
                special_format: Some("answer <text>".into()),
                verification_code: "^answer .+$".into(),
                parameters: IndexMap::new(),
                verifiable: false,
            },
        );
        assert!(validate_script(&s).is_empty());
        let back = parse_script(&serialize_script(&s)).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn verifiable_placeholder_without_values_fails_parse() {
        let text = MINIMAL.replace(r#""parameters": {"place": ["kitchen", "hall"]}"#, r#""parameters": {}"#);
        let err = parse_script(&text).unwrap_err();
        assert!(matches!(err, ScriptParseError::SchemaViolation(v) if v[0].contains("{place}")));
    }

    #[test]
    fn hand_built_violations() {
        let mut s = parse_script(MINIMAL).unwrap();
        s.goal = "  ".into();
        s.completion_conditions.clear();
        s.environment.children.push(EnvironmentNode {
            name: "hall".into(),
            ..Default::default()
        });
        let v = validate_script(&s);
        assert!(v.contains(&Violation::EmptyGoal));
        assert!(v.contains(&Violation::NoCompletionConditions));
        assert!(v.contains(&Violation::DuplicateSibling {
            parent: String::new(),
            name: "hall".into()
        }));
    }

    #[test]
    fn serialization_is_canonical_and_round_trips() {
        let s = parse_script(MINIMAL).unwrap();
        let a = serialize_script(&s);
        let b = serialize_script(&s);
        assert_eq!(a, b);
        assert_eq!(parse_script(&a).unwrap(), s);
        let top: Vec<String> = match script_to_value(&s) {
            Value::Object(m) => m.keys().cloned().collect(),
            _ => unreachable!(),
        };
        assert_eq!(
            top,
            ["Thought", "Environment", "Goal", "Completion Conditions", "Available Actions"]
        );
    }

    #[test]
    fn unicode_names_round_trip() {
        let text = MINIMAL
            .replace("\"box\"", "\"café ☕ 箱\"")
            .replace("kitchen", "küche");
        let s = parse_script(&text).unwrap();
        assert!(s.environment.find("café ☕ 箱").is_some());
        assert_eq!(parse_script(&serialize_script(&s)).unwrap(), s);
    }
}
