//! Surface rewrites of action templates that keep their meaning, plus a
//! corpus filter for dropping in-domain records.
//!
//! Verification codes of rewritten actions are rebuilt from the new template
//! and the allowed parameter lists; the original regex is never edited.

use std::collections::BTreeSet;
use std::sync::OnceLock;

use indexmap::IndexMap;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::DatasetRecord;
use crate::script::{compile_verification_code, validate_script, ActionSpec, Script, Violation};
use crate::template::{Segment, Template};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum PerturbationRule {
    /// Replace a whole word in the literal text of a template.
    SynonymSwap { from: String, to: String },
    /// Replace the leading verb phrase of a template.
    VerbRename { from: String, to: String },
    /// Replace one exact template by a permutation of its placeholders.
    ArgReorder { from: String, to: String },
    /// Join item names to their numbers (`lamp 1` becomes `lamp1`).
    WhitespaceSquash,
    /// Drop records attributed to any of these environments.
    IndFilter { envs: BTreeSet<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PerturbError {
    #[error("rule {rule} does not apply to `{action}`")]
    RuleNotApplicable { rule: String, action: String },
    #[error("rule {0} is malformed: {1}")]
    InvalidRule(String, String),
    #[error("rewritten action `{action}` has an unusable pattern: {message}")]
    RegexRewriteFailure { action: String, message: String },
    #[error("rewrite produces duplicate action `{0}`")]
    DuplicateAction(String),
    #[error("perturbed script is invalid: {0:?}")]
    Invalid(Vec<Violation>),
}

impl PerturbationRule {
    fn label(&self) -> String {
        match self {
            PerturbationRule::SynonymSwap { from, to } => format!("SynonymSwap({from} -> {to})"),
            PerturbationRule::VerbRename { from, to } => format!("VerbRename({from} -> {to})"),
            PerturbationRule::ArgReorder { from, to } => format!("ArgReorder({from} -> {to})"),
            PerturbationRule::WhitespaceSquash => "WhitespaceSquash".into(),
            PerturbationRule::IndFilter { .. } => "IndFilter".into(),
        }
    }

    /// Checks payload invariants.
    pub fn check(&self) -> Result<(), PerturbError> {
        let bad = |m: &str| Err(PerturbError::InvalidRule(self.label(), m.to_owned()));
        match self {
            PerturbationRule::SynonymSwap { from, to } => {
                if from.trim().is_empty() || from == to {
                    return bad("source and target must be distinct non-empty words");
                }
                if replace_word(to, from, to) != *to {
                    return bad("target contains the source word");
                }
            }
            PerturbationRule::VerbRename { from, to } => {
                if from.trim().is_empty() || to.trim().is_empty() || from == to {
                    return bad("source and target must be distinct non-empty phrases");
                }
                if to.contains('{') || from.contains('{') {
                    return bad("verb phrases cannot contain placeholders");
                }
            }
            PerturbationRule::ArgReorder { from, to } => {
                let (ft, tt) = (Template::parse(from), Template::parse(to));
                let mut a = ft.placeholder_occurrences();
                let mut b = tt.placeholder_occurrences();
                a.sort_unstable();
                b.sort_unstable();
                if a != b || from == to {
                    return bad("target must permute exactly the source placeholders");
                }
            }
            PerturbationRule::WhitespaceSquash | PerturbationRule::IndFilter { .. } => {}
        }
        Ok(())
    }
}

pub fn load_rules(text: &str) -> Result<Vec<PerturbationRule>, serde_json::Error> {
    serde_json::from_str(text)
}

fn word_regex(word: &str) -> Regex {
    Regex::new(&format!(r"\b{}\b", regex::escape(word))).expect("escaped word is a valid pattern")
}

fn replace_word(text: &str, from: &str, to: &str) -> String {
    word_regex(from)
        .replace_all(text, regex::NoExpand(to))
        .into_owned()
}

fn squash_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"([A-Za-z]) +(\d+)").expect("static pattern"))
}

fn squash(text: &str) -> String {
    squash_regex().replace_all(text, "$1$2").into_owned()
}

fn map_literals(template: &Template, mut f: impl FnMut(&str) -> String) -> String {
    let mut out = String::new();
    for seg in template.segments() {
        match seg {
            Segment::Literal(l) => out.push_str(&f(l)),
            Segment::Placeholder(p) => {
                out.push('{');
                out.push_str(p);
                out.push('}');
            }
        }
    }
    out
}

fn rewrite_name(spec: &ActionSpec, rule: &PerturbationRule) -> Option<String> {
    let name = &spec.name;
    match rule {
        PerturbationRule::SynonymSwap { from, to } => {
            let new = map_literals(&spec.template(), |l| replace_word(l, from, to));
            (new != *name).then_some(new)
        }
        PerturbationRule::VerbRename { from, to } => {
            let rest = name.strip_prefix(from.as_str())?;
            (rest.is_empty() || rest.starts_with(' ')).then(|| format!("{to}{rest}"))
        }
        PerturbationRule::ArgReorder { from, to } => (name == from).then(|| to.clone()),
        PerturbationRule::WhitespaceSquash => {
            let new = map_literals(&spec.template(), squash);
            (new != *name).then_some(new)
        }
        PerturbationRule::IndFilter { .. } => None,
    }
}

fn rebuild_code(spec: &mut ActionSpec) -> Result<(), PerturbError> {
    spec.verification_code = spec.template().to_regex_source(&spec.parameters);
    compile_verification_code(&spec.verification_code).map_err(|e| {
        PerturbError::RegexRewriteFailure {
            action: spec.name.clone(),
            message: e.to_string(),
        }
    })?;
    Ok(())
}

/// Rewrites one action spec. Parameters are left alone except under
/// `WhitespaceSquash`, which also joins parameter values.
pub fn perturb_action_spec(
    spec: &ActionSpec,
    rule: &PerturbationRule,
) -> Result<ActionSpec, PerturbError> {
    rule.check()?;
    let not_applicable = || PerturbError::RuleNotApplicable {
        rule: rule.label(),
        action: spec.name.clone(),
    };
    let mut out = spec.clone();
    if let PerturbationRule::WhitespaceSquash = rule {
        let mut changed = false;
        for values in out.parameters.values_mut() {
            for v in values.iter_mut() {
                let s = squash(v);
                changed |= s != *v;
                *v = s;
            }
        }
        if let Some(name) = rewrite_name(spec, rule) {
            out.name = name;
            changed = true;
        }
        if !changed {
            return Err(not_applicable());
        }
    } else {
        out.name = rewrite_name(spec, rule).ok_or_else(not_applicable)?;
    }
    rebuild_code(&mut out)?;
    Ok(out)
}

/// Every assignment of allowed values to `names`, up to `limit`.
fn assignments<'a>(
    names: &[&'a str],
    params: &'a IndexMap<String, Vec<String>>,
    limit: usize,
) -> Vec<Vec<(&'a str, &'a str)>> {
    let mut out: Vec<Vec<(&str, &str)>> = vec![Vec::new()];
    for n in names {
        let Some(values) = params.get(*n).filter(|v| !v.is_empty()) else {
            return Vec::new();
        };
        let mut next = Vec::new();
        'outer: for partial in &out {
            for v in values {
                if next.len() >= limit {
                    break 'outer;
                }
                let mut a = partial.clone();
                a.push((*n, v.as_str()));
                next.push(a);
            }
        }
        out = next;
    }
    out
}

const CONDITION_INSTANCE_LIMIT: usize = 10_000;

/// Rewrites instantiations of `old` in `text` as the matching instantiation
/// of `new`, longest instantiations first.
fn rewrite_instances(text: &str, old: &ActionSpec, new: &ActionSpec) -> String {
    let old_t = old.template();
    let new_t = new.template();
    let names = old_t.placeholders();
    let mut pairs: Vec<(String, String)> = assignments(&names, &old.parameters, CONDITION_INSTANCE_LIMIT)
        .into_iter()
        .filter_map(|a| {
            let o = old_t.instantiate(|p| a.iter().find(|(n, _)| *n == p).map(|(_, v)| *v))?;
            let n = new_t.instantiate(|p| a.iter().find(|(n, _)| *n == p).map(|(_, v)| *v))?;
            Some((o, n))
        })
        .collect();
    if names.is_empty() {
        pairs.push((old.name.clone(), new.name.clone()));
    }
    pairs.sort_by(|a, b| b.0.len().cmp(&a.0.len()));
    let mut out = text.to_owned();
    for (o, n) in pairs {
        if out.contains(&o) {
            out = out.replace(&o, &n);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub script: Script,
    /// Original names of rewritten actions, in declaration order.
    pub changed: Vec<String>,
}

/// Applies `rules` in order. A rule that matches no action is a no-op.
pub fn perturb_script(script: &Script, rules: &[PerturbationRule]) -> Result<Perturbed, PerturbError> {
    let mut current = script.clone();
    let mut changed: BTreeSet<String> = BTreeSet::new();
    // Names so far, keyed by the current name.
    let mut origin: IndexMap<String, String> =
        script.actions.keys().map(|k| (k.clone(), k.clone())).collect();

    for rule in rules {
        rule.check()?;
        if let PerturbationRule::IndFilter { .. } = rule {
            return Err(PerturbError::RuleNotApplicable {
                rule: rule.label(),
                action: "<script>".into(),
            });
        }
        let mut actions = IndexMap::new();
        for (key, spec) in &current.actions {
            let new = match perturb_action_spec(spec, rule) {
                Ok(new) => new,
                Err(PerturbError::RuleNotApplicable { .. }) => spec.clone(),
                Err(e) => return Err(e),
            };
            if new != *spec {
                let root = origin.get(key).cloned().unwrap_or_else(|| key.clone());
                changed.insert(root.clone());
                origin.insert(new.name.clone(), root);
                if !matches!(rule, PerturbationRule::WhitespaceSquash) {
                    for c in &mut current.completion_conditions {
                        *c = rewrite_instances(c, spec, &new);
                    }
                }
            }
            if actions.insert(new.name.clone(), new.clone()).is_some() {
                return Err(PerturbError::DuplicateAction(new.name));
            }
        }
        current.actions = actions;
        if let PerturbationRule::WhitespaceSquash = rule {
            current.map_world_text(squash);
        }
    }

    let violations = validate_script(&current);
    if !violations.is_empty() {
        return Err(PerturbError::Invalid(violations));
    }
    let changed = script
        .actions
        .keys()
        .filter(|k| changed.contains(*k))
        .cloned()
        .collect();
    Ok(Perturbed {
        script: current,
        changed,
    })
}

/// Keeps records whose attributed environment is not in `envs`. `classify`
/// returns `None` for records it cannot attribute; those are kept.
pub fn filter_ind<F>(records: Vec<DatasetRecord>, envs: &BTreeSet<String>, classify: F) -> Vec<DatasetRecord>
where
    F: Fn(&DatasetRecord) -> Option<String>,
{
    if envs.is_empty() {
        return records;
    }
    records
        .into_iter()
        .filter(|r| classify(r).is_none_or(|e| !envs.contains(&e)))
        .collect()
}
