//! Locating JSON payloads inside free-form model output.
//!
//! Models wrap their JSON in prose and Markdown fences. Extraction strips
//! fence lines, then scans for the first balanced value of the requested
//! kind that parses. A second parseable value of the same kind after it is
//! treated as ambiguous output rather than silently ignored.
//!
//! Parsing is strict about duplicate object keys: `serde_json` keeps the last
//! duplicate, which would hide sibling-name collisions in environment trees.

use std::fmt;

use serde::de::{self, Deserialize, Deserializer, MapAccess, SeqAccess, Visitor};
use serde_json::{Map, Number, Value};
use thiserror::Error;

/// Top-level shape to look for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JsonKind {
    Object,
    Array,
}

impl JsonKind {
    fn open(self) -> char {
        match self {
            JsonKind::Object => '{',
            JsonKind::Array => '[',
        }
    }

    fn matches(self, value: &Value) -> bool {
        match self {
            JsonKind::Object => value.is_object(),
            JsonKind::Array => value.is_array(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExtractError {
    #[error("no JSON value found in text")]
    NoJsonFound,
    /// `offset` is a byte offset into the fence-stripped text; `candidate_start`
    /// is where the failing candidate began.
    #[error("JSON syntax error at line {line}, column {column}: {message}")]
    Syntax {
        offset: usize,
        line: usize,
        column: usize,
        candidate_start: usize,
        message: String,
    },
    #[error("more than one JSON value found (second begins at byte {second_start})")]
    Ambiguous { second_start: usize },
}

/// A successfully located payload.
#[derive(Debug, Clone)]
pub struct Located {
    pub start: usize,
    pub end: usize,
    pub value: Value,
}

/// Drops every line whose first non-blank characters are a Markdown fence.
pub fn strip_fences(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for line in text.split_inclusive('\n') {
        if line.trim_start().starts_with("```") {
            continue;
        }
        out.push_str(line);
    }
    out
}

/// Finds the byte index one past the bracket that closes the one at `start`.
///
/// Returns `None` when the text ends first or a closing bracket of the wrong
/// type appears.
pub fn balanced_end(text: &str, start: usize) -> Option<usize> {
    let mut stack: Vec<u8> = Vec::new();
    let mut in_string = false;
    let mut escaped = false;
    for (i, b) in text.as_bytes()[start..].iter().copied().enumerate() {
        if in_string {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == b'"' {
                in_string = false;
            }
            continue;
        }
        match b {
            b'"' => in_string = true,
            b'{' => stack.push(b'}'),
            b'[' => stack.push(b']'),
            b'}' | b']' => {
                if stack.pop() != Some(b) {
                    return None;
                }
                if stack.is_empty() {
                    return Some(start + i + 1);
                }
            }
            _ => {}
        }
        if stack.is_empty() {
            // `start` did not point at a bracket.
            return None;
        }
    }
    None
}

/// Locates the single JSON value of `kind` in already fence-stripped text.
pub fn locate(cleaned: &str, kind: JsonKind) -> Result<Located, ExtractError> {
    let open = kind.open();
    let mut first_err: Option<ExtractError> = None;
    let mut pos = 0;
    let mut chosen: Option<Located> = None;

    while let Some(rel) = cleaned[pos..].find(open) {
        let start = pos + rel;
        match balanced_end(cleaned, start) {
            Some(end) => match parse_strict(&cleaned[start..end]) {
                Ok(value) if kind.matches(&value) => {
                    chosen = Some(Located { start, end, value });
                    break;
                }
                Ok(_) => pos = end,
                Err(e) => {
                    first_err.get_or_insert_with(|| syntax_error(cleaned, start, &e));
                    pos = end;
                }
            },
            None => {
                if let Err(e) = parse_strict(&cleaned[start..]) {
                    first_err.get_or_insert_with(|| syntax_error(cleaned, start, &e));
                }
                break;
            }
        }
    }

    let Some(found) = chosen else {
        return Err(first_err.unwrap_or(ExtractError::NoJsonFound));
    };

    let mut pos = found.end;
    while let Some(rel) = cleaned[pos..].find(open) {
        let start = pos + rel;
        let Some(end) = balanced_end(cleaned, start) else {
            break;
        };
        if let Ok(value) = parse_strict(&cleaned[start..end]) {
            if kind.matches(&value) {
                return Err(ExtractError::Ambiguous {
                    second_start: start,
                });
            }
        }
        pos = end;
    }
    Ok(found)
}

/// Fence-strips `text` and locates the value of `kind`.
pub fn extract(text: &str, kind: JsonKind) -> Result<Value, ExtractError> {
    let cleaned = strip_fences(text);
    locate(&cleaned, kind).map(|l| l.value)
}

/// Splits the elements of a JSON array beginning at `start` (which must be
/// `[`) without parsing them.
///
/// Scanning stops at the first element that is not a balanced bracketed
/// value or is not followed by `,` or `]`; the returned `complete` flag is
/// false in that case and `elements` holds only the well-delimited prefix.
pub fn split_array_elements(text: &str, start: usize) -> ArrayScan<'_> {
    let bytes = text.as_bytes();
    let mut elements = Vec::new();
    let mut i = start + 1;
    let skip_ws = |mut i: usize| {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        i
    };
    i = skip_ws(i);
    if i < bytes.len() && bytes[i] == b']' {
        return ArrayScan {
            elements,
            complete: true,
        };
    }
    loop {
        i = skip_ws(i);
        if i >= bytes.len() || !(bytes[i] == b'{' || bytes[i] == b'[') {
            return ArrayScan {
                elements,
                complete: false,
            };
        }
        let Some(end) = balanced_end(text, i) else {
            return ArrayScan {
                elements,
                complete: false,
            };
        };
        let element = &text[i..end];
        i = skip_ws(end);
        match bytes.get(i) {
            Some(b',') => {
                elements.push(element);
                i += 1;
            }
            Some(b']') => {
                elements.push(element);
                return ArrayScan {
                    elements,
                    complete: true,
                };
            }
            _ => {
                elements.push(element);
                return ArrayScan {
                    elements,
                    complete: false,
                };
            }
        }
    }
}

#[derive(Debug)]
pub struct ArrayScan<'a> {
    pub elements: Vec<&'a str>,
    pub complete: bool,
}

/// Parses one complete JSON value, rejecting duplicate object keys.
pub fn parse_strict(text: &str) -> Result<Value, serde_json::Error> {
    let mut de = serde_json::Deserializer::from_str(text);
    let StrictValue(value) = StrictValue::deserialize(&mut de)?;
    de.end()?;
    Ok(value)
}

fn syntax_error(cleaned: &str, candidate_start: usize, e: &serde_json::Error) -> ExtractError {
    let rel = offset_of(&cleaned[candidate_start..], e.line(), e.column());
    let offset = candidate_start + rel;
    let (line, column) = line_col(cleaned, offset);
    ExtractError::Syntax {
        offset,
        line,
        column,
        candidate_start,
        message: e.to_string(),
    }
}

fn offset_of(text: &str, line: usize, column: usize) -> usize {
    let mut offset = 0;
    for (n, l) in text.split_inclusive('\n').enumerate() {
        if n + 1 == line {
            return (offset + column.saturating_sub(1)).min(text.len());
        }
        offset += l.len();
    }
    text.len()
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |p| p + 1) + 1;
    (line, column)
}

struct StrictValue(Value);

impl<'de> Deserialize<'de> for StrictValue {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(StrictVisitor).map(StrictValue)
    }
}

struct StrictVisitor;

impl<'de> Visitor<'de> for StrictVisitor {
    type Value = Value;

    fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("any JSON value")
    }

    fn visit_bool<E>(self, v: bool) -> Result<Value, E> {
        Ok(Value::Bool(v))
    }

    fn visit_i64<E>(self, v: i64) -> Result<Value, E> {
        Ok(Value::Number(v.into()))
    }

    fn visit_u64<E>(self, v: u64) -> Result<Value, E> {
        Ok(Value::Number(v.into()))
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<Value, E> {
        Number::from_f64(v)
            .map(Value::Number)
            .ok_or_else(|| E::custom("non-finite number"))
    }

    fn visit_str<E>(self, v: &str) -> Result<Value, E> {
        Ok(Value::String(v.to_owned()))
    }

    fn visit_string<E>(self, v: String) -> Result<Value, E> {
        Ok(Value::String(v))
    }

    fn visit_unit<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_none<E>(self) -> Result<Value, E> {
        Ok(Value::Null)
    }

    fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Value, A::Error> {
        let mut out = Vec::new();
        while let Some(StrictValue(v)) = seq.next_element()? {
            out.push(v);
        }
        Ok(Value::Array(out))
    }

    fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Value, A::Error> {
        let mut out = Map::new();
        while let Some(key) = map.next_key::<String>()? {
            if out.contains_key(&key) {
                return Err(de::Error::custom(format!("duplicate key `{key}`")));
            }
            let StrictValue(v) = map.next_value()?;
            out.insert(key, v);
        }
        Ok(Value::Object(out))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fenced_and_prose() {
        let text = "Sure! Here it is:\n```json\n{\"a\": 1}\n```\nHope that helps {sic}.";
        assert_eq!(extract(text, JsonKind::Object).unwrap(), serde_json::json!({"a": 1}));
    }

    #[test]
    fn placeholder_braces_in_prose_are_skipped() {
        let text = "Script for {persona}: {\"a\": [1, 2]}";
        assert_eq!(
            extract(text, JsonKind::Object).unwrap(),
            serde_json::json!({"a": [1, 2]})
        );
    }

    #[test]
    fn second_object_is_ambiguous() {
        let err = extract("{\"a\":1} and {\"b\":2}", JsonKind::Object).unwrap_err();
        assert!(matches!(err, ExtractError::Ambiguous { second_start: 12 }));
    }

    #[test]
    fn nothing_found() {
        assert_eq!(
            extract("no json here", JsonKind::Object).unwrap_err(),
            ExtractError::NoJsonFound
        );
    }

    #[test]
    fn truncated_object_reports_syntax() {
        let err = extract("x {\"a\": \"unterminated", JsonKind::Object).unwrap_err();
        match err {
            ExtractError::Syntax { candidate_start, .. } => assert_eq!(candidate_start, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_keys_rejected() {
        let err = parse_strict(r#"{"a": 1, "a": 2}"#).unwrap_err();
        assert!(err.to_string().contains("duplicate key `a`"));
        assert!(parse_strict(r#"{"a": {"a": 1}}"#).is_ok());
    }

    #[test]
    fn brackets_inside_strings_ignored() {
        let text = r#"{"a": "}{][", "b": "\"}"}"#;
        assert_eq!(balanced_end(text, 0), Some(text.len()));
    }

    #[test]
    fn array_split_stops_at_broken_element() {
        let text = r#"[{"a":1}, {"b":2}, {"c": "oops]"#;
        let scan = split_array_elements(text, 0);
        assert_eq!(scan.elements, vec![r#"{"a":1}"#, r#"{"b":2}"#]);
        assert!(!scan.complete);

        let scan = split_array_elements("[ ]", 0);
        assert!(scan.complete && scan.elements.is_empty());
    }
}
