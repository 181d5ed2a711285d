//! Action name templates such as `take {obj} from {recep}`.

use indexmap::IndexMap;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Segment {
    Literal(String),
    Placeholder(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    segments: Vec<Segment>,
}

fn is_placeholder_name(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl Template {
    /// Braces that do not enclose a valid identifier are kept as literal text.
    pub fn parse(source: &str) -> Self {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut rest = source;
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            match after.find('}') {
                Some(close) if is_placeholder_name(&after[..close]) => {
                    literal.push_str(&rest[..open]);
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Placeholder(after[..close].to_owned()));
                    rest = &after[close + 1..];
                }
                _ => {
                    literal.push_str(&rest[..=open]);
                    rest = after;
                }
            }
        }
        literal.push_str(rest);
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Template { segments }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for seg in &self.segments {
            if let Segment::Placeholder(p) = seg {
                if !out.contains(&p.as_str()) {
                    out.push(p);
                }
            }
        }
        out
    }

    pub fn instantiate<'a, F>(&self, mut value: F) -> Option<String>
    where
        F: FnMut(&str) -> Option<&'a str>,
    {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(l),
                Segment::Placeholder(p) => out.push_str(value(p)?),
            }
        }
        Some(out)
    }

    /// Instantiates with the first allowed value of every placeholder.
    pub fn first_instance(&self, parameters: &IndexMap<String, Vec<String>>) -> Option<String> {
        self.instantiate(|p| parameters.get(p).and_then(|v| v.first()).map(String::as_str))
    }

    /// Every instantiation over the cartesian product of allowed values, in
    /// lexicographic order of the value lists. Stops after `limit` strings.
    pub fn all_instances(
        &self,
        parameters: &IndexMap<String, Vec<String>>,
        limit: usize,
    ) -> Vec<String> {
        let names = self.placeholders();
        let mut lists = Vec::with_capacity(names.len());
        for n in &names {
            match parameters.get(*n) {
                Some(v) if !v.is_empty() => lists.push(v.as_slice()),
                _ => return Vec::new(),
            }
        }
        let mut out = Vec::new();
        let mut idx = vec![0usize; names.len()];
        loop {
            if out.len() >= limit {
                break;
            }
            let s = self.instantiate(|p| {
                let k = names.iter().position(|n| *n == p)?;
                Some(lists[k][idx[k]].as_str())
            });
            out.extend(s);
            // odometer increment, last placeholder fastest
            let mut k = names.len();
            loop {
                if k == 0 {
                    return out;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < lists[k].len() {
                    break;
                }
                idx[k] = 0;
            }
        }
        out
    }

    /// Builds an anchored pattern accepting exactly the instantiations over
    /// the allowed lists. Placeholders without a list accept any non-empty
    /// text.
    pub fn to_regex_source(&self, parameters: &IndexMap<String, Vec<String>>) -> String {
        let mut out = String::from("^");
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(&regex::escape(l)),
                Segment::Placeholder(p) => match parameters.get(p) {
                    Some(values) if !values.is_empty() => {
                        let mut values: Vec<&String> = values.iter().collect();
                        values.sort_by(|a, b| b.len().cmp(&a.len()).then(a.cmp(b)));
                        values.dedup();
                        out.push('(');
                        for (i, v) in values.iter().enumerate() {
                            if i > 0 {
                                out.push('|');
                            }
                            out.push_str(&regex::escape(v));
                        }
                        out.push(')');
                    }
                    _ => out.push_str("(.+)"),
                },
            }
        }
        out.push('$');
        out
    }

    /// A pattern that captures each placeholder occurrence lazily; used to
    /// recover parameter values when a verification code has no groups.
    pub fn capture_regex_source(&self) -> String {
        let mut out = String::from("^");
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(&regex::escape(l)),
                Segment::Placeholder(_) => out.push_str("(.+?)"),
            }
        }
        out.push('$');
        out
    }

    /// Placeholder occurrence order, with repeats, as capture groups of
    /// [`Template::to_regex_source`] and [`Template::capture_regex_source`]
    /// see them.
    pub fn placeholder_occurrences(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Placeholder(p) => Some(p.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(l) => out.push_str(l),
                Segment::Placeholder(p) => {
                    out.push('{');
                    out.push_str(p);
                    out.push('}');
                }
            }
        }
        out
    }
}
