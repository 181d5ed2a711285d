//! Persona corpus loading and seeded sampling.

use std::collections::HashSet;
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::script::Persona;

#[derive(Debug, Error)]
pub enum PersonaError {
    #[error("persona corpus is empty")]
    EmptyCorpus,
    #[error("requested {n} personas from a corpus of {size}")]
    NOutOfRange { n: usize, size: usize },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("duplicate persona id `{0}`")]
    DuplicateId(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Reads `{id, persona}` objects, one per line. Blank lines are skipped.
pub fn load_personas<R: BufRead>(input: R) -> Result<Vec<Persona>, PersonaError> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| PersonaError::Line { line: n + 1, message };
        let raw: Persona = serde_json::from_str(&line).map_err(|e| bad(e.to_string()))?;
        let p = Persona::new(raw.id, raw.description).map_err(bad)?;
        if !seen.insert(p.id.clone()) {
            return Err(PersonaError::DuplicateId(p.id));
        }
        out.push(p);
    }
    Ok(out)
}

/// Draws `n` distinct personas with a partial forward Fisher–Yates shuffle
/// driven by ChaCha8 seeded from `seed`.
pub fn sample_personas(corpus: &[Persona], n: usize, seed: u64) -> Result<Vec<Persona>, PersonaError> {
    if corpus.is_empty() {
        return Err(PersonaError::EmptyCorpus);
    }
    if n > corpus.len() {
        return Err(PersonaError::NOutOfRange {
            n,
            size: corpus.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..corpus.len()).collect();
    for i in 0..n {
        let j = rng.random_range(i..idx.len());
        idx.swap(i, j);
    }
    Ok(idx[..n].iter().map(|&i| corpus[i].clone()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(n: usize) -> Vec<Persona> {
        (0..n)
            .map(|i| Persona::new(format!("p{i}"), format!("persona number {i}")).unwrap())
            .collect()
    }

    #[test]
    fn full_draw_is_a_permutation() {
        let c = corpus(5);
        let mut got: Vec<String> = sample_personas(&c, 5, 7).unwrap().into_iter().map(|p| p.id).collect();
        got.sort();
        assert_eq!(got, ["p0", "p1", "p2", "p3", "p4"]);
    }

    #[test]
    fn deterministic_and_seed_sensitive() {
        let c = corpus(1000);
        assert_eq!(sample_personas(&c, 10, 1).unwrap(), sample_personas(&c, 10, 1).unwrap());
        assert_ne!(sample_personas(&c, 10, 1).unwrap(), sample_personas(&c, 10, 2).unwrap());
    }

    #[test]
    fn errors() {
        assert!(matches!(sample_personas(&[], 0, 0), Err(PersonaError::EmptyCorpus)));
        assert!(matches!(
            sample_personas(&corpus(2), 3, 0),
            Err(PersonaError::NOutOfRange { n: 3, size: 2 })
        ));
    }

    #[test]
    fn loads_jsonl() {
        let text = "{\"id\":\"a\",\"persona\":\"A chef\"}\n\n{\"id\":\"b\",\"persona\":\"A pilot\"}\n";
        let ps = load_personas(text.as_bytes()).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[1].description, "A pilot");
        let dup = "{\"id\":\"a\",\"persona\":\"x\"}\n{\"id\":\"a\",\"persona\":\"y\"}\n";
        assert!(matches!(load_personas(dup.as_bytes()), Err(PersonaError::DuplicateId(_))));
        let empty = "{\"id\":\"a\",\"persona\":\"  \"}\n";
        assert!(matches!(load_personas(empty.as_bytes()), Err(PersonaError::Line { line: 1, .. })));
    }
}
