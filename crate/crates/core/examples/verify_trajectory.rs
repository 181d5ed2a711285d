//! Runs the verifier over the hand-built trajectory cases and prints each
//! verdict next to the expected one.
//!
//! cargo run --example verify_trajectory

use std::error::Error;
use std::fs;
use std::path::Path;

use refine_synth::{parse_script, parse_trajectory, verify_trajectory};

pub fn run() -> Result<(), Box<dyn Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/verifier_cases");
    let script = parse_script(&fs::read_to_string(dir.join("script.json"))?)?;
    let expected: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("expected.json"))?)?;

    for (case, want) in expected.as_object().ok_or("expected.json is not an object")? {
        let text = fs::read_to_string(dir.join(format!("{case}.json")))?;
        let verdict = verify_trajectory(&script, &parse_trajectory(&text), &[])?;
        let got = serde_json::to_value(verdict.signal)?;
        let ok = got["kind"] == want["kind"] && got["at_turn"] == want["at_turn"] && got["reason"] == want["reason"];
        println!(
            "{:<36} {:<20} at={:<5} {:<24} prefix={:<3} {}",
            case,
            got["kind"].as_str().unwrap_or_default(),
            got["at_turn"].to_string(),
            got["reason"].as_str().unwrap_or("-"),
            verdict.prefix.len(),
            if ok { "ok" } else { "MISMATCH" }
        );
        if !ok {
            return Err(format!("{case}: expected {want}, got {got}").into());
        }
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
