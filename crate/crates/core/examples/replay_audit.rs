//! Plays a script with the deterministic interpreter, then audits a
//! trajectory in which the DM let an unmatched action slide.
//!
//! cargo run --example replay_audit

use std::error::Error;
use std::fs;
use std::path::Path;

use refine_synth::runtime::{replay, Environment};
use refine_synth::{parse_script, parse_trajectory};

pub fn run() -> Result<(), Box<dyn Error>> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/verifier_cases");
    let script = parse_script(&fs::read_to_string(dir.join("script.json"))?)?;

    let env = Environment::new(script.clone())?;
    println!("manual conditions: {:?}", env.diagnostics().manual());
    println!("> {}", env.initial_observation());
    let mut state = env.init();
    for action in ["look around", "go to desk 1", "examine red book", "take green book", "take red book"] {
        let (next, outcome) = env.step(&state, action)?;
        println!(
            "{action:<18} unmatched={:<5} param_error={:<5} progress={:.2} | {}",
            outcome.unmatched, outcome.parameter_error, outcome.progress, outcome.observation
        );
        state = next;
        if outcome.done {
            break;
        }
    }

    for case in ["accept_two_errors", "unmatched_unflagged_turn_5"] {
        let traj = parse_trajectory(&fs::read_to_string(dir.join(format!("{case}.json")))?)?;
        let report = replay(&script, &traj)?;
        println!("{case}: inconsistent player turns {:?}", report.inconsistencies());
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
