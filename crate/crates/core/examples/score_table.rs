//! Aggregates per-episode results, computes the held-out weighted score and
//! shows Best-of-N over repeated runs.
//!
//! cargo run --example score_table

use std::collections::BTreeMap;
use std::error::Error;
use std::fs;
use std::path::Path;

use refine_synth::metrics::{aggregate, best_of_n, group_episodes, held_out_score, round2, Episode, Run};

pub fn run() -> Result<(), Box<dyn Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/score/held_out_episodes.jsonl");
    let episodes: Vec<Episode> = fs::read_to_string(path)?
        .lines()
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?;

    let mut progress = BTreeMap::new();
    for result in group_episodes(&episodes) {
        let a = aggregate(&result)?;
        println!("{:<10} success {:>6.2}  progress {:>6.2}", result.task, a.success_rate, a.progress_rate);
        progress.insert(result.task, a.progress_rate);
    }
    println!("held-out weighted progress: {:.2}", round2(held_out_score(&progress)?));

    let runs: Vec<Run> = [0.3, 0.9, 0.5]
        .iter()
        .zip([false, false, true])
        .map(|(&progress, success)| Run { success, progress })
        .collect();
    for n in 1..=runs.len() {
        let best = best_of_n(&runs[..n])?;
        println!("best of {n}: success={} progress={}", best.success, best.progress);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
