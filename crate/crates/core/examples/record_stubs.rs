//! Regenerates the offline end-to-end fixtures: a stub corpus recorded from
//! the synthetic model, plus golden outputs of `synth`, `compile` and `stats`
//! replayed from those stubs.
//!
//! cargo run --example record_stubs

use std::fs;
use std::path::Path;

use refine_synth::cli;
use refine_synth::orchestrator::synthetic::SyntheticModel;
use refine_synth::orchestrator::{load_personas, sample_personas, synthesize_all, Exemplars, GenerationConfig, RecordingClient};

const N: usize = 10;
const SEED: u64 = 3;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(args, &mut out, &mut err);
    eprint!("{}", String::from_utf8_lossy(&err));
    (code, String::from_utf8(out).expect("utf-8 output"))
}

fn main() {
    let root = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let corpus_path = root.join("personas/corpus.jsonl");
    let e2e = root.join("e2e");
    let stubs = e2e.join("stubs");
    let golden = e2e.join("golden");
    let _ = fs::remove_dir_all(&stubs);
    fs::create_dir_all(&stubs).unwrap();
    fs::create_dir_all(&golden).unwrap();

    let corpus = load_personas(fs::read_to_string(&corpus_path).unwrap().as_bytes()).unwrap();
    let cfg = GenerationConfig {
        seed: SEED,
        ..GenerationConfig::default()
    };
    let personas = sample_personas(&corpus, N, SEED).unwrap();
    let recorder = RecordingClient::new(SyntheticModel, &stubs);
    for r in synthesize_all(&personas, &recorder, &cfg, &Exemplars::builtin(), 1) {
        r.unwrap();
    }

    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("synth");
    let (code, manifest) = run(&[
        "refine-synth",
        "--seed",
        &SEED.to_string(),
        "--stub-dir",
        stubs.to_str().unwrap(),
        "synth",
        "--personas",
        corpus_path.to_str().unwrap(),
        "--n",
        &N.to_string(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let manifest: serde_json::Value = serde_json::from_str(&manifest).unwrap();
    fs::write(
        golden.join("counts.json"),
        serde_json::to_string_pretty(&manifest["counts"]).unwrap() + "\n",
    )
    .unwrap();
    fs::copy(out.join("pairs.jsonl"), golden.join("pairs.jsonl")).unwrap();
    fs::copy(out.join("outcomes.jsonl"), golden.join("outcomes.jsonl")).unwrap();

    let records = golden.join("records.jsonl");
    let (code, _) = run(&[
        "refine-synth",
        "compile",
        out.join("pairs.jsonl").to_str().unwrap(),
        "--mode",
        "standard",
        "--out",
        records.to_str().unwrap(),
    ]);
    assert_eq!(code, 0);
    let (code, stats) = run(&["refine-synth", "stats", records.to_str().unwrap()]);
    assert_eq!(code, 0);
    fs::write(golden.join("stats.json"), stats).unwrap();
    println!("recorded {} stub completions", fs::read_dir(&stubs).unwrap().count());
}
