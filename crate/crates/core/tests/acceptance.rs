//! Acceptance gate. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use refine_synth::chat::ChatRole;
use refine_synth::cli;
use refine_synth::dataset::{
    compile_record, error_run_histogram, masked_loss, DatasetRecord, MaskMode, MaskedMessage, RecordMeta,
};
use refine_synth::metrics::{best_of_n, held_out_score, Run};
use refine_synth::orchestrator::synthetic::{Behavior, SyntheticModel};
use refine_synth::orchestrator::{load_personas, sample_personas, synthesize_all, Exemplars, GenerationConfig};
use refine_synth::perturbation::{perturb_action_spec, perturb_script, PerturbationRule};
use refine_synth::runtime::replay;
use refine_synth::script::compile_verification_code;
use refine_synth::template::Template;
use refine_synth::{
    parse_script, parse_trajectory, serialize_script, serialize_trajectory, validate_script, verify_trajectory,
    Script,
};

const VERIFIER_MIN_CASES: usize = 12;
const VERIFIER_TIME_LIMIT: Duration = Duration::from_secs(1);
const CORPUS_MIN_RECORDS: usize = 50;
const MASK_ORACLE_PAIRS: usize = 1_000;
const MASK_ORACLE_TOL: f64 = 1e-12;
const ROUND_TRIP_MIN_FILES: usize = 20;
const HELD_OUT_INPUTS: [(&str, f64); 4] = [("BabyAI", 37.5), ("SciWorld", 14.4), ("PDDL", 16.6), ("Jericho", 10.0)];
const HELD_OUT_EXPECTED: f64 = 23.73;
const HELD_OUT_TOL: f64 = 0.01;
const BEST_OF_N_SETS: usize = 200;
const E2E_PERSONAS: usize = 10;
const E2E_SEED: u64 = 3;
const E2E_BUDGET: usize = 4;
const E2E_TIME_LIMIT: Duration = Duration::from_secs(10);
const HISTOGRAM_RECORDS: usize = 100;

type Outcome = Result<String, String>;

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn read(path: &Path) -> String {
    fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn verifier_cases() -> (Script, BTreeMap<String, Value>) {
    let dir = fixtures().join("verifier_cases");
    let script = parse_script(&read(&dir.join("script.json"))).expect("case script parses");
    let expected: BTreeMap<String, Value> =
        serde_json::from_str(&read(&dir.join("expected.json"))).expect("expected.json parses");
    (script, expected)
}

fn case_text(name: &str) -> String {
    read(&fixtures().join("verifier_cases").join(format!("{name}.json")))
}

fn c1_verifier_suite() -> Outcome {
    let (script, expected) = verifier_cases();
    ensure(expected.len() >= VERIFIER_MIN_CASES, || format!("only {} cases", expected.len()))?;
    let reasons: std::collections::BTreeSet<&str> = expected.values().filter_map(|v| v["reason"].as_str()).collect();
    for r in ["JsonFormat", "KeySchema", "UnmatchedAction", "UnfinishedTask", "FinalTurnHasError", "TooFewErrorRefineTurns"] {
        ensure(reasons.contains(r), || format!("no case covers {r}"))?;
    }
    let started = Instant::now();
    for (name, want) in &expected {
        let text = case_text(name);
        let outcome = parse_trajectory(&text);
        let verdict = verify_trajectory(&script, &outcome, &[]).map_err(|e| format!("{name}: {e}"))?;
        let got = serde_json::to_value(verdict.signal).unwrap();
        ensure(
            got["kind"] == want["kind"] && got["at_turn"] == want["at_turn"] && got["reason"] == want["reason"],
            || format!("{name}: expected {want}, got {got}"),
        )?;
        ensure(Some(verdict.prefix.len() as u64) == want["prefix_len"].as_u64(), || {
            format!("{name}: prefix length {}", verdict.prefix.len())
        })?;
        if let Ok(t) = &outcome {
            ensure(t.turns().starts_with(&verdict.prefix), || format!("{name}: prefix is not a prefix"))?;
        }
    }
    let elapsed = started.elapsed();
    ensure(elapsed < VERIFIER_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("{} cases in {elapsed:.2?}", expected.len()))
}

fn c2_corpus_law() -> Outcome {
    let corpus = load_personas(read(&fixtures().join("personas/corpus.jsonl")).as_bytes()).unwrap();
    let cfg = GenerationConfig::default();
    let exemplars = Exemplars::builtin();
    let mut records = 0;
    for outcome in synthesize_all(&corpus, &SyntheticModel, &cfg, &exemplars, 4) {
        let o = outcome.map_err(|e| e.to_string())?;
        let (Some(s), Some(t)) = (&o.script, &o.trajectory) else {
            continue;
        };
        let meta = RecordMeta {
            id: o.persona.id.clone(),
            persona_id: o.persona.id.clone(),
        };
        let r = compile_record(s, t, MaskMode::Standard, &meta).map_err(|e| e.to_string())?;
        let mask = r.assistant_mask();
        ensure(mask.iter().filter(|l| !**l).count() >= 2, || format!("{}: fewer than 2 masked", r.id))?;
        ensure(mask.last() == Some(&true), || format!("{}: final assistant message masked", r.id))?;
        records += 1;
    }
    ensure(records >= CORPUS_MIN_RECORDS, || format!("only {records} records"))?;
    Ok(format!("{records} records, zero violations"))
}

fn record_with_mask(mask: &[bool]) -> DatasetRecord {
    let mut messages = Vec::new();
    for &keep in mask {
        messages.push(MaskedMessage {
            role: ChatRole::User,
            content: "observation".into(),
            loss: false,
        });
        messages.push(MaskedMessage {
            role: ChatRole::Assistant,
            content: "Thought: t\nAction: a".into(),
            loss: keep,
        });
    }
    DatasetRecord {
        id: "r".into(),
        persona_id: "p".into(),
        source: MaskMode::Standard,
        messages,
        error_turn_indices: (0..mask.len()).filter(|i| !mask[*i]).collect(),
    }
}

fn c3_mask_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0003);
    for k in 0..MASK_ORACLE_PAIRS {
        let n = rng.random_range(1..=40);
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
        let losses: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let record = record_with_mask(&mask);
        let got = masked_loss(&record, &losses).map_err(|e| e.to_string())?;
        let mut brute = 0.0;
        for i in 0..n {
            if mask[i] {
                brute += losses[i];
            }
        }
        ensure((got - brute).abs() <= MASK_ORACLE_TOL, || format!("pair {k}: {got} vs {brute}"))?;
        let mut perturbed = losses.clone();
        for i in 0..n {
            if !mask[i] {
                perturbed[i] = rng.random_range(-1e6..1e6);
            }
        }
        let again = masked_loss(&record, &perturbed).map_err(|e| e.to_string())?;
        ensure((again - got).abs() <= MASK_ORACLE_TOL, || format!("pair {k}: masked perturbation moved {got} to {again}"))?;
    }
    Ok(format!("{MASK_ORACLE_PAIRS} pairs within {MASK_ORACLE_TOL:e}"))
}

fn c4_round_trip() -> Outcome {
    let mut files = Vec::new();
    for dir in ["exemplars", "verifier_cases", "perturbation"] {
        for entry in fs::read_dir(fixtures().join(dir)).unwrap() {
            let p = entry.unwrap().path();
            if p.extension().is_some_and(|e| e == "json") {
                files.push(p);
            }
        }
    }
    files.sort();
    let mut checked = 0;
    for p in &files {
        let text = read(p);
        let name = p.display().to_string();
        if let Ok(s) = parse_script(&text) {
            let a = serialize_script(&s);
            ensure(a == serialize_script(&s), || format!("{name}: unstable bytes"))?;
            ensure(parse_script(&a).as_ref() == Ok(&s), || format!("{name}: parse∘serialize differs"))?;
            ensure(a == text, || format!("{name}: file is not in canonical form"))?;
            checked += 1;
        } else if let Ok(t) = parse_trajectory(&text) {
            let a = serialize_trajectory(&t);
            ensure(a == serialize_trajectory(&t), || format!("{name}: unstable bytes"))?;
            ensure(parse_trajectory(&a).as_ref().ok() == Some(&t), || format!("{name}: parse∘serialize differs"))?;
            let stripped_labels = text.contains("\"Thought: ") || text.contains("\"Action: ");
            ensure(a == text || stripped_labels, || format!("{name}: file is not in canonical form"))?;
            checked += 1;
        }
    }
    ensure(checked >= ROUND_TRIP_MIN_FILES, || format!("only {checked} parseable fixtures"))?;
    Ok(format!("{checked} script/trajectory files"))
}

fn c5_replay_agreement() -> Outcome {
    let (script, expected) = verifier_cases();
    let mut accepted = 0;
    let mut planted = 0;
    for (name, want) in &expected {
        let Ok(traj) = parse_trajectory(&case_text(name)) else {
            continue;
        };
        let report = replay(&script, &traj).map_err(|e| e.to_string())?;
        let bad = report.inconsistencies();
        match want["kind"].as_str() {
            Some("Accept") => {
                ensure(bad.is_empty(), || format!("{name}: inconsistencies at {bad:?}"))?;
                accepted += 1;
            }
            _ if want["reason"] == "UnmatchedAction" => {
                let at = want["at_turn"].as_u64().map(|t| t as usize);
                ensure(bad.len() == 1 && Some(bad[0]) == at, || format!("{name}: inconsistencies at {bad:?}"))?;
                planted += 1;
            }
            _ => {}
        }
    }
    let ex = Exemplars::builtin();
    let report = replay(&ex.trajectory.0, &ex.trajectory.1).map_err(|e| e.to_string())?;
    ensure(report.inconsistencies().is_empty(), || "exemplar trajectory disagrees".into())?;
    ensure(accepted > 0 && planted > 0, || "fixture set lacks a category".into())?;
    Ok(format!("{} accepted clean, {planted} planted with exactly one", accepted + 1))
}

fn c6_held_out() -> Outcome {
    let scores: BTreeMap<String, f64> = HELD_OUT_INPUTS.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    let got = held_out_score(&scores).map_err(|e| e.to_string())?;
    // 37.5*112 + 14.4*90 + 16.6*60 + 10*20 = 4200 + 1296 + 996 + 200 = 6692
    let oracle = 6692.0 / 282.0;
    ensure((got - oracle).abs() < 1e-9, || format!("{got} vs oracle {oracle}"))?;
    ensure((got - HELD_OUT_EXPECTED).abs() <= HELD_OUT_TOL, || format!("{got}"))?;
    Ok(format!("{got:.4}"))
}

fn tuples(t: &Template, params: &indexmap::IndexMap<String, Vec<String>>) -> Vec<Vec<(String, String)>> {
    let mut out = vec![Vec::new()];
    for n in t.placeholders() {
        out = out
            .into_iter()
            .flat_map(|a: Vec<(String, String)>| {
                params[n].iter().map(move |v| {
                    let mut a = a.clone();
                    a.push((n.to_owned(), v.clone()));
                    a
                })
            })
            .collect();
    }
    out
}

fn fill(t: &Template, a: &[(String, String)]) -> String {
    t.instantiate(|p| a.iter().find(|(n, _)| n == p).map(|(_, v)| v.as_str()))
        .expect("tuple covers placeholders")
}

fn c7_perturbation() -> Outcome {
    let script = parse_script(&read(&fixtures().join("perturbation/alfworld.json"))).unwrap();
    let cases = [
        (
            "clean {obj} with {recep}",
            PerturbationRule::SynonymSwap {
                from: "with".into(),
                to: "using".into(),
            },
            "clean {obj} using {recep}",
            false,
        ),
        (
            "go to {recep}",
            PerturbationRule::VerbRename {
                from: "go to".into(),
                to: "move to".into(),
            },
            "move to {recep}",
            true,
        ),
        (
            "take {obj} from {recep}",
            PerturbationRule::ArgReorder {
                from: "take {obj} from {recep}".into(),
                to: "from {recep} take {obj}".into(),
            },
            "from {recep} take {obj}",
            true,
        ),
    ];
    let mut instances = 0;
    for (src, rule, want, rejects_original) in &cases {
        let spec = &script.actions[*src];
        let new = perturb_action_spec(spec, rule).map_err(|e| e.to_string())?;
        ensure(new.name == *want, || format!("{src}: got {}", new.name))?;
        let re = compile_verification_code(&new.verification_code).map_err(|e| e.to_string())?;
        let (old_t, new_t) = (spec.template(), new.template());
        for a in tuples(&old_t, &spec.parameters) {
            let rewritten = fill(&new_t, &a);
            ensure(re.is_match(&rewritten), || format!("{want}: rejects `{rewritten}`"))?;
            let original = fill(&old_t, &a);
            ensure(!rejects_original || !re.is_match(&original), || format!("{want}: accepts `{original}`"))?;
            instances += 1;
        }
        let single = perturb_script(&script, std::slice::from_ref(rule)).map_err(|e| e.to_string())?;
        ensure(validate_script(&single.script).is_empty(), || format!("{want}: invalid script"))?;
    }
    let all: Vec<PerturbationRule> = cases.iter().map(|c| c.1.clone()).chain([PerturbationRule::WhitespaceSquash]).collect();
    let out = perturb_script(&script, &all).map_err(|e| e.to_string())?;
    ensure(validate_script(&out.script).is_empty(), || "combined perturbation invalid".into())?;
    Ok(format!("3 rules, {instances} instantiations checked"))
}

fn c8_best_of_n() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0008);
    for k in 0..BEST_OF_N_SETS {
        let n = rng.random_range(1..=12);
        let runs: Vec<Run> = (0..n)
            .map(|_| Run {
                success: rng.random_bool(0.2),
                progress: rng.random_range(0.0..=1.0),
            })
            .collect();
        let got = best_of_n(&runs).map_err(|e| e.to_string())?;
        let mut max = f64::NEG_INFINITY;
        let mut any = false;
        for r in &runs {
            if r.progress > max {
                max = r.progress;
            }
            any |= r.success;
        }
        ensure(got.progress == max && got.success == any, || format!("set {k}: {got:?}"))?;
        let mut extended = runs.clone();
        extended.push(Run {
            success: rng.random_bool(0.2),
            progress: rng.random_range(0.0..=1.0),
        });
        let more = best_of_n(&extended).map_err(|e| e.to_string())?;
        ensure(more.progress >= got.progress && (more.success || !got.success), || format!("set {k}: not monotone"))?;
    }
    Ok(format!("{BEST_OF_N_SETS} run-sets"))
}

fn cli_run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = cli::run(args, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap())
}

fn c9_offline_e2e() -> Outcome {
    let started = Instant::now();
    let root = fixtures();
    let corpus_path = root.join("personas/corpus.jsonl");
    let stubs = root.join("e2e/stubs");
    let golden = root.join("e2e/golden");

    let corpus = load_personas(read(&corpus_path).as_bytes()).unwrap();
    let sampled = sample_personas(&corpus, E2E_PERSONAS, E2E_SEED).unwrap();
    let designed = sampled
        .iter()
        .filter(|p| Behavior::for_persona(&p.description).accepted_within(E2E_BUDGET))
        .count();

    let tmp = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    for k in 0..2 {
        let out = tmp.path().join(format!("run{k}"));
        let (code, stdout) = cli_run(&[
            "refine-synth",
            "--seed",
            &E2E_SEED.to_string(),
            "--stub-dir",
            stubs.to_str().unwrap(),
            "synth",
            "--personas",
            corpus_path.to_str().unwrap(),
            "--n",
            &E2E_PERSONAS.to_string(),
            "--budget",
            &E2E_BUDGET.to_string(),
            "--out",
            out.to_str().unwrap(),
        ]);
        ensure(code == cli::EXIT_OK, || format!("synth exited {code}"))?;
        let manifest: Value = serde_json::from_str(&stdout).map_err(|e| e.to_string())?;
        runs.push((out, manifest));
    }
    let (out, manifest) = &runs[0];
    let accepted = manifest["counts"]["accepted"].as_u64().unwrap_or(0) as usize;
    ensure(accepted == designed, || format!("accepted {accepted}, stubs designed for {designed}"))?;
    let golden_counts: Value = serde_json::from_str(&read(&golden.join("counts.json"))).unwrap();
    ensure(manifest["counts"] == golden_counts, || format!("counts {} vs golden {golden_counts}", manifest["counts"]))?;
    for line in read(&out.join("outcomes.jsonl")).lines() {
        let o: Value = serde_json::from_str(line).unwrap();
        ensure(o["calls_used"].as_u64().unwrap_or(u64::MAX) <= E2E_BUDGET as u64, || format!("over budget: {o}"))?;
    }
    for f in ["pairs.jsonl", "outcomes.jsonl"] {
        let a = read(&out.join(f));
        ensure(a == read(&runs[1].0.join(f)), || format!("{f} differs between runs"))?;
        ensure(a == read(&golden.join(f)), || format!("{f} differs from golden"))?;
    }

    let records = tmp.path().join("records.jsonl");
    let (code, _) = cli_run(&[
        "refine-synth",
        "compile",
        out.join("pairs.jsonl").to_str().unwrap(),
        "--mode",
        "standard",
        "--out",
        records.to_str().unwrap(),
    ]);
    ensure(code == cli::EXIT_OK, || format!("compile exited {code}"))?;
    ensure(read(&records) == read(&golden.join("records.jsonl")), || "records differ from golden".into())?;
    let (code, stats) = cli_run(&["refine-synth", "stats", records.to_str().unwrap()]);
    ensure(code == cli::EXIT_OK, || format!("stats exited {code}"))?;
    let stats: Value = serde_json::from_str(&stats).map_err(|e| e.to_string())?;
    let golden_stats: Value = serde_json::from_str(&read(&golden.join("stats.json"))).unwrap();
    ensure(stats == golden_stats, || format!("stats {stats} vs golden {golden_stats}"))?;

    let elapsed = started.elapsed();
    ensure(elapsed < E2E_TIME_LIMIT, || format!("took {elapsed:?}"))?;
    Ok(format!("{accepted}/{E2E_PERSONAS} accepted, goldens match, {elapsed:.2?}"))
}

/// Marks run starts in one pass, measures each run in a second.
fn two_pass_histogram(masks: &[Vec<bool>]) -> BTreeMap<usize, usize> {
    let mut hist = BTreeMap::new();
    for mask in masks {
        let starts: Vec<usize> = (0..mask.len()).filter(|&i| !mask[i] && (i == 0 || mask[i - 1])).collect();
        for s in starts {
            let len = mask[s..].iter().take_while(|keep| !**keep).count();
            *hist.entry(len).or_insert(0) += 1;
        }
    }
    hist
}

fn c10_histogram() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0010);
    let masks: Vec<Vec<bool>> = (0..HISTOGRAM_RECORDS)
        .map(|_| {
            let n = rng.random_range(1..=30);
            let p = rng.random_range(0.2..0.9);
            (0..n).map(|_| rng.random_bool(p)).collect()
        })
        .collect();
    let records: Vec<DatasetRecord> = masks.iter().map(|m| record_with_mask(m)).collect();
    let got = error_run_histogram(&records);
    let want = two_pass_histogram(&masks);
    ensure(got == want, || format!("{got:?} vs {want:?}"))?;
    Ok(format!("{HISTOGRAM_RECORDS} records, {} run lengths", got.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("Verifier fixture suite", c1_verifier_suite),
        ("Corpus law", c2_corpus_law),
        ("Mask oracle", c3_mask_oracle),
        ("Round-trip", c4_round_trip),
        ("Replay agreement", c5_replay_agreement),
        ("Held-out score", c6_held_out),
        ("Perturbation fidelity", c7_perturbation),
        ("Best-of-N", c8_best_of_n),
        ("Offline end-to-end", c9_offline_e2e),
        ("Error-run histogram", c10_histogram),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match result {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
