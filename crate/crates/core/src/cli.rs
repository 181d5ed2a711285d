//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code; machine-readable JSON goes
//! to `stdout` and a human-readable summary to `stderr`.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::dataset::{compile_record, error_run_histogram, export_jsonl, import_jsonl, MaskMode, RecordMeta};
use crate::fsutil::write_atomic;
use crate::metrics::{aggregate, group_episodes, held_out_score, round2, Episode, HELD_OUT_WEIGHTS};
use crate::orchestrator::synthetic::SyntheticModel;
use crate::orchestrator::{
    load_personas, sample_personas, synthesize_all, ChatClient, Exemplars, GenerationConfig, HttpChatClient,
    RateLimitedClient, StubClient,
};
use crate::perturbation::{load_rules, perturb_script};
use crate::runtime::replay;
use crate::script::{parse_script, serialize_script, Persona, Script};
use crate::trajectory::{parse_trajectory, Trajectory};
use crate::verifier::{verify_trajectory, SignalKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_TRUNCATE: i32 = 2;
pub const EXIT_REGENERATE: i32 = 3;
pub const EXIT_NO_ACCEPTANCES: i32 = 4;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "refine-synth", version, about = "Synthesize, verify and compile self-refinement trajectories")]
pub struct Cli {
    /// TOML file with [generation] and [endpoint] sections.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides generation.seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Replay completions from this directory instead of calling an endpoint.
    #[arg(long, global = true)]
    pub stub_dir: Option<PathBuf>,
    /// Concurrent requests (and synth workers).
    #[arg(long, global = true)]
    pub max_in_flight: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate and verify (script, trajectory) pairs for sampled personas.
    Synth {
        /// JSONL corpus of {id, persona} objects.
        #[arg(long)]
        personas: PathBuf,
        /// Output directory for pairs.jsonl, outcomes.jsonl and manifest.json.
        #[arg(long)]
        out: PathBuf,
        /// Number of personas to sample; defaults to the whole corpus.
        #[arg(long)]
        n: Option<usize>,
        /// Overrides generation.call_budget.
        #[arg(long)]
        budget: Option<usize>,
        /// Use the built-in offline model.
        #[arg(long, conflicts_with = "stub_dir")]
        synthetic: bool,
    },
    /// Run the trajectory verifier. Exit 0 accept, 2 truncate, 3 regenerate.
    Verify { script: PathBuf, trajectory: PathBuf },
    /// Compile accepted pairs into masked chat records.
    Compile {
        pairs: PathBuf,
        #[arg(long, default_value = "standard")]
        mode: MaskMode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply perturbation rules to a script.
    Perturb {
        script: PathBuf,
        rules: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Replay a trajectory against the script interpreter.
    Replay { script: PathBuf, trajectory: PathBuf },
    /// Histogram of masked-turn run lengths in a record file.
    Stats { records: PathBuf },
    /// Aggregate per-episode results and the held-out weighted score.
    Score { episodes: PathBuf },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    pub base_url: Option<String>,
    pub path: String,
    pub token_env: String,
    pub timeout_secs: u64,
    pub requests_per_minute: Option<usize>,
}

impl EndpointConfig {
    fn defaults() -> Self {
        EndpointConfig {
            base_url: None,
            path: "/v1/chat/completions".into(),
            token_env: "OPENAI_API_KEY".into(),
            timeout_secs: 120,
            requests_per_minute: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub generation: GenerationConfig,
    #[serde(default = "EndpointConfig::defaults")]
    pub endpoint: EndpointConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            generation: GenerationConfig::default(),
            endpoint: EndpointConfig::defaults(),
        }
    }
}

/// One accepted pair, as stored in `pairs.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairRecord {
    pub persona: Persona,
    pub script: Script,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub attempted: usize,
    pub accepted: usize,
    pub calls_used: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: RunConfig,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub counts: Counts,
    pub wall_time_secs: f64,
}

struct Fatal(String);

impl<E: std::fmt::Display> From<E> for Fatal {
    fn from(e: E) -> Self {
        Fatal(e.to_string())
    }
}

struct Io<'a> {
    out: &'a mut dyn Write,
    err: &'a mut dyn Write,
}

impl Io<'_> {
    fn json(&mut self, v: &Value) -> Result<(), Fatal> {
        writeln!(self.out, "{}", serde_json::to_string_pretty(v)?)?;
        Ok(())
    }
}

fn read(path: &Path) -> Result<String, Fatal> {
    fs::read_to_string(path).map_err(|e| Fatal(format!("{}: {e}", path.display())))
}

fn load_script(path: &Path) -> Result<Script, Fatal> {
    parse_script(&read(path)?).map_err(|e| Fatal(format!("{}: {e}", path.display())))
}

fn load_config(cli: &Cli) -> Result<RunConfig, Fatal> {
    let mut cfg = match &cli.config {
        Some(p) => toml::from_str(&read(p)?).map_err(|e| Fatal(format!("{}: {e}", p.display())))?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.generation.seed = s;
    }
    cfg.generation.validate()?;
    Ok(cfg)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render();
            let _ = if e.use_stderr() {
                write!(err, "{rendered}")
            } else {
                write!(out, "{rendered}")
            };
            return code;
        }
    };
    let mut io = Io { out, err };
    match dispatch(&cli, &mut io) {
        Ok(code) => code,
        Err(Fatal(msg)) => {
            let _ = writeln!(io.err, "error: {msg}");
            EXIT_FATAL
        }
    }
}

fn dispatch(cli: &Cli, io: &mut Io<'_>) -> Result<i32, Fatal> {
    match &cli.command {
        Command::Synth {
            personas,
            out,
            n,
            budget,
            synthetic,
        } => cmd_synth(cli, io, personas, out, *n, *budget, *synthetic),
        Command::Verify { script, trajectory } => cmd_verify(io, script, trajectory),
        Command::Compile { pairs, mode, out } => cmd_compile(io, pairs, *mode, out),
        Command::Perturb { script, rules, out } => cmd_perturb(io, script, rules, out),
        Command::Replay { script, trajectory } => cmd_replay(io, script, trajectory),
        Command::Stats { records } => cmd_stats(io, records),
        Command::Score { episodes } => cmd_score(io, episodes),
    }
}

fn cmd_synth(
    cli: &Cli,
    io: &mut Io<'_>,
    personas_path: &Path,
    out_dir: &Path,
    n: Option<usize>,
    budget: Option<usize>,
    synthetic: bool,
) -> Result<i32, Fatal> {
    let started = Instant::now();
    let mut cfg = load_config(cli)?;
    if let Some(b) = budget {
        cfg.generation.call_budget = b;
        cfg.generation.validate()?;
    }
    let file = fs::File::open(personas_path).map_err(|e| Fatal(format!("{}: {e}", personas_path.display())))?;
    let corpus = load_personas(BufReader::new(file))?;
    let personas = sample_personas(&corpus, n.unwrap_or(corpus.len()), cfg.generation.seed)?;

    let inner: Box<dyn ChatClient> = if let Some(dir) = &cli.stub_dir {
        Box::new(StubClient::new(dir))
    } else if synthetic {
        Box::new(SyntheticModel)
    } else {
        let ep = &cfg.endpoint;
        let base = ep
            .base_url
            .as_deref()
            .ok_or_else(|| Fatal("no endpoint.base_url configured and no --stub-dir given".into()))?;
        Box::new(HttpChatClient::new(base, &ep.path, &ep.token_env, Duration::from_secs(ep.timeout_secs)))
    };
    let workers = cli.max_in_flight.unwrap_or(4).max(1);
    let client = RateLimitedClient::new(inner, workers, cfg.endpoint.requests_per_minute);
    let exemplars = Exemplars::builtin();

    let results = synthesize_all(&personas, &client, &cfg.generation, &exemplars, workers);
    let mut outcomes = Vec::with_capacity(results.len());
    for r in results {
        outcomes.push(r?);
    }

    let mut pairs = String::new();
    let mut outcome_lines = String::new();
    let mut counts = Counts {
        attempted: outcomes.len(),
        accepted: 0,
        calls_used: 0,
    };
    writeln!(io.err, "{:<24} {:>8} {:>6}  failure", "persona", "accepted", "calls")?;
    for o in &outcomes {
        counts.calls_used += o.calls_used;
        let failure = o.failure.as_ref().map(serde_json::to_value).transpose()?;
        outcome_lines.push_str(&serde_json::to_string(&json!({
            "persona_id": o.persona.id,
            "accepted": o.accepted,
            "calls_used": o.calls_used,
            "failure": failure,
            "model": o.model,
            "temperature": o.temperature,
        }))?);
        outcome_lines.push('\n');
        let why = match &o.failure {
            Some(f) if !o.accepted => serde_json::to_string(f)?,
            _ => String::new(),
        };
        writeln!(io.err, "{:<24} {:>8} {:>6}  {why}", o.persona.id, o.accepted, o.calls_used)?;
        if let (true, Some(script), Some(trajectory)) = (o.accepted, &o.script, &o.trajectory) {
            counts.accepted += 1;
            pairs.push_str(&serde_json::to_string(&PairRecord {
                persona: o.persona.clone(),
                script: script.clone(),
                trajectory: trajectory.clone(),
            })?);
            pairs.push('\n');
        }
    }

    let pairs_path = out_dir.join("pairs.jsonl");
    let outcomes_path = out_dir.join("outcomes.jsonl");
    let manifest_path = out_dir.join("manifest.json");
    write_atomic(&pairs_path, pairs.as_bytes())?;
    write_atomic(&outcomes_path, outcome_lines.as_bytes())?;
    let mut inputs = BTreeMap::from([("personas".to_owned(), personas_path.display().to_string())]);
    if let Some(d) = &cli.stub_dir {
        inputs.insert("stub_dir".into(), d.display().to_string());
    }
    if let Some(c) = &cli.config {
        inputs.insert("config".into(), c.display().to_string());
    }
    let manifest = RunManifest {
        config: cfg,
        inputs,
        outputs: BTreeMap::from([
            ("pairs".to_owned(), pairs_path.display().to_string()),
            ("outcomes".to_owned(), outcomes_path.display().to_string()),
        ]),
        counts,
        wall_time_secs: started.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    write_atomic(&manifest_path, format!("{text}\n").as_bytes())?;
    writeln!(io.out, "{text}")?;
    Ok(if manifest.counts.accepted == 0 {
        EXIT_NO_ACCEPTANCES
    } else {
        EXIT_OK
    })
}

fn cmd_verify(io: &mut Io<'_>, script: &Path, trajectory: &Path) -> Result<i32, Fatal> {
    let script = load_script(script)?;
    let outcome = parse_trajectory(&read(trajectory)?);
    let verdict = verify_trajectory(&script, &outcome, &[])?;
    io.json(&json!({"signal": verdict.signal, "prefix_len": verdict.prefix.len()}))?;
    let s = &verdict.signal;
    writeln!(
        io.err,
        "{:?} at turn {} ({})",
        s.kind,
        s.at_turn.map_or("-".to_owned(), |t| t.to_string()),
        s.reason.map_or("all checks passed", |r| r.describe())
    )?;
    Ok(match s.kind {
        SignalKind::Accept => EXIT_OK,
        SignalKind::TruncateAndContinue => EXIT_TRUNCATE,
        SignalKind::Regenerate => EXIT_REGENERATE,
    })
}

fn load_pairs(path: &Path) -> Result<Vec<PairRecord>, Fatal> {
    let mut out = Vec::new();
    for (i, line) in read(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(line).map_err(|e| Fatal(format!("{}:{}: {e}", path.display(), i + 1)))?,
        );
    }
    Ok(out)
}

fn cmd_compile(io: &mut Io<'_>, pairs: &Path, mode: MaskMode, out: &Path) -> Result<i32, Fatal> {
    let pairs = load_pairs(pairs)?;
    let mut records = Vec::with_capacity(pairs.len());
    for p in &pairs {
        let meta = RecordMeta {
            id: format!("{}-{mode}", p.persona.id),
            persona_id: p.persona.id.clone(),
        };
        records.push(
            compile_record(&p.script, &p.trajectory, mode, &meta)
                .map_err(|e| Fatal(format!("persona `{}`: {e}", p.persona.id)))?,
        );
    }
    let mut buf = Vec::new();
    export_jsonl(&records, &mut buf)?;
    write_atomic(out, &buf)?;
    let masked: usize = records.iter().map(|r| r.masked_count()).sum();
    io.json(&json!({"records": records.len(), "mode": mode, "masked_messages": masked}))?;
    writeln!(io.err, "compiled {} records ({mode}), {masked} masked assistant messages", records.len())?;
    Ok(EXIT_OK)
}

fn cmd_perturb(io: &mut Io<'_>, script: &Path, rules: &Path, out: &Path) -> Result<i32, Fatal> {
    let script = load_script(script)?;
    let rules = load_rules(&read(rules)?)?;
    let result = perturb_script(&script, &rules)?;
    write_atomic(out, serialize_script(&result.script).as_bytes())?;
    let renamed: Vec<Value> = script
        .actions
        .keys()
        .zip(result.script.actions.keys())
        .filter(|(a, b)| a != b)
        .map(|(a, b)| json!({"from": a, "to": b}))
        .collect();
    io.json(&json!({"changed": result.changed.len(), "actions": result.changed, "renamed": renamed}))?;
    writeln!(io.err, "{} of {} actions changed", result.changed.len(), script.actions.len())?;
    for name in &result.changed {
        writeln!(io.err, "  {name}")?;
    }
    Ok(EXIT_OK)
}

fn cmd_replay(io: &mut Io<'_>, script: &Path, trajectory: &Path) -> Result<i32, Fatal> {
    let script = load_script(script)?;
    let traj = parse_trajectory(&read(trajectory)?).map_err(|e| Fatal(format!("{}: {e}", trajectory.display())))?;
    let report = replay(&script, &traj)?;
    io.json(&serde_json::to_value(&report.entries)?)?;
    writeln!(io.err, "{:>5} {:>8} {:>7} {:>8} {:>10}", "turn", "matched", "params", "dm_flag", "consistent")?;
    for e in &report.entries {
        writeln!(
            io.err,
            "{:>5} {:>8} {:>7} {:>8} {:>10}",
            e.turn, e.matched, e.params_valid, e.dm_flag, e.consistent
        )?;
    }
    writeln!(io.err, "{} inconsistencies", report.inconsistencies().len())?;
    Ok(EXIT_OK)
}

fn cmd_stats(io: &mut Io<'_>, records: &Path) -> Result<i32, Fatal> {
    let file = fs::File::open(records).map_err(|e| Fatal(format!("{}: {e}", records.display())))?;
    let records = import_jsonl(BufReader::new(file))?;
    let hist = error_run_histogram(&records);
    io.json(&serde_json::to_value(&hist)?)?;
    writeln!(io.err, "{} records", records.len())?;
    writeln!(io.err, "{:>10} {:>6}", "run length", "count")?;
    for (len, count) in &hist {
        writeln!(io.err, "{len:>10} {count:>6}")?;
    }
    Ok(EXIT_OK)
}

fn cmd_score(io: &mut Io<'_>, episodes: &Path) -> Result<i32, Fatal> {
    let mut eps = Vec::new();
    for (i, line) in read(episodes)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let e: Episode =
            serde_json::from_str(line).map_err(|e| Fatal(format!("{}:{}: {e}", episodes.display(), i + 1)))?;
        eps.push(e);
    }
    let mut tasks = serde_json::Map::new();
    let mut success = BTreeMap::new();
    let mut progress = BTreeMap::new();
    writeln!(io.err, "{:<12} {:>8} {:>9} {:>9}", "task", "episodes", "success", "progress")?;
    for r in group_episodes(&eps) {
        let a = aggregate(&r)?;
        writeln!(
            io.err,
            "{:<12} {:>8} {:>9.2} {:>9.2}",
            r.task,
            r.success.len(),
            a.success_rate,
            a.progress_rate
        )?;
        tasks.insert(
            r.task.clone(),
            json!({"episodes": r.success.len(), "success_rate": a.success_rate, "progress_rate": a.progress_rate}),
        );
        success.insert(r.task.clone(), a.success_rate);
        progress.insert(r.task, a.progress_rate);
    }
    let held_out = if HELD_OUT_WEIGHTS.iter().all(|(t, _)| success.contains_key(*t)) {
        let s = held_out_score(&success)?;
        let p = held_out_score(&progress)?;
        writeln!(io.err, "held-out weighted: success {:.2}, progress {:.2}", round2(s), round2(p))?;
        json!({"success": s, "progress": p})
    } else {
        Value::Null
    };
    io.json(&json!({"tasks": tasks, "held_out": held_out}))?;
    Ok(EXIT_OK)
}
