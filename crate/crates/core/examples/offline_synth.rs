//! End-to-end generation without a network: personas are sampled, the
//! synthetic model plays generator, and accepted pairs are compiled.
//!
//! cargo run --example offline_synth

use std::error::Error;
use std::fs;
use std::path::Path;

use refine_synth::dataset::{compile_record, MaskMode, RecordMeta};
use refine_synth::orchestrator::synthetic::SyntheticModel;
use refine_synth::orchestrator::{
    load_personas, sample_personas, synthesize_all, Exemplars, GenerationConfig, RateLimitedClient,
};

pub fn run() -> Result<(), Box<dyn Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/personas/corpus.jsonl");
    let corpus = load_personas(fs::read_to_string(path)?.as_bytes())?;
    let cfg = GenerationConfig {
        seed: 11,
        ..GenerationConfig::default()
    };
    let personas = sample_personas(&corpus, 12, cfg.seed)?;
    let client = RateLimitedClient::new(SyntheticModel, 4, None);

    let mut masked = 0;
    for outcome in synthesize_all(&personas, &client, &cfg, &Exemplars::builtin(), 4) {
        let o = outcome?;
        let status = match (&o.script, &o.trajectory) {
            (Some(s), Some(t)) if o.accepted => {
                let meta = RecordMeta {
                    id: o.persona.id.clone(),
                    persona_id: o.persona.id.clone(),
                };
                let record = compile_record(s, t, MaskMode::Standard, &meta)?;
                masked += record.masked_count();
                format!("accepted, {} turns, masked {:?}", t.len(), record.error_turn_indices)
            }
            _ => format!("rejected: {}", serde_json::to_string(&o.failure)?),
        };
        println!("{:<12} calls={} {status}", o.persona.id, o.calls_used);
    }
    println!("masked assistant messages in total: {masked}");
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
