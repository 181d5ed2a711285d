//! Compiles the bundled exemplar trajectory under every mask mode and shows
//! which assistant turns a trainer would learn from.
//!
//! cargo run --example compile_dataset

use std::error::Error;

use refine_synth::chat::ChatRole;
use refine_synth::dataset::{compile_record, masked_loss, CompileError, MaskMode, RecordMeta};
use refine_synth::orchestrator::Exemplars;

pub fn run() -> Result<(), Box<dyn Error>> {
    let ex = Exemplars::builtin();
    let (script, traj) = &ex.trajectory;
    let meta = RecordMeta {
        id: "exemplar".into(),
        persona_id: "exemplar-1".into(),
    };

    for mode in [MaskMode::Standard, MaskMode::MaskRefinement, MaskMode::LearnAll, MaskMode::NoRefinement] {
        let record = match compile_record(script, traj, mode, &meta) {
            Ok(r) => r,
            Err(CompileError::ModeUnavailable(m)) => {
                println!("{m}: not derivable from a refinement trajectory");
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        println!("{mode}: masked assistant turns {:?}", record.error_turn_indices);
        for m in record.messages.iter().filter(|m| m.role == ChatRole::Assistant) {
            let action = m.content.lines().last().unwrap_or_default();
            println!("  [{}] {action}", if m.loss { "learn" } else { "mask " });
        }
        // A unit loss per assistant message counts the trainable ones.
        let ones = vec![1.0; record.assistant_mask().len()];
        println!("  trainable messages: {}", masked_loss(&record, &ones)?);
    }
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
