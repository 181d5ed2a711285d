//! Rewrites the household-style action templates with each perturbation
//! rule and checks that the rebuilt patterns accept the new surface forms
//! and reject the old ones.
//!
//! cargo run --example perturb_alfworld

use std::error::Error;
use std::fs;
use std::path::Path;

use refine_synth::perturbation::{perturb_action_spec, perturb_script, PerturbationRule};
use refine_synth::script::compile_verification_code;
use refine_synth::{parse_script, serialize_script, validate_script};

pub fn run() -> Result<(), Box<dyn Error>> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/perturbation/alfworld.json");
    let script = parse_script(&fs::read_to_string(path)?)?;

    let rules = [
        (
            "clean {obj} with {recep}",
            PerturbationRule::SynonymSwap {
                from: "with".into(),
                to: "using".into(),
            },
        ),
        (
            "go to {recep}",
            PerturbationRule::VerbRename {
                from: "go to".into(),
                to: "move to".into(),
            },
        ),
        (
            "take {obj} from {recep}",
            PerturbationRule::ArgReorder {
                from: "take {obj} from {recep}".into(),
                to: "from {recep} take {obj}".into(),
            },
        ),
    ];
    for (name, rule) in &rules {
        let spec = &script.actions[*name];
        let new = perturb_action_spec(spec, rule)?;
        let re = compile_verification_code(&new.verification_code)?;
        let old_instance = spec.template().first_instance(&spec.parameters).ok_or("no instance")?;
        let new_instance = new.template().first_instance(&new.parameters).ok_or("no instance")?;
        println!(
            "{name:<26} -> {:<26} accepts `{new_instance}`: {}, accepts `{old_instance}`: {}",
            new.name,
            re.is_match(&new_instance),
            re.is_match(&old_instance)
        );
    }

    let all: Vec<PerturbationRule> = rules
        .into_iter()
        .map(|(_, r)| r)
        .chain([PerturbationRule::WhitespaceSquash])
        .collect();
    let out = perturb_script(&script, &all)?;
    println!("\n{} actions changed; violations: {}", out.changed.len(), validate_script(&out.script).len());
    println!("conditions: {:?}", out.script.completion_conditions);
    let text = serialize_script(&out.script);
    println!("{}", text.lines().take(12).collect::<Vec<_>>().join("\n"));
    Ok(())
}

fn main() {
    if let Err(e) = run() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
