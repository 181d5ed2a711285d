//! Reads compiled records and tallies runs of consecutive masked turns.
//!
//! cargo run --example error_stats [records.jsonl]

use std::error::Error;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use refine_synth::dataset::{error_run_histogram, import_jsonl};

pub fn run_on(path: &Path) -> Result<(), Box<dyn Error>> {
    let records = import_jsonl(BufReader::new(File::open(path)?))?;
    let longest = records.iter().map(|r| r.assistant_mask().len()).max().unwrap_or(0);
    println!("{} records, longest has {longest} assistant turns", records.len());
    for (len, count) in error_run_histogram(&records) {
        println!("{len} consecutive masked turn(s): {count}");
    }
    Ok(())
}

pub fn run() -> Result<(), Box<dyn Error>> {
    run_on(&Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/e2e/golden/records.jsonl"))
}

fn main() {
    let result = match std::env::args_os().nth(1) {
        Some(p) => run_on(&PathBuf::from(p)),
        None => run(),
    };
    if let Err(e) = result {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
