//! Synthesis, verification and compilation of self-refinement agent-tuning
//! data.
//!
//! The pipeline runs persona → script → DM/player trajectory → verification
//! → ReAct chat records with per-turn loss masks. Alongside it sit a
//! deterministic script interpreter for replay audits, action-template
//! perturbations for robustness studies, and scoring helpers.
//!
//! Runnable examples for each stage live in `examples/`.

pub mod chat;
pub mod cli;
pub mod dataset;
pub mod fsutil;
pub mod json;
pub mod metrics;
pub mod orchestrator;
pub mod perturbation;
pub mod runtime;
pub mod script;
pub mod template;
pub mod trajectory;
pub mod verifier;

pub use script::{parse_script, serialize_script, validate_script, ActionSpec, Persona, Script};
pub use trajectory::{parse_trajectory, serialize_trajectory, DmTurn, PlayerTurn, Trajectory, Turn};
pub use verifier::{match_action, verify_trajectory, MatchResult, Reason, SignalKind, VerificationSignal};
