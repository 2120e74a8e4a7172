//! Shared fixtures for the criterion benches.

use consensus_core::harness::{build_system, initial_state, preset};
use consensus_core::{Connectivity, GraphProcess, SwitchedSystem};

/// A preset's system with its initial state, over `horizon`.
pub fn preset_system(name: &str, horizon: f64) -> (SwitchedSystem, Vec<f64>) {
    let mut cfg = preset(name).expect("bundled preset");
    cfg.run.horizon = horizon;
    let built = build_system(&cfg).expect("preset builds");
    let x0 = initial_state(&cfg, built.system.mode_set().domain()).expect("initial state");
    (built.system, x0)
}

/// Strongly connected random graph process on `n` agents.
pub fn strong_process(n: usize, horizon: f64, seed: u64) -> GraphProcess {
    consensus_core::random_uniformly_connected_signal(n, 0.1, 0.2, 1.0, (0.0, horizon), Connectivity::Strong, seed)
        .expect("generator succeeds")
        .0
}
