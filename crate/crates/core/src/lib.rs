//! Simulation and verification of consensus in multi-agent systems whose
//! interaction graph switches under dwell-time constraints.
//!
//! The building blocks are re-exported at the crate root:
//!
//! * [`signal`]: switching signals, reset clocks and their re-partitions,
//! * [`graph`]: interaction digraphs, union graphs, uniform connectivity,
//! * [`dynamics`]: mode families and the switch-aligned RK4 integrator,
//! * [`lyapunov`]: max-of-V / max-of-W monitors and assumption checkers,
//! * [`systems`]: ready-made consensus laws (linear, scaled, SO(3), epipole),
//! * [`harness`]: experiment configs, runs, sweeps and file output.

pub mod dynamics;
pub mod error;
pub mod graph;
pub mod harness;
pub mod lyapunov;
pub mod signal;
pub mod systems;

pub use dynamics::{
    invariance_probe, validate_locality, Domain, InvarianceProbe, InvarianceReport, LocalityReport, Mode, ModeSet,
    SwitchedSystem, Trajectory, VectorField,
};
pub use error::{Error, Result};
pub use graph::{random_uniformly_connected_signal, Connectivity, ConnectivityVerdict, Digraph, GraphProcess};
pub use signal::{random_signal, ModeId, SwitchingSignal, TimeShiftTable};
pub use harness::{run_experiment, ExperimentConfig, ExperimentResult, Summary};
pub use lyapunov::{
    check_assumption_v, check_assumption_w, consensus_distance, max_v, max_w, stability_radius, strict_decrease_window,
    Margins, MonitorReport, PairCertificate, ScalarCertificate,
};
pub use systems::{
    make_epipole_network, make_linear_consensus, make_scaled_consensus, make_so3_axis_angle, smooth_transitions,
    stabilization_embed, ScaleMap, ScaleVariant, WeightProfile,
};
