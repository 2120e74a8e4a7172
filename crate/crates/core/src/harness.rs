//! Experiment configuration, orchestration and file output.
//!
//! An experiment is a single TOML document naming a system, a switching
//! signal, an initial state, integration settings, the certificates to
//! monitor and the verdicts the run is expected to produce. Runs are fully
//! determined by the document and its mandatory `seed`.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{sample_ball, Domain, ModeSet, SwitchedSystem, Trajectory, VectorField};
use crate::error::{Error, Result, ResultExt};
use crate::graph::{group_of, random_split_process, random_uniformly_connected_signal, Connectivity, Digraph, GraphProcess};
use crate::lyapunov::{
    check_assumption_v, check_assumption_w, consensus_distance, strict_decrease_window, Margins, MonitorReport,
    Monitored, PairCertificate, ScalarCertificate, WindowStatus,
};
use crate::signal::{random_signal, SwitchingSignal};
use crate::systems::{
    colinear_positions, make_epipole_network, make_linear_consensus, make_scaled_consensus, make_so3_axis_angle,
    smooth_transitions, stabilization_embed, Blend, EpipoleParams, ScaleMap, ScaleVariant, WeightProfile,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub seed: u64,
    pub system: SystemSpec,
    pub signal: SignalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub smoothing: Option<SmoothingSpec>,
    pub initial: InitialSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub monitor: MonitorSpec,
    #[serde(default)]
    pub expect: Expectations,
    #[serde(default)]
    pub output: OutputSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SystemSpec {
    Linear {
        n: usize,
        m: usize,
        #[serde(default)]
        weights: WeightProfile,
        #[serde(default = "default_domain")]
        domain: Domain,
    },
    Scaled {
        n: usize,
        m: usize,
        #[serde(default)]
        weights: WeightProfile,
        #[serde(default)]
        scale: ScaleMap,
        variant: ScaleVariant,
    },
    So3 {
        n: usize,
        #[serde(default)]
        weights: WeightProfile,
        radius: f64,
    },
    Epipole {
        n: usize,
        #[serde(default)]
        weights: WeightProfile,
        #[serde(default)]
        params: EpipoleParams,
        #[serde(default = "one")]
        spacing: f64,
    },
    /// Two-agent embedding of `ẏ = −rate_k·y` on `[−half_width, half_width]^m`.
    Stabilization {
        m: usize,
        rates: Vec<f64>,
        half_width: f64,
    },
}

fn default_domain() -> Domain {
    Domain::BallProduct { radius: 10.0 }
}

fn one() -> f64 {
    1.0
}

impl SystemSpec {
    pub fn n(&self) -> usize {
        match *self {
            SystemSpec::Linear { n, .. }
            | SystemSpec::Scaled { n, .. }
            | SystemSpec::So3 { n, .. }
            | SystemSpec::Epipole { n, .. } => n,
            SystemSpec::Stabilization { .. } => 2,
        }
    }

    pub fn m(&self) -> usize {
        match *self {
            SystemSpec::Linear { m, .. } | SystemSpec::Scaled { m, .. } | SystemSpec::Stabilization { m, .. } => m,
            SystemSpec::So3 { .. } => 3,
            SystemSpec::Epipole { .. } => 1,
        }
    }

    fn build(&self, graphs: &[Digraph]) -> Result<ModeSet> {
        match self {
            SystemSpec::Linear { n, m, weights, domain } => make_linear_consensus(*n, *m, graphs, weights, *domain),
            SystemSpec::Scaled {
                n,
                m,
                weights,
                scale,
                variant,
            } => make_scaled_consensus(*n, *m, graphs, weights, *scale, *variant),
            SystemSpec::So3 { n, weights, radius } => make_so3_axis_angle(*n, graphs, weights, *radius),
            SystemSpec::Epipole {
                n,
                weights,
                params,
                spacing,
            } => make_epipole_network(&colinear_positions(*n, *spacing), graphs, weights, *params),
            SystemSpec::Stabilization { m, rates, half_width } => {
                let fields = rates
                    .iter()
                    .map(|&r| {
                        Arc::new(move |_s: f64, y: &[f64], out: &mut [f64]| {
                            for (o, v) in out.iter_mut().zip(y) {
                                *o = -r * v;
                            }
                        }) as Arc<dyn VectorField>
                    })
                    .collect();
                stabilization_embed(fields, *m, Domain::Cube { half_width: *half_width }, true)
            }
        }
    }

    /// Graphs fixed by the system itself, if any.
    fn builtin_modes(&self) -> Option<usize> {
        match self {
            SystemSpec::Stabilization { rates, .. } => Some(rates.len()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SignalSpec {
    /// Generated mode library and signal, uniformly connected with `window`.
    Uniform {
        tau_d: f64,
        tau_u: f64,
        window: f64,
        connectivity: Connectivity,
    },
    /// Generated library whose agents form `groups` blocks that never talk.
    Split {
        tau_d: f64,
        tau_u: f64,
        window: f64,
        groups: usize,
    },
    /// Uniformly random modes over a system with built-in graphs.
    Random { tau_d: f64, tau_u: f64 },
    /// Mode graphs as in-neighbor lists and `(switch_time, mode)` pairs.
    Explicit {
        tau_d: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tau_u: Option<f64>,
        graphs: Vec<Vec<Vec<usize>>>,
        switches: Vec<(f64, usize)>,
    },
}

impl SignalSpec {
    pub fn tau_d(&self) -> f64 {
        match *self {
            SignalSpec::Uniform { tau_d, .. }
            | SignalSpec::Split { tau_d, .. }
            | SignalSpec::Random { tau_d, .. }
            | SignalSpec::Explicit { tau_d, .. } => tau_d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SmoothingSpec {
    pub tau_blend: f64,
    #[serde(default)]
    pub blend: Blend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialSpec {
    /// Every agent uniform in the closed ball of `radius` around `center`
    /// (the origin when absent).
    RandomBall {
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        center: Option<Vec<f64>>,
    },
    /// Every agent uniform in the system's domain.
    RandomDomain,
    Explicit { x: Vec<f64> },
    /// One random point in the ball of `radius` per block of a split signal,
    /// shared by all agents of the block.
    SplitGroups { radius: f64 },
    /// Agent 0 uniform in the ball of `radius`, the others at the origin.
    Anchored { radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    #[serde(default)]
    pub t0: f64,
    pub horizon: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VCertificate {
    SquaredNorm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WCertificate {
    SquaredDifference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitorSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<VCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<WCertificate>,
    /// Consensus threshold relative to the initial distance.
    pub tol_consensus: f64,
    /// Absolute distance below which strict-decrease windows are vacuous.
    pub tol_vacuous: f64,
    /// Connectivity notion checked for explicit and split signals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connectivity: Option<Connectivity>,
    pub margins: Margins,
}

impl Default for MonitorSpec {
    fn default() -> Self {
        MonitorSpec {
            v: None,
            w: None,
            tol_consensus: 1e-3,
            tol_vacuous: 1e-6,
            connectivity: None,
            margins: Margins::default(),
        }
    }
}

/// Declared verdicts; unset entries are not checked.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectations {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub consensus: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dist_constant: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connectivity: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumption_v: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumption_w: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict_decrease: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stays_in_domain: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default)]
    pub skip_jsonl: bool,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).context(&format!("loading {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the canonical serialization.
    /// Digest of the config with the output section cleared.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output = OutputSpec::default();
        let digest = Sha256::digest(canonical.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.run.step > 0.0 && self.run.horizon > 0.0) {
            return bad("run.step and run.horizon must be positive".into());
        }
        if !(self.run.t0.is_finite() && self.run.horizon.is_finite()) {
            return bad("run.t0 and run.horizon must be finite".into());
        }
        if !(self.monitor.tol_consensus > 0.0 && self.monitor.tol_vacuous > 0.0) {
            return bad("monitor thresholds must be positive".into());
        }
        let ms = &self.monitor.margins;
        if [ms.tol_decrease, ms.tol_state, ms.margin_strict, ms.tol_zero, ms.tol_monotone]
            .iter()
            .any(|&v| !(v > 0.0))
        {
            return bad("monitor margins must be positive".into());
        }
        match (&self.signal, self.system.builtin_modes()) {
            (SignalSpec::Random { .. }, None) => {
                return bad("signal kind 'random' needs a system with built-in graphs".into());
            }
            (SignalSpec::Uniform { .. } | SignalSpec::Split { .. }, Some(_)) => {
                return bad("this system fixes its own graphs; use signal kind 'random' or 'explicit'".into());
            }
            _ => {}
        }
        if matches!(self.initial, InitialSpec::SplitGroups { .. }) && !matches!(self.signal, SignalSpec::Split { .. }) {
            return bad("initial kind 'split_groups' needs a split signal".into());
        }
        if let InitialSpec::Explicit { x } = &self.initial {
            if x.len() != self.system.n() * self.system.m() {
                return bad(format!(
                    "initial.x has {} entries, expected {}",
                    x.len(),
                    self.system.n() * self.system.m()
                ));
            }
        }
        Ok(())
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// A built switched system with what is known about its connectivity.
#[derive(Debug, Clone)]
pub struct BuiltSystem {
    pub system: SwitchedSystem,
    /// Signal before smoothing, on which connectivity is certified.
    pub base_process: GraphProcess,
    pub connectivity: Option<ConnectivitySummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConnectivitySummary {
    pub kind: Connectivity,
    /// Window the verdict refers to; the certified one when `passed`.
    pub window: f64,
    pub passed: bool,
    pub windows_checked: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub witness: Option<f64>,
}

fn summarize_connectivity(process: &GraphProcess, window: f64, kind: Connectivity) -> ConnectivitySummary {
    let v = process.verify_uniform_connectivity(window, kind);
    ConnectivitySummary {
        kind,
        window,
        passed: v.passed && v.windows_checked > 0,
        windows_checked: v.windows_checked,
        witness: v.witness,
    }
}

/// Builds the mode family, signal and connectivity certificate of `cfg`.
pub fn build_system(cfg: &ExperimentConfig) -> Result<BuiltSystem> {
    cfg.validate()?;
    let n = cfg.system.n();
    let horizon = (cfg.run.t0, cfg.run.t0 + cfg.run.horizon);
    let (graphs, signal, connectivity) = match &cfg.signal {
        SignalSpec::Uniform {
            tau_d,
            tau_u,
            window,
            connectivity,
        } => {
            let (process, achieved) =
                random_uniformly_connected_signal(n, *tau_d, *tau_u, *window, horizon, *connectivity, cfg.seed)
                    .context("generating the switching signal")?;
            let summary = summarize_connectivity(&process, achieved, *connectivity);
            (process.mode_graphs().to_vec(), process.signal().clone(), Some(summary))
        }
        SignalSpec::Split {
            tau_d,
            tau_u,
            window,
            groups,
        } => {
            let process = random_split_process(n, *groups, *tau_d, *tau_u, *window, horizon, cfg.seed)
                .context("generating the split signal")?;
            let kind = cfg.monitor.connectivity.unwrap_or(Connectivity::Strong);
            let summary = summarize_connectivity(&process, *window, kind);
            (process.mode_graphs().to_vec(), process.signal().clone(), Some(summary))
        }
        SignalSpec::Random { tau_d, tau_u } => {
            let modes = cfg.system.builtin_modes().unwrap_or(1);
            let signal = random_signal(modes, *tau_d, *tau_u, horizon, cfg.seed)?;
            (Vec::new(), signal, None)
        }
        SignalSpec::Explicit {
            tau_d,
            tau_u,
            graphs,
            switches,
        } => {
            let graphs = graphs
                .iter()
                .map(|lists| Digraph::from_neighbor_lists(lists))
                .collect::<Result<Vec<_>>>()
                .context("reading signal.graphs")?;
            let (times, ids) = switches.iter().copied().unzip();
            let signal = SwitchingSignal::new(horizon.0, horizon.1, times, ids, *tau_d, *tau_u)?;
            (graphs, signal, None)
        }
    };
    let modes = cfg.system.build(&graphs).context("building the mode family")?;
    let base = SwitchedSystem::new(modes, signal)?;
    let base_process = base.graph_process().clone();
    let connectivity = match (connectivity, cfg.monitor.connectivity) {
        (Some(c), _) => Some(c),
        (None, Some(kind)) => Some(match base_process.minimal_window(cfg.run.horizon, kind, 1e-3 * cfg.signal.tau_d()) {
            Some(w) => summarize_connectivity(&base_process, w, kind),
            None => summarize_connectivity(&base_process, cfg.run.horizon, kind),
        }),
        (None, None) => None,
    };
    let system = match cfg.smoothing {
        Some(sm) => {
            let (modes, signal) = smooth_transitions(base.mode_set(), base.signal(), sm.tau_blend, sm.blend)?;
            SwitchedSystem::new(modes, signal)?
        }
        None => base,
    };
    Ok(BuiltSystem {
        system,
        base_process,
        connectivity,
    })
}

/// The initial state `x0` described by `cfg.initial`.
pub fn initial_state(cfg: &ExperimentConfig, domain: Domain) -> Result<Vec<f64>> {
    let (n, m) = (cfg.system.n(), cfg.system.m());
    let mut rng = cfg.rng(1);
    Ok(match &cfg.initial {
        InitialSpec::RandomBall { radius, center } => {
            let c = center.clone().unwrap_or_else(|| vec![0.0; m]);
            if c.len() != m {
                return Err(Error::Config(format!("initial.center needs {m} entries")));
            }
            (0..n)
                .flat_map(|_| sample_ball(&mut rng, m, *radius).into_iter().zip(&c).map(|(a, b)| a + b).collect::<Vec<_>>())
                .collect()
        }
        InitialSpec::RandomDomain => domain.sample(&mut rng, n, m),
        InitialSpec::Explicit { x } => x.clone(),
        InitialSpec::SplitGroups { radius } => {
            let SignalSpec::Split { groups, .. } = cfg.signal else {
                return Err(Error::Config("split_groups needs a split signal".into()));
            };
            let centers: Vec<Vec<f64>> = (0..groups).map(|_| sample_ball(&mut rng, m, *radius)).collect();
            let block = group_of(n, groups);
            (0..n).flat_map(|a| centers[block(a)].clone()).collect()
        }
        InitialSpec::Anchored { radius } => {
            let mut x = vec![0.0; n * m];
            x[..m].copy_from_slice(&sample_ball(&mut rng, m, *radius));
            x
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub passed: bool,
    pub violations: usize,
    pub warnings: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub first_violation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step_increase: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub monitored: Monitored,
    pub window: f64,
    pub status: WindowStatus,
    pub checks: usize,
    pub failures: usize,
    pub vacuous: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_decrease: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EtaTime {
    pub eta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub name: String,
    pub seed: u64,
    pub config_hash: String,
    pub samples: usize,
    pub dist_initial: f64,
    pub dist_final: f64,
    /// Largest `|dist(t) − dist(t0)|` along the run.
    pub dist_drift: f64,
    pub consensus_reached: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_exit: Option<f64>,
    /// Time after which `dist < eta·dist_initial` holds to the end.
    pub time_to_eta: Vec<EtaTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub connectivity: Option<ConnectivitySummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumption_v: Option<CheckSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assumption_w: Option<CheckSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub strict_decrease: Option<WindowSummary>,
    pub verdicts_as_declared: bool,
    pub mismatches: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: ExperimentConfig,
    pub system: SwitchedSystem,
    pub trajectory: Trajectory,
    pub monitor: MonitorReport,
    pub dist: Vec<f64>,
    pub summary: Summary,
    /// Files written, relative to the output directory.
    pub files: Vec<String>,
}

pub const ETA_GRID: [f64; 4] = [1e-1, 1e-2, 1e-3, 1e-6];

/// Start of the final run of samples with `dist < threshold`, if the run
/// ends below the threshold.
fn sustained_below(times: &[f64], dist: &[f64], threshold: f64) -> Option<f64> {
    match dist.iter().rposition(|&d| d >= threshold) {
        None => times.first().copied(),
        Some(k) if k + 1 < dist.len() => Some(times[k + 1]),
        Some(_) => None,
    }
}

fn check_summary(report: &MonitorReport, which: Monitored) -> CheckSummary {
    CheckSummary {
        passed: report.passed(),
        violations: report.violations.len(),
        warnings: report.warnings.len(),
        first_violation: report
            .violations
            .iter()
            .min_by(|a, b| a.t.total_cmp(&b.t))
            .map(|f| format!("t = {}: {:?} ({})", f.t, f.kind, f.witness)),
        max_step_increase: report.max_step_increase(which),
    }
}

/// Builds, integrates and monitors `cfg`, compares the outcome with the
/// declared expectations, and writes outputs when `cfg.output.dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult> {
    let built = build_system(cfg)?;
    let sys = built.system;
    let x0 = initial_state(cfg, sys.mode_set().domain())?;
    let (t0, t_end) = (cfg.run.t0, cfg.run.t0 + cfg.run.horizon);
    let traj = sys.integrate(&x0, t0, t_end, cfg.run.step).context("integrating")?;
    let m = sys.m();
    let dist: Vec<f64> = traj.samples().map(|(_, x)| consensus_distance(x, m)).collect();

    let mut monitor = MonitorReport::default();
    let mut assumption_v = None;
    let mut assumption_w = None;
    let inside = traj.domain_exit.is_none();
    if inside {
        if let Some(VCertificate::SquaredNorm) = cfg.monitor.v {
            let r = check_assumption_v(&ScalarCertificate::squared_norm(), &sys, &traj, &cfg.monitor.margins)?;
            assumption_v = Some(check_summary(&r, Monitored::V));
            monitor.merge(r)?;
        }
        if let Some(WCertificate::SquaredDifference) = cfg.monitor.w {
            let r = check_assumption_w(&PairCertificate::squared_difference(), &sys, &traj, &cfg.monitor.margins)?;
            assumption_w = Some(check_summary(&r, Monitored::W));
            monitor.merge(r)?;
        }
    }

    let strict_decrease = match (&built.connectivity, inside) {
        (Some(c), true) if c.passed && !monitor.samples.is_empty() => {
            let which = if cfg.monitor.v.is_some() { Monitored::V } else { Monitored::W };
            let window = sys.n() as f64 * (c.window + 2.0 * cfg.signal.tau_d());
            let v = strict_decrease_window(&monitor, &sys, window, which, cfg.monitor.tol_vacuous);
            Some(WindowSummary {
                monitored: which,
                window,
                status: v.status,
                checks: v.checks.len(),
                failures: v.failures.len(),
                vacuous: v.vacuous,
                min_decrease: v.min_decrease(),
            })
        }
        _ => None,
    };

    let dist0 = dist[0];
    let time_to_eta = ETA_GRID
        .iter()
        .map(|&eta| EtaTime {
            eta,
            time: sustained_below(&traj.times, &dist, eta * dist0),
        })
        .collect();
    let consensus_reached = inside && (dist0 == 0.0 || sustained_below(&traj.times, &dist, cfg.monitor.tol_consensus * dist0).is_some());
    let dist_drift = dist.iter().map(|d| (d - dist0).abs()).fold(0.0, f64::max);

    let mut summary = Summary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        config_hash: cfg.hash()?,
        samples: traj.len(),
        dist_initial: dist0,
        dist_final: *dist.last().unwrap(),
        dist_drift,
        consensus_reached,
        domain_exit: traj.domain_exit,
        time_to_eta,
        connectivity: built.connectivity,
        assumption_v,
        assumption_w,
        strict_decrease,
        verdicts_as_declared: true,
        mismatches: Vec::new(),
    };
    summary.mismatches = compare(&cfg.expect, &summary);
    summary.verdicts_as_declared = summary.mismatches.is_empty();

    let mut result = ExperimentResult {
        config: cfg.clone(),
        system: sys,
        trajectory: traj,
        monitor,
        dist,
        summary,
        files: Vec::new(),
    };
    if let Some(dir) = &cfg.output.dir {
        result.files = write_outputs(&result, dir)?;
    }
    Ok(result)
}

fn compare(expect: &Expectations, s: &Summary) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |name: &str, want: Option<bool>, got: Option<bool>| {
        if let Some(want) = want {
            match got {
                Some(got) if got == want => {}
                Some(got) => out.push(format!("{name}: expected {want}, got {got}")),
                None => out.push(format!("{name}: expected {want}, not evaluated")),
            }
        }
    };
    check("consensus", expect.consensus, Some(s.consensus_reached));
    check("dist_constant", expect.dist_constant, Some(s.dist_drift <= 1e-9));
    check("connectivity", expect.connectivity, s.connectivity.as_ref().map(|c| c.passed));
    check("assumption_v", expect.assumption_v, s.assumption_v.as_ref().map(|c| c.passed));
    check("assumption_w", expect.assumption_w, s.assumption_w.as_ref().map(|c| c.passed));
    check(
        "strict_decrease",
        expect.strict_decrease,
        s.strict_decrease
            .as_ref()
            .and_then(|w| (w.status != WindowStatus::InsufficientHorizon).then_some(w.status == WindowStatus::Pass)),
    );
    check("stays_in_domain", expect.stays_in_domain, Some(s.domain_exit.is_none()));
    out
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| Error::io(path, e))?))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:e}")).unwrap_or_default()
}

#[derive(Serialize)]
struct TrajectoryRecord<'a> {
    t: f64,
    mode_id: usize,
    is_switch: bool,
    x: &'a [f64],
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    seed: u64,
    config_hash: &'a str,
    generator: String,
    files: &'a [String],
}

fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let traj = &result.trajectory;
    let mut files = Vec::new();

    let path = dir.join("config.toml");
    fs::write(&path, result.config.to_toml()?).map_err(|e| Error::io(&path, e))?;
    files.push("config.toml".to_string());

    let path = dir.join("signal.toml");
    let text = toml::to_string(result.system.signal()).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push("signal.toml".to_string());

    let path = dir.join("trajectory.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec!["t".to_string(), "mode_id".into(), "is_switch".into()];
    header.extend((0..traj.dim()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for (k, (t, x)) in traj.samples().enumerate() {
        let mut row = vec![format!("{t:e}"), traj.mode_ids[k].to_string(), traj.is_switch(k).to_string()];
        row.extend(x.iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    files.push("trajectory.csv".to_string());

    if !result.config.output.skip_jsonl {
        let path = dir.join("trajectory.jsonl");
        let mut w = create(&path)?;
        for (k, (t, x)) in traj.samples().enumerate() {
            let rec = TrajectoryRecord {
                t,
                mode_id: traj.mode_ids[k],
                is_switch: traj.is_switch(k),
                x,
            };
            let line = serde_json::to_string(&rec).map_err(|e| Error::Config(e.to_string()))?;
            writeln!(w, "{line}").map_err(|e| Error::io(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push("trajectory.jsonl".to_string());
    }

    if !result.monitor.samples.is_empty() {
        let path = dir.join("monitor.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["t", "max_v", "max_w", "dist_to_A", "dini_v", "dini_w", "argmax_v", "argmax_w"])?;
        for s in &result.monitor.samples {
            let av: Vec<String> = s.argmax_v.iter().map(|i| i.to_string()).collect();
            let aw: Vec<String> = s.argmax_w.iter().map(|(i, j)| format!("{i}-{j}")).collect();
            w.write_record([
                format!("{:e}", s.t),
                opt(s.max_v),
                opt(s.max_w),
                format!("{:e}", s.dist),
                opt(s.dini_v),
                opt(s.dini_w),
                av.join(" "),
                aw.join(" "),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push("monitor.csv".to_string());

        let path = dir.join("violations.csv");
        let mut w = csv::Writer::from_writer(create(&path)?);
        w.write_record(["severity", "t", "kind", "witness"])?;
        for (severity, list) in [("violation", &result.monitor.violations), ("warning", &result.monitor.warnings)] {
            for f in list {
                w.write_record([severity.to_string(), format!("{:e}", f.t), format!("{:?}", f.kind), f.witness.clone()])?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        files.push("violations.csv".to_string());
    }

    files.extend(emit_plotdata(result, dir)?);

    let path = dir.join("summary.toml");
    let text = toml::to_string(&result.summary).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    files.push("summary.toml".to_string());

    files.push("manifest.toml".to_string());
    let manifest = Manifest {
        name: &result.summary.name,
        seed: result.summary.seed,
        config_hash: &result.summary.config_hash,
        generator: format!("consensus-core {}", env!("CARGO_PKG_VERSION")),
        files: &files,
    };
    let path = dir.join("manifest.toml");
    let text = toml::to_string(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(files)
}

/// Writes `plotdata.csv` with columns `t, dist_to_A, max_v, max_w, mode_id`
/// followed by the `mn` state coordinates. Returns the file names written.
pub fn emit_plotdata(result: &ExperimentResult, dir: &Path) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let traj = &result.trajectory;
    let path = dir.join("plotdata.csv");
    let mut w = csv::Writer::from_writer(create(&path)?);
    let mut header = vec![
        "t".to_string(),
        "dist_to_A".into(),
        "max_v".into(),
        "max_w".into(),
        "mode_id".into(),
    ];
    header.extend((0..traj.dim()).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    let monitored = result.monitor.samples.len() == traj.len();
    for (k, (t, x)) in traj.samples().enumerate() {
        let (mv, mw) = if monitored {
            (result.monitor.samples[k].max_v, result.monitor.samples[k].max_w)
        } else {
            (None, None)
        };
        let mut row = vec![
            format!("{t:e}"),
            format!("{:e}", result.dist[k]),
            opt(mv),
            opt(mw),
            traj.mode_ids[k].to_string(),
        ];
        row.extend(x.iter().map(|v| format!("{v:e}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(vec!["plotdata.csv".to_string()])
}

/// Replaces the value at a dotted path such as `run.step` or
/// `signal.window`, creating the final key if needed.
pub fn set_path(doc: &mut toml::Value, path: &str, value: toml::Value) -> Result<()> {
    let mut cur = doc;
    let keys: Vec<&str> = path.split('.').collect();
    for (k, key) in keys.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("'{}' is not a table", keys[..k].join("."))))?;
        if k + 1 == keys.len() {
            table.insert(key.to_string(), value);
            return Ok(());
        }
        cur = table
            .get_mut(*key)
            .ok_or_else(|| Error::Config(format!("unknown config field '{}'", keys[..=k].join("."))))?;
    }
    Err(Error::Config("empty axis path".into()))
}

/// Parses a sweep value: integers, floats and booleans as such, anything
/// else as a string.
pub fn parse_axis_value(text: &str) -> toml::Value {
    let text = text.trim();
    if let Ok(i) = text.parse::<i64>() {
        toml::Value::Integer(i)
    } else if let Ok(f) = text.parse::<f64>() {
        toml::Value::Float(f)
    } else if let Ok(b) = text.parse::<bool>() {
        toml::Value::Boolean(b)
    } else {
        toml::Value::String(text.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub consensus_reached: Option<bool>,
    pub verdicts_as_declared: Option<bool>,
    /// Time to `tol_consensus` relative distance.
    pub time_to_threshold: Option<f64>,
    pub dist_final: Option<f64>,
}

/// Runs the cross product of `values` on `axis` with `seeds` (the
/// template's own seed when empty) in parallel. Per-cell failures become
/// rows with `error` set. Cell outputs go to `<out_dir>/<value>_seed<seed>`
/// when the template has an output directory.
pub fn sweep(template: &ExperimentConfig, axis: &str, values: &[toml::Value], seeds: &[u64]) -> Result<Vec<SweepRow>> {
    let base = toml::Value::try_from(template).map_err(|e| Error::Config(e.to_string()))?;
    let seeds = if seeds.is_empty() { vec![template.seed] } else { seeds.to_vec() };
    let cells: Vec<(toml::Value, u64)> = values
        .iter()
        .flat_map(|v| seeds.iter().map(move |&s| (v.clone(), s)))
        .collect();
    let rows = cells
        .par_iter()
        .map(|(value, seed)| {
            let label = match value {
                toml::Value::String(s) => s.clone(),
                v => v.to_string(),
            };
            let mut row = SweepRow {
                axis: axis.to_string(),
                value: label.clone(),
                seed: *seed,
                error: None,
                consensus_reached: None,
                verdicts_as_declared: None,
                time_to_threshold: None,
                dist_final: None,
            };
            let outcome = (|| {
                let mut doc = base.clone();
                set_path(&mut doc, axis, value.clone())?;
                set_path(&mut doc, "seed", toml::Value::Integer(*seed as i64))?;
                let mut cfg: ExperimentConfig = doc.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
                cfg.validate()?;
                if let Some(dir) = &template.output.dir {
                    let safe: String = label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect();
                    cfg.output.dir = Some(dir.join(format!("{safe}_seed{seed}")));
                }
                run_experiment(&cfg)
            })();
            match outcome {
                Ok(r) => {
                    let s = &r.summary;
                    row.consensus_reached = Some(s.consensus_reached);
                    row.verdicts_as_declared = Some(s.verdicts_as_declared);
                    row.time_to_threshold = sustained_below(&r.trajectory.times, &r.dist, r.config.monitor.tol_consensus * s.dist_initial);
                    row.dist_final = Some(s.dist_final);
                }
                Err(e) => row.error = Some(e.to_string()),
            }
            row
        })
        .collect();
    Ok(rows)
}

pub fn write_sweep_csv(rows: &[SweepRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["axis", "value", "seed", "consensus_reached", "verdicts_as_declared", "time_to_threshold", "dist_final", "error"])?;
    let b = |v: Option<bool>| v.map(|v| v.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.axis.clone(),
            r.value.clone(),
            r.seed.to_string(),
            b(r.consensus_reached),
            b(r.verdicts_as_declared),
            opt(r.time_to_threshold),
            opt(r.dist_final),
            r.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub const PRESETS: [(&str, &str); 8] = [
    ("strong_linear", include_str!("../presets/strong_linear.toml")),
    ("split_groups", include_str!("../presets/split_groups.toml")),
    ("quasi_strong", include_str!("../presets/quasi_strong.toml")),
    ("so3", include_str!("../presets/so3.toml")),
    ("epipole", include_str!("../presets/epipole.toml")),
    ("scaled_states", include_str!("../presets/scaled_states.toml")),
    ("smoothing", include_str!("../presets/smoothing.toml")),
    ("stabilization", include_str!("../presets/stabilization.toml")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let (_, text) = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Config(format!("unknown preset '{name}'")))?;
    ExperimentConfig::from_toml(text).context(&format!("preset {name}"))
}
