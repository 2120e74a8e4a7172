//! Finite mode families with reset-clock time dependence, and fixed-step
//! integration of the switched system `ẋ = f̃_{σ(t)}(t − γ_σ(t), x)`.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{AgentId, Digraph, GraphProcess};
use crate::signal::{random_signal, ModeId, SwitchingSignal, TimeShiftTable};

/// A mode's right-hand side `f̃_k(s, x)` on the stacked state `x ∈ R^{mn}`,
/// where `s` is the reset clock.
pub trait VectorField: Send + Sync {
    fn eval(&self, s: f64, x: &[f64], out: &mut [f64]);
}

impl<F> VectorField for F
where
    F: Fn(f64, &[f64], &mut [f64]) + Send + Sync,
{
    fn eval(&self, s: f64, x: &[f64], out: &mut [f64]) {
        self(s, x, out)
    }
}

/// Compact region `D` the states live in, given per agent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum Domain {
    /// Every agent in the closed ball of this radius around the origin.
    BallProduct { radius: f64 },
    /// Every coordinate in `[-half_width, half_width]`.
    Cube { half_width: f64 },
}

impl Domain {
    pub fn validate(&self) -> Result<()> {
        let r = match *self {
            Domain::BallProduct { radius } => radius,
            Domain::Cube { half_width } => half_width,
        };
        if r.is_finite() && r > 0.0 {
            Ok(())
        } else {
            Err(Error::Argument(format!("domain {self:?} must contain the origin in its interior")))
        }
    }

    pub fn contains_agent(&self, y: &[f64]) -> bool {
        match *self {
            Domain::BallProduct { radius } => norm(y) <= radius,
            Domain::Cube { half_width } => y.iter().all(|v| v.abs() <= half_width),
        }
    }

    pub fn contains(&self, x: &[f64], m: usize) -> bool {
        x.chunks_exact(m).all(|y| self.contains_agent(y))
    }

    /// Whether `(B̄_{eps,m})^n ⊆ D`.
    pub fn contains_ball_product(&self, eps: f64) -> bool {
        eps >= 0.0
            && match *self {
                Domain::BallProduct { radius } => eps <= radius,
                Domain::Cube { half_width } => eps <= half_width,
            }
    }

    /// Uniform sample of one agent's slice.
    pub fn sample_agent(&self, rng: &mut impl Rng, m: usize) -> Vec<f64> {
        match *self {
            Domain::BallProduct { radius } => sample_ball(rng, m, radius),
            Domain::Cube { half_width } => (0..m).map(|_| rng.gen_range(-half_width..=half_width)).collect(),
        }
    }

    pub fn sample(&self, rng: &mut impl Rng, n: usize, m: usize) -> Vec<f64> {
        (0..n).flat_map(|_| self.sample_agent(rng, m)).collect()
    }
}

pub fn norm(y: &[f64]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Uniform sample from the closed ball of `radius` in `R^m`.
pub fn sample_ball(rng: &mut impl Rng, m: usize, radius: f64) -> Vec<f64> {
    loop {
        let dir: Vec<f64> = (0..m).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let len = norm(&dir);
        if len > 1e-12 {
            let r = radius * rng.gen::<f64>().powf(1.0 / m as f64);
            return dir.into_iter().map(|v| v * r / len).collect();
        }
    }
}

#[derive(Clone)]
pub struct Mode {
    pub field: Arc<dyn VectorField>,
    pub graph: Digraph,
    pub time_invariant: bool,
}

impl fmt::Debug for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Mode")
            .field("graph", &self.graph)
            .field("time_invariant", &self.time_invariant)
            .finish_non_exhaustive()
    }
}

impl Mode {
    pub fn new(field: impl VectorField + 'static, graph: Digraph, time_invariant: bool) -> Self {
        Mode {
            field: Arc::new(field),
            graph,
            time_invariant,
        }
    }
}

/// The finite family `F` together with the state layout and domain.
#[derive(Debug, Clone)]
pub struct ModeSet {
    m: usize,
    n: usize,
    modes: Vec<Mode>,
    domain: Domain,
}

impl ModeSet {
    pub fn new(m: usize, n: usize, modes: Vec<Mode>, domain: Domain) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::Argument("state dimension and agent count must be positive".into()));
        }
        if modes.is_empty() {
            return Err(Error::Argument("mode set must contain at least one mode".into()));
        }
        if let Some(k) = modes.iter().position(|md| md.graph.n() != n) {
            return Err(Error::Argument(format!("mode {k} graph is not on {n} agents")));
        }
        domain.validate()?;
        Ok(ModeSet { m, n, modes, domain })
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m * self.n
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn with_domain(mut self, domain: Domain) -> Result<Self> {
        domain.validate()?;
        self.domain = domain;
        Ok(self)
    }

    pub fn graphs(&self) -> Vec<Digraph> {
        self.modes.iter().map(|md| md.graph.clone()).collect()
    }

    pub fn all_time_invariant(&self) -> bool {
        self.modes.iter().all(|md| md.time_invariant)
    }

    pub fn eval(&self, mode: ModeId, s: f64, x: &[f64], out: &mut [f64]) {
        self.modes[mode].field.eval(s, x, out);
    }

    /// The family `F′` of a time-shift expansion: new mode `id` evaluates its
    /// source mode with the reset clock advanced by the table offset.
    pub fn time_shifted(&self, table: &TimeShiftTable) -> Result<ModeSet> {
        let modes = table
            .entries
            .iter()
            .map(|&(src, offset)| {
                let base = self
                    .modes
                    .get(src)
                    .ok_or_else(|| Error::Argument(format!("time-shift table references mode {src}")))?;
                let inner = Arc::clone(&base.field);
                Ok(Mode {
                    field: Arc::new(move |s: f64, x: &[f64], out: &mut [f64]| inner.eval(s + offset, x, out)),
                    graph: base.graph.clone(),
                    time_invariant: base.time_invariant,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ModeSet::new(self.m, self.n, modes, self.domain)
    }
}

/// A mode family driven by a switching signal.
#[derive(Debug, Clone)]
pub struct SwitchedSystem {
    modes: ModeSet,
    signal: SwitchingSignal,
    graph_process: GraphProcess,
}

/// Sampled solution of a switched system.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub m: usize,
    pub n: usize,
    pub times: Vec<f64>,
    /// Row-major: sample `k` occupies `states[k*mn .. (k+1)*mn]`.
    pub states: Vec<f64>,
    pub mode_ids: Vec<ModeId>,
    /// Indices of samples taken exactly at a switch time.
    pub switch_marks: Vec<usize>,
    /// First sample time at which the state was found outside `D`.
    pub domain_exit: Option<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.m * self.n
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.states[k * d..(k + 1) * d]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn is_switch(&self, k: usize) -> bool {
        self.switch_marks.binary_search(&k).is_ok()
    }

    /// Index of the first sample at or after `t`.
    pub fn index_at_or_after(&self, t: f64) -> Option<usize> {
        let k = self.times.partition_point(|&s| s < t);
        (k < self.len()).then_some(k)
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, &[f64])> + '_ {
        self.times.iter().copied().zip(self.states.chunks_exact(self.dim()))
    }

    fn push(&mut self, t: f64, x: &[f64], mode: ModeId, switch: bool) {
        if switch {
            self.switch_marks.push(self.times.len());
        }
        self.times.push(t);
        self.states.extend_from_slice(x);
        self.mode_ids.push(mode);
    }
}

impl SwitchedSystem {
    pub fn new(modes: ModeSet, signal: SwitchingSignal) -> Result<Self> {
        if signal.mode_span() > modes.len() {
            return Err(Error::Argument(format!(
                "signal uses mode {} but the family has {} modes",
                signal.mode_span() - 1,
                modes.len()
            )));
        }
        let graph_process = GraphProcess::new(modes.graphs(), signal.clone())?;
        Ok(SwitchedSystem {
            modes,
            signal,
            graph_process,
        })
    }

    pub fn mode_set(&self) -> &ModeSet {
        &self.modes
    }

    pub fn signal(&self) -> &SwitchingSignal {
        &self.signal
    }

    pub fn graph_process(&self) -> &GraphProcess {
        &self.graph_process
    }

    pub fn m(&self) -> usize {
        self.modes.m
    }

    pub fn n(&self) -> usize {
        self.modes.n
    }

    pub fn dim(&self) -> usize {
        self.modes.dim()
    }

    /// Replaces an unbounded signal by its equal-split bounded version. Only
    /// allowed when every mode is time-invariant, since splitting resets the
    /// clock.
    pub fn with_bounded_signal(&self, tau_u_target: f64) -> Result<Self> {
        if !self.modes.all_time_invariant() {
            return Err(Error::Argument(
                "bounded re-partition changes the dynamics of time-varying modes".into(),
            ));
        }
        Self::new(self.modes.clone(), self.signal.normalize_bounded(tau_u_target)?)
    }

    /// The equivalent system over the time-shifted family with dwells in
    /// `[tau_d, 2·tau_d)`.
    pub fn expand_timeshift(&self) -> Result<Self> {
        let (signal, table) = self.signal.expand_timeshift(self.modes.len())?;
        Self::new(self.modes.time_shifted(&table)?, signal)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::Argument(format!("state has length {}, expected {}", x.len(), self.dim())))
        }
    }

    /// `f(t, x) = f̃_{σ(t)}(t − γ_σ(t), x)`.
    pub fn rhs(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim()];
        self.rhs_into(t, x, &mut out)?;
        Ok(out)
    }

    pub fn rhs_into(&self, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_dim(x)?;
        let k = self.signal.interval_index(t)?;
        let tau = self.signal.switch_times()[k];
        self.modes.eval(self.signal.mode_ids()[k], t - tau, x, out);
        Ok(())
    }

    /// Left limit `lim_{s→t⁻} f(s, x)`; differs from [`rhs`](Self::rhs) only at
    /// switch times.
    pub fn rhs_left_limit(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let k = self.signal.interval_index(t)?;
        let times = self.signal.switch_times();
        let k = if times[k] == t && k > 0 { k - 1 } else { k };
        let mut out = vec![0.0; self.dim()];
        self.modes.eval(self.signal.mode_ids()[k], t - times[k], x, &mut out);
        Ok(out)
    }

    /// Classic RK4 on a step grid that lands exactly on every switch time.
    ///
    /// Within interval `[τ_k, τ_{k+1})` steps of size `step` are taken from
    /// the interval start (or `t0`), the last one shortened to hit `τ_{k+1}`.
    /// Every accepted step is recorded; the sample at a switch carries the new
    /// mode. Integration stops early, with `domain_exit` set, once the state
    /// leaves `D`.
    pub fn integrate(&self, x0: &[f64], t0: f64, t_end: f64, step: f64) -> Result<Trajectory> {
        self.check_dim(x0)?;
        if !(step > 0.0 && step.is_finite()) {
            return Err(Error::Argument(format!("step must be positive, got {step}")));
        }
        if !(t0 < t_end) {
            return Err(Error::Argument(format!("t0 = {t0} must precede t_end = {t_end}")));
        }
        let k0 = self.signal.interval_index(t0)?;
        self.signal.interval_index(t_end)?;
        let (m, n) = (self.m(), self.n());
        let domain = self.modes.domain;
        if !domain.contains(x0, m) {
            return Err(Error::Argument("initial state outside the domain".into()));
        }

        let dim = self.dim();
        let mut traj = Trajectory {
            m,
            n,
            times: Vec::new(),
            states: Vec::new(),
            mode_ids: Vec::new(),
            switch_marks: Vec::new(),
            domain_exit: None,
        };
        traj.push(t0, x0, self.signal.mode_ids()[k0], self.signal.is_switch_time(t0));

        let mut rk = Rk4::new(dim);
        let mut x = x0.to_vec();
        let count = self.signal.interval_count();
        for k in k0..count {
            let iv = self.signal.interval(k);
            if iv.start >= t_end {
                break;
            }
            let seg_start = iv.start.max(t0);
            let seg_end = iv.end.min(t_end);
            if seg_end <= seg_start {
                continue;
            }
            let steps = (((seg_end - seg_start) / step) - 1e-9).ceil().max(1.0) as usize;
            let mut t = seg_start;
            for i in 1..=steps {
                let t_next = if i == steps { seg_end } else { seg_start + i as f64 * step };
                rk.step(&self.modes, iv.mode, t - iv.start, t_next - t, &mut x);
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numerical {
                        time: t_next,
                        last_time: t,
                        last_state: traj.last_state().to_vec(),
                    });
                }
                t = t_next;
                let at_switch = t == iv.end && iv.complete;
                let mode = if at_switch { self.signal.mode_ids()[k + 1] } else { iv.mode };
                traj.push(t, &x, mode, at_switch);
                if !domain.contains(&x, m) {
                    traj.domain_exit = Some(t);
                    return Ok(traj);
                }
            }
        }
        Ok(traj)
    }
}

struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    fn new(dim: usize) -> Self {
        Rk4 {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    fn step(&mut self, modes: &ModeSet, mode: ModeId, s: f64, h: f64, x: &mut [f64]) {
        modes.eval(mode, s, x, &mut self.k1);
        axpy(&mut self.tmp, x, 0.5 * h, &self.k1);
        modes.eval(mode, s + 0.5 * h, &self.tmp, &mut self.k2);
        axpy(&mut self.tmp, x, 0.5 * h, &self.k2);
        modes.eval(mode, s + 0.5 * h, &self.tmp, &mut self.k3);
        axpy(&mut self.tmp, x, h, &self.k3);
        modes.eval(mode, s + h, &self.tmp, &mut self.k4);
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += h / 6.0 * (self.k1[i] + 2.0 * self.k2[i] + 2.0 * self.k3[i] + self.k4[i]);
        }
    }
}

fn axpy(out: &mut [f64], x: &[f64], a: f64, k: &[f64]) {
    for ((o, xi), ki) in out.iter_mut().zip(x).zip(k) {
        *o = xi + a * ki;
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LocalityReport {
    /// `(mode, agent i, non-neighbor j)` such that perturbing `x_j` changed `f̃_{k,i}`.
    pub violations: BTreeSet<(ModeId, AgentId, AgentId)>,
    pub checks: usize,
}

impl LocalityReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Reset-clock range sampled when probing fields.
pub const CLOCK_PROBE_RANGE: f64 = 2.0;

/// Checks that each agent's component of each mode ignores non-neighbors:
/// at random `(s, x)` in `D`, every non-neighbor `j` of `i` is moved to a
/// fresh random point and `f̃_{k,i}` must stay within 1e-12.
pub fn validate_locality(ms: &ModeSet, samples: usize, seed: u64) -> LocalityReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (ms.m, ms.n);
    let mut report = LocalityReport::default();
    let mut base = vec![0.0; ms.dim()];
    let mut moved = vec![0.0; ms.dim()];
    for (k, mode) in ms.modes.iter().enumerate() {
        for _ in 0..samples {
            let s = rng.gen_range(0.0..=CLOCK_PROBE_RANGE);
            let x = ms.domain.sample(&mut rng, n, m);
            mode.field.eval(s, &x, &mut base);
            for i in 0..n {
                for j in (0..n).filter(|&j| !mode.graph.has_edge(j, i)) {
                    let mut y = x.clone();
                    y[j * m..(j + 1) * m].copy_from_slice(&ms.domain.sample_agent(&mut rng, m));
                    mode.field.eval(s, &y, &mut moved);
                    report.checks += 1;
                    let a = &base[i * m..(i + 1) * m];
                    let b = &moved[i * m..(i + 1) * m];
                    let changed = a.iter().zip(b).any(|(p, q)| (p - q).abs() > 1e-12 * p.abs().max(1.0));
                    if changed {
                        report.violations.insert((k, i, j));
                    }
                }
            }
        }
    }
    report
}

/// Parameters for [`invariance_probe`].
#[derive(Debug, Clone, PartialEq)]
pub struct InvarianceProbe {
    pub region: f64,
    pub trials: usize,
    pub tau_d: f64,
    pub tau_u: f64,
    pub horizon: f64,
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionExit {
    pub trial: usize,
    pub time: f64,
    pub agent: AgentId,
    pub norm: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct InvarianceReport {
    pub trials: usize,
    pub exits: Vec<RegionExit>,
    /// Largest agent norm seen over all trials.
    pub max_norm: f64,
}

/// Relative slack for "stayed inside the ball" checks on integrated states.
pub const REGION_SLACK: f64 = 1e-9;

/// Integrates from random starts in `(B̄_{region,m})^n` under random signals
/// over all modes and records every departure from that ball product.
pub fn invariance_probe(ms: &ModeSet, probe: &InvarianceProbe, seed: u64) -> Result<InvarianceReport> {
    if !ms.domain.contains_ball_product(probe.region) {
        return Err(Error::Argument(format!("region {} not inside the domain", probe.region)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (ms.m, ms.n);
    let mut report = InvarianceReport {
        trials: probe.trials,
        ..Default::default()
    };
    let limit = probe.region * (1.0 + REGION_SLACK);
    for trial in 0..probe.trials {
        let signal = random_signal(ms.len(), probe.tau_d, probe.tau_u, (0.0, probe.horizon), rng.gen())?;
        let sys = SwitchedSystem::new(ms.clone(), signal)?;
        let x0: Vec<f64> = (0..n).flat_map(|_| sample_ball(&mut rng, m, probe.region)).collect();
        let traj = sys.integrate(&x0, 0.0, probe.horizon, probe.step)?;
        'samples: for (t, x) in traj.samples() {
            for (i, y) in x.chunks_exact(m).enumerate() {
                let r = norm(y);
                report.max_norm = report.max_norm.max(r);
                if r > limit {
                    report.exits.push(RegionExit {
                        trial,
                        time: t,
                        agent: i,
                        norm: r,
                    });
                    break 'samples;
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair_consensus() -> ModeSet {
        let field = |_s: f64, x: &[f64], out: &mut [f64]| {
            out[0] = x[1] - x[0];
            out[1] = x[0] - x[1];
        };
        ModeSet::new(1, 2, vec![Mode::new(field, Digraph::complete(2), true)], Domain::Cube { half_width: 10.0 }).unwrap()
    }

    fn constant_system(ms: ModeSet, end: f64) -> SwitchedSystem {
        SwitchedSystem::new(ms, SwitchingSignal::constant(0, 0.0, end, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn zero_field_keeps_state() {
        let zero = |_s: f64, _x: &[f64], out: &mut [f64]| out.fill(0.0);
        let ms = ModeSet::new(2, 2, vec![Mode::new(zero, Digraph::empty(2), true)], Domain::BallProduct { radius: 5.0 }).unwrap();
        let sys = constant_system(ms, 3.0);
        assert_eq!(sys.rhs(1.0, &[1.0, 2.0, 3.0, 0.5]).unwrap(), vec![0.0; 4]);
        let x0 = [1.0, 2.0, -3.0, 0.5];
        let traj = sys.integrate(&x0, 0.0, 3.0, 0.1).unwrap();
        assert_eq!(traj.last_state(), &x0);
    }

    #[test]
    fn two_agent_closed_form() {
        let sys = constant_system(pair_consensus(), 2.0);
        let traj = sys.integrate(&[0.0, 2.0], 0.0, 1.0, 1e-3).unwrap();
        let x = traj.last_state();
        let expected = 2.0 * (-2.0f64).exp();
        assert!(((x[1] - x[0]) - expected).abs() < 1e-6);
        assert!((expected - 0.27067).abs() < 1e-5);
    }

    #[test]
    fn consensus_state_is_equilibrium() {
        let sys = constant_system(pair_consensus(), 2.0);
        let traj = sys.integrate(&[0.7, 0.7], 0.0, 2.0, 0.01).unwrap();
        assert_eq!(traj.last_state(), &[0.7, 0.7]);
    }

    #[test]
    fn reset_clock_restarts_at_switch() {
        let ramp = |s: f64, _x: &[f64], out: &mut [f64]| out[0] = s;
        let ms = ModeSet::new(1, 1, vec![Mode::new(ramp, Digraph::empty(1), false)], Domain::Cube { half_width: 100.0 }).unwrap();
        let sig = SwitchingSignal::new(0.0, 3.0, vec![0.0, 1.0, 2.0], vec![0, 0, 0], 1.0, None).unwrap();
        let sys = SwitchedSystem::new(ms, sig).unwrap();
        assert_eq!(sys.rhs(1.0, &[0.0]).unwrap()[0], 0.0);
        assert!(sys.rhs(1.0 + 1e-9, &[0.0]).unwrap()[0] < 1e-8);
        assert!((sys.rhs_left_limit(1.0, &[0.0]).unwrap()[0] - 1.0).abs() < 1e-15);
        // x(t) = sum of s²/2 over each unit interval
        let traj = sys.integrate(&[0.0], 0.0, 3.0, 0.01).unwrap();
        assert!((traj.last_state()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn switch_times_sampled_once() {
        let sig = random_signal(1, 0.13, 0.29, (0.0, 5.0), 2).unwrap();
        let sys = SwitchedSystem::new(pair_consensus(), sig.clone()).unwrap();
        let traj = sys.integrate(&[1.0, -1.0], 0.05, 4.9, 0.01).unwrap();
        for &tau in sig.switch_times().iter().filter(|&&t| t > 0.05 && t < 4.9) {
            assert_eq!(traj.times.iter().filter(|&&t| t == tau).count(), 1);
        }
        assert!(traj.times.windows(2).all(|w| w[1] > w[0]));
        for &k in &traj.switch_marks {
            assert!(sig.is_switch_time(traj.times[k]));
            assert_eq!(traj.mode_ids[k], sig.mode_at(traj.times[k]).unwrap());
        }
    }

    #[test]
    fn out_of_horizon_rhs_is_range_error() {
        let sys = constant_system(pair_consensus(), 1.0);
        assert!(matches!(sys.rhs(2.0, &[0.0, 0.0]), Err(Error::Range(_))));
    }

    #[test]
    fn blowup_reports_numerical_error() {
        let wild = |_s: f64, x: &[f64], out: &mut [f64]| out[0] = x[0] * x[0] * 1e300;
        let ms = ModeSet::new(1, 1, vec![Mode::new(wild, Digraph::empty(1), true)], Domain::Cube { half_width: f64::MAX }).unwrap();
        let sys = constant_system(ms, 10.0);
        let err = sys.integrate(&[1.0], 0.0, 10.0, 0.1).unwrap_err();
        assert!(matches!(err, Error::Numerical { .. }), "{err}");
    }

    #[test]
    fn domain_exit_stops_integration() {
        let grow = |_s: f64, x: &[f64], out: &mut [f64]| out.copy_from_slice(x);
        let ms = ModeSet::new(1, 1, vec![Mode::new(grow, Digraph::empty(1), true)], Domain::Cube { half_width: 2.0 }).unwrap();
        let sys = constant_system(ms, 10.0);
        let traj = sys.integrate(&[1.0], 0.0, 10.0, 0.01).unwrap();
        let exit = traj.domain_exit.unwrap();
        assert!((exit - 2f64.ln()).abs() < 0.011);
        assert_eq!(*traj.times.last().unwrap(), exit);
    }

    #[test]
    fn locality_flags_hidden_dependence() {
        let leaky = |_s: f64, x: &[f64], out: &mut [f64]| {
            out[0] = x[1] - x[0] + 0.1 * x[2];
            out[1] = 0.0;
            out[2] = 0.0;
        };
        let g = Digraph::from_edges(3, [(1, 0)]).unwrap();
        let ms = ModeSet::new(1, 3, vec![Mode::new(leaky, g, true)], Domain::Cube { half_width: 1.0 }).unwrap();
        let report = validate_locality(&ms, 5, 1);
        assert_eq!(report.violations.into_iter().collect::<Vec<_>>(), vec![(0, 0, 2)]);
    }

    #[test]
    fn locality_vacuous_on_complete_graph() {
        let report = validate_locality(&pair_consensus(), 10, 1);
        assert!(report.passed());
        assert_eq!(report.checks, 0);
    }

    #[test]
    fn expanding_field_exits_region() {
        let grow = |_s: f64, x: &[f64], out: &mut [f64]| out.copy_from_slice(x);
        let ms = ModeSet::new(2, 2, vec![Mode::new(grow, Digraph::empty(2), true)], Domain::BallProduct { radius: 10.0 }).unwrap();
        let probe = InvarianceProbe {
            region: 1.0,
            trials: 3,
            tau_d: 0.2,
            tau_u: 0.4,
            horizon: 5.0,
            step: 0.01,
        };
        let report = invariance_probe(&ms, &probe, 4).unwrap();
        assert_eq!(report.exits.len(), 3);
    }

    #[test]
    fn ball_samples_stay_inside() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for m in 1..4 {
            for _ in 0..200 {
                assert!(norm(&sample_ball(&mut rng, m, 0.5)) <= 0.5);
            }
        }
    }
}
