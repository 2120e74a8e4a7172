//! Max-of-V / max-of-W monitors, Dini derivatives of the max functions, and
//! sampling checkers for the Lyapunov-type consensus conditions.
//!
//! `V` is a per-agent certificate on `R^m`, `W` a pair certificate on
//! `R^m × R^m`. The monitored functions are `max_i V(x_i)` and
//! `max_{(i,j)} W(x_i, x_j)` over all ordered pairs. For these, the upper
//! right Dini derivative equals the largest member derivative over the
//! argmax set, which is what [`dini_max_v`] and [`dini_max_w`] compute.

use std::fmt;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{norm, Domain, SwitchedSystem, Trajectory, CLOCK_PROBE_RANGE};
use crate::error::{Error, Result};
use crate::graph::AgentId;

type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
type GradFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;
type PairFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;
type PairGradFn = Arc<dyn Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync>;
type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Continuous, strictly increasing `[0, ∞) → [0, ∞)` with value 0 at 0.
#[derive(Clone)]
pub struct ClassK {
    f: RealFn,
    inverse: Option<RealFn>,
}

impl fmt::Debug for ClassK {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ClassK")
            .field("analytic_inverse", &self.inverse.is_some())
            .finish()
    }
}

impl ClassK {
    pub fn new(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        ClassK {
            f: Arc::new(f),
            inverse: None,
        }
    }

    pub fn with_inverse(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        inverse: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        ClassK {
            f: Arc::new(f),
            inverse: Some(Arc::new(inverse)),
        }
    }

    /// `c · r^p`.
    pub fn power(c: f64, p: f64) -> Self {
        Self::with_inverse(move |r| c * r.powf(p), move |y| (y / c).powf(1.0 / p))
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.f)(r)
    }

    pub fn has_analytic_inverse(&self) -> bool {
        self.inverse.is_some()
    }

    /// `f^{-1}(y)`: analytic when supplied, else bisection to 1e-12.
    pub fn invert(&self, y: f64) -> f64 {
        match &self.inverse {
            Some(inv) => inv(y),
            None => self.invert_by_bisection(y),
        }
    }

    pub fn invert_by_bisection(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        let mut hi = 1.0;
        while self.eval(hi) < y {
            hi *= 2.0;
            if hi > 1e300 {
                return f64::INFINITY;
            }
        }
        let mut lo = 0.0;
        while hi - lo > 1e-12 * hi.max(1.0) {
            let mid = 0.5 * (lo + hi);
            if self.eval(mid) < y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }
}

/// Per-agent certificate `V : R^m → R` with optional class-K sandwich
/// `β₁(‖y‖) ≤ V(y) ≤ β₂(‖y‖)`.
#[derive(Clone)]
pub struct ScalarCertificate {
    v: ScalarFn,
    grad: Option<GradFn>,
    pub beta1: Option<ClassK>,
    pub beta2: Option<ClassK>,
}

impl fmt::Debug for ScalarCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ScalarCertificate")
            .field("analytic_gradient", &self.grad.is_some())
            .field("beta1", &self.beta1)
            .field("beta2", &self.beta2)
            .finish()
    }
}

impl ScalarCertificate {
    pub fn new(v: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        ScalarCertificate {
            v: Arc::new(v),
            grad: None,
            beta1: None,
            beta2: None,
        }
    }

    pub fn with_gradient(mut self, grad: impl Fn(&[f64], &mut [f64]) + Send + Sync + 'static) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    pub fn with_bounds(mut self, beta1: ClassK, beta2: ClassK) -> Self {
        self.beta1 = Some(beta1);
        self.beta2 = Some(beta2);
        self
    }

    /// `V(y) = yᵀy` with `β₁ = β₂ = r²`.
    pub fn squared_norm() -> Self {
        Self::new(|y| y.iter().map(|v| v * v).sum())
            .with_gradient(|y, g| {
                for (gi, yi) in g.iter_mut().zip(y) {
                    *gi = 2.0 * yi;
                }
            })
            .with_bounds(ClassK::power(1.0, 2.0), ClassK::power(1.0, 2.0))
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        (self.v)(y)
    }

    pub fn has_analytic_gradient(&self) -> bool {
        self.grad.is_some()
    }

    pub fn gradient(&self, y: &[f64], out: &mut [f64]) {
        match &self.grad {
            Some(g) => g(y, out),
            None => self.fd_gradient(y, out),
        }
    }

    /// Central differences with `h = 1e-6·(1 + ‖y‖)`.
    pub fn fd_gradient(&self, y: &[f64], out: &mut [f64]) {
        let h = 1e-6 * (1.0 + norm(y));
        let mut p = y.to_vec();
        for k in 0..y.len() {
            p[k] = y[k] + h;
            let up = self.value(&p);
            p[k] = y[k] - h;
            let down = self.value(&p);
            p[k] = y[k];
            out[k] = (up - down) / (2.0 * h);
        }
    }

    /// Sampled points of `D` where the class-K sandwich fails.
    pub fn sandwich_violations(&self, domain: &Domain, m: usize, samples: usize, seed: u64) -> usize {
        let (Some(b1), Some(b2)) = (&self.beta1, &self.beta2) else {
            return 0;
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples)
            .filter(|_| {
                let y = domain.sample_agent(&mut rng, m);
                let (r, v) = (norm(&y), self.value(&y));
                let slack = 1e-12 * v.abs().max(1.0);
                b1.eval(r) > v + slack || v > b2.eval(r) + slack
            })
            .count()
    }
}

/// Pair certificate `W : R^m × R^m → R≥0`, zero exactly on the diagonal.
#[derive(Clone)]
pub struct PairCertificate {
    w: PairFn,
    grad: Option<PairGradFn>,
}

impl fmt::Debug for PairCertificate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PairCertificate")
            .field("analytic_gradient", &self.grad.is_some())
            .finish()
    }
}

impl PairCertificate {
    pub fn new(w: impl Fn(&[f64], &[f64]) -> f64 + Send + Sync + 'static) -> Self {
        PairCertificate {
            w: Arc::new(w),
            grad: None,
        }
    }

    pub fn with_gradient(
        mut self,
        grad: impl Fn(&[f64], &[f64], &mut [f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.grad = Some(Arc::new(grad));
        self
    }

    /// `W(x, y) = ‖y − x‖²`.
    pub fn squared_difference() -> Self {
        Self::new(|x, y| x.iter().zip(y).map(|(a, b)| (b - a) * (b - a)).sum()).with_gradient(|x, y, gx, gy| {
            for k in 0..x.len() {
                gy[k] = 2.0 * (y[k] - x[k]);
                gx[k] = -gy[k];
            }
        })
    }

    pub fn value(&self, x: &[f64], y: &[f64]) -> f64 {
        (self.w)(x, y)
    }

    pub fn gradient(&self, x: &[f64], y: &[f64], gx: &mut [f64], gy: &mut [f64]) {
        match &self.grad {
            Some(g) => g(x, y, gx, gy),
            None => self.fd_gradient(x, y, gx, gy),
        }
    }

    pub fn fd_gradient(&self, x: &[f64], y: &[f64], gx: &mut [f64], gy: &mut [f64]) {
        let h = 1e-6 * (1.0 + norm(x).max(norm(y)));
        let (mut px, mut py) = (x.to_vec(), y.to_vec());
        for k in 0..x.len() {
            px[k] = x[k] + h;
            let up = self.value(&px, y);
            px[k] = x[k] - h;
            let down = self.value(&px, y);
            px[k] = x[k];
            gx[k] = (up - down) / (2.0 * h);
            py[k] = y[k] + h;
            let up = self.value(x, &py);
            py[k] = y[k] - h;
            let down = self.value(x, &py);
            py[k] = y[k];
            gy[k] = (up - down) / (2.0 * h);
        }
    }

    /// Sampled pairs breaking `W(x, x) = 0` or `W(x, y) > 0` for `x ≠ y`.
    pub fn definiteness_violations(&self, domain: &Domain, m: usize, samples: usize, seed: u64) -> usize {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples)
            .filter(|_| {
                let x = domain.sample_agent(&mut rng, m);
                let y = domain.sample_agent(&mut rng, m);
                self.value(&x, &x) != 0.0 || (x != y && !(self.value(&x, &y) > 0.0))
            })
            .count()
    }
}

fn agent(x: &[f64], m: usize, i: usize) -> &[f64] {
    &x[i * m..(i + 1) * m]
}

/// `f_{V,m}(x) = max_i V(x_i)`.
pub fn max_v(cert: &ScalarCertificate, x: &[f64], m: usize) -> f64 {
    x.chunks_exact(m).map(|y| cert.value(y)).fold(f64::NEG_INFINITY, f64::max)
}

/// `f_{W,m,m}(x) = max_{(i,j)} W(x_i, x_j)` over all ordered pairs.
pub fn max_w(cert: &PairCertificate, x: &[f64], m: usize) -> f64 {
    let n = x.len() / m;
    let mut best = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            best = best.max(cert.value(agent(x, m, i), agent(x, m, j)));
        }
    }
    best
}

/// Default argmax tie tolerance `1e-9·max(1, |max|)`.
pub fn default_tie_tolerance(max: f64) -> f64 {
    1e-9 * max.abs().max(1.0)
}

/// Agents with `V(x_i) ≥ max − tol`.
pub fn argmax_agents(cert: &ScalarCertificate, x: &[f64], m: usize, tol: f64) -> Vec<AgentId> {
    let values: Vec<f64> = x.chunks_exact(m).map(|y| cert.value(y)).collect();
    let top = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .enumerate()
        .filter(|(_, &v)| v >= top - tol)
        .map(|(i, _)| i)
        .collect()
}

/// Ordered pairs with `W(x_i, x_j) ≥ max − tol`.
pub fn argmax_pairs(cert: &PairCertificate, x: &[f64], m: usize, tol: f64) -> Vec<(AgentId, AgentId)> {
    let n = x.len() / m;
    let mut values = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            values.push(((i, j), cert.value(agent(x, m, i), agent(x, m, j))));
        }
    }
    let top = values.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    values.into_iter().filter(|(_, v)| *v >= top - tol).map(|(p, _)| p).collect()
}

/// `d/dt V(x_i) = ∇V(x_i)·f_i`.
pub fn agent_rate(cert: &ScalarCertificate, x: &[f64], f: &[f64], m: usize, i: AgentId) -> f64 {
    let mut g = vec![0.0; m];
    cert.gradient(agent(x, m, i), &mut g);
    g.iter().zip(agent(f, m, i)).map(|(a, b)| a * b).sum()
}

/// `d/dt W(x_i, x_j)`.
pub fn pair_rate(cert: &PairCertificate, x: &[f64], f: &[f64], m: usize, (i, j): (AgentId, AgentId)) -> f64 {
    let (mut gx, mut gy) = (vec![0.0; m], vec![0.0; m]);
    cert.gradient(agent(x, m, i), agent(x, m, j), &mut gx, &mut gy);
    let a: f64 = gx.iter().zip(agent(f, m, i)).map(|(g, v)| g * v).sum();
    let b: f64 = gy.iter().zip(agent(f, m, j)).map(|(g, v)| g * v).sum();
    a + b
}

/// `D⁺f_{V,m}` at `(t, x)`: the largest `∇V(x_i)·f_i(t, x)` over the argmax
/// set. `tol = None` uses [`default_tie_tolerance`].
pub fn dini_max_v(cert: &ScalarCertificate, sys: &SwitchedSystem, t: f64, x: &[f64], tol: Option<f64>) -> Result<f64> {
    let m = sys.m();
    let f = sys.rhs(t, x)?;
    let tol = tol.unwrap_or_else(|| default_tie_tolerance(max_v(cert, x, m)));
    Ok(argmax_agents(cert, x, m, tol)
        .into_iter()
        .map(|i| agent_rate(cert, x, &f, m, i))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Pair analogue of [`dini_max_v`].
pub fn dini_max_w(cert: &PairCertificate, sys: &SwitchedSystem, t: f64, x: &[f64], tol: Option<f64>) -> Result<f64> {
    let m = sys.m();
    let f = sys.rhs(t, x)?;
    let tol = tol.unwrap_or_else(|| default_tie_tolerance(max_w(cert, x, m)));
    Ok(argmax_pairs(cert, x, m, tol)
        .into_iter()
        .map(|p| pair_rate(cert, x, &f, m, p))
        .fold(f64::NEG_INFINITY, f64::max))
}

fn short_flow(sys: &SwitchedSystem, t: f64, x: &[f64], eps: f64) -> Result<Vec<f64>> {
    let traj = sys.integrate(x, t, t + eps, eps)?;
    Ok(traj.last_state().to_vec())
}

/// Forward difference of `f_{V,m}` along a short integration of length `eps`.
pub fn dini_max_v_fd(cert: &ScalarCertificate, sys: &SwitchedSystem, t: f64, x: &[f64], eps: f64) -> Result<f64> {
    let m = sys.m();
    let y = short_flow(sys, t, x, eps)?;
    Ok((max_v(cert, &y, m) - max_v(cert, x, m)) / eps)
}

/// Forward difference of `f_{W,m,m}` along a short integration of length `eps`.
pub fn dini_max_w_fd(cert: &PairCertificate, sys: &SwitchedSystem, t: f64, x: &[f64], eps: f64) -> Result<f64> {
    let m = sys.m();
    let y = short_flow(sys, t, x, eps)?;
    Ok((max_w(cert, &y, m) - max_w(cert, x, m)) / eps)
}

/// Euclidean distance from `x` to the consensus set `{x_1 = … = x_n}`.
pub fn consensus_distance(x: &[f64], m: usize) -> f64 {
    let n = x.len() / m;
    let base = &x[..m];
    let mut shift = vec![0.0; m];
    for y in x.chunks_exact(m) {
        for k in 0..m {
            shift[k] += y[k] - base[k];
        }
    }
    let mean: Vec<f64> = (0..m).map(|k| base[k] + shift[k] / n as f64).collect();
    x.chunks_exact(m)
        .map(|y| y.iter().zip(&mean).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .sum::<f64>()
        .sqrt()
}

/// `δ = β₂⁻¹(β₁(ε))`, the radius whose ball product stays inside the
/// `ε`-ball product.
pub fn stability_radius(cert: &ScalarCertificate, eps: f64, domain: &Domain) -> Result<f64> {
    let (Some(b1), Some(b2)) = (&cert.beta1, &cert.beta2) else {
        return Err(Error::Argument("certificate has no class-K bounds".into()));
    };
    if !eps.is_finite() || !domain.contains_ball_product(eps) {
        return Err(Error::Argument(format!("eps = {eps} does not fit inside the domain {domain:?}")));
    }
    Ok(b2.invert(b1.eval(eps)))
}

/// Tolerances for the assumption checkers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Margins {
    /// Largest Dini value accepted as "≤ 0".
    pub tol_decrease: f64,
    /// Neighbors closer than this count as equal.
    pub tol_state: f64,
    /// Member derivatives below `-margin_strict` count as strictly negative.
    pub margin_strict: f64,
    /// Field norm accepted as zero.
    pub tol_zero: f64,
    /// Largest accepted increase of the monitored max between samples.
    pub tol_monotone: f64,
    /// Argmax tie tolerance; `None` means [`default_tie_tolerance`].
    pub tie_tolerance: Option<f64>,
}

impl Default for Margins {
    fn default() -> Self {
        Margins {
            tol_decrease: 1e-7,
            tol_state: 1e-9,
            margin_strict: 1e-12,
            tol_zero: 1e-6,
            tol_monotone: 1e-9,
            tie_tolerance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    /// `D⁺` of the monitored max above `tol_decrease`.
    DiniPositive,
    /// Argmax member with a differing neighbor is not strictly decreasing.
    NotStrictlyDecreasing,
    /// Strict decrease only within `[-margin_strict, tol_decrease]`.
    BorderlineStrict,
    /// Argmax member without differing neighbors has a nonzero field.
    NonzeroField,
    /// Strictly decreasing pair without any differing neighbor.
    OnlyIf,
    /// Monitored max increased between consecutive samples.
    MonotonicityBreach,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub t: f64,
    pub kind: FindingKind,
    pub witness: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonitorSample {
    pub t: f64,
    pub dist: f64,
    pub max_v: Option<f64>,
    pub max_w: Option<f64>,
    pub dini_v: Option<f64>,
    pub dini_w: Option<f64>,
    pub argmax_v: Vec<AgentId>,
    pub argmax_w: Vec<(AgentId, AgentId)>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MonitorReport {
    pub samples: Vec<MonitorSample>,
    pub violations: Vec<Finding>,
    pub warnings: Vec<Finding>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitored {
    V,
    W,
}

impl MonitorReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn count(&self, kind: FindingKind) -> usize {
        self.violations.iter().filter(|f| f.kind == kind).count()
    }

    fn series(&self, which: Monitored) -> impl Iterator<Item = Option<f64>> + '_ {
        self.samples.iter().map(move |s| match which {
            Monitored::V => s.max_v,
            Monitored::W => s.max_w,
        })
    }

    /// Largest increase of the monitored max between consecutive samples
    /// (negative when strictly decreasing throughout).
    pub fn max_step_increase(&self, which: Monitored) -> Option<f64> {
        let vals: Vec<f64> = self.series(which).flatten().collect();
        vals.windows(2).map(|w| w[1] - w[0]).reduce(f64::max)
    }

    /// Folds the per-sample columns of `other` (same sample times) into this
    /// report and appends its findings.
    pub fn merge(&mut self, other: MonitorReport) -> Result<()> {
        if self.samples.is_empty() {
            *self = other;
            return Ok(());
        }
        if other.samples.len() != self.samples.len() {
            return Err(Error::Argument("cannot merge monitor reports over different samples".into()));
        }
        for (a, b) in self.samples.iter_mut().zip(other.samples) {
            if a.t != b.t {
                return Err(Error::Argument(format!("sample time mismatch {} vs {}", a.t, b.t)));
            }
            a.max_v = a.max_v.or(b.max_v);
            a.max_w = a.max_w.or(b.max_w);
            a.dini_v = a.dini_v.or(b.dini_v);
            a.dini_w = a.dini_w.or(b.dini_w);
            if a.argmax_v.is_empty() {
                a.argmax_v = b.argmax_v;
            }
            if a.argmax_w.is_empty() {
                a.argmax_w = b.argmax_w;
            }
        }
        self.violations.extend(other.violations);
        self.warnings.extend(other.warnings);
        Ok(())
    }
}

fn clock_probes(sys: &SwitchedSystem) -> [f64; 5] {
    let top = sys.signal().tau_u().unwrap_or(CLOCK_PROBE_RANGE);
    [0.0, 0.25 * top, 0.5 * top, 0.75 * top, top]
}

fn has_differing_neighbor(sys: &SwitchedSystem, t: f64, x: &[f64], i: AgentId, tol: f64) -> Result<bool> {
    let m = sys.m();
    let g = sys.graph_process().graph_at(t)?;
    let xi = agent(x, m, i);
    Ok(g.in_neighbors(i).any(|j| {
        let d: f64 = agent(x, m, j).iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum();
        d.sqrt() > tol
    }))
}

/// Per-agent largest `‖f̃_{σ(t),i}(s, x)‖` over the probed reset-clock values.
fn field_norms_over_clock(sys: &SwitchedSystem, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let m = sys.m();
    let mode = sys.signal().mode_at(t)?;
    let mut out = vec![0.0; sys.dim()];
    let mut worst = vec![0.0f64; sys.n()];
    for s in clock_probes(sys) {
        sys.mode_set().eval(mode, s, x, &mut out);
        for (w, fi) in worst.iter_mut().zip(out.chunks_exact(m)) {
            *w = w.max(norm(fi));
        }
    }
    Ok(worst)
}

fn check_monotone(report: &mut MonitorReport, which: Monitored, tol: f64) {
    let mut prev: Option<(f64, f64)> = None;
    let mut found = Vec::new();
    for s in &report.samples {
        let Some(v) = (match which {
            Monitored::V => s.max_v,
            Monitored::W => s.max_w,
        }) else {
            continue;
        };
        if let Some((pt, pv)) = prev {
            if v - pv > tol {
                found.push(Finding {
                    t: s.t,
                    kind: FindingKind::MonotonicityBreach,
                    witness: format!("increase {:.3e} since t = {pt}", v - pv),
                });
            }
        }
        prev = Some((s.t, v));
    }
    report.violations.extend(found);
}

fn check_range(sys: &SwitchedSystem, traj: &Trajectory) -> Result<()> {
    if traj.dim() != sys.dim() {
        return Err(Error::Argument("trajectory and system disagree on state size".into()));
    }
    if traj.domain_exit.is_some() {
        return Err(Error::Argument("trajectory left the domain; assumptions are only checked inside D".into()));
    }
    Ok(())
}

/// Checks the max-of-V conditions at every trajectory sample:
/// (a) `D⁺f_{V,m} ≤ tol_decrease`;
/// (b) argmax agents with a differing neighbor have `V̇ < −margin_strict`;
/// (c) argmax agents without one have a zero field at every probed clock.
/// Also flags sample-to-sample increases of `f_{V,m}` above `tol_monotone`.
pub fn check_assumption_v(
    cert: &ScalarCertificate,
    sys: &SwitchedSystem,
    traj: &Trajectory,
    margins: &Margins,
) -> Result<MonitorReport> {
    check_range(sys, traj)?;
    let m = sys.m();
    let mut report = MonitorReport::default();
    for (t, x) in traj.samples() {
        let f = sys.rhs(t, x)?;
        let top = max_v(cert, x, m);
        let tol = margins.tie_tolerance.unwrap_or_else(|| default_tie_tolerance(top));
        let members = argmax_agents(cert, x, m, tol);
        let mut dini = f64::NEG_INFINITY;
        let mut probe: Option<Vec<f64>> = None;
        for &i in &members {
            let rate = agent_rate(cert, x, &f, m, i);
            dini = dini.max(rate);
            if has_differing_neighbor(sys, t, x, i, margins.tol_state)? {
                if rate > margins.tol_decrease {
                    report.violations.push(Finding {
                        t,
                        kind: FindingKind::NotStrictlyDecreasing,
                        witness: format!("agent {i}: dV/dt = {rate:.3e}"),
                    });
                } else if rate >= -margins.margin_strict {
                    report.warnings.push(Finding {
                        t,
                        kind: FindingKind::BorderlineStrict,
                        witness: format!("agent {i}: dV/dt = {rate:.3e}"),
                    });
                }
            } else {
                if probe.is_none() {
                    probe = Some(field_norms_over_clock(sys, t, x)?);
                }
                let fnorm = probe.as_ref().unwrap()[i];
                if fnorm > margins.tol_zero {
                    report.violations.push(Finding {
                        t,
                        kind: FindingKind::NonzeroField,
                        witness: format!("agent {i}: |f_i| = {fnorm:.3e} with no differing neighbor"),
                    });
                }
            }
        }
        if dini > margins.tol_decrease {
            report.violations.push(Finding {
                t,
                kind: FindingKind::DiniPositive,
                witness: format!("D+ max V = {dini:.3e}, argmax {members:?}"),
            });
        }
        report.samples.push(MonitorSample {
            t,
            dist: consensus_distance(x, m),
            max_v: Some(top),
            dini_v: Some(dini),
            argmax_v: members,
            ..Default::default()
        });
    }
    check_monotone(&mut report, Monitored::V, margins.tol_monotone);
    Ok(report)
}

/// Pair analogue of [`check_assumption_v`] over `f_{W,m,m}`, including the
/// "only if" direction: a strictly decreasing argmax pair must have a
/// differing neighbor on at least one side.
pub fn check_assumption_w(
    cert: &PairCertificate,
    sys: &SwitchedSystem,
    traj: &Trajectory,
    margins: &Margins,
) -> Result<MonitorReport> {
    check_range(sys, traj)?;
    let m = sys.m();
    let mut report = MonitorReport::default();
    for (t, x) in traj.samples() {
        let f = sys.rhs(t, x)?;
        let top = max_w(cert, x, m);
        let tol = margins.tie_tolerance.unwrap_or_else(|| default_tie_tolerance(top));
        let members = argmax_pairs(cert, x, m, tol);
        let mut dini = f64::NEG_INFINITY;
        let mut probe: Option<Vec<f64>> = None;
        for &(i, j) in &members {
            let rate = pair_rate(cert, x, &f, m, (i, j));
            dini = dini.max(rate);
            let differs = has_differing_neighbor(sys, t, x, i, margins.tol_state)?
                || has_differing_neighbor(sys, t, x, j, margins.tol_state)?;
            if differs {
                if rate > margins.tol_decrease {
                    report.violations.push(Finding {
                        t,
                        kind: FindingKind::NotStrictlyDecreasing,
                        witness: format!("pair ({i}, {j}): dW/dt = {rate:.3e}"),
                    });
                } else if rate >= -margins.margin_strict {
                    report.warnings.push(Finding {
                        t,
                        kind: FindingKind::BorderlineStrict,
                        witness: format!("pair ({i}, {j}): dW/dt = {rate:.3e}"),
                    });
                }
            } else {
                if rate < -margins.margin_strict {
                    report.violations.push(Finding {
                        t,
                        kind: FindingKind::OnlyIf,
                        witness: format!("pair ({i}, {j}) decreasing at {rate:.3e} without a differing neighbor"),
                    });
                }
                if probe.is_none() {
                    probe = Some(field_norms_over_clock(sys, t, x)?);
                }
                let norms = probe.as_ref().unwrap();
                let fnorm = norms[i].max(norms[j]);
                if fnorm > margins.tol_zero {
                    report.violations.push(Finding {
                        t,
                        kind: FindingKind::NonzeroField,
                        witness: format!("pair ({i}, {j}): field norm {fnorm:.3e} with no differing neighbor"),
                    });
                }
            }
        }
        if dini > margins.tol_decrease {
            report.violations.push(Finding {
                t,
                kind: FindingKind::DiniPositive,
                witness: format!("D+ max W = {dini:.3e}"),
            });
        }
        report.samples.push(MonitorSample {
            t,
            dist: consensus_distance(x, m),
            max_w: Some(top),
            dini_w: Some(dini),
            argmax_w: members,
            ..Default::default()
        });
    }
    check_monotone(&mut report, Monitored::W, margins.tol_monotone);
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowCheck {
    pub start: f64,
    /// Sample time actually used, the first at or after `start + window`.
    pub end: f64,
    pub value_start: f64,
    pub value_end: f64,
}

impl WindowCheck {
    pub fn decrease(&self) -> f64 {
        self.value_start - self.value_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowStatus {
    Pass,
    Fail,
    InsufficientHorizon,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowVerdict {
    pub status: WindowStatus,
    pub window: f64,
    pub checks: Vec<WindowCheck>,
    pub failures: Vec<WindowCheck>,
    /// Switch times skipped because the state was already in consensus.
    pub vacuous: usize,
}

impl WindowVerdict {
    pub fn min_decrease(&self) -> Option<f64> {
        self.checks.iter().map(WindowCheck::decrease).reduce(f64::min)
    }
}

/// Strict decrease of the monitored max over windows of length `window`
/// started at each sampled switch time: for every switch `τ_k` with
/// `dist(x(τ_k), A) > tol_consensus` and `τ_k + window` inside the sampled
/// range, the max at the first sample at or after `τ_k + window` must be
/// strictly below its value at `τ_k`. `window` is normally
/// `n·(T + 2·tau_d)` for a certified connectivity window `T`.
pub fn strict_decrease_window(
    report: &MonitorReport,
    sys: &SwitchedSystem,
    window: f64,
    which: Monitored,
    tol_consensus: f64,
) -> WindowVerdict {
    let value = |s: &MonitorSample| match which {
        Monitored::V => s.max_v,
        Monitored::W => s.max_w,
    };
    let times: Vec<f64> = report.samples.iter().map(|s| s.t).collect();
    let mut verdict = WindowVerdict {
        status: WindowStatus::InsufficientHorizon,
        window,
        checks: Vec::new(),
        failures: Vec::new(),
        vacuous: 0,
    };
    let (Some(&first), Some(&last)) = (times.first(), times.last()) else {
        return verdict;
    };
    let mut any_in_range = false;
    for &tau in sys.signal().switch_times().iter().filter(|&&tau| tau >= first) {
        if tau + window > last {
            break;
        }
        let Ok(k) = times.binary_search_by(|t| t.total_cmp(&tau)) else {
            continue;
        };
        any_in_range = true;
        let start = &report.samples[k];
        if start.dist <= tol_consensus {
            verdict.vacuous += 1;
            continue;
        }
        let e = times.partition_point(|&t| t < tau + window);
        let (Some(v0), Some(v1)) = (value(start), value(&report.samples[e])) else {
            continue;
        };
        let check = WindowCheck {
            start: tau,
            end: times[e],
            value_start: v0,
            value_end: v1,
        };
        if !(v1 < v0) {
            verdict.failures.push(check);
        }
        verdict.checks.push(check);
    }
    if any_in_range {
        verdict.status = if verdict.failures.is_empty() {
            WindowStatus::Pass
        } else {
            WindowStatus::Fail
        };
    }
    verdict
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Mode, ModeSet};
    use crate::graph::Digraph;
    use crate::signal::SwitchingSignal;

    fn scalar_consensus(n: usize) -> SwitchedSystem {
        let field = move |_s: f64, x: &[f64], out: &mut [f64]| {
            for i in 0..x.len() {
                out[i] = x.iter().map(|xj| xj - x[i]).sum();
            }
        };
        let ms = ModeSet::new(1, n, vec![Mode::new(field, Digraph::complete(n), true)], Domain::Cube { half_width: 10.0 }).unwrap();
        SwitchedSystem::new(ms, SwitchingSignal::constant(0, 0.0, 10.0, 1.0).unwrap()).unwrap()
    }

    #[test]
    fn max_v_examples() {
        let v = ScalarCertificate::squared_norm();
        assert_eq!(max_v(&v, &[1.0, 0.0, 0.0, 2.0], 2), 4.0);
        assert_eq!(max_v(&v, &[3.0, 3.0], 1), 9.0);
        assert_eq!(max_v(&v, &[0.5], 1), 0.25);
    }

    #[test]
    fn max_w_examples() {
        let w = PairCertificate::squared_difference();
        assert_eq!(max_w(&w, &[0.0, 1.0, 3.0], 1), 9.0);
        assert_eq!(max_w(&w, &[2.0, 2.0, 2.0], 1), 0.0);
        assert_eq!(max_w(&w, &[1.0, -1.0], 1), 4.0);
    }

    #[test]
    fn argmax_examples() {
        let v = ScalarCertificate::squared_norm();
        assert_eq!(argmax_agents(&v, &[2.0, -2.0, 1.0], 1, 1e-9), vec![0, 1]);
        assert_eq!(argmax_agents(&v, &[2.0, 0.5, 1.0], 1, 1e-9), vec![0]);
        assert_eq!(argmax_agents(&v, &[2.0, 0.5, 1.0], 1, 10.0), vec![0, 1, 2]);
    }

    #[test]
    fn dini_of_pair_consensus() {
        let v = ScalarCertificate::squared_norm();
        let sys = scalar_consensus(2);
        assert_eq!(dini_max_v(&v, &sys, 0.0, &[1.0, -1.0], None).unwrap(), -4.0);
        assert_eq!(dini_max_v(&v, &sys, 0.0, &[2.0, 1.0], None).unwrap(), -4.0);
        let fd = dini_max_v_fd(&v, &sys, 0.0, &[2.0, 1.0], 1e-6).unwrap();
        assert!((fd + 4.0).abs() < 1e-4, "{fd}");
    }

    #[test]
    fn dini_of_zero_field_is_zero() {
        let zero = |_s: f64, _x: &[f64], out: &mut [f64]| out.fill(0.0);
        let ms = ModeSet::new(1, 2, vec![Mode::new(zero, Digraph::empty(2), true)], Domain::Cube { half_width: 5.0 }).unwrap();
        let sys = SwitchedSystem::new(ms, SwitchingSignal::constant(0, 0.0, 1.0, 1.0).unwrap()).unwrap();
        assert_eq!(dini_max_v(&ScalarCertificate::squared_norm(), &sys, 0.5, &[1.0, 3.0], None).unwrap(), 0.0);
    }

    #[test]
    fn fd_gradient_matches_analytic() {
        let v = ScalarCertificate::squared_norm();
        let plain = ScalarCertificate::new(|y| y.iter().map(|a| a * a).sum());
        let y = [0.3, -1.2, 2.0];
        let (mut a, mut b) = ([0.0; 3], [0.0; 3]);
        v.gradient(&y, &mut a);
        plain.gradient(&y, &mut b);
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn consensus_distance_examples() {
        assert!((consensus_distance(&[1.0, -1.0], 1) - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(consensus_distance(&[0.3, 0.1, 0.3, 0.1], 2), 0.0);
        let x = [1.0, 2.0, -0.5, 0.25, 3.0, -1.0];
        let shifted: Vec<f64> = x.chunks(2).flat_map(|y| [y[0] + 7.0, y[1] - 2.0]).collect();
        assert!((consensus_distance(&x, 2) - consensus_distance(&shifted, 2)).abs() < 1e-12);
    }

    #[test]
    fn stability_radius_examples() {
        let dom = Domain::BallProduct { radius: 1.0 };
        let v = ScalarCertificate::squared_norm();
        assert!((stability_radius(&v, 0.5, &dom).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(stability_radius(&v, 0.0, &dom).unwrap(), 0.0);
        let skewed = ScalarCertificate::squared_norm().with_bounds(ClassK::power(1.0, 2.0), ClassK::power(2.0, 2.0));
        let d = stability_radius(&skewed, 0.8, &dom).unwrap();
        assert!((d - 0.8 / 2f64.sqrt()).abs() < 1e-15);
        let numeric = ScalarCertificate::squared_norm().with_bounds(ClassK::new(|r| r * r), ClassK::new(|r| 2.0 * r * r));
        assert!((stability_radius(&numeric, 0.8, &dom).unwrap() - d).abs() < 1e-11);
        assert!(stability_radius(&v, 1.5, &dom).is_err());
        assert!(stability_radius(&ScalarCertificate::new(|_| 0.0), 0.5, &dom).is_err());
    }

    #[test]
    fn expanding_field_breaks_decrease() {
        let grow = |_s: f64, x: &[f64], out: &mut [f64]| out.copy_from_slice(x);
        let ms = ModeSet::new(1, 3, vec![Mode::new(grow, Digraph::empty(3), true)], Domain::Cube { half_width: 100.0 }).unwrap();
        let sys = SwitchedSystem::new(ms, SwitchingSignal::constant(0, 0.0, 1.0, 1.0).unwrap()).unwrap();
        let traj = sys.integrate(&[0.5, -0.2, 0.1], 0.0, 1.0, 0.01).unwrap();
        let report = check_assumption_v(&ScalarCertificate::squared_norm(), &sys, &traj, &Margins::default()).unwrap();
        assert_eq!(report.count(FindingKind::DiniPositive), traj.len());
        for s in &report.samples {
            assert!((s.dini_v.unwrap() - 2.0 * s.max_v.unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn consensus_start_holds_vacuously() {
        let sys = scalar_consensus(3);
        let traj = sys.integrate(&[0.4, 0.4, 0.4], 0.0, 1.0, 0.1).unwrap();
        let r = check_assumption_v(&ScalarCertificate::squared_norm(), &sys, &traj, &Margins::default()).unwrap();
        assert!(r.passed());
        let r = check_assumption_w(&PairCertificate::squared_difference(), &sys, &traj, &Margins::default()).unwrap();
        assert!(r.passed());
    }

    #[test]
    fn planted_isolated_pair_motion_breaks_only_if() {
        // agents 0 and 2 are extremal, have no neighbors, yet drift together
        let field = |_s: f64, x: &[f64], out: &mut [f64]| {
            out[0] = 0.1;
            out[1] = 0.0;
            out[2] = -0.1;
            let _ = x;
        };
        let ms = ModeSet::new(1, 3, vec![Mode::new(field, Digraph::empty(3), true)], Domain::Cube { half_width: 5.0 }).unwrap();
        let sys = SwitchedSystem::new(ms, SwitchingSignal::constant(0, 0.0, 1.0, 1.0).unwrap()).unwrap();
        let traj = sys.integrate(&[-1.0, 0.0, 1.0], 0.0, 0.5, 0.1).unwrap();
        let r = check_assumption_w(&PairCertificate::squared_difference(), &sys, &traj, &Margins::default()).unwrap();
        assert!(r.count(FindingKind::OnlyIf) > 0);
    }

    #[test]
    fn window_on_consensus_state_is_vacuous() {
        let sys = scalar_consensus(2);
        let traj = sys.integrate(&[1.0, 1.0], 0.0, 3.0, 0.1).unwrap();
        let r = check_assumption_v(&ScalarCertificate::squared_norm(), &sys, &traj, &Margins::default()).unwrap();
        let v = strict_decrease_window(&r, &sys, 1.0, Monitored::V, 1e-6);
        assert_eq!(v.status, WindowStatus::Pass);
        assert_eq!(v.vacuous, 1);
        assert!(v.checks.is_empty());
        let long = strict_decrease_window(&r, &sys, 5.0, Monitored::V, 1e-6);
        assert_eq!(long.status, WindowStatus::InsufficientHorizon);
    }
}
