//! Ready-made consensus laws: linear, nonlinearly scaled, SO(3) axis-angle
//! and epipole-based heading consensus; plus the blend-smoothing and
//! stabilization-embedding constructions.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{norm, Domain, Mode, ModeSet, VectorField, CLOCK_PROBE_RANGE};
use crate::error::{Error, Result};
use crate::graph::{AgentId, Digraph};
use crate::signal::{ModeId, SwitchingSignal};

/// Edge weights `a_ij(s)` as functions of the reset clock.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightProfile {
    Constant {
        value: f64,
    },
    /// `base + amplitude·sin(frequency·s + φ_ij)` with phases `φ_ij` drawn
    /// from `seed`.
    Sinusoid {
        base: f64,
        amplitude: f64,
        frequency: f64,
        seed: u64,
    },
}

impl Default for WeightProfile {
    fn default() -> Self {
        WeightProfile::Constant { value: 1.0 }
    }
}

impl WeightProfile {
    pub fn unit() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.bounds();
        if lo.is_finite() && hi.is_finite() && lo > 0.0 {
            Ok(())
        } else {
            Err(Error::Argument(format!("weights {self:?} must be positive and bounded")))
        }
    }

    /// `(w_min, w_max)` over all clock values.
    pub fn bounds(&self) -> (f64, f64) {
        match *self {
            WeightProfile::Constant { value } => (value, value),
            WeightProfile::Sinusoid { base, amplitude, .. } => (base - amplitude.abs(), base + amplitude.abs()),
        }
    }

    pub fn is_constant(&self) -> bool {
        match *self {
            WeightProfile::Constant { .. } => true,
            WeightProfile::Sinusoid { amplitude, frequency, .. } => amplitude == 0.0 || frequency == 0.0,
        }
    }

    /// Per-edge weight table for `n` agents.
    pub fn table(&self, n: usize) -> Result<EdgeWeights> {
        self.validate()?;
        let phases = match *self {
            WeightProfile::Constant { .. } => Vec::new(),
            WeightProfile::Sinusoid { seed, .. } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n * n).map(|_| rng.gen_range(0.0..2.0 * PI)).collect()
            }
        };
        Ok(EdgeWeights {
            n,
            profile: *self,
            phases,
        })
    }
}

#[derive(Debug, Clone)]
pub struct EdgeWeights {
    n: usize,
    profile: WeightProfile,
    phases: Vec<f64>,
}

impl EdgeWeights {
    /// `a_ij(s)` for the edge `j → i`.
    pub fn weight(&self, i: AgentId, j: AgentId, s: f64) -> f64 {
        match self.profile {
            WeightProfile::Constant { value } => value,
            WeightProfile::Sinusoid {
                base,
                amplitude,
                frequency,
                ..
            } => base + amplitude * (frequency * s + self.phases[i * self.n + j]).sin(),
        }
    }
}

/// Radial rescaling `h(y) = g(‖y‖)/‖y‖ · y` with `g(r) = r^power`, a
/// diffeomorphism of the open ball of radius `eta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleMap {
    pub power: f64,
    pub eta: f64,
}

impl Default for ScaleMap {
    fn default() -> Self {
        ScaleMap { power: 2.0, eta: 1.0 }
    }
}

impl ScaleMap {
    pub fn identity(eta: f64) -> Self {
        ScaleMap { power: 1.0, eta }
    }

    pub fn validate(&self) -> Result<()> {
        if self.power > 0.0 && self.power.is_finite() && self.eta > 0.0 && self.eta.is_finite() {
            Ok(())
        } else {
            Err(Error::Argument(format!("scale map {self:?} needs positive power and radius")))
        }
    }

    pub fn g(&self, r: f64) -> f64 {
        r.powf(self.power)
    }

    pub fn g_inv(&self, r: f64) -> f64 {
        r.powf(1.0 / self.power)
    }

    fn radial(y: &[f64], out: &mut [f64], f: impl Fn(f64) -> f64) {
        let r = norm(y);
        if r == 0.0 {
            out.fill(0.0);
            return;
        }
        let k = f(r) / r;
        for (o, v) in out.iter_mut().zip(y) {
            *o = k * v;
        }
    }

    pub fn h(&self, y: &[f64], out: &mut [f64]) {
        Self::radial(y, out, |r| self.g(r))
    }

    pub fn h_inv(&self, z: &[f64], out: &mut [f64]) {
        Self::radial(z, out, |r| self.g_inv(r))
    }

    /// Largest `‖h⁻¹(h(y)) − y‖` over `samples` uniform points of the ball.
    pub fn round_trip_error(&self, m: usize, samples: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut z, mut back) = (vec![0.0; m], vec![0.0; m]);
        let mut worst: f64 = 0.0;
        for _ in 0..samples {
            let y = crate::dynamics::sample_ball(&mut rng, m, self.eta);
            self.h(&y, &mut z);
            self.h_inv(&z, &mut back);
            let err = y.iter().zip(&back).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            worst = worst.max(err);
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScaleVariant {
    /// `Σ a_ij·h(x_j − x_i)`.
    ScaleDifferences,
    /// `Σ a_ij·(h(x_j) − h(x_i))`.
    ScaleStates,
}

fn check_graphs(n: usize, graphs: &[Digraph]) -> Result<()> {
    if graphs.is_empty() {
        return Err(Error::Argument("at least one mode graph is required".into()));
    }
    match graphs.iter().position(|g| g.n() != n) {
        Some(k) => Err(Error::Argument(format!("graph {k} is not on {n} agents"))),
        None => Ok(()),
    }
}

/// Builds one mode per graph from a per-graph field constructor.
fn build_modes<F>(n: usize, m: usize, graphs: &[Digraph], weights: &WeightProfile, domain: Domain, make: impl Fn(Vec<Vec<AgentId>>, Arc<EdgeWeights>) -> F) -> Result<ModeSet>
where
    F: VectorField + 'static,
{
    check_graphs(n, graphs)?;
    let table = Arc::new(weights.table(n)?);
    let modes = graphs
        .iter()
        .map(|g| Mode::new(make(g.neighbor_lists(), Arc::clone(&table)), g.clone(), weights.is_constant()))
        .collect();
    ModeSet::new(m, n, modes, domain)
}

/// `ẋ_i = Σ_{j∈N_i} a_ij(s)(x_j − x_i)`.
pub fn make_linear_consensus(n: usize, m: usize, graphs: &[Digraph], weights: &WeightProfile, domain: Domain) -> Result<ModeSet> {
    build_modes(n, m, graphs, weights, domain, move |nbrs, w| {
        move |s: f64, x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for (i, ni) in nbrs.iter().enumerate() {
                for &j in ni {
                    let a = w.weight(i, j, s);
                    for k in 0..m {
                        out[i * m + k] += a * (x[j * m + k] - x[i * m + k]);
                    }
                }
            }
        }
    })
}

/// Scaled consensus on the ball product of radius `scale.eta`.
pub fn make_scaled_consensus(
    n: usize,
    m: usize,
    graphs: &[Digraph],
    weights: &WeightProfile,
    scale: ScaleMap,
    variant: ScaleVariant,
) -> Result<ModeSet> {
    scale.validate()?;
    let domain = Domain::BallProduct { radius: scale.eta };
    build_modes(n, m, graphs, weights, domain, move |nbrs, w| {
        move |s: f64, x: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            let mut a_buf = vec![0.0; m];
            let mut b_buf = vec![0.0; m];
            let mut d = vec![0.0; m];
            for (i, ni) in nbrs.iter().enumerate() {
                let xi = &x[i * m..(i + 1) * m];
                if variant == ScaleVariant::ScaleStates {
                    scale.h(xi, &mut b_buf);
                }
                for &j in ni {
                    if j == i {
                        continue;
                    }
                    let xj = &x[j * m..(j + 1) * m];
                    let a = w.weight(i, j, s);
                    match variant {
                        ScaleVariant::ScaleDifferences => {
                            for k in 0..m {
                                d[k] = xj[k] - xi[k];
                            }
                            scale.h(&d, &mut a_buf);
                            for k in 0..m {
                                out[i * m + k] += a * a_buf[k];
                            }
                        }
                        ScaleVariant::ScaleStates => {
                            scale.h(xj, &mut a_buf);
                            for k in 0..m {
                                out[i * m + k] += a * (a_buf[k] - b_buf[k]);
                            }
                        }
                    }
                }
            }
        }
    })
}

pub fn skew(y: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -y.z, y.y, y.z, 0.0, -y.x, -y.y, y.x, 0.0)
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        x.sin() / x
    }
}

/// Coefficient of `ŷ²` in `L_y`, with its removable singularity at 0.
pub fn so3_coefficient(theta: f64) -> f64 {
    if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = sinc(theta / 2.0);
        (1.0 - sinc(theta) / (half * half)) / (theta * theta)
    }
}

/// `L_y = I + ŷ/2 + c(‖y‖)·ŷ²`, mapping angular velocity to the
/// derivative of the axis-angle vector `y`.
pub fn so3_l_matrix(y: &Vector3<f64>) -> Matrix3<f64> {
    let yh = skew(y);
    Matrix3::identity() + 0.5 * yh + so3_coefficient(y.norm()) * yh * yh
}

/// `ẋ_i = L_{x_i}·Σ_{j∈N_i} α_ij(s)(x_j − x_i)` on the product of closed
/// balls of radius `r < π` in `R³`.
pub fn make_so3_axis_angle(n: usize, graphs: &[Digraph], weights: &WeightProfile, r: f64) -> Result<ModeSet> {
    if !(r > 0.0 && r < PI) {
        return Err(Error::Argument(format!("axis-angle radius must lie in (0, pi), got {r}")));
    }
    build_modes(n, 3, graphs, weights, Domain::BallProduct { radius: r }, move |nbrs, w| {
        move |s: f64, x: &[f64], out: &mut [f64]| {
            for (i, ni) in nbrs.iter().enumerate() {
                let xi = Vector3::new(x[3 * i], x[3 * i + 1], x[3 * i + 2]);
                let mut omega = Vector3::zeros();
                for &j in ni {
                    let xj = Vector3::new(x[3 * j], x[3 * j + 1], x[3 * j + 2]);
                    omega += w.weight(i, j, s) * (xj - xi);
                }
                let v = so3_l_matrix(&xi) * omega;
                out[3 * i..3 * i + 3].copy_from_slice(v.as_slice());
            }
        }
    })
}

/// Parameters of the epipole heading-consensus law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpipoleParams {
    pub theta_m: f64,
    pub alpha_cal: f64,
    pub beta: f64,
}

impl Default for EpipoleParams {
    fn default() -> Self {
        EpipoleParams {
            theta_m: 0.1,
            alpha_cal: 1.0,
            beta: 1.0,
        }
    }
}

/// Robots on the line through the origin along `(1, 1)/√2`.
pub fn colinear_positions(n: usize, spacing: f64) -> Vec<[f64; 2]> {
    let u = spacing / 2f64.sqrt();
    (0..n).map(|i| [i as f64 * u, i as f64 * u]).collect()
}

/// `x_ij = R(θ_i)(p_j − p_i)`.
fn relative(theta_i: f64, pi: [f64; 2], pj: [f64; 2]) -> [f64; 2] {
    let (dx, dy) = (pj[0] - pi[0], pj[1] - pi[1]);
    let (s, c) = theta_i.sin_cos();
    [c * dx - s * dy, s * dx + c * dy]
}

/// Epipole x-component `e_ij = α·tan ψ_ij` with `tan ψ_ij = x_ijx / x_ijy`.
pub fn epipole(alpha_cal: f64, theta_i: f64, pi: [f64; 2], pj: [f64; 2]) -> f64 {
    let v = relative(theta_i, pi, pj);
    alpha_cal * v[0] / v[1]
}

/// `ψ_ij` on the branch `(−π/2, π/2)` of the arctangent.
pub fn psi(theta_i: f64, pi: [f64; 2], pj: [f64; 2]) -> f64 {
    let v = relative(theta_i, pi, pj);
    (v[0] / v[1]).atan()
}

/// `ω_ij = arctan(e_ij/β) − arctan(e_ji/β)`.
pub fn epipole_omega(p: &EpipoleParams, theta_i: f64, theta_j: f64, pi: [f64; 2], pj: [f64; 2]) -> f64 {
    (epipole(p.alpha_cal, theta_i, pi, pj) / p.beta).atan() - (epipole(p.alpha_cal, theta_j, pj, pi) / p.beta).atan()
}

/// Scalar heading consensus `θ̇_i = Σ_{j∈N_i} α_ij(s)·ω_ij` on `[−θ_M, θ_M]^n`.
pub fn make_epipole_network(
    positions: &[[f64; 2]],
    graphs: &[Digraph],
    weights: &WeightProfile,
    params: EpipoleParams,
) -> Result<ModeSet> {
    let n = positions.len();
    if !(params.theta_m > 0.0 && params.theta_m < PI / 2.0 && params.alpha_cal > 0.0 && params.beta > 0.0) {
        return Err(Error::Argument(format!("invalid epipole parameters {params:?}")));
    }
    check_graphs(n, graphs)?;
    for g in graphs {
        for (j, i) in g.edges().filter(|(j, i)| j != i) {
            for (a, b) in [(i, j), (j, i)] {
                let (pa, pb) = (positions[a], positions[b]);
                if pa == pb {
                    return Err(Error::Construction(format!("robots {a} and {b} share a position")));
                }
                let ys = [-params.theta_m, 0.0, params.theta_m].map(|th| relative(th, pa, pb)[1]);
                if !(ys.iter().all(|&y| y > 0.0) || ys.iter().all(|&y| y < 0.0)) {
                    return Err(Error::Construction(format!(
                        "robot {b} can leave the forward half-plane of robot {a} inside the heading domain"
                    )));
                }
            }
        }
    }
    let positions = positions.to_vec();
    build_modes(n, 1, graphs, weights, Domain::Cube { half_width: params.theta_m }, move |nbrs, w| {
        let positions = positions.clone();
        move |s: f64, x: &[f64], out: &mut [f64]| {
            for (i, ni) in nbrs.iter().enumerate() {
                out[i] = ni
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| w.weight(i, j, s) * epipole_omega(&params, x[i], x[j], positions[i], positions[j]))
                    .sum();
            }
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Blend {
    /// `α(s) = 1 − s/b`.
    Linear,
    /// `α(s) = ½ + ½·cos(πs/b)`.
    #[default]
    Cosine,
}

impl Blend {
    pub fn alpha(&self, s: f64, tau_blend: f64) -> f64 {
        let u = (s / tau_blend).clamp(0.0, 1.0);
        match self {
            Blend::Linear => 1.0 - u,
            Blend::Cosine => 0.5 + 0.5 * (PI * u).cos(),
        }
    }
}

/// Replaces every switch `a → b` by a blend interval of length `tau_blend`
/// running `α(s)·f_a + (1 − α(s))·f_b`, followed by `b`. Blend modes are
/// appended after the original ones, one per ordered pair actually
/// adjacent in the signal. Consecutive equal modes are left alone.
pub fn smooth_transitions(
    ms: &ModeSet,
    signal: &SwitchingSignal,
    tau_blend: f64,
    blend: Blend,
) -> Result<(ModeSet, SwitchingSignal)> {
    if !ms.all_time_invariant() {
        return Err(Error::Argument("smoothing requires time-invariant modes".into()));
    }
    if !(tau_blend > 0.0 && tau_blend < signal.tau_d()) {
        return Err(Error::Argument(format!(
            "tau_blend = {tau_blend} must lie in (0, tau_d = {})",
            signal.tau_d()
        )));
    }
    if signal.mode_span() > ms.len() {
        return Err(Error::Argument("signal uses modes outside the family".into()));
    }
    let mut modes = ms.modes().to_vec();
    let mut pairs: Vec<(ModeId, ModeId)> = Vec::new();
    let (src_times, src_ids) = (signal.switch_times(), signal.mode_ids());
    let mut times = vec![src_times[0]];
    let mut ids = vec![src_ids[0]];
    for k in 1..src_times.len() {
        let (a, b, tau) = (src_ids[k - 1], src_ids[k], src_times[k]);
        if a == b {
            times.push(tau);
            ids.push(b);
            continue;
        }
        let blend_id = match pairs.iter().position(|&p| p == (a, b)) {
            Some(p) => ms.len() + p,
            None => {
                pairs.push((a, b));
                let (fa, fb) = (Arc::clone(&modes[a].field), Arc::clone(&modes[b].field));
                let dim = ms.dim();
                let field = move |s: f64, x: &[f64], out: &mut [f64]| {
                    let w = blend.alpha(s, tau_blend);
                    let mut tmp = vec![0.0; dim];
                    fa.eval(s, x, out);
                    fb.eval(s, x, &mut tmp);
                    for (o, v) in out.iter_mut().zip(&tmp) {
                        *o = w * *o + (1.0 - w) * v;
                    }
                };
                let graph = modes[a].graph.union(&modes[b].graph)?;
                modes.push(Mode::new(field, graph, false));
                modes.len() - 1
            }
        };
        times.push(tau);
        ids.push(blend_id);
        let after = tau + tau_blend;
        let next = src_times.get(k + 1).copied().unwrap_or(f64::INFINITY);
        if after < next && after <= signal.horizon_end() {
            times.push(after);
            ids.push(b);
        }
    }
    let tau_d = tau_blend.min(signal.tau_d() - tau_blend);
    let out_signal = SwitchingSignal::new(signal.horizon_start(), signal.horizon_end(), times, ids, tau_d, signal.tau_u())?;
    Ok((ModeSet::new(ms.m(), ms.n(), modes, ms.domain())?, out_signal))
}

/// Embeds a single-state switched system `ẏ = f̃_k(s, y)` with `f̃_k(s, 0) = 0`
/// as a two-agent consensus problem: agent 0 runs `f̃_k(s, y_0 − y_1)`,
/// agent 1 is frozen, and agent 0 listens to agent 1. With `y_1 = 0`
/// agent 0 reproduces the original solution.
pub fn stabilization_embed(fields: Vec<Arc<dyn VectorField>>, m: usize, domain: Domain, time_invariant: bool) -> Result<ModeSet> {
    let graph = Digraph::from_edges(2, [(1, 0)])?;
    let probes = [0.0, 0.25, 0.5, 0.75, 1.0].map(|u| u * CLOCK_PROBE_RANGE);
    let zero = vec![0.0; m];
    let mut out = vec![0.0; m];
    let mut modes = Vec::with_capacity(fields.len());
    for (k, f) in fields.into_iter().enumerate() {
        for s in probes {
            f.eval(s, &zero, &mut out);
            if norm(&out) > 1e-12 {
                return Err(Error::Construction(format!("field {k} does not vanish at the origin (s = {s})")));
            }
        }
        let field = move |s: f64, x: &[f64], out: &mut [f64]| {
            let d: Vec<f64> = (0..m).map(|c| x[c] - x[m + c]).collect();
            f.eval(s, &d, &mut out[..m]);
            out[m..].fill(0.0);
        };
        modes.push(Mode::new(field, graph.clone(), time_invariant));
    }
    ModeSet::new(m, 2, modes, domain)
}
