//! Dwell-time constrained switching signals.
//!
//! A signal is stored on a finite horizon `[horizon_start, horizon_end]` as
//! the list of switch times `τ_0 ≤ horizon_start < τ_1 < … < τ_K ≤ horizon_end`
//! together with the mode active on each interval `[τ_k, τ_{k+1})`. The last
//! interval runs to `horizon_end` and is closed there.
//!
//! Mode lookups compare stored times exactly. Dwell-bound validation allows a
//! few ulps of slack, since switch times built by repeated addition do not
//! reproduce their dwell lengths bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Zero-based index into a mode family.
pub type ModeId = usize;

/// Rounding slack used when comparing a dwell length against a bound.
pub fn dwell_slack(a: f64, b: f64) -> f64 {
    8.0 * f64::EPSILON * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SignalRecord", into = "SignalRecord")]
pub struct SwitchingSignal {
    horizon_start: f64,
    horizon_end: f64,
    switch_times: Vec<f64>,
    mode_ids: Vec<ModeId>,
    tau_d: f64,
    tau_u: Option<f64>,
}

/// Flat serialized form of a [`SwitchingSignal`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalRecord {
    pub horizon: [f64; 2],
    pub tau_d: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_u: Option<f64>,
    /// `(switch_time, mode_id)` pairs in increasing time order.
    pub switches: Vec<(f64, ModeId)>,
}

impl TryFrom<SignalRecord> for SwitchingSignal {
    type Error = Error;

    fn try_from(r: SignalRecord) -> Result<Self> {
        let (times, modes) = r.switches.into_iter().unzip();
        SwitchingSignal::new(r.horizon[0], r.horizon[1], times, modes, r.tau_d, r.tau_u)
    }
}

impl From<SwitchingSignal> for SignalRecord {
    fn from(s: SwitchingSignal) -> Self {
        SignalRecord {
            horizon: [s.horizon_start, s.horizon_end],
            tau_d: s.tau_d,
            tau_u: s.tau_u,
            switches: s.switch_times.into_iter().zip(s.mode_ids).collect(),
        }
    }
}

/// One constant-mode piece of a signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub start: f64,
    /// Next switch time, or `horizon_end` for the last interval.
    pub end: f64,
    pub mode: ModeId,
    /// False only for the last interval, which the horizon truncates.
    pub complete: bool,
}

impl Interval {
    pub fn len(&self) -> f64 {
        self.end - self.start
    }
}

/// Maps each mode of a time-shifted family back to its source mode and the
/// reset-clock offset applied to it.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeShiftTable {
    /// Number of offset slots per source mode.
    pub slots: usize,
    pub tau_d: f64,
    /// Indexed by new mode id: `(source mode, clock offset)`.
    pub entries: Vec<(ModeId, f64)>,
}

impl TimeShiftTable {
    pub fn new_id(&self, source: ModeId, slot: usize) -> ModeId {
        source * self.slots + slot
    }

    pub fn source(&self, id: ModeId) -> Option<(ModeId, f64)> {
        self.entries.get(id).copied()
    }
}

impl SwitchingSignal {
    pub fn new(
        horizon_start: f64,
        horizon_end: f64,
        switch_times: Vec<f64>,
        mode_ids: Vec<ModeId>,
        tau_d: f64,
        tau_u: Option<f64>,
    ) -> Result<Self> {
        if !(horizon_start.is_finite() && horizon_end.is_finite() && horizon_start < horizon_end) {
            return Err(Error::Argument(format!(
                "horizon [{horizon_start}, {horizon_end}] is empty or not finite"
            )));
        }
        if !(tau_d.is_finite() && tau_d > 0.0) {
            return Err(Error::Argument(format!("tau_d must be positive, got {tau_d}")));
        }
        if let Some(u) = tau_u {
            if !(u.is_finite() && u >= tau_d) {
                return Err(Error::Argument(format!("tau_u = {u} must be finite and >= tau_d = {tau_d}")));
            }
        }
        if switch_times.is_empty() || switch_times.len() != mode_ids.len() {
            return Err(Error::Argument(format!(
                "need one mode per switch time (got {} times, {} modes)",
                switch_times.len(),
                mode_ids.len()
            )));
        }
        if switch_times.iter().any(|t| !t.is_finite()) {
            return Err(Error::Argument("switch times must be finite".into()));
        }
        if switch_times[0] > horizon_start {
            return Err(Error::Argument(format!(
                "first switch time {} is after horizon start {horizon_start}",
                switch_times[0]
            )));
        }
        if let Some(&t1) = switch_times.get(1) {
            if t1 <= horizon_start {
                return Err(Error::Argument(format!(
                    "second switch time {t1} must lie after horizon start {horizon_start}"
                )));
            }
        }
        if *switch_times.last().unwrap() > horizon_end {
            return Err(Error::Argument("switch time beyond horizon end".into()));
        }
        for w in switch_times.windows(2) {
            let gap = w[1] - w[0];
            if gap <= 0.0 {
                return Err(Error::Argument(format!("switch times not increasing at {}", w[1])));
            }
            let slack = dwell_slack(w[0], w[1]);
            if gap < tau_d - slack {
                return Err(Error::Argument(format!(
                    "dwell {gap} on [{}, {}) is below tau_d = {tau_d}",
                    w[0], w[1]
                )));
            }
            if let Some(u) = tau_u {
                if gap > u + slack {
                    return Err(Error::Argument(format!(
                        "dwell {gap} on [{}, {}) exceeds tau_u = {u}",
                        w[0], w[1]
                    )));
                }
            }
        }
        Ok(SwitchingSignal {
            horizon_start,
            horizon_end,
            switch_times,
            mode_ids,
            tau_d,
            tau_u,
        })
    }

    /// A signal that never switches on the horizon.
    pub fn constant(mode: ModeId, horizon_start: f64, horizon_end: f64, tau_d: f64) -> Result<Self> {
        Self::new(horizon_start, horizon_end, vec![horizon_start], vec![mode], tau_d, None)
    }

    /// Builds a signal starting at `horizon_start` from consecutive dwell
    /// lengths; switches falling past `horizon_end` are dropped.
    pub fn from_dwells(
        horizon_start: f64,
        horizon_end: f64,
        dwells: &[f64],
        modes: &[ModeId],
        tau_d: f64,
        tau_u: Option<f64>,
    ) -> Result<Self> {
        if modes.len() != dwells.len() + 1 && modes.len() != dwells.len() {
            return Err(Error::Argument("modes must cover every dwell".into()));
        }
        let mut times = vec![horizon_start];
        let mut t = horizon_start;
        for &d in dwells {
            t += d;
            if t > horizon_end {
                break;
            }
            times.push(t);
        }
        times.truncate(modes.len());
        let ids = modes[..times.len()].to_vec();
        Self::new(horizon_start, horizon_end, times, ids, tau_d, tau_u)
    }

    pub fn horizon(&self) -> (f64, f64) {
        (self.horizon_start, self.horizon_end)
    }

    pub fn horizon_start(&self) -> f64 {
        self.horizon_start
    }

    pub fn horizon_end(&self) -> f64 {
        self.horizon_end
    }

    pub fn switch_times(&self) -> &[f64] {
        &self.switch_times
    }

    pub fn mode_ids(&self) -> &[ModeId] {
        &self.mode_ids
    }

    pub fn tau_d(&self) -> f64 {
        self.tau_d
    }

    pub fn tau_u(&self) -> Option<f64> {
        self.tau_u
    }

    pub fn interval_count(&self) -> usize {
        self.switch_times.len()
    }

    pub fn interval(&self, k: usize) -> Interval {
        let last = k + 1 == self.switch_times.len();
        Interval {
            start: self.switch_times[k],
            end: if last { self.horizon_end } else { self.switch_times[k + 1] },
            mode: self.mode_ids[k],
            complete: !last,
        }
    }

    pub fn intervals(&self) -> impl Iterator<Item = Interval> + '_ {
        (0..self.switch_times.len()).map(move |k| self.interval(k))
    }

    /// Highest mode id used plus one.
    pub fn mode_span(&self) -> usize {
        self.mode_ids.iter().max().map_or(0, |m| m + 1)
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t >= self.horizon_start && t <= self.horizon_end {
            Ok(())
        } else {
            Err(Error::Range(format!(
                "t = {t} outside horizon [{}, {}]",
                self.horizon_start, self.horizon_end
            )))
        }
    }

    /// Index `k` of the interval `[τ_k, τ_{k+1})` containing `t`.
    pub fn interval_index(&self, t: f64) -> Result<usize> {
        self.check_time(t)?;
        Ok(self.switch_times.partition_point(|&tau| tau <= t) - 1)
    }

    pub fn mode_at(&self, t: f64) -> Result<ModeId> {
        Ok(self.mode_ids[self.interval_index(t)?])
    }

    /// Largest switch time not exceeding `t`.
    pub fn gamma(&self, t: f64) -> Result<f64> {
        Ok(self.switch_times[self.interval_index(t)?])
    }

    /// Reset clock `t − γ(t)`.
    pub fn clock(&self, t: f64) -> Result<f64> {
        Ok(t - self.gamma(t)?)
    }

    pub fn is_switch_time(&self, t: f64) -> bool {
        self.switch_times.binary_search_by(|tau| tau.total_cmp(&t)).is_ok()
    }

    /// Splits every interval longer than `tau_u_target` into the fewest
    /// equal pieces shorter than `tau_u_target`, keeping the mode. Only
    /// meaningful for time-invariant mode families, where it leaves the
    /// dynamics unchanged.
    pub fn normalize_bounded(&self, tau_u_target: f64) -> Result<Self> {
        if !(tau_u_target >= 2.0 * self.tau_d) {
            return Err(Error::Argument(format!(
                "tau_u target {tau_u_target} must be at least 2·tau_d = {}",
                2.0 * self.tau_d
            )));
        }
        let mut times = Vec::with_capacity(self.switch_times.len());
        let mut modes = Vec::with_capacity(self.switch_times.len());
        for iv in self.intervals() {
            times.push(iv.start);
            modes.push(iv.mode);
            let len = iv.len();
            if len <= tau_u_target {
                continue;
            }
            let mut pieces = (len / tau_u_target).floor() as usize + 1;
            while len / pieces as f64 >= tau_u_target {
                pieces += 1;
            }
            let piece = len / pieces as f64;
            for p in 1..pieces {
                times.push(iv.start + p as f64 * piece);
                modes.push(iv.mode);
            }
        }
        Self::new(
            self.horizon_start,
            self.horizon_end,
            times,
            modes,
            self.tau_d,
            Some(tau_u_target),
        )
    }

    /// Re-partitions a bounded signal so every dwell lies in
    /// `[tau_d, 2·tau_d)`. Each interval is cut into unit pieces of length
    /// `tau_d` followed by one remainder piece; piece `j` is relabelled to a
    /// mode whose reset clock is advanced by `j·tau_d`, so the composed
    /// right-hand side is unchanged.
    pub fn expand_timeshift(&self, mode_count: usize) -> Result<(Self, TimeShiftTable)> {
        if self.tau_u.is_none() {
            return Err(Error::Argument(
                "time-shift expansion needs a signal with an upper dwell bound".into(),
            ));
        }
        if self.mode_span() > mode_count {
            return Err(Error::Argument(format!(
                "signal uses mode {} but only {mode_count} modes were given",
                self.mode_span() - 1
            )));
        }
        let tau_d = self.tau_d;
        let piece_counts: Vec<usize> = self.intervals().map(|iv| timeshift_pieces(iv.len(), tau_d)).collect();
        let slots = piece_counts
            .iter()
            .copied()
            .chain(std::iter::once((self.tau_u.unwrap() / tau_d).floor() as usize))
            .max()
            .unwrap()
            .max(1);

        let mut times = Vec::new();
        let mut modes = Vec::new();
        for (iv, &count) in self.intervals().zip(&piece_counts) {
            for j in 0..count {
                times.push(iv.start + j as f64 * tau_d);
                modes.push(iv.mode * slots + j);
            }
        }
        let entries = (0..mode_count)
            .flat_map(|m| (0..slots).map(move |j| (m, j as f64 * tau_d)))
            .collect();
        let out = Self::new(
            self.horizon_start,
            self.horizon_end,
            times,
            modes,
            tau_d,
            Some(2.0 * tau_d),
        )?;
        Ok((out, TimeShiftTable { slots, tau_d, entries }))
    }
}

/// Number of pieces an interval of length `len` is cut into: `⌊len/τ⌋ − 1`
/// pieces of length τ plus a remainder in `[τ, 2τ)`.
fn timeshift_pieces(len: f64, tau_d: f64) -> usize {
    let mut n = (len / tau_d).floor() as usize;
    if n <= 1 {
        return 1;
    }
    // the floor can land one off when len/tau_d is within an ulp of an integer
    while n > 1 && len - (n - 1) as f64 * tau_d < tau_d {
        n -= 1;
    }
    while len - (n - 1) as f64 * tau_d >= 2.0 * tau_d {
        n += 1;
    }
    n
}

/// Random signal with dwells uniform in `[tau_d, tau_u]` and modes uniform
/// in `0..mode_count`. The first interval starts at the horizon start.
pub fn random_signal(
    mode_count: usize,
    tau_d: f64,
    tau_u: f64,
    horizon: (f64, f64),
    seed: u64,
) -> Result<SwitchingSignal> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_signal_with(mode_count, tau_d, tau_u, horizon, &mut rng, |rng, _| {
        rng.gen_range(0..mode_count)
    })
}

/// Same dwell process as [`random_signal`] with the mode of interval `k`
/// chosen by `pick(rng, k)`.
pub fn random_signal_with<R: Rng>(
    mode_count: usize,
    tau_d: f64,
    tau_u: f64,
    horizon: (f64, f64),
    rng: &mut R,
    mut pick: impl FnMut(&mut R, usize) -> ModeId,
) -> Result<SwitchingSignal> {
    if mode_count == 0 {
        return Err(Error::Argument("mode_count must be at least 1".into()));
    }
    if !(tau_d > 0.0 && tau_u >= tau_d && tau_u.is_finite()) {
        return Err(Error::Argument(format!(
            "need 0 < tau_d <= tau_u, got tau_d = {tau_d}, tau_u = {tau_u}"
        )));
    }
    if !(horizon.0 < horizon.1) {
        return Err(Error::Argument("empty horizon".into()));
    }
    let mut times = vec![horizon.0];
    let mut modes = vec![pick(rng, 0)];
    let mut t = horizon.0;
    loop {
        let dwell = if tau_u > tau_d { rng.gen_range(tau_d..=tau_u) } else { tau_d };
        t += dwell;
        if t > horizon.1 {
            break;
        }
        modes.push(pick(rng, times.len()));
        times.push(t);
    }
    SwitchingSignal::new(horizon.0, horizon.1, times, modes, tau_d, Some(tau_u))
}
