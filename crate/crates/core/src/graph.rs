//! Per-mode interaction digraphs, connectivity tests and union graphs over a
//! switching signal.
//!
//! Edge convention: an edge `(j, i)` means `j ∈ N_i`, so information flows
//! from `j` to `i`. A *center* is a node with a directed path to every other
//! node. Agents are zero-based.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{random_signal_with, SwitchingSignal};

pub type AgentId = usize;

/// Directed graph on `n` agents. Self-loops are always present.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Digraph {
    n: usize,
    // adj[j * n + i] <=> (j, i) ∈ E
    adj: Vec<bool>,
}

impl fmt::Debug for Digraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let edges: Vec<_> = self.edges().filter(|(j, i)| j != i).collect();
        f.debug_struct("Digraph").field("n", &self.n).field("edges", &edges).finish()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    Strong,
    QuasiStrong,
}

impl Digraph {
    /// Graph with only self-loops.
    pub fn empty(n: usize) -> Self {
        let mut adj = vec![false; n * n];
        for i in 0..n {
            adj[i * n + i] = true;
        }
        Digraph { n, adj }
    }

    pub fn complete(n: usize) -> Self {
        Digraph { n, adj: vec![true; n * n] }
    }

    /// Builds a graph from `(from, to)` pairs; self-loops are added.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (AgentId, AgentId)>) -> Result<Self> {
        let mut g = Self::empty(n);
        for (j, i) in edges {
            g.add_edge(j, i)?;
        }
        Ok(g)
    }

    /// Builds a graph from in-neighbor lists: `lists[i]` is `N_i`.
    pub fn from_neighbor_lists(lists: &[Vec<AgentId>]) -> Result<Self> {
        let n = lists.len();
        let mut g = Self::empty(n);
        for (i, nbrs) in lists.iter().enumerate() {
            for &j in nbrs {
                g.add_edge(j, i)?;
            }
        }
        Ok(g)
    }

    /// Directed path `order[0] → order[1] → …`.
    pub fn path(n: usize, order: &[AgentId]) -> Result<Self> {
        Self::from_edges(n, order.windows(2).map(|w| (w[0], w[1])))
    }

    pub fn add_edge(&mut self, from: AgentId, to: AgentId) -> Result<()> {
        self.check(from)?;
        self.check(to)?;
        self.adj[from * self.n + to] = true;
        Ok(())
    }

    fn check(&self, i: AgentId) -> Result<()> {
        if i < self.n {
            Ok(())
        } else {
            Err(Error::Range(format!("agent {i} not in 0..{}", self.n)))
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn has_edge(&self, from: AgentId, to: AgentId) -> bool {
        from < self.n && to < self.n && self.adj[from * self.n + to]
    }

    /// All edges `(from, to)`, self-loops included.
    pub fn edges(&self) -> impl Iterator<Item = (AgentId, AgentId)> + '_ {
        let n = self.n;
        (0..n * n).filter(move |&k| self.adj[k]).map(move |k| (k / n, k % n))
    }

    /// `N_i`, sorted. Always contains `i`.
    pub fn neighbors(&self, i: AgentId) -> Result<Vec<AgentId>> {
        self.check(i)?;
        Ok(self.in_neighbors(i).collect())
    }

    pub(crate) fn in_neighbors(&self, i: AgentId) -> impl Iterator<Item = AgentId> + '_ {
        (0..self.n).filter(move |&j| self.adj[j * self.n + i])
    }

    /// In-neighbor lists, the inverse of [`Digraph::from_neighbor_lists`].
    pub fn neighbor_lists(&self) -> Vec<Vec<AgentId>> {
        (0..self.n).map(|i| self.in_neighbors(i).collect()).collect()
    }

    pub fn union(&self, other: &Digraph) -> Result<Digraph> {
        if self.n != other.n {
            return Err(Error::Argument(format!(
                "cannot union graphs on {} and {} agents",
                self.n, other.n
            )));
        }
        let adj = self.adj.iter().zip(&other.adj).map(|(a, b)| *a || *b).collect();
        Ok(Digraph { n: self.n, adj })
    }

    /// Edge-set inclusion.
    pub fn is_subgraph_of(&self, other: &Digraph) -> bool {
        self.n == other.n && self.adj.iter().zip(&other.adj).all(|(a, b)| !*a || *b)
    }

    /// Nodes reachable from `src` along edge direction (`src` included).
    pub fn reachable_from(&self, src: AgentId) -> Vec<bool> {
        self.bfs(src, false)
    }

    fn bfs(&self, src: AgentId, reverse: bool) -> Vec<bool> {
        let n = self.n;
        let mut seen = vec![false; n];
        let mut queue = VecDeque::from([src]);
        seen[src] = true;
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                let e = if reverse { self.adj[v * n + u] } else { self.adj[u * n + v] };
                if e && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }

    /// Every node reaches every other node.
    pub fn is_strongly_connected(&self) -> bool {
        if self.n <= 1 {
            return true;
        }
        self.bfs(0, false).iter().all(|&r| r) && self.bfs(0, true).iter().all(|&r| r)
    }

    /// Smallest-id center, if any node reaches all others.
    pub fn center(&self) -> Option<AgentId> {
        (0..self.n).find(|&c| self.bfs(c, false).iter().all(|&r| r))
    }

    pub fn is_quasi_strongly_connected(&self) -> Option<AgentId> {
        self.center()
    }

    pub fn satisfies(&self, kind: Connectivity) -> bool {
        match kind {
            Connectivity::Strong => self.is_strongly_connected(),
            Connectivity::QuasiStrong => self.center().is_some(),
        }
    }
}

/// A mode library of graphs driven by a switching signal.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphProcess {
    mode_graphs: Vec<Digraph>,
    signal: SwitchingSignal,
}

/// Outcome of a uniform connectivity check on a finite horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityVerdict {
    pub kind: Connectivity,
    pub window: f64,
    pub passed: bool,
    /// Start of the first failing window.
    pub witness: Option<f64>,
    /// First and last window start actually checked.
    pub checked_range: Option<(f64, f64)>,
    pub windows_checked: usize,
}

impl GraphProcess {
    pub fn new(mode_graphs: Vec<Digraph>, signal: SwitchingSignal) -> Result<Self> {
        let n = mode_graphs
            .first()
            .ok_or_else(|| Error::Argument("graph process needs at least one mode graph".into()))?
            .n();
        if mode_graphs.iter().any(|g| g.n() != n) {
            return Err(Error::Argument("mode graphs disagree on agent count".into()));
        }
        if signal.mode_span() > mode_graphs.len() {
            return Err(Error::Argument(format!(
                "signal uses mode {} but only {} graphs are defined",
                signal.mode_span() - 1,
                mode_graphs.len()
            )));
        }
        Ok(GraphProcess { mode_graphs, signal })
    }

    pub fn n(&self) -> usize {
        self.mode_graphs[0].n()
    }

    pub fn mode_graphs(&self) -> &[Digraph] {
        &self.mode_graphs
    }

    pub fn signal(&self) -> &SwitchingSignal {
        &self.signal
    }

    pub fn graph_at(&self, t: f64) -> Result<&Digraph> {
        Ok(&self.mode_graphs[self.signal.mode_at(t)?])
    }

    /// Edge union of every mode graph active somewhere on `[t1, t2)`.
    pub fn union_graph(&self, t1: f64, t2: f64) -> Result<Digraph> {
        if !(t1 < t2) {
            return Err(Error::Argument(format!("empty or reversed interval [{t1}, {t2})")));
        }
        let first = self.signal.interval_index(t1)?;
        let (_, end) = self.signal.horizon();
        if t2 > end {
            return Err(Error::Range(format!("t2 = {t2} beyond horizon end {end}")));
        }
        let times = self.signal.switch_times();
        let last = times.partition_point(|&tau| tau < t2) - 1;
        let mut g = Digraph::empty(self.n());
        for k in first..=last {
            let mg = &self.mode_graphs[self.signal.mode_ids()[k]];
            for (a, b) in g.adj.iter_mut().zip(&mg.adj) {
                *a |= *b;
            }
        }
        Ok(g)
    }

    /// Checks `G([t, t+window))` for every window start on the horizon.
    ///
    /// The union is smallest right at a switch time and only grows until the
    /// next one, so testing starts at `horizon_start` and at each switch time
    /// is exact. Windows running past the horizon end are skipped.
    pub fn verify_uniform_connectivity(&self, window: f64, kind: Connectivity) -> ConnectivityVerdict {
        let (start, end) = self.signal.horizon();
        let mut verdict = ConnectivityVerdict {
            kind,
            window,
            passed: true,
            witness: None,
            checked_range: None,
            windows_checked: 0,
        };
        if !(window > 0.0) {
            verdict.passed = false;
            verdict.witness = Some(start);
            return verdict;
        }
        let starts = std::iter::once(start).chain(
            self.signal
                .switch_times()
                .iter()
                .copied()
                .filter(|&tau| tau > start),
        );
        for t in starts {
            if t + window > end {
                break;
            }
            verdict.windows_checked += 1;
            verdict.checked_range = Some(match verdict.checked_range {
                None => (t, t),
                Some((a, _)) => (a, t),
            });
            let ok = self.union_graph(t, t + window).map(|g| g.satisfies(kind)).unwrap_or(false);
            if !ok {
                verdict.passed = false;
                verdict.witness = Some(t);
                return verdict;
            }
        }
        verdict
    }

    /// Smallest window (to within `resolution`) that passes, searched by
    /// bisection on `(0, upper]`. `None` when `upper` itself fails.
    pub fn minimal_window(&self, upper: f64, kind: Connectivity, resolution: f64) -> Option<f64> {
        if !self.verify_uniform_connectivity(upper, kind).passed {
            return None;
        }
        let (mut lo, mut hi) = (0.0, upper);
        while hi - lo > resolution {
            let mid = 0.5 * (lo + hi);
            if self.verify_uniform_connectivity(mid, kind).passed {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

/// Base graph the mode library is carved from.
fn random_base_graph(n: usize, kind: Connectivity, extra_edges: usize, rng: &mut impl Rng) -> Digraph {
    let mut order: Vec<AgentId> = (0..n).collect();
    order.shuffle(rng);
    let mut g = Digraph::empty(n);
    match kind {
        Connectivity::Strong => {
            for k in 0..n {
                let (a, b) = (order[k], order[(k + 1) % n]);
                g.adj[a * n + b] = true;
            }
            for _ in 0..extra_edges {
                let a = rng.gen_range(0..n);
                let b = rng.gen_range(0..n);
                g.adj[a * n + b] = true;
            }
        }
        Connectivity::QuasiStrong => {
            // random rooted tree; the root has no in-edges so the union never
            // becomes strongly connected
            for k in 1..n {
                let parent = order[rng.gen_range(0..k)];
                g.adj[parent * n + order[k]] = true;
            }
        }
    }
    g
}

/// Distributes the non-loop edges of `base` over `modes` graphs, every mode
/// getting at least one edge when there are enough.
fn split_edges(base: &Digraph, modes: usize, rng: &mut impl Rng) -> Vec<Digraph> {
    let n = base.n();
    let mut edges: Vec<_> = base.edges().filter(|(a, b)| a != b).collect();
    edges.shuffle(rng);
    let mut graphs = vec![Digraph::empty(n); modes];
    for (k, (a, b)) in edges.into_iter().enumerate() {
        let slot = if k < modes { k } else { rng.gen_range(0..modes) };
        graphs[slot].adj[a * n + b] = true;
    }
    graphs
}

/// Generates a mode library and signal whose graph process is uniformly
/// (quasi-)strongly connected with window `window`.
///
/// The edges of a random strongly connected graph (or rooted tree) are split
/// over `q` modes visited in a fixed cyclic order, with `q` chosen so that
/// every window of length `window` covers `q` whole dwells. Returns the
/// process together with the smallest verified window.
pub fn random_uniformly_connected_signal(
    n: usize,
    tau_d: f64,
    tau_u: f64,
    window: f64,
    horizon: (f64, f64),
    kind: Connectivity,
    seed: u64,
) -> Result<(GraphProcess, f64)> {
    if n == 0 {
        return Err(Error::Argument("need at least one agent".into()));
    }
    if !(tau_d > 0.0 && tau_u >= tau_d) {
        return Err(Error::Argument(format!("invalid dwell bounds [{tau_d}, {tau_u}]")));
    }
    if !(window >= tau_u) {
        return Err(Error::Argument(format!("window {window} shorter than tau_u = {tau_u}")));
    }
    if horizon.1 - horizon.0 < window {
        return Err(Error::Argument("horizon shorter than the connectivity window".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = ((window / tau_u).floor() as usize).saturating_sub(1).max(1);
    const ATTEMPTS: usize = 16;
    let mut last_reason = String::new();
    for _ in 0..ATTEMPTS {
        let base = random_base_graph(n, kind, n / 2, &mut rng);
        let graphs = split_edges(&base, q, &mut rng);
        let offset = rng.gen_range(0..q);
        let signal = random_signal_with(q, tau_d, tau_u, horizon, &mut rng, |_, k| (k + offset) % q)?;
        let process = GraphProcess::new(graphs, signal)?;
        match process.minimal_window(window, kind, 1e-3 * tau_d) {
            Some(achieved) => {
                if process.verify_uniform_connectivity(achieved, kind).passed {
                    return Ok((process, achieved));
                }
                last_reason = format!("bisected window {achieved} failed recheck");
            }
            None => {
                last_reason = format!("window {window} not certified");
            }
        }
    }
    Err(Error::Generation {
        attempts: ATTEMPTS,
        reason: last_reason,
    })
}

/// Graph process whose agents are split into `groups` contiguous blocks with
/// no edges between blocks. Each block carries its own ring, split over the
/// same cyclic mode schedule, so every block is uniformly strongly connected
/// with window `window` while the whole graph never is.
pub fn random_split_process(
    n: usize,
    groups: usize,
    tau_d: f64,
    tau_u: f64,
    window: f64,
    horizon: (f64, f64),
    seed: u64,
) -> Result<GraphProcess> {
    if groups < 2 || groups > n {
        return Err(Error::Argument(format!("cannot split {n} agents into {groups} groups")));
    }
    if !(tau_d > 0.0 && tau_u >= tau_d && window >= tau_u) {
        return Err(Error::Argument("invalid dwell bounds or window".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = ((window / tau_u).floor() as usize).saturating_sub(1).max(1);
    let block = group_of(n, groups);
    let mut graphs = vec![Digraph::empty(n); q];
    for gidx in 0..groups {
        let mut members: Vec<AgentId> = (0..n).filter(|&a| block(a) == gidx).collect();
        members.shuffle(&mut rng);
        if members.len() < 2 {
            continue;
        }
        let ring = Digraph::from_edges(
            n,
            (0..members.len()).map(|k| (members[k], members[(k + 1) % members.len()])),
        )?;
        for (k, g) in split_edges(&ring, q, &mut rng).into_iter().enumerate() {
            graphs[k] = graphs[k].union(&g)?;
        }
    }
    let signal = random_signal_with(q, tau_d, tau_u, horizon, &mut rng, |_, k| k % q)?;
    GraphProcess::new(graphs, signal)
}

/// Block index of each agent when `n` agents are split into `groups`
/// contiguous blocks.
pub fn group_of(n: usize, groups: usize) -> impl Fn(AgentId) -> usize {
    let size = n.div_ceil(groups);
    move |a| a / size
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain3() -> Digraph {
        Digraph::from_edges(3, [(0, 1), (1, 2)]).unwrap()
    }

    #[test]
    fn neighbors_follow_edge_convention() {
        let g = Digraph::from_edges(2, [(0, 1)]).unwrap();
        assert_eq!(g.neighbors(1).unwrap(), vec![0, 1]);
        assert_eq!(g.neighbors(0).unwrap(), vec![0]);
        assert!(g.neighbors(2).is_err());
    }

    #[test]
    fn self_loop_graph_neighbors() {
        let g = Digraph::empty(4);
        for i in 0..4 {
            assert_eq!(g.neighbors(i).unwrap(), vec![i]);
        }
        let k = Digraph::complete(3);
        assert_eq!(k.neighbors(1).unwrap(), vec![0, 1, 2]);
    }

    #[test]
    fn connectivity_of_small_graphs() {
        assert!(Digraph::complete(3).is_strongly_connected());
        assert!(!chain3().is_strongly_connected());
        assert_eq!(chain3().center(), Some(0));
        let split = Digraph::from_edges(4, [(0, 1), (1, 0), (2, 3), (3, 2)]).unwrap();
        assert!(!split.is_strongly_connected());
        assert_eq!(split.center(), None);
        assert_eq!(Digraph::complete(3).center(), Some(0));
    }

    fn alternating(dwell: f64, end: f64) -> GraphProcess {
        let g1 = Digraph::from_edges(2, [(0, 1)]).unwrap();
        let g2 = Digraph::from_edges(2, [(1, 0)]).unwrap();
        let count = (end / dwell).round() as usize;
        let dwells = vec![dwell; count];
        let modes: Vec<usize> = (0..=count).map(|k| k % 2).collect();
        let s = SwitchingSignal::from_dwells(0.0, end, &dwells, &modes, dwell, Some(dwell)).unwrap();
        GraphProcess::new(vec![g1, g2], s).unwrap()
    }

    #[test]
    fn union_over_alternation() {
        let p = alternating(0.5, 2.0);
        let u = p.union_graph(0.0, 2.0).unwrap();
        assert!(u.has_edge(0, 1) && u.has_edge(1, 0));
        let inside = p.union_graph(0.1, 0.4).unwrap();
        assert_eq!(inside, p.mode_graphs()[0]);
        assert!(p.union_graph(1.0, 1.0).is_err());
        assert!(p.union_graph(1.0, 0.5).is_err());
    }

    #[test]
    fn uniform_connectivity_of_alternation() {
        let p = alternating(0.5, 4.0);
        let v = p.verify_uniform_connectivity(1.0, Connectivity::Strong);
        assert!(v.passed, "{v:?}");
        let short = p.verify_uniform_connectivity(0.4, Connectivity::Strong);
        assert!(!short.passed);
        let w = short.witness.unwrap();
        assert_eq!(p.union_graph(w, w + 0.4).unwrap(), *p.graph_at(w).unwrap());
    }

    #[test]
    fn constant_complete_graph_passes_any_window() {
        let s = SwitchingSignal::constant(0, 0.0, 10.0, 1.0).unwrap();
        let p = GraphProcess::new(vec![Digraph::complete(4)], s).unwrap();
        for w in [0.01, 1.0, 9.9] {
            assert!(p.verify_uniform_connectivity(w, Connectivity::Strong).passed);
        }
    }

    #[test]
    fn generated_process_is_certified() {
        for kind in [Connectivity::Strong, Connectivity::QuasiStrong] {
            let (p, t) = random_uniformly_connected_signal(7, 0.1, 0.2, 1.0, (0.0, 20.0), kind, 3).unwrap();
            assert!(t <= 1.0);
            assert!(p.verify_uniform_connectivity(t, kind).passed);
            assert!(p.verify_uniform_connectivity(t, Connectivity::QuasiStrong).passed);
            let again = random_uniformly_connected_signal(7, 0.1, 0.2, 1.0, (0.0, 20.0), kind, 3).unwrap();
            assert_eq!(again.0, p);
        }
    }

    #[test]
    fn quasi_strong_library_never_strong() {
        let (p, _) =
            random_uniformly_connected_signal(6, 0.1, 0.2, 1.0, (0.0, 10.0), Connectivity::QuasiStrong, 8).unwrap();
        let all = p.union_graph(0.0, 10.0).unwrap();
        assert!(!all.is_strongly_connected());
    }

    #[test]
    fn split_process_has_no_cross_edges() {
        let p = random_split_process(6, 2, 0.1, 0.2, 1.0, (0.0, 10.0), 4).unwrap();
        let block = group_of(6, 2);
        let all = p.union_graph(0.0, 10.0).unwrap();
        for (a, b) in all.edges() {
            assert_eq!(block(a), block(b));
        }
        assert!(!all.is_strongly_connected());
    }
}
