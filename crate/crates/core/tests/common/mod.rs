//! Independent oracles for graph connectivity, integration, Dini
//! derivatives, consensus distance and the SO(3) kinematics matrix.

use consensus_core::dynamics::{Mode, ModeSet};
use consensus_core::lyapunov::{
    argmax_agents, argmax_pairs, default_tie_tolerance, dini_max_v, dini_max_v_fd, dini_max_w, dini_max_w_fd, max_v, max_w,
};
use consensus_core::systems::{so3_l_matrix, WeightProfile};
use consensus_core::{
    consensus_distance, make_linear_consensus, random_uniformly_connected_signal, Connectivity, Digraph, Domain,
    PairCertificate, ScalarCertificate, SwitchedSystem, SwitchingSignal,
};
use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Reachability matrix by Floyd–Warshall over the boolean semiring.
fn closure(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<bool>> {
    let mut r = vec![vec![false; n]; n];
    for i in 0..n {
        r[i][i] = true;
    }
    for &(a, b) in edges {
        r[a][b] = true;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if r[i][k] && r[k][j] {
                    r[i][j] = true;
                }
            }
        }
    }
    r
}

fn check_against_closure(n: usize, edges: &[(usize, usize)]) {
    let g = Digraph::from_edges(n, edges.iter().copied()).unwrap();
    let r = closure(n, edges);
    let strong = r.iter().all(|row| row.iter().all(|&b| b));
    let centers: Vec<usize> = (0..n).filter(|&c| r[c].iter().all(|&b| b)).collect();
    assert_eq!(g.is_strongly_connected(), strong, "n={n} edges={edges:?}");
    assert_eq!(g.is_quasi_strongly_connected(), centers.first().copied(), "n={n} edges={edges:?}");
    for src in 0..n {
        assert_eq!(g.reachable_from(src), r[src]);
    }
}

fn off_diagonal(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|a| (0..n).filter(move |&b| b != a).map(move |b| (a, b))).collect()
}

pub fn connectivity_matches_closure_exhaustively_up_to_three() {
    for n in 1..=3 {
        let slots = off_diagonal(n);
        for mask in 0u32..(1 << slots.len()) {
            let edges: Vec<_> = slots.iter().enumerate().filter(|(k, _)| mask >> k & 1 == 1).map(|(_, &e)| e).collect();
            check_against_closure(n, &edges);
        }
    }
}

pub fn connectivity_matches_closure_on_random_graphs() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..1000 {
        let n = rng.gen_range(1..=5);
        let p: f64 = rng.gen_range(0.05..0.6);
        let edges: Vec<_> = off_diagonal(n).into_iter().filter(|_| rng.gen_bool(p)).collect();
        check_against_closure(n, &edges);
    }
}

pub fn union_graph_matches_brute_force() {
    let (process, _) = random_uniformly_connected_signal(5, 0.1, 0.2, 1.0, (0.0, 6.0), Connectivity::Strong, 3).unwrap();
    let sig = process.signal();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let a = rng.gen_range(0.0..5.5);
        let b = rng.gen_range(a + 1e-6..6.0);
        let mut edges = Vec::new();
        for iv in sig.intervals() {
            if iv.start < b && iv.end > a {
                edges.extend(process.mode_graphs()[iv.mode].edges());
            }
        }
        let brute = Digraph::from_edges(5, edges).unwrap();
        assert_eq!(process.union_graph(a, b).unwrap(), brute);
    }
}

pub fn integrator_matches_two_agent_closed_form() {
    // mode 0: both agents listen to each other, mode 1: nobody listens
    let graphs = [Digraph::complete(2), Digraph::empty(2)];
    let ms = make_linear_consensus(2, 1, &graphs, &WeightProfile::unit(), Domain::Cube { half_width: 10.0 }).unwrap();
    let sig = SwitchingSignal::from_dwells(0.0, 3.0, &[0.37, 0.21, 0.55, 0.3, 0.8], &[0, 1, 0, 1, 0, 1], 0.2, Some(1.0)).unwrap();
    let sys = SwitchedSystem::new(ms, sig.clone()).unwrap();
    let x0 = [1.5, -0.5];
    let traj = sys.integrate(&x0, 0.0, 3.0, 1e-3).unwrap();
    let mean = 0.5;
    for (t, x) in traj.samples() {
        let coupled: f64 = sig
            .intervals()
            .filter(|iv| iv.mode == 0)
            .map(|iv| (iv.end.min(t) - iv.start).max(0.0))
            .sum();
        let d = (x0[0] - x0[1]) * (-2.0 * coupled).exp();
        assert!((x[0] - (mean + d / 2.0)).abs() < 1e-6, "t = {t}");
        assert!((x[1] - (mean - d / 2.0)).abs() < 1e-6, "t = {t}");
    }
}

fn stable_argmax(cert: &ScalarCertificate, x: &[f64], m: usize) -> bool {
    let top = max_v(cert, x, m);
    argmax_agents(cert, x, m, default_tie_tolerance(top)) == argmax_agents(cert, x, m, 1e-4 * top.abs().max(1.0))
}

pub fn dini_analytic_agrees_with_finite_difference() {
    let (process, _) = random_uniformly_connected_signal(6, 0.1, 0.2, 1.0, (0.0, 5.0), Connectivity::Strong, 8).unwrap();
    let weights = WeightProfile::Sinusoid {
        base: 1.0,
        amplitude: 0.5,
        frequency: 4.0,
        seed: 2,
    };
    let ms = make_linear_consensus(6, 2, process.mode_graphs(), &weights, Domain::BallProduct { radius: 10.0 }).unwrap();
    let sys = SwitchedSystem::new(ms, process.signal().clone()).unwrap();
    let v = ScalarCertificate::squared_norm();
    let w = PairCertificate::squared_difference();
    let eps = 1e-6;
    let lipschitz = 2.0 * 1.5 * 6.0;
    let tol = f64::max(1e-4, 10.0 * eps * lipschitz);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut checked = 0;
    for _ in 0..300 {
        let t = rng.gen_range(0.0..4.9);
        let x = Domain::BallProduct { radius: 1.0 }.sample(&mut rng, 6, 2);
        if stable_argmax(&v, &x, 2) {
            let a = dini_max_v(&v, &sys, t, &x, None).unwrap();
            let f = dini_max_v_fd(&v, &sys, t, &x, eps).unwrap();
            assert!((a - f).abs() <= tol, "V at t={t}: {a} vs {f}");
            checked += 1;
        }
        let top = max_w(&w, &x, 2);
        if argmax_pairs(&w, &x, 2, default_tie_tolerance(top)) == argmax_pairs(&w, &x, 2, 1e-4 * top.max(1.0)) {
            let a = dini_max_w(&w, &sys, t, &x, None).unwrap();
            let f = dini_max_w_fd(&w, &sys, t, &x, eps).unwrap();
            assert!((a - f).abs() <= tol, "W at t={t}: {a} vs {f}");
            checked += 1;
        }
    }
    assert!(checked > 500, "{checked}");
}

/// Minimizes `‖x − 1⊗c‖` over `c` by successively refined grids.
fn grid_distance(x: &[f64], m: usize) -> f64 {
    let dist = |c: &[f64]| -> f64 {
        x.chunks(m).map(|y| y.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()).sum::<f64>().sqrt()
    };
    let mut lo: Vec<f64> = (0..m).map(|k| x.chunks(m).map(|y| y[k]).fold(f64::INFINITY, f64::min)).collect();
    let mut hi: Vec<f64> = (0..m).map(|k| x.chunks(m).map(|y| y[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let steps = 40usize;
    let mut best = (f64::INFINITY, lo.clone());
    for _ in 0..30 {
        let mut idx = vec![0usize; m];
        loop {
            let c: Vec<f64> = (0..m).map(|k| lo[k] + (hi[k] - lo[k]) * idx[k] as f64 / steps as f64).collect();
            let d = dist(&c);
            if d < best.0 {
                best = (d, c);
            }
            let mut k = 0;
            while k < m {
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
            if k == m {
                break;
            }
        }
        for k in 0..m {
            let span = (hi[k] - lo[k]) / steps as f64 * 2.0;
            lo[k] = best.1[k] - span;
            hi[k] = best.1[k] + span;
        }
    }
    best.0
}

pub fn consensus_distance_matches_grid_search() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let m = rng.gen_range(1..=2);
        let n = rng.gen_range(1..=5);
        let x: Vec<f64> = (0..n * m).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let closed = consensus_distance(&x, m);
        let grid = grid_distance(&x, m);
        assert!((closed - grid).abs() < 1e-6, "{x:?}: {closed} vs {grid}");
    }
    assert!((grid_distance(&[1.0, -1.0], 1) - 2f64.sqrt()).abs() < 1e-6);
}

/// Inverse right Jacobian of SO(3) in its cotangent form.
fn l_reference(y: &Vector3<f64>) -> Matrix3<f64> {
    let th = y.norm();
    let k = Matrix3::new(0.0, -y.z, y.y, y.z, 0.0, -y.x, -y.y, y.x, 0.0);
    let c = 1.0 / (th * th) - (1.0 + th.cos()) / (2.0 * th * th.sin());
    Matrix3::identity() + 0.5 * k + c * k * k
}

pub fn so3_matrix_matches_cotangent_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..500 {
        let y = Vector3::new(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
        if y.norm() < 1e-2 {
            continue;
        }
        assert!((so3_l_matrix(&y) - l_reference(&y)).norm() < 1e-12);
    }
    let tiny = Vector3::new(1e-6, 0.0, 0.0);
    assert!((so3_l_matrix(&tiny) - Matrix3::identity()).norm() < 1e-6);
}

pub fn time_varying_mode_has_reset_clock() {
    // f(s, x) = s: the solution grows by dwell²/2 within each interval
    let field = |s: f64, _x: &[f64], out: &mut [f64]| out[0] = s;
    let ms = ModeSet::new(1, 1, vec![Mode::new(field, Digraph::empty(1), false)], Domain::Cube { half_width: 100.0 }).unwrap();
    let sig = SwitchingSignal::from_dwells(0.0, 2.0, &[0.5, 0.7], &[0, 0, 0], 0.5, None).unwrap();
    let sys = SwitchedSystem::new(ms, sig).unwrap();
    let traj = sys.integrate(&[0.0], 0.0, 2.0, 1e-2).unwrap();
    let expected = 0.5f64.powi(2) / 2.0 + 0.7f64.powi(2) / 2.0 + 0.8f64.powi(2) / 2.0;
    assert!((traj.last_state()[0] - expected).abs() < 1e-12);
}
