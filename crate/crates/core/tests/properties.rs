use consensus_core::dynamics::validate_locality;
use consensus_core::lyapunov::{argmax_agents, argmax_pairs};
use consensus_core::signal::dwell_slack;
use consensus_core::systems::{Blend, ScaleMap};
use consensus_core::{
    consensus_distance, make_linear_consensus, make_scaled_consensus, max_v, max_w, random_signal, smooth_transitions,
    Digraph, Domain, PairCertificate, ScalarCertificate, ScaleVariant, SwitchedSystem, SwitchingSignal, WeightProfile,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_graph(n: usize) -> impl Strategy<Value = Digraph> {
    proptest::collection::vec(any::<bool>(), n * n).prop_map(move |bits| {
        let edges = (0..n * n).filter(|&k| bits[k]).map(|k| (k / n, k % n));
        Digraph::from_edges(n, edges).unwrap()
    })
}

fn arb_signal() -> impl Strategy<Value = SwitchingSignal> {
    (1usize..4, 0.05f64..0.3, 1.0f64..4.0, 2.0f64..10.0, any::<u64>()).prop_map(|(modes, tau_d, ratio, len, seed)| {
        random_signal(modes, tau_d, tau_d * ratio, (0.0, len), seed).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mode_is_constant_between_switches(sig in arb_signal(), u in 0.0f64..1.0) {
        for iv in sig.intervals() {
            let t = iv.start + u * (iv.end - iv.start);
            if t < iv.end || !iv.complete {
                prop_assert_eq!(sig.mode_at(t).unwrap(), iv.mode);
                prop_assert!(sig.clock(t).unwrap() >= 0.0);
                prop_assert!(sig.clock(t).unwrap() <= sig.tau_u().unwrap() + 1e-12 || !iv.complete);
            }
        }
    }

    #[test]
    fn signal_round_trips_through_toml(sig in arb_signal()) {
        let text = toml::to_string(&sig).unwrap();
        let back: SwitchingSignal = toml::from_str(&text).unwrap();
        prop_assert_eq!(back, sig);
    }

    #[test]
    fn bounded_split_keeps_modes(sig in arb_signal(), extra in 0.0f64..2.0, probes in proptest::collection::vec(0.0f64..1.0, 20)) {
        let target = 2.0 * sig.tau_d() * (1.0 + extra);
        let out = sig.normalize_bounded(target).unwrap();
        let (a, b) = sig.horizon();
        for u in probes {
            let t = a + u * (b - a);
            prop_assert_eq!(out.mode_at(t).unwrap(), sig.mode_at(t).unwrap());
        }
        for w in out.switch_times().windows(2) {
            prop_assert!(w[1] - w[0] < target + dwell_slack(w[0], w[1]));
            prop_assert!(w[1] - w[0] >= sig.tau_d() - dwell_slack(w[0], w[1]));
        }
    }

    #[test]
    fn timeshift_dwells_and_sources(sig in arb_signal()) {
        let modes = sig.mode_span();
        let (out, table) = sig.expand_timeshift(modes).unwrap();
        let tau = sig.tau_d();
        for w in out.switch_times().windows(2) {
            let gap = w[1] - w[0];
            let slack = dwell_slack(w[0], w[1]) * 4.0;
            prop_assert!(gap >= tau - slack && gap < 2.0 * tau + slack, "gap {} tau {}", gap, tau);
        }
        for (k, &tau_k) in out.switch_times().iter().enumerate() {
            let (src, offset) = table.source(out.mode_ids()[k]).unwrap();
            prop_assert_eq!(src, sig.mode_at(tau_k).unwrap());
            prop_assert!((sig.clock(tau_k).unwrap() - offset).abs() < 1e-9);
        }
    }

    #[test]
    fn union_is_monotone(a in arb_graph(4), b in arb_graph(4)) {
        let u = a.union(&b).unwrap();
        prop_assert!(a.is_subgraph_of(&u) && b.is_subgraph_of(&u));
        if a.is_strongly_connected() {
            prop_assert!(u.is_strongly_connected());
        }
        if a.is_quasi_strongly_connected().is_some() {
            prop_assert!(u.is_quasi_strongly_connected().is_some());
        }
        if u.is_strongly_connected() {
            prop_assert_eq!(u.is_quasi_strongly_connected(), Some(0));
        }
    }

    #[test]
    fn neighbor_lists_round_trip(g in arb_graph(5)) {
        let back = Digraph::from_neighbor_lists(&g.neighbor_lists()).unwrap();
        prop_assert_eq!(back, g);
    }

    #[test]
    fn union_graph_grows_with_the_interval(sig in arb_signal(), a in 0.0f64..1.0, b in 0.0f64..1.0, c in 0.0f64..1.0) {
        let n = 4;
        let mut rng = ChaCha8Rng::seed_from_u64(sig.switch_times().len() as u64);
        let graphs: Vec<Digraph> = (0..sig.mode_span())
            .map(|_| Digraph::from_edges(n, (0..3).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n)))).unwrap())
            .collect();
        let process = consensus_core::GraphProcess::new(graphs, sig.clone()).unwrap();
        let (h0, h1) = sig.horizon();
        let mut p = [a, b, c].map(|u| h0 + u * (h1 - h0));
        p.sort_by(f64::total_cmp);
        prop_assume!(p[0] < p[1] && p[1] < p[2]);
        let inner = process.union_graph(p[0], p[1]).unwrap();
        let outer = process.union_graph(p[0], p[2]).unwrap();
        prop_assert!(inner.is_subgraph_of(&outer));
    }

    #[test]
    fn consensus_distance_properties(x in proptest::collection::vec(-5.0f64..5.0, 6), shift in proptest::collection::vec(-3.0f64..3.0, 2)) {
        let d = consensus_distance(&x, 2);
        let moved: Vec<f64> = x.chunks(2).flat_map(|y| [y[0] + shift[0], y[1] + shift[1]]).collect();
        prop_assert!((consensus_distance(&moved, 2) - d).abs() < 1e-9);
        prop_assert!(d <= x.iter().map(|v| v * v).sum::<f64>().sqrt() + 1e-12);
        let same: Vec<f64> = (0..3).flat_map(|_| [x[0], x[1]]).collect();
        prop_assert_eq!(consensus_distance(&same, 2), 0.0);
    }

    #[test]
    fn max_functions_bound_every_member(x in proptest::collection::vec(-5.0f64..5.0, 8)) {
        let v = ScalarCertificate::squared_norm();
        let w = PairCertificate::squared_difference();
        let top = max_v(&v, &x, 2);
        for y in x.chunks(2) {
            prop_assert!(v.value(y) <= top);
        }
        let arg = argmax_agents(&v, &x, 2, 0.0);
        prop_assert!(!arg.is_empty());
        for &i in &arg {
            prop_assert_eq!(v.value(&x[2 * i..2 * i + 2]), top);
        }
        let wt = max_w(&w, &x, 2);
        let pairs = argmax_pairs(&w, &x, 2, 0.0);
        for &(i, j) in &pairs {
            prop_assert_eq!(w.value(&x[2 * i..2 * i + 2], &x[2 * j..2 * j + 2]), wt);
            prop_assert!(pairs.contains(&(j, i)));
        }
    }

    #[test]
    fn scale_map_round_trips(power in 0.5f64..3.0, seed in any::<u64>()) {
        let s = ScaleMap { power, eta: 1.0 };
        prop_assert!(s.round_trip_error(3, 50, seed) < 1e-10);
    }

    #[test]
    fn factories_are_local(g in arb_graph(4), h in arb_graph(4), seed in any::<u64>()) {
        let graphs = [g, h];
        let lin = make_linear_consensus(4, 2, &graphs, &WeightProfile::Sinusoid { base: 1.0, amplitude: 0.3, frequency: 2.0, seed }, Domain::BallProduct { radius: 1.0 }).unwrap();
        prop_assert!(validate_locality(&lin, 5, seed).passed());
        for v in [ScaleVariant::ScaleStates, ScaleVariant::ScaleDifferences] {
            let sc = make_scaled_consensus(4, 2, &graphs, &WeightProfile::unit(), ScaleMap::default(), v).unwrap();
            prop_assert!(validate_locality(&sc, 5, seed).passed());
        }
    }

    #[test]
    fn smoothing_is_continuous_at_boundaries(sig in arb_signal(), frac in 0.01f64..0.5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let graphs: Vec<Digraph> = (0..sig.mode_span())
            .map(|_| Digraph::from_edges(3, (0..3).map(|_| (rng.gen_range(0..3), rng.gen_range(0..3)))).unwrap())
            .collect();
        let ms = make_linear_consensus(3, 1, &graphs, &WeightProfile::unit(), Domain::Cube { half_width: 2.0 }).unwrap();
        for blend in [Blend::Linear, Blend::Cosine] {
            let (sm, out) = smooth_transitions(&ms, &sig, frac * sig.tau_d(), blend).unwrap();
            let sys = SwitchedSystem::new(sm, out.clone()).unwrap();
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            for &t in out.switch_times().iter().skip(1) {
                let l = sys.rhs_left_limit(t, &x).unwrap();
                let r = sys.rhs(t, &x).unwrap();
                for (a, b) in l.iter().zip(&r) {
                    prop_assert!((a - b).abs() < 1e-10);
                }
            }
        }
    }
}
