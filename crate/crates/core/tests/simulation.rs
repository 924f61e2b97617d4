// SPDX-License-Identifier: Apache-2.0

mod common;

use common::{addr, expected_metrics, random_network, universe};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use ssroute::sim::{Capability, Network, Trace, INFINITY};

fn all_traces(net: &Network) -> impl Iterator<Item = Trace> + '_ {
    let w = net.dest_width();
    net.nodes().flat_map(move |n| {
        universe(w, w).map(move |(d, s)| net.trace_packet(n.id(), addr(w, d), addr(w, s), 64).unwrap())
    })
}

#[test]
fn ignoring_legacy_routers_never_loop() {
    for seed in 0..60 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = 3 + (seed % 3) as u8;
        let mut net = random_network(&mut rng, w, 8, 0.4);
        net.run_to_convergence(500).unwrap();
        for t in all_traces(&net) {
            assert!(
                !t.is_loop() && !matches!(t, Trace::Expired(_)),
                "seed {seed}: {t:?}"
            );
        }
    }
}

#[test]
fn converged_metrics_are_shortest_paths() {
    for seed in 0..60 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = random_network(&mut rng, 4, 8, 0.0);
        net.run_to_convergence(500).unwrap();
        let expected = expected_metrics(&net);
        for n in net.nodes() {
            for (k, sel) in n.selected() {
                assert!(sel.metric < INFINITY);
                assert_eq!(
                    Some(&(sel.metric as u64)),
                    expected.get(&(n.id(), *k)),
                    "seed {seed}"
                );
            }
            let known = expected.keys().filter(|(id, _)| *id == n.id()).count();
            assert_eq!(
                known,
                n.selected().len(),
                "seed {seed}: node {} misses keys",
                n.name()
            );
        }
    }
}

#[test]
fn delivery_order_does_not_change_the_outcome() {
    for seed in 0..30 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = random_network(&mut rng, 4, 7, 0.0);
        let mut plain = base.clone();
        plain.run_to_convergence(500).unwrap();
        let mut shuffled = base.with_shuffled_delivery(seed);
        shuffled.run_to_convergence(500).unwrap();
        for (a, b) in plain.nodes().zip(shuffled.nodes()) {
            let metrics = |n: &ssroute::sim::Node| {
                n.selected()
                    .iter()
                    .map(|(k, s)| (*k, s.metric))
                    .collect::<Vec<_>>()
            };
            assert_eq!(metrics(a), metrics(b), "seed {seed}");
        }
    }
}

#[test]
fn uniform_destination_first_is_loop_free() {
    for seed in 100..140 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = random_network(&mut rng, 4, 8, 0.0);
        net.run_to_convergence(500).unwrap();
        assert!(all_traces(&net).all(|t| !t.is_loop()), "seed {seed}");
    }
}

#[test]
fn no_specific_update_with_empty_source_is_sent() {
    for seed in 0..40 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = random_network(&mut rng, 4, 8, 0.3);
        net.run_to_convergence(500).unwrap();
        for (from, _, u) in net.sent() {
            if net.node(*from).capability() == Capability::SpecificCapable {
                assert!(!u.src.is_some_and(|s| s.is_zero_length()));
            } else {
                assert!(u.src.is_none());
            }
        }
    }
}
