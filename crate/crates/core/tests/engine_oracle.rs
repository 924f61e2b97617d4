// SPDX-License-Identifier: Apache-2.0

mod common;

use std::collections::BTreeMap;

use common::{addr, oracle_dest_first, oracle_zones, random_key, universe, Rect};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ssroute::{rebuild_from_scratch, Backend, NextHop, Origin, RibState, Route, RouteKey};

/// Compares the engine with the oracles after one operation.
fn compare(st: &RibState, model: &BTreeMap<RouteKey, NextHop>, dw: u8, sw: u8) -> Result<(), String> {
    if st.routes() != model {
        return Err("route set drifted".into());
    }
    let fib = st.fib();
    for (d, s) in universe(dw, sw) {
        let got = fib
            .lookup_with(Backend::SourceFirst, addr(dw, d), addr(sw, s))
            .map_err(|e| e.to_string())?;
        let want = oracle_dest_first(model.iter(), d, s);
        if got != want.as_ref() {
            return Err(format!("lookup ({d}, {s}): got {got:?}, want {want:?}"));
        }
    }
    let fib_rects: Vec<Rect> = fib.keys().map(Rect::of).collect();
    let real_rects: Vec<Rect> = model.keys().map(Rect::of).collect();
    let zones = oracle_zones(&real_rects);
    if oracle_zones(&fib_rects) != zones {
        return Err("FIB has conflict zones the routes do not".into());
    }
    for z in &zones {
        if !fib_rects.contains(z) {
            return Err("a conflict zone has no entry".into());
        }
    }
    // Every entry is a real route or a zone, tagged accordingly.
    for (k, e) in fib.iter() {
        let real = model.get(k);
        match e.origin {
            Origin::Real if real != Some(&e.nh) => return Err(format!("{k} tagged real")),
            Origin::Disambiguation if real.is_some() || !zones.contains(&Rect::of(k)) => {
                return Err(format!("{k} tagged disambiguation"))
            }
            _ => {}
        }
    }
    let batch = rebuild_from_scratch(model, dw, sw).map_err(|e| e.to_string())?;
    if batch.iter().ne(fib.iter()) {
        return Err("incremental table differs from rebuild".into());
    }
    Ok(())
}

fn run_sequence(seed: u64, dw: u8, sw: u8, max_routes: usize, ops: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut st = RibState::new(dw, sw);
    let mut model: BTreeMap<RouteKey, NextHop> = BTreeMap::new();
    let hops = ["A", "B", "C", "D"];
    for i in 0..ops {
        let nh = NextHop::new(hops[rng.gen_range(0..hops.len())]);
        let choice = rng.gen_range(0..10);
        let step = if model.is_empty() || (choice < 5 && model.len() < max_routes) {
            let key = random_key(&mut rng, dw, sw);
            if model.contains_key(&key) {
                continue;
            }
            model.insert(key, nh.clone());
            format!("add {key} via {nh}")
                + &st
                    .add_route(Route::new(key, nh))
                    .err()
                    .map(|e| format!(": {e}"))
                    .unwrap_or_default()
        } else {
            let key = *model.keys().nth(rng.gen_range(0..model.len())).unwrap();
            if choice < 8 {
                model.remove(&key);
                format!("delete {key}")
                    + &st
                        .delete_route(&key)
                        .err()
                        .map(|e| format!(": {e}"))
                        .unwrap_or_default()
            } else {
                model.insert(key, nh.clone());
                format!("change {key} via {nh}")
                    + &st
                        .change_route(&key, nh)
                        .err()
                        .map(|e| format!(": {e}"))
                        .unwrap_or_default()
            }
        };
        compare(&st, &model, dw, sw).map_err(|e| format!("seed {seed}, op {i} `{step}`: {e}"))?;
    }
    Ok(())
}

#[test]
fn random_sequences_small_universe() {
    for seed in 0..150 {
        run_sequence(seed, 3, 3, 10, 30).unwrap();
    }
}

#[test]
fn random_sequences_uneven_widths() {
    for seed in 1000..1060 {
        run_sequence(seed, 5, 2, 12, 40).unwrap();
        run_sequence(seed, 2, 5, 12, 40).unwrap();
    }
}

#[test]
fn same_routes_in_any_order_give_same_table() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..50 {
        let mut routes: Vec<Route> = (0..8)
            .map(|i| Route::new(random_key(&mut rng, 4, 4), NextHop::new(format!("if{i}"))))
            .collect();
        routes.sort_by_key(|r| r.key);
        routes.dedup_by_key(|r| r.key);
        let build = |rs: &[Route]| {
            let mut st = RibState::new(4, 4);
            for r in rs {
                st.add_route(r.clone()).unwrap();
            }
            st.fib().clone()
        };
        let forward = build(&routes);
        routes.reverse();
        assert!(forward.iter().eq(build(&routes).iter()));
    }
}
