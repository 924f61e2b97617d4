// SPDX-License-Identifier: Apache-2.0

//! Brute-force oracles for small universes. Keys are turned into explicit
//! address sets (bitmasks over at most 64 addresses per dimension) and every
//! question is answered by set arithmetic, without the library's relation
//! code.

#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ssroute::sim::{Capability, ForwardingPolicy, Network, NodeId};
use ssroute::{Address, NextHop, Prefix, RouteKey};

pub const MAX_ORACLE_WIDTH: u8 = 6;

/// Addresses of a prefix as a bitmask: bit `a` is set when address `a` is
/// inside. Computed by testing each address against the prefix bits.
pub fn mask(p: &Prefix) -> u64 {
    let w = p.width();
    assert!(w <= MAX_ORACLE_WIDTH);
    let mut m = 0u64;
    for a in 0..(1u64 << w) {
        let shift = w - p.plen();
        if (a as u128) >> shift == p.bits() >> shift {
            m |= 1 << a;
        }
    }
    m
}

/// A key as a pair of address sets.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Rect {
    pub d: u64,
    pub s: u64,
}

impl Rect {
    pub fn of(k: &RouteKey) -> Rect {
        Rect {
            d: mask(&k.dest),
            s: mask(&k.src),
        }
    }

    pub fn has(&self, d: u64, s: u64) -> bool {
        self.d >> d & 1 == 1 && self.s >> s & 1 == 1
    }

    pub fn subset(&self, o: &Rect) -> bool {
        self.d & !o.d == 0 && self.s & !o.s == 0
    }

    pub fn meet(&self, o: &Rect) -> Option<Rect> {
        let r = Rect {
            d: self.d & o.d,
            s: self.s & o.s,
        };
        (r.d != 0 && r.s != 0).then_some(r)
    }

    /// Overlapping and neither inside the other.
    pub fn conflicts(&self, o: &Rect) -> bool {
        self.meet(o).is_some() && !self.subset(o) && !o.subset(self)
    }
}

pub fn universe(dw: u8, sw: u8) -> impl Iterator<Item = (u64, u64)> {
    (0..1u64 << dw).flat_map(move |d| (0..1u64 << sw).map(move |s| (d, s)))
}

pub fn addr(width: u8, a: u64) -> Address {
    Address::new(width, a as u128).unwrap()
}

/// Ideal destination-first choice: the matching entry with the fewest
/// destinations, then the fewest sources.
pub fn oracle_dest_first<'a>(
    routes: impl IntoIterator<Item = (&'a RouteKey, &'a NextHop)>,
    d: u64,
    s: u64,
) -> Option<NextHop> {
    routes
        .into_iter()
        .map(|(k, nh)| (Rect::of(k), nh))
        .filter(|(r, _)| r.has(d, s))
        .min_by_key(|(r, _)| (r.d.count_ones(), r.s.count_ones()))
        .map(|(_, nh)| nh.clone())
}

/// Some address pair has matching entries but none inside all the others.
pub fn oracle_ambiguous(keys: &[RouteKey], dw: u8, sw: u8) -> bool {
    let rects: Vec<Rect> = keys.iter().map(Rect::of).collect();
    universe(dw, sw).any(|(d, s)| {
        let m: Vec<&Rect> = rects.iter().filter(|r| r.has(d, s)).collect();
        !m.is_empty() && !m.iter().any(|x| m.iter().all(|y| x.subset(y)))
    })
}

/// Every conflict zone is covered pointwise by entries inside the zone.
pub fn oracle_weakly_complete(keys: &[RouteKey], dw: u8, sw: u8) -> bool {
    let rects: Vec<Rect> = keys.iter().map(Rect::of).collect();
    oracle_zones(&rects).iter().all(|z| {
        universe(dw, sw)
            .filter(|(d, s)| z.has(*d, *s))
            .all(|(d, s)| rects.iter().any(|r| r.subset(z) && r.has(d, s)))
    })
}

/// Distinct conflict zones, as address sets.
pub fn oracle_zones(rects: &[Rect]) -> Vec<Rect> {
    let mut zones = Vec::new();
    for (i, a) in rects.iter().enumerate() {
        for b in &rects[i + 1..] {
            if a.conflicts(b) {
                let z = a.meet(b).unwrap();
                if !zones.contains(&z) {
                    zones.push(z);
                }
            }
        }
    }
    zones.sort_by_key(|z| (z.d, z.s));
    zones
}

/// All-pairs shortest path costs, `None` when unreachable.
pub fn floyd(net: &Network) -> Vec<Vec<Option<u64>>> {
    let n = net.len();
    let mut dist = vec![vec![None; n]; n];
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = Some(0);
        for (j, cell) in row.iter_mut().enumerate() {
            if let Some(c) = net.link_cost(NodeId(i as u32), NodeId(j as u32)) {
                *cell = Some(c as u64);
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if let (Some(a), Some(b)) = (dist[i][k], dist[k][j]) {
                    if dist[i][j].is_none_or(|c| a + b < c) {
                        dist[i][j] = Some(a + b);
                    }
                }
            }
        }
    }
    dist
}

pub fn random_prefix(rng: &mut ChaCha8Rng, width: u8) -> Prefix {
    let plen = rng.gen_range(0..=width);
    let bits = rng.gen_range(0..1u128 << width);
    Prefix::new(width, bits, plen).unwrap()
}

pub fn random_key(rng: &mut ChaCha8Rng, dw: u8, sw: u8) -> RouteKey {
    RouteKey::new(random_prefix(rng, dw), random_prefix(rng, sw))
}

/// Connected random graph: a random spanning tree plus a few extra links.
/// `legacy` is the probability that a node is a legacy (ignore) router.
/// Capable nodes originate arbitrary keys, legacy nodes non-specific ones.
pub fn random_network(rng: &mut ChaCha8Rng, width: u8, max_nodes: usize, legacy: f64) -> Network {
    let n = rng.gen_range(1..=max_nodes);
    let mut net = Network::new(width, width);
    for i in 0..n {
        let cap = if rng.gen_bool(legacy) {
            Capability::LegacyIgnore
        } else {
            Capability::SpecificCapable
        };
        net.add_node(&format!("N{i}"), cap, ForwardingPolicy::DestFirst)
            .unwrap();
    }
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(rng);
    for i in 1..n {
        let j = rng.gen_range(0..i);
        net.add_link(NodeId(order[i]), NodeId(order[j]), rng.gen_range(1..=4))
            .unwrap();
    }
    for _ in 0..rng.gen_range(0..=n) {
        let (a, b) = (rng.gen_range(0..n as u32), rng.gen_range(0..n as u32));
        if a != b && net.link_cost(NodeId(a), NodeId(b)).is_none() {
            net.add_link(NodeId(a), NodeId(b), rng.gen_range(1..=4)).unwrap();
        }
    }
    for _ in 0..rng.gen_range(1..=2 * n) {
        let id = NodeId(rng.gen_range(0..n as u32));
        let mut key = random_key(rng, width, width);
        if net.node(id).capability().is_legacy() {
            key.src = Prefix::zero(width);
        }
        net.originate(id, key, rng.gen_range(0..3)).unwrap();
    }
    net
}

/// Expected converged metric of every key at every node: the cheapest
/// origination plus path cost.
pub fn expected_metrics(net: &Network) -> BTreeMap<(NodeId, RouteKey), u64> {
    let dist = floyd(net);
    let mut out = BTreeMap::new();
    for n in net.nodes() {
        for o in net.nodes() {
            let Some(d) = dist[n.id().0 as usize][o.id().0 as usize] else {
                continue;
            };
            for (k, m) in o.originated() {
                let e = out.entry((n.id(), *k)).or_insert(u64::MAX);
                *e = (*e).min(*m as u64 + d);
            }
        }
    }
    out
}
