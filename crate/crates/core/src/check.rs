// SPDX-License-Identifier: Apache-2.0

//! Randomised checking of the disambiguation engine.
//!
//! Random add/delete/change sequences are applied to a [`RibState`]; after
//! every operation the installed FIB must be complete, must forward every
//! address pair like an ideal destination-first table over the real routes,
//! must equal the table rebuilt from scratch, and must not carry any conflict
//! zone that the real routes do not already have.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::disambig::{rebuild_from_scratch, Fault, RibError, RibState, Route};
use crate::fib::{conflict_zones, is_complete, lookup_dest_first, Backend, NextHop, MAX_ENUM_PAIRS_BITS};
use crate::prefix::{Address, Prefix, RouteKey};

/// Widths above this are refused: every check enumerates all address pairs.
pub const MAX_CHECK_WIDTH: u8 = 8;

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Op {
    Add(Route),
    Delete(RouteKey),
    Change(RouteKey, NextHop),
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Add(r) => write!(f, "add {} via {}", r.key, r.nh),
            Op::Delete(k) => write!(f, "delete {k}"),
            Op::Change(k, nh) => write!(f, "change {k} via {nh}"),
        }
    }
}

impl Op {
    pub fn apply(&self, st: &mut RibState) -> Result<(), RibError> {
        match self {
            Op::Add(r) => st.add_route(r.clone()),
            Op::Delete(k) => st.delete_route(k).map(|_| ()),
            Op::Change(k, nh) => st.change_route(k, nh.clone()),
        }
    }

    /// Whether the operation is meaningful on the current route set.
    fn applicable(&self, st: &RibState) -> bool {
        match self {
            Op::Add(r) => !st.routes().contains_key(&r.key),
            Op::Delete(k) | Op::Change(k, _) => st.routes().contains_key(k),
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Violation {
    Engine(RibError),
    Incomplete,
    Lookup {
        dst: Address,
        src: Address,
        installed: Option<Box<NextHop>>,
        ideal: Option<Box<NextHop>>,
    },
    RebuildMismatch,
    NewConflictZones,
    TooManyEntries {
        entries: usize,
        bound: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let show = |nh: &Option<Box<NextHop>>| nh.as_ref().map_or("none".to_string(), |n| n.to_string());
        match self {
            Violation::Engine(e) => write!(f, "engine error: {e}"),
            Violation::Incomplete => f.write_str("installed table is not complete"),
            Violation::Lookup {
                dst,
                src,
                installed,
                ideal,
            } => write!(
                f,
                "lookup mismatch for {dst} {src}: installed {} ideal {}",
                show(installed),
                show(ideal)
            ),
            Violation::RebuildMismatch => f.write_str("installed table differs from rebuilt table"),
            Violation::NewConflictZones => f.write_str("installed table has conflict zones the routes lack"),
            Violation::TooManyEntries { entries, bound } => {
                write!(f, "{entries} entries exceed bound {bound}")
            }
        }
    }
}

/// Checks every invariant of the engine on its current state.
pub fn check_invariants(st: &RibState) -> Result<(), Violation> {
    let fib = st.fib();
    let fib_keys: Vec<RouteKey> = fib.keys().copied().collect();
    let real_keys: Vec<RouteKey> = st.routes().keys().copied().collect();

    if !is_complete(&fib_keys) {
        return Err(Violation::Incomplete);
    }
    let real_zones = conflict_zones(&real_keys);
    if conflict_zones(&fib_keys) != real_zones {
        return Err(Violation::NewConflictZones);
    }
    let bound = real_keys.len() + real_zones.len();
    if fib_keys.len() > bound {
        return Err(Violation::TooManyEntries {
            entries: fib_keys.len(),
            bound,
        });
    }

    // Exhaustive lookup comparison only where the universe is small.
    if u32::from(fib.dest_width()) + u32::from(fib.src_width()) <= MAX_ENUM_PAIRS_BITS {
        for dst in Address::all(fib.dest_width()) {
            for src in Address::all(fib.src_width()) {
                let installed = fib
                    .lookup_with(Backend::SourceFirst, dst, src)
                    .map_err(|e| Violation::Engine(e.into()))?;
                let ideal = lookup_dest_first(st.routes().iter(), dst, src)
                    .map_err(|e| Violation::Engine(e.into()))?;
                if installed != ideal {
                    return Err(Violation::Lookup {
                        dst,
                        src,
                        installed: installed.cloned().map(Box::new),
                        ideal: ideal.cloned().map(Box::new),
                    });
                }
            }
        }
    }

    let batch =
        rebuild_from_scratch(st.routes(), fib.dest_width(), fib.src_width()).map_err(Violation::Engine)?;
    if batch.iter().ne(fib.iter()) {
        return Err(Violation::RebuildMismatch);
    }
    Ok(())
}

/// Result of replaying an operation sequence.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Replay {
    Passed,
    /// Operation `index` does not apply to the state it meets.
    Invalid(usize),
    Failed(usize, Violation),
}

pub fn replay(ops: &[Op], dest_width: u8, src_width: u8, fault: Option<Fault>) -> Replay {
    let mut st = RibState::new(dest_width, src_width).with_fault(fault);
    for (i, op) in ops.iter().enumerate() {
        if !op.applicable(&st) {
            return Replay::Invalid(i);
        }
        if let Err(e) = op.apply(&mut st) {
            return Replay::Failed(i, Violation::Engine(e));
        }
        if let Err(v) = check_invariants(&st) {
            return Replay::Failed(i, v);
        }
    }
    Replay::Passed
}

#[derive(Clone, Debug)]
pub struct CheckConfig {
    pub dest_width: u8,
    pub src_width: u8,
    pub max_routes: usize,
    pub ops: usize,
    pub seed: u64,
    pub iterations: u64,
    pub fault: Option<Fault>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            dest_width: 4,
            src_width: 4,
            max_routes: 8,
            ops: 40,
            seed: 0,
            iterations: 200,
            fault: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Counterexample {
    pub iteration: u64,
    pub ops: Vec<Op>,
    pub violation: Violation,
}

impl Counterexample {
    /// A scenario file that replays the failure.
    pub fn to_scenario(&self, dest_width: u8, src_width: u8) -> String {
        let mut out = format!(
            "# counterexample: {}\nuniverse {dest_width} {src_width}\n",
            self.violation
        );
        for op in &self.ops {
            out.push_str(&format!("{op}\ncheck\n"));
        }
        out
    }
}

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub iterations: u64,
    pub operations: u64,
    pub failure: Option<Counterexample>,
}

fn random_prefix(rng: &mut ChaCha8Rng, width: u8) -> Prefix {
    let plen = rng.gen_range(0..=width);
    let bits = rng.gen::<u128>() & (u128::MAX >> (128 - width as u32));
    Prefix::new(width, bits, plen).expect("width checked by caller")
}

fn random_next_hop(rng: &mut ChaCha8Rng) -> NextHop {
    const POOL: [&str; 6] = ["A", "B", "C", "D", "E", "F"];
    NextHop::new(POOL[rng.gen_range(0..POOL.len())])
}

/// A random sequence of operations, each applicable to the state left by
/// the ones before it.
pub fn random_ops(rng: &mut ChaCha8Rng, cfg: &CheckConfig) -> Vec<Op> {
    let mut live: Vec<RouteKey> = Vec::new();
    let mut ops = Vec::with_capacity(cfg.ops);
    for _ in 0..cfg.ops {
        let grow = live.is_empty() || (live.len() < cfg.max_routes && rng.gen_bool(0.5));
        if grow {
            let key = (0..16)
                .map(|_| {
                    RouteKey::new(
                        random_prefix(rng, cfg.dest_width),
                        random_prefix(rng, cfg.src_width),
                    )
                })
                .find(|k| !live.contains(k));
            if let Some(key) = key {
                live.push(key);
                ops.push(Op::Add(Route::new(key, random_next_hop(rng))));
            }
        } else {
            let idx = rng.gen_range(0..live.len());
            if rng.gen_bool(0.5) {
                ops.push(Op::Delete(live.swap_remove(idx)));
            } else {
                ops.push(Op::Change(live[idx], random_next_hop(rng)));
            }
        }
    }
    ops
}

/// Greedily drops operations while the sequence keeps failing.
pub fn shrink(mut ops: Vec<Op>, cfg: &CheckConfig) -> (Vec<Op>, Violation) {
    let failing = |ops: &[Op]| match replay(ops, cfg.dest_width, cfg.src_width, cfg.fault) {
        Replay::Failed(i, v) => Some((i, v)),
        _ => None,
    };
    let (mut last, mut violation) = failing(&ops).expect("shrink needs a failing sequence");
    ops.truncate(last + 1);
    loop {
        let mut progressed = false;
        let mut i = 0;
        while i < ops.len() {
            let mut candidate = ops.clone();
            candidate.remove(i);
            if let Some((at, v)) = failing(&candidate) {
                candidate.truncate(at + 1);
                ops = candidate;
                last = at;
                violation = v;
                progressed = true;
            } else {
                i += 1;
            }
        }
        if !progressed {
            break;
        }
    }
    debug_assert_eq!(last + 1, ops.len());
    (ops, violation)
}

pub fn iteration_seed(seed: u64, iteration: u64) -> u64 {
    seed ^ iteration.wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

/// Runs `cfg.iterations` random sequences, stopping at the first failure,
/// which is shrunk before being reported.
pub fn run_check(cfg: &CheckConfig) -> Result<CheckReport, String> {
    for w in [cfg.dest_width, cfg.src_width] {
        if w == 0 || w > MAX_CHECK_WIDTH {
            return Err(format!("width {w} out of range 1..={MAX_CHECK_WIDTH}"));
        }
    }
    let mut report = CheckReport::default();
    for iteration in 0..cfg.iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(iteration_seed(cfg.seed, iteration));
        let ops = random_ops(&mut rng, cfg);
        report.iterations += 1;
        match replay(&ops, cfg.dest_width, cfg.src_width, cfg.fault) {
            Replay::Passed => report.operations += ops.len() as u64,
            Replay::Invalid(i) => return Err(format!("generator produced inapplicable op #{i}")),
            Replay::Failed(i, _) => {
                report.operations += i as u64 + 1;
                let (ops, violation) = shrink(ops, cfg);
                report.failure = Some(Counterexample {
                    iteration,
                    ops,
                    violation,
                });
                break;
            }
        }
    }
    Ok(report)
}
