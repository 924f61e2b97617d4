// SPDX-License-Identifier: Apache-2.0

//! Source-specific routing: destination/source prefix pairs, a FIB
//! disambiguation engine that lets source-first forwarding tables behave
//! destination-first, and a deterministic simulator of a source-specific
//! distance-vector protocol.

pub mod check;
pub mod cli;
pub mod disambig;
pub mod fib;
pub mod prefix;
pub mod scenario;
pub mod sim;

pub use disambig::{rebuild_from_scratch, FibOp, RibError, RibState, Route};
pub use fib::{Backend, Fib, FibEntry, FibError, NextHop, Origin};
pub use prefix::{Address, PairOrder, Prefix, PrefixError, PrefixRelation, RouteKey};
