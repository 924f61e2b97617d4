// SPDX-License-Identifier: Apache-2.0

//! Line-based scenario files for the FIB engine and for the network
//! simulator, and the text reports produced by running them.
//!
//! FIB scenarios:
//!
//! ```text
//! universe 4 4
//! add 00/2 via A
//! add /0 from 1/1 via C
//! delete 00/2
//! change /0 from 1/1 via D
//! lookup 0000 1000
//! expect 0000 1000 D
//! check
//! dump
//! ```
//!
//! Topologies:
//!
//! ```text
//! universe 4 4
//! node A capable dest-first
//! node B strip
//! link A B 1
//! originate A 01/2 from 10/2 metric 0
//! trace A 0100 0000
//! ```
//!
//! `#` starts a comment. Both formats default to a 128/128 universe.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use thiserror::Error;

use crate::check::check_invariants;
use crate::disambig::{Fault, RibState, Route};
use crate::fib::{Backend, Fib, NextHop};
use crate::prefix::{Address, Prefix, RouteKey};
use crate::sim::{Capability, ForwardingPolicy, Metric, Network, SimError, Trace};

pub const DEFAULT_WIDTH: u8 = 128;
pub const TRACE_TTL: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum DumpStyle {
    Listing,
    /// `ip rule` / `ip route` style, one table per source prefix.
    Ip,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Command {
    Add(Route),
    Delete(RouteKey),
    Change(RouteKey, NextHop),
    Dump(Option<DumpStyle>),
    Lookup(Address, Address),
    Expect(Address, Address, Option<NextHop>),
    Check,
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub dest_width: u8,
    pub src_width: u8,
    /// Commands with their 1-based line numbers.
    pub commands: Vec<(usize, Command)>,
}

/// Non-empty, comment-stripped lines with their 1-based numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, line)| {
        let line = line.split('#').next().unwrap_or("");
        let words: Vec<&str> = line.split_whitespace().collect();
        (!words.is_empty()).then_some((i + 1, words))
    })
}

fn parse_width(word: &str) -> Result<u8, String> {
    match word.parse::<u8>() {
        Ok(w) if (1..=128).contains(&w) => Ok(w),
        _ => Err(format!("invalid width `{word}`")),
    }
}

/// Finds the `universe` line, which must come before anything else.
/// `widths` overrides the defaults and must agree with the file if both are
/// given.
fn universe(text: &str, widths: Option<(u8, u8)>) -> Result<(u8, u8), ParseError> {
    let mut found = None;
    for (n, (line, words)) in lines(text).enumerate() {
        if words[0] != "universe" {
            continue;
        }
        let err = |message: String| ParseError { line, message };
        if n != 0 || found.is_some() {
            return Err(err("`universe` must be the first command".into()));
        }
        if words.len() != 3 {
            return Err(err("usage: universe <dest-width> <src-width>".into()));
        }
        found = Some((
            parse_width(words[1]).map_err(err)?,
            parse_width(words[2]).map_err(err)?,
        ));
    }
    match (found, widths) {
        (Some(f), Some(w)) if f != w => Err(ParseError {
            line: 0,
            message: format!(
                "universe {} {} disagrees with requested widths {} {}",
                f.0, f.1, w.0, w.1
            ),
        }),
        (Some(f), _) => Ok(f),
        (None, Some(w)) => Ok(w),
        (None, None) => Ok((DEFAULT_WIDTH, DEFAULT_WIDTH)),
    }
}

/// `D` or `D from S`.
fn parse_key(words: &[&str], dw: u8, sw: u8) -> Result<RouteKey, String> {
    let dest = |w: &str| Prefix::parse(w, dw).map_err(|e| format!("{w}: {e}"));
    let src = |w: &str| Prefix::parse(w, sw).map_err(|e| format!("{w}: {e}"));
    match words {
        [d] => Ok(RouteKey::new(dest(d)?, Prefix::zero(sw))),
        [d, "from", s] => Ok(RouteKey::new(dest(d)?, src(s)?)),
        _ => Err(format!(
            "expected `<dest> [from <src>]`, got `{}`",
            words.join(" ")
        )),
    }
}

/// `<key> via <next-hop>`.
fn parse_key_via(words: &[&str], dw: u8, sw: u8) -> Result<(RouteKey, NextHop), String> {
    let Some(pos) = words.iter().position(|w| *w == "via") else {
        return Err("missing `via <next-hop>`".into());
    };
    let key = parse_key(&words[..pos], dw, sw)?;
    match &words[pos + 1..] {
        [nh] => Ok((key, parse_next_hop(nh)?)),
        _ => Err("expected a single next hop after `via`".into()),
    }
}

fn parse_next_hop(word: &str) -> Result<NextHop, String> {
    NextHop::parse(word).ok_or_else(|| format!("invalid next hop `{word}`"))
}

fn parse_address(word: &str, width: u8) -> Result<Address, String> {
    Address::parse(word, width).map_err(|e| format!("{word}: {e}"))
}

fn parse_command(words: &[&str], dw: u8, sw: u8) -> Result<Command, String> {
    let rest = &words[1..];
    match words[0] {
        "add" => parse_key_via(rest, dw, sw).map(|(k, nh)| Command::Add(Route::new(k, nh))),
        "delete" => parse_key(rest, dw, sw).map(Command::Delete),
        "change" => parse_key_via(rest, dw, sw).map(|(k, nh)| Command::Change(k, nh)),
        "dump" => match rest {
            [] => Ok(Command::Dump(None)),
            ["listing"] => Ok(Command::Dump(Some(DumpStyle::Listing))),
            ["ip"] => Ok(Command::Dump(Some(DumpStyle::Ip))),
            _ => Err("usage: dump [listing|ip]".into()),
        },
        "lookup" => match rest {
            [d, s] => Ok(Command::Lookup(parse_address(d, dw)?, parse_address(s, sw)?)),
            _ => Err("usage: lookup <dst> <src>".into()),
        },
        "expect" => match rest {
            [d, s, nh] => {
                let nh = if *nh == "none" {
                    None
                } else {
                    Some(parse_next_hop(nh)?)
                };
                Ok(Command::Expect(parse_address(d, dw)?, parse_address(s, sw)?, nh))
            }
            _ => Err("usage: expect <dst> <src> <next-hop|none>".into()),
        },
        "check" if rest.is_empty() => Ok(Command::Check),
        other => Err(format!("unknown command `{other}`")),
    }
}

impl Scenario {
    pub fn parse(text: &str, widths: Option<(u8, u8)>) -> Result<Scenario, ParseError> {
        let (dw, sw) = universe(text, widths)?;
        let mut commands = Vec::new();
        for (line, words) in lines(text) {
            if words[0] == "universe" {
                continue;
            }
            let command = parse_command(&words, dw, sw).map_err(|message| ParseError { line, message })?;
            commands.push((line, command));
        }
        Ok(Scenario {
            dest_width: dw,
            src_width: sw,
            commands,
        })
    }
}

/// Text produced by a run, and whether any expectation failed.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Report {
    pub output: String,
    pub failed: bool,
    pub timed_out: bool,
}

fn show(nh: Option<&NextHop>) -> String {
    nh.map_or_else(|| "none".to_string(), NextHop::to_string)
}

/// Runs a FIB scenario. Each route operation is echoed, followed by the
/// primitives it issued.
pub fn run_scenario(sc: &Scenario, backend: Backend, fault: Option<Fault>) -> Report {
    let mut st = RibState::new(sc.dest_width, sc.src_width).with_fault(fault);
    st.set_backend(backend);
    let mut rep = Report::default();
    let out = &mut rep.output;
    for (line, cmd) in &sc.commands {
        let op = match cmd {
            Command::Add(r) => {
                let _ = writeln!(out, "add {} via {}", r.key, r.nh);
                Some(st.add_route(r.clone()))
            }
            Command::Delete(k) => {
                let _ = writeln!(out, "delete {k}");
                Some(st.delete_route(k).map(|_| ()))
            }
            Command::Change(k, nh) => {
                let _ = writeln!(out, "change {k} via {nh}");
                Some(st.change_route(k, nh.clone()))
            }
            Command::Dump(style) => {
                let style = style.unwrap_or(match sc.dest_width {
                    32 | 128 => DumpStyle::Ip,
                    _ => DumpStyle::Listing,
                });
                match style {
                    DumpStyle::Listing => {
                        let _ = writeln!(out, "dump ({} entries)", st.fib().len());
                        out.push_str(&st.fib().dump());
                    }
                    DumpStyle::Ip => out.push_str(&render_ip(st.fib())),
                }
                None
            }
            Command::Lookup(d, s) => {
                let result = st.fib().lookup(*d, *s);
                match result {
                    Ok(nh) => {
                        let _ = writeln!(out, "lookup {d} {s} -> {}", show(nh));
                    }
                    Err(e) => {
                        let _ = writeln!(out, "line {line}: lookup {d} {s}: {e}");
                        rep.failed = true;
                    }
                }
                None
            }
            Command::Expect(d, s, want) => {
                match st.fib().lookup(*d, *s) {
                    Ok(got) if got == want.as_ref() => {}
                    Ok(got) => {
                        let _ = writeln!(
                            out,
                            "line {line}: expected {d} {s} -> {}, got {}",
                            show(want.as_ref()),
                            show(got)
                        );
                        rep.failed = true;
                    }
                    Err(e) => {
                        let _ = writeln!(out, "line {line}: expect {d} {s}: {e}");
                        rep.failed = true;
                    }
                }
                None
            }
            Command::Check => {
                if let Err(v) = check_invariants(&st) {
                    let _ = writeln!(out, "line {line}: check failed: {v}");
                    rep.failed = true;
                }
                None
            }
        };
        if let Some(result) = op {
            for prim in st.take_log() {
                let _ = writeln!(out, "  {prim}");
            }
            if let Err(e) = result {
                let _ = writeln!(out, "line {line}: {e}");
                rep.failed = true;
                break;
            }
        }
    }
    rep
}

fn ip_destination(p: &Prefix) -> String {
    if p.is_zero_length() {
        "default".to_string()
    } else if p.plen() == p.width() {
        p.network().to_string()
    } else {
        p.to_string()
    }
}

fn ip_route_line(dest: &Prefix, nh: &NextHop) -> String {
    let via = nh.via.as_ref().map(|v| format!("via {v} ")).unwrap_or_default();
    format!("{} {via}dev {} proto ssrt\n", ip_destination(dest), nh.interface)
}

/// Renders a table as Linux policy routing would hold it: non-specific
/// entries in `main`, and one numbered table per source prefix, consulted
/// most specific source first.
pub fn render_ip(fib: &Fib) -> String {
    let family = if fib.dest_width() == 128 { "ip -6" } else { "ip" };
    let mut sources: Vec<Prefix> = fib
        .keys()
        .map(|k| k.src)
        .filter(|s| !s.is_zero_length())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    sources.sort_by(|a, b| b.plen().cmp(&a.plen()).then(a.cmp(b)));

    let mut out = format!("# {family} rule show\n0:\tfrom all lookup local\n");
    for (i, s) in sources.iter().enumerate() {
        let _ = writeln!(out, "{}:\tfrom {s} lookup {}", 101 + i, 11 + i);
    }
    out.push_str("32766:\tfrom all lookup main\n32767:\tfrom all lookup default\n");

    let _ = writeln!(out, "# {family} route show");
    for (k, e) in fib.iter().filter(|(k, _)| k.src.is_zero_length()) {
        out.push_str(&ip_route_line(&k.dest, &e.nh));
    }
    for (i, s) in sources.iter().enumerate() {
        let _ = writeln!(out, "# {family} route show table {}", 11 + i);
        for (k, e) in fib.iter().filter(|(k, _)| k.src == *s) {
            out.push_str(&ip_route_line(&k.dest, &e.nh));
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Topology {
    pub network: Network,
    /// Trace requests: start node, destination, source.
    pub traces: Vec<(String, Address, Address)>,
}

fn parse_capability(word: &str) -> Option<Capability> {
    match word {
        "capable" => Some(Capability::SpecificCapable),
        "ignore" => Some(Capability::LegacyIgnore),
        "strip" => Some(Capability::LegacyStrip),
        _ => None,
    }
}

fn parse_policy(word: &str) -> Option<ForwardingPolicy> {
    match word {
        "dest-first" => Some(ForwardingPolicy::DestFirst),
        "source-first" => Some(ForwardingPolicy::SourceFirst),
        _ => None,
    }
}

impl Topology {
    pub fn parse(text: &str) -> Result<Topology, ParseError> {
        let (dw, sw) = universe(text, None)?;
        let mut net = Network::new(dw, sw);
        let mut traces = Vec::new();
        for (line, words) in lines(text) {
            let err = |message: String| ParseError { line, message };
            let node = |net: &Network, name: &str| {
                net.node_id(name)
                    .ok_or_else(|| err(format!("unknown node `{name}`")))
            };
            match (words[0], &words[1..]) {
                ("universe", _) => {}
                ("node", [name, opts @ ..]) if opts.len() <= 2 => {
                    let mut cap = Capability::SpecificCapable;
                    let mut policy = ForwardingPolicy::DestFirst;
                    for o in opts {
                        if let Some(c) = parse_capability(o) {
                            cap = c;
                        } else if let Some(p) = parse_policy(o) {
                            policy = p;
                        } else {
                            return Err(err(format!("unknown node option `{o}`")));
                        }
                    }
                    net.add_node(name, cap, policy).map_err(|e| err(e.to_string()))?;
                }
                ("link", [a, b, cost]) => {
                    let cost: Metric = cost.parse().map_err(|_| err(format!("invalid cost `{cost}`")))?;
                    let (a, b) = (node(&net, a)?, node(&net, b)?);
                    net.add_link(a, b, cost).map_err(|e| err(e.to_string()))?;
                }
                ("originate", [name, rest @ .., "metric", m]) => {
                    let id = node(&net, name)?;
                    let key = parse_key(rest, dw, sw).map_err(err)?;
                    let m: Metric = m.parse().map_err(|_| err(format!("invalid metric `{m}`")))?;
                    net.originate(id, key, m).map_err(|e| err(e.to_string()))?;
                }
                ("trace", [name, d, s]) => {
                    node(&net, name)?;
                    let d = parse_address(d, dw).map_err(err)?;
                    let s = parse_address(s, sw).map_err(err)?;
                    traces.push((name.to_string(), d, s));
                }
                (other, _) => return Err(err(format!("malformed `{other}` line"))),
            }
        }
        Ok(Topology { network: net, traces })
    }
}

/// Converges the network, then prints every node's selected routes and the
/// requested traces.
pub fn run_topology(mut topo: Topology, max_rounds: u64) -> Result<Report, SimError> {
    let mut rep = Report::default();
    let net = &mut topo.network;
    match net.run_to_convergence(max_rounds) {
        Ok(rounds) => {
            let _ = writeln!(rep.output, "converged in {rounds} rounds");
        }
        Err(SimError::Timeout(rounds)) => {
            let _ = writeln!(rep.output, "timeout: no convergence after {rounds} rounds");
            rep.timed_out = true;
        }
        Err(e) => return Err(e),
    }
    let out = &mut rep.output;
    for n in net.nodes() {
        let _ = writeln!(out, "node {} {} {}", n.name(), n.capability(), n.policy());
        for (key, sel) in n.selected() {
            match sel.via {
                None => {
                    let _ = writeln!(out, "  {key} local metric {}", sel.metric);
                }
                Some(v) => {
                    let _ = writeln!(out, "  {key} via {} metric {}", net.node(v).name(), sel.metric);
                }
            }
        }
    }
    for (name, d, s) in &topo.traces {
        let start = net
            .node_id(name)
            .ok_or_else(|| SimError::UnknownNode(name.clone()))?;
        let _ = writeln!(out, "trace {name} {d} {s}");
        let trace = net.trace_packet(start, *d, *s, TRACE_TTL)?;
        let (path, verdict) = match &trace {
            Trace::Delivered(p) => (p, "DELIVERED"),
            Trace::Dropped(p) => (p, "DROPPED"),
            Trace::Loop(c) => (c, "LOOP"),
            Trace::Expired(p) => (p, "EXPIRED"),
        };
        if let Trace::Loop(cycle) = &trace {
            let _ = writeln!(out, "  hop {}", net.node(start).name());
            // Hops up to the first node of the cycle, then the cycle itself.
            let mut cur = start;
            while cur != cycle[0] {
                cur = match net.forward(cur, *d, *s)? {
                    crate::sim::Forward::Neighbor(n) => n,
                    _ => break,
                };
                let _ = writeln!(out, "  hop {}", net.node(cur).name());
            }
            for n in cycle.iter().skip(1).chain(&cycle[..1]) {
                let _ = writeln!(out, "  hop {}", net.node(*n).name());
            }
        } else {
            for n in path {
                let _ = writeln!(out, "  hop {}", net.node(*n).name());
            }
        }
        let names = net.names(path);
        match &trace {
            Trace::Dropped(_) => {
                let _ = writeln!(out, "  {verdict} {}", names.last().copied().unwrap_or(""));
            }
            Trace::Expired(_) => {
                let _ = writeln!(out, "  {verdict}");
            }
            _ => {
                let _ = writeln!(out, "  {verdict} {}", names.join(" "));
            }
        }
    }
    Ok(rep)
}
