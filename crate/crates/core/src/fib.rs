// SPDX-License-Identifier: Apache-2.0

//! The installed forwarding table.
//!
//! A [`Fib`] is only ever changed through [`Fib::install`], [`Fib::uninstall`]
//! and [`Fib::switch`]. Each primitive checks its precondition and refuses to
//! run otherwise, so a misbehaving caller shows up as an error instead of a
//! silently corrupted table.
//!
//! Two lookup backends are modelled. The destination-first backend is the
//! ideal source-specific FIB. The source-first backend stands for the usual
//! "one table per source prefix, selected before the destination is looked
//! at" facility; picking the minimum under the source-first order over a
//! single entry set gives the same answer as materialising the per-source
//! tables and doing a longest destination match inside the selected one.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::prefix::{Address, PairOrder, Prefix, PrefixError, RouteKey};

/// Largest number of address pairs the brute-force predicates will visit.
pub const MAX_ENUM_PAIRS_BITS: u32 = 24;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FibError {
    #[error(transparent)]
    Prefix(#[from] PrefixError),
    #[error("install: {0} is already present")]
    Duplicate(RouteKey),
    #[error("no entry for {0}")]
    Missing(RouteKey),
    #[error("entry {key} has next hop {found}, expected {expected}")]
    NextHopMismatch {
        key: RouteKey,
        expected: Box<NextHop>,
        found: Box<NextHop>,
    },
    #[error("ambiguous lookup for destination {dst} source {src}")]
    Ambiguous { dst: Address, src: Address },
}

/// An interface and, optionally, the neighbour address on it.
///
/// Text form is `iface` or `via%iface`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct NextHop {
    pub interface: String,
    pub via: Option<String>,
}

impl NextHop {
    pub fn new(interface: impl Into<String>) -> Self {
        NextHop {
            interface: interface.into(),
            via: None,
        }
    }

    pub fn with_via(interface: impl Into<String>, via: impl Into<String>) -> Self {
        NextHop {
            interface: interface.into(),
            via: Some(via.into()),
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        let text = text.trim();
        if text.is_empty() || text.contains(char::is_whitespace) {
            return None;
        }
        match text.split_once('%') {
            Some((via, iface)) if !via.is_empty() && !iface.is_empty() => Some(NextHop::with_via(iface, via)),
            Some(_) => None,
            None => Some(NextHop::new(text)),
        }
    }
}

impl fmt::Display for NextHop {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.via {
            Some(via) => write!(f, "{via}%{}", self.interface),
            None => f.write_str(&self.interface),
        }
    }
}

/// Whether an entry mirrors a real route or only covers a conflict zone.
/// Lookups ignore it.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Origin {
    Real,
    Disambiguation,
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default)]
pub enum Backend {
    DestFirst,
    #[default]
    SourceFirst,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::DestFirst => "dest-first",
            Backend::SourceFirst => "source-first",
        })
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct FibEntry {
    pub nh: NextHop,
    pub origin: Origin,
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Fib {
    dest_width: u8,
    src_width: u8,
    backend: Backend,
    entries: BTreeMap<RouteKey, FibEntry>,
}

impl Fib {
    pub fn new(dest_width: u8, src_width: u8, backend: Backend) -> Self {
        // Validate the widths once so every later check is a plain compare.
        Prefix::zero(dest_width);
        Prefix::zero(src_width);
        Fib {
            dest_width,
            src_width,
            backend,
            entries: BTreeMap::new(),
        }
    }

    pub fn dest_width(&self) -> u8 {
        self.dest_width
    }

    pub fn src_width(&self) -> u8 {
        self.src_width
    }

    pub fn backend(&self) -> Backend {
        self.backend
    }

    pub fn set_backend(&mut self, backend: Backend) {
        self.backend = backend;
    }

    pub fn check_key(&self, key: &RouteKey) -> Result<(), FibError> {
        key.dest.check_width(self.dest_width)?;
        key.src.check_width(self.src_width)?;
        Ok(())
    }

    pub fn install(&mut self, key: RouteKey, nh: NextHop, origin: Origin) -> Result<(), FibError> {
        self.check_key(&key)?;
        if self.entries.contains_key(&key) {
            return Err(FibError::Duplicate(key));
        }
        self.entries.insert(key, FibEntry { nh, origin });
        Ok(())
    }

    /// Removes `key`, which must currently point at `nh`.
    pub fn uninstall(&mut self, key: &RouteKey, nh: &NextHop) -> Result<FibEntry, FibError> {
        self.expect_nh(key, nh)?;
        Ok(self.entries.remove(key).expect("checked above"))
    }

    /// Replaces the next hop of `key` from `old` to `new`; same as an
    /// uninstall followed by an install.
    pub fn switch(&mut self, key: &RouteKey, old: &NextHop, new: NextHop) -> Result<(), FibError> {
        self.expect_nh(key, old)?;
        self.entries.get_mut(key).expect("checked above").nh = new;
        Ok(())
    }

    pub(crate) fn set_origin(&mut self, key: &RouteKey, origin: Origin) -> Result<(), FibError> {
        let entry = self.entries.get_mut(key).ok_or(FibError::Missing(*key))?;
        entry.origin = origin;
        Ok(())
    }

    fn expect_nh(&self, key: &RouteKey, nh: &NextHop) -> Result<(), FibError> {
        let entry = self.entries.get(key).ok_or(FibError::Missing(*key))?;
        if &entry.nh != nh {
            return Err(FibError::NextHopMismatch {
                key: *key,
                expected: Box::new(nh.clone()),
                found: Box::new(entry.nh.clone()),
            });
        }
        Ok(())
    }

    pub fn get(&self, key: &RouteKey) -> Option<&FibEntry> {
        self.entries.get(key)
    }

    pub fn contains_key(&self, key: &RouteKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in dump order.
    pub fn iter(&self) -> impl Iterator<Item = (&RouteKey, &FibEntry)> {
        self.entries.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &RouteKey> {
        self.entries.keys()
    }

    fn next_hops(&self) -> impl Iterator<Item = (&RouteKey, &NextHop)> {
        self.entries.iter().map(|(k, e)| (k, &e.nh))
    }

    /// Looks up a packet with the table's configured backend.
    pub fn lookup(&self, dst: Address, src: Address) -> Result<Option<&NextHop>, FibError> {
        self.lookup_with(self.backend, dst, src)
    }

    pub fn lookup_with(
        &self,
        backend: Backend,
        dst: Address,
        src: Address,
    ) -> Result<Option<&NextHop>, FibError> {
        self.check_addresses(dst, src)?;
        match backend {
            Backend::DestFirst => lookup_dest_first(self.next_hops(), dst, src),
            Backend::SourceFirst => lookup_source_first(self.next_hops(), dst, src),
        }
    }

    fn check_addresses(&self, dst: Address, src: Address) -> Result<(), FibError> {
        for (addr, width) in [(dst, self.dest_width), (src, self.src_width)] {
            if addr.width() != width {
                return Err(PrefixError::WidthMismatch {
                    expected: width,
                    found: addr.width(),
                }
                .into());
            }
        }
        Ok(())
    }

    /// One line per entry, sorted by destination then source:
    /// `<dest> from <src> via <nh>`, with a trailing `disambiguation` tag on
    /// entries that do not mirror a real route.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (key, entry) in &self.entries {
            out.push_str(&format!("{key} via {}", entry.nh));
            if entry.origin == Origin::Disambiguation {
                out.push_str(" disambiguation");
            }
            out.push('\n');
        }
        out
    }
}

/// Picks the unique minimum of `items` under `cmp`, or reports that there is
/// none. `Incomparable` outcomes are tolerated during the scan but the winner
/// must be below every other element.
pub(crate) fn unique_min<T: Copy>(items: &[T], cmp: impl Fn(&T, &T) -> PairOrder) -> Result<Option<T>, ()> {
    let Some(mut best) = items.first().copied() else {
        return Ok(None);
    };
    for item in &items[1..] {
        if cmp(item, &best) == PairOrder::Less {
            best = *item;
        }
    }
    let ok = items
        .iter()
        .all(|item| matches!(cmp(&best, item), PairOrder::Less | PairOrder::Equal));
    if ok {
        Ok(Some(best))
    } else {
        Err(())
    }
}

fn lookup_by<'a, I>(
    entries: I,
    dst: Address,
    src: Address,
    cmp: impl Fn(&RouteKey, &RouteKey) -> PairOrder,
) -> Result<Option<&'a NextHop>, FibError>
where
    I: IntoIterator<Item = (&'a RouteKey, &'a NextHop)>,
{
    let matching: Vec<(&RouteKey, &NextHop)> = entries
        .into_iter()
        .filter(|(key, _)| key.matches(dst, src))
        .collect();
    unique_min(&matching, |a, b| cmp(a.0, b.0))
        .map(|m| m.map(|(_, nh)| nh))
        .map_err(|()| FibError::Ambiguous { dst, src })
}

/// Ideal destination-first lookup.
pub fn lookup_dest_first<'a, I>(
    entries: I,
    dst: Address,
    src: Address,
) -> Result<Option<&'a NextHop>, FibError>
where
    I: IntoIterator<Item = (&'a RouteKey, &'a NextHop)>,
{
    lookup_by(entries, dst, src, RouteKey::dest_first_cmp)
}

/// Source-first lookup: the behaviour of per-source policy tables.
pub fn lookup_source_first<'a, I>(
    entries: I,
    dst: Address,
    src: Address,
) -> Result<Option<&'a NextHop>, FibError>
where
    I: IntoIterator<Item = (&'a RouteKey, &'a NextHop)>,
{
    lookup_by(entries, dst, src, RouteKey::source_first_cmp)
}

/// Lookup by pair specificity alone. Fails exactly on the packets that make a
/// table ambiguous.
pub fn lookup_most_specific<'a, I>(
    entries: I,
    dst: Address,
    src: Address,
) -> Result<Option<&'a NextHop>, FibError>
where
    I: IntoIterator<Item = (&'a RouteKey, &'a NextHop)>,
{
    lookup_by(entries, dst, src, |a, b| {
        match (a.is_subset_of(b), b.is_subset_of(a)) {
            (true, true) => PairOrder::Equal,
            (true, false) => PairOrder::Less,
            (false, true) => PairOrder::Greater,
            (false, false) => PairOrder::Incomparable,
        }
    })
}

fn pairs_of(dest: Prefix, src: Prefix) -> impl Iterator<Item = (Address, Address)> {
    let bits = dest.free_bits() + src.free_bits();
    assert!(
        bits <= MAX_ENUM_PAIRS_BITS,
        "refusing to enumerate 2^{bits} address pairs"
    );
    dest.addresses()
        .flat_map(move |d| src.addresses().map(move |s| (d, s)))
}

fn conflicting_pairs(keys: &[RouteKey]) -> impl Iterator<Item = (RouteKey, RouteKey, RouteKey)> + '_ {
    keys.iter().enumerate().flat_map(move |(i, x)| {
        keys[i + 1..]
            .iter()
            .filter_map(move |y| x.conflict_zone(y).map(|z| (*x, *y, z)))
    })
}

/// Every conflict zone is exactly covered by entries at least as specific as
/// the zone. Checked by enumerating the address pairs of each zone.
pub fn is_weakly_complete(keys: &[RouteKey]) -> bool {
    conflicting_pairs(keys).all(|(_, _, zone)| {
        let cover: Vec<&RouteKey> = keys.iter().filter(|r| r.is_subset_of(&zone)).collect();
        pairs_of(zone.dest, zone.src).all(|(d, s)| cover.iter().any(|r| r.matches(d, s)))
    })
}

/// Some address pair is matched by entries with no unique most specific one.
/// Brute force over the whole universe.
pub fn is_ambiguous(keys: &[RouteKey]) -> bool {
    let Some(first) = keys.first() else {
        return false;
    };
    let universe = (Prefix::zero(first.dest.width()), Prefix::zero(first.src.width()));
    pairs_of(universe.0, universe.1).any(|(d, s)| {
        let matching: Vec<&RouteKey> = keys.iter().filter(|k| k.matches(d, s)).collect();
        !matching.is_empty()
            && !matching
                .iter()
                .any(|m| matching.iter().all(|x| m.is_subset_of(x)))
    })
}

/// Every conflict zone is itself an entry.
pub fn is_complete(keys: &[RouteKey]) -> bool {
    let set: std::collections::BTreeSet<&RouteKey> = keys.iter().collect();
    conflicting_pairs(keys).all(|(_, _, zone)| set.contains(&zone))
}

/// The distinct conflict zones of a key set.
pub fn conflict_zones(keys: &[RouteKey]) -> std::collections::BTreeSet<RouteKey> {
    conflicting_pairs(keys).map(|(_, _, z)| z).collect()
}
