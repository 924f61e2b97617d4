// SPDX-License-Identifier: Apache-2.0

//! Addresses, prefixes and destination/source prefix pairs.
//!
//! Addresses live in a universe of a fixed bit width (1 to 128). Widths 32
//! and 128 print as IPv4 and IPv6 text; every other width uses a plain
//! bitstring, e.g. `0110` for an address and `011/3` for a prefix. Prefix
//! text may omit trailing zero bits (`1/2` is `10/2`) but never carries a
//! one past the prefix length.
//!
//! Mixing widths inside one comparison is a contract violation and panics,
//! the same way indexing out of bounds does. Tables validate widths at their
//! boundary so that the algorithms never see mismatched values.

use std::fmt;
use std::net::{Ipv4Addr, Ipv6Addr};
use std::str::FromStr;

use thiserror::Error;

pub const MAX_WIDTH: u8 = 128;

/// Largest number of free bits [`Prefix::addresses`] will enumerate.
pub const MAX_ENUM_BITS: u32 = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PrefixError {
    #[error("invalid width {0} (must be 1..=128)")]
    InvalidWidth(u32),
    #[error("prefix length {plen} exceeds width {width}")]
    InvalidLength { plen: u32, width: u8 },
    #[error("value does not fit in {width} bits")]
    TooWide { width: u8 },
    #[error("non-canonical prefix `{0}`: bits beyond the prefix length must be zero")]
    NonCanonical(String),
    #[error("width mismatch: expected {expected}, found {found}")]
    WidthMismatch { expected: u8, found: u8 },
    #[error("cannot parse `{text}`: {reason}")]
    Parse { text: String, reason: String },
}

fn parse_err(text: &str, reason: impl Into<String>) -> PrefixError {
    PrefixError::Parse {
        text: text.to_string(),
        reason: reason.into(),
    }
}

fn check_width(width: u8) -> Result<(), PrefixError> {
    if width == 0 || width > MAX_WIDTH {
        return Err(PrefixError::InvalidWidth(width as u32));
    }
    Ok(())
}

/// All-ones in the low `width` bits.
fn universe_mask(width: u8) -> u128 {
    if width >= 128 {
        u128::MAX
    } else {
        (1u128 << width) - 1
    }
}

/// Network mask for `plen` leading bits of a `width`-bit value.
fn net_mask(width: u8, plen: u8) -> u128 {
    if plen == 0 {
        0
    } else {
        universe_mask(width) & !universe_mask(width - plen)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Address {
    width: u8,
    bits: u128,
}

impl Address {
    pub fn new(width: u8, bits: u128) -> Result<Self, PrefixError> {
        check_width(width)?;
        if bits & !universe_mask(width) != 0 {
            return Err(PrefixError::TooWide { width });
        }
        Ok(Address { width, bits })
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    pub fn bits(&self) -> u128 {
        self.bits
    }

    /// Every address of a small universe, in increasing order.
    pub fn all(width: u8) -> impl Iterator<Item = Address> {
        Prefix::zero(width).addresses()
    }

    pub fn parse(text: &str, width: u8) -> Result<Self, PrefixError> {
        check_width(width)?;
        let text = text.trim();
        match width {
            128 => {
                let ip = Ipv6Addr::from_str(text).map_err(|e| parse_err(text, e.to_string()))?;
                Address::new(128, u128::from(ip))
            }
            32 => {
                let ip = Ipv4Addr::from_str(text).map_err(|e| parse_err(text, e.to_string()))?;
                Address::new(32, u32::from(ip) as u128)
            }
            _ => {
                if text.len() != width as usize {
                    return Err(parse_err(text, format!("expected exactly {width} bits")));
                }
                let bits = parse_bitstring(text)?;
                Address::new(width, bits << (width as usize - text.len()))
            }
        }
    }
}

fn parse_bitstring(text: &str) -> Result<u128, PrefixError> {
    let mut v = 0u128;
    for c in text.chars() {
        v = (v << 1)
            | match c {
                '0' => 0,
                '1' => 1,
                _ => return Err(parse_err(text, format!("unexpected character `{c}`"))),
            };
    }
    Ok(v)
}

fn write_bits(f: &mut fmt::Formatter<'_>, width: u8, bits: u128, count: u8) -> fmt::Result {
    for i in 0..count {
        let bit = (bits >> (width - 1 - i)) & 1;
        f.write_str(if bit == 1 { "1" } else { "0" })?;
    }
    Ok(())
}

impl fmt::Display for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.width {
            128 => write!(f, "{}", Ipv6Addr::from(self.bits)),
            32 => write!(f, "{}", Ipv4Addr::from(self.bits as u32)),
            w => write_bits(f, w, self.bits, w),
        }
    }
}

/// Specificity relation between two prefixes of the same universe.
///
/// Two prefixes are always either equal, nested or disjoint.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PrefixRelation {
    Equal,
    /// The left prefix is strictly contained in the right one.
    MoreSpecific,
    LessSpecific,
    Disjoint,
}

/// A canonical prefix: bits past `plen` are always zero.
///
/// Field order makes the derived `Ord` sort by value then length, which is
/// the dump order used everywhere.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Prefix {
    width: u8,
    bits: u128,
    plen: u8,
}

impl Prefix {
    /// Builds a prefix, zeroing any bits past `plen`.
    pub fn new(width: u8, bits: u128, plen: u8) -> Result<Self, PrefixError> {
        check_width(width)?;
        if plen > width {
            return Err(PrefixError::InvalidLength {
                plen: plen as u32,
                width,
            });
        }
        if bits & !universe_mask(width) != 0 {
            return Err(PrefixError::TooWide { width });
        }
        Ok(Prefix {
            width,
            bits: bits & net_mask(width, plen),
            plen,
        })
    }

    /// The zero-length prefix matching every address.
    pub fn zero(width: u8) -> Self {
        Prefix::new(width, 0, 0).expect("invalid width")
    }

    pub fn from_address(addr: Address, plen: u8) -> Result<Self, PrefixError> {
        Prefix::new(addr.width, addr.bits, plen)
    }

    pub fn width(&self) -> u8 {
        self.width
    }

    pub fn bits(&self) -> u128 {
        self.bits
    }

    pub fn plen(&self) -> u8 {
        self.plen
    }

    pub fn is_zero_length(&self) -> bool {
        self.plen == 0
    }

    /// The first address of the prefix.
    pub fn network(&self) -> Address {
        Address {
            width: self.width,
            bits: self.bits,
        }
    }

    pub fn check_width(&self, width: u8) -> Result<(), PrefixError> {
        if self.width != width {
            return Err(PrefixError::WidthMismatch {
                expected: width,
                found: self.width,
            });
        }
        Ok(())
    }

    fn same_width(&self, width: u8) {
        assert_eq!(
            self.width, width,
            "width mismatch between prefix {self} and a width-{width} value"
        );
    }

    /// True iff the first `plen` bits of `a` equal those of the prefix.
    pub fn contains(&self, a: Address) -> bool {
        self.same_width(a.width);
        a.bits & net_mask(self.width, self.plen) == self.bits
    }

    /// Specificity order: `self <= other` iff every address of `self` is in
    /// `other`.
    pub fn is_subset_of(&self, other: &Prefix) -> bool {
        self.same_width(other.width);
        self.plen >= other.plen && self.bits & net_mask(self.width, other.plen) == other.bits
    }

    pub fn is_strict_subset_of(&self, other: &Prefix) -> bool {
        self != other && self.is_subset_of(other)
    }

    pub fn is_disjoint(&self, other: &Prefix) -> bool {
        !self.is_subset_of(other) && !other.is_subset_of(self)
    }

    pub fn relation(&self, other: &Prefix) -> PrefixRelation {
        match (self.is_subset_of(other), other.is_subset_of(self)) {
            (true, true) => PrefixRelation::Equal,
            (true, false) => PrefixRelation::MoreSpecific,
            (false, true) => PrefixRelation::LessSpecific,
            (false, false) => PrefixRelation::Disjoint,
        }
    }

    /// The more specific of two nested prefixes, `None` when disjoint.
    pub fn intersection(&self, other: &Prefix) -> Option<Prefix> {
        match self.relation(other) {
            PrefixRelation::Equal | PrefixRelation::MoreSpecific => Some(*self),
            PrefixRelation::LessSpecific => Some(*other),
            PrefixRelation::Disjoint => None,
        }
    }

    /// Number of addresses, as a power of two.
    pub fn free_bits(&self) -> u32 {
        (self.width - self.plen) as u32
    }

    /// Enumerates the addresses of the prefix in increasing order.
    ///
    /// Panics if the prefix holds more than `2^MAX_ENUM_BITS` addresses.
    pub fn addresses(&self) -> impl Iterator<Item = Address> {
        let free = self.free_bits();
        assert!(
            free <= MAX_ENUM_BITS,
            "refusing to enumerate 2^{free} addresses of {self}"
        );
        let (width, base) = (self.width, self.bits);
        (0..(1u64 << free)).map(move |host| Address {
            width,
            bits: base | host as u128,
        })
    }

    pub fn parse(text: &str, width: u8) -> Result<Self, PrefixError> {
        check_width(width)?;
        let text = text.trim();
        let (value, len) = text
            .split_once('/')
            .ok_or_else(|| parse_err(text, "missing `/plen`"))?;
        let plen: u32 = len.parse().map_err(|_| parse_err(text, "bad prefix length"))?;
        if plen > width as u32 {
            return Err(PrefixError::InvalidLength { plen, width });
        }
        let plen = plen as u8;
        let bits = match width {
            128 | 32 => Address::parse(value, width)?.bits,
            _ => {
                if value.len() > width as usize {
                    return Err(parse_err(text, format!("more than {width} bits")));
                }
                parse_bitstring(value)? << (width as usize - value.len())
            }
        };
        if bits & !net_mask(width, plen) != 0 {
            return Err(PrefixError::NonCanonical(text.to_string()));
        }
        Prefix::new(width, bits, plen)
    }
}

impl fmt::Display for Prefix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.width {
            128 => write!(f, "{}/{}", Ipv6Addr::from(self.bits), self.plen),
            32 => write!(f, "{}/{}", Ipv4Addr::from(self.bits as u32), self.plen),
            w => {
                write_bits(f, w, self.bits, self.plen)?;
                write!(f, "/{}", self.plen)
            }
        }
    }
}

/// Outcome of comparing two route keys under one of the total refinements.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PairOrder {
    Less,
    Equal,
    Greater,
    Incomparable,
}

impl PairOrder {
    fn from_le(le: bool, ge: bool) -> Self {
        match (le, ge) {
            (true, true) => PairOrder::Equal,
            (true, false) => PairOrder::Less,
            (false, true) => PairOrder::Greater,
            (false, false) => PairOrder::Incomparable,
        }
    }
}

/// A destination prefix and a source prefix. Destination comes first.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct RouteKey {
    pub dest: Prefix,
    pub src: Prefix,
}

impl RouteKey {
    pub fn new(dest: Prefix, src: Prefix) -> Self {
        RouteKey { dest, src }
    }

    /// A non-specific key: source is the zero-length prefix.
    pub fn non_specific(dest: Prefix, src_width: u8) -> Self {
        RouteKey::new(dest, Prefix::zero(src_width))
    }

    pub fn is_specific(&self) -> bool {
        !self.src.is_zero_length()
    }

    pub fn matches(&self, dst: Address, src: Address) -> bool {
        self.dest.contains(dst) && self.src.contains(src)
    }

    /// Pair specificity: componentwise prefix order.
    pub fn is_subset_of(&self, other: &RouteKey) -> bool {
        self.dest.is_subset_of(&other.dest) && self.src.is_subset_of(&other.src)
    }

    pub fn is_strict_subset_of(&self, other: &RouteKey) -> bool {
        self != other && self.is_subset_of(other)
    }

    pub fn is_disjoint(&self, other: &RouteKey) -> bool {
        self.dest.is_disjoint(&other.dest) || self.src.is_disjoint(&other.src)
    }

    /// Neither disjoint nor ordered: one key has the strictly more specific
    /// destination while the other has the strictly more specific source.
    pub fn conflicts(&self, other: &RouteKey) -> bool {
        (self.dest.is_strict_subset_of(&other.dest) && other.src.is_strict_subset_of(&self.src))
            || (other.dest.is_strict_subset_of(&self.dest) && self.src.is_strict_subset_of(&other.src))
    }

    /// The set of address pairs matched by both keys, `None` if disjoint.
    pub fn intersection(&self, other: &RouteKey) -> Option<RouteKey> {
        Some(RouteKey::new(
            self.dest.intersection(&other.dest)?,
            self.src.intersection(&other.src)?,
        ))
    }

    /// Intersection of two conflicting keys; `None` when they do not conflict.
    pub fn conflict_zone(&self, other: &RouteKey) -> Option<RouteKey> {
        if self.conflicts(other) {
            self.intersection(other)
        } else {
            None
        }
    }

    fn dest_first_le(&self, other: &RouteKey) -> bool {
        self.dest.is_strict_subset_of(&other.dest)
            || (self.dest == other.dest && self.src.is_subset_of(&other.src))
    }

    fn source_first_le(&self, other: &RouteKey) -> bool {
        self.src.is_strict_subset_of(&other.src)
            || (self.src == other.src && self.dest.is_subset_of(&other.dest))
    }

    /// Destination-first order: strictly more specific destination wins,
    /// sources break ties between equal destinations.
    pub fn dest_first_cmp(&self, other: &RouteKey) -> PairOrder {
        PairOrder::from_le(self.dest_first_le(other), other.dest_first_le(self))
    }

    /// Source-first order, the mirror image of [`RouteKey::dest_first_cmp`].
    pub fn source_first_cmp(&self, other: &RouteKey) -> PairOrder {
        PairOrder::from_le(self.source_first_le(other), other.source_first_le(self))
    }

    pub fn parse(text: &str, dest_width: u8, src_width: u8) -> Result<Self, PrefixError> {
        let text = text.trim();
        let (dest, src) = match text.split_once(" from ") {
            Some((d, s)) => (d, Some(s)),
            None => (text, None),
        };
        let dest = Prefix::parse(dest, dest_width)?;
        let src = match src {
            Some(s) => Prefix::parse(s, src_width)?,
            None => Prefix::zero(src_width),
        };
        Ok(RouteKey::new(dest, src))
    }
}

impl fmt::Display for RouteKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} from {}", self.dest, self.src)
    }
}
