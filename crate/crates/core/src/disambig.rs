// SPDX-License-Identifier: Apache-2.0

//! Keeps a source-first FIB behaving like a destination-first one.
//!
//! [`RibState`] owns the set of real routes and the FIB mirroring them. For
//! every conflict between two routes the FIB carries exactly one extra entry
//! covering the conflict zone, with the next hop of the destination-first
//! winner. After every public operation the FIB key set is complete: every
//! conflict zone is itself an entry, so any backend whose lookup refines
//! pair specificity forwards exactly like the destination-first order.
//!
//! Within an operation, more specific entries are installed before less
//! specific ones and removed after them, so that a live table is never
//! ambiguous in between.

use std::collections::BTreeMap;
use std::fmt;

use thiserror::Error;

use crate::fib::{unique_min, Backend, Fib, FibError, NextHop, Origin};
use crate::prefix::RouteKey;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RibError {
    #[error(transparent)]
    Fib(#[from] FibError),
    #[error("route {0} already exists")]
    DuplicateRoute(RouteKey),
    #[error("no route {0}")]
    UnknownRoute(RouteKey),
    /// A minimum was taken over a set that is not a chain. Signals a bug.
    #[error("internal error: no minimum among routes for zone {0}")]
    NotAChain(RouteKey),
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct Route {
    pub key: RouteKey,
    pub nh: NextHop,
}

impl Route {
    pub fn new(key: RouteKey, nh: NextHop) -> Self {
        Route { key, nh }
    }
}

impl fmt::Display for Route {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} via {}", self.key, self.nh)
    }
}

/// One FIB primitive, as issued by the engine.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum FibOp {
    Install {
        key: RouteKey,
        nh: NextHop,
    },
    Uninstall {
        key: RouteKey,
        nh: NextHop,
    },
    Switch {
        key: RouteKey,
        old: NextHop,
        new: NextHop,
    },
}

impl fmt::Display for FibOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FibOp::Install { key, nh } => write!(f, "install {key} via {nh}"),
            FibOp::Uninstall { key, nh } => write!(f, "uninstall {key} via {nh}"),
            FibOp::Switch { key, old, new } => write!(f, "switch {key} {old} -> {new}"),
        }
    }
}

/// Deliberate bugs for exercising the checking harness.
#[doc(hidden)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Fault {
    /// Never switch an existing zone entry when a better route arrives.
    SkipZoneSwitch,
    /// Give new zone entries the next hop of the losing route.
    LoserNextHop,
}

impl std::str::FromStr for Fault {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "skip-zone-switch" => Ok(Fault::SkipZoneSwitch),
            "loser-next-hop" => Ok(Fault::LoserNextHop),
            _ => Err(format!("unknown fault `{s}`")),
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Visit {
    MostSpecificFirst,
    LeastSpecificFirst,
}

/// The routing information base and the FIB it drives.
#[derive(Clone, Debug)]
pub struct RibState {
    routes: BTreeMap<RouteKey, NextHop>,
    fib: Fib,
    log: Vec<FibOp>,
    fault: Option<Fault>,
}

impl RibState {
    pub fn new(dest_width: u8, src_width: u8) -> Self {
        RibState {
            routes: BTreeMap::new(),
            fib: Fib::new(dest_width, src_width, Backend::SourceFirst),
            log: Vec::new(),
            fault: None,
        }
    }

    #[doc(hidden)]
    pub fn with_fault(mut self, fault: Option<Fault>) -> Self {
        self.fault = fault;
        self
    }

    /// The real routes, keyed by destination and source.
    pub fn routes(&self) -> &BTreeMap<RouteKey, NextHop> {
        &self.routes
    }

    pub fn route(&self, key: &RouteKey) -> Option<Route> {
        self.routes.get(key).map(|nh| Route::new(*key, nh.clone()))
    }

    pub fn fib(&self) -> &Fib {
        &self.fib
    }

    pub fn set_backend(&mut self, backend: Backend) {
        self.fib.set_backend(backend);
    }

    /// Primitives issued since the last call.
    pub fn take_log(&mut self) -> Vec<FibOp> {
        std::mem::take(&mut self.log)
    }

    fn install(&mut self, key: RouteKey, nh: NextHop, origin: Origin) -> Result<(), RibError> {
        self.fib.install(key, nh.clone(), origin)?;
        self.log.push(FibOp::Install { key, nh });
        Ok(())
    }

    fn uninstall(&mut self, key: RouteKey, nh: NextHop) -> Result<(), RibError> {
        self.fib.uninstall(&key, &nh)?;
        self.log.push(FibOp::Uninstall { key, nh });
        Ok(())
    }

    fn switch(&mut self, key: RouteKey, old: NextHop, new: NextHop) -> Result<(), RibError> {
        self.fib.switch(&key, &old, new.clone())?;
        self.log.push(FibOp::Switch { key, old, new });
        Ok(())
    }

    fn dest_first_min(&self, zone: &RouteKey, candidates: Vec<RouteKey>) -> Result<Option<Route>, RibError> {
        let min =
            unique_min(&candidates, RouteKey::dest_first_cmp).map_err(|()| RibError::NotAChain(*zone))?;
        Ok(min.map(|key| Route::new(key, self.routes[&key].clone())))
    }

    /// The destination-first minimum of the routes conflicting with `r`
    /// whose conflict zone with `r` is exactly `zone`.
    pub fn min_conflict(&self, zone: &RouteKey, r: &RouteKey) -> Result<Option<Route>, RibError> {
        let candidates = self
            .routes
            .keys()
            .filter(|r1| r.conflict_zone(r1).as_ref() == Some(zone))
            .copied()
            .collect();
        self.dest_first_min(zone, candidates)
    }

    /// The destination-first minimum among the routes taking part in a
    /// conflict whose zone is `zone`, i.e. the route whose next hop the zone
    /// entry must carry.
    pub fn conflict_solution(&self, zone: &RouteKey) -> Result<Option<Route>, RibError> {
        let keys: Vec<&RouteKey> = self.routes.keys().collect();
        let mut candidates = Vec::new();
        for r1 in &keys {
            let wins = keys.iter().any(|r2| {
                r1.conflict_zone(r2).as_ref() == Some(zone)
                    && r1.dest_first_cmp(r2) == crate::prefix::PairOrder::Less
            });
            if wins {
                candidates.push(**r1);
            }
        }
        self.dest_first_min(zone, candidates)
    }

    /// One representative per conflict zone of `r` that is not already a
    /// real route: the minimum of each class of routes sharing that zone.
    fn relevant_conflicts(&self, r: &RouteKey, visit: Visit) -> Result<Vec<(RouteKey, Route)>, RibError> {
        let mut zones: Vec<RouteKey> = self
            .routes
            .keys()
            .filter_map(|r1| r.conflict_zone(r1))
            .filter(|zone| !self.routes.contains_key(zone))
            .collect();
        zones.sort();
        zones.dedup();
        let specificity = |z: &RouteKey| z.dest.plen() as u32 + z.src.plen() as u32;
        match visit {
            Visit::MostSpecificFirst => {
                zones.sort_by(|a, b| specificity(b).cmp(&specificity(a)).then(a.cmp(b)))
            }
            Visit::LeastSpecificFirst => {
                zones.sort_by(|a, b| specificity(a).cmp(&specificity(b)).then(a.cmp(b)))
            }
        }
        zones
            .into_iter()
            .map(|zone| {
                let r1 = self
                    .min_conflict(&zone, r)?
                    .expect("zone was produced by a conflicting route");
                Ok((zone, r1))
            })
            .collect()
    }

    fn precedes(a: &RouteKey, b: &RouteKey) -> bool {
        a.dest_first_cmp(b) == crate::prefix::PairOrder::Less
    }

    fn min_route(a: &Route, b: &Route) -> Route {
        if RibState::precedes(&b.key, &a.key) {
            b.clone()
        } else {
            a.clone()
        }
    }

    pub fn add_route(&mut self, route: Route) -> Result<(), RibError> {
        self.fib.check_key(&route.key)?;
        if self.routes.contains_key(&route.key) {
            return Err(RibError::DuplicateRoute(route.key));
        }
        let r = &route.key;
        for (zone, r1) in self.relevant_conflicts(r, Visit::MostSpecificFirst)? {
            match self.min_conflict(&zone, &r1.key)? {
                None => {
                    let winner = match self.fault {
                        Some(Fault::LoserNextHop) => {
                            if RibState::precedes(r, &r1.key) {
                                r1.clone()
                            } else {
                                route.clone()
                            }
                        }
                        _ => RibState::min_route(&route, &r1),
                    };
                    self.install(zone, winner.nh, Origin::Disambiguation)?;
                }
                Some(r2) => {
                    if RibState::precedes(r, &r2.key)
                        && RibState::precedes(r, &r1.key)
                        && self.fault != Some(Fault::SkipZoneSwitch)
                    {
                        self.switch(zone, r2.nh, route.nh.clone())?;
                    }
                }
            }
        }
        match self.conflict_solution(r)? {
            None => self.install(*r, route.nh.clone(), Origin::Real)?,
            Some(r1) => {
                self.switch(*r, r1.nh, route.nh.clone())?;
                self.fib.set_origin(r, Origin::Real)?;
            }
        }
        self.routes.insert(route.key, route.nh);
        Ok(())
    }

    pub fn delete_route(&mut self, key: &RouteKey) -> Result<Route, RibError> {
        let nh = self.routes.remove(key).ok_or(RibError::UnknownRoute(*key))?;
        let route = Route::new(*key, nh);
        match self.conflict_solution(key)? {
            None => self.uninstall(*key, route.nh.clone())?,
            Some(r1) => {
                self.switch(*key, route.nh.clone(), r1.nh)?;
                self.fib.set_origin(key, Origin::Disambiguation)?;
            }
        }
        for (zone, r1) in self.relevant_conflicts(key, Visit::LeastSpecificFirst)? {
            match self.min_conflict(&zone, &r1.key)? {
                None => {
                    let winner = RibState::min_route(&route, &r1);
                    self.uninstall(zone, winner.nh)?;
                }
                Some(r2) => {
                    if RibState::precedes(key, &r2.key) && RibState::precedes(key, &r1.key) {
                        self.switch(zone, route.nh.clone(), r2.nh)?;
                    }
                }
            }
        }
        Ok(route)
    }

    /// Changes the next hop of an existing route, along with every zone
    /// entry that route was selected for.
    pub fn change_route(&mut self, key: &RouteKey, nh_new: NextHop) -> Result<(), RibError> {
        let old = self
            .routes
            .get(key)
            .cloned()
            .ok_or(RibError::UnknownRoute(*key))?;
        if old == nh_new {
            return Ok(());
        }
        self.switch(*key, old.clone(), nh_new.clone())?;
        for (zone, r1) in self.relevant_conflicts(key, Visit::MostSpecificFirst)? {
            if !RibState::precedes(key, &r1.key) {
                continue;
            }
            let selected = self.min_conflict(&zone, &r1.key)?;
            if selected.map(|r2| r2.key) == Some(*key) {
                self.switch(zone, old.clone(), nh_new.clone())?;
            }
        }
        self.routes.insert(*key, nh_new);
        Ok(())
    }
}

/// Builds the FIB for a route set in one go: every route, plus one entry
/// per conflict zone carrying the next hop of the destination-first minimum
/// among the routes containing the zone.
///
/// Independent of the incremental engine; used to check it.
pub fn rebuild_from_scratch(
    routes: &BTreeMap<RouteKey, NextHop>,
    dest_width: u8,
    src_width: u8,
) -> Result<Fib, RibError> {
    let mut fib = Fib::new(dest_width, src_width, Backend::SourceFirst);
    for (key, nh) in routes {
        fib.install(*key, nh.clone(), Origin::Real)?;
    }
    let keys: Vec<RouteKey> = routes.keys().copied().collect();
    for zone in crate::fib::conflict_zones(&keys) {
        if routes.contains_key(&zone) {
            continue;
        }
        let covering: Vec<RouteKey> = keys.iter().filter(|r| zone.is_subset_of(r)).copied().collect();
        let winner = unique_min(&covering, RouteKey::dest_first_cmp)
            .map_err(|()| RibError::NotAChain(zone))?
            .ok_or(RibError::NotAChain(zone))?;
        fib.install(zone, routes[&winner].clone(), Origin::Disambiguation)?;
    }
    Ok(fib)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fib::{is_complete, Backend};
    use crate::prefix::{Address, Prefix};

    fn k(d: &str, s: &str) -> RouteKey {
        RouteKey::new(Prefix::parse(d, 4).unwrap(), Prefix::parse(s, 4).unwrap())
    }

    fn nh(s: &str) -> NextHop {
        NextHop::new(s)
    }

    fn route(d: &str, s: &str, n: &str) -> Route {
        Route::new(k(d, s), nh(n))
    }

    fn log_lines(st: &mut RibState) -> Vec<String> {
        st.take_log().iter().map(|op| op.to_string()).collect()
    }

    /// r1..r4 of the nested-rectangle walk-through.
    fn rectangles() -> [Route; 4] {
        [
            route("00/2", "/0", "A"),
            route("000/3", "10/2", "B"),
            route("/0", "1/1", "C"),
            route("0/1", "11/2", "D"),
        ]
    }

    fn keys(st: &RibState) -> Vec<RouteKey> {
        st.fib().keys().copied().collect()
    }

    #[test]
    fn min_conflict_examples() {
        let [r1, r2, r3, _] = rectangles();
        let mut st = RibState::new(4, 4);
        let zone = k("00/2", "1/1");
        assert_eq!(st.min_conflict(&zone, &r3.key).unwrap(), None);
        st.add_route(r1.clone()).unwrap();
        assert_eq!(st.min_conflict(&zone, &r3.key).unwrap(), Some(r1.clone()));
        st.add_route(r2).unwrap();
        assert_eq!(st.min_conflict(&zone, &r3.key).unwrap(), Some(r1));
    }

    #[test]
    fn conflict_solution_examples() {
        let [r1, _, r3, _] = rectangles();
        let mut st = RibState::new(4, 4);
        let zone = k("00/2", "1/1");
        assert_eq!(st.conflict_solution(&zone).unwrap(), None);
        st.add_route(r1.clone()).unwrap();
        st.add_route(r3).unwrap();
        assert_eq!(st.conflict_solution(&zone).unwrap(), Some(r1));
        assert_eq!(st.conflict_solution(&k("01/2", "1/1")).unwrap(), None);
    }

    #[test]
    fn rectangle_walkthrough() {
        let [r1, r2, r3, r4] = rectangles();
        let mut st = RibState::new(4, 4);
        st.add_route(r1).unwrap();
        st.add_route(r2).unwrap();
        assert_eq!(st.fib().len(), 2);
        assert_eq!(
            log_lines(&mut st),
            ["install 00/2 from /0 via A", "install 000/3 from 10/2 via B"]
        );

        st.add_route(r3).unwrap();
        assert_eq!(
            log_lines(&mut st),
            ["install 00/2 from 1/1 via A", "install /0 from 1/1 via C"]
        );
        assert_eq!(st.fib().len(), 4);
        let after_r3 = st.fib().clone();

        st.add_route(r4.clone()).unwrap();
        assert_eq!(
            log_lines(&mut st),
            ["install 00/2 from 11/2 via A", "install 0/1 from 11/2 via D"]
        );
        assert_eq!(st.fib().len(), 6);
        assert!(is_complete(&keys(&st)));

        st.delete_route(&r4.key).unwrap();
        assert_eq!(
            log_lines(&mut st),
            ["uninstall 0/1 from 11/2 via D", "uninstall 00/2 from 11/2 via A"]
        );
        assert_eq!(st.fib(), &after_r3);
    }

    #[test]
    fn delete_first_rectangle_drops_both_zones() {
        let mut st = RibState::new(4, 4);
        for r in rectangles() {
            st.add_route(r).unwrap();
        }
        st.take_log();
        st.delete_route(&k("00/2", "/0")).unwrap();
        assert_eq!(
            log_lines(&mut st),
            [
                "uninstall 00/2 from /0 via A",
                "uninstall 00/2 from 1/1 via A",
                "uninstall 00/2 from 11/2 via A",
            ]
        );
        assert_eq!(keys(&st), [k("/0", "1/1"), k("0/1", "11/2"), k("000/3", "10/2")]);
    }

    #[test]
    fn change_selected_route_updates_zones() {
        let mut st = RibState::new(4, 4);
        for r in rectangles() {
            st.add_route(r).unwrap();
        }
        st.take_log();
        st.change_route(&k("00/2", "/0"), nh("E")).unwrap();
        let mut lines = log_lines(&mut st);
        lines.sort();
        assert_eq!(
            lines,
            [
                "switch 00/2 from /0 A -> E",
                "switch 00/2 from 1/1 A -> E",
                "switch 00/2 from 11/2 A -> E",
            ]
        );

        st.change_route(&k("/0", "1/1"), nh("F")).unwrap();
        assert_eq!(log_lines(&mut st), ["switch /0 from 1/1 C -> F"]);

        let before = st.fib().clone();
        st.change_route(&k("/0", "1/1"), nh("F")).unwrap();
        assert!(st.take_log().is_empty());
        assert_eq!(st.fib(), &before);
    }

    #[test]
    fn better_route_switches_zone_entry() {
        let mut st = RibState::new(4, 4);
        st.add_route(route("/0", "11/2", "X")).unwrap();
        st.add_route(route("0/1", "/0", "Y")).unwrap();
        assert_eq!(st.fib().get(&k("0/1", "11/2")).unwrap().nh, nh("Y"));
        st.take_log();
        st.add_route(route("0/1", "1/1", "Z")).unwrap();
        assert_eq!(
            log_lines(&mut st),
            ["switch 0/1 from 11/2 Y -> Z", "install 0/1 from 1/1 via Z"]
        );
        st.delete_route(&k("0/1", "1/1")).unwrap();
        assert_eq!(
            log_lines(&mut st),
            ["uninstall 0/1 from 1/1 via Z", "switch 0/1 from 11/2 Z -> Y"]
        );
    }

    #[test]
    fn real_route_on_zone_key_flips_origin() {
        let mut st = RibState::new(4, 4);
        st.add_route(route("0/1", "/0", "A")).unwrap();
        st.add_route(route("/0", "1/1", "B")).unwrap();
        let zone = k("0/1", "1/1");
        assert_eq!(st.fib().get(&zone).unwrap().origin, Origin::Disambiguation);
        st.take_log();
        st.add_route(Route::new(zone, nh("C"))).unwrap();
        assert_eq!(log_lines(&mut st), ["switch 0/1 from 1/1 A -> C"]);
        assert_eq!(st.fib().get(&zone).unwrap().origin, Origin::Real);
        st.delete_route(&zone).unwrap();
        assert_eq!(log_lines(&mut st), ["switch 0/1 from 1/1 C -> A"]);
        assert_eq!(st.fib().get(&zone).unwrap().origin, Origin::Disambiguation);
    }

    #[test]
    fn add_then_delete_is_identity() {
        let mut st = RibState::new(4, 4);
        st.add_route(route("01/2", "1/1", "A")).unwrap();
        st.delete_route(&k("01/2", "1/1")).unwrap();
        assert!(st.fib().is_empty());
        assert!(st.routes().is_empty());
    }

    #[test]
    fn errors() {
        let mut st = RibState::new(4, 4);
        st.add_route(route("01/2", "1/1", "A")).unwrap();
        assert_eq!(
            st.add_route(route("01/2", "1/1", "B")),
            Err(RibError::DuplicateRoute(k("01/2", "1/1")))
        );
        assert_eq!(
            st.delete_route(&k("1/1", "1/1")),
            Err(RibError::UnknownRoute(k("1/1", "1/1")))
        );
        assert_eq!(
            st.change_route(&k("1/1", "1/1"), nh("A")),
            Err(RibError::UnknownRoute(k("1/1", "1/1")))
        );
        let wide = Route::new(RouteKey::new(Prefix::zero(5), Prefix::zero(4)), nh("A"));
        assert!(matches!(st.add_route(wide), Err(RibError::Fib(_))));
    }

    #[test]
    fn rebuild_examples() {
        let empty = rebuild_from_scratch(&BTreeMap::new(), 4, 4).unwrap();
        assert!(empty.is_empty());

        let mut st = RibState::new(4, 4);
        for r in rectangles() {
            st.add_route(r).unwrap();
        }
        let batch = rebuild_from_scratch(st.routes(), 4, 4).unwrap();
        assert_eq!(&batch, st.fib());

        let mut routes = BTreeMap::new();
        let v6 =
            |d: &str, s: &str| RouteKey::new(Prefix::parse(d, 128).unwrap(), Prefix::parse(s, 128).unwrap());
        routes.insert(v6("2001:db8:1::/48", "::/0"), nh("left"));
        routes.insert(v6("::/0", "2001:db8:2::/48"), nh("right"));
        let fib = rebuild_from_scratch(&routes, 128, 128).unwrap();
        assert_eq!(fib.len(), 3);
        let zone = fib.get(&v6("2001:db8:1::/48", "2001:db8:2::/48")).unwrap();
        assert_eq!(zone.nh, nh("left"));
        let (dst, src) = (
            Address::parse("2001:db8:1::1", 128).unwrap(),
            Address::parse("2001:db8:2::1", 128).unwrap(),
        );
        assert_eq!(
            fib.lookup_with(Backend::SourceFirst, dst, src).unwrap(),
            Some(&nh("left"))
        );
    }

    #[test]
    fn injected_fault_diverges_from_batch() {
        let mut st = RibState::new(4, 4).with_fault(Some(Fault::LoserNextHop));
        st.add_route(route("0/1", "/0", "A")).unwrap();
        st.add_route(route("/0", "1/1", "B")).unwrap();
        let batch = rebuild_from_scratch(st.routes(), 4, 4).unwrap();
        assert_ne!(&batch, st.fib());
    }
}
