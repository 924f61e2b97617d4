// SPDX-License-Identifier: Apache-2.0

//! A deterministic, round-based simulator of source-specific distributed
//! Bellman-Ford.
//!
//! Nodes exchange `(destination, source, metric)` updates over links with
//! positive integer costs. Each node selects, per destination/source key, the
//! cheapest candidate among its own originations and what its neighbours
//! announced, and feeds the selection into its own [`RibState`]. Packets can
//! then be traced hop by hop through the installed tables.
//!
//! Metrics are additive and saturate at [`INFINITY`], which also means
//! "unreachable". Nodes never announce a route back over the link it was
//! learned from (split horizon). There is no feasibility condition and no
//! sequence numbers.
//!
//! Within a round every node first sends updates for the keys whose selection
//! changed, then every queued message is delivered, one directed link at a
//! time in `(from, to)` order and FIFO within a link.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::disambig::{RibError, RibState, Route};
use crate::fib::{lookup_source_first, Backend, FibError, NextHop};
use crate::prefix::{Address, Prefix, PrefixError, RouteKey};

pub type Metric = u16;

pub const INFINITY: Metric = u16::MAX;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct NodeId(pub u32);

#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub enum Capability {
    /// Understands source-specific updates.
    SpecificCapable,
    /// Unextended router that drops source-specific updates.
    LegacyIgnore,
    /// Unextended router that drops the source and keeps the rest. Known to
    /// cause persistent loops.
    LegacyStrip,
}

impl Capability {
    pub fn is_legacy(self) -> bool {
        self != Capability::SpecificCapable
    }
}

impl fmt::Display for Capability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Capability::SpecificCapable => "capable",
            Capability::LegacyIgnore => "ignore",
            Capability::LegacyStrip => "strip",
        })
    }
}

/// How a node resolves packets matched by several entries.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug, Default)]
pub enum ForwardingPolicy {
    /// Disambiguated table: forwards destination-first.
    #[default]
    DestFirst,
    /// Raw routes in per-source tables, no disambiguation.
    SourceFirst,
}

impl fmt::Display for ForwardingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForwardingPolicy::DestFirst => "dest-first",
            ForwardingPolicy::SourceFirst => "source-first",
        })
    }
}

/// A route announcement. `src: None` is a non-specific update.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Update {
    pub dest: Prefix,
    pub src: Option<Prefix>,
    pub metric: Metric,
}

impl fmt::Display for Update {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.src {
            Some(src) => write!(f, "({}, {}, {})", self.dest, src, self.metric),
            None => write!(f, "({}, {})", self.dest, self.metric),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("no link between {0} and {1}")]
    NoLink(String, String),
    #[error("invalid link {0} - {1}")]
    InvalidLink(String, String),
    #[error(transparent)]
    Prefix(#[from] PrefixError),
    #[error("legacy node {0} cannot originate source-specific route {1}")]
    LegacySpecific(String, RouteKey),
    #[error(transparent)]
    Rib(#[from] RibError),
    #[error(transparent)]
    Fib(#[from] FibError),
    #[error("no convergence within {0} rounds")]
    Timeout(u64),
}

/// The route a node currently uses for a key. `via: None` is local.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Selected {
    pub metric: Metric,
    pub via: Option<NodeId>,
}

#[derive(Clone, Debug)]
pub struct Node {
    id: NodeId,
    name: String,
    capability: Capability,
    policy: ForwardingPolicy,
    rib: RibState,
    learned: BTreeMap<(RouteKey, NodeId), Metric>,
    // Learned entries that arrived source-specific and lost their source.
    stripped: BTreeSet<(RouteKey, NodeId)>,
    originated: BTreeMap<RouteKey, Metric>,
    selected: BTreeMap<RouteKey, Selected>,
    dirty: BTreeSet<RouteKey>,
}

/// What a node does with a packet.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Forward {
    Local,
    Neighbor(NodeId),
    Drop,
}

const LOCAL_IFACE: &str = "local";

fn neighbor_next_hop(name: &str) -> NextHop {
    NextHop::with_via(format!("to-{name}"), name)
}

impl Node {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn capability(&self) -> Capability {
        self.capability
    }

    pub fn policy(&self) -> ForwardingPolicy {
        self.policy
    }

    pub fn rib(&self) -> &RibState {
        &self.rib
    }

    pub fn selected(&self) -> &BTreeMap<RouteKey, Selected> {
        &self.selected
    }

    pub fn originated(&self) -> &BTreeMap<RouteKey, Metric> {
        &self.originated
    }

    pub fn learned(&self) -> &BTreeMap<(RouteKey, NodeId), Metric> {
        &self.learned
    }
}

/// Outcome of following a packet through the network.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Trace {
    Delivered(Vec<NodeId>),
    /// No route at the last node of the path.
    Dropped(Vec<NodeId>),
    /// The packet came back to a node it had visited; the cycle starts there.
    Loop(Vec<NodeId>),
    /// TTL ran out before any of the above.
    Expired(Vec<NodeId>),
}

impl Trace {
    pub fn is_loop(&self) -> bool {
        matches!(self, Trace::Loop(_))
    }

    pub fn is_delivered(&self) -> bool {
        matches!(self, Trace::Delivered(_))
    }

    pub fn is_dropped(&self) -> bool {
        matches!(self, Trace::Dropped(_))
    }
}

#[derive(Clone, Debug)]
pub struct Network {
    dest_width: u8,
    src_width: u8,
    nodes: Vec<Node>,
    links: BTreeMap<(NodeId, NodeId), Metric>,
    queues: BTreeMap<(NodeId, NodeId), VecDeque<Update>>,
    rounds: u64,
    sent: Vec<(NodeId, NodeId, Update)>,
    shuffle: Option<ChaCha8Rng>,
}

impl Network {
    pub fn new(dest_width: u8, src_width: u8) -> Self {
        Prefix::zero(dest_width);
        Prefix::zero(src_width);
        Network {
            dest_width,
            src_width,
            nodes: Vec::new(),
            links: BTreeMap::new(),
            queues: BTreeMap::new(),
            rounds: 0,
            sent: Vec::new(),
            shuffle: None,
        }
    }

    /// Shuffles the order in which links are drained each round, keeping
    /// FIFO order within a link.
    pub fn with_shuffled_delivery(mut self, seed: u64) -> Self {
        self.shuffle = Some(ChaCha8Rng::seed_from_u64(seed));
        self
    }

    pub fn dest_width(&self) -> u8 {
        self.dest_width
    }

    pub fn src_width(&self) -> u8 {
        self.src_width
    }

    pub fn add_node(
        &mut self,
        name: &str,
        capability: Capability,
        policy: ForwardingPolicy,
    ) -> Result<NodeId, SimError> {
        if self.node_id(name).is_some() {
            return Err(SimError::DuplicateNode(name.to_string()));
        }
        let id = NodeId(self.nodes.len() as u32);
        let mut rib = RibState::new(self.dest_width, self.src_width);
        rib.set_backend(Backend::SourceFirst);
        self.nodes.push(Node {
            id,
            name: name.to_string(),
            capability,
            policy,
            rib,
            learned: BTreeMap::new(),
            stripped: BTreeSet::new(),
            originated: BTreeMap::new(),
            selected: BTreeMap::new(),
            dirty: BTreeSet::new(),
        });
        Ok(id)
    }

    pub fn add_link(&mut self, a: NodeId, b: NodeId, cost: Metric) -> Result<(), SimError> {
        if a == b || cost == 0 || cost == INFINITY || self.links.contains_key(&(a, b)) {
            return Err(SimError::InvalidLink(
                self.node(a).name.clone(),
                self.node(b).name.clone(),
            ));
        }
        self.links.insert((a, b), cost);
        self.links.insert((b, a), cost);
        Ok(())
    }

    pub fn node_id(&self, name: &str) -> Option<NodeId> {
        self.nodes.iter().find(|n| n.name == name).map(|n| n.id)
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0 as usize]
    }

    fn node_mut(&mut self, id: NodeId) -> &mut Node {
        &mut self.nodes[id.0 as usize]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn link_cost(&self, a: NodeId, b: NodeId) -> Option<Metric> {
        self.links.get(&(a, b)).copied()
    }

    pub fn neighbors(&self, id: NodeId) -> impl Iterator<Item = NodeId> + '_ {
        self.links
            .range((id, NodeId(0))..=(id, NodeId(u32::MAX)))
            .map(|((_, b), _)| *b)
    }

    /// Rounds run by [`Network::step`] so far.
    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    /// Every update enqueued so far, in send order.
    pub fn sent(&self) -> &[(NodeId, NodeId, Update)] {
        &self.sent
    }

    fn check_key(&self, key: &RouteKey) -> Result<(), SimError> {
        key.dest.check_width(self.dest_width)?;
        key.src.check_width(self.src_width)?;
        Ok(())
    }

    /// Redistributes `key` into the protocol at `node`.
    pub fn originate(&mut self, node: NodeId, key: RouteKey, metric: Metric) -> Result<(), SimError> {
        self.check_key(&key)?;
        let n = self.node(node);
        if n.capability.is_legacy() && key.is_specific() {
            return Err(SimError::LegacySpecific(n.name.clone(), key));
        }
        self.node_mut(node).originated.insert(key, metric);
        self.reselect(node, key)?;
        Ok(())
    }

    /// Handles an update received by `node` from neighbour `from`. Returns
    /// whether the node's state changed.
    pub fn process_update(&mut self, node: NodeId, from: NodeId, u: Update) -> Result<bool, SimError> {
        let cost = self
            .link_cost(from, node)
            .ok_or_else(|| SimError::NoLink(self.node(from).name.clone(), self.node(node).name.clone()))?;
        u.dest.check_width(self.dest_width)?;
        if let Some(src) = u.src {
            src.check_width(self.src_width)?;
        }
        let zero = Prefix::zero(self.src_width);
        let key = match (self.node(node).capability, u.src) {
            (Capability::LegacyIgnore, Some(_)) => return Ok(false),
            (Capability::LegacyStrip, Some(_)) => RouteKey::new(u.dest, zero),
            (_, src) => RouteKey::new(u.dest, src.unwrap_or(zero)),
        };
        let metric = u.metric.saturating_add(cost);
        let was_stripped = matches!(u.src, Some(s) if s != key.src);
        let n = self.node_mut(node);
        let before = n.learned.get(&(key, from)).copied();
        if metric == INFINITY {
            n.learned.remove(&(key, from));
            n.stripped.remove(&(key, from));
        } else {
            n.learned.insert((key, from), metric);
            if was_stripped {
                n.stripped.insert((key, from));
            } else {
                n.stripped.remove(&(key, from));
            }
        }
        let after = n.learned.get(&(key, from)).copied();
        let reselected = self.reselect(node, key)?;
        Ok(before != after || reselected)
    }

    /// Recomputes the selection for `key` and pushes any change into the
    /// node's RIB. Returns whether the selection changed.
    fn reselect(&mut self, id: NodeId, key: RouteKey) -> Result<bool, SimError> {
        let names: Vec<String> = self.nodes.iter().map(|n| n.name.clone()).collect();
        let node = self.node_mut(id);
        let local = node
            .originated
            .get(&key)
            .filter(|m| **m < INFINITY)
            .map(|m| Selected {
                metric: *m,
                via: None,
            });
        let learned = node
            .learned
            .range((key, NodeId(0))..=(key, NodeId(u32::MAX)))
            .map(|((_, from), m)| Selected {
                metric: *m,
                via: Some(*from),
            });
        // Local first on equal metrics, then the smallest neighbour id.
        let best = local
            .into_iter()
            .chain(learned)
            .min_by_key(|s| (s.metric, s.via.map_or(0, |v| v.0 as u64 + 1)));
        let previous = node.selected.get(&key).copied();
        if previous == best {
            return Ok(false);
        }
        let next_hop = |s: &Selected| match s.via {
            None => NextHop::new(LOCAL_IFACE),
            Some(v) => neighbor_next_hop(&names[v.0 as usize]),
        };
        match (previous, best) {
            (None, Some(b)) => node.rib.add_route(Route::new(key, next_hop(&b)))?,
            (Some(_), None) => {
                node.rib.delete_route(&key)?;
            }
            (Some(p), Some(b)) if p.via != b.via => node.rib.change_route(&key, next_hop(&b))?,
            _ => {}
        }
        node.rib.take_log();
        match best {
            Some(b) => node.selected.insert(key, b),
            None => node.selected.remove(&key),
        };
        node.dirty.insert(key);
        Ok(true)
    }

    fn update_for(&self, node: &Node, key: &RouteKey) -> (Update, Option<NodeId>) {
        let sel = node.selected.get(key);
        let metric = sel.map_or(INFINITY, |s| s.metric);
        let src = match node.capability {
            Capability::SpecificCapable if key.is_specific() => Some(key.src),
            _ => None,
        };
        let update = Update {
            dest: key.dest,
            src,
            metric,
        };
        // Split horizon, except for routes that changed form when learned.
        let horizon = sel
            .and_then(|s| s.via)
            .filter(|via| !node.stripped.contains(&(*key, *via)));
        (update, horizon)
    }

    fn announcements(&self, id: NodeId, keys: &BTreeSet<RouteKey>) -> Vec<(NodeId, Update)> {
        let node = self.node(id);
        let mut out = Vec::new();
        for key in keys {
            let (update, learned_from) = self.update_for(node, key);
            assert!(
                !(node.capability == Capability::SpecificCapable
                    && update.src.is_some_and(|s| s.is_zero_length())),
                "capable node {} about to send a specific update with a zero-length source",
                node.name
            );
            for neighbor in self.neighbors(id) {
                if Some(neighbor) != learned_from {
                    out.push((neighbor, update));
                }
            }
        }
        out
    }

    /// The full set of updates `node` would send now: one per selected
    /// route and neighbour, minus split horizon.
    pub fn advertise(&self, node: NodeId) -> Vec<(NodeId, Update)> {
        let keys = self.node(node).selected.keys().copied().collect();
        self.announcements(node, &keys)
    }

    /// Runs one round. Returns whether anything was sent, delivered or
    /// changed.
    pub fn step(&mut self) -> Result<bool, SimError> {
        self.rounds += 1;
        let mut changed = false;
        for i in 0..self.nodes.len() {
            let id = NodeId(i as u32);
            let keys = std::mem::take(&mut self.node_mut(id).dirty);
            for (to, update) in self.announcements(id, &keys) {
                self.queues.entry((id, to)).or_default().push_back(update);
                self.sent.push((id, to, update));
            }
        }
        let mut batches: Vec<((NodeId, NodeId), VecDeque<Update>)> =
            std::mem::take(&mut self.queues).into_iter().collect();
        if let Some(rng) = self.shuffle.as_mut() {
            batches.shuffle(rng);
        }
        for ((from, to), queue) in batches {
            for update in queue {
                changed = true;
                self.process_update(to, from, update)?;
            }
        }
        Ok(changed)
    }

    fn is_quiescent(&self) -> bool {
        self.queues.values().all(|q| q.is_empty()) && self.nodes.iter().all(|n| n.dirty.is_empty())
    }

    /// Steps until a round changes nothing. Returns the number of rounds
    /// that did change something.
    pub fn run_to_convergence(&mut self, max_rounds: u64) -> Result<u64, SimError> {
        let mut rounds = 0;
        while rounds < max_rounds {
            if !self.step()? {
                return Ok(rounds);
            }
            rounds += 1;
        }
        if self.is_quiescent() {
            Ok(rounds)
        } else {
            Err(SimError::Timeout(rounds))
        }
    }

    /// The forwarding decision of one node.
    pub fn forward(&self, id: NodeId, dst: Address, src: Address) -> Result<Forward, SimError> {
        let node = self.node(id);
        let nh = match node.policy {
            ForwardingPolicy::DestFirst => node.rib.fib().lookup_with(Backend::SourceFirst, dst, src)?,
            ForwardingPolicy::SourceFirst => lookup_source_first(node.rib.routes().iter(), dst, src)?,
        };
        Ok(match nh {
            None => Forward::Drop,
            Some(nh) => match &nh.via {
                None => Forward::Local,
                Some(name) => Forward::Neighbor(
                    self.node_id(name)
                        .ok_or_else(|| SimError::UnknownNode(name.clone()))?,
                ),
            },
        })
    }

    /// Follows a packet from `start` for at most `ttl` hops.
    pub fn trace_packet(
        &self,
        start: NodeId,
        dst: Address,
        src: Address,
        ttl: usize,
    ) -> Result<Trace, SimError> {
        let mut path = vec![start];
        let mut current = start;
        for _ in 0..ttl.max(1) {
            match self.forward(current, dst, src)? {
                Forward::Local => return Ok(Trace::Delivered(path)),
                Forward::Drop => return Ok(Trace::Dropped(path)),
                Forward::Neighbor(next) => {
                    if let Some(pos) = path.iter().position(|n| *n == next) {
                        return Ok(Trace::Loop(path[pos..].to_vec()));
                    }
                    path.push(next);
                    current = next;
                }
            }
        }
        Ok(Trace::Expired(path))
    }

    /// Whether legacy routers are safe from blackholes: the capable nodes
    /// form a connected backbone holding every originator of a specific
    /// route, and a backbone node originates the non-specific default.
    /// Trivially true without legacy nodes or without specific routes.
    pub fn check_backbone_condition(&self) -> bool {
        let specific_origin = |n: &Node| n.originated.keys().any(|k| k.is_specific());
        if !self.nodes.iter().any(|n| n.capability.is_legacy()) || !self.nodes.iter().any(specific_origin) {
            return true;
        }
        let backbone: Vec<NodeId> = self
            .nodes
            .iter()
            .filter(|n| !n.capability.is_legacy())
            .map(|n| n.id)
            .collect();
        let Some(&first) = backbone.first() else {
            return false;
        };
        let mut seen = BTreeSet::from([first]);
        let mut todo = vec![first];
        while let Some(n) = todo.pop() {
            for m in self.neighbors(n) {
                if !self.node(m).capability.is_legacy() && seen.insert(m) {
                    todo.push(m);
                }
            }
        }
        let default = RouteKey::new(Prefix::zero(self.dest_width), Prefix::zero(self.src_width));
        seen.len() == backbone.len()
            && self
                .nodes
                .iter()
                .filter(|n| specific_origin(n))
                .all(|n| !n.capability.is_legacy())
            && backbone
                .iter()
                .any(|id| self.node(*id).originated.contains_key(&default))
    }

    /// Largest hop distance between two nodes, `None` if disconnected.
    pub fn hop_diameter(&self) -> Option<usize> {
        let mut diameter = 0;
        for n in &self.nodes {
            let mut dist = BTreeMap::from([(n.id, 0usize)]);
            let mut queue = VecDeque::from([n.id]);
            while let Some(x) = queue.pop_front() {
                let d = dist[&x];
                for y in self.neighbors(x) {
                    dist.entry(y).or_insert_with(|| {
                        queue.push_back(y);
                        d + 1
                    });
                }
            }
            if dist.len() != self.nodes.len() {
                return None;
            }
            diameter = diameter.max(dist.values().copied().max().unwrap_or(0));
        }
        Some(diameter)
    }

    pub fn names(&self, path: &[NodeId]) -> Vec<&str> {
        path.iter().map(|id| self.node(*id).name.as_str()).collect()
    }
}
