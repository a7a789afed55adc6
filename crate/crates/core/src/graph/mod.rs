//! Channel topology, payment demand, paths and flow assignments.
//!
//! A [`Topology`] is the undirected channel graph G(V, E). A [`DemandMatrix`]
//! is the directed payment graph H: one weighted edge per sender/receiver pair.
//! Paths are stored as node sequences; because a topology carries at most one
//! channel per unordered pair, the node sequence determines the channels used.

mod decompose;
mod io;
mod paths;

pub use decompose::{decompose, greedy_cycle_removal, spanning_tree_route, bfs_spanning_tree, Decomposition};
pub use paths::{
    enumerate_trails, k_edge_disjoint_shortest_paths, k_edge_disjoint_widest_paths,
    shortest_path, yen_k_shortest, PathKind,
};

use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use thiserror::Error;

pub type NodeId = u32;

/// Node-balance tolerance for circulations built from integer-scale rates.
pub const BALANCE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("channel {0}-{1} is a self loop")]
    SelfLoop(NodeId, NodeId),
    #[error("duplicate channel between {0} and {1}")]
    DuplicateChannel(NodeId, NodeId),
    #[error("channel {u}-{v} has non-positive {what} {value}")]
    NonPositive { u: NodeId, v: NodeId, what: &'static str, value: f64 },
    #[error("no channel between {0} and {1}")]
    UnknownChannel(NodeId, NodeId),
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("demand {0}>{1}: {2}")]
    InvalidDemand(NodeId, NodeId, String),
    #[error("demand {0}>{1} is uncapped; a finite rate is required here")]
    UncappedDemand(NodeId, NodeId),
    #[error("not a circulation: node {node} is off balance by {imbalance}")]
    NotACirculation { node: NodeId, imbalance: f64 },
    #[error("tree does not span the demand: {0}")]
    TreeNotSpanning(String),
    #[error("no path from {0} to {1}")]
    NoPath(NodeId, NodeId),
    #[error("source and destination are both {0}")]
    SameEndpoints(NodeId),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// One undirected payment channel, stored with `u < v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Channel {
    pub u: NodeId,
    pub v: NodeId,
    /// Total escrowed funds, tokens.
    pub capacity: f64,
    /// One-way per-hop delay, seconds.
    pub delay: f64,
}

impl Channel {
    pub fn new(a: NodeId, b: NodeId, capacity: f64, delay: f64) -> Self {
        let (u, v) = if a <= b { (a, b) } else { (b, a) };
        Channel { u, v, capacity, delay }
    }

    pub fn other(&self, n: NodeId) -> NodeId {
        if n == self.u {
            self.v
        } else {
            self.u
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "TopologyRepr", into = "TopologyRepr")]
pub struct Topology {
    nodes: Vec<NodeId>,
    channels: Vec<Channel>,
    index: BTreeMap<(NodeId, NodeId), usize>,
    // neighbor lists sorted by neighbor id
    adjacency: BTreeMap<NodeId, Vec<(NodeId, usize)>>,
}

#[derive(Serialize, Deserialize)]
struct TopologyRepr {
    nodes: Vec<NodeId>,
    channels: Vec<Channel>,
}

impl TryFrom<TopologyRepr> for Topology {
    type Error = GraphError;
    fn try_from(r: TopologyRepr) -> Result<Self, GraphError> {
        Topology::new(r.nodes, r.channels)
    }
}

impl From<Topology> for TopologyRepr {
    fn from(t: Topology) -> Self {
        TopologyRepr { nodes: t.nodes, channels: t.channels }
    }
}

impl Topology {
    /// Builds a topology from explicit nodes plus channels. Channel endpoints
    /// are added to the node set automatically.
    pub fn new(
        nodes: impl IntoIterator<Item = NodeId>,
        channels: impl IntoIterator<Item = Channel>,
    ) -> Result<Self, GraphError> {
        let mut node_set: BTreeSet<NodeId> = nodes.into_iter().collect();
        let mut chans = Vec::new();
        let mut index = BTreeMap::new();
        for c in channels {
            let c = Channel::new(c.u, c.v, c.capacity, c.delay);
            if c.u == c.v {
                return Err(GraphError::SelfLoop(c.u, c.v));
            }
            if !(c.capacity > 0.0) || !c.capacity.is_finite() {
                return Err(GraphError::NonPositive { u: c.u, v: c.v, what: "capacity", value: c.capacity });
            }
            if !(c.delay > 0.0) || !c.delay.is_finite() {
                return Err(GraphError::NonPositive { u: c.u, v: c.v, what: "delay", value: c.delay });
            }
            if index.insert((c.u, c.v), chans.len()).is_some() {
                return Err(GraphError::DuplicateChannel(c.u, c.v));
            }
            node_set.insert(c.u);
            node_set.insert(c.v);
            chans.push(c);
        }
        let mut adjacency: BTreeMap<NodeId, Vec<(NodeId, usize)>> =
            node_set.iter().map(|&n| (n, Vec::new())).collect();
        for (i, c) in chans.iter().enumerate() {
            adjacency.get_mut(&c.u).unwrap().push((c.v, i));
            adjacency.get_mut(&c.v).unwrap().push((c.u, i));
        }
        for list in adjacency.values_mut() {
            list.sort_unstable();
        }
        Ok(Topology { nodes: node_set.into_iter().collect(), channels: chans, index, adjacency })
    }

    pub fn from_channels(channels: impl IntoIterator<Item = Channel>) -> Result<Self, GraphError> {
        Self::new(std::iter::empty(), channels)
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.nodes
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn channel(&self, idx: usize) -> &Channel {
        &self.channels[idx]
    }

    pub fn contains_node(&self, n: NodeId) -> bool {
        self.adjacency.contains_key(&n)
    }

    /// Index of the channel joining `a` and `b`, in either orientation.
    pub fn channel_between(&self, a: NodeId, b: NodeId) -> Option<usize> {
        let key = if a <= b { (a, b) } else { (b, a) };
        self.index.get(&key).copied()
    }

    pub fn neighbors(&self, n: NodeId) -> &[(NodeId, usize)] {
        self.adjacency.get(&n).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn degree(&self, n: NodeId) -> usize {
        self.neighbors(n).len()
    }

    pub fn is_connected(&self) -> bool {
        let Some(&start) = self.nodes.first() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for &(m, _) in self.neighbors(n) {
                if seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen.len() == self.nodes.len()
    }

    /// Same graph with every capacity multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut t = self.clone();
        for c in &mut t.channels {
            c.capacity *= factor;
        }
        t
    }

    /// Same graph with every capacity replaced by `capacity`.
    pub fn with_uniform_capacity(&self, capacity: f64) -> Self {
        let mut t = self.clone();
        for c in &mut t.channels {
            c.capacity = capacity;
        }
        t
    }

    pub fn mean_capacity(&self) -> f64 {
        if self.channels.is_empty() {
            return 0.0;
        }
        self.channels.iter().map(|c| c.capacity).sum::<f64>() / self.channels.len() as f64
    }
}

/// Directed payment graph: `(i, j) -> d_{i,j}` in tokens per second.
///
/// Zero-rate entries are never stored. `f64::INFINITY` marks an uncapped pair.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DemandMatrix {
    entries: BTreeMap<(NodeId, NodeId), f64>,
}

impl DemandMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(
        entries: impl IntoIterator<Item = ((NodeId, NodeId), f64)>,
    ) -> Result<Self, GraphError> {
        let mut d = Self::new();
        for ((i, j), r) in entries {
            d.add(i, j, r)?;
        }
        Ok(d)
    }

    /// Adds `rate` to the `(i, j)` entry.
    pub fn add(&mut self, i: NodeId, j: NodeId, rate: f64) -> Result<(), GraphError> {
        if i == j {
            return Err(GraphError::InvalidDemand(i, j, "self demand".into()));
        }
        if rate.is_nan() || rate < 0.0 {
            return Err(GraphError::InvalidDemand(i, j, format!("rate {rate} is negative")));
        }
        if rate == 0.0 {
            return Ok(());
        }
        *self.entries.entry((i, j)).or_insert(0.0) += rate;
        Ok(())
    }

    pub fn add_uncapped(&mut self, i: NodeId, j: NodeId) -> Result<(), GraphError> {
        self.add(i, j, f64::INFINITY)
    }

    pub fn get(&self, i: NodeId, j: NodeId) -> f64 {
        self.entries.get(&(i, j)).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = ((NodeId, NodeId), f64)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.entries.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.entries.values().sum()
    }

    pub fn nodes(&self) -> BTreeSet<NodeId> {
        self.entries.keys().flat_map(|&(i, j)| [i, j]).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(|r| r.is_finite())
    }

    /// Out-weight minus in-weight for every node that appears.
    pub fn net_outflow(&self) -> BTreeMap<NodeId, f64> {
        let mut net = BTreeMap::new();
        for (&(i, j), &r) in &self.entries {
            *net.entry(i).or_insert(0.0) += r;
            *net.entry(j).or_insert(0.0) -= r;
        }
        net
    }

    /// Largest absolute node imbalance.
    pub fn max_imbalance(&self) -> f64 {
        self.net_outflow().values().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        let mut d = Self::new();
        for (&(i, j), &r) in &self.entries {
            // factor validated by caller; skip zeros produced by factor 0
            let _ = d.add(i, j, r * factor);
        }
        d
    }

    pub fn merged(&self, other: &DemandMatrix) -> Self {
        let mut d = self.clone();
        for ((i, j), r) in other.iter() {
            let _ = d.add(i, j, r);
        }
        d
    }

    /// Sum of out-weights per sender.
    pub fn row_sums(&self) -> BTreeMap<NodeId, f64> {
        let mut rows = BTreeMap::new();
        for (&(i, _), &r) in &self.entries {
            *rows.entry(i).or_insert(0.0) += r;
        }
        rows
    }

    pub fn column_sums(&self) -> BTreeMap<NodeId, f64> {
        let mut cols = BTreeMap::new();
        for (&(_, j), &r) in &self.entries {
            *cols.entry(j).or_insert(0.0) += r;
        }
        cols
    }
}

/// A route as a node sequence, source first.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Path(pub Vec<NodeId>);

impl Path {
    pub fn new(nodes: Vec<NodeId>) -> Self {
        Path(nodes)
    }

    pub fn nodes(&self) -> &[NodeId] {
        &self.0
    }

    pub fn source(&self) -> NodeId {
        self.0[0]
    }

    pub fn target(&self) -> NodeId {
        *self.0.last().unwrap()
    }

    pub fn hops(&self) -> usize {
        self.0.len().saturating_sub(1)
    }

    /// Directed hops `(from, to)` in order.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId)> + '_ {
        self.0.windows(2).map(|w| (w[0], w[1]))
    }

    /// Channel indices along the path; `None` if a hop is not a channel.
    pub fn channel_indices(&self, topo: &Topology) -> Option<Vec<usize>> {
        self.edges().map(|(a, b)| topo.channel_between(a, b)).collect()
    }

    /// True if every hop is a channel and no channel is used twice.
    pub fn is_trail(&self, topo: &Topology) -> bool {
        if self.0.len() < 2 {
            return false;
        }
        match self.channel_indices(topo) {
            Some(idx) => {
                let set: BTreeSet<usize> = idx.iter().copied().collect();
                set.len() == idx.len()
            }
            None => false,
        }
    }

    /// Smallest channel capacity along the path.
    pub fn width(&self, topo: &Topology) -> f64 {
        self.channel_indices(topo)
            .map(|idx| idx.iter().map(|&c| topo.channel(c).capacity).fold(f64::INFINITY, f64::min))
            .unwrap_or(0.0)
    }

    pub fn delay(&self, topo: &Topology) -> f64 {
        self.channel_indices(topo)
            .map(|idx| idx.iter().map(|&c| topo.channel(c).delay).sum())
            .unwrap_or(f64::INFINITY)
    }

    pub fn reversed(&self) -> Path {
        let mut n = self.0.clone();
        n.reverse();
        Path(n)
    }
}

impl fmt::Display for Path {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|n| n.to_string()).collect();
        write!(f, "{}", parts.join("-"))
    }
}

impl std::str::FromStr for Path {
    type Err = GraphError;
    fn from_str(s: &str) -> Result<Self, GraphError> {
        let nodes: Result<Vec<NodeId>, _> = s.split('-').map(|p| p.trim().parse::<NodeId>()).collect();
        match nodes {
            Ok(n) if n.len() >= 2 => Ok(Path(n)),
            _ => Err(GraphError::InvalidArgument(format!("bad path '{s}'"))),
        }
    }
}

/// Candidate paths per sender/receiver pair.
pub type PathSet = BTreeMap<(NodeId, NodeId), Vec<Path>>;

/// Rate per path, tokens per second.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowAssignment {
    rates: BTreeMap<Path, f64>,
}

impl FlowAssignment {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `rate` to the path's current rate. Negative input is a caller bug.
    pub fn add(&mut self, path: Path, rate: f64) {
        debug_assert!(rate >= 0.0, "negative path rate {rate}");
        if rate <= 0.0 {
            return;
        }
        *self.rates.entry(path).or_insert(0.0) += rate;
    }

    pub fn rate(&self, path: &Path) -> f64 {
        self.rates.get(path).copied().unwrap_or(0.0)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Path, f64)> + '_ {
        self.rates.iter().map(|(p, &r)| (p, r))
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.rates.values().sum()
    }

    /// Total rate per directed hop `(from, to)`.
    pub fn directed_edge_flows(&self) -> BTreeMap<(NodeId, NodeId), f64> {
        let mut flows = BTreeMap::new();
        for (p, &r) in &self.rates {
            for e in p.edges() {
                *flows.entry(e).or_insert(0.0) += r;
            }
        }
        flows
    }

    /// Largest |forward - reverse| over all channels the assignment touches.
    pub fn max_channel_imbalance(&self) -> f64 {
        let flows = self.directed_edge_flows();
        flows
            .iter()
            .map(|(&(a, b), &f)| (f - flows.get(&(b, a)).copied().unwrap_or(0.0)).abs())
            .fold(0.0, f64::max)
    }

    /// Rate delivered per sender/receiver pair.
    pub fn pair_totals(&self) -> BTreeMap<(NodeId, NodeId), f64> {
        let mut t = BTreeMap::new();
        for (p, &r) in &self.rates {
            *t.entry((p.source(), p.target())).or_insert(0.0) += r;
        }
        t
    }
}
