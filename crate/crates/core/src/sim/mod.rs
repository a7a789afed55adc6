//! Deterministic discrete-event simulation of a payment channel network.
//!
//! Amounts are integer milli-tokens and time is integer microseconds, so
//! conservation checks are exact and runs replay byte for byte.

mod channel;
mod engine;

pub use channel::{
    estimate_channel_demand, ChannelState, ChannelStats, ForwardOutcome, QueuePolicy, QueuedUnit, RateEstimator,
    UnitQueue,
};
pub use engine::{
    mark_if_delayed, Core, EventQueue, FailReason, Notice, RebalanceConfig, RebalanceMode, RebalanceRecord, Scheme,
    SendOutcome, SeriesPoint, Sim, SimConfig, SimEvent, SimReport, TxnOutcome, TxnStatus, UnitOutcome,
};

use crate::graph::{GraphError, NodeId, Path, Topology};
use serde::{Deserialize, Serialize};

/// Simulated time in microseconds.
pub type Time = u64;
/// Token amount in milli-tokens.
pub type Amount = i64;
pub type UnitId = u64;
pub type TxnId = u64;

pub const TIME_PER_SEC: Time = 1_000_000;
pub const AMOUNT_PER_TOKEN: Amount = 1_000;

pub fn secs(s: f64) -> Time {
    (s * TIME_PER_SEC as f64).round().max(0.0) as Time
}

pub fn to_secs(t: Time) -> f64 {
    t as f64 / TIME_PER_SEC as f64
}

pub fn tokens(x: f64) -> Amount {
    (x * AMOUNT_PER_TOKEN as f64).round() as Amount
}

pub fn to_tokens(a: Amount) -> f64 {
    a as f64 / AMOUNT_PER_TOKEN as f64
}

/// A payment entering the network at `arrival` from `src` to `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transaction {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub amount: Amount,
    pub arrival: Time,
    pub deadline: Time,
}

/// A path resolved against a topology: channel index and direction per hop.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Route {
    pub nodes: Vec<NodeId>,
    pub chans: Vec<usize>,
    /// 0 when the hop pays from the channel's `u` side.
    pub dirs: Vec<usize>,
}

impl Route {
    pub fn new(topo: &Topology, path: &Path) -> Result<Route, GraphError> {
        if path.0.len() < 2 {
            return Err(GraphError::InvalidArgument(format!("route {path} has no hops")));
        }
        let chans = path.channel_indices(topo).ok_or_else(|| {
            let (a, b) = path.edges().find(|&(a, b)| topo.channel_between(a, b).is_none()).unwrap_or((0, 0));
            GraphError::UnknownChannel(a, b)
        })?;
        let dirs = path
            .edges()
            .zip(&chans)
            .map(|((a, _), &c)| usize::from(topo.channel(c).u != a))
            .collect();
        Ok(Route { nodes: path.0.clone(), chans, dirs })
    }

    pub fn source(&self) -> NodeId {
        self.nodes[0]
    }

    pub fn target(&self) -> NodeId {
        *self.nodes.last().unwrap()
    }

    pub fn hops(&self) -> usize {
        self.chans.len()
    }

    pub fn path(&self) -> Path {
        Path(self.nodes.clone())
    }
}

/// Splits `amount` into `mtu`-sized pieces with a smaller last piece.
pub fn packetize(amount: Amount, mtu: Amount) -> Vec<Amount> {
    assert!(amount > 0 && mtu > 0);
    let full = amount / mtu;
    let mut out = vec![mtu; full as usize];
    if amount % mtu != 0 {
        out.push(amount % mtu);
    }
    out
}
