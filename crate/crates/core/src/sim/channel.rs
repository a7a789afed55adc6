use super::{Amount, Time, UnitId, TIME_PER_SEC};
use crate::graph::NodeId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Router queue service order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueuePolicy {
    #[default]
    Lifo,
    Fifo,
    /// Earliest deadline first.
    Edf,
    /// Smallest payment first.
    Spf,
}

impl QueuePolicy {
    /// Ordering key; smaller is served first. `seq` breaks ties.
    pub fn key(self, seq: u64, deadline: Time, amount: Amount) -> (i64, u64) {
        match self {
            QueuePolicy::Lifo => (-(seq as i64), 0),
            QueuePolicy::Fifo => (0, seq),
            QueuePolicy::Edf => (deadline as i64, seq),
            QueuePolicy::Spf => (amount, seq),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueuedUnit {
    pub unit: UnitId,
    pub amount: Amount,
    pub enqueued_at: Time,
}

/// One direction's waiting units, ordered by policy key.
#[derive(Debug, Clone, Default)]
pub struct UnitQueue {
    items: BTreeMap<(i64, u64), QueuedUnit>,
    total: Amount,
}

impl UnitQueue {
    pub fn push(&mut self, key: (i64, u64), item: QueuedUnit) {
        self.total += item.amount;
        self.items.insert(key, item);
    }

    pub fn remove(&mut self, key: &(i64, u64)) -> Option<QueuedUnit> {
        let it = self.items.remove(key)?;
        self.total -= it.amount;
        Some(it)
    }

    /// Highest-priority unit that fits in `funds`.
    pub fn best_fitting(&self, funds: Amount) -> Option<(i64, u64)> {
        self.items.iter().find(|(_, it)| it.amount <= funds).map(|(k, _)| *k)
    }

    pub fn total(&self) -> Amount {
        self.total
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(i64, u64), &QueuedUnit)> + '_ {
        self.items.iter()
    }
}

/// Time-decayed rate estimate: every event of size `a` adds `a/window`, and
/// the estimate decays as exp(-dt/window).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct RateEstimator {
    pub rate: f64,
    pub last: Time,
}

impl RateEstimator {
    fn decay(&mut self, now: Time, window: f64) {
        if now > self.last {
            let dt = (now - self.last) as f64 / TIME_PER_SEC as f64;
            self.rate *= (-dt / window).exp();
            self.last = now;
        }
    }

    pub fn record(&mut self, now: Time, tokens: f64, window: f64) {
        self.decay(now, window);
        self.rate += tokens / window;
    }

    pub fn value(&self, now: Time, window: f64) -> f64 {
        let mut c = *self;
        c.decay(now, window);
        c.rate
    }
}

/// Per-direction arrival and service estimates for a channel.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub arrival: [RateEstimator; 2],
    pub service: [RateEstimator; 2],
    /// Estimation window, seconds.
    pub window: f64,
}

impl ChannelStats {
    pub fn new(window: f64) -> Self {
        ChannelStats { window, ..Default::default() }
    }
}

/// Funds a side would need to serve its arrivals: `x̃ · i / ỹ` per direction.
/// Infinite when nothing has been served yet.
pub fn estimate_channel_demand(arrival: [f64; 2], service: [f64; 2], inflight: [f64; 2]) -> (f64, f64) {
    let m = |k: usize| {
        if service[k] > 0.0 {
            arrival[k] * inflight[k] / service[k]
        } else {
            f64::INFINITY
        }
    };
    (m(0), m(1))
}

/// Direction 0 is `u → v` (paid from `u`'s balance), direction 1 is `v → u`.
#[derive(Debug, Clone)]
pub struct ChannelState {
    pub u: NodeId,
    pub v: NodeId,
    pub capacity: Amount,
    pub balance: [Amount; 2],
    pub inflight: [Amount; 2],
    pub queue: [UnitQueue; 2],
    pub queue_bound: Amount,
    pub delay: Time,
    pub stats: ChannelStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForwardOutcome {
    Forwarded,
    Enqueued,
    Dropped,
}

impl ChannelState {
    pub fn new(u: NodeId, v: NodeId, capacity: Amount, delay: Time, queue_bound: Amount, stats_window: f64) -> Self {
        let half = capacity / 2;
        ChannelState {
            u,
            v,
            capacity,
            balance: [capacity - half, half],
            inflight: [0, 0],
            queue: [UnitQueue::default(), UnitQueue::default()],
            queue_bound,
            delay,
            stats: ChannelStats::new(stats_window),
        }
    }

    /// Direction index for a payment leaving `from`.
    pub fn dir_from(&self, from: NodeId) -> usize {
        if from == self.u {
            0
        } else {
            debug_assert_eq!(from, self.v);
            1
        }
    }

    pub fn side_node(&self, dir: usize) -> NodeId {
        if dir == 0 {
            self.u
        } else {
            self.v
        }
    }

    pub fn conserved(&self) -> bool {
        self.balance.iter().all(|&b| b >= 0)
            && self.inflight.iter().all(|&i| i >= 0)
            && self.balance[0] + self.balance[1] + self.inflight[0] + self.inflight[1] == self.capacity
    }

    /// Locks `amount` from the paying side if funds allow; otherwise queues it
    /// when `queueing` and the bound permits, else drops it.
    pub fn try_forward(&mut self, dir: usize, item: QueuedUnit, key: (i64, u64), queueing: bool, now: Time) -> ForwardOutcome {
        let w = self.stats.window;
        self.stats.arrival[dir].record(now, item.amount as f64 / 1000.0, w);
        if self.balance[dir] >= item.amount {
            self.lock(dir, item.amount, now);
            ForwardOutcome::Forwarded
        } else if queueing && self.queue[dir].total() + item.amount <= self.queue_bound {
            self.queue[dir].push(key, item);
            ForwardOutcome::Enqueued
        } else {
            ForwardOutcome::Dropped
        }
    }

    pub fn lock(&mut self, dir: usize, amount: Amount, now: Time) {
        self.balance[dir] -= amount;
        self.inflight[dir] += amount;
        let w = self.stats.window;
        self.stats.service[dir].record(now, amount as f64 / 1000.0, w);
    }

    /// Ack reached the paying side: funds move to the other side.
    pub fn settle(&mut self, dir: usize, amount: Amount) {
        self.inflight[dir] -= amount;
        self.balance[1 - dir] += amount;
    }

    /// Failure reached the paying side: funds return to it.
    pub fn refund(&mut self, dir: usize, amount: Amount) {
        self.inflight[dir] -= amount;
        self.balance[dir] += amount;
    }

    pub fn demand_estimate(&self, now: Time) -> (f64, f64) {
        let w = self.stats.window;
        let a = [self.stats.arrival[0].value(now, w), self.stats.arrival[1].value(now, w)];
        let s = [self.stats.service[0].value(now, w), self.stats.service[1].value(now, w)];
        let i = [self.inflight[0] as f64 / 1000.0, self.inflight[1] as f64 / 1000.0];
        estimate_channel_demand(a, s, i)
    }
}
