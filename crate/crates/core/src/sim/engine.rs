use super::channel::{ChannelState, ForwardOutcome, QueuePolicy, QueuedUnit};
use super::{secs, to_secs, Amount, Route, Time, Transaction, TxnId, UnitId, TIME_PER_SEC};
use crate::graph::{NodeId, Topology};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap, VecDeque};
use std::fmt::Write as _;
use std::rc::Rc;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SimEvent {
    Arrival(usize),
    Deadline(TxnId),
    /// Unit reaches `route.nodes[hop]`.
    UnitAt { unit: UnitId, hop: usize },
    /// Ack reaches the paying side of `route.chans[hop]`.
    AckAt { unit: UnitId, hop: usize },
    /// Failure notice reaches the paying side of `route.chans[hop]`.
    FailAt { unit: UnitId, hop: usize },
    Timer(u64),
    Rebalance(NodeId),
    Snapshot,
}

struct Entry {
    time: Time,
    seq: u64,
    event: SimEvent,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Entry {}
impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Min-heap of events keyed by (time, insertion sequence).
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Entry>,
    seq: u64,
}

impl EventQueue {
    pub fn push(&mut self, time: Time, event: SimEvent) {
        self.heap.push(Entry { time, seq: self.seq, event });
        self.seq += 1;
    }

    pub fn peek_time(&self) -> Option<Time> {
        self.heap.peek().map(|e| e.time)
    }

    pub fn pop(&mut self) -> Option<(Time, SimEvent)> {
        self.heap.pop().map(|e| (e.time, e.event))
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }
}

/// Sets `marked` when the queueing delay exceeds `threshold`; never clears it.
pub fn mark_if_delayed(marked: &mut bool, enqueued_at: Time, now: Time, threshold: Time) -> bool {
    if now.saturating_sub(enqueued_at) > threshold {
        *marked = true;
    }
    *marked
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RebalanceMode {
    /// Own-side balances set to their mean; the router's total is conserved.
    #[default]
    Equalize,
    /// Own-side balances below half the initial capacity are topped up with
    /// new on-chain funds.
    Replenish,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RebalanceConfig {
    /// Tokens routed by a node between consecutive rebalancing events.
    pub trigger: Amount,
    pub mode: RebalanceMode,
    pub delay: Time,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub policy: QueuePolicy,
    pub queue_bound: Amount,
    pub marking_threshold: Time,
    pub rebalance: Option<RebalanceConfig>,
    /// Window of the channel rate estimators, seconds.
    pub stats_window: f64,
    pub snapshot_interval: Option<Time>,
    pub log_events: bool,
    /// Check conservation on every channel after every event.
    pub audit: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            policy: QueuePolicy::Lifo,
            queue_bound: 12_000_000,
            marking_threshold: secs(0.3),
            rebalance: None,
            stats_window: 1.0,
            snapshot_interval: Some(TIME_PER_SEC),
            log_events: false,
            audit: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TxnStatus {
    Pending,
    Completed(Time),
    Failed(Time),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FailReason {
    /// No funds and the scheme does not queue at routers.
    NoFunds,
    QueueFull,
    /// Removed from a router queue at the deadline.
    Cancelled,
    /// Reached a node after its transaction stopped being pending.
    Expired,
}

#[derive(Debug, Clone)]
pub struct UnitOutcome {
    pub unit: UnitId,
    pub txn: TxnId,
    pub amount: Amount,
    pub tag: u32,
    pub route: Rc<Route>,
    pub marked: bool,
    pub sent_at: Time,
    /// `None` for an ack.
    pub reason: Option<FailReason>,
    /// Channel index where forwarding failed.
    pub failed_channel: Option<usize>,
}

#[derive(Debug, Clone)]
pub enum Notice {
    Transaction(TxnId),
    Ack(UnitOutcome),
    Fail(UnitOutcome),
    Timer(u64),
    Cancelled(TxnId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SendOutcome {
    Sent(UnitId),
    Queued(UnitId),
    /// The first hop had neither funds nor queue room.
    Rejected { channel: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Location {
    Moving,
    Queued { chan: usize, dir: usize, key: (i64, u64) },
    Returning,
}

#[derive(Debug, Clone)]
struct UnitRec {
    txn: TxnId,
    amount: Amount,
    tag: u32,
    route: Rc<Route>,
    hop: usize,
    marked: bool,
    sent_at: Time,
    loc: Location,
    reason: Option<FailReason>,
    failed_channel: Option<usize>,
}

#[derive(Debug, Clone)]
struct TxnRec {
    spec: Transaction,
    delivered: Amount,
    status: TxnStatus,
    units: Vec<UnitId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxnOutcome {
    pub id: u64,
    pub src: NodeId,
    pub dst: NodeId,
    pub amount: Amount,
    pub arrival: Time,
    pub deadline: Time,
    pub delivered: Amount,
    pub completed_at: Option<Time>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RebalanceRecord {
    pub time: Time,
    pub router: NodeId,
    /// Sum of absolute own-side balance changes.
    pub moved: Amount,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub time: Time,
    pub arrived: u64,
    pub completed: u64,
    pub delivered: Amount,
    pub onchain: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub scheme: String,
    pub end_time: Time,
    pub events: u64,
    pub transactions: Vec<TxnOutcome>,
    pub rebalances: Vec<RebalanceRecord>,
    pub series: Vec<SeriesPoint>,
    /// Events after which some channel failed the conservation check.
    pub audit_failures: u64,
    pub log: Option<String>,
}

/// Network state and the API schemes drive.
pub struct Core {
    topo: Topology,
    config: SimConfig,
    now: Time,
    queue: EventQueue,
    channels: Vec<ChannelState>,
    initial_capacity: Vec<Amount>,
    stream: Vec<Transaction>,
    txns: Vec<TxnRec>,
    units: HashMap<UnitId, UnitRec>,
    next_unit: u64,
    enqueue_seq: u64,
    routed: HashMap<NodeId, Amount>,
    rebalances: Vec<RebalanceRecord>,
    series: Vec<SeriesPoint>,
    notices: VecDeque<Notice>,
    events: u64,
    audit_failures: u64,
    completed: u64,
    delivered: Amount,
    log: Option<String>,
    queueing: bool,
}

impl Core {
    fn new(topo: Topology, mut stream: Vec<Transaction>, config: SimConfig, queueing: bool) -> Core {
        let channels: Vec<ChannelState> = topo
            .channels()
            .iter()
            .map(|c| {
                ChannelState::new(
                    c.u,
                    c.v,
                    super::tokens(c.capacity),
                    secs(c.delay),
                    config.queue_bound,
                    config.stats_window,
                )
            })
            .collect();
        let initial_capacity = channels.iter().map(|c| c.capacity).collect();
        stream.sort_by_key(|t| (t.arrival, t.id));
        let txns = stream
            .iter()
            .map(|&spec| TxnRec { spec, delivered: 0, status: TxnStatus::Pending, units: Vec::new() })
            .collect();
        let mut queue = EventQueue::default();
        if !stream.is_empty() {
            queue.push(stream[0].arrival, SimEvent::Arrival(0));
        }
        if let Some(iv) = config.snapshot_interval {
            queue.push(iv, SimEvent::Snapshot);
        }
        Core {
            topo,
            log: config.log_events.then(String::new),
            config,
            now: 0,
            queue,
            channels,
            initial_capacity,
            stream,
            txns,
            units: HashMap::new(),
            next_unit: 0,
            enqueue_seq: 0,
            routed: HashMap::new(),
            rebalances: Vec::new(),
            series: Vec::new(),
            notices: VecDeque::new(),
            events: 0,
            audit_failures: 0,
            completed: 0,
            delivered: 0,
            queueing,
        }
    }

    pub fn now(&self) -> Time {
        self.now
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn channel(&self, idx: usize) -> &ChannelState {
        &self.channels[idx]
    }

    pub fn channels(&self) -> &[ChannelState] {
        &self.channels
    }

    pub fn transaction(&self, id: TxnId) -> &Transaction {
        &self.txns[id as usize].spec
    }

    pub fn status(&self, id: TxnId) -> TxnStatus {
        self.txns[id as usize].status
    }

    pub fn delivered(&self, id: TxnId) -> Amount {
        self.txns[id as usize].delivered
    }

    pub fn is_pending(&self, id: TxnId) -> bool {
        self.status(id) == TxnStatus::Pending
    }

    /// Smallest spendable balance along the route right now.
    pub fn bottleneck(&self, route: &Route) -> Amount {
        route
            .chans
            .iter()
            .zip(&route.dirs)
            .map(|(&c, &d)| self.channels[c].balance[d])
            .min()
            .unwrap_or(0)
    }

    /// One-way propagation delay of the route.
    pub fn route_delay(&self, route: &Route) -> Time {
        route.chans.iter().map(|&c| self.channels[c].delay).sum()
    }

    pub fn set_timer(&mut self, at: Time, token: u64) {
        self.queue.push(at.max(self.now), SimEvent::Timer(token));
    }

    /// Gives up on a pending transaction; units still in the network fail back
    /// when they next reach a node.
    pub fn fail_transaction(&mut self, id: TxnId) {
        let t = &mut self.txns[id as usize];
        if t.status == TxnStatus::Pending {
            t.status = TxnStatus::Failed(self.now);
            self.log_line(format_args!("fail txn={id}"));
        }
    }

    /// Injects a unit at the route's source and attempts the first hop.
    pub fn send_unit(&mut self, txn: TxnId, route: &Rc<Route>, amount: Amount, tag: u32) -> SendOutcome {
        assert!(amount > 0, "unit amount must be positive");
        let id = self.next_unit;
        self.next_unit += 1;
        let rec = UnitRec {
            txn,
            amount,
            tag,
            route: Rc::clone(route),
            hop: 0,
            marked: false,
            sent_at: self.now,
            loc: Location::Moving,
            reason: None,
            failed_channel: None,
        };
        self.units.insert(id, rec);
        self.log_line(format_args!("send unit={id} txn={txn} amt={amount} route={}", route.path()));
        match self.forward(id) {
            ForwardOutcome::Forwarded => {
                self.txns[txn as usize].units.push(id);
                SendOutcome::Sent(id)
            }
            ForwardOutcome::Enqueued => {
                self.txns[txn as usize].units.push(id);
                SendOutcome::Queued(id)
            }
            ForwardOutcome::Dropped => {
                self.units.remove(&id);
                SendOutcome::Rejected { channel: route.chans[0] }
            }
        }
    }

    fn log_line(&mut self, args: std::fmt::Arguments) {
        if let Some(log) = self.log.as_mut() {
            let _ = writeln!(log, "{} {}", self.now, args);
        }
    }

    fn forward(&mut self, id: UnitId) -> ForwardOutcome {
        let now = self.now;
        let (chan, dir, item, key) = {
            let u = &self.units[&id];
            let chan = u.route.chans[u.hop];
            let dir = u.route.dirs[u.hop];
            let deadline = self.txns[u.txn as usize].spec.deadline;
            let key = self.config.policy.key(self.enqueue_seq, deadline, u.amount);
            (chan, dir, QueuedUnit { unit: id, amount: u.amount, enqueued_at: now }, key)
        };
        self.enqueue_seq += 1;
        let out = self.channels[chan].try_forward(dir, item, key, self.queueing, now);
        match out {
            ForwardOutcome::Forwarded => self.launch(id, chan),
            ForwardOutcome::Enqueued => {
                self.units.get_mut(&id).unwrap().loc = Location::Queued { chan, dir, key };
                self.log_line(format_args!("enqueue unit={id} ch={chan} dir={dir}"));
            }
            ForwardOutcome::Dropped => {
                self.log_line(format_args!("drop unit={id} ch={chan} dir={dir}"));
            }
        }
        out
    }

    /// Funds already locked on `chan`; schedule arrival at the next node.
    fn launch(&mut self, id: UnitId, chan: usize) {
        let u = self.units.get_mut(&id).unwrap();
        u.loc = Location::Moving;
        let hop = u.hop + 1;
        let at = self.now + self.channels[chan].delay;
        self.queue.push(at, SimEvent::UnitAt { unit: id, hop });
        self.log_line(format_args!("fwd unit={id} ch={chan}"));
    }

    /// Forwards queued units on one direction while funds suffice.
    pub fn service_queue(&mut self, chan: usize, dir: usize) -> Vec<UnitId> {
        let mut out = Vec::new();
        loop {
            let funds = self.channels[chan].balance[dir];
            let Some(key) = self.channels[chan].queue[dir].best_fitting(funds) else { break };
            let item = self.channels[chan].queue[dir].remove(&key).unwrap();
            let threshold = self.config.marking_threshold;
            let now = self.now;
            let u = self.units.get_mut(&item.unit).unwrap();
            mark_if_delayed(&mut u.marked, item.enqueued_at, now, threshold);
            self.channels[chan].lock(dir, item.amount, now);
            self.launch(item.unit, chan);
            out.push(item.unit);
        }
        out
    }

    /// Starts a failure notice back from the node at `hop`.
    fn fail_back(&mut self, id: UnitId, hop: usize, reason: FailReason, failed_channel: Option<usize>) {
        let u = self.units.get_mut(&id).unwrap();
        u.loc = Location::Returning;
        u.reason = Some(reason);
        u.failed_channel = failed_channel;
        if reason == FailReason::Cancelled {
            u.marked = true;
        }
        self.log_line(format_args!("failback unit={id} hop={hop} reason={reason:?}"));
        if hop == 0 {
            self.finish_unit(id, false);
        } else {
            let chan = self.units[&id].route.chans[hop - 1];
            let at = self.now + self.channels[chan].delay;
            self.queue.push(at, SimEvent::FailAt { unit: id, hop: hop - 1 });
        }
    }

    fn finish_unit(&mut self, id: UnitId, acked: bool) {
        let u = self.units.remove(&id).unwrap();
        let out = UnitOutcome {
            unit: id,
            txn: u.txn,
            amount: u.amount,
            tag: u.tag,
            route: u.route,
            marked: u.marked,
            sent_at: u.sent_at,
            reason: u.reason,
            failed_channel: u.failed_channel,
        };
        self.notices.push_back(if acked { Notice::Ack(out) } else { Notice::Fail(out) });
    }

    fn unit_at(&mut self, id: UnitId, hop: usize) {
        let (txn, amount, last) = {
            let u = self.units.get_mut(&id).unwrap();
            u.hop = hop;
            (u.txn, u.amount, u.route.hops())
        };
        let pending = self.txns[txn as usize].status == TxnStatus::Pending;
        if !pending {
            self.fail_back(id, hop, FailReason::Expired, None);
            return;
        }
        if hop == last {
            self.delivered += amount;
            self.log_line(format_args!("deliver unit={id} txn={txn}"));
            let t = &mut self.txns[txn as usize];
            t.delivered += amount;
            if t.delivered >= t.spec.amount {
                t.status = TxnStatus::Completed(self.now);
                self.completed += 1;
                self.log_line(format_args!("complete txn={txn}"));
            }
            let u = self.units.get_mut(&id).unwrap();
            u.loc = Location::Returning;
            let chan = u.route.chans[hop - 1];
            let at = self.now + self.channels[chan].delay;
            self.queue.push(at, SimEvent::AckAt { unit: id, hop: hop - 1 });
            return;
        }
        if self.forward(id) == ForwardOutcome::Dropped {
            let chan = self.units[&id].route.chans[hop];
            let reason = if self.queueing { FailReason::QueueFull } else { FailReason::NoFunds };
            self.fail_back(id, hop, reason, Some(chan));
        }
    }

    fn ack_at(&mut self, id: UnitId, hop: usize) {
        let (chan, dir, amount, payer) = {
            let u = &self.units[&id];
            (u.route.chans[hop], u.route.dirs[hop], u.amount, u.route.nodes[hop])
        };
        self.channels[chan].settle(dir, amount);
        self.log_line(format_args!("settle unit={id} ch={chan} dir={dir}"));
        self.service_queue(chan, 1 - dir);
        self.count_routed(payer, amount);
        if hop == 0 {
            self.finish_unit(id, true);
        } else {
            let prev = self.units[&id].route.chans[hop - 1];
            let at = self.now + self.channels[prev].delay;
            self.queue.push(at, SimEvent::AckAt { unit: id, hop: hop - 1 });
        }
    }

    fn fail_at(&mut self, id: UnitId, hop: usize) {
        let (chan, dir, amount) = {
            let u = &self.units[&id];
            (u.route.chans[hop], u.route.dirs[hop], u.amount)
        };
        self.channels[chan].refund(dir, amount);
        self.log_line(format_args!("refund unit={id} ch={chan} dir={dir}"));
        self.service_queue(chan, dir);
        if hop == 0 {
            self.finish_unit(id, false);
        } else {
            let prev = self.units[&id].route.chans[hop - 1];
            let at = self.now + self.channels[prev].delay;
            self.queue.push(at, SimEvent::FailAt { unit: id, hop: hop - 1 });
        }
    }

    /// Removes every queued unit of the transaction and sends failure notices
    /// back along their prefixes. Delivered units are untouched.
    pub fn cancel_transaction(&mut self, id: TxnId) -> usize {
        let unit_ids = self.txns[id as usize].units.clone();
        let mut removed = 0;
        for uid in unit_ids {
            let Some(u) = self.units.get(&uid) else { continue };
            if let Location::Queued { chan, dir, key } = u.loc {
                let hop = u.hop;
                self.channels[chan].queue[dir].remove(&key);
                self.fail_back(uid, hop, FailReason::Cancelled, None);
                removed += 1;
            }
        }
        removed
    }

    fn deadline(&mut self, id: TxnId) {
        if self.txns[id as usize].status != TxnStatus::Pending {
            return;
        }
        self.txns[id as usize].status = TxnStatus::Failed(self.now);
        let removed = self.cancel_transaction(id);
        self.log_line(format_args!("cancel txn={id} removed={removed}"));
        self.notices.push_back(Notice::Cancelled(id));
    }

    fn count_routed(&mut self, node: NodeId, amount: Amount) {
        let Some(cfg) = self.config.rebalance else { return };
        let r = self.routed.entry(node).or_insert(0);
        *r += amount;
        if *r >= cfg.trigger {
            *r -= cfg.trigger;
            if cfg.delay == 0 {
                self.rebalance_router(node);
            } else {
                self.queue.push(self.now + cfg.delay, SimEvent::Rebalance(node));
            }
        }
    }

    /// Applies the configured rebalancing to `router`'s own-side balances.
    /// Returns the record when anything moved.
    pub fn rebalance_router(&mut self, router: NodeId) -> Option<RebalanceRecord> {
        let mode = self.config.rebalance.map(|r| r.mode).unwrap_or_default();
        let own: Vec<(usize, usize)> = self
            .topo
            .neighbors(router)
            .iter()
            .map(|&(_, c)| (c, self.channels[c].dir_from(router)))
            .collect();
        let targets: Vec<Amount> = match mode {
            RebalanceMode::Equalize => {
                if own.len() < 2 {
                    return None;
                }
                let total: Amount = own.iter().map(|&(c, d)| self.channels[c].balance[d]).sum();
                let n = own.len() as Amount;
                (0..n).map(|i| total / n + Amount::from(i < total % n)).collect()
            }
            RebalanceMode::Replenish => own
                .iter()
                .map(|&(c, d)| self.channels[c].balance[d].max(self.initial_capacity[c] / 2))
                .collect(),
        };
        let mut moved = 0;
        for (&(c, d), &t) in own.iter().zip(&targets) {
            let ch = &mut self.channels[c];
            let delta = t - ch.balance[d];
            ch.balance[d] = t;
            ch.capacity += delta;
            moved += delta.abs();
        }
        if moved == 0 {
            return None;
        }
        for &(c, d) in &own {
            self.service_queue(c, d);
        }
        let rec = RebalanceRecord { time: self.now, router, moved };
        self.log_line(format_args!("rebalance node={router} moved={moved}"));
        self.rebalances.push(rec.clone());
        Some(rec)
    }

    fn snapshot(&mut self) {
        let arrived = self.txns.iter().take_while(|t| t.spec.arrival <= self.now).count() as u64;
        self.series.push(SeriesPoint {
            time: self.now,
            arrived,
            completed: self.completed,
            delivered: self.delivered,
            onchain: self.rebalances.len() as u64,
        });
        if let Some(iv) = self.config.snapshot_interval {
            self.queue.push(self.now + iv, SimEvent::Snapshot);
        }
    }

    pub fn conserved(&self) -> bool {
        self.channels.iter().all(ChannelState::conserved)
    }

    fn process(&mut self, event: SimEvent) {
        match event {
            SimEvent::Arrival(i) => {
                let t = self.stream[i];
                self.log_line(format_args!("arrive txn={i} src={} dst={} amt={}", t.src, t.dst, t.amount));
                self.queue.push(t.deadline, SimEvent::Deadline(i as TxnId));
                if i + 1 < self.stream.len() {
                    self.queue.push(self.stream[i + 1].arrival, SimEvent::Arrival(i + 1));
                }
                self.notices.push_back(Notice::Transaction(i as TxnId));
            }
            SimEvent::Deadline(id) => self.deadline(id),
            SimEvent::UnitAt { unit, hop } => self.unit_at(unit, hop),
            SimEvent::AckAt { unit, hop } => self.ack_at(unit, hop),
            SimEvent::FailAt { unit, hop } => self.fail_at(unit, hop),
            SimEvent::Timer(tok) => self.notices.push_back(Notice::Timer(tok)),
            SimEvent::Rebalance(node) => {
                self.rebalance_router(node);
            }
            SimEvent::Snapshot => self.snapshot(),
        }
    }
}

/// End-host behavior plugged into the engine.
pub trait Scheme {
    fn name(&self) -> &str;
    /// Whether routers hold units that lack funds instead of failing them.
    fn queues_at_routers(&self) -> bool;
    fn on_start(&mut self, _core: &mut Core) {}
    fn on_transaction(&mut self, core: &mut Core, txn: TxnId);
    fn on_ack(&mut self, _core: &mut Core, _out: &UnitOutcome) {}
    fn on_fail(&mut self, _core: &mut Core, _out: &UnitOutcome) {}
    fn on_timer(&mut self, _core: &mut Core, _token: u64) {}
    fn on_cancel(&mut self, _core: &mut Core, _txn: TxnId) {}
}

/// A simulation run: the network core plus one scheme.
pub struct Sim {
    core: Core,
    scheme: Box<dyn Scheme>,
    started: bool,
}

impl Sim {
    pub fn new(topo: Topology, stream: Vec<Transaction>, config: SimConfig, scheme: Box<dyn Scheme>) -> Sim {
        let queueing = scheme.queues_at_routers();
        Sim { core: Core::new(topo, stream, config, queueing), scheme, started: false }
    }

    pub fn core(&self) -> &Core {
        &self.core
    }

    pub fn core_mut(&mut self) -> &mut Core {
        &mut self.core
    }

    pub fn schedule(&mut self, event: SimEvent, time: Time) {
        let t = time.max(self.core.now);
        self.core.queue.push(t, event);
    }

    fn dispatch(&mut self) {
        while let Some(n) = self.core.notices.pop_front() {
            match n {
                Notice::Transaction(id) => self.scheme.on_transaction(&mut self.core, id),
                Notice::Ack(o) => self.scheme.on_ack(&mut self.core, &o),
                Notice::Fail(o) => self.scheme.on_fail(&mut self.core, &o),
                Notice::Timer(t) => self.scheme.on_timer(&mut self.core, t),
                Notice::Cancelled(id) => self.scheme.on_cancel(&mut self.core, id),
            }
        }
    }

    /// Processes every event with time ≤ `t_end`.
    pub fn run_until(&mut self, t_end: Time) {
        if !self.started {
            self.started = true;
            self.scheme.on_start(&mut self.core);
            self.dispatch();
        }
        while let Some(t) = self.core.queue.peek_time() {
            if t > t_end {
                break;
            }
            let (time, ev) = self.core.queue.pop().unwrap();
            self.core.now = time;
            self.core.events += 1;
            self.core.process(ev);
            self.dispatch();
            if self.core.config.audit && !self.core.conserved() {
                self.core.audit_failures += 1;
            }
        }
        self.core.now = self.core.now.max(t_end);
    }

    pub fn report(&self) -> SimReport {
        let c = &self.core;
        SimReport {
            scheme: self.scheme.name().to_string(),
            end_time: c.now,
            events: c.events,
            transactions: c
                .txns
                .iter()
                .map(|t| TxnOutcome {
                    id: t.spec.id,
                    src: t.spec.src,
                    dst: t.spec.dst,
                    amount: t.spec.amount,
                    arrival: t.spec.arrival,
                    deadline: t.spec.deadline,
                    delivered: t.delivered,
                    completed_at: match t.status {
                        TxnStatus::Completed(at) => Some(at),
                        _ => None,
                    },
                })
                .collect(),
            rebalances: c.rebalances.clone(),
            series: c.series.clone(),
            audit_failures: c.audit_failures,
            log: c.log.clone(),
        }
    }

    /// Runs to `t_end` and returns the report.
    pub fn run(mut self, t_end: Time) -> SimReport {
        self.run_until(t_end);
        self.report()
    }
}

impl SimReport {
    pub fn completed(&self) -> usize {
        self.transactions.iter().filter(|t| t.completed_at.is_some()).count()
    }

    pub fn end_secs(&self) -> f64 {
        to_secs(self.end_time)
    }
}
