use crate::graph::{shortest_path, NodeId, Path, Topology};
use crate::sim::{Amount, Core, Route, Scheme, SendOutcome, Time, TxnId, UnitOutcome};
use std::collections::{HashMap, VecDeque};
use std::rc::Rc;

/// Lexicographically smallest shortest path avoiding `banned` channels.
fn shortest_avoiding(topo: &Topology, src: NodeId, dst: NodeId, banned: &dyn Fn(usize) -> bool) -> Option<Path> {
    let mut dist: HashMap<NodeId, usize> = HashMap::from([(dst, 0)]);
    let mut queue = VecDeque::from([dst]);
    while let Some(n) = queue.pop_front() {
        let d = dist[&n];
        for &(m, c) in topo.neighbors(n) {
            if !banned(c) && !dist.contains_key(&m) {
                dist.insert(m, d + 1);
                queue.push_back(m);
            }
        }
    }
    let mut here = src;
    let mut nodes = vec![src];
    let mut d = *dist.get(&src)?;
    while d > 0 {
        here = topo
            .neighbors(here)
            .iter()
            .find(|&&(m, c)| !banned(c) && dist.get(&m) == Some(&(d - 1)))
            .map(|&(m, _)| m)?;
        nodes.push(here);
        d -= 1;
    }
    (nodes.len() >= 2).then_some(Path(nodes))
}

/// Whole transactions on the single shortest path; no retries.
pub struct ShortestPath {
    topo: Topology,
    routes: HashMap<(NodeId, NodeId), Option<Rc<Route>>>,
}

impl ShortestPath {
    pub fn new(topo: Topology) -> Self {
        ShortestPath { topo, routes: HashMap::new() }
    }
}

impl Scheme for ShortestPath {
    fn name(&self) -> &str {
        "shortest"
    }

    fn queues_at_routers(&self) -> bool {
        false
    }

    fn on_transaction(&mut self, core: &mut Core, txn: TxnId) {
        let t = *core.transaction(txn);
        let topo = &self.topo;
        let route = self
            .routes
            .entry((t.src, t.dst))
            .or_insert_with(|| {
                let p = shortest_path(topo, t.src, t.dst).ok()?;
                Route::new(topo, &p).ok().map(Rc::new)
            })
            .clone();
        match route {
            Some(r) => {
                if let SendOutcome::Rejected { .. } = core.send_unit(txn, &r, t.amount, 0) {
                    core.fail_transaction(txn);
                }
            }
            None => core.fail_transaction(txn),
        }
    }

    fn on_fail(&mut self, core: &mut Core, out: &UnitOutcome) {
        core.fail_transaction(out.txn);
    }
}

/// The `k` highest-degree nodes, ties to the lower id.
pub fn select_landmarks(topo: &Topology, k: usize) -> Vec<NodeId> {
    let mut nodes: Vec<NodeId> = topo.nodes().to_vec();
    nodes.sort_by_key(|&n| (std::cmp::Reverse(topo.degree(n)), n));
    nodes.truncate(k);
    nodes
}

/// Shortest path to the landmark joined with the landmark's shortest path to
/// the destination, with any loop cut out.
pub fn landmark_route(topo: &Topology, src: NodeId, dst: NodeId, landmark: NodeId) -> Option<Path> {
    let mut nodes = if landmark == src {
        vec![src]
    } else {
        shortest_path(topo, src, landmark).ok()?.0
    };
    if landmark != dst {
        nodes.extend(shortest_path(topo, landmark, dst).ok()?.0.into_iter().skip(1));
    }
    let mut out: Vec<NodeId> = Vec::with_capacity(nodes.len());
    for n in nodes {
        if let Some(pos) = out.iter().position(|&m| m == n) {
            out.truncate(pos);
        }
        out.push(n);
    }
    (out.len() >= 2).then_some(Path(out))
}

/// Greedy fill of `amount` over paths in order, each up to its bottleneck.
/// `None` when the bottlenecks cannot cover the amount.
pub fn landmark_partition(amount: Amount, bottlenecks: &[Amount]) -> Option<Vec<Amount>> {
    let mut left = amount;
    let parts: Vec<Amount> = bottlenecks
        .iter()
        .map(|&b| {
            let take = b.max(0).min(left);
            left -= take;
            take
        })
        .collect();
    (left == 0).then_some(parts)
}

/// Landmark routing: probe each landmark path, split atomically by the probed
/// bottlenecks, fail if they cannot carry the amount.
pub struct Landmark {
    topo: Topology,
    landmarks: Vec<NodeId>,
    routes: HashMap<(NodeId, NodeId), Rc<Vec<Rc<Route>>>>,
}

impl Landmark {
    pub fn new(k: usize, topo: Topology) -> Self {
        let landmarks = select_landmarks(&topo, k);
        Landmark { topo, landmarks, routes: HashMap::new() }
    }

    fn routes(&mut self, src: NodeId, dst: NodeId) -> Rc<Vec<Rc<Route>>> {
        let (topo, landmarks) = (&self.topo, &self.landmarks);
        self.routes
            .entry((src, dst))
            .or_insert_with(|| {
                let mut paths: Vec<Path> = Vec::new();
                for &l in landmarks {
                    if let Some(p) = landmark_route(topo, src, dst, l) {
                        if !paths.contains(&p) {
                            paths.push(p);
                        }
                    }
                }
                Rc::new(paths.iter().filter_map(|p| Route::new(topo, p).ok()).map(Rc::new).collect())
            })
            .clone()
    }
}

impl Scheme for Landmark {
    fn name(&self) -> &str {
        "landmark"
    }

    fn queues_at_routers(&self) -> bool {
        false
    }

    fn on_transaction(&mut self, core: &mut Core, txn: TxnId) {
        let t = *core.transaction(txn);
        let routes = self.routes(t.src, t.dst);
        let bottlenecks: Vec<Amount> = routes.iter().map(|r| core.bottleneck(r)).collect();
        let Some(parts) = landmark_partition(t.amount, &bottlenecks) else {
            core.fail_transaction(txn);
            return;
        };
        for (p, &amt) in parts.iter().enumerate() {
            if amt == 0 {
                continue;
            }
            if let SendOutcome::Rejected { .. } = core.send_unit(txn, &routes[p], amt, p as u32) {
                core.fail_transaction(txn);
                return;
            }
        }
    }

    fn on_fail(&mut self, core: &mut Core, out: &UnitOutcome) {
        core.fail_transaction(out.txn);
    }
}

/// Atomic shortest-path sends that blacklist a failing channel for a fixed
/// time and retry until the destination is unreachable or the deadline passes.
pub struct Lnd {
    blacklist_for: Time,
    blacklist: HashMap<(NodeId, usize), Time>,
}

impl Lnd {
    pub fn new(blacklist_for: Time) -> Self {
        Lnd { blacklist_for, blacklist: HashMap::new() }
    }

    pub fn is_blacklisted(&self, sender: NodeId, chan: usize, now: Time) -> bool {
        self.blacklist.get(&(sender, chan)).is_some_and(|&until| now < until)
    }

    pub fn ban(&mut self, sender: NodeId, chan: usize, now: Time) {
        self.blacklist.insert((sender, chan), now + self.blacklist_for);
    }

    /// Current route for `sender` given its blacklist.
    pub fn route(&self, topo: &Topology, sender: NodeId, dst: NodeId, now: Time) -> Option<Path> {
        shortest_avoiding(topo, sender, dst, &|c| self.is_blacklisted(sender, c, now))
    }

    fn attempt(&mut self, core: &mut Core, txn: TxnId) {
        let t = *core.transaction(txn);
        loop {
            if !core.is_pending(txn) || core.now() >= t.deadline {
                return;
            }
            let Some(path) = self.route(core.topology(), t.src, t.dst, core.now()) else {
                core.fail_transaction(txn);
                return;
            };
            let route = Rc::new(Route::new(core.topology(), &path).expect("route over existing channels"));
            match core.send_unit(txn, &route, t.amount, 0) {
                SendOutcome::Rejected { channel } => self.ban(t.src, channel, core.now()),
                _ => return,
            }
        }
    }
}

impl Scheme for Lnd {
    fn name(&self) -> &str {
        "lnd"
    }

    fn queues_at_routers(&self) -> bool {
        false
    }

    fn on_transaction(&mut self, core: &mut Core, txn: TxnId) {
        self.attempt(core, txn);
    }

    fn on_fail(&mut self, core: &mut Core, out: &UnitOutcome) {
        let sender = out.route.source();
        match out.failed_channel {
            Some(c) => {
                self.ban(sender, c, core.now());
                self.attempt(core, out.txn);
            }
            None => core.fail_transaction(out.txn),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Channel;
    use crate::sim::secs;

    fn square() -> Topology {
        // 1-2-4 and 1-3-4
        Topology::from_channels([
            Channel::new(1, 2, 10.0, 0.03),
            Channel::new(2, 4, 10.0, 0.03),
            Channel::new(1, 3, 10.0, 0.03),
            Channel::new(3, 4, 10.0, 0.03),
        ])
        .unwrap()
    }

    #[test]
    fn partition_greedy() {
        assert_eq!(landmark_partition(10, &[6, 6]), Some(vec![6, 4]));
        assert_eq!(landmark_partition(10, &[4, 4]), None);
        assert_eq!(landmark_partition(500, &[6_000, 6_000]), Some(vec![500, 0]));
    }

    #[test]
    fn landmarks_by_degree() {
        let topo = Topology::from_channels([
            Channel::new(1, 2, 1.0, 0.01),
            Channel::new(1, 3, 1.0, 0.01),
            Channel::new(1, 4, 1.0, 0.01),
            Channel::new(2, 3, 1.0, 0.01),
        ])
        .unwrap();
        assert_eq!(select_landmarks(&topo, 2), vec![1, 2]);
        assert_eq!(landmark_route(&topo, 4, 3, 2).unwrap(), Path(vec![4, 1, 2, 3]));
        assert_eq!(landmark_route(&topo, 2, 4, 3).unwrap(), Path(vec![2, 3, 1, 4]));
        assert_eq!(landmark_route(&topo, 4, 2, 1).unwrap(), Path(vec![4, 1, 2]));
    }

    #[test]
    fn lnd_blacklist_reroutes_and_expires() {
        let topo = square();
        let mut lnd = Lnd::new(secs(5.0));
        assert_eq!(lnd.route(&topo, 1, 4, 0).unwrap(), Path(vec![1, 2, 4]));
        let e = topo.channel_between(2, 4).unwrap();
        lnd.ban(1, e, secs(1.0));
        assert_eq!(lnd.route(&topo, 1, 4, secs(1.0)).unwrap(), Path(vec![1, 3, 4]));
        assert_eq!(lnd.route(&topo, 1, 4, secs(5.999_999)).unwrap(), Path(vec![1, 3, 4]));
        assert_eq!(lnd.route(&topo, 1, 4, secs(6.0)).unwrap(), Path(vec![1, 2, 4]));
        lnd.ban(1, topo.channel_between(3, 4).unwrap(), secs(1.0));
        assert!(lnd.route(&topo, 1, 4, secs(2.0)).is_none());
        // Other senders keep their own view.
        assert!(lnd.route(&topo, 2, 4, secs(2.0)).is_some());
    }
}
