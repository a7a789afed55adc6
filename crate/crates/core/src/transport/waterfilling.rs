use super::{rtt, RouteCache};
use crate::graph::{NodeId, PathKind, Topology};
use crate::sim::{packetize, Amount, Core, FailReason, Route, Scheme, SendOutcome, TxnId, UnitOutcome};
use std::collections::HashMap;
use std::rc::Rc;

/// Index of the path with the largest positive available balance; ties go to
/// the lowest index. `None` means pause until the next probe.
pub fn waterfilling_select(available: &[Amount]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (p, &a) in available.iter().enumerate() {
        if a > 0 && best.map_or(true, |b| a > available[b]) {
            best = Some(p);
        }
    }
    best
}

struct Flow {
    routes: Rc<Vec<Rc<Route>>>,
    /// Bottleneck seen by the last returned probe; `None` before the first.
    bottleneck: Vec<Option<Amount>>,
    /// Snapshot carried by the probe in flight.
    probing: Vec<Option<Amount>>,
    inflight: Vec<Amount>,
    pending: Vec<(TxnId, Amount)>,
}

pub struct Waterfilling {
    mtu: Amount,
    cache: RouteCache,
    flows: Vec<Flow>,
    index: HashMap<(NodeId, NodeId), usize>,
}

const MAX_PATHS: u64 = 64;

impl Waterfilling {
    pub fn new(mtu: Amount, k: usize, kind: PathKind, topo: Topology) -> Self {
        Waterfilling { mtu, cache: RouteCache::new(kind, k, topo), flows: Vec::new(), index: HashMap::new() }
    }

    fn flow_id(&mut self, src: NodeId, dst: NodeId) -> usize {
        if let Some(&i) = self.index.get(&(src, dst)) {
            return i;
        }
        let routes = self.cache.get(src, dst);
        let k = routes.len();
        self.flows.push(Flow {
            routes,
            bottleneck: vec![None; k],
            probing: vec![None; k],
            inflight: vec![0; k],
            pending: Vec::new(),
        });
        self.index.insert((src, dst), self.flows.len() - 1);
        self.flows.len() - 1
    }

    fn probe(&mut self, core: &mut Core, f: usize, p: usize) {
        let flow = &mut self.flows[f];
        if flow.probing[p].is_some() {
            return;
        }
        let route = &flow.routes[p];
        flow.probing[p] = Some(core.bottleneck(route));
        let at = core.now() + rtt(core, route);
        core.set_timer(at, f as u64 * MAX_PATHS + p as u64);
    }

    fn drain(&mut self, core: &mut Core, f: usize) {
        let flow = &mut self.flows[f];
        while let Some(&(txn, amount)) = flow.pending.last() {
            if !core.is_pending(txn) {
                flow.pending.pop();
                continue;
            }
            let avail: Vec<Amount> = flow
                .bottleneck
                .iter()
                .zip(&flow.inflight)
                .map(|(b, &i)| b.map_or(0, |b| b - i))
                .collect();
            let Some(p) = waterfilling_select(&avail) else { break };
            flow.pending.pop();
            match core.send_unit(txn, &flow.routes[p], amount, p as u32) {
                SendOutcome::Sent(_) | SendOutcome::Queued(_) => flow.inflight[p] += amount,
                SendOutcome::Rejected { .. } => {
                    flow.pending.push((txn, amount));
                    break;
                }
            }
        }
    }

    fn on_return(&mut self, core: &mut Core, out: &UnitOutcome) {
        let Some(&f) = self.index.get(&(out.route.source(), out.route.target())) else { return };
        let flow = &mut self.flows[f];
        flow.inflight[out.tag as usize] -= out.amount;
        if matches!(out.reason, Some(FailReason::QueueFull)) && core.is_pending(out.txn) {
            flow.pending.push((out.txn, out.amount));
        }
        self.drain(core, f);
    }
}

impl Scheme for Waterfilling {
    fn name(&self) -> &str {
        "waterfilling"
    }

    fn queues_at_routers(&self) -> bool {
        true
    }

    fn on_transaction(&mut self, core: &mut Core, txn: TxnId) {
        let t = *core.transaction(txn);
        let f = self.flow_id(t.src, t.dst);
        let k = self.flows[f].routes.len();
        if k == 0 {
            core.fail_transaction(txn);
            return;
        }
        let units = packetize(t.amount, self.mtu);
        self.flows[f].pending.extend(units.into_iter().rev().map(|a| (txn, a)));
        for p in 0..k {
            self.probe(core, f, p);
        }
        self.drain(core, f);
    }

    fn on_timer(&mut self, core: &mut Core, token: u64) {
        let (f, p) = ((token / MAX_PATHS) as usize, (token % MAX_PATHS) as usize);
        let flow = &mut self.flows[f];
        flow.bottleneck[p] = flow.probing[p].take();
        let busy = !flow.pending.is_empty() || flow.inflight.iter().any(|&i| i > 0);
        if busy {
            self.probe(core, f, p);
        }
        self.drain(core, f);
    }

    fn on_ack(&mut self, core: &mut Core, out: &UnitOutcome) {
        self.on_return(core, out);
    }

    fn on_fail(&mut self, core: &mut Core, out: &UnitOutcome) {
        self.on_return(core, out);
    }

    fn on_cancel(&mut self, core: &mut Core, txn: TxnId) {
        let t = *core.transaction(txn);
        if let Some(&f) = self.index.get(&(t.src, t.dst)) {
            self.flows[f].pending.retain(|&(id, _)| id != txn);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn selects_highest_available() {
        assert_eq!(waterfilling_select(&[5, 3, 0, 0]), Some(0));
        assert_eq!(waterfilling_select(&[0, -2]), None);
        assert_eq!(waterfilling_select(&[4, 4]), Some(0));
        assert_eq!(waterfilling_select(&[1, 4, 4]), Some(1));
    }
}
