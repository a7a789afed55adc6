use super::{RouteCache, SchemeParams};
use crate::graph::{NodeId, PathKind, Topology};
use crate::sim::{packetize, tokens, Amount, Core, FailReason, Route, Scheme, SendOutcome, TxnId, UnitOutcome};
use std::collections::HashMap;
use std::rc::Rc;

#[derive(Debug, Clone, PartialEq)]
pub struct SpiderParams {
    pub mtu: Amount,
    pub k: usize,
    pub path_kind: PathKind,
    /// Additive increase numerator, tokens.
    pub alpha: f64,
    /// Decrease per marked unit, tokens.
    pub beta: f64,
    /// Window floor, tokens.
    pub w_min: f64,
    pub w_init: f64,
}

impl From<&SchemeParams> for SpiderParams {
    fn from(p: &SchemeParams) -> Self {
        SpiderParams {
            mtu: p.mtu_amount(),
            k: p.k,
            path_kind: p.path_kind,
            alpha: p.alpha,
            beta: p.beta,
            w_min: p.mtu,
            w_init: p.initial_window.max(p.mtu),
        }
    }
}

impl Default for SpiderParams {
    fn default() -> Self {
        SpiderParams::from(&SchemeParams::default())
    }
}

/// Per-path windows and in-flight amounts of one sender/receiver flow.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub windows: Vec<f64>,
    pub inflight: Vec<Amount>,
}

impl WindowSet {
    pub fn new(k: usize, w_init: f64) -> Self {
        WindowSet { windows: vec![w_init; k], inflight: vec![0; k] }
    }

    pub fn admits(&self, p: usize, amount: Amount) -> bool {
        self.inflight[p] + amount <= tokens(self.windows[p])
    }
}

/// Window reaction to one ack on path `p`: marked (or cancelled) units shrink
/// the window by `beta` down to `w_min`; others grow it by `alpha / Σw`.
pub fn spider_window_update(windows: &mut [f64], p: usize, marked: bool, alpha: f64, beta: f64, w_min: f64) {
    if marked {
        windows[p] = (windows[p] - beta).max(w_min);
    } else {
        let total: f64 = windows.iter().sum();
        windows[p] += alpha / total;
    }
}

struct Flow {
    routes: Rc<Vec<Rc<Route>>>,
    win: WindowSet,
    /// Unsent units, newest on top.
    pending: Vec<(TxnId, Amount)>,
    next: usize,
}

pub struct Spider {
    params: SpiderParams,
    cache: RouteCache,
    flows: HashMap<(NodeId, NodeId), Flow>,
}

impl Spider {
    pub fn new(params: SpiderParams, topo: Topology) -> Self {
        let cache = RouteCache::new(params.path_kind, params.k, topo);
        Spider { params, cache, flows: HashMap::new() }
    }

    pub fn windows(&self, src: NodeId, dst: NodeId) -> Option<&WindowSet> {
        self.flows.get(&(src, dst)).map(|f| &f.win)
    }

    fn flow(&mut self, src: NodeId, dst: NodeId) -> &mut Flow {
        let (cache, w_init) = (&mut self.cache, self.params.w_init);
        self.flows.entry((src, dst)).or_insert_with(|| {
            let routes = cache.get(src, dst);
            let k = routes.len();
            Flow { routes, win: WindowSet::new(k, w_init), pending: Vec::new(), next: 0 }
        })
    }

    /// Sends pending units, newest first, while some window has room.
    fn drain(&mut self, core: &mut Core, key: (NodeId, NodeId)) {
        let Some(flow) = self.flows.get_mut(&key) else { return };
        let k = flow.routes.len();
        while let Some(&(txn, amount)) = flow.pending.last() {
            if !core.is_pending(txn) {
                flow.pending.pop();
                continue;
            }
            let Some(p) = (0..k).map(|i| (flow.next + i) % k).find(|&p| flow.win.admits(p, amount)) else {
                break;
            };
            flow.pending.pop();
            match core.send_unit(txn, &flow.routes[p], amount, p as u32) {
                SendOutcome::Sent(_) | SendOutcome::Queued(_) => {
                    flow.win.inflight[p] += amount;
                    flow.next = (p + 1) % k;
                }
                SendOutcome::Rejected { .. } => {
                    flow.pending.push((txn, amount));
                    let SpiderParams { alpha, beta, w_min, .. } = self.params;
                    spider_window_update(&mut flow.win.windows, p, true, alpha, beta, w_min);
                    break;
                }
            }
        }
    }

    fn on_return(&mut self, core: &mut Core, out: &UnitOutcome, marked: bool) {
        let key = (out.route.source(), out.route.target());
        let SpiderParams { alpha, beta, w_min, .. } = self.params;
        let Some(flow) = self.flows.get_mut(&key) else { return };
        let p = out.tag as usize;
        flow.win.inflight[p] -= out.amount;
        spider_window_update(&mut flow.win.windows, p, marked, alpha, beta, w_min);
        if matches!(out.reason, Some(FailReason::QueueFull)) && core.is_pending(out.txn) {
            flow.pending.push((out.txn, out.amount));
        }
        self.drain(core, key);
    }
}

impl Scheme for Spider {
    fn name(&self) -> &str {
        "spider"
    }

    fn queues_at_routers(&self) -> bool {
        true
    }

    fn on_transaction(&mut self, core: &mut Core, txn: TxnId) {
        let t = *core.transaction(txn);
        let mtu = self.params.mtu;
        let flow = self.flow(t.src, t.dst);
        if flow.routes.is_empty() {
            core.fail_transaction(txn);
            return;
        }
        flow.pending.extend(packetize(t.amount, mtu).into_iter().rev().map(|a| (txn, a)));
        self.drain(core, (t.src, t.dst));
    }

    fn on_ack(&mut self, core: &mut Core, out: &UnitOutcome) {
        self.on_return(core, out, out.marked);
    }

    fn on_fail(&mut self, core: &mut Core, out: &UnitOutcome) {
        self.on_return(core, out, true);
    }

    fn on_cancel(&mut self, core: &mut Core, txn: TxnId) {
        let t = *core.transaction(txn);
        if let Some(flow) = self.flows.get_mut(&(t.src, t.dst)) {
            flow.pending.retain(|&(id, _)| id != txn);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unmarked_ack_increases_by_alpha_over_total() {
        let mut w = vec![10.0, 10.0];
        spider_window_update(&mut w, 0, false, 10.0, 0.1, 1.0);
        assert_eq!(w, vec![10.5, 10.0]);
    }

    #[test]
    fn marked_ack_decreases_by_beta() {
        let mut w = vec![10.0, 10.0];
        spider_window_update(&mut w, 0, true, 10.0, 0.1, 1.0);
        assert_eq!(w[0], 9.9);
    }

    #[test]
    fn window_floor() {
        let mut w = vec![1.05];
        spider_window_update(&mut w, 0, true, 10.0, 0.1, 1.0);
        assert_eq!(w[0], 1.0);
    }

    #[test]
    fn admission() {
        let mut ws = WindowSet::new(2, 2.0);
        ws.inflight = vec![2_000, 1_000];
        assert!(!ws.admits(0, 1_000));
        assert!(ws.admits(1, 1_000));
        ws.inflight[1] = 2_000;
        assert!(!ws.admits(1, 1));
    }
}
