use super::{rtt, RouteCache};
use crate::fluid::project_onto_demand_set;
use crate::graph::{NodeId, PathKind, Topology};
use crate::sim::{
    packetize, secs, to_tokens, tokens, Amount, Core, FailReason, RateEstimator, Route, Scheme, SendOutcome, TxnId,
    UnitOutcome,
};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::rc::Rc;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceProbeParams {
    /// Probe and price-update period, seconds.
    pub tau: f64,
    /// Rate step, tokens/s per unit of price gap.
    pub alpha: f64,
    /// Capacity-price step; divided by channel capacity.
    pub eta: f64,
    /// Imbalance-price step; divided by channel capacity.
    pub kappa: f64,
    /// Starting rate per path, tokens/s.
    pub initial_rate: f64,
}

impl Default for PriceProbeParams {
    fn default() -> Self {
        PriceProbeParams { tau: 1.5, alpha: 2.0, eta: 0.2, kappa: 0.2, initial_rate: 1.0 }
    }
}

/// One sender update: `x ← Proj(x + α(1 − z))` onto `{x ≥ 0, Σx ≤ demand}`.
pub fn price_probe_step(rates: &[f64], path_prices: &[f64], alpha: f64, demand: f64) -> Vec<f64> {
    let raw: Vec<f64> = rates.iter().zip(path_prices).map(|(&x, &z)| x + alpha * (1.0 - z)).collect();
    project_onto_demand_set(&raw, demand)
}

struct Flow {
    routes: Rc<Vec<Rc<Route>>>,
    rates: Vec<f64>,
    inflight: Vec<Amount>,
    timer_armed: Vec<bool>,
    pending: Vec<(TxnId, Amount)>,
    demand: RateEstimator,
}

pub struct PriceProbe {
    mtu: Amount,
    params: PriceProbeParams,
    cache: RouteCache,
    flows: Vec<Flow>,
    index: HashMap<(NodeId, NodeId), usize>,
    lambda: Vec<f64>,
    mu: Vec<[f64; 2]>,
}

const PRICE_TICK: u64 = u64::MAX;
const MAX_PATHS: u64 = 64;

impl PriceProbe {
    pub fn new(mtu: Amount, k: usize, kind: PathKind, params: PriceProbeParams, topo: Topology) -> Self {
        let n = topo.channels().len();
        PriceProbe {
            mtu,
            params,
            cache: RouteCache::new(kind, k, topo),
            flows: Vec::new(),
            index: HashMap::new(),
            lambda: vec![0.0; n],
            mu: vec![[0.0; 2]; n],
        }
    }

    pub fn rates(&self, src: NodeId, dst: NodeId) -> Option<&[f64]> {
        self.index.get(&(src, dst)).map(|&f| self.flows[f].rates.as_slice())
    }

    fn min_rate(&self) -> f64 {
        to_tokens(self.mtu) / self.params.tau
    }

    fn path_price(&self, route: &Route) -> f64 {
        route
            .chans
            .iter()
            .zip(&route.dirs)
            .map(|(&c, &d)| 2.0 * self.lambda[c] + self.mu[c][d] - self.mu[c][1 - d])
            .sum()
    }

    fn update_prices(&mut self, core: &Core) {
        let now = core.now();
        for (c, ch) in core.channels().iter().enumerate() {
            let cap = to_tokens(ch.capacity).max(1e-9);
            let (m0, m1) = ch.demand_estimate(now);
            let m = |m: f64, d: usize| if m.is_finite() { m } else { to_tokens(ch.inflight[d]) };
            let need = m(m0, 0) + m(m1, 1);
            self.lambda[c] = (self.lambda[c] + self.params.eta / cap * (need - cap)).max(0.0);
            let w = ch.stats.window;
            let n = [ch.stats.arrival[0].value(now, w), ch.stats.arrival[1].value(now, w)];
            for d in 0..2 {
                self.mu[c][d] = (self.mu[c][d] + self.params.kappa / cap * (n[d] - n[1 - d])).max(0.0);
            }
        }
        let window = 4.0 * self.params.tau;
        let floor = self.min_rate();
        for f in 0..self.flows.len() {
            let prices: Vec<f64> = self.flows[f].routes.iter().map(|r| self.path_price(r)).collect();
            let flow = &mut self.flows[f];
            let demand = flow.demand.value(now, window);
            let next = price_probe_step(&flow.rates, &prices, self.params.alpha, demand.max(floor));
            flow.rates = next.into_iter().map(|x| x.max(floor)).collect();
        }
    }

    fn arm(&mut self, core: &mut Core, f: usize, p: usize, amount: Amount) {
        let flow = &mut self.flows[f];
        if flow.timer_armed[p] {
            return;
        }
        flow.timer_armed[p] = true;
        let gap = secs(to_tokens(amount) / flow.rates[p]);
        core.set_timer(core.now() + gap, f as u64 * MAX_PATHS + p as u64);
    }

    fn flow_id(&mut self, src: NodeId, dst: NodeId) -> usize {
        if let Some(&f) = self.index.get(&(src, dst)) {
            return f;
        }
        let routes = self.cache.get(src, dst);
        let k = routes.len();
        self.flows.push(Flow {
            routes,
            rates: vec![self.params.initial_rate.max(self.min_rate()); k],
            inflight: vec![0; k],
            timer_armed: vec![false; k],
            pending: Vec::new(),
            demand: RateEstimator::default(),
        });
        self.index.insert((src, dst), self.flows.len() - 1);
        self.flows.len() - 1
    }

    /// Sends one unit on path `p` if its window allows, then re-arms pacing.
    fn pace(&mut self, core: &mut Core, f: usize, p: usize) {
        let flow = &mut self.flows[f];
        while let Some(&(txn, _)) = flow.pending.last() {
            if core.is_pending(txn) {
                break;
            }
            flow.pending.pop();
        }
        let Some(&(txn, amount)) = flow.pending.last() else { return };
        let route = Rc::clone(&flow.routes[p]);
        let window = tokens(flow.rates[p] * crate::sim::to_secs(rtt(core, &route))).max(self.mtu);
        if flow.inflight[p] + amount <= window {
            flow.pending.pop();
            match core.send_unit(txn, &route, amount, p as u32) {
                SendOutcome::Sent(_) | SendOutcome::Queued(_) => flow.inflight[p] += amount,
                SendOutcome::Rejected { .. } => flow.pending.push((txn, amount)),
            }
        }
        if !self.flows[f].pending.is_empty() {
            self.arm(core, f, p, amount);
        }
    }
}

impl Scheme for PriceProbe {
    fn name(&self) -> &str {
        "priceprobe"
    }

    fn queues_at_routers(&self) -> bool {
        true
    }

    fn on_start(&mut self, core: &mut Core) {
        core.set_timer(core.now() + secs(self.params.tau), PRICE_TICK);
    }

    fn on_transaction(&mut self, core: &mut Core, txn: TxnId) {
        let t = *core.transaction(txn);
        let f = self.flow_id(t.src, t.dst);
        let k = self.flows[f].routes.len();
        if k == 0 {
            core.fail_transaction(txn);
            return;
        }
        let window = 4.0 * self.params.tau;
        let flow = &mut self.flows[f];
        flow.demand.record(core.now(), to_tokens(t.amount), window);
        flow.pending.extend(packetize(t.amount, self.mtu).into_iter().rev().map(|a| (txn, a)));
        for p in 0..k {
            if !self.flows[f].timer_armed[p] {
                self.pace(core, f, p);
            }
        }
    }

    fn on_timer(&mut self, core: &mut Core, token: u64) {
        if token == PRICE_TICK {
            self.update_prices(core);
            core.set_timer(core.now() + secs(self.params.tau), PRICE_TICK);
            return;
        }
        let (f, p) = ((token / MAX_PATHS) as usize, (token % MAX_PATHS) as usize);
        self.flows[f].timer_armed[p] = false;
        self.pace(core, f, p);
    }

    fn on_ack(&mut self, _core: &mut Core, out: &UnitOutcome) {
        if let Some(&f) = self.index.get(&(out.route.source(), out.route.target())) {
            self.flows[f].inflight[out.tag as usize] -= out.amount;
        }
    }

    fn on_fail(&mut self, core: &mut Core, out: &UnitOutcome) {
        let Some(&f) = self.index.get(&(out.route.source(), out.route.target())) else { return };
        let flow = &mut self.flows[f];
        flow.inflight[out.tag as usize] -= out.amount;
        if matches!(out.reason, Some(FailReason::QueueFull)) && core.is_pending(out.txn) {
            flow.pending.push((out.txn, out.amount));
            self.arm(core, f, out.tag as usize, out.amount);
        }
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
    fn fixed_point_when_price_equals_marginal_utility() {
        assert_eq!(price_probe_step(&[3.0, 1.0], &[1.0, 1.0], 0.2, f64::INFINITY), vec![3.0, 1.0]);
    }

    #[test]
    fn free_path_grows_by_alpha() {
        let x = price_probe_step(&[3.0], &[0.0], 0.2, f64::INFINITY);
        assert!((x[0] - 3.2).abs() < 1e-12);
    }

    #[test]
    fn projection_caps_at_demand() {
        let x = price_probe_step(&[3.0, 3.0], &[0.0, 0.0], 1.0, 4.0);
        assert!((x.iter().sum::<f64>() - 4.0).abs() < 1e-12);
    }
}
