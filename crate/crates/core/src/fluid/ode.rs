use super::FluidError;
use super::primal_dual::project_onto_demand_set;
use crate::graph::{DemandMatrix, NodeId, Path};
use crate::lp::{LpInstance, LpSolution, RowTag, Sense, Variable};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Two groups of end-hosts joined by `k` parallel router-to-router channels.
/// Every sender/receiver pair may use every channel; host access links are
/// ideal, so only the parallel channels carry queues and marks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParallelNetwork {
    pub capacities: Vec<f64>,
    pub delta: f64,
    pub left: BTreeSet<NodeId>,
    pub demand: DemandMatrix,
}

impl ParallelNetwork {
    pub fn new(capacities: Vec<f64>, delta: f64, left: BTreeSet<NodeId>, demand: DemandMatrix) -> Result<Self, FluidError> {
        if capacities.is_empty() || capacities.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(FluidError::InvalidArgument("parallel channel capacities must be positive".into()));
        }
        if !(delta > 0.0) {
            return Err(FluidError::InvalidArgument("delta must be positive".into()));
        }
        for (i, j) in demand.pairs() {
            if left.contains(&i) == left.contains(&j) {
                return Err(FluidError::InvalidArgument(format!("demand {i}>{j} does not cross the parallel channels")));
            }
        }
        Ok(ParallelNetwork { capacities, delta, left, demand })
    }

    pub fn k(&self) -> usize {
        self.capacities.len()
    }

    fn router_base(&self) -> NodeId {
        self.demand.nodes().iter().chain(&self.left).max().map_or(0, |m| m + 1)
    }

    /// Router pair of channel `i`, left router first.
    pub fn routers(&self, i: usize) -> (NodeId, NodeId) {
        let base = self.router_base() + 2 * i as NodeId;
        (base, base + 1)
    }

    /// Paths in state order: every demand pair in order, then every channel.
    pub fn paths(&self) -> Vec<(usize, usize, bool, Path)> {
        let mut out = Vec::new();
        for (k, (i, j)) in self.demand.pairs().enumerate() {
            let fwd = self.left.contains(&i);
            for c in 0..self.k() {
                let (r, rp) = self.routers(c);
                let nodes = if fwd { vec![i, r, rp, j] } else { vec![i, rp, r, j] };
                out.push((k, c, fwd, Path(nodes)));
            }
        }
        out
    }

    /// Balanced throughput LP restricted to the parallel channels.
    pub fn balanced_lp(&self) -> LpInstance {
        let mut lp = LpInstance::new(self.delta, 0.0);
        let paths = self.paths();
        for (_, _, _, p) in &paths {
            lp.add_variable(Variable::Path(p.clone()), 1.0);
        }
        for (k, ((i, j), d)) in self.demand.iter().enumerate() {
            if d.is_finite() {
                let coefs = paths.iter().enumerate().filter(|(_, q)| q.0 == k).map(|(v, _)| (v, 1.0)).collect();
                lp.add_row(RowTag::Demand, format!("{i}>{j}"), coefs, Sense::Le, d);
            }
        }
        for c in 0..self.k() {
            let (r, rp) = self.routers(c);
            let on: Vec<(usize, bool)> =
                paths.iter().enumerate().filter(|(_, q)| q.1 == c).map(|(v, q)| (v, q.2)).collect();
            lp.add_row(
                RowTag::Capacity,
                format!("{r}-{rp}"),
                on.iter().map(|&(v, _)| (v, 1.0)).collect(),
                Sense::Le,
                self.capacities[c] / self.delta,
            );
            lp.add_row(
                RowTag::Balance,
                format!("{r}-{rp}"),
                on.iter().map(|&(v, f)| (v, if f { 1.0 } else { -1.0 })).collect(),
                Sense::Eq,
                0.0,
            );
        }
        lp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FluidParams {
    /// Queue level above which marking grows, tokens.
    pub q_thresh: f64,
    /// Integral gain on the queue excess.
    pub gain: f64,
    /// Proportional gain on the queue derivative; 0 gives pure integral marking.
    pub damping: f64,
    /// Euler step; `None` means Δ/100.
    pub dt: Option<f64>,
    pub horizon: f64,
    /// Store one snapshot every this many steps.
    pub record_every: usize,
}

impl Default for FluidParams {
    fn default() -> Self {
        FluidParams { q_thresh: 1.0, gain: 0.01, damping: 0.2, dt: None, horizon: 2000.0, record_every: 100 }
    }
}

/// Per-path rates plus per-channel `(forward, backward)` queues and marks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidState {
    pub t: f64,
    pub x: Vec<f64>,
    pub q: Vec<(f64, f64)>,
    pub f: Vec<(f64, f64)>,
}

impl FluidState {
    /// Every path at `rate`, empty queues, no marking.
    pub fn uniform(net: &ParallelNetwork, rate: f64) -> Self {
        FluidState {
            t: 0.0,
            x: vec![rate; net.demand.len() * net.k()],
            q: vec![(0.0, 0.0); net.k()],
            f: vec![(0.0, 0.0); net.k()],
        }
    }

    /// Per-channel `(forward, backward)` arrival rates.
    pub fn channel_rates(&self, net: &ParallelNetwork) -> Vec<(f64, f64)> {
        let mut out = vec![(0.0, 0.0); net.k()];
        for (v, (_, c, fwd, _)) in net.paths().into_iter().enumerate() {
            if fwd {
                out[c].0 += self.x[v];
            } else {
                out[c].1 += self.x[v];
            }
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Trajectory {
    pub snapshots: Vec<FluidState>,
}

impl Trajectory {
    /// Componentwise mean of the snapshots in the last `fraction` of time.
    pub fn tail_average(&self, fraction: f64) -> Option<FluidState> {
        let last = self.snapshots.last()?;
        let from = last.t * (1.0 - fraction.clamp(0.0, 1.0));
        let tail: Vec<&FluidState> = self.snapshots.iter().filter(|s| s.t >= from).collect();
        let n = tail.len() as f64;
        let mut avg = FluidState {
            t: last.t,
            x: vec![0.0; last.x.len()],
            q: vec![(0.0, 0.0); last.q.len()],
            f: vec![(0.0, 0.0); last.f.len()],
        };
        for s in tail {
            for (a, v) in avg.x.iter_mut().zip(&s.x) {
                *a += v / n;
            }
            for (a, v) in avg.q.iter_mut().zip(&s.q) {
                a.0 += v.0 / n;
                a.1 += v.1 / n;
            }
            for (a, v) in avg.f.iter_mut().zip(&s.f) {
                a.0 += v.0 / n;
                a.1 += v.1 / n;
            }
        }
        Some(avg)
    }
}

const QUEUE_EPS: f64 = 1e-12;

/// Forward-Euler integration of the Spider fluid model.
///
/// Marking follows `ḟ = gain·(q − q_thresh) + damping·q̇`, clamped to [0, 1].
pub fn integrate_fluid_spider(
    net: &ParallelNetwork,
    init: &FluidState,
    params: &FluidParams,
) -> Result<Trajectory, FluidError> {
    let k = net.k();
    let paths = net.paths();
    if init.x.len() != paths.len() || init.q.len() != k || init.f.len() != k {
        return Err(FluidError::InvalidArgument("initial state does not match the network".into()));
    }
    if init.x.iter().any(|&v| !(v > 0.0)) {
        return Err(FluidError::InvalidArgument("initial path rates must be positive".into()));
    }
    let dt = params.dt.unwrap_or(net.delta / 100.0);
    if !(dt > 0.0) || !(params.horizon >= 0.0) || params.record_every == 0 {
        return Err(FluidError::InvalidArgument("dt and record_every must be positive".into()));
    }
    let caps: Vec<f64> = net.demand.iter().map(|(_, d)| d).collect();
    let n_pairs = caps.len();
    let mut groups = vec![Vec::new(); n_pairs];
    for (v, p) in paths.iter().enumerate() {
        groups[p.0].push(v);
    }
    let mut s = init.clone();
    for (g, &d) in groups.iter().zip(&caps) {
        let v: Vec<f64> = g.iter().map(|&p| s.x[p]).collect();
        for (&p, r) in g.iter().zip(project_onto_demand_set(&v, d)) {
            s.x[p] = r;
        }
    }
    let steps = (params.horizon / dt).round() as usize;
    let mut out = Trajectory { snapshots: vec![s.clone()] };
    for step in 1..=steps {
        let rates = s.channel_rates(net);
        let mut pair_sum = vec![0.0; n_pairs];
        for (v, p) in paths.iter().enumerate() {
            pair_sum[p.0] += s.x[v];
        }
        let mut next = s.clone();
        next.t = init.t + step as f64 * dt;
        for (v, &(pair, c, fwd, _)) in paths.iter().enumerate() {
            let mark = if fwd { s.f[c].0 } else { s.f[c].1 };
            if dt * mark >= 1.0 {
                return Err(FluidError::StepSizeTooLarge(format!("dt·f = {} at t = {}", dt * mark, s.t)));
            }
            let grow = if pair_sum[pair] > 0.0 { s.x[v] / pair_sum[pair] } else { 0.0 };
            next.x[v] = (s.x[v] + dt * (grow - mark * s.x[v])).max(0.0);
        }
        for c in 0..k {
            let (xf, xb) = rates[c];
            let half = net.capacities[c] / (2.0 * net.delta);
            let (qf, qb) = (s.q[c].0 > QUEUE_EPS, s.q[c].1 > QUEUE_EPS);
            let y = match (qf, qb) {
                (true, true) => half,
                (true, false) => half.min(xb),
                (false, true) => half.min(xf),
                (false, false) => half.min(xf).min(xb),
            };
            let dq = (xf - y, xb - y);
            let dqf = if qf || dq.0 > 0.0 { dq.0 } else { 0.0 };
            let dqb = if qb || dq.1 > 0.0 { dq.1 } else { 0.0 };
            next.q[c] = ((s.q[c].0 + dt * dqf).max(0.0), (s.q[c].1 + dt * dqb).max(0.0));
            let df = (
                params.gain * (s.q[c].0 - params.q_thresh) + params.damping * dqf,
                params.gain * (s.q[c].1 - params.q_thresh) + params.damping * dqb,
            );
            next.f[c] = ((s.f[c].0 + dt * df.0).clamp(0.0, 1.0), (s.f[c].1 + dt * df.1).clamp(0.0, 1.0));
        }
        for (g, &d) in groups.iter().zip(&caps) {
            if d.is_finite() {
                let v: Vec<f64> = g.iter().map(|&p| next.x[p]).collect();
                for (&p, r) in g.iter().zip(project_onto_demand_set(&v, d)) {
                    next.x[p] = r;
                }
            }
        }
        if next.x.iter().chain(next.q.iter().flat_map(|q| [&q.0, &q.1])).any(|v| !v.is_finite()) {
            return Err(FluidError::StepSizeTooLarge(format!("non-finite state at t = {}", next.t)));
        }
        s = next;
        if step % params.record_every == 0 || step == steps {
            out.snapshots.push(s.clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KktReport {
    /// `(f_fwd + f_bwd) / 2` per channel.
    pub lambda: Vec<f64>,
    /// `(f_fwd / 2, f_bwd / 2)` per channel.
    pub mu: Vec<(f64, f64)>,
    /// Max relative gap between `1/Σx` and the mapped path price over used paths.
    pub stationarity: f64,
    /// Max relative capacity slack on channels with a positive λ.
    pub complementary_slackness: f64,
    /// Max `|x_fwd − x_bwd|` relative to `c/Δ`.
    pub balance: f64,
    /// Max relative gap between fluid and LP directional channel rates.
    pub rate_error: f64,
    /// Fluid throughput over LP throughput.
    pub throughput_ratio: f64,
}

/// Residuals of the fluid steady state under the marking-to-price mapping.
pub fn check_kkt_parallel(net: &ParallelNetwork, steady: &FluidState, lp: &LpSolution) -> KktReport {
    let paths = net.paths();
    let rates = steady.channel_rates(net);
    let lambda: Vec<f64> = steady.f.iter().map(|&(a, b)| (a + b) / 2.0).collect();
    let mu: Vec<(f64, f64)> = steady.f.iter().map(|&(a, b)| (a / 2.0, b / 2.0)).collect();
    let mut pair_sum = vec![0.0; net.demand.len()];
    for (v, p) in paths.iter().enumerate() {
        pair_sum[p.0] += steady.x[v];
    }
    let used_floor = 1e-3 * steady.x.iter().fold(0.0f64, |m, &v| m.max(v));
    let mut stationarity: f64 = 0.0;
    for (v, &(pair, c, fwd, _)) in paths.iter().enumerate() {
        if steady.x[v] <= used_floor || pair_sum[pair] <= 0.0 {
            continue;
        }
        let price = lambda[c] + if fwd { mu[c].0 - mu[c].1 } else { mu[c].1 - mu[c].0 };
        let util = 1.0 / pair_sum[pair];
        stationarity = stationarity.max((util - price).abs() / util);
    }
    let mut cs: f64 = 0.0;
    let mut balance: f64 = 0.0;
    let mut rate_error: f64 = 0.0;
    let mut lp_rates = vec![(0.0, 0.0); net.k()];
    for (_, c, fwd, p) in &paths {
        let r = lp.rates.rate(p);
        if *fwd {
            lp_rates[*c].0 += r;
        } else {
            lp_rates[*c].1 += r;
        }
    }
    for c in 0..net.k() {
        let cap = net.capacities[c] / net.delta;
        let (xf, xb) = rates[c];
        if lambda[c] > 1e-9 {
            cs = cs.max((cap - xf - xb).abs() / cap);
        }
        balance = balance.max((xf - xb).abs() / cap);
        for (a, b) in [(xf, lp_rates[c].0), (xb, lp_rates[c].1)] {
            rate_error = rate_error.max((a - b).abs() / b.max(1e-12));
        }
    }
    let fluid_total: f64 = steady.x.iter().sum();
    KktReport {
        lambda,
        mu,
        stationarity,
        complementary_slackness: cs,
        balance,
        rate_error,
        throughput_ratio: fluid_total / lp.throughput().max(1e-12),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lp::solve_lp;

    fn net(caps: Vec<f64>) -> ParallelNetwork {
        let mut d = DemandMatrix::new();
        d.add_uncapped(1, 2).unwrap();
        d.add_uncapped(2, 1).unwrap();
        ParallelNetwork::new(caps, 1.0, BTreeSet::from([1]), d).unwrap()
    }

    #[test]
    fn single_channel_symmetric() {
        let n = net(vec![10.0]);
        let traj = integrate_fluid_spider(&n, &FluidState::uniform(&n, 1.0), &FluidParams::default()).unwrap();
        let ss = traj.tail_average(0.25).unwrap();
        let r = ss.channel_rates(&n)[0];
        assert!((r.0 - 5.0).abs() < 0.25 && (r.1 - 5.0).abs() < 0.25, "{r:?}");
        assert!(traj.snapshots.iter().all(|s| s.q.iter().all(|q| q.0 >= 0.0 && q.1 >= 0.0)));
        assert!(traj.snapshots.iter().all(|s| s.f.iter().all(|f| (0.0..=1.0).contains(&f.0) && (0.0..=1.0).contains(&f.1))));
    }

    #[test]
    fn no_demand_marks_decay() {
        let n = ParallelNetwork::new(vec![10.0], 1.0, BTreeSet::from([1]), DemandMatrix::new()).unwrap();
        let mut init = FluidState::uniform(&n, 1.0);
        init.f[0] = (0.5, 0.5);
        let params = FluidParams { horizon: 200.0, ..FluidParams::default() };
        let last = integrate_fluid_spider(&n, &init, &params).unwrap().snapshots.pop().unwrap();
        assert_eq!(last.f[0], (0.0, 0.0));
        assert_eq!(last.q[0], (0.0, 0.0));
    }

    #[test]
    fn two_channels_reach_kkt_point() {
        let n = net(vec![10.0, 20.0]);
        let traj = integrate_fluid_spider(&n, &FluidState::uniform(&n, 1.0), &FluidParams::default()).unwrap();
        let ss = traj.tail_average(0.25).unwrap();
        let lp = solve_lp(&n.balanced_lp()).unwrap();
        assert!((lp.objective - 30.0).abs() < 1e-9);
        let rep = check_kkt_parallel(&n, &ss, &lp);
        assert!(rep.rate_error < 0.05, "{rep:?}");
        assert!(rep.stationarity < 0.05, "{rep:?}");
    }

    #[test]
    fn rejects_bad_input() {
        let d = DemandMatrix::from_entries([((1, 3), 1.0)]).unwrap();
        assert!(ParallelNetwork::new(vec![1.0], 1.0, BTreeSet::from([1, 3]), d).is_err());
        let n = net(vec![10.0]);
        assert!(integrate_fluid_spider(&n, &FluidState::uniform(&n, 0.0), &FluidParams::default()).is_err());
        let big = FluidParams { dt: Some(50.0), ..FluidParams::default() };
        let mut init = FluidState::uniform(&n, 1.0);
        init.f[0] = (0.5, 0.5);
        assert!(matches!(integrate_fluid_spider(&n, &init, &big), Err(FluidError::StepSizeTooLarge(_))));
    }
}
