use super::build::PathModel;
use super::FluidError;
use crate::graph::{DemandMatrix, FlowAssignment, NodeId, PathSet, Topology};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Euclidean projection onto `{x ≥ 0, Σx ≤ d}`.
pub fn project_onto_demand_set(rates: &[f64], d: f64) -> Vec<f64> {
    let clipped: Vec<f64> = rates.iter().map(|&r| r.max(0.0)).collect();
    let sum: f64 = clipped.iter().sum();
    if !d.is_finite() || sum <= d {
        return clipped;
    }
    let d = d.max(0.0);
    let mut sorted = clipped.clone();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut acc = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        acc += u;
        let t = (acc - d) / (k + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        } else {
            break;
        }
    }
    clipped.iter().map(|&r| (r - theta).max(0.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StepSizes {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    pub kappa: f64,
    /// Multiply η and κ by mean capacity over channel capacity.
    pub scale_by_capacity: bool,
}

impl Default for StepSizes {
    fn default() -> Self {
        StepSizes { alpha: 0.2, beta: 0.2, eta: 0.2, kappa: 0.2, scale_by_capacity: true }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PdConfig {
    pub steps: StepSizes,
    pub max_iters: usize,
    pub tol: f64,
    /// Largest relative constraint violation accepted at convergence.
    pub max_violation: f64,
    /// Cost per unit of on-chain rebalancing; `None` disables rebalancing.
    pub gamma: Option<f64>,
    /// Iterations the stopping condition must hold in a row.
    pub patience: usize,
}

impl Default for PdConfig {
    fn default() -> Self {
        PdConfig { steps: StepSizes::default(), max_iters: 100_000, tol: 1e-5, max_violation: 1e-4, gamma: None, patience: 50 }
    }
}

/// Prices and rebalancing rates, one entry per channel in topology order.
/// Per-direction pairs are `(lower id → higher id, higher → lower)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceState {
    pub channels: Vec<(NodeId, NodeId)>,
    pub lambda: Vec<f64>,
    pub mu: Vec<(f64, f64)>,
    pub b: Vec<(f64, f64)>,
    pub steps: StepSizes,
}

impl PriceState {
    fn zero(topology: &Topology, steps: StepSizes) -> Self {
        let n = topology.channels().len();
        PriceState {
            channels: topology.channels().iter().map(|c| (c.u, c.v)).collect(),
            lambda: vec![0.0; n],
            mu: vec![(0.0, 0.0); n],
            b: vec![(0.0, 0.0); n],
            steps,
        }
    }

    /// Directed price `2λ + μ_dir - μ_opp` of crossing channel `c`.
    pub fn edge_price(&self, c: usize, forward: bool) -> f64 {
        let (mf, mb) = self.mu[c];
        2.0 * self.lambda[c] + if forward { mf - mb } else { mb - mf }
    }

    pub fn rebalancing(&self) -> BTreeMap<(NodeId, NodeId), f64> {
        let mut out = BTreeMap::new();
        for (k, &(u, v)) in self.channels.iter().enumerate() {
            out.insert((u, v), self.b[k].0);
            out.insert((v, u), self.b[k].1);
        }
        out
    }

    pub fn is_nonnegative(&self) -> bool {
        self.lambda.iter().all(|&l| l >= 0.0)
            && self.mu.iter().all(|&(a, b)| a >= 0.0 && b >= 0.0)
            && self.b.iter().all(|&(a, b)| a >= 0.0 && b >= 0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iter: usize,
    /// Throughput of the current iterate.
    pub throughput: f64,
    /// Throughput of the running average.
    pub avg_throughput: f64,
    pub violation: f64,
    pub change: f64,
    /// Smallest λ, μ or rebalancing rate after this iteration.
    pub min_price: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PdResult {
    /// Averaged rates over the current averaging epoch.
    pub rates: FlowAssignment,
    pub last_rates: FlowAssignment,
    /// Averaged prices over the same epoch.
    pub prices: PriceState,
    pub last_prices: PriceState,
    pub objective: f64,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
}

fn violation(model: &PathModel, topo: &Topology, delta: f64, x: &[f64], b: &[(f64, f64)]) -> f64 {
    let flows = model.channel_flows(x);
    let mut worst: f64 = 0.0;
    for (c, &(f, r)) in flows.iter().enumerate() {
        let cap = topo.channel(c).capacity / delta;
        worst = worst.max((f + r - cap) / cap);
        let scale = (f + r).max(1.0);
        worst = worst.max((f - r - b[c].0) / scale);
        worst = worst.max((r - f - b[c].1) / scale);
    }
    worst.max(0.0)
}

/// Decentralized primal-dual iteration for the balanced or rebalancing LP.
///
/// Each round updates path rates from current prices, then prices from the
/// new rates. The reported solution averages iterates since the last power of
/// two, which damps the oscillation inherent to saddle-point dynamics on LPs.
pub fn run_primal_dual(
    topology: &Topology,
    demand: &DemandMatrix,
    paths: &PathSet,
    delta: f64,
    config: &PdConfig,
) -> Result<PdResult, FluidError> {
    let s = config.steps;
    for (name, v) in [("alpha", s.alpha), ("beta", s.beta), ("eta", s.eta), ("kappa", s.kappa)] {
        if !(v > 0.0) || !v.is_finite() {
            return Err(FluidError::InvalidArgument(format!("step size {name} must be positive, got {v}")));
        }
    }
    if !(config.tol > 0.0) {
        return Err(FluidError::InvalidArgument("tol must be positive".into()));
    }
    if !(delta > 0.0) {
        return Err(FluidError::InvalidArgument("delta must be positive".into()));
    }
    if let Some(g) = config.gamma {
        if !(g >= 0.0) || !g.is_finite() {
            return Err(FluidError::InvalidArgument(format!("gamma must be nonnegative, got {g}")));
        }
    }
    let model = PathModel::new(topology, demand, paths)?;
    let groups = model.groups();
    let n_ch = topology.channels().len();
    let mean_cap = topology.mean_capacity();
    let (eta, kappa): (Vec<f64>, Vec<f64>) = topology
        .channels()
        .iter()
        .map(|c| {
            let f = if s.scale_by_capacity { mean_cap / c.capacity } else { 1.0 };
            (s.eta * f, s.kappa * f)
        })
        .unzip();

    let mut x = vec![0.0; model.paths.len()];
    let mut st = PriceState::zero(topology, s);
    let mut sum_x = vec![0.0; x.len()];
    let mut sum_l = vec![0.0; n_ch];
    let mut sum_mu = vec![(0.0, 0.0); n_ch];
    let mut sum_b = vec![(0.0, 0.0); n_ch];
    let mut count = 0usize;
    let mut epoch = 1usize;
    let mut prev_avg: Vec<f64> = x.clone();
    let mut prev_avg_b = vec![(0.0, 0.0); n_ch];
    let mut streak = 0usize;
    let mut trace = Vec::new();

    for it in 1..=config.max_iters {
        for (p, hops) in model.hops.iter().enumerate() {
            let z: f64 = hops.iter().map(|&(c, f)| st.edge_price(c, f)).sum();
            x[p] += s.alpha * (1.0 - z);
        }
        for (k, g) in groups.iter().enumerate() {
            let v: Vec<f64> = g.iter().map(|&p| x[p]).collect();
            for (&p, r) in g.iter().zip(project_onto_demand_set(&v, model.caps[k])) {
                x[p] = r;
            }
        }
        if let Some(gamma) = config.gamma {
            for c in 0..n_ch {
                st.b[c].0 = (st.b[c].0 + s.beta * (st.mu[c].0 - gamma)).max(0.0);
                st.b[c].1 = (st.b[c].1 + s.beta * (st.mu[c].1 - gamma)).max(0.0);
            }
        }
        let flows = model.channel_flows(&x);
        for c in 0..n_ch {
            let (f, r) = flows[c];
            let cap = topology.channel(c).capacity / delta;
            st.lambda[c] = (st.lambda[c] + eta[c] * (f + r - cap)).max(0.0);
            st.mu[c].0 = (st.mu[c].0 + kappa[c] * (f - r - st.b[c].0)).max(0.0);
            st.mu[c].1 = (st.mu[c].1 + kappa[c] * (r - f - st.b[c].1)).max(0.0);
        }

        if it == 2 * epoch {
            epoch = it;
            sum_x.iter_mut().for_each(|v| *v = 0.0);
            sum_l.iter_mut().for_each(|v| *v = 0.0);
            sum_mu.iter_mut().for_each(|v| *v = (0.0, 0.0));
            sum_b.iter_mut().for_each(|v| *v = (0.0, 0.0));
            count = 0;
            streak = 0;
        }
        for (a, v) in sum_x.iter_mut().zip(&x) {
            *a += v;
        }
        for c in 0..n_ch {
            sum_l[c] += st.lambda[c];
            sum_mu[c].0 += st.mu[c].0;
            sum_mu[c].1 += st.mu[c].1;
            sum_b[c].0 += st.b[c].0;
            sum_b[c].1 += st.b[c].1;
        }
        count += 1;
        let n = count as f64;
        let avg: Vec<f64> = sum_x.iter().map(|v| v / n).collect();
        let avg_b: Vec<(f64, f64)> = sum_b.iter().map(|&(a, b)| (a / n, b / n)).collect();
        let scale = avg.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        let change_b = avg_b.iter().zip(&prev_avg_b).fold(0.0f64, |m, (a, b)| m.max((a.0 - b.0).abs()).max((a.1 - b.1).abs()));
        let change = avg.iter().zip(&prev_avg).fold(change_b, |m, (a, b)| m.max((a - b).abs())) / scale;
        let viol = violation(&model, topology, delta, &avg, &avg_b);
        trace.push(TraceEntry {
            iter: it,
            throughput: x.iter().sum(),
            avg_throughput: avg.iter().sum(),
            violation: viol,
            change,
            min_price: st
                .lambda
                .iter()
                .chain(st.mu.iter().flat_map(|m| [&m.0, &m.1]))
                .chain(st.b.iter().flat_map(|b| [&b.0, &b.1]))
                .fold(f64::INFINITY, |m, &v| m.min(v)),
        });
        prev_avg = avg;
        prev_avg_b = avg_b;
        if !x.iter().all(|v| v.is_finite()) || !st.lambda.iter().all(|v| v.is_finite()) {
            return Err(FluidError::Diverged(it));
        }
        if count > 1 && change < config.tol && viol < config.max_violation {
            streak += 1;
        } else {
            streak = 0;
        }
        if streak >= config.patience {
            let n = count as f64;
            let mut avg_st = st.clone();
            for c in 0..n_ch {
                avg_st.lambda[c] = sum_l[c] / n;
                avg_st.mu[c] = (sum_mu[c].0 / n, sum_mu[c].1 / n);
                avg_st.b[c] = (sum_b[c].0 / n, sum_b[c].1 / n);
            }
            let mut rates = FlowAssignment::new();
            let mut last_rates = FlowAssignment::new();
            for (p, path) in model.paths.iter().enumerate() {
                rates.add(path.clone(), prev_avg[p]);
                last_rates.add(path.clone(), x[p]);
            }
            let gamma = config.gamma.unwrap_or(0.0);
            let rebal: f64 = avg_st.b.iter().map(|&(a, b)| a + b).sum();
            let objective = rates.total() - gamma * rebal;
            return Ok(PdResult {
                rates,
                last_rates,
                prices: avg_st,
                last_prices: st,
                objective,
                iterations: it,
                trace,
            });
        }
    }
    Err(FluidError::NotConverged(Box::new(trace)))
}
