use super::FluidError;
use crate::graph::{DemandMatrix, NodeId, Path, PathSet, Topology};
use crate::lp::{solve_lp, LpInstance, LpStatus, RowTag, Sense, Variable};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Paths flattened into index form: which channels each path crosses and in
/// which direction.
#[derive(Debug, Clone)]
pub struct PathModel {
    pub paths: Vec<Path>,
    /// Index into `pairs` for every path.
    pub pair_of: Vec<usize>,
    pub pairs: Vec<(NodeId, NodeId)>,
    /// Demand cap per pair; infinite when uncapped.
    pub caps: Vec<f64>,
    /// `(channel, forward)` hops per path; forward means from the channel's
    /// lower id to its higher id.
    pub hops: Vec<Vec<(usize, bool)>>,
    pub n_channels: usize,
}

impl PathModel {
    pub fn new(topology: &Topology, demand: &DemandMatrix, paths: &PathSet) -> Result<Self, FluidError> {
        let mut m = PathModel {
            paths: Vec::new(),
            pair_of: Vec::new(),
            pairs: Vec::new(),
            caps: Vec::new(),
            hops: Vec::new(),
            n_channels: topology.channels().len(),
        };
        for ((i, j), d) in demand.iter() {
            let list = paths.get(&(i, j)).filter(|l| !l.is_empty()).ok_or(FluidError::EmptyPathSet(i, j))?;
            let pair = m.pairs.len();
            m.pairs.push((i, j));
            m.caps.push(d);
            let mut seen = std::collections::BTreeSet::new();
            for p in list {
                if p.source() != i || p.target() != j || !p.is_trail(topology) {
                    return Err(FluidError::InvalidPath(p.to_string()));
                }
                if !seen.insert(p.clone()) {
                    continue;
                }
                let hops = p
                    .edges()
                    .map(|(a, b)| (topology.channel_between(a, b).unwrap(), a < b))
                    .collect();
                m.paths.push(p.clone());
                m.pair_of.push(pair);
                m.hops.push(hops);
            }
        }
        Ok(m)
    }

    /// Per-channel `(forward, backward)` rate totals.
    pub fn channel_flows(&self, x: &[f64]) -> Vec<(f64, f64)> {
        let mut flows = vec![(0.0, 0.0); self.n_channels];
        for (p, hops) in self.hops.iter().enumerate() {
            for &(c, fwd) in hops {
                if fwd {
                    flows[c].0 += x[p];
                } else {
                    flows[c].1 += x[p];
                }
            }
        }
        flows
    }

    /// Paths grouped by pair, in pair order.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut g = vec![Vec::new(); self.pairs.len()];
        for (p, &pair) in self.pair_of.iter().enumerate() {
            g[pair].push(p);
        }
        g
    }
}

#[derive(Clone, Copy)]
enum BalanceMode {
    Strict,
    Rebalance { gamma: f64, budget: Option<f64> },
}

fn build(
    topology: &Topology,
    demand: &DemandMatrix,
    paths: &PathSet,
    delta: f64,
    mode: BalanceMode,
) -> Result<LpInstance, FluidError> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(FluidError::InvalidArgument(format!("delta must be positive, got {delta}")));
    }
    let model = PathModel::new(topology, demand, paths)?;
    let gamma = match mode {
        BalanceMode::Strict => 0.0,
        BalanceMode::Rebalance { gamma, budget } => {
            if !(gamma >= 0.0) || !gamma.is_finite() {
                return Err(FluidError::InvalidArgument(format!("gamma must be nonnegative, got {gamma}")));
            }
            if let Some(b) = budget {
                if !(b >= 0.0) || !b.is_finite() {
                    return Err(FluidError::InvalidArgument(format!("budget must be nonnegative, got {b}")));
                }
            }
            gamma
        }
    };
    let mut lp = LpInstance::new(delta, gamma);
    for p in &model.paths {
        lp.add_variable(Variable::Path(p.clone()), 1.0);
    }
    let groups = model.groups();
    for (k, &(i, j)) in model.pairs.iter().enumerate() {
        if model.caps[k].is_finite() {
            let coefs = groups[k].iter().map(|&p| (p, 1.0)).collect();
            lp.add_row(RowTag::Demand, format!("{i}>{j}"), coefs, Sense::Le, model.caps[k]);
        }
    }
    let mut fwd: Vec<Vec<usize>> = vec![Vec::new(); model.n_channels];
    let mut bwd: Vec<Vec<usize>> = vec![Vec::new(); model.n_channels];
    for (p, hops) in model.hops.iter().enumerate() {
        for &(c, f) in hops {
            if f {
                fwd[c].push(p);
            } else {
                bwd[c].push(p);
            }
        }
    }
    for (c, ch) in topology.channels().iter().enumerate() {
        let coefs = fwd[c].iter().chain(&bwd[c]).map(|&p| (p, 1.0)).collect();
        lp.add_row(RowTag::Capacity, format!("{}-{}", ch.u, ch.v), coefs, Sense::Le, ch.capacity / delta);
    }
    let net = |c: usize, sign: f64| -> Vec<(usize, f64)> {
        fwd[c].iter().map(|&p| (p, sign)).chain(bwd[c].iter().map(|&p| (p, -sign))).collect()
    };
    match mode {
        BalanceMode::Strict => {
            for (c, ch) in topology.channels().iter().enumerate() {
                lp.add_row(RowTag::Balance, format!("{}-{}", ch.u, ch.v), net(c, 1.0), Sense::Eq, 0.0);
            }
        }
        BalanceMode::Rebalance { budget, .. } => {
            let mut b_vars = Vec::new();
            for (c, ch) in topology.channels().iter().enumerate() {
                for (from, to, sign) in [(ch.u, ch.v, 1.0), (ch.v, ch.u, -1.0)] {
                    let b = lp.add_variable(Variable::Rebalance { from, to }, -gamma);
                    b_vars.push(b);
                    let mut coefs = net(c, sign);
                    coefs.push((b, -1.0));
                    lp.add_row(RowTag::Balance, format!("{from}>{to}"), coefs, Sense::Le, 0.0);
                }
            }
            if let Some(bound) = budget {
                lp.budget = Some(bound);
                lp.add_row(RowTag::Budget, "total", b_vars.iter().map(|&b| (b, 1.0)).collect(), Sense::Le, bound);
            }
        }
    }
    Ok(lp)
}

/// Throughput LP with exact per-channel balance.
pub fn build_balanced_lp(
    topology: &Topology,
    demand: &DemandMatrix,
    paths: &PathSet,
    delta: f64,
) -> Result<LpInstance, FluidError> {
    build(topology, demand, paths, delta, BalanceMode::Strict)
}

/// Throughput minus `gamma` times total on-chain rebalancing. Each direction
/// of each channel gets its own balance row and rebalancing variable.
pub fn build_rebalancing_lp(
    topology: &Topology,
    demand: &DemandMatrix,
    paths: &PathSet,
    delta: f64,
    gamma: f64,
) -> Result<LpInstance, FluidError> {
    build(topology, demand, paths, delta, BalanceMode::Rebalance { gamma, budget: None })
}

/// Rebalancing LP with total rebalancing rate at most `budget`.
pub fn build_bounded_rebalancing_lp(
    topology: &Topology,
    demand: &DemandMatrix,
    paths: &PathSet,
    delta: f64,
    gamma: f64,
    budget: f64,
) -> Result<LpInstance, FluidError> {
    build(topology, demand, paths, delta, BalanceMode::Rebalance { gamma, budget: Some(budget) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TPoint {
    pub budget: f64,
    pub throughput: f64,
}

/// Maximum throughput t(B) for each budget in `grid`.
pub fn t_curve(
    topology: &Topology,
    demand: &DemandMatrix,
    paths: &PathSet,
    delta: f64,
    grid: &[f64],
) -> Result<Vec<TPoint>, FluidError> {
    if grid.iter().any(|b| !(*b >= 0.0) || !b.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FluidError::InvalidArgument("budget grid must be nonnegative and increasing".into()));
    }
    grid.iter()
        .map(|&b| {
            let lp = build_bounded_rebalancing_lp(topology, demand, paths, delta, 0.0, b)?;
            let sol = solve_lp(&lp)?;
            if sol.status != LpStatus::Optimal {
                return Err(FluidError::NotOptimal(sol.status));
            }
            Ok(TPoint { budget: b, throughput: sol.throughput() })
        })
        .collect()
}

/// Largest violation of `t(mid) ≥ (t(a) + t(b)) / 2` over grid triples whose
/// middle point is the exact midpoint, and of monotonicity.
pub fn t_curve_defects(points: &[TPoint]) -> (f64, f64) {
    let mono = points.windows(2).map(|w| w[0].throughput - w[1].throughput).fold(0.0, f64::max);
    let mut concave: f64 = 0.0;
    let by_budget: BTreeMap<u64, f64> = points.iter().map(|p| (p.budget.to_bits(), p.throughput)).collect();
    for a in points {
        for b in points {
            if b.budget <= a.budget {
                continue;
            }
            let mid = (a.budget + b.budget) / 2.0;
            if let Some(&tm) = by_budget.get(&mid.to_bits()) {
                concave = concave.max((a.throughput + b.throughput) / 2.0 - tm);
            }
        }
    }
    (mono, concave)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{enumerate_trails, Channel};

    fn fig1(cap: f64) -> Topology {
        Topology::from_channels([(1, 2), (2, 3), (2, 4), (3, 4), (1, 5)].map(|(a, b)| Channel::new(a, b, cap, 1.0)))
            .unwrap()
    }

    fn fig2() -> DemandMatrix {
        DemandMatrix::from_entries([
            ((1, 2), 1.0),
            ((1, 5), 1.0),
            ((2, 4), 2.0),
            ((4, 1), 1.0),
            ((4, 3), 1.0),
            ((3, 2), 1.0),
            ((5, 1), 1.0),
            ((3, 5), 2.0),
            ((4, 5), 2.0),
        ])
        .unwrap()
    }

    fn trails(t: &Topology, d: &DemandMatrix) -> PathSet {
        d.pairs().map(|(i, j)| ((i, j), enumerate_trails(t, i, j, 10).unwrap())).collect()
    }

    #[test]
    fn motivating_instance_all_trails_and_shortest() {
        let t = fig1(1000.0);
        let d = fig2();
        let sol = solve_lp(&build_balanced_lp(&t, &d, &trails(&t, &d), 1.0).unwrap()).unwrap();
        assert!((sol.objective - 8.0).abs() < 1e-6);
        let shortest = crate::graph::PathKind::EdgeDisjointShortest.path_set(&t, &d, 1).unwrap();
        let sol = solve_lp(&build_balanced_lp(&t, &d, &shortest, 1.0).unwrap()).unwrap();
        assert!((sol.objective - 5.0).abs() < 1e-6);
    }

    #[test]
    fn row_structure() {
        let t = fig1(30.0);
        let d = fig2();
        let lp = build_balanced_lp(&t, &d, &trails(&t, &d), 0.5).unwrap();
        assert_eq!(lp.rows_tagged(RowTag::Capacity).count(), 5);
        assert_eq!(lp.rows_tagged(RowTag::Balance).count(), 5);
        assert_eq!(lp.rows_tagged(RowTag::Demand).count(), 9);
        assert!(lp.rows_tagged(RowTag::Capacity).all(|r| r.rhs == 60.0));
    }

    #[test]
    fn two_node_uncapped_split() {
        let t = Topology::from_channels([Channel::new(1, 2, 10.0, 0.5)]).unwrap();
        let mut d = DemandMatrix::new();
        d.add_uncapped(1, 2).unwrap();
        d.add_uncapped(2, 1).unwrap();
        let sol = solve_lp(&build_balanced_lp(&t, &d, &trails(&t, &d), 0.5).unwrap()).unwrap();
        assert!((sol.rates.rate(&Path(vec![1, 2])) - 10.0).abs() < 1e-9);
        assert!((sol.rates.rate(&Path(vec![2, 1])) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn rebalancing_pays_off_only_below_unit_cost() {
        let t = Topology::from_channels([Channel::new(1, 2, 1e6, 1.0)]).unwrap();
        let d = DemandMatrix::from_entries([((1, 2), 4.0)]).unwrap();
        let ps = trails(&t, &d);
        let sol = solve_lp(&build_rebalancing_lp(&t, &d, &ps, 1.0, 0.5).unwrap()).unwrap();
        assert!((sol.throughput() - 4.0).abs() < 1e-9);
        assert!((sol.rebalancing[&(1, 2)] - 4.0).abs() < 1e-9);
        assert!((sol.objective - 2.0).abs() < 1e-9);
        let sol = solve_lp(&build_rebalancing_lp(&t, &d, &ps, 1.0, 2.0).unwrap()).unwrap();
        assert!(sol.objective.abs() < 1e-9 && sol.throughput().abs() < 1e-9);
    }

    #[test]
    fn circulation_needs_no_rebalancing() {
        let t = fig1(1000.0);
        let d = DemandMatrix::from_entries([((1, 2), 2.0), ((2, 3), 2.0), ((3, 1), 2.0)]).unwrap();
        let sol = solve_lp(&build_rebalancing_lp(&t, &d, &trails(&t, &d), 1.0, 0.1).unwrap()).unwrap();
        assert!((sol.throughput() - 6.0).abs() < 1e-9);
        assert!(sol.total_rebalancing() < 1e-9);
    }

    #[test]
    fn t_curve_dag_and_motivating() {
        let t = Topology::from_channels([Channel::new(1, 2, 1e6, 1.0)]).unwrap();
        let d = DemandMatrix::from_entries([((1, 2), 4.0)]).unwrap();
        let pts = t_curve(&t, &d, &trails(&t, &d), 1.0, &[0.0, 1.0, 2.0, 4.0, 8.0]).unwrap();
        for p in &pts {
            assert!((p.throughput - p.budget.min(4.0)).abs() < 1e-9);
        }
        let t = fig1(1000.0);
        let d = fig2();
        let pts = t_curve(&t, &d, &trails(&t, &d), 1.0, &[0.0]).unwrap();
        assert!((pts[0].throughput - 8.0).abs() < 1e-6);
        assert!(t_curve(&t, &d, &trails(&t, &d), 1.0, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn errors() {
        let t = fig1(10.0);
        let d = fig2();
        assert!(matches!(build_balanced_lp(&t, &d, &PathSet::new(), 1.0), Err(FluidError::EmptyPathSet(..))));
        let mut bad = trails(&t, &d);
        bad.get_mut(&(1, 2)).unwrap().push(Path(vec![1, 3]));
        assert!(matches!(build_balanced_lp(&t, &d, &bad, 1.0), Err(FluidError::InvalidPath(_))));
        assert!(build_rebalancing_lp(&t, &d, &trails(&t, &d), 1.0, -1.0).is_err());
    }
}
