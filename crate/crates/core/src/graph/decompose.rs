use super::{DemandMatrix, FlowAssignment, GraphError, NodeId, Path, Topology, BALANCE_TOL};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Split of a payment graph into its maximum circulation and the DAG remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub circulation: DemandMatrix,
    pub dag: DemandMatrix,
    /// Total weight of the circulation, ν(C*).
    pub value: f64,
}

impl Decomposition {
    /// Fraction of the demand that lies in the DAG part.
    pub fn dag_fraction(&self) -> f64 {
        let total = self.value + self.dag.total();
        if total > 0.0 {
            self.dag.total() / total
        } else {
            0.0
        }
    }
}

const FLOW_EPS: f64 = 1e-12;

/// Maximum circulation by negative-cycle canceling.
///
/// The residual graph carries cost -1 on unused forward capacity and +1 on
/// reverse residuals, so every negative cycle strictly increases the total
/// circulating weight. Termination leaves no negative cycle, which is the
/// optimality condition for the max-weight circulation.
pub fn decompose(demand: &DemandMatrix) -> Result<Decomposition, GraphError> {
    for ((i, j), r) in demand.iter() {
        if !r.is_finite() {
            return Err(GraphError::UncappedDemand(i, j));
        }
    }
    let nodes: Vec<NodeId> = demand.nodes().into_iter().collect();
    let pos: BTreeMap<NodeId, usize> = nodes.iter().enumerate().map(|(k, &n)| (n, k)).collect();
    let edges: Vec<(usize, usize, f64)> =
        demand.iter().map(|((i, j), r)| (pos[&i], pos[&j], r)).collect();
    let mut flow = vec![0.0; edges.len()];
    let scale = edges.iter().map(|e| e.2).fold(0.0, f64::max).max(1.0);
    let eps = FLOW_EPS * scale;

    while let Some(cycle) = find_negative_cycle(nodes.len(), &edges, &flow, eps) {
        let delta = cycle
            .iter()
            .map(|&(e, fwd)| if fwd { edges[e].2 - flow[e] } else { flow[e] })
            .fold(f64::INFINITY, f64::min);
        for &(e, fwd) in &cycle {
            if fwd {
                flow[e] += delta;
                if edges[e].2 - flow[e] <= eps {
                    flow[e] = edges[e].2;
                }
            } else {
                flow[e] -= delta;
                if flow[e] <= eps {
                    flow[e] = 0.0;
                }
            }
        }
    }

    let mut circulation = DemandMatrix::new();
    let mut dag = DemandMatrix::new();
    for (k, &(a, b, w)) in edges.iter().enumerate() {
        let (i, j) = (nodes[a], nodes[b]);
        circulation.add(i, j, flow[k])?;
        let rest = w - flow[k];
        if rest > eps {
            dag.add(i, j, rest)?;
        }
    }
    let value = circulation.total();
    Ok(Decomposition { circulation, dag, value })
}

/// Bellman-Ford on the residual graph from a virtual source. Returns the arcs
/// of one negative cycle as `(edge index, is_forward)`.
fn find_negative_cycle(
    n: usize,
    edges: &[(usize, usize, f64)],
    flow: &[f64],
    eps: f64,
) -> Option<Vec<(usize, bool)>> {
    let mut arcs = Vec::new();
    for (k, &(a, b, w)) in edges.iter().enumerate() {
        if w - flow[k] > eps {
            arcs.push((a, b, -1i64, k, true));
        }
        if flow[k] > eps {
            arcs.push((b, a, 1i64, k, false));
        }
    }
    let mut dist = vec![0i64; n];
    let mut pred: Vec<Option<usize>> = vec![None; n];
    let mut last = None;
    for _ in 0..n {
        last = None;
        for (ai, &(a, b, c, _, _)) in arcs.iter().enumerate() {
            if dist[a] + c < dist[b] {
                dist[b] = dist[a] + c;
                pred[b] = Some(ai);
                last = Some(b);
            }
        }
        last?;
    }
    let mut v = last?;
    for _ in 0..n {
        v = arcs[pred[v]?].0;
    }
    let start = v;
    let mut cycle = Vec::new();
    loop {
        let ai = pred[v]?;
        let (a, _, _, k, fwd) = arcs[ai];
        cycle.push((k, fwd));
        v = a;
        if v == start {
            break;
        }
    }
    cycle.reverse();
    Some(cycle)
}

/// Repeatedly finds a directed cycle in the remaining support and strips its
/// minimum weight. Order-dependent; the result is a valid circulation that may
/// be smaller than the maximum.
pub fn greedy_cycle_removal(demand: &DemandMatrix) -> Result<Decomposition, GraphError> {
    let mut rest: BTreeMap<(NodeId, NodeId), f64> = BTreeMap::new();
    for ((i, j), r) in demand.iter() {
        if !r.is_finite() {
            return Err(GraphError::UncappedDemand(i, j));
        }
        rest.insert((i, j), r);
    }
    let mut circulation = DemandMatrix::new();
    while let Some(cycle) = find_support_cycle(&rest) {
        let w = cycle.iter().map(|e| rest[e]).fold(f64::INFINITY, f64::min);
        for e in &cycle {
            let r = rest.get_mut(e).unwrap();
            *r -= w;
            if *r <= FLOW_EPS {
                rest.remove(e);
            }
            circulation.add(e.0, e.1, w)?;
        }
    }
    let dag = DemandMatrix::from_entries(rest)?;
    let value = circulation.total();
    Ok(Decomposition { circulation, dag, value })
}

fn find_support_cycle(support: &BTreeMap<(NodeId, NodeId), f64>) -> Option<Vec<(NodeId, NodeId)>> {
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    for &(i, j) in support.keys() {
        adj.entry(i).or_default().push(j);
    }
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state: BTreeMap<NodeId, u8> = BTreeMap::new();
    let roots: Vec<NodeId> = adj.keys().copied().collect();
    for root in roots {
        if state.get(&root).copied().unwrap_or(0) != 0 {
            continue;
        }
        let mut stack: Vec<(NodeId, usize)> = vec![(root, 0)];
        state.insert(root, 1);
        while let Some(&mut (n, ref mut next)) = stack.last_mut() {
            let succ = adj.get(&n).map(Vec::as_slice).unwrap_or(&[]);
            if *next < succ.len() {
                let m = succ[*next];
                *next += 1;
                match state.get(&m).copied().unwrap_or(0) {
                    0 => {
                        state.insert(m, 1);
                        stack.push((m, 0));
                    }
                    1 => {
                        let from = stack.iter().position(|&(x, _)| x == m).unwrap();
                        let mut cyc: Vec<(NodeId, NodeId)> =
                            stack[from..].windows(2).map(|w| (w[0].0, w[1].0)).collect();
                        cyc.push((n, m));
                        return Some(cyc);
                    }
                    _ => {}
                }
            } else {
                state.insert(n, 2);
                stack.pop();
            }
        }
    }
    None
}

/// BFS spanning tree of the component containing `root`, as channel endpoints.
pub fn bfs_spanning_tree(topology: &Topology, root: NodeId) -> Vec<(NodeId, NodeId)> {
    let mut seen = BTreeSet::from([root]);
    let mut queue = VecDeque::from([root]);
    let mut tree = Vec::new();
    while let Some(n) = queue.pop_front() {
        for &(m, _) in topology.neighbors(n) {
            if seen.insert(m) {
                tree.push((n, m));
                queue.push_back(m);
            }
        }
    }
    tree
}

/// Routes each demand of a circulation on its unique path in `tree`.
///
/// Every cut of a tree splits a circulation into equal flows in each
/// direction, so each tree channel ends up exactly balanced.
pub fn spanning_tree_route(
    circulation: &DemandMatrix,
    topology: &Topology,
    tree: &[(NodeId, NodeId)],
) -> Result<FlowAssignment, GraphError> {
    for (n, imb) in circulation.net_outflow() {
        if !imb.is_finite() || imb.abs() > BALANCE_TOL * circulation.total().max(1.0) {
            return Err(GraphError::NotACirculation { node: n, imbalance: imb });
        }
    }
    let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
    let mut seen_edges = BTreeSet::new();
    for &(a, b) in tree {
        if topology.channel_between(a, b).is_none() {
            return Err(GraphError::UnknownChannel(a, b));
        }
        let key = (a.min(b), a.max(b));
        if !seen_edges.insert(key) {
            continue;
        }
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    if seen_edges.len() + 1 < adj.len().max(1) || has_tree_cycle(&adj, seen_edges.len()) {
        return Err(GraphError::TreeNotSpanning("edge set contains a cycle".into()));
    }

    let mut out = FlowAssignment::new();
    let mut parents: BTreeMap<NodeId, BTreeMap<NodeId, NodeId>> = BTreeMap::new();
    for ((i, j), r) in circulation.iter() {
        let par = parents.entry(i).or_insert_with(|| bfs_parents(&adj, i));
        if !par.contains_key(&j) {
            return Err(GraphError::TreeNotSpanning(format!("{j} not reachable from {i}")));
        }
        let mut nodes = vec![j];
        let mut v = j;
        while v != i {
            v = par[&v];
            nodes.push(v);
        }
        nodes.reverse();
        out.add(Path(nodes), r);
    }
    Ok(out)
}

fn bfs_parents(adj: &BTreeMap<NodeId, Vec<NodeId>>, root: NodeId) -> BTreeMap<NodeId, NodeId> {
    let mut par = BTreeMap::from([(root, root)]);
    let mut queue = VecDeque::from([root]);
    while let Some(n) = queue.pop_front() {
        for &m in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            if let std::collections::btree_map::Entry::Vacant(e) = par.entry(m) {
                e.insert(n);
                queue.push_back(m);
            }
        }
    }
    par
}

fn has_tree_cycle(adj: &BTreeMap<NodeId, Vec<NodeId>>, n_edges: usize) -> bool {
    // a forest has exactly |V| - (#components) edges
    let mut seen = BTreeSet::new();
    let mut components = 0;
    for &n in adj.keys() {
        if seen.contains(&n) {
            continue;
        }
        components += 1;
        for m in bfs_parents(adj, n).into_keys() {
            seen.insert(m);
        }
    }
    n_edges + components != adj.len()
}
