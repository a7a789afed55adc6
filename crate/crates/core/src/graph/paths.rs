use super::{DemandMatrix, GraphError, NodeId, Path, PathSet, Topology};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};

/// Path-selection rule for routing schemes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    EdgeDisjointWidest,
    EdgeDisjointShortest,
    Yen,
    /// Every trail up to the given hop limit; `k` is ignored.
    AllTrails { max_hops: usize },
}

impl PathKind {
    pub fn compute(&self, topo: &Topology, i: NodeId, j: NodeId, k: usize) -> Result<Vec<Path>, GraphError> {
        match *self {
            PathKind::EdgeDisjointWidest => k_edge_disjoint_widest_paths(topo, i, j, k),
            PathKind::EdgeDisjointShortest => k_edge_disjoint_shortest_paths(topo, i, j, k),
            PathKind::Yen => yen_k_shortest(topo, i, j, k),
            PathKind::AllTrails { max_hops } => {
                let t = enumerate_trails(topo, i, j, max_hops)?;
                if t.is_empty() {
                    Err(GraphError::NoPath(i, j))
                } else {
                    Ok(t)
                }
            }
        }
    }

    /// Candidate paths for every pair in `demand`.
    pub fn path_set(&self, topo: &Topology, demand: &DemandMatrix, k: usize) -> Result<PathSet, GraphError> {
        demand.pairs().map(|(i, j)| Ok(((i, j), self.compute(topo, i, j, k)?))).collect()
    }
}

fn check_endpoints(topo: &Topology, i: NodeId, j: NodeId) -> Result<(), GraphError> {
    for n in [i, j] {
        if !topo.contains_node(n) {
            return Err(GraphError::UnknownNode(n));
        }
    }
    if i == j {
        return Err(GraphError::SameEndpoints(i));
    }
    Ok(())
}

/// Fewest-hop path from `i` to `j` avoiding `banned_channels` and
/// `banned_nodes`; among equals, the lexicographically smallest node sequence.
fn lex_shortest(
    topo: &Topology,
    i: NodeId,
    j: NodeId,
    usable: impl Fn(usize) -> bool,
    banned_nodes: &BTreeSet<NodeId>,
) -> Option<Path> {
    if banned_nodes.contains(&i) || banned_nodes.contains(&j) {
        return None;
    }
    // distances to j, so a greedy smallest-id walk from i is lexicographic
    let mut dist: BTreeMap<NodeId, usize> = BTreeMap::from([(j, 0)]);
    let mut queue = VecDeque::from([j]);
    while let Some(n) = queue.pop_front() {
        if n == i {
            break;
        }
        let d = dist[&n];
        for &(m, c) in topo.neighbors(n) {
            if usable(c) && !banned_nodes.contains(&m) && !dist.contains_key(&m) {
                dist.insert(m, d + 1);
                queue.push_back(m);
            }
        }
    }
    let mut d = *dist.get(&i)?;
    let mut nodes = vec![i];
    let mut cur = i;
    while cur != j {
        let next = topo
            .neighbors(cur)
            .iter()
            .find(|&&(m, c)| usable(c) && dist.get(&m) == Some(&(d - 1)))
            .map(|&(m, _)| m)?;
        nodes.push(next);
        cur = next;
        d -= 1;
    }
    Some(Path(nodes))
}

/// Fewest-hop path with lexicographic tie-break.
pub fn shortest_path(topo: &Topology, i: NodeId, j: NodeId) -> Result<Path, GraphError> {
    check_endpoints(topo, i, j)?;
    lex_shortest(topo, i, j, |_| true, &BTreeSet::new()).ok_or(GraphError::NoPath(i, j))
}

pub fn k_edge_disjoint_shortest_paths(
    topo: &Topology,
    i: NodeId,
    j: NodeId,
    k: usize,
) -> Result<Vec<Path>, GraphError> {
    check_k(k)?;
    check_endpoints(topo, i, j)?;
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    while out.len() < k {
        let Some(p) = lex_shortest(topo, i, j, |c| !used.contains(&c), &BTreeSet::new()) else {
            break;
        };
        used.extend(p.channel_indices(topo).unwrap());
        out.push(p);
    }
    if out.is_empty() {
        return Err(GraphError::NoPath(i, j));
    }
    Ok(out)
}

/// Greedy widest paths: each round takes the largest bottleneck still
/// reachable, then the fewest hops, then the smallest node sequence, and
/// removes the chosen channels.
pub fn k_edge_disjoint_widest_paths(
    topo: &Topology,
    i: NodeId,
    j: NodeId,
    k: usize,
) -> Result<Vec<Path>, GraphError> {
    check_k(k)?;
    check_endpoints(topo, i, j)?;
    let mut caps: Vec<f64> = topo.channels().iter().map(|c| c.capacity).collect();
    caps.sort_by(|a, b| b.total_cmp(a));
    caps.dedup();
    let mut used = BTreeSet::new();
    let mut out = Vec::new();
    let no_ban = BTreeSet::new();
    while out.len() < k {
        let found = caps.iter().find_map(|&w| {
            lex_shortest(topo, i, j, |c| !used.contains(&c) && topo.channel(c).capacity >= w, &no_ban)
        });
        let Some(p) = found else { break };
        used.extend(p.channel_indices(topo).unwrap());
        out.push(p);
    }
    if out.is_empty() {
        return Err(GraphError::NoPath(i, j));
    }
    Ok(out)
}

/// Yen's loopless k-shortest paths by hop count, ties broken lexicographically.
pub fn yen_k_shortest(topo: &Topology, i: NodeId, j: NodeId, k: usize) -> Result<Vec<Path>, GraphError> {
    check_k(k)?;
    check_endpoints(topo, i, j)?;
    let first = lex_shortest(topo, i, j, |_| true, &BTreeSet::new()).ok_or(GraphError::NoPath(i, j))?;
    let mut accepted = vec![first];
    let mut candidates: BTreeSet<(usize, Vec<NodeId>)> = BTreeSet::new();
    while accepted.len() < k {
        let last = accepted.last().unwrap().0.clone();
        for s in 0..last.len() - 1 {
            let root = &last[..=s];
            let mut banned_ch = BTreeSet::new();
            for p in &accepted {
                if p.0.len() > s + 1 && p.0[..=s] == *root {
                    banned_ch.insert(topo.channel_between(p.0[s], p.0[s + 1]).unwrap());
                }
            }
            let banned_nodes: BTreeSet<NodeId> = root[..s].iter().copied().collect();
            if let Some(spur) = lex_shortest(topo, root[s], j, |c| !banned_ch.contains(&c), &banned_nodes) {
                let mut nodes = root[..s].to_vec();
                nodes.extend(spur.0);
                if !accepted.iter().any(|p| p.0 == nodes) {
                    candidates.insert((nodes.len(), nodes));
                }
            }
        }
        match candidates.pop_first() {
            Some((_, nodes)) => accepted.push(Path(nodes)),
            None => break,
        }
    }
    Ok(accepted)
}

/// All trails from `i` to `j` with at most `max_hops` channels, ordered by
/// hop count then node sequence. A trail ends the first time it reaches `j`.
pub fn enumerate_trails(topo: &Topology, i: NodeId, j: NodeId, max_hops: usize) -> Result<Vec<Path>, GraphError> {
    if max_hops == 0 {
        return Err(GraphError::InvalidArgument("max_hops must be at least 1".into()));
    }
    check_endpoints(topo, i, j)?;
    let mut out = Vec::new();
    let mut nodes = vec![i];
    let mut used = vec![false; topo.channels().len()];
    trail_dfs(topo, j, max_hops, &mut nodes, &mut used, &mut out);
    out.sort_by(|a: &Path, b: &Path| a.0.len().cmp(&b.0.len()).then_with(|| a.0.cmp(&b.0)));
    Ok(out)
}

fn trail_dfs(
    topo: &Topology,
    j: NodeId,
    max_hops: usize,
    nodes: &mut Vec<NodeId>,
    used: &mut [bool],
    out: &mut Vec<Path>,
) {
    let cur = *nodes.last().unwrap();
    if cur == j {
        out.push(Path(nodes.clone()));
        return;
    }
    if nodes.len() > max_hops {
        return;
    }
    for &(m, c) in topo.neighbors(cur) {
        if !used[c] {
            used[c] = true;
            nodes.push(m);
            trail_dfs(topo, j, max_hops, nodes, used, out);
            nodes.pop();
            used[c] = false;
        }
    }
}

fn check_k(k: usize) -> Result<(), GraphError> {
    if k == 0 {
        Err(GraphError::InvalidArgument("k must be at least 1".into()))
    } else {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Channel;

    fn topo(edges: &[(NodeId, NodeId, f64)]) -> Topology {
        Topology::from_channels(edges.iter().map(|&(a, b, c)| Channel::new(a, b, c, 0.01))).unwrap()
    }

    #[test]
    fn widest_prefers_larger_bottleneck() {
        let t = topo(&[(1, 2, 5.0), (2, 4, 5.0), (1, 3, 10.0), (3, 4, 20.0)]);
        let p = k_edge_disjoint_widest_paths(&t, 1, 4, 2).unwrap();
        assert_eq!(p, vec![Path(vec![1, 3, 4]), Path(vec![1, 2, 4])]);
        let single = topo(&[(1, 2, 3.0)]);
        assert_eq!(k_edge_disjoint_widest_paths(&single, 1, 2, 1).unwrap(), vec![Path(vec![1, 2])]);
    }

    #[test]
    fn widest_tie_prefers_fewer_hops() {
        let t = topo(&[(1, 2, 5.0), (2, 3, 5.0), (3, 4, 5.0), (1, 4, 5.0)]);
        let p = k_edge_disjoint_widest_paths(&t, 1, 4, 1).unwrap();
        assert_eq!(p, vec![Path(vec![1, 4])]);
    }

    #[test]
    fn shortest_disjoint_and_lex_ties() {
        let t = topo(&[(1, 3, 1.0), (3, 4, 1.0), (1, 2, 1.0), (2, 4, 1.0)]);
        let p = k_edge_disjoint_shortest_paths(&t, 1, 4, 3).unwrap();
        assert_eq!(p, vec![Path(vec![1, 2, 4]), Path(vec![1, 3, 4])]);
        assert_eq!(k_edge_disjoint_shortest_paths(&t, 1, 2, 1).unwrap(), vec![Path(vec![1, 2])]);
    }

    #[test]
    fn yen_diamond_and_exhaustion() {
        let t = topo(&[(1, 2, 1.0), (2, 4, 1.0), (1, 3, 1.0), (3, 4, 1.0)]);
        assert_eq!(yen_k_shortest(&t, 1, 4, 2).unwrap(), vec![Path(vec![1, 2, 4]), Path(vec![1, 3, 4])]);
        assert_eq!(yen_k_shortest(&t, 1, 4, 10).unwrap().len(), 2);
        assert_eq!(yen_k_shortest(&t, 1, 2, 10).unwrap(), vec![Path(vec![1, 2]), Path(vec![1, 3, 4, 2])]);
    }

    #[test]
    fn trails_on_triangle() {
        let t = topo(&[(1, 2, 1.0), (2, 3, 1.0), (1, 3, 1.0)]);
        assert_eq!(enumerate_trails(&t, 1, 3, 2).unwrap(), vec![Path(vec![1, 3]), Path(vec![1, 2, 3])]);
        assert!(enumerate_trails(&t, 1, 1, 2).is_err());
        assert!(enumerate_trails(&t, 1, 3, 0).is_err());
    }

    #[test]
    fn disconnected_pair() {
        let t = topo(&[(1, 2, 1.0), (3, 4, 1.0)]);
        assert!(matches!(yen_k_shortest(&t, 1, 4, 1), Err(GraphError::NoPath(1, 4))));
        assert!(matches!(k_edge_disjoint_widest_paths(&t, 1, 4, 1), Err(GraphError::NoPath(1, 4))));
        assert!(matches!(k_edge_disjoint_shortest_paths(&t, 1, 4, 1), Err(GraphError::NoPath(1, 4))));
        assert!(matches!(shortest_path(&t, 1, 9), Err(GraphError::UnknownNode(9))));
    }
}
