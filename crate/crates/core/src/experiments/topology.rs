use super::ExperimentError;
use crate::graph::{Channel, NodeId, Topology};
use crate::workload::SizeDistribution;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    /// Watts-Strogatz ring lattice with random rewiring.
    SmallWorld,
    /// Barabási-Albert preferential attachment.
    ScaleFree,
}

/// How channel capacities are drawn before scaling to the target mean.
#[derive(Debug, Clone, PartialEq)]
pub enum CapacitySource {
    Uniform,
    Empirical(SizeDistribution),
}

const MAX_ATTEMPTS: usize = 200;
const REWIRE_PROB: f64 = 0.1;

/// A connected random topology with exactly `edges` channels on nodes
/// `0..n`, capacities scaled to `mean_capacity` and a fixed per-hop delay.
pub fn gen_topology(
    kind: GeneratorKind,
    n: usize,
    edges: usize,
    capacities: &CapacitySource,
    mean_capacity: f64,
    delay: f64,
    seed: u64,
) -> Result<Topology, ExperimentError> {
    let fail = |m: String| ExperimentError::GenerationFailed(m);
    if n < 2 {
        return Err(fail(format!("{n} nodes")));
    }
    if edges < n - 1 || edges > n * (n - 1) / 2 {
        return Err(fail(format!("{edges} edges cannot connect {n} nodes simply")));
    }
    if !(mean_capacity > 0.0) || !(delay > 0.0) {
        return Err(fail("capacity and delay must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let pairs = match kind {
            GeneratorKind::SmallWorld => watts_strogatz(n, edges, &mut rng),
            GeneratorKind::ScaleFree => barabasi_albert(n, edges, &mut rng),
        };
        let raw: Vec<f64> = match capacities {
            CapacitySource::Uniform => vec![1.0; pairs.len()],
            CapacitySource::Empirical(d) => pairs.iter().map(|_| d.sample(&mut rng)).collect(),
        };
        let scale = mean_capacity * raw.len() as f64 / raw.iter().sum::<f64>();
        let channels = pairs
            .iter()
            .zip(&raw)
            .map(|(&(a, b), &c)| Channel::new(a, b, c * scale, delay));
        let topo = Topology::from_channels(channels).map_err(|e| fail(e.to_string()))?;
        if topo.is_connected() && topo.nodes().len() == n {
            return Ok(topo);
        }
    }
    Err(fail(format!("no connected graph after {MAX_ATTEMPTS} attempts")))
}

fn key(a: usize, b: usize) -> (NodeId, NodeId) {
    (a.min(b) as NodeId, a.max(b) as NodeId)
}

fn watts_strogatz(n: usize, edges: usize, rng: &mut ChaCha8Rng) -> Vec<(NodeId, NodeId)> {
    let mut set: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    'lattice: for d in 1..n {
        for i in 0..n {
            if set.len() == edges {
                break 'lattice;
            }
            set.insert(key(i, (i + d) % n));
        }
    }
    let lattice: Vec<(NodeId, NodeId)> = set.iter().copied().collect();
    for e in lattice {
        if rng.gen::<f64>() >= REWIRE_PROB {
            continue;
        }
        let a = e.0 as usize;
        let b = rng.gen_range(0..n);
        let cand = key(a, b);
        if a != b && !set.contains(&cand) {
            set.remove(&e);
            set.insert(cand);
        }
    }
    set.into_iter().collect()
}

fn barabasi_albert(n: usize, edges: usize, rng: &mut ChaCha8Rng) -> Vec<(NodeId, NodeId)> {
    let m = (edges / n).max(1).min(n - 1);
    let mut set: BTreeSet<(NodeId, NodeId)> = BTreeSet::new();
    // Endpoint multiset: sampling from it is degree-proportional.
    let mut ends: Vec<usize> = Vec::new();
    for a in 0..=m {
        for b in (a + 1)..=m {
            set.insert(key(a, b));
            ends.extend([a, b]);
        }
    }
    for v in (m + 1)..n {
        let mut targets = BTreeSet::new();
        while targets.len() < m {
            targets.insert(*ends.choose(rng).unwrap());
        }
        for t in targets {
            set.insert(key(v, t));
            ends.extend([v, t]);
        }
    }
    while set.len() > edges {
        // Only possible when the seed clique alone exceeds the target.
        let last = *set.iter().next_back().unwrap();
        set.remove(&last);
    }
    let mut guard = 0;
    while set.len() < edges && guard < 100 * edges {
        guard += 1;
        let a = *ends.choose(rng).unwrap();
        let b = *ends.choose(rng).unwrap();
        if a != b && set.insert(key(a, b)) {
            ends.extend([a, b]);
        }
    }
    set.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_world_exact_edges() {
        let t = gen_topology(GeneratorKind::SmallWorld, 50, 200, &CapacitySource::Uniform, 100.0, 0.03, 1).unwrap();
        assert_eq!(t.channels().len(), 200);
        assert!(t.is_connected());
    }

    #[test]
    fn scale_free_is_connected_and_skewed() {
        let t = gen_topology(GeneratorKind::ScaleFree, 10, 25, &CapacitySource::Uniform, 100.0, 0.03, 2).unwrap();
        assert_eq!(t.channels().len(), 25);
        assert!(t.is_connected());
        let degs: Vec<usize> = t.nodes().iter().map(|&n| t.degree(n)).collect();
        assert!(degs.iter().max().unwrap() >= &(2 * degs.iter().min().unwrap()));
    }

    #[test]
    fn capacity_scale_doubles() {
        let d = SizeDistribution::parse("10\n30\n50\n").unwrap();
        let src = CapacitySource::Empirical(d);
        let a = gen_topology(GeneratorKind::ScaleFree, 12, 30, &src, 100.0, 0.03, 3).unwrap();
        let b = gen_topology(GeneratorKind::ScaleFree, 12, 30, &src, 200.0, 0.03, 3).unwrap();
        for (x, y) in a.channels().iter().zip(b.channels()) {
            assert!((2.0 * x.capacity - y.capacity).abs() < 1e-9);
        }
        assert!((a.mean_capacity() - 100.0).abs() < 1e-9);
    }

    #[test]
    fn impossible_requests_fail() {
        let r = gen_topology(GeneratorKind::SmallWorld, 5, 3, &CapacitySource::Uniform, 1.0, 0.03, 1);
        assert!(matches!(r, Err(ExperimentError::GenerationFailed(_))));
    }
}
