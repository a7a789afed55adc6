//! Demand matrices, Poisson transaction streams, size distributions and
//! built-in scenarios.

mod sizes;

pub use sizes::SizeDistribution;

use crate::graph::{decompose, Channel, DemandMatrix, GraphError, NodeId, Topology};
use crate::sim::{secs, tokens, Transaction};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorkloadError {
    #[error("size file is empty")]
    EmptyFile,
    #[error("size file line {line}: {msg}")]
    Malformed { line: usize, msg: String },
    #[error("{0}")]
    Io(String),
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum SizeSource {
    Synthetic,
    Constant { amount: f64 },
    File { path: PathBuf },
}

impl SizeSource {
    pub fn load(&self) -> Result<SizeDistribution, WorkloadError> {
        match self {
            SizeSource::Synthetic => Ok(SizeDistribution::synthetic_default()),
            SizeSource::Constant { amount } if *amount > 0.0 => Ok(SizeDistribution::constant(*amount)),
            SizeSource::Constant { amount } => Err(WorkloadError::InvalidSpec(format!("constant size {amount}"))),
            SizeSource::File { path } => SizeDistribution::load(path),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSpec {
    /// Mean transactions per second per sending node.
    pub per_sender_rate: f64,
    /// Number of permutation matrices summed into the circulation.
    pub circulation_weight: usize,
    pub dag_fraction: f64,
    /// Scale of the exponential node-selection weights for DAG pairs.
    pub dag_skew: f64,
    /// Sampled DAG pairs; 0 means one per node per permutation.
    pub dag_pairs: usize,
    pub sizes: SizeSource,
    /// Seconds from arrival.
    pub deadline: f64,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            per_sender_rate: 30.0,
            circulation_weight: 5,
            dag_fraction: 0.0,
            dag_skew: 2.0,
            dag_pairs: 0,
            sizes: SizeSource::Synthetic,
            deadline: 5.0,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: String| Err(WorkloadError::InvalidSpec(m));
        if !(self.per_sender_rate >= 0.0 && self.per_sender_rate.is_finite()) {
            return bad(format!("per_sender_rate {}", self.per_sender_rate));
        }
        if !(0.0..=1.0).contains(&self.dag_fraction) {
            return bad(format!("dag_fraction {} outside [0, 1]", self.dag_fraction));
        }
        if self.circulation_weight == 0 && self.dag_fraction < 1.0 {
            return bad("circulation_weight must be at least 1".into());
        }
        if !(self.dag_skew > 0.0) {
            return bad(format!("dag_skew {}", self.dag_skew));
        }
        if !(self.deadline > 0.0) {
            return bad(format!("deadline {}", self.deadline));
        }
        Ok(())
    }

    /// Demand matrix over `nodes` for this spec.
    pub fn demand(&self, nodes: &[NodeId], seed: u64) -> Result<DemandMatrix, WorkloadError> {
        self.validate()?;
        let mut rng = rng_from_seed(seed);
        let circ = if self.circulation_weight > 0 {
            gen_circulation_matrix(nodes, self.circulation_weight, &mut rng)?
        } else {
            DemandMatrix::new()
        };
        if self.dag_fraction == 0.0 {
            return Ok(circ);
        }
        let y = if self.dag_pairs > 0 { self.dag_pairs } else { nodes.len() * self.circulation_weight.max(1) };
        let dag = gen_dag_matrix(nodes, y, self.dag_skew, &mut rng)?;
        mix_to_dag_fraction(&circ, &dag, self.dag_fraction)
    }

    /// Demand plus a Poisson stream over `[0, horizon)`.
    pub fn generate(
        &self,
        nodes: &[NodeId],
        horizon: f64,
        seed: u64,
    ) -> Result<(DemandMatrix, Vec<Transaction>), WorkloadError> {
        let demand = self.demand(nodes, seed)?;
        let sizes = self.sizes.load()?;
        let rates = per_sender_rates(&demand, self.per_sender_rate);
        let mut rng = rng_from_seed(seed ^ 0x5eed_a441_7a1e_0001);
        let stream = gen_arrivals(&rates, 0.0, horizon, &sizes, self.deadline, &mut rng)?;
        Ok((demand, stream))
    }
}

fn check_nodes(nodes: &[NodeId]) -> Result<(), WorkloadError> {
    if nodes.len() < 2 {
        return Err(WorkloadError::InvalidSpec("need at least two nodes".into()));
    }
    Ok(())
}

/// Sum of `x` uniformly random permutations of `nodes`, each resampled until
/// it has no fixed point.
pub fn gen_circulation_matrix<R: Rng + ?Sized>(nodes: &[NodeId], x: usize, rng: &mut R) -> Result<DemandMatrix, WorkloadError> {
    check_nodes(nodes)?;
    if x == 0 {
        return Err(WorkloadError::InvalidSpec("x must be at least 1".into()));
    }
    let mut m = DemandMatrix::new();
    for _ in 0..x {
        let mut perm = nodes.to_vec();
        loop {
            perm.shuffle(rng);
            if perm.iter().zip(nodes).all(|(a, b)| a != b) {
                break;
            }
        }
        for (&i, &j) in nodes.iter().zip(&perm) {
            m.add(i, j, 1.0)?;
        }
    }
    Ok(m)
}

fn exp_weighted_index<R: Rng + ?Sized>(n: usize, skew: f64, rng: &mut R) -> usize {
    let weights: Vec<f64> = (0..n).map(|i| (-(i as f64) / skew).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    0
}

/// `y` unit-weight (sender, receiver) pairs. Senders are drawn with weight
/// `exp(-rank/skew)` over `nodes` in order, receivers with the same law over
/// `nodes` reversed.
pub fn gen_dag_matrix<R: Rng + ?Sized>(
    nodes: &[NodeId],
    y: usize,
    skew: f64,
    rng: &mut R,
) -> Result<DemandMatrix, WorkloadError> {
    check_nodes(nodes)?;
    if y == 0 || !(skew > 0.0) {
        return Err(WorkloadError::InvalidSpec(format!("y={y}, skew={skew}")));
    }
    let n = nodes.len();
    let mut m = DemandMatrix::new();
    let mut added = 0;
    while added < y {
        let s = nodes[exp_weighted_index(n, skew, rng)];
        let r = nodes[n - 1 - exp_weighted_index(n, skew, rng)];
        if s != r {
            m.add(s, r, 1.0)?;
            added += 1;
        }
    }
    Ok(m)
}

/// `circ + s·dag` with `s` chosen by bisection so that the decomposition's
/// DAG share of the total is `fraction`.
pub fn mix_to_dag_fraction(circ: &DemandMatrix, dag: &DemandMatrix, fraction: f64) -> Result<DemandMatrix, WorkloadError> {
    if fraction <= 0.0 || dag.is_empty() {
        return Ok(circ.clone());
    }
    if fraction >= 1.0 || circ.is_empty() {
        return Ok(dag.clone());
    }
    let share = |s: f64| -> Result<f64, WorkloadError> {
        let m = circ.merged(&dag.scaled(s));
        Ok(decompose(&m)?.dag_fraction())
    };
    let mut lo = 0.0;
    let mut hi = circ.total() / dag.total();
    while share(hi)? < fraction {
        hi *= 2.0;
        if hi > 1e9 {
            return Ok(circ.merged(&dag.scaled(hi)));
        }
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if share(mid)? < fraction {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(circ.merged(&dag.scaled(hi)))
}

/// Rescales demand weights into transaction rates so that the mean rate per
/// sending node is `per_sender` while pair ratios are preserved.
pub fn per_sender_rates(demand: &DemandMatrix, per_sender: f64) -> DemandMatrix {
    let senders = demand.row_sums().values().filter(|&&r| r > 0.0).count();
    if senders == 0 || demand.total() <= 0.0 {
        return DemandMatrix::new();
    }
    demand.scaled(per_sender * senders as f64 / demand.total())
}

/// Independent Poisson processes per pair over `[start, end)`, rates in
/// transactions per second. Ids follow arrival order.
pub fn gen_arrivals<R: Rng + ?Sized>(
    rates: &DemandMatrix,
    start: f64,
    end: f64,
    sizes: &SizeDistribution,
    deadline: f64,
    rng: &mut R,
) -> Result<Vec<Transaction>, WorkloadError> {
    if !(end > start) {
        return Err(WorkloadError::InvalidSpec(format!("empty interval [{start}, {end})")));
    }
    if !rates.is_finite() {
        return Err(WorkloadError::InvalidSpec("arrival rates must be finite".into()));
    }
    let mut out = Vec::new();
    for ((i, j), rate) in rates.iter() {
        if rate <= 0.0 {
            continue;
        }
        let gap = Exp::new(rate).expect("positive rate");
        let mut t = start + gap.sample(rng);
        while t < end {
            let amount = tokens(sizes.sample(rng)).max(1);
            out.push(Transaction { id: 0, src: i, dst: j, amount, arrival: secs(t), deadline: secs(t + deadline) });
            t += gap.sample(rng);
        }
    }
    out.sort_by_key(|t| (t.arrival, t.src, t.dst));
    for (k, t) in out.iter_mut().enumerate() {
        t.id = k as u64;
    }
    Ok(out)
}

/// A fixed topology with piecewise-constant demand, rates in transactions per
/// second.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub topology: Topology,
    /// `(start, end, rates)` per phase, seconds.
    pub phases: Vec<(f64, f64, DemandMatrix)>,
    pub sizes: SizeDistribution,
    pub deadline: f64,
}

impl Scenario {
    pub fn builtin(name: &str) -> Option<Scenario> {
        match name {
            "deadlock3" => Some(deadlock3()),
            _ => None,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.phases.iter().map(|p| p.1).fold(0.0, f64::max)
    }

    pub fn arrivals(&self, seed: u64) -> Result<Vec<Transaction>, WorkloadError> {
        let mut rng = rng_from_seed(seed);
        let mut all = Vec::new();
        for (start, end, rates) in &self.phases {
            all.extend(gen_arrivals(rates, *start, *end, &self.sizes, self.deadline, &mut rng)?);
        }
        all.sort_by_key(|t| (t.arrival, t.src, t.dst));
        for (k, t) in all.iter_mut().enumerate() {
            t.id = k as u64;
        }
        Ok(all)
    }
}

/// Line 1-2-3 with 10 tokens per side. For 30 s node 2 also pays node 3
/// alongside the 1↔3 circulation; afterwards only the circulation remains.
pub fn deadlock3() -> Scenario {
    let topology =
        Topology::from_channels([Channel::new(1, 2, 20.0, 0.03), Channel::new(2, 3, 20.0, 0.03)]).expect("valid line");
    let circ = DemandMatrix::from_entries([((1, 3), 2.0), ((3, 1), 2.0)]).expect("valid demand");
    let mut phase1 = circ.clone();
    phase1.add(2, 3, 1.0).expect("valid demand");
    Scenario {
        name: "deadlock3".into(),
        topology,
        phases: vec![(0.0, 30.0, phase1), (30.0, 60.0, circ)],
        sizes: SizeDistribution::constant(1.0),
        deadline: 5.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn nodes(n: u32) -> Vec<NodeId> {
        (1..=n).collect()
    }

    #[test]
    fn three_node_permutation_is_a_cycle() {
        let mut rng = rng_from_seed(3);
        let m = gen_circulation_matrix(&nodes(3), 1, &mut rng).unwrap();
        let d = decompose(&m).unwrap();
        assert_eq!(d.value, 3.0);
        assert!(d.dag.is_empty());
    }

    #[test]
    fn permutation_sums_are_balanced() {
        let mut rng = rng_from_seed(11);
        let m = gen_circulation_matrix(&nodes(10), 5, &mut rng).unwrap();
        assert!(m.row_sums().values().all(|&s| s == 5.0));
        assert!(m.column_sums().values().all(|&s| s == 5.0));
        assert!(decompose(&m).unwrap().dag.is_empty());
    }

    #[test]
    fn tiny_skew_concentrates_on_one_pair() {
        let mut rng = rng_from_seed(5);
        let m = gen_dag_matrix(&nodes(6), 20, 1e-3, &mut rng).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.get(1, 6), 20.0);
        let d = decompose(&m).unwrap();
        assert_eq!(d.value, 0.0);
    }

    #[test]
    fn single_pair_dag() {
        let mut rng = rng_from_seed(9);
        let m = gen_dag_matrix(&nodes(5), 1, 1.0, &mut rng).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(decompose(&m).unwrap().value, 0.0);
    }

    #[test]
    fn mixture_hits_dag_fraction() {
        let spec = WorkloadSpec { dag_fraction: 0.2, ..Default::default() };
        let fr: Vec<f64> = (0..20)
            .map(|s| {
                let m = spec.demand(&nodes(10), s).unwrap();
                decompose(&m).unwrap().dag_fraction()
            })
            .collect();
        let mean = fr.iter().sum::<f64>() / fr.len() as f64;
        assert!((mean - 0.2).abs() <= 0.02, "{mean}");
    }

    #[test]
    fn poisson_count() {
        let rates = DemandMatrix::from_entries([((1, 2), 2.0), ((2, 1), 0.0)]).unwrap();
        let mut rng = rng_from_seed(21);
        let s = gen_arrivals(&rates, 0.0, 1000.0, &SizeDistribution::constant(1.0), 5.0, &mut rng).unwrap();
        let sigma = 2000f64.sqrt();
        assert!((s.len() as f64 - 2000.0).abs() < 3.0 * sigma, "{}", s.len());
        assert!(s.iter().all(|t| t.src == 1 && t.deadline == t.arrival + 5_000_000));
    }

    #[test]
    fn seeded_streams_repeat() {
        let spec = WorkloadSpec { per_sender_rate: 5.0, ..Default::default() };
        let a = spec.generate(&nodes(6), 20.0, 4).unwrap();
        let b = spec.generate(&nodes(6), 20.0, 4).unwrap();
        assert_eq!(a.1, b.1);
        assert_eq!(a.0, b.0);
    }

    #[test]
    fn per_sender_scaling() {
        let m = DemandMatrix::from_entries([((1, 2), 3.0), ((2, 1), 1.0)]).unwrap();
        let r = per_sender_rates(&m, 10.0);
        assert!((r.total() - 20.0).abs() < 1e-12);
        assert!((r.get(1, 2) - 15.0).abs() < 1e-12);
    }

    #[test]
    fn deadlock_scenario_shape() {
        let s = deadlock3();
        assert_eq!(s.horizon(), 60.0);
        let d = decompose(&s.phases[0].2).unwrap();
        assert!((d.dag_fraction() - 0.2).abs() < 1e-12);
        assert!(decompose(&s.phases[1].2).unwrap().dag.is_empty());
        let a = s.arrivals(1).unwrap();
        assert!(a.iter().any(|t| t.src == 2 && t.arrival < secs(30.0)));
        assert!(!a.iter().any(|t| t.src == 2 && t.arrival >= secs(30.0)));
    }
}
