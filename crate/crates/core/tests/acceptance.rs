//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails or exceeds its time budget.

use pcn_core::experiments::{run_experiment, sweep, ExperimentConfig, SweepAxis};
use pcn_core::fluid::{
    build_balanced_lp, build_rebalancing_lp, check_kkt_parallel, integrate_fluid_spider, run_primal_dual, t_curve,
    t_curve_defects, FluidParams, FluidState, ParallelNetwork, PdConfig,
};
use pcn_core::graph::{
    bfs_spanning_tree, decompose, enumerate_trails, spanning_tree_route, Channel, DemandMatrix, NodeId, PathKind,
    PathSet, Topology,
};
use pcn_core::lp::solve_lp;
use pcn_core::sim::{
    secs, tokens, Core, QueuePolicy, QueuedUnit, RebalanceMode, Scheme, Sim, SimConfig, Transaction, TxnId,
    UnitOutcome, UnitQueue,
};
use pcn_core::transport::{build_scheme, spider_window_update, Lnd, SchemeKind, SchemeParams, Spider, SpiderParams};
use pcn_core::workload::WorkloadSpec;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::cell::RefCell;
use std::collections::BTreeSet;
use std::rc::Rc;
use std::time::{Duration, Instant};

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random_topology(rng: &mut ChaCha8Rng, n: u32, extra: usize, cap: f64) -> Topology {
    let mut edges = BTreeSet::new();
    for v in 2..=n {
        let u = rng.gen_range(1..v);
        edges.insert((u, v));
    }
    for _ in 0..extra {
        let a = rng.gen_range(1..=n);
        let b = rng.gen_range(1..=n);
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    Topology::from_channels(edges.into_iter().map(|(a, b)| Channel::new(a, b, cap, 1.0))).unwrap()
}

fn random_circulation(rng: &mut ChaCha8Rng, n: u32, cycles: usize) -> DemandMatrix {
    let mut d = DemandMatrix::new();
    let nodes: Vec<NodeId> = (1..=n).collect();
    for _ in 0..cycles {
        let len = rng.gen_range(2..=n as usize);
        let cyc: Vec<NodeId> = nodes.choose_multiple(rng, len).copied().collect();
        let w = rng.gen_range(1..=3) as f64;
        for k in 0..len {
            d.add(cyc[k], cyc[(k + 1) % len], w).unwrap();
        }
    }
    d
}

fn random_demand(rng: &mut ChaCha8Rng, n: u32, pairs: usize, max_w: u32) -> DemandMatrix {
    let mut d = DemandMatrix::new();
    for _ in 0..pairs {
        let i = rng.gen_range(1..=n);
        let j = rng.gen_range(1..=n);
        let w = rng.gen_range(1..=max_w) as f64;
        if i != j && d.get(i, j) == 0.0 {
            d.add(i, j, w).unwrap();
        }
    }
    d
}

fn trails(t: &Topology, d: &DemandMatrix) -> PathSet {
    d.pairs().map(|(i, j)| ((i, j), enumerate_trails(t, i, j, t.nodes().len()).unwrap())).collect()
}

fn motivating() -> (Topology, DemandMatrix) {
    let t = Topology::from_channels(
        [(1, 2), (2, 3), (2, 4), (3, 4), (1, 5)].map(|(a, b)| Channel::new(a, b, 1000.0, 1.0)),
    )
    .unwrap();
    let d = DemandMatrix::from_entries([
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
    .unwrap();
    (t, d)
}

fn criterion_1() -> Outcome {
    let (t, d) = motivating();
    let dec = decompose(&d).map_err(|e| e.to_string())?;
    check((dec.value - 8.0).abs() < 1e-6, || format!("circulation value {}", dec.value))?;
    check((dec.dag.total() - 4.0).abs() < 1e-6, || format!("dag weight {}", dec.dag.total()))?;
    let all = solve_lp(&build_balanced_lp(&t, &d, &trails(&t, &d), 1.0).unwrap()).unwrap();
    check((all.objective - 8.0).abs() < 1e-6, || format!("all-trails LP {}", all.objective))?;
    let sp = PathKind::EdgeDisjointShortest.path_set(&t, &d, 1).unwrap();
    let short = solve_lp(&build_balanced_lp(&t, &d, &sp, 1.0).unwrap()).unwrap();
    check((short.objective - 5.0).abs() < 1e-6, || format!("shortest-path LP {}", short.objective))?;
    Ok(format!("nu={} dag={} lp_trails={} lp_shortest={}", dec.value, dec.dag.total(), all.objective, short.objective))
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_imbalance: f64 = 0.0;
    for case in 0..50 {
        let n = rng.gen_range(2..=8);
        let t_1 = rng.gen_range(0..=4);
        let t = random_topology(&mut rng, n, t_1, 1e4);
        let c_1 = rng.gen_range(1..=4);
        let c = random_circulation(&mut rng, n, c_1);
        let tree = bfs_spanning_tree(&t, 1);
        let flows = spanning_tree_route(&c, &t, &tree).map_err(|e| format!("case {case}: {e}"))?;
        worst_imbalance = worst_imbalance.max(flows.max_channel_imbalance());
        check(flows.max_channel_imbalance() <= 1e-9, || format!("case {case}: imbalance {}", flows.max_channel_imbalance()))?;
        check((flows.total() - c.total()).abs() < 1e-9, || format!("case {case}: routed {} of {}", flows.total(), c.total()))?;
    }
    let mut worst_gap: f64 = 0.0;
    for case in 0..50 {
        let n = rng.gen_range(2..=6);
        let t_1 = rng.gen_range(0..=2);
        let t = random_topology(&mut rng, n, t_1, 1e4);
        let d_1 = rng.gen_range(1..=6);
        let d = random_demand(&mut rng, n, d_1, 4);
        if d.is_empty() {
            continue;
        }
        let nu = decompose(&d).unwrap().value;
        let sol = solve_lp(&build_balanced_lp(&t, &d, &trails(&t, &d), 1.0).unwrap()).unwrap();
        let gap = (sol.objective - nu).abs();
        worst_gap = worst_gap.max(gap);
        check(gap <= 1e-6, || format!("demand case {case}: LP {} vs nu {nu}", sol.objective))?;
    }
    Ok(format!("max tree imbalance {worst_imbalance:.1e}, max |LP - nu| {worst_gap:.1e}"))
}

/// Largest integer sub-circulation by exhaustive search.
fn brute_force_circulation(edges: &[((NodeId, NodeId), u32)], n: u32) -> u32 {
    fn go(k: usize, edges: &[((NodeId, NodeId), u32)], bal: &mut Vec<i64>, total: u32, best: &mut u32) {
        if k == edges.len() {
            if bal.iter().all(|&b| b == 0) {
                *best = (*best).max(total);
            }
            return;
        }
        let ((i, j), w) = edges[k];
        for f in 0..=w {
            bal[i as usize] += f as i64;
            bal[j as usize] -= f as i64;
            go(k + 1, edges, bal, total + f, best);
            bal[i as usize] -= f as i64;
            bal[j as usize] += f as i64;
        }
    }
    let mut best = 0;
    go(0, edges, &mut vec![0; n as usize + 1], 0, &mut best);
    best
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut values = Vec::new();
    for case in 0..30 {
        let n = rng.gen_range(2..=6);
        let d_1 = rng.gen_range(3..=9);
        let d = random_demand(&mut rng, n, d_1, 4);
        let edges: Vec<((NodeId, NodeId), u32)> = d.iter().map(|(e, w)| (e, w as u32)).collect();
        let oracle = brute_force_circulation(&edges, n);
        let got = decompose(&d).unwrap().value;
        check((got - oracle as f64).abs() < 1e-9, || format!("case {case}: decompose {got} vs brute force {oracle}"))?;
        values.push(oracle);
    }
    Ok(format!("30 graphs agree, values {values:?}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0];
    let (mut worst_mono, mut worst_concave): (f64, f64) = (0.0, 0.0);
    for case in 0..10 {
        let n = rng.gen_range(3..=5);
        let t_1 = rng.gen_range(0..=2);
        let t = random_topology(&mut rng, n, t_1, 1e4);
        let d_1 = rng.gen_range(2..=6);
        let d = random_demand(&mut rng, n, d_1, 4);
        if d.is_empty() {
            continue;
        }
        let pts = t_curve(&t, &d, &trails(&t, &d), 1.0, &grid).map_err(|e| format!("case {case}: {e}"))?;
        let (mono, concave) = t_curve_defects(&pts);
        worst_mono = worst_mono.max(mono);
        worst_concave = worst_concave.max(concave);
        check(mono <= 1e-6 && concave <= 1e-6, || format!("case {case}: defects {mono} {concave}"))?;
        let nu = decompose(&d).unwrap().value;
        check((pts[0].throughput - nu).abs() <= 1e-6, || format!("case {case}: t(0)={} nu={nu}", pts[0].throughput))?;
    }
    Ok(format!("monotonicity defect {worst_mono:.1e}, concavity defect {worst_concave:.1e}"))
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    let mut done = 0;
    while done < 5 {
        let n = rng.gen_range(3..=6);
        let t_1 = rng.gen_range(1..=3);
        let t_2 = rng.gen_range(4..=12) as f64;
        let t = random_topology(&mut rng, n, t_1, t_2);
        let c_1 = rng.gen_range(1..=2);
        let mut d = random_circulation(&mut rng, n, c_1);
        let (i, j) = (rng.gen_range(1..=n), rng.gen_range(1..=n));
        if i != j {
            d.add(i, j, rng.gen_range(1..=3) as f64).unwrap();
        }
        let Ok(ps) = PathKind::Yen.path_set(&t, &d, 2) else { continue };
        let n_paths: usize = ps.values().map(Vec::len).sum();
        if n_paths > 10 || solve_lp(&build_balanced_lp(&t, &d, &ps, 1.0).unwrap()).unwrap().objective < 1.0 {
            continue;
        }
        for gamma in [None, Some(0.5), Some(2.0)] {
            let lp = match gamma {
                None => build_balanced_lp(&t, &d, &ps, 1.0).unwrap(),
                Some(g) => build_rebalancing_lp(&t, &d, &ps, 1.0, g).unwrap(),
            };
            let opt = solve_lp(&lp).unwrap();
            let cfg = PdConfig { gamma, max_iters: 400_000, ..PdConfig::default() };
            let res = run_primal_dual(&t, &d, &ps, 1.0, &cfg).map_err(|e| format!("instance {done} gamma {gamma:?}: {e}"))?;
            let rel = (res.objective - opt.objective).abs() / opt.objective.abs().max(1e-9);
            worst = worst.max(rel);
            check(rel <= 0.01, || {
                format!("instance {done} gamma {gamma:?}: primal-dual {} vs LP {}", res.objective, opt.objective)
            })?;
            check(res.trace.iter().all(|e| e.min_price >= 0.0), || format!("instance {done}: negative dual iterate"))?;
        }
        done += 1;
    }
    Ok(format!("worst relative gap {:.3}%", 100.0 * worst))
}

fn criterion_6() -> Outcome {
    let mut d = DemandMatrix::new();
    d.add_uncapped(1, 2).unwrap();
    d.add_uncapped(2, 1).unwrap();
    let net = ParallelNetwork::new(vec![10.0, 20.0], 1.0, BTreeSet::from([1]), d).map_err(|e| e.to_string())?;
    let traj = integrate_fluid_spider(&net, &FluidState::uniform(&net, 1.0), &FluidParams::default())
        .map_err(|e| e.to_string())?;
    let ss = traj.tail_average(0.25).ok_or("empty trajectory")?;
    let lp = solve_lp(&net.balanced_lp()).map_err(|e| e.to_string())?;
    let r = check_kkt_parallel(&net, &ss, &lp);
    let worst = r.stationarity.max(r.complementary_slackness).max(r.balance);
    check(worst < 0.05, || format!("KKT residuals {r:?}"))?;
    check(r.rate_error < 0.05, || format!("rate error {}", r.rate_error))?;
    Ok(format!(
        "stationarity {:.4} slackness {:.4} balance {:.4} rate error {:.4}",
        r.stationarity, r.complementary_slackness, r.balance, r.rate_error
    ))
}

fn fuzz_run(kind: SchemeKind, seed: u64) -> (u64, u64, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let topo = random_topology(&mut rng, 7, 5, 40.0);
    let spec = WorkloadSpec { per_sender_rate: 10.0, circulation_weight: 2, dag_fraction: 0.3, ..Default::default() };
    let nodes: Vec<NodeId> = topo.nodes().to_vec();
    let (_, stream) = spec.generate(&nodes, 40.0, seed).unwrap();
    let config = SimConfig {
        log_events: true,
        audit: true,
        rebalance: Some(pcn_core::sim::RebalanceConfig { trigger: tokens(300.0), mode: RebalanceMode::Equalize, delay: 0 }),
        ..SimConfig::default()
    };
    let scheme = build_scheme(kind, &SchemeParams::default(), &topo);
    let r = Sim::new(topo, stream, config, scheme).run(secs(45.0));
    (r.events, r.audit_failures, r.log.unwrap_or_default())
}

fn criterion_7() -> Outcome {
    let mut total = 0;
    for kind in SchemeKind::ALL {
        let (events, failures, log_a) = fuzz_run(kind, 7);
        let (_, _, log_b) = fuzz_run(kind, 7);
        check(failures == 0, || format!("{kind}: {failures} events broke conservation"))?;
        check(log_a == log_b, || format!("{kind}: logs differ between identical runs"))?;
        check(events >= 10_000 || kind != SchemeKind::Spider, || format!("spider fuzz produced only {events} events"))?;
        total += events;
    }
    Ok(format!("{total} audited events over {} schemes, logs identical", SchemeKind::ALL.len()))
}

fn base_config() -> ExperimentConfig {
    ExperimentConfig { seed: 1, ..ExperimentConfig::default() }
}

fn criterion_8() -> Outcome {
    // (a) pure circulation on the default 10-node scale-free topology,
    // mean over three seeds.
    let schemes = SweepAxis {
        key: "scheme.name".into(),
        values: ["spider", "lnd"].map(|s| toml::Value::String(s.into())).to_vec(),
    };
    let rows = sweep(&base_config(), &schemes, &[1, 2, 3]).map_err(|e| e.to_string())?.rows;
    let (spider, lnd) = (rows[0].success_mean, rows[1].success_mean);
    let a = format!(
        "(a) success spider {spider:.3} [{:.3}, {:.3}] lnd {lnd:.3} [{:.3}, {:.3}]",
        rows[0].success_min, rows[0].success_max, rows[1].success_min, rows[1].success_max
    );
    check(spider >= 0.95 && spider > lnd && lnd < 0.8, || a.clone())?;

    // (b) deadlock3, phase-2 throughput with and without rebalancing.
    let mut d3 = ExperimentConfig {
        scenario: Some("deadlock3".into()),
        horizon: 60.0,
        measure_start: 35.0,
        measure_end: 55.0,
        ..base_config()
    };
    let stuck = run_experiment(&d3).map_err(|e| e.to_string())?.metrics.normalized_throughput;
    d3.sim.rebalance_trigger = Some(10.0);
    d3.sim.rebalance_mode = RebalanceMode::Replenish;
    let freed = run_experiment(&d3).map_err(|e| e.to_string())?.metrics.normalized_throughput;
    let b = format!("(b) phase-2 throughput {stuck:.3} -> {freed:.3} with R=10");
    check(stuck < 0.95 && freed >= 0.95, || format!("{a}; {b}"))?;

    // (c) offloading with rebalancing on a 20% DAG workload, best over R.
    let mut dag = base_config();
    dag.workload.dag_fraction = 0.2;
    dag.sim.rebalance_mode = RebalanceMode::Replenish;
    dag.sim.rebalance_trigger = Some(1000.0);
    let axis = SweepAxis {
        key: "sim.rebalance_trigger".into(),
        values: [1000.0, 4000.0, 16000.0].map(toml::Value::Float).to_vec(),
    };
    let best = |kind: SchemeKind| -> Result<f64, String> {
        let mut c = dag.clone();
        c.scheme.name = kind;
        let res = sweep(&c, &axis, &[c.seed]).map_err(|e| e.to_string())?;
        Ok(res.runs.iter().flatten().filter_map(|m| m.offloading_ratio).fold(0.0, f64::max))
    };
    let (so, lo) = (best(SchemeKind::Spider)?, best(SchemeKind::Lnd)?);
    let c = format!("(c) offloading spider {so:.1} lnd {lo:.1} ratio {:.2}", so / lo);
    check(so >= 2.0 * lo, || format!("{a}; {b}; {c}"))?;
    Ok(format!("{a}; {b}; {c}"))
}

/// Delegates to a shared Spider so its windows can be read after the run.
struct Shared(Rc<RefCell<Spider>>);

impl Scheme for Shared {
    fn name(&self) -> &str {
        "spider"
    }
    fn queues_at_routers(&self) -> bool {
        true
    }
    fn on_transaction(&mut self, core: &mut Core, txn: TxnId) {
        self.0.borrow_mut().on_transaction(core, txn)
    }
    fn on_ack(&mut self, core: &mut Core, out: &UnitOutcome) {
        self.0.borrow_mut().on_ack(core, out)
    }
    fn on_fail(&mut self, core: &mut Core, out: &UnitOutcome) {
        self.0.borrow_mut().on_fail(core, out)
    }
    fn on_timer(&mut self, core: &mut Core, token: u64) {
        self.0.borrow_mut().on_timer(core, token)
    }
    fn on_cancel(&mut self, core: &mut Core, txn: TxnId) {
        self.0.borrow_mut().on_cancel(core, txn)
    }
}

fn service_order(policy: QueuePolicy, units: &[(u64, u64, i64)]) -> Vec<u64> {
    let mut q = UnitQueue::default();
    for (seq, &(unit, deadline, amount)) in units.iter().enumerate() {
        let item = QueuedUnit { unit, amount, enqueued_at: 0 };
        q.push(policy.key(seq as u64, deadline, amount), item);
    }
    let mut order = Vec::new();
    while let Some(k) = q.best_fitting(i64::MAX) {
        order.push(q.remove(&k).unwrap().unit);
    }
    order
}

fn criterion_9() -> Outcome {
    let mut w = vec![10.0, 10.0];
    spider_window_update(&mut w, 0, false, 10.0, 0.1, 1.0);
    check(w == [10.5, 10.0], || format!("increase gave {w:?}"))?;
    spider_window_update(&mut w, 1, true, 10.0, 0.1, 1.0);
    check(w == [10.5, 9.9], || format!("decrease gave {w:?}"))?;
    let mut floor = vec![1.05];
    spider_window_update(&mut floor, 0, true, 10.0, 0.1, 1.0);
    check(floor == [1.0], || format!("floor gave {floor:?}"))?;

    // Five one-token units, one fits on the 2->3 hop; the other four are
    // cancelled at the deadline and count as marked.
    let topo = Topology::from_channels([Channel::new(1, 2, 100.0, 0.03), Channel::new(2, 3, 2.0, 0.03)]).unwrap();
    let stream = vec![Transaction { id: 0, src: 1, dst: 3, amount: tokens(5.0), arrival: 0, deadline: secs(1.0) }];
    let spider = Rc::new(RefCell::new(Spider::new(SpiderParams::default(), topo.clone())));
    let config = SimConfig { snapshot_interval: None, ..SimConfig::default() };
    Sim::new(topo, stream, config, Box::new(Shared(spider.clone()))).run(secs(3.0));
    let got = spider.borrow().windows(1, 3).ok_or("no flow state")?.windows[0];
    let mut expect = vec![10.0];
    spider_window_update(&mut expect, 0, false, 10.0, 0.1, 1.0);
    for _ in 0..4 {
        spider_window_update(&mut expect, 0, true, 10.0, 0.1, 1.0);
    }
    check(got == expect[0], || format!("window after cancellations {got}, expected {}", expect[0]))?;

    let units = [(0, 30, 5), (1, 10, 1), (2, 20, 9), (3, 10, 3)];
    let lifo = service_order(QueuePolicy::Lifo, &units);
    let spf = service_order(QueuePolicy::Spf, &units);
    let edf = service_order(QueuePolicy::Edf, &units);
    check(lifo == [3, 2, 1, 0], || format!("LIFO {lifo:?}"))?;
    check(spf == [1, 3, 0, 2], || format!("SPF {spf:?}"))?;
    check(edf == [1, 3, 2, 0], || format!("EDF {edf:?}"))?;

    let mut lnd = Lnd::new(secs(5.0));
    lnd.ban(1, 0, secs(2.0));
    let edge = [secs(7.0) - 1, secs(7.0)].map(|t| lnd.is_blacklisted(1, 0, t));
    check(edge == [true, false], || format!("blacklist at 5s-1us/5s: {edge:?}"))?;
    check(!lnd.is_blacklisted(2, 0, secs(3.0)), || "blacklist leaked to another sender".into())?;
    Ok(format!("windows exact, cancelled window {got}, LIFO {lifo:?} SPF {spf:?} EDF {edf:?}, ban lifts at +5s"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("1 motivating example", criterion_1, Duration::from_secs(1)),
        ("2 circulation routing property suite", criterion_2, Duration::from_secs(30)),
        ("3 decomposition vs brute force", criterion_3, Duration::from_secs(60)),
        ("4 t(B) frontier", criterion_4, Duration::from_secs(60)),
        ("5 primal-dual convergence", criterion_5, Duration::from_secs(60)),
        ("6 fluid model KKT check", criterion_6, Duration::from_secs(30)),
        ("7 conservation and determinism fuzz", criterion_7, Duration::from_secs(30)),
        ("8 protocol-level claims", criterion_8, Duration::from_secs(300)),
        ("9 window, scheduling and blacklist units", criterion_9, Duration::from_secs(1)),
    ];
    let mut failed = Vec::new();
    for (name, f, budget) in criteria {
        let start = Instant::now();
        let res = f();
        let took = start.elapsed();
        let res = match res {
            Ok(detail) if took > budget => Err(format!("{detail}; took {took:.1?} over budget {budget:?}")),
            other => other,
        };
        match res {
            Ok(detail) => println!("criterion {name}: PASS ({took:.2?}) {detail}"),
            Err(why) => {
                println!("criterion {name}: FAIL ({took:.2?}) {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
