use pcn_core::experiments::{emit_results, run_experiment, sweep, ExperimentConfig, OutputFormat, SweepAxis};
use pcn_core::transport::SchemeKind;
use std::path::PathBuf;

fn light() -> ExperimentConfig {
    let mut c = ExperimentConfig { seed: 11, ..ExperimentConfig::default() };
    c.workload.per_sender_rate = 10.0;
    c
}

#[test]
fn every_scheme_runs_on_one_config() {
    let mut c = light();
    c.horizon = 40.0;
    c.measure_start = 20.0;
    c.measure_end = 35.0;
    let topo = c.build_topology().unwrap();
    let stream = c.build_stream(&topo).unwrap();
    for kind in SchemeKind::ALL {
        c.scheme.name = kind;
        assert_eq!(c.build_stream(&topo).unwrap(), stream, "{kind}");
        let out = run_experiment(&c).unwrap();
        let m = &out.metrics;
        assert_eq!(m.scheme, kind.name());
        assert!((0.0..=1.0).contains(&m.success_ratio) && (0.0..=1.0).contains(&m.normalized_throughput), "{kind}");
        assert!(m.delivered_volume <= m.generated_volume + 1e-9, "{kind}");
        assert_eq!(m.completed + m.failed, m.generated, "{kind}");
        for t in &out.sim.transactions {
            assert!(0 <= t.delivered && t.delivered <= t.amount);
        }
    }
}

#[test]
fn capacity_sweep_is_monotone_for_spider() {
    let axis = SweepAxis {
        key: "topology.capacity".into(),
        values: [500.0, 2000.0, 8000.0].map(toml::Value::Float).to_vec(),
    };
    let res = sweep(&light(), &axis, &[1, 2, 3]).unwrap();
    assert_eq!(res.runs.iter().map(Vec::len).sum::<usize>(), 9);
    let means: Vec<f64> = res.rows.iter().map(|r| r.success_mean).collect();
    assert!(means.windows(2).all(|w| w[0] <= w[1]), "{means:?}");
    for r in &res.rows {
        assert!(r.success_min <= r.success_mean && r.success_mean <= r.success_max);
    }
}

#[test]
fn balanced_scheme_with_ample_capacity_saturates() {
    let mut c = light();
    c.topology.capacity = 16000.0;
    let m = run_experiment(&c).unwrap().metrics;
    assert!((0.9..=1.0).contains(&m.normalized_throughput), "{}", m.normalized_throughput);
}

#[test]
fn deadlock3_golden() {
    let c = ExperimentConfig {
        scenario: Some("deadlock3".into()),
        horizon: 60.0,
        measure_start: 35.0,
        measure_end: 55.0,
        ..ExperimentConfig::default()
    };
    let out = run_experiment(&c).unwrap();
    assert!(out.metrics.normalized_throughput < 1.0);
    let (_, json) = emit_results(&out.metrics, OutputFormat::Json).unwrap().remove(0);
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden/deadlock3_spider.json");
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &json).unwrap();
    }
    let frozen = std::fs::read_to_string(&path).expect("golden file present");
    assert_eq!(json, frozen);
}
