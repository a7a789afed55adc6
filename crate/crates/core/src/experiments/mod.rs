//! Experiment configuration, runs, parameter sweeps and result emission.

mod metrics;
mod topology;

pub use metrics::{
    compute_metrics, emit_results, rows_from_csv, rows_to_csv, FlowVolume, MetricsReport, OutputFormat, SizeBucket,
    SummaryRow, BUCKET_HEADER, SUMMARY_HEADER,
};
pub use topology::{gen_topology, CapacitySource, GeneratorKind};

use crate::graph::{GraphError, Topology};
use crate::sim::{secs, tokens, QueuePolicy, RebalanceConfig, RebalanceMode, Sim, SimConfig, SimReport, Transaction};
use crate::transport::{build_scheme, SchemeKind, SchemeParams};
use crate::workload::{Scenario, SizeDistribution, WorkloadError, WorkloadSpec};
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error in `{field}`: {msg}")]
    Config { field: String, msg: String },
    #[error("topology generation failed: {0}")]
    GenerationFailed(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Workload(#[from] WorkloadError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

fn config_err(field: &str, msg: impl Into<String>) -> ExperimentError {
    ExperimentError::Config { field: field.into(), msg: msg.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopologyKind {
    SmallWorld,
    ScaleFree,
    File,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologyConfig {
    pub kind: TopologyKind,
    pub nodes: usize,
    pub edges: usize,
    /// Topology file for `kind = "file"`.
    pub path: Option<PathBuf>,
    /// Mean channel capacity, tokens.
    pub capacity: f64,
    /// Empirical capacity distribution; uniform when absent.
    pub capacity_file: Option<PathBuf>,
    /// Per-hop delay, seconds.
    pub delay: f64,
}

impl Default for TopologyConfig {
    fn default() -> Self {
        TopologyConfig {
            kind: TopologyKind::ScaleFree,
            nodes: 10,
            edges: 25,
            path: None,
            capacity: 4000.0,
            capacity_file: None,
            delay: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemeConfig {
    pub name: SchemeKind,
    #[serde(flatten)]
    pub params: SchemeParams,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig { name: SchemeKind::Spider, params: SchemeParams::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub policy: QueuePolicy,
    /// Per-direction queue bound, tokens.
    pub queue_bound: f64,
    /// Queueing delay above which units are marked, seconds.
    pub marking_threshold: f64,
    /// Tokens a node routes between rebalancing events; none disables.
    pub rebalance_trigger: Option<f64>,
    pub rebalance_mode: RebalanceMode,
    pub rebalance_delay: f64,
    pub stats_window: f64,
    pub snapshot_interval: f64,
    pub log_events: bool,
    pub audit: bool,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            policy: QueuePolicy::Lifo,
            queue_bound: 12_000.0,
            marking_threshold: 0.3,
            rebalance_trigger: None,
            rebalance_mode: RebalanceMode::Equalize,
            rebalance_delay: 0.0,
            stats_window: 1.0,
            snapshot_interval: 1.0,
            log_events: false,
            audit: false,
        }
    }
}

impl SimSection {
    pub fn to_sim_config(&self) -> SimConfig {
        SimConfig {
            policy: self.policy,
            queue_bound: tokens(self.queue_bound),
            marking_threshold: secs(self.marking_threshold),
            rebalance: self.rebalance_trigger.map(|r| RebalanceConfig {
                trigger: tokens(r),
                mode: self.rebalance_mode,
                delay: secs(self.rebalance_delay),
            }),
            stats_window: self.stats_window,
            snapshot_interval: (self.snapshot_interval > 0.0).then(|| secs(self.snapshot_interval)),
            log_events: self.log_events,
            audit: self.audit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Simulated seconds.
    pub horizon: f64,
    pub measure_start: f64,
    pub measure_end: f64,
    /// Built-in scenario name; replaces the topology and workload sections.
    pub scenario: Option<String>,
    pub topology: TopologyConfig,
    pub workload: WorkloadSpec,
    pub scheme: SchemeConfig,
    pub sim: SimSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 1,
            horizon: 110.0,
            measure_start: 80.0,
            measure_end: 100.0,
            scenario: None,
            topology: TopologyConfig::default(),
            workload: WorkloadSpec::default(),
            scheme: SchemeConfig::default(),
            sim: SimSection::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ExperimentError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let field = e.span().map(|s| text[s].lines().next().unwrap_or("").trim().to_string()).unwrap_or_default();
            config_err(&field, e.message())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let positive = |field: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(config_err(field, format!("must be positive, got {v}")))
            }
        };
        positive("horizon", self.horizon)?;
        if !(0.0 <= self.measure_start && self.measure_start < self.measure_end && self.measure_end <= self.horizon) {
            return Err(config_err(
                "measure_start",
                format!("window [{}, {}] must lie in [0, horizon]", self.measure_start, self.measure_end),
            ));
        }
        if let Some(s) = &self.scenario {
            if Scenario::builtin(s).is_none() {
                return Err(config_err("scenario", format!("unknown scenario `{s}`")));
            }
        }
        let t = &self.topology;
        positive("topology.capacity", t.capacity)?;
        positive("topology.delay", t.delay)?;
        if t.kind == TopologyKind::File && t.path.is_none() && self.scenario.is_none() {
            return Err(config_err("topology.path", "required when kind = \"file\""));
        }
        let p = &self.scheme.params;
        positive("scheme.mtu", p.mtu)?;
        positive("scheme.alpha", p.alpha)?;
        positive("scheme.beta", p.beta)?;
        positive("scheme.initial_window", p.initial_window)?;
        positive("scheme.blacklist", p.blacklist)?;
        positive("scheme.price_probe.tau", p.price_probe.tau)?;
        if p.k == 0 {
            return Err(config_err("scheme.k", "must be at least 1"));
        }
        let s = &self.sim;
        positive("sim.queue_bound", s.queue_bound)?;
        positive("sim.marking_threshold", s.marking_threshold)?;
        positive("sim.stats_window", s.stats_window)?;
        if let Some(r) = s.rebalance_trigger {
            positive("sim.rebalance_trigger", r)?;
        }
        if s.rebalance_delay < 0.0 {
            return Err(config_err("sim.rebalance_delay", "must be nonnegative"));
        }
        self.workload.validate().map_err(|e| config_err("workload", e.to_string()))
    }

    pub fn build_topology(&self) -> Result<Topology, ExperimentError> {
        if let Some(s) = &self.scenario {
            return Ok(Scenario::builtin(s).expect("validated").topology);
        }
        let t = &self.topology;
        match t.kind {
            TopologyKind::File => {
                let path = t.path.as_ref().ok_or_else(|| config_err("topology.path", "missing"))?;
                let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Io(format!("{}: {e}", path.display())))?;
                Ok(Topology::parse(&text)?)
            }
            kind => {
                let source = match &t.capacity_file {
                    Some(p) => CapacitySource::Empirical(SizeDistribution::load(p)?),
                    None => CapacitySource::Uniform,
                };
                let gk = if kind == TopologyKind::SmallWorld { GeneratorKind::SmallWorld } else { GeneratorKind::ScaleFree };
                gen_topology(gk, t.nodes, t.edges, &source, t.capacity, t.delay, self.seed)
            }
        }
    }

    /// Transaction stream; depends on the seed and workload only.
    pub fn build_stream(&self, topo: &Topology) -> Result<Vec<Transaction>, ExperimentError> {
        let wseed = self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1);
        if let Some(s) = &self.scenario {
            return Ok(Scenario::builtin(s).expect("validated").arrivals(wseed)?);
        }
        Ok(self.workload.generate(topo.nodes(), self.horizon, wseed)?.1)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub config: ExperimentConfig,
    pub metrics: MetricsReport,
    pub sim: SimReport,
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, ExperimentError> {
    config.validate()?;
    let topo = config.build_topology()?;
    let stream = config.build_stream(&topo)?;
    let scheme = build_scheme(config.scheme.name, &config.scheme.params, &topo);
    let sim = Sim::new(topo, stream, config.sim.to_sim_config(), scheme).run(secs(config.horizon));
    let metrics = compute_metrics(&sim, config.seed, secs(config.measure_start), secs(config.measure_end));
    Ok(ExperimentOutput { config: config.clone(), metrics, sim })
}

/// Sets a dotted key such as `topology.capacity` in a TOML document.
pub fn set_dotted(doc: &mut toml::Value, key: &str, value: toml::Value) -> Result<(), ExperimentError> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = cur.as_table_mut().ok_or_else(|| config_err(key, "not a table"))?;
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = table.entry((*part).to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    Ok(())
}

/// One parameter swept over a list of values.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepAxis {
    pub key: String,
    pub values: Vec<toml::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub key: String,
    pub value: String,
    pub runs: usize,
    pub success_mean: f64,
    pub success_min: f64,
    pub success_max: f64,
    pub throughput_mean: f64,
    pub throughput_min: f64,
    pub throughput_max: f64,
    pub latency_mean: f64,
}

pub const SWEEP_HEADER: [&str; 10] = [
    "key",
    "value",
    "runs",
    "success_mean",
    "success_min",
    "success_max",
    "throughput_mean",
    "throughput_min",
    "throughput_max",
    "latency_mean",
];

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Per value, the reports in seed order.
    pub runs: Vec<Vec<MetricsReport>>,
}

fn value_label(v: &toml::Value) -> String {
    match v {
        toml::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// The configs a sweep runs, one per (value, seed).
pub fn sweep_configs(
    template: &ExperimentConfig,
    axis: &SweepAxis,
    seeds: &[u64],
) -> Result<Vec<Vec<ExperimentConfig>>, ExperimentError> {
    let base = toml::Value::try_from(template).map_err(|e| config_err(&axis.key, e.to_string()))?;
    axis.values
        .iter()
        .map(|v| {
            let mut doc = base.clone();
            set_dotted(&mut doc, &axis.key, v.clone())?;
            seeds
                .iter()
                .map(|&s| {
                    set_dotted(&mut doc, "seed", toml::Value::Integer(s as i64))?;
                    let cfg: ExperimentConfig =
                        doc.clone().try_into().map_err(|e: toml::de::Error| config_err(&axis.key, e.message()))?;
                    cfg.validate()?;
                    Ok(cfg)
                })
                .collect()
        })
        .collect()
}

/// Runs every (value, seed) pair, in parallel when the `parallel` feature is
/// on, and aggregates mean, min and max per value.
pub fn sweep(template: &ExperimentConfig, axis: &SweepAxis, seeds: &[u64]) -> Result<SweepResult, ExperimentError> {
    let grid = sweep_configs(template, axis, seeds)?;
    let flat: Vec<&ExperimentConfig> = grid.iter().flatten().collect();
    #[cfg(feature = "parallel")]
    let results: Vec<Result<MetricsReport, ExperimentError>> = {
        use rayon::prelude::*;
        flat.par_iter().map(|c| run_experiment(c).map(|o| o.metrics)).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<MetricsReport, ExperimentError>> =
        flat.iter().map(|c| run_experiment(c).map(|o| o.metrics)).collect();
    let mut results = results.into_iter();
    let mut rows = Vec::new();
    let mut runs = Vec::new();
    for (v, cfgs) in axis.values.iter().zip(&grid) {
        let reports: Vec<MetricsReport> = (0..cfgs.len()).map(|_| results.next().unwrap()).collect::<Result<_, _>>()?;
        let stat = |f: &dyn Fn(&MetricsReport) -> f64| {
            let xs: Vec<f64> = reports.iter().map(f).collect();
            let mean = xs.iter().sum::<f64>() / xs.len().max(1) as f64;
            (mean, xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        };
        let (sm, smin, smax) = stat(&|r| r.success_ratio);
        let (tm, tmin, tmax) = stat(&|r| r.normalized_throughput);
        let (lm, _, _) = stat(&|r| r.latency_mean);
        rows.push(SweepRow {
            key: axis.key.clone(),
            value: value_label(v),
            runs: reports.len(),
            success_mean: sm,
            success_min: smin,
            success_max: smax,
            throughput_mean: tm,
            throughput_min: tmin,
            throughput_max: tmax,
            latency_mean: lm,
        });
        runs.push(reports);
    }
    Ok(SweepResult { rows, runs })
}

pub const SERIES_HEADER: [&str; 5] = ["time", "arrived", "completed", "delivered", "onchain"];
pub const TRANSACTION_HEADER: [&str; 6] = ["id", "src", "dst", "amount", "arrival", "deadline"];

/// Snapshot series as CSV, times in microseconds and amounts in milli-tokens.
pub fn series_to_csv(report: &SimReport) -> Result<String, ExperimentError> {
    rows_to_csv(&report.series, &SERIES_HEADER)
}

pub fn transactions_to_csv(stream: &[Transaction]) -> Result<String, ExperimentError> {
    rows_to_csv(stream, &TRANSACTION_HEADER)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            horizon: 12.0,
            measure_start: 4.0,
            measure_end: 10.0,
            ..Default::default()
        };
        c.topology.nodes = 6;
        c.topology.edges = 9;
        c.topology.capacity = 400.0;
        c.workload.per_sender_rate = 4.0;
        c.workload.circulation_weight = 2;
        c
    }

    #[test]
    fn toml_round_trip_and_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 3\n[scheme]\nname = \"lnd\"\nk = 2\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.scheme.name, SchemeKind::Lnd);
        assert_eq!(cfg.scheme.params.k, 2);
        assert_eq!(cfg.horizon, 110.0);
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn config_errors_name_the_field() {
        let e = ExperimentConfig::from_toml("measure_start = 90.0\nmeasure_end = 200.0\n").unwrap_err();
        assert!(matches!(e, ExperimentError::Config { ref field, .. } if field == "measure_start"), "{e}");
        let e = ExperimentConfig::from_toml("[topology]\ncapacity = -1.0\n").unwrap_err();
        assert!(matches!(e, ExperimentError::Config { ref field, .. } if field == "topology.capacity"), "{e}");
        let e = ExperimentConfig::from_toml("[sim]\nqueue_bund = 3.0\n").unwrap_err();
        assert!(e.to_string().contains("queue_bund"), "{e}");
    }

    #[test]
    fn zero_demand_run() {
        let mut c = small();
        c.workload.per_sender_rate = 0.0;
        let out = run_experiment(&c).unwrap();
        assert_eq!(out.metrics.success_ratio, 1.0);
        assert_eq!(out.metrics.generated_volume, 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let c = small();
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.metrics, b.metrics);
        assert!(a.metrics.generated > 0);
    }

    #[test]
    fn series_and_stream_csv() {
        let c = small();
        let out = run_experiment(&c).unwrap();
        let text = series_to_csv(&out.sim).unwrap();
        assert!(text.starts_with("time,arrived,completed,delivered,onchain\n"));
        assert_eq!(text.lines().count(), out.sim.series.len() + 1);
        let topo = c.build_topology().unwrap();
        let stream = c.build_stream(&topo).unwrap();
        let back: Vec<Transaction> = rows_from_csv(&transactions_to_csv(&stream).unwrap()).unwrap();
        assert_eq!(back, stream);
    }

    #[test]
    fn single_point_sweep_matches_run() {
        let c = small();
        let axis = SweepAxis { key: "topology.capacity".into(), values: vec![toml::Value::Float(400.0)] };
        let s = sweep(&c, &axis, &[c.seed]).unwrap();
        assert_eq!(s.runs[0][0], run_experiment(&c).unwrap().metrics);
        assert_eq!(s.rows[0].runs, 1);
    }

    #[test]
    fn scheme_sweep_shares_arrivals() {
        let c = small();
        let axis = SweepAxis {
            key: "scheme.name".into(),
            values: ["spider", "lnd"].iter().map(|s| toml::Value::String(s.to_string())).collect(),
        };
        let grid = sweep_configs(&c, &axis, &[5]).unwrap();
        let topo = grid[0][0].build_topology().unwrap();
        assert_eq!(grid[0][0].build_stream(&topo).unwrap(), grid[1][0].build_stream(&topo).unwrap());
        assert_eq!(grid[1][0].scheme.name, SchemeKind::Lnd);
    }
}
