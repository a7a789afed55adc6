use clap::{Args, Parser, Subcommand, ValueEnum};
use pcn_core::experiments::{
    emit_results, gen_topology, rows_to_csv, run_experiment, series_to_csv, sweep, transactions_to_csv, CapacitySource,
    ExperimentConfig, ExperimentError, GeneratorKind, MetricsReport, OutputFormat, SummaryRow, SweepAxis,
    SUMMARY_HEADER, SWEEP_HEADER,
};
use pcn_core::fluid::{
    build_balanced_lp, build_bounded_rebalancing_lp, build_rebalancing_lp, run_primal_dual, t_curve, FluidError,
    PdConfig,
};
use pcn_core::graph::{decompose, greedy_cycle_removal, DemandMatrix, FlowAssignment, GraphError, PathKind, PathSet, Topology};
use pcn_core::lp::{solve_lp, LpError, LpStatus};
use pcn_core::workload::{SizeDistribution, WorkloadError};
use serde_json::{json, Value};
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "pcn", version, about = "Payment channel network throughput bounds and routing simulation")]
struct Cli {
    /// Seed for every random choice; overrides the seed in config files.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a demand matrix into its maximum circulation and DAG remainder.
    Decompose {
        #[arg(long)]
        demand: PathBuf,
        /// Use greedy cycle removal instead of the exact method.
        #[arg(long)]
        greedy: bool,
    },
    /// Solve the balanced or rebalancing throughput LP.
    FluidSolve {
        #[command(flatten)]
        net: NetArgs,
        /// Cost per unit of on-chain rebalancing; enables rebalancing.
        #[arg(long)]
        gamma: Option<f64>,
        /// Bound on total rebalancing rate; enables rebalancing.
        #[arg(long)]
        budget: Option<f64>,
    },
    /// Run the decentralized primal-dual iteration.
    PrimalDual {
        #[command(flatten)]
        net: NetArgs,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long, default_value_t = 100_000)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        /// Write the per-iteration trace as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Also solve the LP and report the relative gap.
        #[arg(long)]
        compare: bool,
    },
    /// Maximum throughput as a function of the rebalancing budget.
    TCurve {
        #[command(flatten)]
        net: NetArgs,
        /// Comma-separated increasing budgets.
        #[arg(long, value_delimiter = ',', default_value = "0,1,2,4,8")]
        grid: Vec<f64>,
    },
    /// Generate a random connected topology.
    TopoGen {
        #[arg(long, value_enum, default_value_t = TopoKind::Scalefree)]
        kind: TopoKind,
        #[arg(long, default_value_t = 10)]
        nodes: usize,
        #[arg(long, default_value_t = 25)]
        edges: usize,
        /// Mean channel capacity, tokens.
        #[arg(long, default_value_t = 4000.0)]
        capacity: f64,
        /// Empirical capacity distribution file.
        #[arg(long)]
        capacity_file: Option<PathBuf>,
        /// Per-hop delay, seconds.
        #[arg(long, default_value_t = 0.03)]
        delay: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate the transaction stream of an experiment config as CSV.
    WorkloadGen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one simulation.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides the scheme in the config.
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long, default_value = "json")]
        format: OutputFormat,
        /// Directory for result files and the resolved config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the event log here.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Write the snapshot series as CSV here.
        #[arg(long)]
        series: Option<PathBuf>,
    },
    /// Run a config over a list of values for one parameter and several seeds.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dotted parameter key, e.g. `topology.capacity`.
        #[arg(long)]
        key: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        /// Number of consecutive seeds starting at the base seed.
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tabulate metrics.json files.
    Report {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value = "csv")]
        format: OutputFormat,
    },
}

#[derive(Args)]
struct NetArgs {
    /// Topology file: `u v capacity delay_ms` per line.
    #[arg(long)]
    topology: PathBuf,
    /// Demand file: `i j rate` per line.
    #[arg(long)]
    demand: PathBuf,
    #[arg(long, value_enum, default_value_t = Paths::Trails)]
    paths: Paths,
    /// Paths per pair for k-path rules.
    #[arg(long, default_value_t = 4)]
    k: usize,
    /// Hop limit for `trails`.
    #[arg(long, default_value_t = 10)]
    max_hops: usize,
    /// Round-trip time funds stay locked, seconds.
    #[arg(long, default_value_t = 1.0)]
    delta: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Paths {
    Trails,
    Widest,
    Shortest,
    Yen,
}

#[derive(Clone, Copy, ValueEnum)]
enum TopoKind {
    Smallworld,
    Scalefree,
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }
}

impl From<GraphError> for Failure {
    fn from(e: GraphError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<LpError> for Failure {
    fn from(e: LpError) -> Self {
        match e {
            LpError::NumericalFailure(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<FluidError> for Failure {
    fn from(e: FluidError) -> Self {
        match e {
            FluidError::NotOptimal(_) | FluidError::NotConverged(_) | FluidError::Diverged(_) => {
                Failure::Numerical(e.to_string())
            }
            FluidError::Lp(l) => l.into(),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<WorkloadError> for Failure {
    fn from(e: WorkloadError) -> Self {
        Failure::Input(e.to_string())
    }
}

type Out = Result<(), Failure>;

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Out {
    std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Out {
    match out {
        Some(p) => write(p, text),
        None => {
            // A closed pipe (e.g. `| head`) is not an error.
            let _ = std::io::stdout().lock().write_all(text.as_bytes());
            Ok(())
        }
    }
}

fn print_json(v: &Value) -> Out {
    emit(None, &(serde_json::to_string_pretty(v).expect("json values serialize") + "\n"))
}

fn demand_json(d: &DemandMatrix) -> Value {
    d.iter().map(|((i, j), r)| json!([i, j, r])).collect()
}

fn flows_json(f: &FlowAssignment) -> Value {
    f.iter().map(|(p, r)| json!({ "path": p.nodes(), "rate": r })).collect()
}

fn load_net(a: &NetArgs) -> Result<(Topology, DemandMatrix, PathSet), Failure> {
    let topo = Topology::parse(&read(&a.topology)?)?;
    let demand = DemandMatrix::parse(&read(&a.demand)?)?;
    let kind = match a.paths {
        Paths::Trails => PathKind::AllTrails { max_hops: a.max_hops },
        Paths::Widest => PathKind::EdgeDisjointWidest,
        Paths::Shortest => PathKind::EdgeDisjointShortest,
        Paths::Yen => PathKind::Yen,
    };
    let paths = kind.path_set(&topo, &demand, a.k)?;
    Ok((topo, demand, paths))
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::from_toml(&read(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn toml_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

fn run(cli: Cli) -> Out {
    match cli.command {
        Command::Decompose { demand, greedy } => {
            let d = DemandMatrix::parse(&read(&demand)?)?;
            let dec = if greedy { greedy_cycle_removal(&d)? } else { decompose(&d)? };
            print_json(&json!({
                "value": dec.value,
                "dag_weight": dec.dag.total(),
                "dag_fraction": dec.dag_fraction(),
                "circulation": demand_json(&dec.circulation),
                "dag": demand_json(&dec.dag),
            }))
        }
        Command::FluidSolve { net, gamma, budget } => {
            let (topo, demand, paths) = load_net(&net)?;
            let lp = match (gamma, budget) {
                (None, None) => build_balanced_lp(&topo, &demand, &paths, net.delta)?,
                (g, None) => build_rebalancing_lp(&topo, &demand, &paths, net.delta, g.unwrap_or(0.0))?,
                (g, Some(b)) => build_bounded_rebalancing_lp(&topo, &demand, &paths, net.delta, g.unwrap_or(0.0), b)?,
            };
            let sol = solve_lp(&lp)?;
            if sol.status != LpStatus::Optimal {
                return Err(Failure::Numerical(format!("solver returned {:?}", sol.status)));
            }
            let rebal: Value = sol.rebalancing.iter().filter(|(_, &b)| b > 0.0).map(|(&(u, v), b)| json!([u, v, b])).collect();
            print_json(&json!({
                "status": sol.status,
                "objective": sol.objective,
                "throughput": sol.throughput(),
                "total_rebalancing": sol.total_rebalancing(),
                "pivots": sol.pivots,
                "rates": flows_json(&sol.rates),
                "rebalancing": rebal,
            }))
        }
        Command::PrimalDual { net, gamma, max_iters, tol, trace, compare } => {
            let (topo, demand, paths) = load_net(&net)?;
            let cfg = PdConfig { gamma, max_iters, tol, ..PdConfig::default() };
            let res = run_primal_dual(&topo, &demand, &paths, net.delta, &cfg)?;
            if let Some(p) = trace {
                let mut s = String::from("iter,throughput,avg_throughput,violation,change\n");
                for t in &res.trace {
                    let _ = writeln!(s, "{},{},{},{},{}", t.iter, t.throughput, t.avg_throughput, t.violation, t.change);
                }
                write(&p, &s)?;
            }
            let mut v = json!({
                "objective": res.objective,
                "iterations": res.iterations,
                "throughput": res.rates.total(),
                "rates": flows_json(&res.rates),
                "lambda": res.prices.lambda,
            });
            if compare {
                let lp = match gamma {
                    None => build_balanced_lp(&topo, &demand, &paths, net.delta)?,
                    Some(g) => build_rebalancing_lp(&topo, &demand, &paths, net.delta, g)?,
                };
                let sol = solve_lp(&lp)?;
                v["lp_objective"] = json!(sol.objective);
                v["relative_gap"] = json!((res.objective - sol.objective).abs() / sol.objective.abs().max(1e-12));
            }
            print_json(&v)
        }
        Command::TCurve { net, grid } => {
            let (topo, demand, paths) = load_net(&net)?;
            let pts = t_curve(&topo, &demand, &paths, net.delta, &grid)?;
            let mut s = String::from("budget,throughput\n");
            for p in pts {
                let _ = writeln!(s, "{},{}", p.budget, p.throughput);
            }
            emit(None, &s)
        }
        Command::TopoGen { kind, nodes, edges, capacity, capacity_file, delay, out } => {
            let source = match capacity_file {
                Some(p) => CapacitySource::Empirical(SizeDistribution::load(&p)?),
                None => CapacitySource::Uniform,
            };
            let gk = match kind {
                TopoKind::Smallworld => GeneratorKind::SmallWorld,
                TopoKind::Scalefree => GeneratorKind::ScaleFree,
            };
            let topo = gen_topology(gk, nodes, edges, &source, capacity, delay, cli.seed.unwrap_or(1))?;
            emit(out.as_deref(), &topo.to_text())
        }
        Command::WorkloadGen { config, horizon, out } => {
            let mut cfg = load_config(config.as_deref(), cli.seed)?;
            if let Some(h) = horizon {
                cfg.horizon = h;
                cfg.measure_start = cfg.measure_start.min(h / 2.0);
                cfg.measure_end = cfg.measure_end.min(h);
            }
            cfg.validate()?;
            let topo = cfg.build_topology()?;
            let stream = cfg.build_stream(&topo)?;
            emit(out.as_deref(), &transactions_to_csv(&stream)?)
        }
        Command::Simulate { config, scheme, format, out, log, series } => {
            let mut cfg = load_config(config.as_deref(), cli.seed)?;
            if let Some(s) = scheme {
                cfg.scheme.name = s.parse().map_err(Failure::Input)?;
            }
            if log.is_some() {
                cfg.sim.log_events = true;
            }
            let res = run_experiment(&cfg)?;
            if let (Some(p), Some(text)) = (&log, &res.sim.log) {
                write(p, text)?;
            }
            if let Some(p) = &series {
                write(p, &series_to_csv(&res.sim)?)?;
            }
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
                    write(&dir.join("config.toml"), &res.config.to_toml())?;
                    for (name, text) in emit_results(&res.metrics, format)? {
                        write(&dir.join(name), &text)?;
                    }
                    Ok(())
                }
                None => match format {
                    OutputFormat::Json => print_json(&json!({ "config": res.config, "metrics": res.metrics })),
                    OutputFormat::Csv => emit(None, &rows_to_csv(&[SummaryRow::from(&res.metrics)], &SUMMARY_HEADER)?),
                },
            }
        }
        Command::Sweep { config, key, values, seeds, out } => {
            let cfg = load_config(config.as_deref(), cli.seed)?;
            let axis = SweepAxis { key, values: values.iter().map(|v| toml_value(v)).collect() };
            let seed_list: Vec<u64> = (0..seeds).map(|i| cfg.seed + i).collect();
            let res = sweep(&cfg, &axis, &seed_list)?;
            emit(out.as_deref(), &rows_to_csv(&res.rows, &SWEEP_HEADER)?)
        }
        Command::Report { inputs, format } => {
            let mut reports = Vec::new();
            for p in &inputs {
                let r: MetricsReport = serde_json::from_str(&read(p)?)
                    .map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
                reports.push(r);
            }
            let rows: Vec<SummaryRow> = reports.iter().map(SummaryRow::from).collect();
            match format {
                OutputFormat::Csv => emit(None, &rows_to_csv(&rows, &SUMMARY_HEADER)?),
                OutputFormat::Json => print_json(&json!(rows)),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = match &f {
                Failure::Input(m) | Failure::Numerical(m) => m,
            };
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
