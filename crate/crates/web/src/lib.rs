//! Browser bindings for the fluid-model tools.
//!
//! Every export takes plain-text topology and demand files in the same format
//! the command line reads, and returns a JSON string.

use pcn_core::fluid::{run_primal_dual, t_curve, PdConfig};
use pcn_core::graph::{decompose, DemandMatrix, PathKind, PathSet, Topology};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_HOPS: usize = 6;
const MAX_TRACE_POINTS: usize = 400;

fn net(topology: &str, demand: &str) -> Result<(Topology, DemandMatrix, PathSet), String> {
    let topo = Topology::parse(topology).map_err(|e| format!("topology: {e}"))?;
    let demand = DemandMatrix::parse(demand).map_err(|e| format!("demand: {e}"))?;
    let paths = PathKind::AllTrails { max_hops: MAX_HOPS }
        .path_set(&topo, &demand, 0)
        .map_err(|e| e.to_string())?;
    Ok((topo, demand, paths))
}

fn demand_json(d: &DemandMatrix) -> Value {
    d.iter().map(|((i, j), r)| json!([i, j, r])).collect()
}

pub fn decompose_json(demand: &str) -> Result<String, String> {
    let d = DemandMatrix::parse(demand).map_err(|e| format!("demand: {e}"))?;
    let dec = decompose(&d).map_err(|e| e.to_string())?;
    Ok(json!({
        "value": dec.value,
        "dag_weight": dec.dag.total(),
        "dag_fraction": dec.dag_fraction(),
        "circulation": demand_json(&dec.circulation),
        "dag": demand_json(&dec.dag),
    })
    .to_string())
}

pub fn t_curve_json(topology: &str, demand: &str, max_budget: f64, steps: usize) -> Result<String, String> {
    if !(max_budget > 0.0) || steps == 0 || steps > 200 {
        return Err("budget must be positive and steps in 1..=200".into());
    }
    let (topo, demand, paths) = net(topology, demand)?;
    let grid: Vec<f64> = (0..=steps).map(|i| max_budget * i as f64 / steps as f64).collect();
    let pts = t_curve(&topo, &demand, &paths, 1.0, &grid).map_err(|e| e.to_string())?;
    let total = demand.total();
    Ok(json!({ "demand": total, "points": pts }).to_string())
}

pub fn primal_dual_json(topology: &str, demand: &str, gamma: Option<f64>, max_iters: usize) -> Result<String, String> {
    let (topo, demand, paths) = net(topology, demand)?;
    let cfg = PdConfig { gamma, max_iters, ..PdConfig::default() };
    let res = run_primal_dual(&topo, &demand, &paths, 1.0, &cfg).map_err(|e| e.to_string())?;
    let stride = res.trace.len().div_ceil(MAX_TRACE_POINTS).max(1);
    let trace: Value = res
        .trace
        .iter()
        .enumerate()
        .filter(|(i, _)| i % stride == 0 || *i + 1 == res.trace.len())
        .map(|(_, t)| json!([t.iter, t.throughput, t.avg_throughput, t.violation]))
        .collect();
    let rates: Value = res.rates.iter().map(|(p, r)| json!({ "path": p.nodes(), "rate": r })).collect();
    Ok(json!({
        "iterations": res.iterations,
        "objective": res.objective,
        "throughput": res.rates.total(),
        "trace": trace,
        "rates": rates,
    })
    .to_string())
}

/// Circulation and DAG parts of a demand matrix.
#[wasm_bindgen]
pub fn decompose_demand(demand: &str) -> Result<String, JsValue> {
    decompose_json(demand).map_err(|e| JsValue::from_str(&e))
}

/// Maximum throughput over an evenly spaced rebalancing budget grid.
#[wasm_bindgen]
pub fn throughput_curve(topology: &str, demand: &str, max_budget: f64, steps: usize) -> Result<String, JsValue> {
    t_curve_json(topology, demand, max_budget, steps).map_err(|e| JsValue::from_str(&e))
}

/// Primal-dual run; a negative `gamma` solves the balanced problem.
#[wasm_bindgen]
pub fn primal_dual(topology: &str, demand: &str, gamma: f64, max_iters: usize) -> Result<String, JsValue> {
    let gamma = (gamma >= 0.0).then_some(gamma);
    primal_dual_json(topology, demand, gamma, max_iters).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOPO: &str = include_str!("../../../data/motivating_topology.txt");
    const DEMAND: &str = include_str!("../../../data/motivating_demand.txt");

    fn parse(s: &str) -> Value {
        serde_json::from_str(s).unwrap()
    }

    #[test]
    fn decompose_splits_motivating_demand() {
        let v = parse(&decompose_json(DEMAND).unwrap());
        assert!((v["value"].as_f64().unwrap() - 8.0).abs() < 1e-9);
        assert!((v["dag_weight"].as_f64().unwrap() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn curve_starts_at_circulation_and_reaches_demand() {
        let v = parse(&t_curve_json(TOPO, DEMAND, 16.0, 4).unwrap());
        let pts = v["points"].as_array().unwrap();
        assert_eq!(pts.len(), 5);
        assert!((pts[0]["throughput"].as_f64().unwrap() - 8.0).abs() < 1e-6);
        let last = pts[4]["throughput"].as_f64().unwrap();
        assert!((last - v["demand"].as_f64().unwrap()).abs() < 1e-6);
    }

    #[test]
    fn primal_dual_trace_is_bounded() {
        let v = parse(&primal_dual_json(TOPO, DEMAND, None, 50_000).unwrap());
        assert!(v["trace"].as_array().unwrap().len() <= MAX_TRACE_POINTS + 1);
        assert!((v["throughput"].as_f64().unwrap() - 8.0).abs() < 0.05);
    }

    #[test]
    fn bad_input_is_an_error() {
        assert!(t_curve_json("1 1 5 1", DEMAND, 1.0, 2).is_err());
        assert!(t_curve_json(TOPO, DEMAND, -1.0, 2).is_err());
    }
}
