//! Linear programs over path rates and rebalancing rates.
//!
//! All instances are maximizations with nonnegative variables. The solver is
//! a dense simplex sized for desk-scale instances.

mod simplex;

use crate::graph::{FlowAssignment, NodeId, Path};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write;
use thiserror::Error;

pub use simplex::RawStatus;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LpError {
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("malformed instance: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl Sense {
    fn as_str(self) -> &'static str {
        match self {
            Sense::Le => "le",
            Sense::Eq => "eq",
            Sense::Ge => "ge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowTag {
    Demand,
    Capacity,
    Balance,
    Budget,
}

impl RowTag {
    fn as_str(self) -> &'static str {
        match self {
            RowTag::Demand => "demand",
            RowTag::Capacity => "capacity",
            RowTag::Balance => "balance",
            RowTag::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    Path(Path),
    /// Rebalancing rate added to `from`'s side of the channel to `to`.
    Rebalance { from: NodeId, to: NodeId },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub tag: RowTag,
    /// Free-form identifier such as `1>2` or `2-4`.
    pub label: String,
    pub coefs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LpInstance {
    pub variables: Vec<Variable>,
    pub objective: Vec<f64>,
    pub rows: Vec<Row>,
    pub delta: f64,
    pub gamma: f64,
    pub budget: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LpSolution {
    pub status: LpStatus,
    pub rates: FlowAssignment,
    pub rebalancing: BTreeMap<(NodeId, NodeId), f64>,
    pub objective: f64,
    /// Value of every variable, in instance order.
    pub values: Vec<f64>,
    /// One multiplier per row, in instance order.
    pub duals: Vec<f64>,
    pub dual_objective: f64,
    pub pivots: usize,
}

impl LpSolution {
    pub fn throughput(&self) -> f64 {
        self.rates.total()
    }

    pub fn total_rebalancing(&self) -> f64 {
        self.rebalancing.values().sum()
    }
}

pub const MAX_PIVOTS: usize = 200_000;

impl LpInstance {
    pub fn new(delta: f64, gamma: f64) -> Self {
        LpInstance { variables: Vec::new(), objective: Vec::new(), rows: Vec::new(), delta, gamma, budget: None }
    }

    pub fn add_variable(&mut self, v: Variable, obj: f64) -> usize {
        self.variables.push(v);
        self.objective.push(obj);
        self.variables.len() - 1
    }

    pub fn add_row(&mut self, tag: RowTag, label: impl Into<String>, coefs: Vec<(usize, f64)>, sense: Sense, rhs: f64) {
        self.rows.push(Row { tag, label: label.into(), coefs, sense, rhs });
    }

    pub fn rows_tagged(&self, tag: RowTag) -> impl Iterator<Item = &Row> + '_ {
        self.rows.iter().filter(move |r| r.tag == tag)
    }

    fn validate(&self) -> Result<(), LpError> {
        if self.objective.len() != self.variables.len() {
            return Err(LpError::Malformed("objective length differs from variable count".into()));
        }
        let n = self.variables.len();
        for r in &self.rows {
            if let Some(&(j, _)) = r.coefs.iter().find(|(j, _)| *j >= n) {
                return Err(LpError::Malformed(format!("row {} references variable {j}", r.label)));
            }
            if r.coefs.iter().any(|(_, v)| !v.is_finite()) {
                return Err(LpError::Malformed(format!("row {} has a non-finite coefficient", r.label)));
            }
        }
        Ok(())
    }

    /// Largest constraint violation of `values`, relative to max(1, |rhs|).
    pub fn max_violation(&self, values: &[f64]) -> f64 {
        let mut worst = values.iter().fold(0.0f64, |m, &v| m.max(-v));
        for r in &self.rows {
            let lhs: f64 = r.coefs.iter().map(|&(j, a)| a * values[j]).sum();
            let scale = r.rhs.abs().max(1.0);
            let v = match r.sense {
                Sense::Le => lhs - r.rhs,
                Sense::Ge => r.rhs - lhs,
                Sense::Eq => (lhs - r.rhs).abs(),
            };
            worst = worst.max(v / scale);
        }
        worst
    }

    /// Deterministic text form: parameters, variables, then tagged rows.
    pub fn dump(&self) -> String {
        let mut s = String::from("# pcn lp\n");
        let budget = self.budget.map_or("none".to_string(), |b| b.to_string());
        let _ = writeln!(s, "params delta {} gamma {} budget {}", self.delta, self.gamma, budget);
        for (k, v) in self.variables.iter().enumerate() {
            match v {
                Variable::Path(p) => {
                    let _ = writeln!(s, "var {k} path {p} obj {}", self.objective[k]);
                }
                Variable::Rebalance { from, to } => {
                    let _ = writeln!(s, "var {k} rebal {from} {to} obj {}", self.objective[k]);
                }
            }
        }
        for r in &self.rows {
            let _ = write!(s, "row {} {} {} {}", r.tag.as_str(), r.label, r.sense.as_str(), r.rhs);
            for &(j, a) in &r.coefs {
                let _ = write!(s, " {j}:{a}");
            }
            s.push('\n');
        }
        s
    }

    pub fn load(text: &str) -> Result<Self, LpError> {
        let mut lp = LpInstance::new(1.0, 0.0);
        let mut saw_params = false;
        for (k, line) in text.lines().enumerate() {
            let line_no = k + 1;
            let err = |msg: &str| LpError::Parse { line: line_no, msg: msg.to_string() };
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let toks: Vec<&str> = body.split_whitespace().collect();
            let num = |t: &str| t.parse::<f64>().map_err(|_| err(&format!("bad number '{t}'")));
            match toks[0] {
                "params" => {
                    if toks.len() != 7 || toks[1] != "delta" || toks[3] != "gamma" || toks[5] != "budget" {
                        return Err(err("expected 'params delta D gamma G budget B|none'"));
                    }
                    lp.delta = num(toks[2])?;
                    lp.gamma = num(toks[4])?;
                    lp.budget = if toks[6] == "none" { None } else { Some(num(toks[6])?) };
                    saw_params = true;
                }
                "var" => {
                    let idx: usize = toks.get(1).and_then(|t| t.parse().ok()).ok_or_else(|| err("bad var index"))?;
                    if idx != lp.variables.len() {
                        return Err(err("variables must be numbered consecutively"));
                    }
                    let (v, rest) = match toks.get(2) {
                        Some(&"path") => {
                            let p: Path = toks.get(3).ok_or_else(|| err("missing path"))?.parse().map_err(|_| err("bad path"))?;
                            (Variable::Path(p), &toks[4..])
                        }
                        Some(&"rebal") if toks.len() >= 5 => {
                            let from = toks[3].parse().map_err(|_| err("bad node"))?;
                            let to = toks[4].parse().map_err(|_| err("bad node"))?;
                            (Variable::Rebalance { from, to }, &toks[5..])
                        }
                        _ => return Err(err("expected 'path' or 'rebal'")),
                    };
                    if rest.len() != 2 || rest[0] != "obj" {
                        return Err(err("expected 'obj C'"));
                    }
                    lp.add_variable(v, num(rest[1])?);
                }
                "row" => {
                    if toks.len() < 5 {
                        return Err(err("expected 'row TAG LABEL SENSE RHS [j:a ...]'"));
                    }
                    let tag = match toks[1] {
                        "demand" => RowTag::Demand,
                        "capacity" => RowTag::Capacity,
                        "balance" => RowTag::Balance,
                        "budget" => RowTag::Budget,
                        t => return Err(err(&format!("unknown tag '{t}'"))),
                    };
                    let sense = match toks[3] {
                        "le" => Sense::Le,
                        "eq" => Sense::Eq,
                        "ge" => Sense::Ge,
                        t => return Err(err(&format!("unknown sense '{t}'"))),
                    };
                    let rhs = num(toks[4])?;
                    let mut coefs = Vec::new();
                    for t in &toks[5..] {
                        let (j, a) = t.split_once(':').ok_or_else(|| err("coefficient must be j:a"))?;
                        coefs.push((j.parse().map_err(|_| err("bad column"))?, num(a)?));
                    }
                    lp.add_row(tag, toks[2], coefs, sense, rhs);
                }
                t => return Err(err(&format!("unknown record '{t}'"))),
            }
        }
        if !saw_params {
            return Err(LpError::Parse { line: 0, msg: "missing params line".into() });
        }
        lp.validate()?;
        Ok(lp)
    }
}

pub fn solve_lp(lp: &LpInstance) -> Result<LpSolution, LpError> {
    lp.validate()?;
    let rows: Vec<simplex::DenseRow<'_>> = lp
        .rows
        .iter()
        .map(|r| simplex::DenseRow { coefs: &r.coefs, sense: r.sense, rhs: r.rhs })
        .collect();
    let raw = simplex::maximize(lp.variables.len(), &lp.objective, &rows, MAX_PIVOTS)?;
    let status = match raw.status {
        RawStatus::Optimal => LpStatus::Optimal,
        RawStatus::Infeasible => LpStatus::Infeasible,
        RawStatus::Unbounded => LpStatus::Unbounded,
    };
    let mut rates = FlowAssignment::new();
    let mut rebalancing = BTreeMap::new();
    for (k, v) in lp.variables.iter().enumerate() {
        let x = raw.x[k];
        match v {
            Variable::Path(p) => rates.add(p.clone(), x),
            Variable::Rebalance { from, to } => {
                rebalancing.insert((*from, *to), x);
            }
        }
    }
    let dual_objective = lp.rows.iter().zip(&raw.duals).map(|(r, y)| r.rhs * y).sum();
    Ok(LpSolution {
        status,
        rates,
        rebalancing,
        objective: raw.objective,
        values: raw.x,
        duals: raw.duals,
        dual_objective,
        pivots: raw.iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> LpInstance {
        // max 3a + 2b  s.t. a + b <= 4, a + 3b <= 9, a <= 3
        let mut lp = LpInstance::new(1.0, 0.0);
        let a = lp.add_variable(Variable::Path("1-2".parse().unwrap()), 3.0);
        let b = lp.add_variable(Variable::Path("1-3-2".parse().unwrap()), 2.0);
        lp.add_row(RowTag::Capacity, "r1", vec![(a, 1.0), (b, 1.0)], Sense::Le, 4.0);
        lp.add_row(RowTag::Capacity, "r2", vec![(a, 1.0), (b, 3.0)], Sense::Le, 9.0);
        lp.add_row(RowTag::Demand, "r3", vec![(a, 1.0)], Sense::Le, 3.0);
        lp
    }

    #[test]
    fn small_maximization_with_duals() {
        let sol = solve_lp(&tiny()).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective - 11.0).abs() < 1e-9);
        assert!((sol.values[0] - 3.0).abs() < 1e-9 && (sol.values[1] - 1.0).abs() < 1e-9);
        assert!((sol.dual_objective - sol.objective).abs() < 1e-9);
        assert!((sol.duals[0] - 2.0).abs() < 1e-9 && sol.duals[1].abs() < 1e-9 && (sol.duals[2] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn infeasible_forced_demand() {
        let mut lp = LpInstance::new(1.0, 0.0);
        lp.add_row(RowTag::Demand, "1>2", vec![], Sense::Eq, 1.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Infeasible);
    }

    #[test]
    fn unbounded_detected() {
        let mut lp = LpInstance::new(1.0, 0.0);
        let a = lp.add_variable(Variable::Rebalance { from: 1, to: 2 }, 1.0);
        lp.add_row(RowTag::Balance, "x", vec![(a, -1.0)], Sense::Le, 0.0);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn equality_and_negative_rhs() {
        // max a + b  s.t. a - b = 0, -a >= -2
        let mut lp = LpInstance::new(1.0, 0.0);
        let a = lp.add_variable(Variable::Path("1-2".parse().unwrap()), 1.0);
        let b = lp.add_variable(Variable::Path("2-1".parse().unwrap()), 1.0);
        lp.add_row(RowTag::Balance, "1-2", vec![(a, 1.0), (b, -1.0)], Sense::Eq, 0.0);
        lp.add_row(RowTag::Capacity, "1-2", vec![(a, -1.0)], Sense::Ge, -2.0);
        let sol = solve_lp(&lp).unwrap();
        assert!((sol.objective - 4.0).abs() < 1e-9);
        assert!((sol.dual_objective - 4.0).abs() < 1e-9);
        assert!(lp.max_violation(&sol.values) < 1e-9);
    }

    #[test]
    fn dump_load_round_trip() {
        let mut lp = tiny();
        lp.budget = Some(2.5);
        lp.add_variable(Variable::Rebalance { from: 2, to: 1 }, -0.5);
        let text = lp.dump();
        let back = LpInstance::load(&text).unwrap();
        assert_eq!(back, lp);
        assert_eq!(back.dump(), text);
        assert!(LpInstance::load("var 0 path 1-2 obj 1\n").is_err());
    }
}
