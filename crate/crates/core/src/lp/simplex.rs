//! Dense two-phase tableau simplex with Bland's rule.

use super::{LpError, Sense};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RawStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone)]
pub struct RawSolution {
    pub status: RawStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// One multiplier per input row, in the sign convention of the input row
    /// (nonnegative for `Le` rows of a maximization).
    pub duals: Vec<f64>,
    pub iterations: usize,
}

pub struct DenseRow<'a> {
    pub coefs: &'a [(usize, f64)],
    pub sense: Sense,
    pub rhs: f64,
}

const EPS: f64 = 1e-9;

struct Tableau {
    m: usize,
    width: usize,
    a: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.width + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.width;
        let p = self.a[pr * w + pc];
        for c in 0..w {
            self.a[pr * w + c] /= p;
        }
        self.a[pr * w + pc] = 1.0;
        let prow: Vec<f64> = self.a[pr * w..(pr + 1) * w].to_vec();
        // rows 0..m are constraints, m is the objective
        for r in 0..=self.m {
            if r == pr {
                continue;
            }
            let f = self.a[r * w + pc];
            if f != 0.0 {
                let row = &mut self.a[r * w..(r + 1) * w];
                for (x, &y) in row.iter_mut().zip(&prow) {
                    *x -= f * y;
                }
                row[pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
    }

    /// Minimizes the objective row (stored as reduced costs) over columns
    /// `allowed`. Returns false if unbounded.
    fn run(&mut self, allowed: &dyn Fn(usize) -> bool, iters: &mut usize, max_iters: usize) -> Result<bool, LpError> {
        let rhs = self.width - 1;
        loop {
            if *iters >= max_iters {
                return Err(LpError::NumericalFailure(format!("no convergence after {max_iters} pivots")));
            }
            let Some(pc) = (0..rhs).find(|&c| allowed(c) && self.at(self.m, c) < -EPS) else {
                return Ok(true);
            };
            let mut best: Option<(f64, usize, usize)> = None;
            for r in 0..self.m {
                let v = self.at(r, pc);
                if v > EPS {
                    let ratio = self.at(r, rhs) / v;
                    let better = match best {
                        None => true,
                        Some((br, _, bvar)) => ratio < br - EPS || (ratio <= br + EPS && self.basis[r] < bvar),
                    };
                    if better {
                        best = Some((ratio, r, self.basis[r]));
                    }
                }
            }
            let Some((_, pr, _)) = best else {
                return Ok(false);
            };
            self.pivot(pr, pc);
            *iters += 1;
        }
    }
}

/// Maximizes `c·x` subject to `rows`, `x ≥ 0`.
pub fn maximize(n: usize, c: &[f64], rows: &[DenseRow<'_>], max_iters: usize) -> Result<RawSolution, LpError> {
    let m = rows.len();
    // normalize to nonnegative rhs
    let mut flip = vec![false; m];
    let mut senses = Vec::with_capacity(m);
    for (i, r) in rows.iter().enumerate() {
        if !r.rhs.is_finite() {
            return Err(LpError::NumericalFailure(format!("row {i} has non-finite rhs")));
        }
        flip[i] = r.rhs < 0.0;
        senses.push(match (r.sense, flip[i]) {
            (s, false) => s,
            (Sense::Le, true) => Sense::Ge,
            (Sense::Ge, true) => Sense::Le,
            (Sense::Eq, true) => Sense::Eq,
        });
    }
    let n_slack = senses.iter().filter(|&&s| s != Sense::Eq).count();
    let n_art = senses.iter().filter(|&&s| s != Sense::Le).count();
    let art_start = n + n_slack;
    let width = n + n_slack + n_art + 1;
    let mut t = Tableau { m, width, a: vec![0.0; (m + 1) * width], basis: vec![0; m] };
    let mut unit_col = vec![0; m];
    let (mut s_next, mut a_next) = (n, art_start);
    for (i, r) in rows.iter().enumerate() {
        let sign = if flip[i] { -1.0 } else { 1.0 };
        for &(j, v) in r.coefs {
            t.a[i * width + j] += sign * v;
        }
        t.a[i * width + width - 1] = sign * r.rhs;
        match senses[i] {
            Sense::Le => {
                t.a[i * width + s_next] = 1.0;
                t.basis[i] = s_next;
                unit_col[i] = s_next;
                s_next += 1;
            }
            Sense::Ge => {
                t.a[i * width + s_next] = -1.0;
                s_next += 1;
                t.a[i * width + a_next] = 1.0;
                t.basis[i] = a_next;
                unit_col[i] = a_next;
                a_next += 1;
            }
            Sense::Eq => {
                t.a[i * width + a_next] = 1.0;
                t.basis[i] = a_next;
                unit_col[i] = a_next;
                a_next += 1;
            }
        }
    }

    let mut iters = 0;
    if n_art > 0 {
        // phase 1: minimize the sum of artificials
        for i in 0..m {
            if t.basis[i] >= art_start {
                for c in 0..width {
                    let v = t.a[i * width + c];
                    t.a[m * width + c] -= v;
                }
            }
        }
        for c in art_start..width - 1 {
            t.a[m * width + c] = 0.0;
        }
        t.run(&|_| true, &mut iters, max_iters)?;
        let infeas = -t.at(m, width - 1);
        let scale = rows.iter().map(|r| r.rhs.abs()).fold(1.0, f64::max);
        if infeas > 1e-7 * scale {
            return Ok(RawSolution {
                status: RawStatus::Infeasible,
                x: vec![0.0; n],
                objective: 0.0,
                duals: vec![0.0; m],
                iterations: iters,
            });
        }
        // drive zero-level artificials out of the basis where possible
        for r in 0..m {
            if t.basis[r] >= art_start {
                if let Some(c) = (0..art_start).find(|&c| t.at(r, c).abs() > EPS) {
                    t.pivot(r, c);
                }
            }
        }
    }

    // phase 2 objective row: reduced costs of -c (we minimize -c·x)
    for c in 0..width {
        t.a[m * width + c] = 0.0;
    }
    for j in 0..n {
        t.a[m * width + j] = -c[j];
    }
    for r in 0..m {
        let b = t.basis[r];
        let cb = if b < n { -c[b] } else { 0.0 };
        if cb != 0.0 {
            for col in 0..width {
                let v = t.a[r * width + col];
                t.a[m * width + col] -= cb * v;
            }
        }
    }
    let bounded = t.run(&|col| col < art_start, &mut iters, max_iters)?;
    if !bounded {
        return Ok(RawSolution {
            status: RawStatus::Unbounded,
            x: vec![0.0; n],
            objective: f64::INFINITY,
            duals: vec![0.0; m],
            iterations: iters,
        });
    }
    let mut x = vec![0.0; n];
    for r in 0..m {
        if t.basis[r] < n {
            x[t.basis[r]] = t.at(r, width - 1).max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    // the reduced cost of a row's unit column is that row's multiplier
    let duals = (0..m)
        .map(|i| {
            let y = t.at(m, unit_col[i]);
            if flip[i] {
                -y
            } else {
                y
            }
        })
        .collect();
    Ok(RawSolution { status: RawStatus::Optimal, x, objective, duals, iterations: iters })
}
