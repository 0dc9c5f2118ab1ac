//! Linear programming: a bounded-variable revised primal simplex.
//!
//! Problems are maximizations `max cᵀx` subject to sparse rows `a_i x (<=|>=|=) b_i`
//! and finite variable bounds. Each row gets a logical variable `s_i = a_i x`
//! whose bounds encode the row sense, so the solver works on `A x - s = 0`
//! with every variable boxed or half-boxed.

mod lu;
mod simplex;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;

pub use simplex::LpOptions;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// A maximization LP with finite bounds on every column.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct LpInstance {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub rows: Vec<Row>,
    /// Optional column names used by the text export.
    #[serde(default)]
    pub names: Vec<String>,
}

impl LpInstance {
    /// `n` columns in `[0, 1]` with zero objective.
    pub fn new(n: usize) -> Self {
        Self {
            objective: vec![0.0; n],
            lower: vec![0.0; n],
            upper: vec![1.0; n],
            rows: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn n_cols(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn add_column(&mut self, cost: f64, lower: f64, upper: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lower);
        self.upper.push(upper);
        self.objective.len() - 1
    }

    pub fn add_row(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.rows.push(Row { coeffs, sense, rhs });
        self.rows.len() - 1
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_cols();
        if self.lower.len() != n || self.upper.len() != n {
            return Err(Error::shape("bounds must match the objective length"));
        }
        if self.objective.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("objective coefficients must be finite"));
        }
        if self.lower.iter().chain(&self.upper).any(|b| !b.is_finite()) {
            return Err(Error::invalid("column bounds must be finite"));
        }
        for (i, r) in self.rows.iter().enumerate() {
            if !r.rhs.is_finite() {
                return Err(Error::invalid(format!("row {i}: right-hand side must be finite")));
            }
            if let Some(&(j, v)) = r.coeffs.iter().find(|&&(j, v)| j >= n || !v.is_finite()) {
                return Err(Error::invalid(format!("row {i}: bad coefficient {v} on column {j}")));
            }
        }
        Ok(())
    }

    /// `a_i x` for every row.
    pub fn row_activity(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.coeffs.iter().map(|&(j, v)| v * x[j]).sum())
            .collect()
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest bound or row violation of `x`.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.n_cols() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for (r, act) in self.rows.iter().zip(self.row_activity(x)) {
            let v = match r.sense {
                Sense::Le => act - r.rhs,
                Sense::Ge => r.rhs - act,
                Sense::Eq => (act - r.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Lagrangian upper bound `max_x cᵀx + yᵀ(b - Ax)` over the bound box and
    /// the row senses, for row multipliers `y` (`y_i >= 0` on `<=` rows,
    /// `<= 0` on `>=` rows). Infinite if `y` has the wrong sign.
    pub fn dual_bound(&self, y: &[f64]) -> f64 {
        let mut d = self.objective.clone();
        let mut bound = 0.0;
        for (r, &yi) in self.rows.iter().zip(y) {
            let sign_ok = match r.sense {
                Sense::Le => yi >= 0.0,
                Sense::Ge => yi <= 0.0,
                Sense::Eq => true,
            };
            if !sign_ok {
                return f64::INFINITY;
            }
            bound += yi * r.rhs;
            for &(j, v) in &r.coeffs {
                d[j] -= yi * v;
            }
        }
        for j in 0..self.n_cols() {
            bound += (d[j] * self.lower[j]).max(d[j] * self.upper[j]);
        }
        bound
    }

    /// CPLEX-style LP text.
    pub fn to_lp_text(&self) -> String {
        let name = |j: usize| self.names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
        let term = |out: &mut String, first: bool, c: f64, j: usize| {
            if first {
                let _ = write!(out, "{c:?} {}", name(j));
            } else if c < 0.0 {
                let _ = write!(out, " - {:?} {}", -c, name(j));
            } else {
                let _ = write!(out, " + {c:?} {}", name(j));
            }
        };
        let mut out = String::from("Maximize\n obj: ");
        let mut first = true;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                term(&mut out, first, c, j);
                first = false;
            }
        }
        if first {
            out.push('0');
        }
        out.push_str("\nSubject To\n");
        for (i, r) in self.rows.iter().enumerate() {
            let _ = write!(out, " r{i}: ");
            let mut first = true;
            for &(j, c) in &r.coeffs {
                term(&mut out, first, c, j);
                first = false;
            }
            if first {
                out.push_str("0 x0");
            }
            let op = match r.sense {
                Sense::Le => "<=",
                Sense::Ge => ">=",
                Sense::Eq => "=",
            };
            let _ = writeln!(out, " {op} {:?}", r.rhs);
        }
        out.push_str("Bounds\n");
        for j in 0..self.n_cols() {
            let _ = writeln!(out, " {:?} <= {} <= {:?}", self.lower[j], name(j), self.upper[j]);
        }
        out.push_str("End\n");
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

/// Simplex basis over the `n + m` variables (columns, then row logicals).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Basis {
    pub n_cols: usize,
    pub n_rows: usize,
    pub head: Vec<usize>,
    pub at_upper: Vec<bool>,
}

#[derive(Clone, Debug)]
pub struct LpResult {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Row multipliers: `>= 0` on `<=` rows, `<= 0` on `>=` rows at optimality.
    pub duals: Vec<f64>,
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
    pub basis: Option<Basis>,
}

pub fn solve_lp(inst: &LpInstance, warm: Option<&Basis>) -> Result<LpResult> {
    solve_lp_with(inst, warm, &LpOptions::default())
}

pub fn solve_lp_with(inst: &LpInstance, warm: Option<&Basis>, opts: &LpOptions) -> Result<LpResult> {
    inst.validate()?;
    simplex::solve(inst, &inst.lower, &inst.upper, warm, opts)
}

/// Solves with column bounds overriding the instance's own.
pub fn solve_lp_bounds(
    inst: &LpInstance,
    lower: &[f64],
    upper: &[f64],
    warm: Option<&Basis>,
    opts: &LpOptions,
) -> Result<LpResult> {
    if lower.len() != inst.n_cols() || upper.len() != inst.n_cols() {
        return Err(Error::shape("bound override length must match the column count"));
    }
    simplex::solve(inst, lower, upper, warm, opts)
}

#[cfg(test)]
mod tests;
