use super::lu::{LuFactor, SparseCol};
use super::{Basis, LpInstance, LpResult, LpStatus, Sense};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LpOptions {
    pub feas_tol: f64,
    pub opt_tol: f64,
    /// Iteration cap; `None` scales with the problem size.
    pub max_iter: Option<usize>,
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub bland_after: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            feas_tol: 1e-9,
            opt_tol: 1e-9,
            max_iter: None,
            refactor_every: 100,
            bland_after: 50,
        }
    }
}

const PIVOT_TOL: f64 = 1e-9;

struct Simplex<'a> {
    n: usize,
    m: usize,
    cols: &'a [SparseCol],
    cost: Vec<f64>,
    lb: Vec<f64>,
    ub: Vec<f64>,
    head: Vec<usize>,
    pos: Vec<usize>,
    at_upper: Vec<bool>,
    x: Vec<f64>,
    lu: LuFactor,
    opts: &'a LpOptions,
}

const NONBASIC: usize = usize::MAX;

/// Power-of-two row scaling so that every row's largest coefficient is about 1.
fn row_scales(inst: &LpInstance) -> Vec<f64> {
    inst.rows
        .iter()
        .map(|r| {
            let mx = r.coeffs.iter().fold(0.0f64, |a, &(_, v)| a.max(v.abs()));
            if mx > 0.0 {
                (-mx.log2().round()).exp2()
            } else {
                1.0
            }
        })
        .collect()
}

fn build_columns(inst: &LpInstance, scale: &[f64]) -> Vec<SparseCol> {
    let mut cols: Vec<SparseCol> = vec![Vec::new(); inst.n_cols()];
    for (i, r) in inst.rows.iter().enumerate() {
        for &(j, v) in &r.coeffs {
            if v != 0.0 {
                cols[j].push((i, v * scale[i]));
            }
        }
    }
    for col in &mut cols {
        // Rows are visited in order, so duplicates are adjacent.
        let mut merged: SparseCol = Vec::with_capacity(col.len());
        for &(i, v) in col.iter() {
            match merged.last_mut() {
                Some(last) if last.0 == i => last.1 += v,
                _ => merged.push((i, v)),
            }
        }
        merged.retain(|e| e.1 != 0.0);
        *col = merged;
    }
    cols
}

pub(super) fn solve(
    inst: &LpInstance,
    lower: &[f64],
    upper: &[f64],
    warm: Option<&Basis>,
    opts: &LpOptions,
) -> Result<LpResult> {
    let n = inst.n_cols();
    let m = inst.n_rows();
    if (0..n).any(|j| lower[j] > upper[j] + opts.feas_tol) {
        return Ok(LpResult {
            status: LpStatus::Infeasible,
            x: lower.to_vec(),
            objective: f64::NEG_INFINITY,
            duals: vec![0.0; m],
            reduced_costs: vec![0.0; n],
            iterations: 0,
            basis: None,
        });
    }
    let scale = row_scales(inst);
    let cols = build_columns(inst, &scale);
    let mut lb = Vec::with_capacity(n + m);
    let mut ub = Vec::with_capacity(n + m);
    for j in 0..n {
        lb.push(lower[j]);
        ub.push(upper[j].max(lower[j]));
    }
    for (r, &s) in inst.rows.iter().zip(&scale) {
        let b = r.rhs * s;
        let (l, u) = match r.sense {
            Sense::Le => (f64::NEG_INFINITY, b),
            Sense::Ge => (b, f64::INFINITY),
            Sense::Eq => (b, b),
        };
        lb.push(l);
        ub.push(u);
    }
    // Power-of-two cost normalization keeps the optimality tolerance relative.
    let cmax = inst.objective.iter().fold(0.0f64, |a, c| a.max(c.abs()));
    let cost_scale = if cmax > 0.0 { (-cmax.log2().round()).exp2() } else { 1.0 };
    let mut cost: Vec<f64> = inst.objective.iter().map(|c| c * cost_scale).collect();
    cost.resize(n + m, 0.0);

    let (head, at_upper) = initial_basis(n, m, warm);
    let mut sx = Simplex {
        n,
        m,
        cols: &cols,
        cost,
        lb,
        ub,
        head,
        pos: vec![NONBASIC; n + m],
        at_upper,
        x: vec![0.0; n + m],
        lu: LuFactor::factor(0, &[]).ok().expect("empty factorization"),
        opts,
    };
    sx.refactor()?;
    let (status, iterations) = sx.run()?;

    let x: Vec<f64> = sx.x[..n].to_vec();
    let mut duals = vec![0.0; m];
    let mut reduced = vec![0.0; n];
    if status == LpStatus::Optimal {
        let y = sx.duals(false);
        for i in 0..m {
            duals[i] = y[i] * scale[i] / cost_scale;
        }
        for j in 0..n {
            reduced[j] = (sx.cost[j] - sx.col_dot(j, &y)) / cost_scale;
        }
    }
    let objective = match status {
        LpStatus::Optimal => inst.objective_value(&x),
        LpStatus::Infeasible => f64::NEG_INFINITY,
        LpStatus::Unbounded => f64::INFINITY,
    };
    Ok(LpResult {
        status,
        objective,
        x,
        duals,
        reduced_costs: reduced,
        iterations,
        basis: Some(Basis {
            n_cols: n,
            n_rows: m,
            head: sx.head.clone(),
            at_upper: sx.at_upper.clone(),
        }),
    })
}

fn initial_basis(n: usize, m: usize, warm: Option<&Basis>) -> (Vec<usize>, Vec<bool>) {
    if let Some(b) = warm {
        let ok = b.n_cols == n
            && b.n_rows <= m
            && b.head.len() == b.n_rows
            && b.at_upper.len() == n + b.n_rows
            && b.head.iter().all(|&v| v < n + b.n_rows);
        if ok {
            let mut seen = vec![false; n + m];
            if b.head.iter().all(|&v| !std::mem::replace(&mut seen[v], true)) {
                let mut head = b.head.clone();
                head.extend((b.n_rows..m).map(|i| n + i));
                let mut at_upper = b.at_upper.clone();
                at_upper.resize(n + m, false);
                return (head, at_upper);
            }
        }
    }
    ((n..n + m).collect(), vec![false; n + m])
}

impl Simplex<'_> {
    fn column(&self, j: usize) -> SparseCol {
        if j < self.n {
            self.cols[j].clone()
        } else {
            vec![(j - self.n, -1.0)]
        }
    }

    fn col_dot(&self, j: usize, y: &[f64]) -> f64 {
        if j < self.n {
            self.cols[j].iter().map(|&(i, v)| v * y[i]).sum()
        } else {
            -y[j - self.n]
        }
    }

    /// Places a nonbasic variable on the bound its status names.
    fn snap_nonbasic(&mut self, j: usize) {
        let (l, u) = (self.lb[j], self.ub[j]);
        if self.at_upper[j] && u.is_finite() {
            self.x[j] = u;
        } else if l.is_finite() {
            self.at_upper[j] = false;
            self.x[j] = l;
        } else if u.is_finite() {
            self.at_upper[j] = true;
            self.x[j] = u;
        } else {
            self.at_upper[j] = false;
            self.x[j] = 0.0;
        }
    }

    fn refactor(&mut self) -> Result<()> {
        for attempt in 0..=self.m {
            let basis_cols: Vec<SparseCol> = self.head.iter().map(|&j| self.column(j)).collect();
            match LuFactor::factor(self.m, &basis_cols) {
                Ok(lu) => {
                    self.lu = lu;
                    self.pos.iter_mut().for_each(|p| *p = NONBASIC);
                    for (p, &j) in self.head.iter().enumerate() {
                        self.pos[j] = p;
                    }
                    for j in 0..self.n + self.m {
                        if self.pos[j] == NONBASIC {
                            self.snap_nonbasic(j);
                        }
                    }
                    self.recompute_basics();
                    return Ok(());
                }
                Err(s) => {
                    // Swap unpivotable columns for the logicals of unpivoted rows.
                    for (p, r) in s.replacements {
                        let old = self.head[p];
                        let logical = self.n + r;
                        if let Some(q) = self.head.iter().position(|&v| v == logical) {
                            // Already basic elsewhere; swap roles.
                            self.head.swap(p, q);
                            continue;
                        }
                        self.head[p] = logical;
                        self.at_upper[old] = self.x[old] >= self.ub[old] && self.ub[old].is_finite();
                    }
                    if attempt == self.m {
                        break;
                    }
                }
            }
        }
        Err(Error::NumericFailure {
            what: "simplex basis repair".into(),
            iterations: 0,
        })
    }

    fn recompute_basics(&mut self) {
        let mut rhs = vec![0.0; self.m];
        for j in 0..self.n + self.m {
            if self.pos[j] != NONBASIC || self.x[j] == 0.0 {
                continue;
            }
            let xj = self.x[j];
            if j < self.n {
                for &(i, v) in &self.cols[j] {
                    rhs[i] -= v * xj;
                }
            } else {
                rhs[j - self.n] += xj;
            }
        }
        self.lu.ftran(&mut rhs);
        for (p, &j) in self.head.iter().enumerate() {
            self.x[j] = rhs[p];
        }
    }

    fn infeasibility(&self, j: usize) -> f64 {
        let x = self.x[j];
        if x < self.lb[j] - self.opts.feas_tol {
            self.lb[j] - x
        } else if x > self.ub[j] + self.opts.feas_tol {
            x - self.ub[j]
        } else {
            0.0
        }
    }

    /// Row prices for the phase-1 (`phase1 = true`) or true objective.
    fn duals(&self, phase1: bool) -> Vec<f64> {
        let mut c: Vec<f64> = self
            .head
            .iter()
            .map(|&j| {
                if phase1 {
                    let x = self.x[j];
                    if x < self.lb[j] - self.opts.feas_tol {
                        1.0
                    } else if x > self.ub[j] + self.opts.feas_tol {
                        -1.0
                    } else {
                        0.0
                    }
                } else {
                    self.cost[j]
                }
            })
            .collect();
        self.lu.btran(&mut c);
        c
    }

    fn run(&mut self) -> Result<(LpStatus, usize)> {
        let total = self.n + self.m;
        let cap = self.opts.max_iter.unwrap_or(50 * total + 1000);
        let mut degenerate = 0usize;
        let mut bland = false;
        let mut fresh = true;
        let mut iter = 0usize;
        loop {
            if iter >= cap {
                let snapshot: Vec<String> = self.head.iter().take(20).map(|v| v.to_string()).collect();
                return Err(Error::NumericFailure {
                    what: format!("simplex (stalled; basis head starts [{}])", snapshot.join(", ")),
                    iterations: iter,
                });
            }
            let phase1 = self.head.iter().any(|&j| self.infeasibility(j) > 0.0);
            let y = self.duals(phase1);

            // Pricing.
            let mut enter: Option<(usize, f64)> = None;
            for j in 0..total {
                if self.pos[j] != NONBASIC || self.ub[j] - self.lb[j] <= 0.0 {
                    continue;
                }
                let cj = if phase1 { 0.0 } else { self.cost[j] };
                let d = cj - self.col_dot(j, &y);
                let eligible = if self.at_upper[j] {
                    d < -self.opts.opt_tol
                } else {
                    d > self.opts.opt_tol && (self.ub[j] > self.x[j] || self.ub[j].is_infinite())
                };
                if !eligible {
                    continue;
                }
                if bland {
                    enter = Some((j, d));
                    break;
                }
                if enter.is_none_or(|(_, bd)| d.abs() > bd.abs()) {
                    enter = Some((j, d));
                }
            }
            let Some((q, d)) = enter else {
                if !fresh {
                    self.refactor()?;
                    fresh = true;
                    continue;
                }
                return Ok((if phase1 { LpStatus::Infeasible } else { LpStatus::Optimal }, iter));
            };
            iter += 1;

            let dir = if d > 0.0 { 1.0 } else { -1.0 };
            let mut alpha = vec![0.0; self.m];
            for (i, v) in self.column(q) {
                alpha[i] = v;
            }
            self.lu.ftran(&mut alpha);

            let step = self.ratio_test(&alpha, dir, phase1, bland);
            let range = self.ub[q] - self.lb[q];
            let (theta, leave) = match step {
                Some((ratio, p, to_upper)) if ratio < range => (ratio, Some((p, to_upper))),
                _ if range.is_finite() => (range, None),
                _ => {
                    if phase1 || !fresh {
                        // Numerically lost direction; rebuild and retry.
                        self.refactor()?;
                        fresh = true;
                        continue;
                    }
                    return Ok((LpStatus::Unbounded, iter));
                }
            };

            if theta <= 1e-12 {
                degenerate += 1;
                if degenerate >= self.opts.bland_after {
                    bland = true;
                }
            } else {
                degenerate = 0;
                bland = false;
            }

            self.x[q] += dir * theta;
            for (p, &j) in self.head.iter().enumerate() {
                if alpha[p] != 0.0 {
                    self.x[j] -= dir * theta * alpha[p];
                }
            }
            match leave {
                None => {
                    self.at_upper[q] = dir > 0.0;
                    self.x[q] = if dir > 0.0 { self.ub[q] } else { self.lb[q] };
                }
                Some((p, to_upper)) => {
                    let l = self.head[p];
                    self.x[l] = if to_upper { self.ub[l] } else { self.lb[l] };
                    self.at_upper[l] = to_upper;
                    self.pos[l] = NONBASIC;
                    self.head[p] = q;
                    self.pos[q] = p;
                    self.lu.update(p, &alpha);
                    fresh = false;
                    if self.lu.n_updates() >= self.opts.refactor_every {
                        self.refactor()?;
                        fresh = true;
                    }
                }
            }
        }
    }

    /// Returns `(step, basis position, leaves at upper)` of the blocking basic
    /// variable, or `None` if no basic variable blocks.
    fn ratio_test(&self, alpha: &[f64], dir: f64, phase1: bool, bland: bool) -> Option<(f64, usize, bool)> {
        let tol = self.opts.feas_tol;
        // (exact ratio, Harris ratio, position, to_upper)
        let mut cands: Vec<(f64, f64, usize, bool)> = Vec::new();
        for (p, &j) in self.head.iter().enumerate() {
            if alpha[p].abs() < PIVOT_TOL {
                continue;
            }
            let delta = -dir * alpha[p];
            let x = self.x[j];
            let (l, u) = (self.lb[j], self.ub[j]);
            let below = x < l - tol;
            let above = x > u + tol;
            if phase1 && below {
                if delta > 0.0 {
                    cands.push(((l - x) / delta, (l - x + tol) / delta, p, false));
                }
                continue;
            }
            if phase1 && above {
                if delta < 0.0 {
                    cands.push(((x - u) / -delta, (x - u + tol) / -delta, p, true));
                }
                continue;
            }
            if delta < 0.0 && l.is_finite() {
                let dist = (x - l).max(0.0);
                cands.push((dist / -delta, (dist + tol) / -delta, p, false));
            } else if delta > 0.0 && u.is_finite() {
                let dist = (u - x).max(0.0);
                cands.push((dist / delta, (dist + tol) / delta, p, true));
            }
        }
        if cands.is_empty() {
            return None;
        }
        if bland {
            let min = cands.iter().fold(f64::INFINITY, |a, c| a.min(c.0));
            let best = cands
                .iter()
                .filter(|c| c.0 <= min)
                .min_by_key(|c| self.head[c.2])
                .unwrap();
            return Some((best.0, best.2, best.3));
        }
        let harris = cands.iter().fold(f64::INFINITY, |a, c| a.min(c.1));
        let mut best: Option<&(f64, f64, usize, bool)> = None;
        for c in cands.iter().filter(|c| c.0 <= harris) {
            let better = match best {
                None => true,
                Some(b) => {
                    let (a1, a2) = (alpha[c.2].abs(), alpha[b.2].abs());
                    a1 > a2 || (a1 == a2 && self.head[c.2] < self.head[b.2])
                }
            };
            if better {
                best = Some(c);
            }
        }
        let b = best.unwrap();
        Some((b.0.max(0.0), b.2, b.3))
    }
}
