//! Branch-and-bound for binary programs over the simplex relaxation, the
//! trace (A-optimality) objective, and the exhaustive enumeration oracle.

use crate::error::{Error, Result};
use crate::fimatoms::FimAtoms;
use crate::lp::{solve_lp_bounds, Basis, LpInstance, LpOptions, LpStatus, Sense};
use crate::moproblem::{MoProblem, Objective, Solution, SolveStatus};
use crate::symmat::logdet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use std::sync::Arc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BnbConfig {
    pub int_tol: f64,
    pub rel_gap: f64,
    pub abs_gap: f64,
    pub node_cap: usize,
    /// Item selection tried as the first incumbent.
    pub warm_start: Option<Vec<bool>>,
    /// Record one log line per processed node.
    pub node_log: bool,
    pub lp: LpOptions,
}

impl Default for BnbConfig {
    fn default() -> Self {
        Self {
            int_tol: 1e-6,
            rel_gap: 1e-9,
            abs_gap: 1e-9,
            node_cap: 200_000,
            warm_start: None,
            node_log: false,
            lp: LpOptions::default(),
        }
    }
}

impl BnbConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.int_tol > 0.0 && self.int_tol < 0.5) {
            return Err(Error::invalid("integrality tolerance must lie in (0, 0.5)"));
        }
        if !(self.rel_gap >= 0.0 && self.abs_gap >= 0.0) {
            return Err(Error::invalid("gap targets must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeLogEntry {
    pub node: usize,
    pub depth: usize,
    pub bound: f64,
    pub incumbent: f64,
    pub gap: f64,
}

pub fn write_node_log<W: Write>(log: &[NodeLogEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in log {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

/// A maximization over `[0, 1]`-bounded columns, some of them binary.
#[derive(Clone, Debug)]
pub struct BinaryProgram {
    pub lp: LpInstance,
    /// Added to `cᵀx` when reporting objective values.
    pub constant: f64,
    pub integer: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BnbResult {
    pub status: SolveStatus,
    /// Best integral point found, if any beat the cutoff.
    pub x: Option<Vec<f64>>,
    pub objective: f64,
    pub bound: f64,
    pub nodes: usize,
    pub lp_iterations: usize,
    pub log: Vec<NodeLogEntry>,
}

struct Node {
    id: usize,
    depth: usize,
    bound: f64,
    fixed: Vec<(usize, bool)>,
    basis: Option<Arc<Basis>>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // Max-heap: larger bound first, then the earlier node.
    fn cmp(&self, other: &Self) -> Ordering {
        self.bound.total_cmp(&other.bound).then_with(|| other.id.cmp(&self.id))
    }
}

/// Heuristic that maps a relaxation point to a feasible integral point.
pub type Repair<'a> = &'a (dyn Fn(&[f64]) -> Option<Vec<f64>> + Sync);

/// Row appended to the program while the search runs.
#[derive(Clone, Debug, PartialEq)]
pub struct LazyRow {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

/// Answer of a [`LazyHook`] for one integral relaxation point.
#[derive(Clone, Debug)]
pub struct LazyOutcome {
    /// True objective of the point, which may be below its LP value.
    pub value: f64,
    /// Point stored as the incumbent when `value` improves on it.
    pub point: Vec<f64>,
    /// Rows to add; when non-empty the node is solved again.
    pub rows: Vec<LazyRow>,
    pub stop: bool,
}

/// Called at integral node solutions with the point and the current global
/// bound. Used to grow an outer approximation inside a single search tree.
pub type LazyHook<'a> = &'a mut dyn FnMut(&[f64], f64) -> Result<LazyOutcome>;

/// Best-bound branch-and-bound with most-fractional branching.
///
/// Nodes whose bound does not exceed `cutoff` are discarded; when nothing beats
/// it the result carries no point and a bound at or below the cutoff.
pub fn branch_and_bound(
    prog: &BinaryProgram,
    cfg: &BnbConfig,
    warm: Option<&[f64]>,
    cutoff: Option<f64>,
    repair: Option<Repair<'_>>,
) -> Result<BnbResult> {
    branch_and_bound_lazy(prog, cfg, warm, cutoff, repair, None)
}

fn objective_value(lp: &LpInstance, constant: f64, x: &[f64]) -> f64 {
    lp.objective_value(x) + constant
}

fn integral_feasible(lp: &LpInstance, integer: &[usize], x: &[f64]) -> bool {
    lp.max_violation(x) <= 1e-9 && integer.iter().all(|&j| (x[j] - x[j].round()).abs() <= 1e-9)
}

/// [`branch_and_bound`] with an optional lazy-row hook.
pub fn branch_and_bound_lazy(
    prog: &BinaryProgram,
    cfg: &BnbConfig,
    warm: Option<&[f64]>,
    cutoff: Option<f64>,
    repair: Option<Repair<'_>>,
    mut lazy: Option<LazyHook<'_>>,
) -> Result<BnbResult> {
    cfg.validate()?;
    prog.lp.validate()?;
    let mut lp = prog.lp.clone();
    let constant = prog.constant;

    let mut best_x: Option<Vec<f64>> = None;
    let mut best = cutoff.unwrap_or(f64::NEG_INFINITY);
    if let Some(w) = warm {
        if w.len() == lp.n_cols() && integral_feasible(&lp, &prog.integer, w) && objective_value(&lp, constant, w) > best {
            best = objective_value(&lp, constant, w);
            best_x = Some(w.to_vec());
        }
    }
    let close_enough = |bound: f64, inc: f64| bound - inc <= cfg.abs_gap.max(cfg.rel_gap * inc.abs());

    let mut heap = BinaryHeap::new();
    heap.push(Node {
        id: 0,
        depth: 0,
        bound: f64::INFINITY,
        fixed: Vec::new(),
        basis: None,
    });
    let mut next_id = 1;
    let mut nodes = 0;
    let mut lp_iterations = 0;
    let mut log = Vec::new();
    let mut status = SolveStatus::Optimal;
    let mut lower = lp.lower.clone();
    let mut upper = lp.upper.clone();

    while let Some(node) = heap.pop() {
        if best > f64::NEG_INFINITY && close_enough(node.bound, best) {
            // Best-first: every remaining node is bounded by this one.
            heap.push(node);
            break;
        }
        if nodes >= cfg.node_cap {
            status = SolveStatus::GapLimit;
            heap.push(node);
            break;
        }
        nodes += 1;
        lower.copy_from_slice(&lp.lower);
        upper.copy_from_slice(&lp.upper);
        for &(j, v) in &node.fixed {
            let b = f64::from(u8::from(v));
            lower[j] = b;
            upper[j] = b;
        }
        let res = solve_lp_bounds(&lp, &lower, &upper, node.basis.as_deref(), &cfg.lp)?;
        lp_iterations += res.iterations;
        if res.status != LpStatus::Optimal {
            continue;
        }
        let bound = (res.objective + constant).min(node.bound);
        if cfg.node_log {
            log.push(NodeLogEntry {
                node: nodes,
                depth: node.depth,
                bound,
                incumbent: best,
                gap: bound - best,
            });
        }
        if best > f64::NEG_INFINITY && (bound <= best || close_enough(bound, best)) {
            continue;
        }
        let branch = prog
            .integer
            .iter()
            .copied()
            .map(|j| (j, (res.x[j] - res.x[j].floor()).min(res.x[j].ceil() - res.x[j])))
            .filter(|&(_, f)| f > cfg.int_tol)
            .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)));

        let Some((j, _)) = branch else {
            let mut x = res.x.clone();
            for &k in &prog.integer {
                x[k] = x[k].round();
            }
            // Continuous columns may need one more solve after snapping.
            let x = if lp.max_violation(&x) <= 1e-9 {
                x
            } else {
                let mut lo = lower.clone();
                let mut hi = upper.clone();
                for &k in &prog.integer {
                    lo[k] = x[k];
                    hi[k] = x[k];
                }
                let r = solve_lp_bounds(&lp, &lo, &hi, res.basis.as_ref(), &cfg.lp)?;
                lp_iterations += r.iterations;
                if r.status != LpStatus::Optimal {
                    continue;
                }
                let mut x = r.x;
                for &k in &prog.integer {
                    x[k] = x[k].round();
                }
                x
            };
            let Some(hook) = lazy.as_mut() else {
                let v = objective_value(&lp, constant, &x);
                if v > best {
                    best = v;
                    best_x = Some(x);
                }
                continue;
            };
            let open = heap.iter().map(|n| n.bound).fold(bound, f64::max);
            let out = hook(&x, open)?;
            if out.value > best {
                best = out.value;
                best_x = Some(out.point);
            }
            if out.stop {
                status = SolveStatus::IterationLimit;
                heap.push(Node { bound, ..node });
                break;
            }
            if !out.rows.is_empty() {
                for row in out.rows {
                    lp.add_row(row.coeffs, row.sense, row.rhs);
                }
                lower.resize(lp.n_cols(), 0.0);
                upper.resize(lp.n_cols(), 0.0);
                heap.push(Node {
                    bound,
                    basis: res.basis.map(Arc::new),
                    ..node
                });
            }
            continue;
        };

        if let Some(rep) = repair {
            if nodes <= 1000 || nodes % 50 == 0 {
                if let Some(x) = rep(&res.x) {
                    let v = objective_value(&lp, constant, &x);
                    if v > best && integral_feasible(&lp, &prog.integer, &x) {
                        best = v;
                        best_x = Some(x);
                    }
                }
            }
        }

        let basis = if heap.len() < 4096 { res.basis.map(Arc::new) } else { None };
        for up in [true, false] {
            let mut fixed = node.fixed.clone();
            fixed.push((j, up));
            heap.push(Node {
                id: next_id,
                depth: node.depth + 1,
                bound,
                fixed,
                basis: basis.clone(),
            });
            next_id += 1;
        }
    }

    let open_bound = heap.iter().map(|n| n.bound).fold(f64::NEG_INFINITY, f64::max);
    let bound = if best > f64::NEG_INFINITY { open_bound.max(best) } else { open_bound };
    if best_x.is_none() && cutoff.is_none() {
        status = SolveStatus::Infeasible;
    }
    Ok(BnbResult {
        status,
        objective: if best_x.is_some() { best } else { f64::NEG_INFINITY },
        x: best_x,
        bound,
        nodes,
        lp_iterations,
        log,
    })
}

/// Linear objective `trace(M(x))` over `[x_items, x_pairs]`, and the constant
/// `trace(M0)`.
pub fn trace_cost_vector(atoms: &FimAtoms) -> (Vec<f64>, f64) {
    let coeffs = atoms.diag.iter().chain(&atoms.off).map(|a| a.trace()).collect();
    (coeffs, atoms.prior.trace())
}

/// Trace objective installed on the problem's constraint system.
pub fn trace_program(p: &MoProblem) -> BinaryProgram {
    let (c, constant) = trace_cost_vector(&p.atoms);
    let mut lp = p.lp.clone();
    lp.objective[..c.len()].copy_from_slice(&c);
    BinaryProgram {
        lp,
        constant,
        integer: p.integer_vars(),
    }
}

/// Rounds the items of a relaxation point and drops the least-selected ones
/// until the completed selection is feasible.
pub fn round_and_repair(p: &MoProblem, x: &[f64]) -> Vec<bool> {
    let n = p.n_items();
    let mut sel: Vec<bool> = x[..n].iter().map(|&v| v >= 0.5).collect();
    let mut order: Vec<usize> = (0..n).filter(|&i| sel[i]).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut order = order.into_iter();
    while !p.is_feasible(&p.complete_selection(&sel), 1e-9) {
        match order.next() {
            Some(i) => sel[i] = false,
            None => break,
        }
    }
    sel
}

/// Globally optimal A-optimal selection.
pub fn solve_milp(p: &MoProblem, cfg: &BnbConfig) -> Result<Solution> {
    Ok(solve_milp_inner(p, cfg)?.0)
}

/// Like [`solve_milp`], also returning the node log.
pub fn solve_milp_logged(p: &MoProblem, cfg: &BnbConfig) -> Result<(Solution, Vec<NodeLogEntry>)> {
    let cfg = BnbConfig {
        node_log: true,
        ..cfg.clone()
    };
    solve_milp_inner(p, &cfg)
}

fn solve_milp_inner(p: &MoProblem, cfg: &BnbConfig) -> Result<(Solution, Vec<NodeLogEntry>)> {
    if p.objective != Objective::AOptimality {
        return Err(Error::invalid("solve_milp needs the linear trace objective"));
    }
    let mut prog = trace_program(p);
    let objective = std::mem::take(&mut prog.lp.objective);
    prog.lp = p.strengthened_lp();
    prog.lp.objective = objective;
    let warm = cfg
        .warm_start
        .as_ref()
        .filter(|w| w.len() == p.n_items())
        .map(|w| p.complete_selection(w));
    let repair = |x: &[f64]| Some(p.complete_selection(&round_and_repair(p, x)));
    let r = branch_and_bound(&prog, cfg, warm.as_deref(), None, Some(&repair))?;
    let mut s = match &r.x {
        Some(x) => {
            let sel: Vec<bool> = x[..p.n_items()].iter().map(|&v| v > 0.5).collect();
            let mut s = p.make_solution(&p.complete_selection(&sel), r.status)?;
            s.bound = r.bound;
            s
        }
        None => p.infeasible_solution(),
    };
    s.nodes = r.nodes;
    s.iterations = r.lp_iterations;
    Ok((s, r.log))
}

/// Continuous relaxation of the trace problem.
pub fn solve_lp_relaxation(p: &MoProblem, opts: &LpOptions) -> Result<Solution> {
    let prog = trace_program(p);
    let r = solve_lp_bounds(&prog.lp, &prog.lp.lower, &prog.lp.upper, None, opts)?;
    if r.status != LpStatus::Optimal {
        return Ok(p.infeasible_solution());
    }
    let x: Vec<f64> = r.x.iter().map(|v| v.clamp(0.0, 1.0)).collect();
    let mut s = p.make_solution(&x, SolveStatus::Optimal)?;
    s.bound = r.objective + prog.constant;
    s.iterations = r.iterations;
    Ok(s)
}

pub const DEFAULT_ENUMERATION_CAP: usize = 20;

/// Exhaustive search over all item subsets. Ties go to the lexicographically
/// smallest selection vector (item 0 first, unselected before selected).
pub fn enumerate_bruteforce(p: &MoProblem, cap: usize) -> Result<Solution> {
    let n = p.n_items();
    if n > cap || n >= 63 {
        return Err(Error::CapExceeded { items: n, cap });
    }
    let selection = |mask: u64| -> Vec<bool> { (0..n).map(|i| mask >> (n - 1 - i) & 1 == 1).collect() };
    let values: Vec<Option<f64>> = (0..1u64 << n)
        .into_par_iter()
        .map(|mask| {
            let x = p.complete_selection(&selection(mask));
            if !p.is_feasible(&x, 1e-9) {
                return None;
            }
            let m = p.information(&x);
            Some(match p.objective {
                Objective::AOptimality => m.trace(),
                Objective::DOptimality => logdet(&m, 0.0).unwrap_or(f64::NEG_INFINITY),
            })
        })
        .collect();
    let mut best: Option<(u64, f64)> = None;
    let mut feasible = 0usize;
    for (mask, v) in values.iter().enumerate() {
        if let Some(v) = *v {
            feasible += 1;
            let better = match best {
                None => true,
                Some((_, b)) => v > b + 1e-12 * b.abs().max(1.0),
            };
            if better {
                best = Some((mask as u64, v));
            }
        }
    }
    let Some((mask, v)) = best else {
        return Ok(p.infeasible_solution());
    };
    let mut s = p.make_solution(&p.complete_selection(&selection(mask)), SolveStatus::Optimal)?;
    s.bound = v;
    s.nodes = feasible;
    Ok(s)
}
