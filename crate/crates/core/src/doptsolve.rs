//! Log-determinant (D-optimality) solvers.
//!
//! `ψ(x) = ln det M(x)` is concave wherever `M(x)` is positive definite, and
//! `M` is affine in the variables. The relaxation is solved by Frank-Wolfe with
//! away steps over the constraint polytope; the binary problem by outer
//! approximation, where each visited selection contributes the tangent cut
//! `η <= ψ(x̂) + ∇ψ(x̂)ᵀ(x - x̂)` to a branch-and-bound master.

use crate::error::{Error, Result};
use crate::fimatoms::FimAtoms;
use crate::lp::{solve_lp_bounds, Basis, LpOptions, LpStatus, Sense};
use crate::milp::{
    branch_and_bound_lazy, round_and_repair, solve_lp_relaxation, BinaryProgram, BnbConfig, LazyOutcome, LazyRow,
};
use crate::moproblem::{MoProblem, Objective, Solution, SolveStatus};
use crate::symmat::{eig_sym, inverse_spd, logdet, pinv_sym, SymMatrix, DEFAULT_RANK_TOL};
use serde::{Deserialize, Serialize};
use std::io::Write;

/// `∂ψ/∂x_v = tr(M⁻¹ atom_v)` over `[x_items, x_pairs]`. The inverse falls back
/// to the pseudo-inverse when `M(x)` is singular.
pub fn logdet_gradient_x(atoms: &FimAtoms, x_items: &[f64], x_pairs: &[f64]) -> Result<Vec<f64>> {
    let m = atoms.eval(x_items, x_pairs)?.matrix;
    let g = inverse_spd(&m).or_else(|_| pinv_sym(&m, DEFAULT_RANK_TOL))?;
    Ok(atoms.diag.iter().chain(&atoms.off).map(|a| g.inner(a)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FwConfig {
    pub max_iter: usize,
    /// Stop once the duality gap `gᵀ(s - x)` falls below this.
    pub gap_tol: f64,
    /// Interval length at which the golden-section search stops.
    pub line_tol: f64,
    pub away_steps: bool,
    /// Start from this item selection instead of the empty one.
    pub warm_start: Option<Vec<bool>>,
    pub lp: LpOptions,
}

impl Default for FwConfig {
    fn default() -> Self {
        Self {
            max_iter: 500,
            gap_tol: 1e-7,
            line_tol: 1e-10,
            away_steps: true,
            warm_start: None,
            lp: LpOptions::default(),
        }
    }
}

impl FwConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gap_tol > 0.0 && self.line_tol > 0.0) {
            return Err(Error::invalid("Frank-Wolfe tolerances must be positive"));
        }
        Ok(())
    }
}

fn psi(m: &SymMatrix) -> f64 {
    logdet(m, 0.0).unwrap_or(f64::NEG_INFINITY)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Maximizes the concave `φ` on `[0, hi]` by golden-section search.
fn golden_section(phi: impl Fn(f64) -> f64, hi: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (0.0, hi);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (phi(c), phi(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = phi(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = phi(d);
        }
    }
    let mid = 0.5 * (a + b);
    [(0.0, phi(0.0)), (mid, phi(mid)), (hi, phi(hi))]
        .into_iter()
        .fold((0.0, f64::NEG_INFINITY), |best, cand| if cand.1 > best.1 { cand } else { best })
}

/// Relaxed D-optimality by Frank-Wolfe with away steps and exact line search.
pub fn solve_relaxed_dopt(p: &MoProblem, cfg: &FwConfig) -> Result<Solution> {
    cfg.validate()?;
    let start = match &cfg.warm_start {
        Some(sel) if sel.len() == p.n_items() && p.is_feasible(&p.complete_selection(sel), 1e-9) => {
            p.complete_selection(sel)
        }
        _ => vec![0.0; p.n_vars()],
    };
    frank_wolfe(p, cfg, start)
}

/// Frank-Wolfe from a given (possibly fractional) feasible point; falls back to
/// [`solve_relaxed_dopt`] when `start` is infeasible for `p`.
pub fn solve_relaxed_dopt_from(p: &MoProblem, cfg: &FwConfig, start: &[f64]) -> Result<Solution> {
    cfg.validate()?;
    if start.len() == p.n_vars() && p.is_feasible(start, 1e-9) {
        frank_wolfe(p, cfg, start.to_vec())
    } else {
        solve_relaxed_dopt(p, cfg)
    }
}

fn frank_wolfe(p: &MoProblem, cfg: &FwConfig, start: Vec<f64>) -> Result<Solution> {
    let (n, k) = (p.n_items(), p.n_pairs());
    let nv = n + k;
    let mut x = start;
    let mut active: Vec<(Vec<f64>, f64)> = vec![(x.clone(), 1.0)];
    let mut m = p.information(&x);
    let mut value = psi(&m);
    if value == f64::NEG_INFINITY {
        return Err(Error::Domain("information matrix at the start point is singular; use a positive prior".into()));
    }
    let mut lp = p.lp.clone();
    let mut basis: Option<Basis> = None;
    let mut gap = f64::INFINITY;
    let mut iters = 0;
    let mut lp_iters = 0;
    let mut status = SolveStatus::IterationLimit;
    while iters < cfg.max_iter {
        let g = logdet_gradient_x(&p.atoms, &x[..n], &x[n..nv])?;
        lp.objective[..nv].copy_from_slice(&g);
        let r = solve_lp_bounds(&lp, &lp.lower, &lp.upper, basis.as_ref(), &cfg.lp)?;
        lp_iters += r.iterations;
        if r.status != LpStatus::Optimal {
            return Err(Error::NumericFailure {
                what: "Frank-Wolfe linear oracle".into(),
                iterations: iters,
            });
        }
        basis = r.basis;
        let s: Vec<f64> = r.x.iter().map(|v| v.clamp(0.0, 1.0)).collect();
        gap = dot(&g, &s[..nv]) - dot(&g, &x[..nv]);
        if gap <= cfg.gap_tol {
            status = SolveStatus::Optimal;
            break;
        }
        iters += 1;

        let away = if cfg.away_steps && active.len() > 1 {
            let (vi, gv) = active
                .iter()
                .enumerate()
                .map(|(i, (v, _))| (i, dot(&g, &v[..nv])))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap();
            let away_gap = dot(&g, &x[..nv]) - gv;
            (away_gap > gap).then_some(vi)
        } else {
            None
        };
        let (dir, hi) = match away {
            Some(vi) => {
                let alpha = active[vi].1;
                let d: Vec<f64> = x.iter().zip(&active[vi].0).map(|(a, b)| a - b).collect();
                (d, alpha / (1.0 - alpha))
            }
            None => (s.iter().zip(&x).map(|(a, b)| a - b).collect::<Vec<f64>>(), 1.0),
        };
        let dm = {
            let mut dm = SymMatrix::zeros(m.dim());
            for (v, &dv) in dir[..nv].iter().enumerate() {
                if dv != 0.0 {
                    dm.axpy(dv, p.atoms.atom(v));
                }
            }
            dm
        };
        let phi = |t: f64| {
            let mut mt = m.clone();
            mt.axpy(t, &dm);
            psi(&mt)
        };
        let (step, new_value) = golden_section(phi, hi, cfg.line_tol);
        if step <= 0.0 || new_value <= value {
            // No ascent along the chosen direction at line-search resolution.
            status = if gap <= 10.0 * cfg.gap_tol {
                SolveStatus::Optimal
            } else {
                SolveStatus::IterationLimit
            };
            break;
        }
        for (xi, di) in x.iter_mut().zip(&dir) {
            *xi = (*xi + step * di).clamp(0.0, 1.0);
        }
        match away {
            Some(vi) => {
                for (_, a) in active.iter_mut() {
                    *a *= 1.0 + step;
                }
                active[vi].1 -= step;
                if step >= hi * (1.0 - 1e-12) {
                    active.remove(vi);
                }
            }
            None => {
                if step >= 1.0 - 1e-12 {
                    active.clear();
                    active.push((s.clone(), 1.0));
                } else {
                    for (_, a) in active.iter_mut() {
                        *a *= 1.0 - step;
                    }
                    match active.iter_mut().find(|(v, _)| v.iter().zip(&s).all(|(a, b)| (a - b).abs() <= 1e-12)) {
                        Some((_, a)) => *a += step,
                        None => active.push((s.clone(), step)),
                    }
                }
            }
        }
        active.retain(|(_, a)| *a > 1e-15);
        m = p.information(&x);
        value = psi(&m);
    }
    let mut sol = p.make_solution(&x, status)?;
    if p.objective == Objective::DOptimality {
        sol.bound = sol.logdet + gap.max(0.0);
    }
    sol.iterations = iters;
    sol.nodes = lp_iters;
    Ok(sol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OaConfig {
    /// Absolute log-det gap at which the loop stops.
    pub gap_tol: f64,
    pub max_iter: usize,
    pub bnb: BnbConfig,
    /// Item selection used as the first incumbent.
    pub warm_start: Option<Vec<bool>>,
    /// Add a cut at an approximate relaxed optimum before the first master.
    pub seed_relaxation: bool,
    pub seed_fw: FwConfig,
    /// Eigenvalue floor for tangent cuts, relative to `trace(full information) / P`.
    pub cut_floor: f64,
}

impl Default for OaConfig {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            max_iter: 5000,
            bnb: BnbConfig::default(),
            warm_start: None,
            seed_relaxation: true,
            seed_fw: FwConfig {
                max_iter: 50,
                gap_tol: 1e-4,
                ..FwConfig::default()
            },
            cut_floor: 1e-6,
        }
    }
}

/// Tangent majorant `η <= value + gradientᵀ(x - at)` over `[x_items, x_pairs]`.
///
/// When `M(at)` has eigenvalues below `floor`, the tangent is taken on
/// `ln det(M + floor·I)` instead. That function dominates `ψ` and is concave, so
/// the cut stays valid while its slopes stay bounded by about `P / floor`
/// relative to the atom scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub at: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub regularized: bool,
}

impl Cut {
    pub fn new(p: &MoProblem, x: &[f64], floor: f64) -> Result<Option<Cut>> {
        let nv = p.n_items() + p.n_pairs();
        let mut m = p.information(x);
        let lmin = eig_sym(&m)?.values.last().copied().unwrap_or(0.0);
        let regularized = lmin < floor;
        if regularized {
            for i in 0..m.dim() {
                m.add_at(i, i, floor);
            }
        }
        let value = psi(&m);
        if !value.is_finite() {
            return Ok(None);
        }
        let inv = inverse_spd(&m)?;
        let gradient = p.atoms.diag.iter().chain(&p.atoms.off).map(|a| inv.inner(a)).collect();
        Ok(Some(Cut {
            at: x[..nv].to_vec(),
            value,
            gradient,
            regularized,
        }))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.value + self.gradient.iter().zip(x).zip(&self.at).map(|((g, xv), a)| g * (xv - a)).sum::<f64>()
    }

    fn constant(&self) -> f64 {
        self.value - dot(&self.gradient, &self.at)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OaTraceEntry {
    pub iter: usize,
    pub master_bound: f64,
    pub incumbent: f64,
    pub cuts: usize,
    pub gap: f64,
}

pub fn write_oa_trace<W: Write>(trace: &[OaTraceEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in trace {
        w.serialize(e)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct OaOutcome {
    pub solution: Solution,
    pub trace: Vec<OaTraceEntry>,
    pub cuts: Vec<Cut>,
}

pub fn solve_minlp_dopt(p: &MoProblem, cfg: &OaConfig) -> Result<Solution> {
    Ok(solve_minlp_dopt_traced(p, cfg)?.solution)
}

/// Globally optimal D-optimal selection by outer approximation.
///
/// The master is searched as a single branch-and-bound tree: each integral node
/// solution is evaluated exactly, its tangent cut and a no-good row excluding
/// it are added to the shared row set, and the node is solved again.
pub fn solve_minlp_dopt_traced(p: &MoProblem, cfg: &OaConfig) -> Result<OaOutcome> {
    if !(cfg.gap_tol > 0.0) {
        return Err(Error::invalid("outer-approximation gap tolerance must be positive"));
    }
    let n = p.n_items();
    let eta = p.n_vars();
    let prior_value = psi(&p.atoms.prior);
    if !prior_value.is_finite() {
        return Err(Error::Domain("outer approximation needs a positive definite prior".into()));
    }

    let empty = vec![false; n];
    let inc_sel = match &cfg.warm_start {
        Some(w) if w.len() == n && p.is_feasible(&p.complete_selection(w), 1e-9) => w.clone(),
        _ => empty,
    };
    let inc_x = p.complete_selection(&inc_sel);
    let inc_val = psi(&p.information(&inc_x));
    let np = p.atoms.n_params as f64;
    let floor = cfg.cut_floor * p.atoms.full_information().trace() / np;
    let mut cuts: Vec<Cut> = Vec::new();
    cuts.extend(Cut::new(p, &inc_x, floor)?);
    if cfg.seed_relaxation {
        let fw = frank_wolfe(p, &cfg.seed_fw, inc_x.clone())?;
        let x: Vec<f64> = fw.x_items.iter().chain(&fw.x_pairs).chain(&fw.w_dcm).copied().collect();
        cuts.extend(Cut::new(p, &x, floor)?);
    }

    // η is boxed by the prior (every selection adds a PSD term) and by the
    // arithmetic-geometric mean bound on the largest achievable trace.
    let trace_ub = solve_lp_relaxation(&p.with_objective(Objective::AOptimality, true), &cfg.bnb.lp)?.bound;
    let eta_lo = prior_value - 1.0;
    let eta_hi = (np * (trace_ub.max(p.atoms.prior.trace()) / np).ln()).max(inc_val) + 1.0;

    let mut master = p.strengthened_lp();
    master.objective.iter_mut().for_each(|c| *c = 0.0);
    master.add_column(1.0, eta_lo, eta_hi);
    master.names.push("eta".into());
    for c in &cuts {
        let row = cut_row(c, eta);
        master.add_row(row.coeffs, row.sense, row.rhs);
    }
    // Visited selections are excluded outright; their values are already
    // accounted for by the incumbent, and a regularized cut need not be tight.
    let ng = no_good_row(&inc_sel);
    master.add_row(ng.coeffs, ng.sense, ng.rhs);

    let mut state = OaState {
        inc_val,
        inc_sel,
        upper: f64::INFINITY,
        trace: Vec::new(),
        visited: 1,
    };
    let prog = BinaryProgram {
        lp: master,
        constant: 0.0,
        integer: p.integer_vars(),
    };
    let bnb = BnbConfig {
        abs_gap: cfg.gap_tol,
        rel_gap: 0.0,
        warm_start: None,
        ..cfg.bnb.clone()
    };
    let repair = |x: &[f64]| {
        let sel = round_and_repair(p, x);
        let mut full = p.complete_selection(&sel);
        let v = psi(&p.information(&full));
        v.is_finite().then(|| {
            full.push(v);
            full
        })
    };
    let mut hook = |x: &[f64], open: f64| -> Result<LazyOutcome> {
        let sel: Vec<bool> = x[..n].iter().map(|&v| v > 0.5).collect();
        let full = p.complete_selection(&sel);
        let val = psi(&p.information(&full));
        let mut rows = Vec::new();
        if val > state.inc_val {
            state.inc_val = val;
            state.inc_sel = sel.clone();
        }
        if let Some(c) = Cut::new(p, &full, floor)? {
            rows.push(cut_row(&c, eta));
            cuts.push(c);
        }
        rows.push(no_good_row(&sel));
        state.visited += 1;
        state.upper = state.upper.min(open.max(state.inc_val));
        state.trace.push(OaTraceEntry {
            iter: state.trace.len() + 1,
            master_bound: state.upper,
            incumbent: state.inc_val,
            cuts: cuts.len(),
            gap: state.upper - state.inc_val,
        });
        let mut point = full;
        point.push(val);
        Ok(LazyOutcome {
            value: val,
            point,
            rows,
            stop: state.visited > cfg.max_iter,
        })
    };
    let r = branch_and_bound_lazy(&prog, &bnb, None, Some(inc_val), Some(&repair), Some(&mut hook))?;
    let mut state = state;
    if let Some(x) = &r.x {
        let sel: Vec<bool> = x[..n].iter().map(|&v| v > 0.5).collect();
        let val = psi(&p.information(&p.complete_selection(&sel)));
        if val > state.inc_val {
            state.inc_val = val;
            state.inc_sel = sel;
        }
    }
    let upper = r.bound.max(state.inc_val).min(state.upper.max(state.inc_val));
    let status = match r.status {
        SolveStatus::Optimal | SolveStatus::Infeasible => SolveStatus::Optimal,
        _ => SolveStatus::GapLimit,
    };
    state.trace.push(OaTraceEntry {
        iter: state.trace.len() + 1,
        master_bound: upper,
        incumbent: state.inc_val,
        cuts: cuts.len(),
        gap: upper - state.inc_val,
    });
    let inc_x = p.complete_selection(&state.inc_sel);
    let mut solution = p.make_solution(&inc_x, status)?;
    solution.bound = upper;
    solution.iterations = state.visited;
    solution.nodes = r.nodes;
    solution.cuts = cuts.len();
    Ok(OaOutcome {
        solution,
        trace: state.trace,
        cuts,
    })
}

struct OaState {
    inc_val: f64,
    inc_sel: Vec<bool>,
    upper: f64,
    trace: Vec<OaTraceEntry>,
    visited: usize,
}

fn cut_row(c: &Cut, eta: usize) -> LazyRow {
    let mut coeffs: Vec<(usize, f64)> =
        c.gradient.iter().enumerate().filter(|(_, &g)| g != 0.0).map(|(j, &g)| (j, -g)).collect();
    coeffs.push((eta, 1.0));
    LazyRow {
        coeffs,
        sense: Sense::Le,
        rhs: c.constant(),
    }
}

/// `Σ_{i∈S} (1 - x_i) + Σ_{i∉S} x_i >= 1` over the items.
fn no_good_row(sel: &[bool]) -> LazyRow {
    let ones = sel.iter().filter(|&&b| b).count() as f64;
    LazyRow {
        coeffs: sel.iter().enumerate().map(|(i, &b)| (i, if b { -1.0 } else { 1.0 })).collect(),
        sense: Sense::Ge,
        rhs: 1.0 - ones,
    }
}
