//! The budgeted measurement-selection problem.
//!
//! Variables are laid out as `[x_items (N), x_pairs (K), w_dcm (D)]`. Pair
//! variables stand for products of two item binaries and are tied to them by
//! McCormick rows; `w_d` pays the installation of DCM unit `d` and is linked by
//! `x_{d,t} <= w_d`.

use crate::catalog::{cents_to_dollars, dollars_to_cents, item_cost_vector, Cents, ItemIndex, ItemKind};
use crate::error::{Error, Result};
use crate::fimatoms::FimAtoms;
use crate::lp::{LpInstance, Sense};
use crate::symmat::{logdet, SymMatrix};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

/// Optimality criterion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Objective {
    /// Trace of the information matrix.
    AOptimality,
    /// Log-determinant of the information matrix.
    DOptimality,
}

/// Sampling limits on the DCM binaries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionLimits {
    /// Total samples over all DCM units.
    pub total: usize,
    /// Samples per DCM unit.
    pub per_unit: usize,
    /// Minimum spacing between two samples of the same unit.
    pub min_interval: f64,
}

impl Default for SelectionLimits {
    fn default() -> Self {
        Self {
            total: usize::MAX,
            per_unit: usize::MAX,
            min_interval: 0.0,
        }
    }
}

/// What a constraint row encodes; used for reporting violations.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowKind {
    /// `x_ab <= x_a`, `x_ab <= x_b`, `x_a + x_b - 1 <= x_ab`; `which` is 0, 1, 2.
    McCormick { pair: usize, which: u8 },
    Budget,
    TotalSamples,
    UnitSamples { unit: usize },
    Window { unit: usize, start: usize },
    Link { item: usize },
}

impl RowKind {
    pub fn category(&self) -> &'static str {
        match self {
            RowKind::McCormick { .. } => "mccormick",
            RowKind::Budget => "budget",
            RowKind::TotalSamples => "total-samples",
            RowKind::UnitSamples { .. } => "unit-samples",
            RowKind::Window { .. } => "window",
            RowKind::Link { .. } => "link",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    GapLimit,
    IterationLimit,
}

impl fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::GapLimit => "gap-limit",
            SolveStatus::IterationLimit => "iteration-limit",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoProblem {
    pub idx: Arc<ItemIndex>,
    pub atoms: Arc<FimAtoms>,
    pub objective: Objective,
    pub budget: Cents,
    pub limits: SelectionLimits,
    pub item_cost: Vec<Cents>,
    pub install_cost: Vec<Cents>,
    /// Constraint system over all variables with `[0, 1]` bounds and a zero
    /// objective; solvers fill in their own objective.
    pub lp: LpInstance,
    pub row_kinds: Vec<RowKind>,
    pub relax: bool,
}

pub fn build_problem(
    idx: Arc<ItemIndex>,
    atoms: Arc<FimAtoms>,
    objective: Objective,
    budget: f64,
    limits: SelectionLimits,
    relax: bool,
) -> Result<MoProblem> {
    if atoms.n_items() != idx.len() {
        return Err(Error::shape(format!(
            "atoms cover {} items, index has {}",
            atoms.n_items(),
            idx.len()
        )));
    }
    if budget < 0.0 {
        return Err(Error::invalid(format!("budget {budget} is negative")));
    }
    if !(limits.min_interval >= 0.0) {
        return Err(Error::invalid("minimum sampling interval must be non-negative"));
    }
    let budget = dollars_to_cents(budget)?;
    let (item_cost, install_cost) = item_cost_vector(&idx);
    let (n, k, d) = (idx.len(), atoms.n_pairs(), idx.dcm_units.len());
    let mut lp = LpInstance::new(n + k + d);
    lp.names = (0..n)
        .map(|i| format!("x{i}"))
        .chain((0..k).map(|j| format!("y{j}")))
        .chain((0..d).map(|u| format!("w{u}")))
        .collect();
    let mut kinds = Vec::new();
    let mut push = |lp: &mut LpInstance, kind: RowKind, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64| {
        lp.add_row(coeffs, sense, rhs);
        kinds.push(kind);
    };

    for (pi, &(a, b)) in atoms.pairs.iter().enumerate() {
        let y = n + pi;
        push(&mut lp, RowKind::McCormick { pair: pi, which: 0 }, vec![(a, -1.0), (y, 1.0)], Sense::Le, 0.0);
        push(&mut lp, RowKind::McCormick { pair: pi, which: 1 }, vec![(b, -1.0), (y, 1.0)], Sense::Le, 0.0);
        push(
            &mut lp,
            RowKind::McCormick { pair: pi, which: 2 },
            vec![(a, 1.0), (b, 1.0), (y, -1.0)],
            Sense::Le,
            1.0,
        );
    }

    let mut cost_row: Vec<(usize, f64)> = item_cost
        .iter()
        .enumerate()
        .filter(|(_, &c)| c != 0)
        .map(|(i, &c)| (i, c as f64))
        .collect();
    cost_row.extend(
        install_cost
            .iter()
            .enumerate()
            .filter(|(_, &c)| c != 0)
            .map(|(u, &c)| (n + k + u, c as f64)),
    );
    push(&mut lp, RowKind::Budget, cost_row, Sense::Le, budget as f64);

    let samples: Vec<(usize, f64)> = idx.dcm_units.iter().flat_map(|u| u.items.iter().map(|&i| (i, 1.0))).collect();
    push(&mut lp, RowKind::TotalSamples, samples, Sense::Le, cap_rhs(limits.total));
    for (u, unit) in idx.dcm_units.iter().enumerate() {
        let coeffs = unit.items.iter().map(|&i| (i, 1.0)).collect();
        push(&mut lp, RowKind::UnitSamples { unit: u }, coeffs, Sense::Le, cap_rhs(limits.per_unit));
    }

    let mut whole_horizon_conflict = false;
    for (u, unit) in idx.dcm_units.iter().enumerate() {
        for (s, &t0) in unit.times.iter().enumerate() {
            let coeffs: Vec<(usize, f64)> = unit
                .times
                .iter()
                .zip(&unit.items)
                .filter(|(&t, _)| t >= t0 && t - t0 < limits.min_interval)
                .map(|(_, &i)| (i, 1.0))
                .collect();
            if s == 0 && unit.times.len() > 1 && coeffs.len() == unit.times.len() {
                whole_horizon_conflict = true;
            }
            push(&mut lp, RowKind::Window { unit: u, start: s }, coeffs, Sense::Le, 1.0);
        }
    }
    if whole_horizon_conflict {
        log::warn!(
            "minimum interval {} spans a whole DCM horizon; at most one sample per unit is possible",
            limits.min_interval
        );
    }

    for (u, unit) in idx.dcm_units.iter().enumerate() {
        for &i in &unit.items {
            push(&mut lp, RowKind::Link { item: i }, vec![(i, 1.0), (n + k + u, -1.0)], Sense::Le, 0.0);
        }
    }

    Ok(MoProblem {
        idx,
        atoms,
        objective,
        budget,
        limits,
        item_cost,
        install_cost,
        lp,
        row_kinds: kinds,
        relax,
    })
}

fn cap_rhs(cap: usize) -> f64 {
    if cap == usize::MAX {
        1e9
    } else {
        cap as f64
    }
}

/// One solve outcome over the full variable layout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub x_items: Vec<f64>,
    pub x_pairs: Vec<f64>,
    pub w_dcm: Vec<f64>,
    pub trace: f64,
    pub logdet: f64,
    /// Achieved cost in dollars.
    pub cost: f64,
    pub status: SolveStatus,
    /// Best proven bound on the optimized metric.
    pub bound: f64,
    pub nodes: usize,
    pub iterations: usize,
    pub cuts: usize,
}

impl MoProblem {
    pub fn n_items(&self) -> usize {
        self.idx.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.atoms.n_pairs()
    }

    pub fn n_dcm(&self) -> usize {
        self.idx.dcm_units.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_items() + self.n_pairs() + self.n_dcm()
    }

    /// Variables that must be integral in the non-relaxed problem.
    pub fn integer_vars(&self) -> Vec<usize> {
        let (n, k) = (self.n_items(), self.n_pairs());
        (0..n).chain(n + k..n + k + self.n_dcm()).collect()
    }

    /// Same problem at another budget.
    pub fn with_budget(&self, budget: f64) -> Result<MoProblem> {
        if budget < 0.0 {
            return Err(Error::invalid(format!("budget {budget} is negative")));
        }
        let cents = dollars_to_cents(budget)?;
        let mut p = self.clone();
        p.budget = cents;
        let row = p.row_kinds.iter().position(|k| *k == RowKind::Budget).expect("budget row");
        p.lp.rows[row].rhs = cents as f64;
        Ok(p)
    }

    pub fn with_objective(&self, objective: Objective, relax: bool) -> MoProblem {
        let mut p = self.clone();
        p.objective = objective;
        p.relax = relax;
        p
    }

    /// Full variable vector of a binary item selection: pairs are products and
    /// `w_d` is set exactly when unit `d` has a sample.
    pub fn complete_selection(&self, selected: &[bool]) -> Vec<f64> {
        let b = |v: bool| f64::from(u8::from(v));
        let mut x: Vec<f64> = selected.iter().map(|&s| b(s)).collect();
        x.extend(self.atoms.pairs.iter().map(|&(a, c)| b(selected[a] && selected[c])));
        x.extend(self.idx.dcm_units.iter().map(|u| b(u.items.iter().any(|&i| selected[i]))));
        x
    }

    /// Cost of a variable vector in cents (fractional for relaxed points).
    pub fn cost_of(&self, x: &[f64]) -> f64 {
        let (n, k) = (self.n_items(), self.n_pairs());
        let items: f64 = self.item_cost.iter().zip(x).map(|(&c, v)| c as f64 * v).sum();
        let installs: f64 = self.install_cost.iter().zip(&x[n + k..]).map(|(&c, v)| c as f64 * v).sum();
        items + installs
    }

    pub fn information(&self, x: &[f64]) -> SymMatrix {
        let (n, k) = (self.n_items(), self.n_pairs());
        self.atoms.eval_unchecked(&x[..n], &x[n..n + k])
    }

    /// Packages a full variable vector as a [`Solution`] with both metrics.
    pub fn make_solution(&self, x: &[f64], status: SolveStatus) -> Result<Solution> {
        if x.len() != self.n_vars() {
            return Err(Error::shape(format!("{} values for {} variables", x.len(), self.n_vars())));
        }
        let (n, k) = (self.n_items(), self.n_pairs());
        let m = self.information(x);
        let ld = logdet(&m, 0.0)?;
        let bound = match self.objective {
            Objective::AOptimality => m.trace(),
            Objective::DOptimality => ld,
        };
        Ok(Solution {
            x_items: x[..n].to_vec(),
            x_pairs: x[n..n + k].to_vec(),
            w_dcm: x[n + k..].to_vec(),
            trace: m.trace(),
            logdet: ld,
            cost: self.cost_of(x) / 100.0,
            status,
            bound,
            nodes: 0,
            iterations: 0,
            cuts: 0,
        })
    }

    pub fn infeasible_solution(&self) -> Solution {
        Solution {
            x_items: vec![0.0; self.n_items()],
            x_pairs: vec![0.0; self.n_pairs()],
            w_dcm: vec![0.0; self.n_dcm()],
            trace: f64::NAN,
            logdet: f64::NAN,
            cost: 0.0,
            status: SolveStatus::Infeasible,
            bound: f64::NEG_INFINITY,
            nodes: 0,
            iterations: 0,
            cuts: 0,
        }
    }

    /// Value of the problem's own metric.
    pub fn metric(&self, s: &Solution) -> f64 {
        match self.objective {
            Objective::AOptimality => s.trace,
            Objective::DOptimality => s.logdet,
        }
    }

    /// Whether a full variable vector satisfies every row and bound.
    pub fn is_feasible(&self, x: &[f64], tol: f64) -> bool {
        let budget_tol = tol.max(1e-9 * self.budget as f64);
        x.iter().all(|&v| (-tol..=1.0 + tol).contains(&v))
            && self.lp.rows.iter().zip(&self.row_kinds).all(|(r, kind)| {
                let act: f64 = r.coeffs.iter().map(|&(j, c)| c * x[j]).sum();
                let t = if *kind == RowKind::Budget { budget_tol } else { tol };
                act <= r.rhs + t
            })
    }

    /// The constraint system plus rows that scale each DCM's sample cap and
    /// sampling windows by its installation variable: `Σ_t x_dt <= L_d w_d` and
    /// `Σ_{window} x_dt <= w_d`. Both are implied at binary points, so the
    /// integer feasible set is unchanged while fractional installs get pricier.
    pub fn strengthened_lp(&self) -> LpInstance {
        let mut lp = self.lp.clone();
        let wcol = self.n_items() + self.n_pairs();
        for (r, kind) in self.row_kinds.iter().enumerate() {
            let unit = match *kind {
                RowKind::UnitSamples { unit } | RowKind::Window { unit, .. } => unit,
                _ => continue,
            };
            let row = &self.lp.rows[r];
            let cap = row.rhs.min(row.coeffs.len() as f64);
            if cap <= 0.0 {
                continue;
            }
            let mut coeffs = row.coeffs.clone();
            coeffs.push((wcol + unit, -cap));
            lp.add_row(coeffs, Sense::Le, 0.0);
        }
        lp
    }

    pub fn describe_row(&self, row: usize) -> String {
        let idx = &self.idx;
        match &self.row_kinds[row] {
            RowKind::McCormick { pair, which } => {
                let (a, b) = self.atoms.pairs[*pair];
                format!("McCormick {which} for ({}, {})", idx.items[a].name, idx.items[b].name)
            }
            RowKind::Budget => "budget".into(),
            RowKind::TotalSamples => "total DCM samples".into(),
            RowKind::UnitSamples { unit } => format!("samples of {}", idx.dcm_units[*unit].name),
            RowKind::Window { unit, start } => {
                let u = &idx.dcm_units[*unit];
                format!("sampling window of {} from t = {}", u.name, u.times[*start])
            }
            RowKind::Link { item } => format!("install link of {}", idx.items[*item].name),
        }
    }
}

/// Outcome of [`check_solution`], one list of findings per category.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    /// `(row category, description)` for every violated constraint row.
    pub constraints: Vec<(String, String)>,
    pub integrality: Vec<String>,
    pub pairs: Vec<String>,
    pub cost: Vec<String>,
    pub objective: Vec<String>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.categories().iter().all(|(_, ok)| *ok)
    }

    pub fn categories(&self) -> [(&'static str, bool); 5] {
        [
            ("constraints", self.constraints.is_empty()),
            ("integrality", self.integrality.is_empty()),
            ("pairs", self.pairs.is_empty()),
            ("cost", self.cost.is_empty()),
            ("objective", self.objective.is_empty()),
        ]
    }

    /// Whether some violated row belongs to `category` (see [`RowKind::category`]).
    pub fn violates(&self, category: &str) -> bool {
        self.constraints.iter().any(|(c, _)| c == category)
    }

    pub fn all_findings(&self) -> Vec<String> {
        self.constraints
            .iter()
            .map(|(_, d)| d.clone())
            .chain(self.integrality.iter().cloned())
            .chain(self.pairs.iter().cloned())
            .chain(self.cost.iter().cloned())
            .chain(self.objective.iter().cloned())
            .collect()
    }
}

const CHECK_TOL: f64 = 1e-6;

/// Re-verifies a solution from scratch: rows, integrality, pair products, cost
/// arithmetic and both metrics.
pub fn check_solution(p: &MoProblem, s: &Solution) -> Result<CheckReport> {
    if s.x_items.len() != p.n_items() || s.x_pairs.len() != p.n_pairs() || s.w_dcm.len() != p.n_dcm() {
        return Err(Error::shape("solution dimensions do not match the problem"));
    }
    let mut rep = CheckReport::default();
    if s.status == SolveStatus::Infeasible {
        return Ok(rep);
    }
    let x: Vec<f64> = s.x_items.iter().chain(&s.x_pairs).chain(&s.w_dcm).copied().collect();
    for (j, &v) in x.iter().enumerate() {
        if !(-CHECK_TOL..=1.0 + CHECK_TOL).contains(&v) {
            rep.constraints.push(("bounds".into(), format!("variable {} = {v} outside [0, 1]", p.lp.names[j])));
        }
    }
    for (r, row) in p.lp.rows.iter().enumerate() {
        let act: f64 = row.coeffs.iter().map(|&(j, c)| c * x[j]).sum();
        if act > row.rhs + CHECK_TOL {
            rep.constraints.push((
                p.row_kinds[r].category().into(),
                format!("{}: activity {act} exceeds {}", p.describe_row(r), row.rhs),
            ));
        }
    }
    if !p.relax {
        for j in p.integer_vars() {
            if (x[j] - x[j].round()).abs() > 1e-9 {
                rep.integrality.push(format!("{} = {} is fractional", p.lp.names[j], x[j]));
            }
        }
        for (k, &(a, b)) in p.atoms.pairs.iter().enumerate() {
            let want = s.x_items[a].round() * s.x_items[b].round();
            if (s.x_pairs[k] - want).abs() > 1e-9 {
                rep.pairs.push(format!(
                    "pair ({}, {}) = {} but the item product is {want}",
                    p.idx.items[a].name, p.idx.items[b].name, s.x_pairs[k]
                ));
            }
        }
    }
    let cost = p.cost_of(&x) / 100.0;
    if (cost - s.cost).abs() > CHECK_TOL {
        rep.cost.push(format!("reported cost {} but recomputed {cost}", s.cost));
    }
    if cost > cents_to_dollars(p.budget) + CHECK_TOL {
        rep.cost.push(format!("cost {cost} exceeds budget {}", cents_to_dollars(p.budget)));
    }
    let m = p.information(&x);
    let (tr, ld) = (m.trace(), logdet(&m, 0.0)?);
    if (tr - s.trace).abs() > 1e-9 * tr.abs().max(1.0) {
        rep.objective.push(format!("reported trace {} but recomputed {tr}", s.trace));
    }
    if (ld - s.logdet).abs() > 1e-9 * ld.abs().max(1.0) {
        rep.objective.push(format!("reported log-det {} but recomputed {ld}", s.logdet));
    }
    Ok(rep)
}

/// Instance counts next to the closed-form size formulas of the full
/// (unpruned, unreduced) formulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizeReport {
    pub n_items: usize,
    pub n_params: usize,
    pub n_dcm: usize,
    pub n_pairs: usize,
    pub pruned_pairs: usize,
    pub variables: usize,
    pub binaries: usize,
    pub equalities: usize,
    pub inequalities: usize,
    pub mccormick_rows: usize,
    pub window_rows: usize,
    pub link_rows: usize,
    /// `(N² + N)/2` with `N` the item count.
    pub formula_item_products: usize,
    /// `(P² + P)/2`.
    pub formula_fim_entries: usize,
    pub formula_variables: usize,
    pub formula_equalities: usize,
    pub formula_inequalities: usize,
}

pub fn problem_size(p: &MoProblem) -> SizeReport {
    let count = |cat: &str| p.row_kinds.iter().filter(|k| k.category() == cat).count();
    let n = p.n_items();
    let np = p.atoms.n_params;
    let d = p.n_dcm();
    let dcm_times: usize = p.idx.dcm_units.iter().map(|u| u.times.len()).sum();
    let items2 = (n * n + n) / 2;
    let fim = (np * np + np) / 2;
    SizeReport {
        n_items: n,
        n_params: np,
        n_dcm: d,
        n_pairs: p.n_pairs(),
        pruned_pairs: p.atoms.pruned,
        variables: p.n_vars(),
        binaries: if p.relax { 0 } else { n + d },
        equalities: p.lp.rows.iter().filter(|r| r.sense == Sense::Eq).count(),
        inequalities: p.lp.rows.iter().filter(|r| r.sense != Sense::Eq).count(),
        mccormick_rows: count("mccormick"),
        window_rows: count("window"),
        link_rows: count("link"),
        formula_item_products: items2,
        formula_fim_entries: fim,
        formula_variables: items2 + fim + d + 2,
        formula_equalities: fim + 2,
        formula_inequalities: 3 * (n * n - n) / 2 + 2 + 2 * d + 2 * dcm_times,
    }
}

/// Serialized form of a solution, keyed by item names.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub objective: Objective,
    pub budget: f64,
    /// Item name to selection value (0/1 for integral solutions).
    pub items: BTreeMap<String, f64>,
    /// DCM unit name to its selected sample times.
    pub dcm_times: BTreeMap<String, Vec<f64>>,
    pub trace: f64,
    pub logdet: f64,
    pub cost: f64,
    pub status: SolveStatus,
}

impl SolutionFile {
    pub fn new(p: &MoProblem, s: &Solution) -> Self {
        let items = p
            .idx
            .items
            .iter()
            .zip(&s.x_items)
            .map(|(it, &v)| {
                let v = if (v - v.round()).abs() <= 1e-9 { v.round() } else { v };
                (it.name.clone(), v)
            })
            .collect();
        let mut dcm_times = BTreeMap::new();
        for u in &p.idx.dcm_units {
            let ts: Vec<f64> =
                u.items.iter().zip(&u.times).filter(|(&i, _)| s.x_items[i] > 0.5).map(|(_, &t)| t).collect();
            dcm_times.insert(u.name.clone(), ts);
        }
        Self {
            objective: p.objective,
            budget: cents_to_dollars(p.budget),
            items,
            dcm_times,
            trace: s.trace,
            logdet: s.logdet,
            cost: s.cost,
            status: s.status,
        }
    }

    /// Selected SCM units and DCM sample times, in a compact human form.
    pub fn summary(&self, idx: &ItemIndex) -> String {
        let mut parts = Vec::new();
        for it in &idx.items {
            if let ItemKind::Scm { .. } = it.kind {
                if self.items.get(&it.name).copied().unwrap_or(0.0) > 0.5 {
                    parts.push(it.name.clone());
                }
            }
        }
        for (name, ts) in &self.dcm_times {
            if !ts.is_empty() {
                let ts: Vec<String> = ts.iter().map(|t| t.to_string()).collect();
                parts.push(format!("{name}{{{}}}", ts.join(",")));
            }
        }
        if parts.is_empty() {
            "none".into()
        } else {
            parts.join(" ")
        }
    }
}

/// Binary item selection from named SCMs and `(dcm unit, time)` samples.
pub fn selection_from_names(idx: &ItemIndex, scms: &[&str], samples: &[(&str, f64)]) -> Result<Vec<bool>> {
    let mut sel = vec![false; idx.len()];
    for name in scms {
        let u = idx
            .scm_units
            .iter()
            .find(|u| u.name == *name)
            .ok_or_else(|| Error::invalid(format!("unknown SCM unit {name}")))?;
        sel[u.items[0]] = true;
    }
    for &(name, t) in samples {
        let u = idx
            .dcm_units
            .iter()
            .find(|u| u.name == name)
            .ok_or_else(|| Error::invalid(format!("unknown DCM unit {name}")))?;
        let k = u
            .times
            .iter()
            .position(|&s| s == t)
            .ok_or_else(|| Error::invalid(format!("{name} has no sample time {t}")))?;
        sel[u.items[k]] = true;
    }
    Ok(sel)
}
