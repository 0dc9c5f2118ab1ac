//! FIM assembly with an on-disk atom cache, single solves and budget sweeps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use fisheropt::catalog::{assemble_covariance, build_item_index};
use fisheropt::doptsolve::{solve_minlp_dopt_traced, solve_relaxed_dopt_from, write_oa_trace, OaTraceEntry};
use fisheropt::fimatoms::{atoms_content_hash, build_atoms, invert_covariance, load_cached_atoms, store_cached_atoms};
use fisheropt::milp::{solve_lp_relaxation, solve_milp};
use fisheropt::moproblem::{build_problem, check_solution, CheckReport, SolutionFile};
use fisheropt::sensmodel::{ingest_sensitivities, kinetics_sensitivities, SensitivityManifest};
use fisheropt::symmat::{eig_sym, logdet};
use fisheropt::{FimAtoms, ItemIndex, MoProblem, Objective, SensitivityMatrix, Solution, SolveStatus, SymMatrix};
use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{load_config, LoadedConfig, ObjectiveTag, SensitivitySource, SolverConfig, SweepSpec};
use crate::error::{CliError, Result};

pub const ATOM_CACHE: &str = "atoms_cache.json";
pub const FIM_SUMMARY: &str = "fim_summary.txt";
pub const PARETO_CSV: &str = "pareto.csv";
pub const PARETO_HEADER: [&str; 8] = ["budget", "objective", "trace", "logdet", "cost", "status", "nodes", "iters"];

pub fn solution_file_name(tag: ObjectiveTag, budget: i64) -> String {
    format!("solution_{tag}_{budget}.json")
}

pub fn oa_trace_file_name(budget: i64) -> String {
    format!("oa_trace_{budget}.csv")
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

/// Everything a solve needs: the config, indexed catalog and FIM atoms.
#[derive(Clone, Debug)]
pub struct Workspace {
    pub config: LoadedConfig,
    pub sensitivities: SensitivityMatrix,
    pub idx: Arc<ItemIndex>,
    pub atoms: Arc<FimAtoms>,
    pub content_hash: String,
    pub cache_hit: bool,
}

pub fn load_sensitivities(cfg: &LoadedConfig) -> Result<SensitivityMatrix> {
    Ok(match &cfg.config.sensitivities {
        SensitivitySource::Kinetics(k) => kinetics_sensitivities(k)?,
        SensitivitySource::Table { csv, manifest } => {
            let m = SensitivityManifest::load(&cfg.resolve(manifest))?;
            ingest_sensitivities(&cfg.resolve(csv), &m)?
        }
    })
}

/// Builds the atoms, reusing `cache_dir/atoms_cache.json` when its content hash matches.
pub fn prepare(cfg: &LoadedConfig, cache_dir: Option<&Path>) -> Result<Workspace> {
    let q = load_sensitivities(cfg)?;
    let cat = &cfg.catalog;
    cat.validate()?;
    cat.validate_against(&q)?;
    let idx = build_item_index(cat)?;
    let prior = SymMatrix::scaled_identity(q.n_params(), cfg.config.prior_eps);
    let hash = atoms_content_hash(&q, cat, &prior, cfg.config.prune_pairs)?;
    let cache = match cache_dir {
        Some(dir) => {
            ensure_dir(dir)?;
            Some(dir.join(ATOM_CACHE))
        }
        None => None,
    };
    let cached = match &cache {
        Some(path) => load_cached_atoms(path, &hash)?,
        None => None,
    };
    let cache_hit = cached.is_some();
    let atoms = match cached {
        Some(a) => a,
        None => {
            let sigma = assemble_covariance(cat, &idx)?;
            let w = invert_covariance(&sigma)?;
            let a = build_atoms(&q, &w, &idx, prior, cfg.config.prune_pairs)?;
            if let Some(path) = &cache {
                store_cached_atoms(path, &hash, &a)?;
            }
            a
        }
    };
    if atoms.n_items() != idx.len() {
        return Err(CliError::Invalid("cached atoms do not match the item index".into()));
    }
    Ok(Workspace {
        config: cfg.clone(),
        sensitivities: q,
        idx: Arc::new(idx),
        atoms: Arc::new(atoms),
        content_hash: hash,
        cache_hit,
    })
}

impl Workspace {
    pub fn solver(&self) -> &SolverConfig {
        &self.config.config.solver
    }

    pub fn problem(&self, tag: ObjectiveTag, budget: i64) -> Result<MoProblem> {
        Ok(build_problem(
            self.idx.clone(),
            self.atoms.clone(),
            tag.objective(),
            budget as f64,
            self.config.config.limits,
            tag.relaxed(),
        )?)
    }
}

/// Full-selection information summary.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FimSummary {
    pub content_hash: String,
    pub cache_hit: bool,
    pub parameters: Vec<String>,
    pub n_items: usize,
    pub n_scm_units: usize,
    pub n_dcm_units: usize,
    pub n_pairs: usize,
    pub prior_eps: f64,
    pub trace: f64,
    pub logdet: f64,
    /// Descending.
    pub eigenvalues: Vec<f64>,
}

impl FimSummary {
    pub fn of(ws: &Workspace) -> Result<Self> {
        let full = ws.atoms.full_information();
        let eig = eig_sym(&full)?;
        Ok(FimSummary {
            content_hash: ws.content_hash.clone(),
            cache_hit: ws.cache_hit,
            parameters: ws.sensitivities.parameters.clone(),
            n_items: ws.idx.len(),
            n_scm_units: ws.idx.scm_units.len(),
            n_dcm_units: ws.idx.dcm_units.len(),
            n_pairs: ws.atoms.n_pairs(),
            prior_eps: ws.config.config.prior_eps,
            trace: full.trace(),
            logdet: logdet(&full, 0.0).unwrap_or(f64::NEG_INFINITY),
            eigenvalues: eig.values,
        })
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "content hash: {}", self.content_hash);
        let _ = writeln!(s, "atom cache: {}", if self.cache_hit { "hit" } else { "built" });
        let _ = writeln!(s, "parameters: {}", self.parameters.join(" "));
        let _ = writeln!(
            s,
            "items: {} ({} SCM units, {} DCM units), pair atoms: {}",
            self.n_items, self.n_scm_units, self.n_dcm_units, self.n_pairs
        );
        let _ = writeln!(s, "prior: {:e} I", self.prior_eps);
        let _ = writeln!(s, "full-selection trace: {:.10e}", self.trace);
        let _ = writeln!(s, "full-selection logdet: {:.10}", self.logdet);
        let _ = writeln!(s, "eigenvalues:");
        for (k, v) in self.eigenvalues.iter().enumerate() {
            let _ = writeln!(s, "  lambda_{}: {:.10e}", k + 1, v);
        }
        let sum: f64 = self.eigenvalues.iter().sum();
        let log_prod: f64 = self.eigenvalues.iter().map(|v| v.ln()).sum();
        let _ = writeln!(s, "sum of eigenvalues: {sum:.10e}");
        let _ = writeln!(s, "sum of log eigenvalues: {log_prod:.10}");
        s
    }
}

/// `fim <config>`: builds or reloads the atoms and writes the summary.
pub fn cmd_fim(config: &Path, out: Option<&Path>) -> Result<FimSummary> {
    let cfg = load_config(config)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir());
    let ws = prepare(&cfg, Some(&dir))?;
    let summary = FimSummary::of(&ws)?;
    write_file(&dir.join(FIM_SUMMARY), summary.render())?;
    Ok(summary)
}

/// Starting points offered to a solver; infeasible ones are ignored.
#[derive(Clone, Debug, Default)]
pub struct Seeds {
    pub selections: Vec<Vec<bool>>,
    /// A (possibly fractional) point over the full variable layout.
    pub point: Option<Vec<f64>>,
}

/// One solver run with its problem and check report.
#[derive(Clone, Debug)]
pub struct SolveRun {
    pub tag: ObjectiveTag,
    pub budget: i64,
    pub problem: MoProblem,
    pub solution: Solution,
    pub check: CheckReport,
    pub oa_trace: Vec<OaTraceEntry>,
}

pub fn solution_point(s: &Solution) -> Vec<f64> {
    s.x_items.iter().chain(&s.x_pairs).chain(&s.w_dcm).copied().collect()
}

pub fn selection_of(s: &Solution) -> Vec<bool> {
    s.x_items.iter().map(|&v| v > 0.5).collect()
}

fn point_value(p: &MoProblem, x: &[f64]) -> f64 {
    let m = p.information(x);
    match p.objective {
        Objective::AOptimality => m.trace(),
        Objective::DOptimality => logdet(&m, 0.0).unwrap_or(f64::NEG_INFINITY),
    }
}

/// The feasible candidate with the best objective value; earlier wins ties.
fn best_start(p: &MoProblem, candidates: impl IntoIterator<Item = Vec<f64>>) -> Option<Vec<f64>> {
    let mut best: Option<(f64, Vec<f64>)> = None;
    for x in candidates {
        if x.len() != p.n_vars() || !p.is_feasible(&x, 1e-9) {
            continue;
        }
        let v = point_value(p, &x);
        if best.as_ref().map_or(true, |(bv, _)| v > *bv) {
            best = Some((v, x));
        }
    }
    best.map(|(_, x)| x)
}

pub fn solve_tag(ws: &Workspace, tag: ObjectiveTag, budget: i64, seeds: &Seeds) -> Result<SolveRun> {
    let p = ws.problem(tag, budget)?;
    let solver = ws.solver();
    let selected = || {
        seeds
            .selections
            .iter()
            .filter(|s| s.len() == p.n_items())
            .map(|s| p.complete_selection(s))
            .collect::<Vec<_>>()
    };
    let mut oa_trace = Vec::new();
    let start = Instant::now();
    let solution = match tag {
        ObjectiveTag::ALp => solve_lp_relaxation(&p, solver.lp())?,
        ObjectiveTag::AMilp => {
            let mut cfg = solver.bnb.clone();
            if let Some(x) = best_start(&p, selected()) {
                cfg.warm_start = Some(x[..p.n_items()].iter().map(|&v| v > 0.5).collect());
            }
            solve_milp(&p, &cfg)?
        }
        ObjectiveTag::DMinlp => {
            let mut cfg = solver.oa.clone();
            if let Some(x) = best_start(&p, selected()) {
                cfg.warm_start = Some(x[..p.n_items()].iter().map(|&v| v > 0.5).collect());
            }
            let out = solve_minlp_dopt_traced(&p, &cfg)?;
            oa_trace = out.trace;
            out.solution
        }
        ObjectiveTag::DNlp => {
            let candidates = seeds.point.iter().cloned().chain(selected());
            let x0 = best_start(&p, candidates).unwrap_or_else(|| vec![0.0; p.n_vars()]);
            solve_relaxed_dopt_from(&p, &solver.fw, &x0)?
        }
    };
    info!(
        "{tag} at ${budget}: {} trace {:.6} logdet {:.6} in {:.2?}",
        solution.status,
        solution.trace,
        solution.logdet,
        start.elapsed()
    );
    let check = check_solution(&p, &solution)?;
    Ok(SolveRun {
        tag,
        budget,
        problem: p,
        solution,
        check,
        oa_trace,
    })
}

fn tidy(v: f64) -> f64 {
    if (v - v.round()).abs() <= 1e-9 {
        v.round()
    } else {
        v
    }
}

/// Relaxation-dominance evidence stored next to an integral solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DominanceCheck {
    pub relaxation: ObjectiveTag,
    pub relaxed_value: f64,
    pub value: f64,
    pub holds: bool,
}

/// The `solution_<obj>_<budget>.json` document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionDocument {
    pub objective: ObjectiveTag,
    pub budget: i64,
    pub prior_eps: f64,
    pub content_hash: String,
    pub summary: String,
    /// SCM units in catalog order with their selection value.
    pub scm_units: Vec<(String, f64)>,
    /// DCM units in catalog order with `(time, value)` for every nonzero sample.
    pub dcm_units: Vec<(String, Vec<(f64, f64)>)>,
    pub solution: SolutionFile,
    /// `None` when no finite bound was proven.
    pub bound: Option<f64>,
    pub nodes: usize,
    pub iterations: usize,
    pub cuts: usize,
    pub check_passed: bool,
    pub check: CheckReport,
    pub dominance: Option<DominanceCheck>,
}

impl SolutionDocument {
    pub fn new(ws: &Workspace, run: &SolveRun) -> Self {
        let s = &run.solution;
        let file = SolutionFile::new(&run.problem, s);
        let scm_units = ws.idx.scm_units.iter().map(|u| (u.name.clone(), tidy(s.x_items[u.items[0]]))).collect();
        let dcm_units = ws
            .idx
            .dcm_units
            .iter()
            .map(|u| {
                let picks = u
                    .items
                    .iter()
                    .zip(&u.times)
                    .filter(|(&i, _)| s.x_items[i] > 1e-9)
                    .map(|(&i, &t)| (t, tidy(s.x_items[i])))
                    .collect();
                (u.name.clone(), picks)
            })
            .collect();
        SolutionDocument {
            objective: run.tag,
            budget: run.budget,
            prior_eps: ws.config.config.prior_eps,
            content_hash: ws.content_hash.clone(),
            summary: file.summary(&ws.idx),
            scm_units,
            dcm_units,
            solution: file,
            bound: s.bound.is_finite().then_some(s.bound),
            nodes: s.nodes,
            iterations: s.iterations,
            cuts: s.cuts,
            check_passed: run.check.passed(),
            check: run.check.clone(),
            dominance: None,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(solution_file_name(self.objective, self.budget));
        write_file(&path, serde_json::to_string_pretty(self)? + "\n")?;
        Ok(path)
    }
}

fn scale_tol(v: f64) -> f64 {
    1e-9 * v.abs().max(1.0)
}

/// `solve <config> --objective --budget`: solves, checks and writes the solution
/// document. Infeasibility and failed checks become errors after the file is written.
pub fn cmd_solve(config: &Path, tag: ObjectiveTag, budget: i64, out: Option<&Path>) -> Result<SolutionDocument> {
    if budget < 0 {
        return Err(CliError::Invalid("budget must be non-negative".into()));
    }
    let cfg = load_config(config)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir());
    let ws = prepare(&cfg, Some(&dir))?;
    let run = solve_tag(&ws, tag, budget, &Seeds::default())?;
    let mut doc = SolutionDocument::new(&ws, &run);
    if tag == ObjectiveTag::AMilp && run.solution.status != SolveStatus::Infeasible {
        let lp = solve_tag(&ws, ObjectiveTag::ALp, budget, &Seeds::default())?;
        doc.dominance = Some(DominanceCheck {
            relaxation: ObjectiveTag::ALp,
            relaxed_value: lp.solution.trace,
            value: run.solution.trace,
            holds: lp.solution.trace >= run.solution.trace - scale_tol(run.solution.trace),
        });
    }
    doc.write(&dir)?;
    if run.solution.status == SolveStatus::Infeasible {
        return Err(CliError::Infeasible(budget));
    }
    let mut findings = run.check.all_findings();
    if let Some(d) = doc.dominance.as_ref().filter(|d| !d.holds) {
        findings.push(format!(
            "{} value {} exceeds its relaxation {}",
            tag, d.value, d.relaxed_value
        ));
    }
    if !findings.is_empty() {
        return Err(CliError::CheckFailed(findings));
    }
    Ok(doc)
}

/// One row of `pareto.csv` plus the data kept for reporting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoRecord {
    pub budget: i64,
    pub objective: ObjectiveTag,
    pub trace: f64,
    pub logdet: f64,
    pub cost: f64,
    pub status: String,
    pub nodes: usize,
    pub iters: usize,
    pub bound: f64,
    pub selection: String,
    pub error: Option<String>,
}

impl ParetoRecord {
    fn from_run(ws: &Workspace, run: &SolveRun) -> Self {
        let s = &run.solution;
        let (status, error) = if run.check.passed() {
            (s.status.to_string(), None)
        } else {
            ("check-failed".to_string(), Some(run.check.all_findings().join("; ")))
        };
        ParetoRecord {
            budget: run.budget,
            objective: run.tag,
            trace: s.trace,
            logdet: s.logdet,
            cost: s.cost,
            status,
            nodes: s.nodes,
            iters: s.iterations,
            bound: s.bound,
            selection: SolutionFile::new(&run.problem, s).summary(&ws.idx),
            error,
        }
    }

    fn failed(budget: i64, tag: ObjectiveTag, err: &CliError) -> Self {
        ParetoRecord {
            budget,
            objective: tag,
            trace: f64::NAN,
            logdet: f64::NAN,
            cost: f64::NAN,
            status: "error".into(),
            nodes: 0,
            iters: 0,
            bound: f64::NAN,
            selection: String::new(),
            error: Some(err.to_string()),
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none() && self.status != "infeasible"
    }

    pub fn metric(&self) -> f64 {
        self.objective.metric(self.trace, self.logdet)
    }

    /// Distance between the proven bound and the achieved metric.
    pub fn gap(&self) -> f64 {
        if self.bound.is_finite() {
            (self.bound - self.metric()).max(0.0)
        } else {
            f64::INFINITY
        }
    }
}

/// Records in budget-then-run order, and the runs that produced them.
#[derive(Clone, Debug, Default)]
pub struct SweepOutcome {
    pub records: Vec<ParetoRecord>,
    pub runs: Vec<SolveRun>,
}

type BudgetResults = Vec<(ObjectiveTag, Result<SolveRun>)>;

fn run_budget(
    ws: &Workspace,
    order: &[ObjectiveTag],
    budget: i64,
    prev: Option<&BTreeMap<ObjectiveTag, Solution>>,
) -> BudgetResults {
    let mut here: BTreeMap<ObjectiveTag, Solution> = BTreeMap::new();
    let mut out = Vec::new();
    let previous = |t: ObjectiveTag| prev.and_then(|p| p.get(&t));
    for &tag in order {
        let mut seeds = Seeds::default();
        match tag {
            ObjectiveTag::ALp => {}
            ObjectiveTag::AMilp => seeds.selections.extend(previous(tag).map(selection_of)),
            ObjectiveTag::DMinlp => {
                seeds.selections.extend(here.get(&ObjectiveTag::AMilp).map(selection_of));
                seeds.selections.extend(previous(tag).map(selection_of));
            }
            ObjectiveTag::DNlp => {
                seeds.selections.extend(here.get(&ObjectiveTag::DMinlp).map(selection_of));
                seeds.selections.extend(here.get(&ObjectiveTag::AMilp).map(selection_of));
                seeds.point = previous(tag).map(solution_point);
            }
        }
        let r = solve_tag(ws, tag, budget, &seeds);
        match &r {
            Ok(run) if run.solution.status != SolveStatus::Infeasible => {
                here.insert(tag, run.solution.clone());
            }
            Ok(_) => {}
            Err(e) => warn!("{tag} at ${budget} failed: {e}"),
        }
        out.push((tag, r));
    }
    out
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("FISHEROPT_THREADS") {
        let n: usize = v
            .parse()
            .map_err(|_| CliError::Invalid(format!("FISHEROPT_THREADS must be a positive integer, got {v:?}")))?;
        b = b.num_threads(n);
    }
    b.build().map_err(|e| CliError::Invalid(format!("thread pool: {e}")))
}

/// Runs every objective at every budget. With `parallel`, budgets run
/// concurrently and nothing is carried across budgets.
pub fn run_sweep(ws: &Workspace, spec: &SweepSpec, parallel: bool) -> Result<SweepOutcome> {
    spec.validate()?;
    let order = spec.run_order();
    let per_budget: Vec<(i64, BudgetResults)> = if parallel {
        let pool = thread_pool()?;
        pool.install(|| spec.budgets.par_iter().map(|&b| (b, run_budget(ws, &order, b, None))).collect())
    } else {
        let mut prev: BTreeMap<ObjectiveTag, Solution> = BTreeMap::new();
        let mut all = Vec::new();
        for &b in &spec.budgets {
            let res = run_budget(ws, &order, b, spec.warm_chain.then_some(&prev));
            for (tag, r) in &res {
                if let Ok(run) = r {
                    if run.solution.status != SolveStatus::Infeasible {
                        prev.insert(*tag, run.solution.clone());
                    }
                }
            }
            all.push((b, res));
        }
        all
    };
    let mut outcome = SweepOutcome::default();
    for (b, res) in per_budget {
        for (tag, r) in res {
            match r {
                Ok(run) => {
                    outcome.records.push(ParetoRecord::from_run(ws, &run));
                    outcome.runs.push(run);
                }
                Err(e) => outcome.records.push(ParetoRecord::failed(b, tag, &e)),
            }
        }
    }
    Ok(outcome)
}

/// Monotonicity in budget, cross-metric dominance and relaxation dominance.
/// Each tolerance is the proven gap of the record that must be larger, plus a
/// 1e-9 relative margin.
pub fn sweep_violations(records: &[ParetoRecord]) -> Vec<String> {
    let mut out = Vec::new();
    let ok: Vec<&ParetoRecord> = records.iter().filter(|r| r.ok()).collect();
    for tag in ObjectiveTag::ALL {
        let mut series: Vec<&ParetoRecord> = ok.iter().copied().filter(|r| r.objective == tag).collect();
        series.sort_by_key(|r| r.budget);
        for w in series.windows(2) {
            let (a, b) = (w[0], w[1]);
            let slack = b.gap() + scale_tol(a.metric());
            if b.metric() < a.metric() - slack {
                out.push(format!(
                    "monotonicity: {tag} metric fell from {} at ${} to {} at ${} (allowed slack {slack:e}); selections [{}] -> [{}]",
                    a.metric(),
                    a.budget,
                    b.metric(),
                    b.budget,
                    a.selection,
                    b.selection
                ));
            }
        }
    }
    let mut by_budget: BTreeMap<i64, BTreeMap<ObjectiveTag, &ParetoRecord>> = BTreeMap::new();
    for r in &ok {
        by_budget.entry(r.budget).or_default().insert(r.objective, r);
    }
    for (b, m) in &by_budget {
        if let (Some(a), Some(d)) = (m.get(&ObjectiveTag::AMilp), m.get(&ObjectiveTag::DMinlp)) {
            if a.trace < d.trace - a.gap() - scale_tol(d.trace) {
                out.push(format!("dominance at ${b}: a-milp trace {} below d-minlp trace {}", a.trace, d.trace));
            }
            if d.logdet < a.logdet - d.gap() - scale_tol(a.logdet) {
                out.push(format!("dominance at ${b}: d-minlp logdet {} below a-milp logdet {}", d.logdet, a.logdet));
            }
        }
        if let (Some(lp), Some(a)) = (m.get(&ObjectiveTag::ALp), m.get(&ObjectiveTag::AMilp)) {
            if lp.trace < a.trace - scale_tol(a.trace) {
                out.push(format!("relaxation at ${b}: a-lp trace {} below a-milp trace {}", lp.trace, a.trace));
            }
        }
        if let (Some(nlp), Some(d)) = (m.get(&ObjectiveTag::DNlp), m.get(&ObjectiveTag::DMinlp)) {
            let upper = if nlp.bound.is_finite() { nlp.bound } else { f64::INFINITY };
            if upper < d.logdet - scale_tol(d.logdet) {
                out.push(format!("relaxation at ${b}: d-nlp bound {upper} below d-minlp logdet {}", d.logdet));
            }
        }
    }
    out
}

pub fn write_pareto_csv<W: std::io::Write>(records: &[ParetoRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PARETO_HEADER)?;
    for r in records {
        w.write_record([
            r.budget.to_string(),
            r.objective.to_string(),
            r.trace.to_string(),
            r.logdet.to_string(),
            r.cost.to_string(),
            r.status.clone(),
            r.nodes.to_string(),
            r.iters.to_string(),
        ])?;
    }
    w.flush().map_err(|e| CliError::io("pareto.csv", e))?;
    Ok(())
}

/// Gnuplot table of one metric: a budget column, then one column per objective.
pub fn pareto_dat(records: &[ParetoRecord], tags: &[ObjectiveTag], metric: &str) -> String {
    let mut s = format!("# {metric} of every solution by budget [$]\n# budget");
    for t in tags {
        let _ = write!(s, " {t}");
    }
    s.push('\n');
    let mut budgets: Vec<i64> = records.iter().map(|r| r.budget).collect();
    budgets.sort_unstable();
    budgets.dedup();
    for b in budgets {
        let _ = write!(s, "{b}");
        for &t in tags {
            let v = records
                .iter()
                .find(|r| r.budget == b && r.objective == t && r.ok())
                .map(|r| if metric == "trace" { r.trace } else { r.logdet })
                .unwrap_or(f64::NAN);
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s
}

/// Writes solution documents, OA traces, `pareto.csv` and the `.dat` files.
pub fn write_sweep_outputs(ws: &Workspace, spec: &SweepSpec, outcome: &SweepOutcome) -> Result<()> {
    let dir = &spec.output_dir;
    ensure_dir(dir)?;
    for run in &outcome.runs {
        SolutionDocument::new(ws, run).write(dir)?;
        if run.tag == ObjectiveTag::DMinlp {
            let mut buf = Vec::new();
            write_oa_trace(&run.oa_trace, &mut buf)?;
            write_file(&dir.join(oa_trace_file_name(run.budget)), buf)?;
        }
    }
    let mut buf = Vec::new();
    write_pareto_csv(&outcome.records, &mut buf)?;
    write_file(&dir.join(PARETO_CSV), buf)?;
    let tags = spec.run_order();
    for metric in ["trace", "logdet"] {
        write_file(&dir.join(format!("pareto_{metric}.dat")), pareto_dat(&outcome.records, &tags, metric))?;
    }
    Ok(())
}

/// `sweep <config>`: runs, writes every output, then enforces the sweep checks.
pub fn cmd_sweep(
    config: &Path,
    budgets: Option<Vec<i64>>,
    parallel: bool,
    no_warm_chain: bool,
    out: Option<&Path>,
) -> Result<SweepOutcome> {
    let cfg = load_config(config)?;
    let warm = if parallel || no_warm_chain { Some(false) } else { None };
    let mut spec = cfg.sweep_spec(budgets, warm)?;
    if let Some(dir) = out {
        spec.output_dir = dir.to_path_buf();
    }
    let ws = prepare(&cfg, Some(&spec.output_dir))?;
    let outcome = run_sweep(&ws, &spec, parallel)?;
    write_sweep_outputs(&ws, &spec, &outcome)?;
    let violations = sweep_violations(&outcome.records);
    if !violations.is_empty() {
        return Err(CliError::SweepCheck(violations));
    }
    Ok(outcome)
}
