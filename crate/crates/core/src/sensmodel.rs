//! Stacked sensitivity matrices: a built-in two-step Arrhenius kinetics model
//! differentiated by central finite differences, and ingestion of externally
//! computed sensitivities in long CSV format.

use crate::error::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::path::Path;

/// Gas constant in kJ/(mol K).
pub const GAS_CONSTANT_KJ: f64 = 8.314_462_618e-3;

pub const KINETICS_CHANNELS: [&str; 3] = ["CA", "CB", "CC"];
pub const KINETICS_PARAMETERS: [&str; 4] = ["A1", "E1", "A2", "E2"];

const RK_RTOL: f64 = 1e-8;
const RK_ATOL: f64 = 1e-10;
const RK_MAX_STEPS: usize = 1_000_000;

/// Reactor temperature: a constant, or piecewise constant with `values[k]`
/// holding from `times[k]` (minutes) until the next breakpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Temperature {
    Constant(f64),
    Piecewise { times: Vec<f64>, values: Vec<f64> },
}

impl Temperature {
    fn at_segment(&self, t: f64) -> f64 {
        match self {
            Temperature::Constant(v) => *v,
            Temperature::Piecewise { times, values } => {
                let k = times.iter().rposition(|&s| s <= t).unwrap_or(0);
                values[k]
            }
        }
    }

    fn breakpoints(&self) -> &[f64] {
        match self {
            Temperature::Constant(_) => &[],
            Temperature::Piecewise { times, .. } => times,
        }
    }
}

fn default_gas_constant() -> f64 {
    GAS_CONSTANT_KJ
}

fn default_fd_step() -> f64 {
    1e-2
}

/// Batch reactor `A -> B -> C` with Arrhenius rate constants.
///
/// Pre-exponential factors are in 1/h, activation energies in kJ/mol and the
/// measurement grid in minutes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KineticsConfig {
    #[serde(rename = "A1")]
    pub a1: f64,
    #[serde(rename = "E1")]
    pub e1: f64,
    #[serde(rename = "A2")]
    pub a2: f64,
    #[serde(rename = "E2")]
    pub e2: f64,
    #[serde(rename = "T")]
    pub temperature: Temperature,
    #[serde(rename = "CA0")]
    pub ca0: f64,
    #[serde(rename = "R", default = "default_gas_constant")]
    pub gas_constant: f64,
    pub t_grid: Vec<f64>,
    #[serde(default = "default_fd_step")]
    pub fd_rel_step: f64,
}

impl KineticsConfig {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.a1, self.e1, self.a2, self.e2, self.ca0, self.gas_constant];
        if finite.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("kinetics parameters must be finite"));
        }
        if self.a1 < 0.0 || self.a2 < 0.0 || self.e1 < 0.0 || self.e2 < 0.0 {
            return Err(Error::invalid("rate parameters must be non-negative"));
        }
        if self.ca0 <= 0.0 || self.gas_constant <= 0.0 {
            return Err(Error::invalid("CA0 and R must be strictly positive"));
        }
        if !(self.fd_rel_step > 0.0 && self.fd_rel_step < 0.1) {
            return Err(Error::invalid("fd_rel_step must lie in (0, 0.1)"));
        }
        check_grid(&self.t_grid, "t_grid")?;
        if self.t_grid.first().is_some_and(|&t| t < 0.0) {
            return Err(Error::invalid("t_grid must start at t >= 0"));
        }
        match &self.temperature {
            Temperature::Constant(v) if *v > 0.0 => {}
            Temperature::Constant(_) => return Err(Error::invalid("temperature must be positive")),
            Temperature::Piecewise { times, values } => {
                if times.is_empty() || times.len() != values.len() {
                    return Err(Error::invalid(
                        "piecewise temperature needs equally long, non-empty times and values",
                    ));
                }
                check_grid(times, "T.times")?;
                if times[0] != 0.0 {
                    return Err(Error::invalid("piecewise temperature must start at t = 0"));
                }
                if values.iter().any(|v| !(*v > 0.0)) {
                    return Err(Error::invalid("temperatures must be positive"));
                }
            }
        }
        Ok(())
    }

    pub fn parameters(&self) -> [f64; 4] {
        [self.a1, self.e1, self.a2, self.e2]
    }

    fn with_parameters(&self, p: [f64; 4]) -> Self {
        Self {
            a1: p[0],
            e1: p[1],
            a2: p[2],
            e2: p[3],
            ..self.clone()
        }
    }

    /// Rate constants (1/min) at temperature `temp`.
    fn rates(&self, temp: f64) -> (f64, f64) {
        let rt = self.gas_constant * temp;
        (
            self.a1 * (-self.e1 / rt).exp() / 60.0,
            self.a2 * (-self.e2 / rt).exp() / 60.0,
        )
    }
}

fn check_grid(grid: &[f64], what: &str) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid(format!("{what} must not be empty")));
    }
    if grid.iter().any(|t| !t.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(format!("{what} must be finite and strictly increasing")));
    }
    Ok(())
}

/// Concentration profiles over the configured grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Concentrations {
    pub times: Vec<f64>,
    pub ca: Vec<f64>,
    pub cb: Vec<f64>,
    pub cc: Vec<f64>,
}

impl Concentrations {
    pub fn channel(&self, name: &str) -> Option<&[f64]> {
        match name {
            "CA" => Some(&self.ca),
            "CB" => Some(&self.cb),
            "CC" => Some(&self.cc),
            _ => None,
        }
    }
}

/// Integrates the kinetics with adaptive Dormand-Prince RK45, restarting at
/// every temperature breakpoint. `C_C` follows from the mole balance.
pub fn simulate_kinetics(cfg: &KineticsConfig) -> Result<Concentrations> {
    cfg.validate()?;
    Ok(run_kinetics(cfg, None)?.0)
}

/// Accepted step sizes, one list per integration segment.
type StepGrid = Vec<Vec<f64>>;

/// With `frozen = None` steps are chosen adaptively and recorded; otherwise the
/// given step grid is replayed without error control. Finite differences replay
/// the nominal grid so that perturbed runs share one discretization.
fn run_kinetics(cfg: &KineticsConfig, frozen: Option<&StepGrid>) -> Result<(Concentrations, StepGrid)> {
    let mut stops: Vec<f64> = cfg.t_grid.clone();
    stops.extend(cfg.temperature.breakpoints().iter().copied().filter(|&b| b > 0.0));
    stops.sort_by(f64::total_cmp);
    stops.dedup();

    let mut y = [cfg.ca0, 0.0];
    let mut t = 0.0;
    let mut h = 1e-3;
    let mut grid = StepGrid::new();
    let mut out_ca = Vec::with_capacity(cfg.t_grid.len());
    let mut out_cb = Vec::with_capacity(cfg.t_grid.len());
    let mut grid_iter = cfg.t_grid.iter().peekable();
    for &stop in &stops {
        if stop > t {
            // The temperature is constant on (t, stop).
            let temp = cfg.temperature.at_segment(t);
            let (k1, k2) = cfg.rates(temp);
            let rhs = |y: &[f64; 2]| [-k1 * y[0], k1 * y[0] - k2 * y[1]];
            match frozen {
                Some(g) => {
                    let steps = g.get(grid.len()).ok_or_else(|| Error::invalid("step grid too short"))?;
                    for &s in steps {
                        y = dp_step(&rhs, &y, s).0;
                    }
                    grid.push(Vec::new());
                }
                None => {
                    let mut steps = Vec::new();
                    h = integrate_segment(&rhs, &mut y, t, stop, h, &mut steps)?;
                    grid.push(steps);
                }
            }
            t = stop;
        }
        if grid_iter.peek().is_some_and(|&&g| g == stop) {
            grid_iter.next();
            out_ca.push(y[0]);
            out_cb.push(y[1]);
        }
    }
    let cc = out_ca
        .iter()
        .zip(&out_cb)
        .map(|(a, b)| cfg.ca0 - a - b)
        .collect();
    let conc = Concentrations {
        times: cfg.t_grid.clone(),
        ca: out_ca,
        cb: out_cb,
        cc,
    };
    Ok((conc, grid))
}

// Dormand-Prince 5(4) tableau.
const DP_A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const DP_B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];
/// One Dormand-Prince step: fifth-order solution and embedded error estimate.
fn dp_step<F>(rhs: &F, y: &[f64; 2], step: f64) -> ([f64; 2], [f64; 2])
where
    F: Fn(&[f64; 2]) -> [f64; 2],
{
    let mut k = [[0.0f64; 2]; 7];
    for s in 0..7 {
        let mut ys = *y;
        for (j, kj) in k.iter().enumerate().take(s) {
            for c in 0..2 {
                ys[c] += step * DP_A[s][j] * kj[c];
            }
        }
        k[s] = rhs(&ys);
    }
    let mut y5 = *y;
    let mut err = [0.0; 2];
    for c in 0..2 {
        let mut inc5 = 0.0;
        let mut inc4 = 0.0;
        for s in 0..7 {
            inc5 += DP_B5[s] * k[s][c];
            inc4 += DP_B4[s] * k[s][c];
        }
        y5[c] += step * inc5;
        err[c] = step * (inc5 - inc4);
    }
    (y5, err)
}

fn integrate_segment<F>(
    rhs: &F,
    y: &mut [f64; 2],
    t0: f64,
    t1: f64,
    h0: f64,
    accepted: &mut Vec<f64>,
) -> Result<f64>
where
    F: Fn(&[f64; 2]) -> [f64; 2],
{
    let mut t = t0;
    let mut h = h0;
    let mut steps = 0;
    let mut last_ok = h0;
    while t < t1 {
        steps += 1;
        if steps > RK_MAX_STEPS {
            return Err(Error::NumericFailure {
                what: "kinetics integration (step limit)".into(),
                iterations: steps,
            });
        }
        let remaining = t1 - t;
        let at_end = h >= remaining;
        let step = if at_end { remaining } else { h };
        if step <= 1e-14 * t1.abs().max(1.0) && !at_end {
            return Err(Error::NumericFailure {
                what: "kinetics integration (step size underflow)".into(),
                iterations: steps,
            });
        }
        let (y5, e) = dp_step(rhs, y, step);
        let mut err: f64 = 0.0;
        for c in 0..2 {
            let sc = RK_ATOL + RK_RTOL * y[c].abs().max(y5[c].abs());
            err = err.max(e[c].abs() / sc);
        }
        if err <= 1.0 {
            t = if at_end { t1 } else { t + step };
            *y = y5;
            accepted.push(step);
            last_ok = step;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h = step * factor;
    }
    Ok(if h > last_ok { h } else { last_ok })
}

/// Sensitivities `d y / d theta`, rows stacked channel-major (all times of the
/// first channel, then the next channel).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityMatrix {
    pub channels: Vec<String>,
    pub times: Vec<f64>,
    pub parameters: Vec<String>,
    pub time_unit: String,
    /// Row-major `(channels * times) x parameters`.
    pub values: Vec<f64>,
}

impl SensitivityMatrix {
    pub fn n_rows(&self) -> usize {
        self.channels.len() * self.times.len()
    }

    pub fn n_params(&self) -> usize {
        self.parameters.len()
    }

    pub fn row_index(&self, channel: usize, time: usize) -> usize {
        channel * self.times.len() + time
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let p = self.n_params();
        &self.values[r * p..(r + 1) * p]
    }

    pub fn get(&self, channel: usize, time: usize, param: usize) -> f64 {
        self.values[self.row_index(channel, time) * self.n_params() + param]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        self.times.iter().position(|&s| s == t)
    }

    pub fn manifest(&self) -> SensitivityManifest {
        SensitivityManifest {
            channels: self.channels.clone(),
            times: self.times.clone(),
            parameters: self.parameters.clone(),
            time_unit: self.time_unit.clone(),
        }
    }
}

/// Central finite-difference sensitivities of the kinetics model with step
/// `fd_rel_step * |theta_i|` (or `fd_rel_step` for a zero parameter).
pub fn kinetics_sensitivities(cfg: &KineticsConfig) -> Result<SensitivityMatrix> {
    kinetics_sensitivities_with_step(cfg, cfg.fd_rel_step)
}

/// Central differences with an explicit relative step.
pub fn kinetics_sensitivities_with_step(
    cfg: &KineticsConfig,
    rel_step: f64,
) -> Result<SensitivityMatrix> {
    cfg.validate()?;
    let (_, grid) = run_kinetics(cfg, None)?;
    let base = cfg.parameters();
    let columns: Vec<Result<Vec<f64>>> = (0..4)
        .into_par_iter()
        .map(|i| {
            let h = if base[i] != 0.0 {
                rel_step * base[i].abs()
            } else {
                rel_step
            };
            let mut plus = base;
            plus[i] += h;
            let mut minus = base;
            minus[i] -= h;
            let (yp, _) = run_kinetics(&cfg.with_parameters(plus), Some(&grid))?;
            let (ym, _) = run_kinetics(&cfg.with_parameters(minus), Some(&grid))?;
            let mut col = Vec::with_capacity(3 * cfg.t_grid.len());
            for ch in KINETICS_CHANNELS {
                let (a, b) = (yp.channel(ch).unwrap(), ym.channel(ch).unwrap());
                col.extend(a.iter().zip(b).map(|(p, m)| (p - m) / (2.0 * h)));
            }
            Ok(col)
        })
        .collect();
    let columns = columns.into_iter().collect::<Result<Vec<_>>>()?;
    let n_rows = 3 * cfg.t_grid.len();
    let mut values = vec![0.0; n_rows * 4];
    for (j, col) in columns.iter().enumerate() {
        for (r, v) in col.iter().enumerate() {
            values[r * 4 + j] = *v;
        }
    }
    // The initial state does not depend on the parameters.
    for (ti, &t) in cfg.t_grid.iter().enumerate() {
        if t == 0.0 {
            for c in 0..3 {
                for j in 0..4 {
                    values[(c * cfg.t_grid.len() + ti) * 4 + j] = 0.0;
                }
            }
        }
    }
    Ok(SensitivityMatrix {
        channels: KINETICS_CHANNELS.iter().map(|s| s.to_string()).collect(),
        times: cfg.t_grid.clone(),
        parameters: KINETICS_PARAMETERS.iter().map(|s| s.to_string()).collect(),
        time_unit: "min".into(),
        values,
    })
}

/// Declares the channels, times and parameters of a sensitivity CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityManifest {
    pub channels: Vec<String>,
    pub times: Vec<f64>,
    pub parameters: Vec<String>,
    #[serde(default = "default_time_unit")]
    pub time_unit: String,
}

fn default_time_unit() -> String {
    "min".into()
}

impl SensitivityManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[derive(Debug, Deserialize)]
struct LongRow {
    channel: String,
    time: f64,
    parameter: String,
    value: String,
}

/// Reads a long-format `channel,time,parameter,value` CSV into canonical row order.
pub fn ingest_sensitivities(path: &Path, manifest: &SensitivityManifest) -> Result<SensitivityMatrix> {
    let file = std::fs::File::open(path)?;
    ingest_reader(file, manifest)
}

pub fn ingest_reader<R: std::io::Read>(reader: R, manifest: &SensitivityManifest) -> Result<SensitivityMatrix> {
    check_grid(&manifest.times, "manifest times")?;
    let ch_idx: HashMap<&str, usize> = index_names(&manifest.channels, "channel")?;
    let par_idx: HashMap<&str, usize> = index_names(&manifest.parameters, "parameter")?;
    let (nc, nt, np) = (manifest.channels.len(), manifest.times.len(), manifest.parameters.len());
    let mut values = vec![f64::NAN; nc * nt * np];
    let mut seen = vec![false; values.len()];

    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let expected = ["channel", "time", "parameter", "value"];
    if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
        return Err(Error::invalid(format!(
            "sensitivity CSV header must be `channel,time,parameter,value`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    for (line, rec) in rdr.deserialize::<LongRow>().enumerate() {
        let rec = rec?;
        let row_no = line + 2;
        let c = *ch_idx
            .get(rec.channel.as_str())
            .ok_or_else(|| Error::invalid(format!("line {row_no}: unknown channel `{}`", rec.channel)))?;
        let t = manifest
            .times
            .iter()
            .position(|&s| s == rec.time)
            .ok_or_else(|| Error::invalid(format!("line {row_no}: time {} not in manifest", rec.time)))?;
        let p = *par_idx
            .get(rec.parameter.as_str())
            .ok_or_else(|| Error::invalid(format!("line {row_no}: unknown parameter `{}`", rec.parameter)))?;
        let v: f64 = rec.value.parse().map_err(|_| Error::InvalidValue {
            row: row_no,
            column: "value".into(),
            value: rec.value.clone(),
        })?;
        if !v.is_finite() {
            return Err(Error::InvalidValue {
                row: row_no,
                column: "value".into(),
                value: rec.value,
            });
        }
        let k = (c * nt + t) * np + p;
        if seen[k] {
            return Err(Error::invalid(format!(
                "line {row_no}: duplicate cell ({}, {}, {})",
                rec.channel, rec.time, rec.parameter
            )));
        }
        seen[k] = true;
        values[k] = v;
    }
    let missing: Vec<String> = seen
        .iter()
        .enumerate()
        .filter(|(_, s)| !**s)
        .map(|(k, _)| {
            let (c, rest) = (k / (nt * np), k % (nt * np));
            format!(
                "({}, {}, {})",
                manifest.channels[c],
                manifest.times[rest / np],
                manifest.parameters[rest % np]
            )
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteData {
            total: missing.len(),
            missing: missing.into_iter().take(10).collect(),
        });
    }
    Ok(SensitivityMatrix {
        channels: manifest.channels.clone(),
        times: manifest.times.clone(),
        parameters: manifest.parameters.clone(),
        time_unit: manifest.time_unit.clone(),
        values,
    })
}

fn index_names<'a>(names: &'a [String], what: &str) -> Result<HashMap<&'a str, usize>> {
    let mut map = HashMap::new();
    for (i, n) in names.iter().enumerate() {
        if map.insert(n.as_str(), i).is_some() {
            return Err(Error::invalid(format!("duplicate {what} `{n}` in manifest")));
        }
    }
    Ok(map)
}

/// Writes `q` as long-format CSV in canonical order. Values use the shortest
/// representation that parses back to the same `f64`.
pub fn export_sensitivities<W: Write>(q: &SensitivityMatrix, mut out: W) -> Result<()> {
    writeln!(out, "channel,time,parameter,value")?;
    for (c, ch) in q.channels.iter().enumerate() {
        for (t, time) in q.times.iter().enumerate() {
            for (p, par) in q.parameters.iter().enumerate() {
                writeln!(out, "{ch},{time:?},{par},{:?}", q.get(c, t, p))?;
            }
        }
    }
    Ok(())
}

/// Writes `<stem>.csv` and `<stem>.manifest.json` next to each other.
pub fn export_to_files(q: &SensitivityMatrix, csv_path: &Path, manifest_path: &Path) -> Result<()> {
    let f = std::io::BufWriter::new(std::fs::File::create(csv_path)?);
    export_sensitivities(q, f)?;
    std::fs::write(manifest_path, serde_json::to_string_pretty(&q.manifest())?)?;
    Ok(())
}

/// Per-channel view used by tests and summaries.
pub fn column_by_channel(q: &SensitivityMatrix, param: usize) -> BTreeMap<String, Vec<f64>> {
    q.channels
        .iter()
        .enumerate()
        .map(|(c, name)| (name.clone(), (0..q.times.len()).map(|t| q.get(c, t, param)).collect()))
        .collect()
}
