//! Ready-made instances: the two-step kinetics reactor and a synthetic
//! rotary-bed-sized instance.

use crate::catalog::{assemble_covariance, build_item_index, ErrorCovariance, ItemIndex, MeasurementCatalog, MeasurementRecord};
use crate::error::Result;
use crate::fimatoms::{build_atoms, invert_covariance, FimAtoms};
use crate::moproblem::{build_problem, selection_from_names, MoProblem, Objective, SelectionLimits};
use crate::sensmodel::{kinetics_sensitivities, KineticsConfig, SensitivityMatrix, Temperature, GAS_CONSTANT_KJ};
use crate::symmat::SymMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

/// Example kinetics parameters. These are configuration, not fitted values.
pub fn kinetics_model_config() -> KineticsConfig {
    KineticsConfig {
        a1: 15.0,
        e1: 5.0,
        a2: 25.0,
        e2: 10.0,
        temperature: Temperature::Piecewise {
            times: vec![0.0, 7.5],
            values: vec![570.0, 300.0],
        },
        ca0: 5.0,
        gas_constant: GAS_CONSTANT_KJ,
        t_grid: (0..=8).map(|k| 7.5 * k as f64).collect(),
        fd_rel_step: 1e-2,
    }
}

/// Channel covariance of the kinetics concentrations (mol^2/L^2).
pub fn kinetics_channel_covariance() -> ErrorCovariance {
    ErrorCovariance {
        channels: vec!["CA".into(), "CB".into(), "CC".into()],
        matrix: vec![
            vec![1.0, 0.1, 0.1],
            vec![0.1, 4.0, 0.5],
            vec![0.1, 0.5, 8.0],
        ],
        scm_dcm_scale: 0.5,
    }
}

/// Kinetics catalog: one sensor and one manual sample stream per species,
/// nine time points from 0 to 60 min.
pub fn kinetics_catalog(groups: &[Vec<String>]) -> MeasurementCatalog {
    let times: Vec<f64> = (0..=8).map(|k| 7.5 * k as f64).collect();
    let rec = |suffix: &str, ch: &str, install: f64, per_sample: f64| MeasurementRecord {
        name: format!("{ch}_{suffix}"),
        channel: ch.into(),
        install,
        per_sample,
        times: times.clone(),
    };
    MeasurementCatalog {
        scm: ["CA", "CB", "CC"].iter().map(|c| rec("SCM", c, 2000.0, 0.0)).collect(),
        dcm: ["CA", "CB", "CC"].iter().map(|c| rec("DCM", c, 200.0, 400.0)).collect(),
        groups: groups.to_vec(),
        covariance: kinetics_channel_covariance(),
    }
}

/// Catalog, sensitivities, indexing and atoms of one instance.
#[derive(Clone, Debug)]
pub struct Instance {
    pub catalog: MeasurementCatalog,
    pub sensitivities: SensitivityMatrix,
    pub idx: Arc<ItemIndex>,
    pub atoms: Arc<FimAtoms>,
}

/// Default prior `M0 = eps I`.
pub const DEFAULT_PRIOR: f64 = 1e-8;

impl Instance {
    /// Indexes the catalog and builds pruned atoms with prior `prior_eps I`.
    pub fn assemble(catalog: MeasurementCatalog, sensitivities: SensitivityMatrix, prior_eps: f64) -> Result<Self> {
        catalog.validate()?;
        catalog.validate_against(&sensitivities)?;
        let idx = build_item_index(&catalog)?;
        let sigma = assemble_covariance(&catalog, &idx)?;
        let w = invert_covariance(&sigma)?;
        let prior = SymMatrix::scaled_identity(sensitivities.n_params(), prior_eps);
        let atoms = build_atoms(&sensitivities, &w, &idx, prior, true)?;
        Ok(Instance {
            catalog,
            sensitivities,
            idx: Arc::new(idx),
            atoms: Arc::new(atoms),
        })
    }

    pub fn problem(&self, objective: Objective, budget: f64, limits: SelectionLimits, relax: bool) -> Result<MoProblem> {
        build_problem(self.idx.clone(), self.atoms.clone(), objective, budget, limits, relax)
    }
}

/// The kinetics instance with simulated sensitivities and the default prior.
pub fn kinetics_instance() -> Result<Instance> {
    let q = kinetics_sensitivities(&kinetics_model_config())?;
    Instance::assemble(kinetics_catalog(&[]), q, DEFAULT_PRIOR)
}

/// At most ten samples in total, five per sample stream, 10 min apart.
pub fn kinetics_limits() -> SelectionLimits {
    SelectionLimits {
        total: 10,
        per_unit: 5,
        min_interval: 10.0,
    }
}

/// The eleven sweep budgets, $1.0k to $5.0k in $0.4k steps.
pub fn kinetics_budgets() -> Vec<f64> {
    (0..11).map(|k| 1000.0 + 400.0 * k as f64).collect()
}

/// A published kinetics selection: budget, selected sensors and samples.
#[derive(Clone, Debug, PartialEq)]
pub struct TableColumn {
    pub budget: f64,
    pub scms: Vec<&'static str>,
    pub samples: Vec<(&'static str, f64)>,
}

impl TableColumn {
    pub fn selection(&self, idx: &ItemIndex) -> Result<Vec<bool>> {
        selection_from_names(idx, &self.scms, &self.samples)
    }
}

fn column(budget: f64, scms: &[&'static str], samples: &[(&'static str, &[f64])]) -> TableColumn {
    TableColumn {
        budget,
        scms: scms.to_vec(),
        samples: samples.iter().flat_map(|&(u, ts)| ts.iter().map(move |&t| (u, t))).collect(),
    }
}

/// Trace-optimal kinetics selections reported for the eleven budgets.
pub fn published_trace_selections() -> Vec<TableColumn> {
    const A: &str = "CA_DCM";
    const B: &str = "CB_DCM";
    const C: &str = "CC_DCM";
    vec![
        column(1000.0, &[], &[(B, &[45.0, 60.0])]),
        column(1400.0, &[], &[(B, &[30.0, 45.0, 60.0])]),
        column(1800.0, &[], &[(B, &[15.0, 30.0, 45.0, 60.0])]),
        column(2200.0, &["CB_SCM"], &[]),
        column(2600.0, &["CB_SCM"], &[(A, &[7.5])]),
        column(3000.0, &["CB_SCM"], &[(A, &[7.5, 22.5])]),
        column(3400.0, &["CB_SCM"], &[(C, &[30.0, 45.0, 60.0])]),
        column(3800.0, &["CB_SCM"], &[(C, &[15.0, 30.0, 45.0, 60.0])]),
        column(4200.0, &["CB_SCM", "CC_SCM"], &[]),
        column(4600.0, &["CB_SCM", "CC_SCM"], &[(A, &[7.5])]),
        column(5000.0, &["CB_SCM", "CC_SCM"], &[(A, &[7.5, 22.5])]),
    ]
}

/// Log-determinant-optimal kinetics selections reported for the eleven budgets.
pub fn published_logdet_selections() -> Vec<TableColumn> {
    const A: &str = "CA_DCM";
    const B: &str = "CB_DCM";
    const C: &str = "CC_DCM";
    vec![
        column(1000.0, &[], &[(B, &[7.5, 60.0])]),
        column(1400.0, &[], &[(B, &[7.5, 22.5, 60.0])]),
        column(1800.0, &[], &[(A, &[7.5, 22.5]), (B, &[60.0])]),
        column(2200.0, &[], &[(A, &[7.5, 37.5]), (B, &[22.5, 60.0])]),
        column(2600.0, &["CB_SCM"], &[(A, &[7.5])]),
        column(3000.0, &["CB_SCM"], &[(A, &[7.5, 22.5])]),
        column(3400.0, &["CB_SCM"], &[(A, &[7.5, 22.5, 37.5])]),
        column(3800.0, &["CB_SCM"], &[(A, &[7.5, 22.5, 37.5, 52.5])]),
        column(4200.0, &["CA_SCM", "CB_SCM"], &[]),
        column(4600.0, &["CA_SCM", "CB_SCM"], &[(C, &[7.5])]),
        column(5000.0, &["CA_SCM", "CB_SCM"], &[(C, &[7.5, 60.0])]),
    ]
}

/// Random toy with `n_scm` sensors and `n_dcm` sample streams on unit-spaced
/// times, a random SPD channel covariance, random sensitivities and integer
/// costs. The prior is `1e-8 I`.
pub fn random_toy(n_scm: usize, n_dcm: usize, n_times: usize, n_params: usize, seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nc = n_scm.max(n_dcm).max(1);
    let channels: Vec<String> = (0..nc).map(|c| format!("y{c}")).collect();
    let times: Vec<f64> = (0..n_times).map(|t| t as f64).collect();
    let a: Vec<Vec<f64>> = (0..nc).map(|_| (0..nc).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let matrix = (0..nc)
        .map(|i| {
            (0..nc)
                .map(|j| {
                    let s: f64 = (0..nc).map(|k| a[i][k] * a[j][k]).sum::<f64>() / nc as f64;
                    s + if i == j { 0.5 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let record = |prefix: &str, k: usize, install: f64, per_sample: f64| MeasurementRecord {
        name: format!("{prefix}{k}"),
        channel: channels[k % nc].clone(),
        install,
        per_sample,
        times: times.clone(),
    };
    let scm_costs: Vec<f64> = (0..n_scm).map(|_| rng.gen_range(5..=20) as f64).collect();
    let dcm_costs: Vec<(f64, f64)> =
        (0..n_dcm).map(|_| (rng.gen_range(1..=5) as f64, rng.gen_range(1..=4) as f64)).collect();
    let catalog = MeasurementCatalog {
        scm: (0..n_scm).map(|k| record("s", k, scm_costs[k], 0.0)).collect(),
        dcm: (0..n_dcm).map(|k| record("d", k, dcm_costs[k].0, dcm_costs[k].1)).collect(),
        groups: vec![],
        covariance: ErrorCovariance {
            channels: channels.clone(),
            matrix,
            scm_dcm_scale: rng.gen_range(0.0..1.0),
        },
    };
    let sensitivities = SensitivityMatrix {
        channels,
        times,
        parameters: (0..n_params).map(|p| format!("p{p}")).collect(),
        time_unit: "min".into(),
        values: (0..nc * n_times * n_params).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    };
    Instance::assemble(catalog, sensitivities, DEFAULT_PRIOR)
}

/// Channel groups of the rotary-bed-shaped instance with their noise standard
/// deviations: flow rates, temperatures and CO2 mole fractions.
const ROTARY_GROUPS: [(&[&str], f64); 3] = [
    (&["F_in_ads", "F_out_ads", "F_in_des", "F_out_des"], 1.0),
    (&["T_out_ads", "T_out_des", "T19_ads", "T23_ads", "T28_ads"], 1.0),
    (&["z_out_ads", "z_out_des", "z19_ads", "z23_ads", "z28_ads"], 0.01),
];

/// Sensitivity magnitude per group in units of its noise level. Compositions
/// are the most informative per sample, so a handful of manual samples can
/// compete with a sensor that records all 110 times.
const ROTARY_SIGNAL: [f64; 3] = [0.2, 0.3, 4.0];

const ROTARY_PARAMETERS: [&str; 5] = ["MTC", "HTC", "DH", "Iso1", "Iso2"];

/// Weight of the random correlation matrix against the identity inside a
/// group. Errors are close to independent, with modest within-group coupling.
const ROTARY_COUPLING: f64 = 0.3;

/// Random block-diagonal covariance: within each group a random correlation
/// matrix blended with the identity and scaled by the group's standard
/// deviation, zero across groups.
fn random_block_covariance(rng: &mut ChaCha8Rng, groups: &[(&[&str], f64)]) -> ErrorCovariance {
    let channels: Vec<String> = groups.iter().flat_map(|(g, _)| g.iter().map(|c| c.to_string())).collect();
    let n = channels.len();
    let mut matrix = vec![vec![0.0; n]; n];
    let mut offset = 0;
    for &(g, sd) in groups {
        let k = g.len();
        let l: Vec<Vec<f64>> = (0..k).map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut c = vec![vec![0.0; k]; k];
        for i in 0..k {
            for j in 0..k {
                c[i][j] = (0..k).map(|m| l[i][m] * l[j][m]).sum::<f64>() / k as f64 + if i == j { 1.0 } else { 0.0 };
            }
        }
        for i in 0..k {
            for j in 0..k {
                let rho = c[i][j] / (c[i][i] * c[j][j]).sqrt();
                let r = if i == j { 1.0 } else { ROTARY_COUPLING * rho };
                matrix[offset + i][offset + j] = sd * sd * r;
            }
        }
        offset += k;
    }
    // Exact symmetry for the catalog check.
    for i in 0..n {
        for j in 0..i {
            matrix[j][i] = matrix[i][j];
        }
    }
    ErrorCovariance {
        channels,
        matrix,
        scm_dcm_scale: 0.5,
    }
}

/// Synthetic instance with the rotary-bed layout: 14 channels sampled at 110
/// times every 2 min, five parameters, 11 sensors and 5 manual sample streams
/// priced as in the published cost table. Sensitivities are smooth random
/// transients scaled to each channel's noise level.
pub fn rotary_instance(seed: u64) -> Result<Instance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let covariance = random_block_covariance(&mut rng, &ROTARY_GROUPS);
    let times: Vec<f64> = (1..=110).map(|k| 2.0 * k as f64).collect();
    let sd: Vec<f64> = ROTARY_GROUPS
        .iter()
        .zip(ROTARY_SIGNAL)
        .flat_map(|(&(g, sd), snr)| g.iter().map(move |_| sd * snr))
        .collect();
    let np = ROTARY_PARAMETERS.len();
    let mut values = Vec::with_capacity(covariance.channels.len() * times.len() * np);
    let shapes: Vec<Vec<(f64, f64, f64)>> = (0..covariance.channels.len() * np)
        .map(|_| {
            (0..3)
                .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(5.0..120.0), rng.gen_range(0.0..200.0)))
                .collect()
        })
        .collect();
    for (c, &s) in sd.iter().enumerate() {
        for &t in &times {
            for p in 0..np {
                let v: f64 = shapes[c * np + p]
                    .iter()
                    .map(|&(amp, tau, onset)| if t >= onset { amp * (-(t - onset) / tau).exp() } else { 0.0 })
                    .sum();
                values.push(s * v);
            }
        }
    }
    let sensitivities = SensitivityMatrix {
        channels: covariance.channels.clone(),
        times: times.clone(),
        parameters: ROTARY_PARAMETERS.iter().map(|p| p.to_string()).collect(),
        time_unit: "min".into(),
        values,
    };
    let record = |name: &str, channel: &str, install: f64, per_sample: f64| MeasurementRecord {
        name: name.into(),
        channel: channel.into(),
        install,
        per_sample,
        times: times.clone(),
    };
    let scm = [
        ("F_in_ads", 1000.0),
        ("F_out_ads", 1000.0),
        ("T_out_ads", 500.0),
        ("F_in_des", 1000.0),
        ("F_out_des", 1000.0),
        ("T_out_des", 500.0),
        ("T19_ads", 1000.0),
        ("T23_ads", 1000.0),
        ("T28_ads", 1000.0),
        ("z_out_ads", 7000.0),
        ("z_out_des", 7000.0),
    ]
    .iter()
    .map(|&(c, cost)| record(&format!("{c}_SCM"), c, cost, 0.0))
    .collect();
    let dcm = [("z_out_ads", 100.0), ("z_out_des", 100.0), ("z19_ads", 500.0), ("z23_ads", 500.0), ("z28_ads", 500.0)]
        .iter()
        .map(|&(c, install)| record(&format!("{c}_DCM"), c, install, 100.0))
        .collect();
    let catalog = MeasurementCatalog {
        scm,
        dcm,
        groups: vec![],
        covariance,
    };
    Instance::assemble(catalog, sensitivities, DEFAULT_PRIOR)
}

/// Five samples per stream, twenty in total, 10 min apart.
pub fn rotary_limits() -> SelectionLimits {
    SelectionLimits {
        total: 20,
        per_unit: 5,
        min_interval: 10.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moproblem::{check_solution, problem_size};

    #[test]
    fn published_selections_resolve_and_cost_what_they_should() {
        let inst = kinetics_instance().unwrap();
        for col in published_trace_selections().iter().chain(&published_logdet_selections()) {
            let sel = col.selection(&inst.idx).unwrap();
            let p = inst.problem(Objective::AOptimality, col.budget, kinetics_limits(), false).unwrap();
            let x = p.complete_selection(&sel);
            assert!(p.cost_of(&x) <= col.budget * 100.0, "{} over budget", col.budget);
            let s = p.make_solution(&x, crate::moproblem::SolveStatus::Optimal).unwrap();
            assert!(check_solution(&p, &s).unwrap().passed(), "{col:?}");
        }
        let one_k = &published_trace_selections()[0];
        let p = inst.problem(Objective::AOptimality, 1000.0, kinetics_limits(), false).unwrap();
        // Costs are in cents: 200 + 2 * 400 dollars.
        assert_eq!(p.cost_of(&p.complete_selection(&one_k.selection(&inst.idx).unwrap())), 100_000.0);
    }

    #[test]
    fn rotary_layout() {
        let inst = rotary_instance(1).unwrap();
        assert_eq!(inst.idx.len(), 11 + 5 * 110);
        assert_eq!(inst.atoms.n_params, 5);
        let p = inst.problem(Objective::AOptimality, 5000.0, rotary_limits(), false).unwrap();
        let size = problem_size(&p);
        assert_eq!(p.n_dcm(), 5);
        assert!(size.variables > 561);
        let full = inst.atoms.full_information();
        assert!(crate::symmat::logdet(&full, 0.0).unwrap().is_finite());
    }
}
