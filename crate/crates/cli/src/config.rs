//! The run configuration: one JSON document naming the catalog, the sensitivity
//! source, selection limits, the prior and solver tolerances.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fisheropt::lp::LpOptions;
use fisheropt::{BnbConfig, FwConfig, KineticsConfig, MeasurementCatalog, OaConfig, Objective, SelectionLimits};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{CliError, Result};

/// The four solve strategies, in the order a sweep runs them at one budget.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveTag {
    ALp,
    AMilp,
    DMinlp,
    DNlp,
}

impl ObjectiveTag {
    pub const ALL: [ObjectiveTag; 4] = [ObjectiveTag::ALp, ObjectiveTag::AMilp, ObjectiveTag::DMinlp, ObjectiveTag::DNlp];

    pub fn name(self) -> &'static str {
        match self {
            ObjectiveTag::ALp => "a-lp",
            ObjectiveTag::AMilp => "a-milp",
            ObjectiveTag::DMinlp => "d-minlp",
            ObjectiveTag::DNlp => "d-nlp",
        }
    }

    pub fn objective(self) -> Objective {
        match self {
            ObjectiveTag::ALp | ObjectiveTag::AMilp => Objective::AOptimality,
            ObjectiveTag::DMinlp | ObjectiveTag::DNlp => Objective::DOptimality,
        }
    }

    /// Whether the binaries are relaxed to `[0, 1]`.
    pub fn relaxed(self) -> bool {
        matches!(self, ObjectiveTag::ALp | ObjectiveTag::DNlp)
    }

    /// The metric this tag optimizes, read off a (trace, logdet) pair.
    pub fn metric(self, trace: f64, logdet: f64) -> f64 {
        match self.objective() {
            Objective::AOptimality => trace,
            Objective::DOptimality => logdet,
        }
    }
}

impl fmt::Display for ObjectiveTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ObjectiveTag {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        ObjectiveTag::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| CliError::Invalid(format!("unknown objective tag {s:?}")))
    }
}

/// Where the sensitivity matrix comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SensitivitySource {
    /// Simulate the two-step kinetics model.
    Kinetics(KineticsConfig),
    /// Long-format CSV plus a JSON manifest, both relative to the config file.
    Table { csv: PathBuf, manifest: PathBuf },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Branch and bound for A-milp; its `lp` options also drive A-lp.
    pub bnb: BnbConfig,
    pub fw: FwConfig,
    pub oa: OaConfig,
}

impl SolverConfig {
    pub fn lp(&self) -> &LpOptions {
        &self.bnb.lp
    }
}

fn default_objectives() -> Vec<ObjectiveTag> {
    ObjectiveTag::ALL.to_vec()
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub budgets: Vec<i64>,
    #[serde(default = "default_objectives")]
    pub objectives: Vec<ObjectiveTag>,
    #[serde(default = "yes")]
    pub warm_chain: bool,
}

fn default_prior() -> f64 {
    fisheropt::cases::DEFAULT_PRIOR
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Either a path to a catalog JSON file or the catalog itself.
    pub catalog: Value,
    pub sensitivities: SensitivitySource,
    #[serde(default)]
    pub limits: SelectionLimits,
    /// `M0 = prior_eps I`.
    #[serde(default = "default_prior")]
    pub prior_eps: f64,
    /// Drop pair atoms that are identically zero.
    #[serde(default = "yes")]
    pub prune_pairs: bool,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

/// A parsed configuration with its catalog resolved and paths anchored.
#[derive(Clone, Debug)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub catalog: MeasurementCatalog,
    /// Directory that relative paths in the config are resolved against.
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    /// The sweep described by the config, with optional overrides.
    pub fn sweep_spec(&self, budgets: Option<Vec<i64>>, warm_chain: Option<bool>) -> Result<SweepSpec> {
        let section = self.config.sweep.clone().unwrap_or(SweepSection {
            budgets: Vec::new(),
            objectives: default_objectives(),
            warm_chain: true,
        });
        let spec = SweepSpec {
            budgets: budgets.unwrap_or(section.budgets),
            objectives: section.objectives,
            warm_chain: warm_chain.unwrap_or(section.warm_chain),
            output_dir: self.output_dir(),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Budgets (whole dollars) and objectives of an ε-constraint sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub budgets: Vec<i64>,
    pub objectives: Vec<ObjectiveTag>,
    pub warm_chain: bool,
    pub output_dir: PathBuf,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.budgets.is_empty() {
            return Err(CliError::Invalid("sweep needs at least one budget".into()));
        }
        if self.budgets.iter().any(|&b| b < 0) {
            return Err(CliError::Invalid("budgets must be non-negative".into()));
        }
        if self.budgets.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Invalid("budgets must be strictly ascending".into()));
        }
        if self.objectives.is_empty() {
            return Err(CliError::Invalid("sweep needs at least one objective".into()));
        }
        Ok(())
    }

    /// Objectives deduplicated into run order.
    pub fn run_order(&self) -> Vec<ObjectiveTag> {
        let mut v = self.objectives.clone();
        v.sort();
        v.dedup();
        v
    }
}

/// Parses `a:b:step` (inclusive) or a comma-separated list of dollar amounts.
pub fn parse_budgets(text: &str) -> Result<Vec<i64>> {
    let bad = || CliError::Invalid(format!("cannot parse budgets {text:?}; expected a:b:step or a list"));
    let num = |s: &str| s.trim().parse::<i64>().map_err(|_| bad());
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [a, b, step] => {
            let (a, b, step) = (num(a)?, num(b)?, num(step)?);
            if step <= 0 || b < a {
                return Err(bad());
            }
            Ok((0..).map(|k| a + k * step).take_while(|&v| v <= b).collect())
        }
        [list] => list.split(',').filter(|s| !s.trim().is_empty()).map(num).collect(),
        _ => Err(bad()),
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            serde_path_to_error::Segment::Seq { index } => {
                let _ = write!(out, "/{index}");
            }
            serde_path_to_error::Segment::Map { key } => {
                let _ = write!(out, "/{}", key.replace('~', "~0").replace('/', "~1"));
            }
            serde_path_to_error::Segment::Enum { variant } => {
                let _ = write!(out, "/{variant}");
            }
            serde_path_to_error::Segment::Unknown => {}
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

fn from_value_at<T: DeserializeOwned>(value: Value, file: &str, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(value).map_err(|e| CliError::Schema {
        file: file.to_string(),
        pointer: match json_pointer(e.path()).as_str() {
            "/" if !prefix.is_empty() => prefix.to_string(),
            rest => format!("{prefix}{rest}"),
        },
        message: e.inner().to_string(),
    })
}

fn from_str_at<T: DeserializeOwned>(text: &str, file: &str) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Schema {
        file: file.to_string(),
        pointer: json_pointer(e.path()),
        message: e.inner().to_string(),
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))
}

/// Reads and validates a config file; relative paths resolve against its directory.
pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = read(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_config(&text, &path.display().to_string(), &base)
}

pub fn parse_config(text: &str, file: &str, base_dir: &Path) -> Result<LoadedConfig> {
    let config: RunConfig = from_str_at(text, file)?;
    let catalog = match &config.catalog {
        Value::String(rel) => {
            let p = if Path::new(rel).is_absolute() {
                PathBuf::from(rel)
            } else {
                base_dir.join(rel)
            };
            from_str_at(&read(&p)?, &p.display().to_string())?
        }
        inline => from_value_at(inline.clone(), file, "/catalog")?,
    };
    if !(config.prior_eps > 0.0 && config.prior_eps.is_finite()) {
        return Err(CliError::Invalid("prior_eps must be positive and finite".into()));
    }
    if !(config.limits.min_interval >= 0.0) {
        return Err(CliError::Invalid("limits.min_interval must be non-negative".into()));
    }
    config.solver.bnb.validate()?;
    config.solver.fw.validate()?;
    Ok(LoadedConfig {
        config,
        catalog,
        base_dir: base_dir.to_path_buf(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinetics_json() -> Value {
        serde_json::to_value(fisheropt::cases::kinetics_model_config()).unwrap()
    }

    fn catalog_json() -> Value {
        serde_json::to_value(fisheropt::cases::kinetics_catalog(&[])).unwrap()
    }

    #[test]
    fn budget_ranges_and_lists() {
        assert_eq!(parse_budgets("1000:2200:400").unwrap(), vec![1000, 1400, 1800, 2200]);
        assert_eq!(parse_budgets("1000:2000:400").unwrap(), vec![1000, 1400, 1800]);
        assert_eq!(parse_budgets("5,10, 20").unwrap(), vec![5, 10, 20]);
        assert!(parse_budgets("1:2:0").is_err());
        assert!(parse_budgets("a:b").is_err());
    }

    #[test]
    fn sweep_spec_rejects_unordered_budgets() {
        let spec = SweepSpec {
            budgets: vec![1000, 1000],
            objectives: vec![ObjectiveTag::AMilp],
            warm_chain: true,
            output_dir: PathBuf::new(),
        };
        assert!(spec.validate().is_err());
        let spec = SweepSpec {
            budgets: vec![1000],
            objectives: vec![],
            ..spec
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn inline_catalog_and_defaults() {
        let doc = serde_json::json!({
            "catalog": catalog_json(),
            "sensitivities": {"kinetics": kinetics_json()},
            "limits": {"total": 10, "per_unit": 5, "min_interval": 10.0}
        });
        let cfg = parse_config(&doc.to_string(), "cfg.json", Path::new("/tmp")).unwrap();
        assert_eq!(cfg.config.prior_eps, 1e-8);
        assert!(cfg.config.prune_pairs);
        assert_eq!(cfg.catalog.scm.len(), 3);
        assert_eq!(cfg.output_dir(), PathBuf::from("/tmp/results"));
    }

    #[test]
    fn missing_covariance_names_the_field() {
        let mut cat = catalog_json();
        cat.as_object_mut().unwrap().remove("covariance");
        let doc = serde_json::json!({
            "catalog": cat,
            "sensitivities": {"kinetics": kinetics_json()}
        });
        match parse_config(&doc.to_string(), "cfg.json", Path::new(".")) {
            Err(CliError::Schema { pointer, message, .. }) => {
                assert_eq!(pointer, "/catalog");
                assert!(message.contains("covariance"), "{message}");
            }
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn nested_type_errors_carry_a_pointer() {
        let mut cat = catalog_json();
        cat["dcm"][1]["per_sample"] = Value::String("cheap".into());
        let doc = serde_json::json!({
            "catalog": cat,
            "sensitivities": {"kinetics": kinetics_json()}
        });
        match parse_config(&doc.to_string(), "cfg.json", Path::new(".")) {
            Err(CliError::Schema { pointer, .. }) => assert_eq!(pointer, "/catalog/dcm/1/per_sample"),
            other => panic!("expected schema error, got {other:?}"),
        }
        let doc = serde_json::json!({
            "catalog": catalog_json(),
            "sensitivities": {"kinetics": kinetics_json()},
            "solver": {"oa": {"gap_tol": "small"}}
        });
        match parse_config(&doc.to_string(), "cfg.json", Path::new(".")) {
            Err(CliError::Schema { pointer, .. }) => assert_eq!(pointer, "/solver/oa/gap_tol"),
            other => panic!("expected schema error, got {other:?}"),
        }
    }

    #[test]
    fn tags_round_trip_through_text() {
        for t in ObjectiveTag::ALL {
            assert_eq!(t.name().parse::<ObjectiveTag>().unwrap(), t);
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{}\"", t.name()));
        }
        assert!("a-opt".parse::<ObjectiveTag>().is_err());
    }
}
