use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::controllers::ControllerKind;
use crate::dynamics::Quadrant;
use crate::odesolve::{Method, SolveConfig};
use crate::training::{OptimizerKind, TrainConfig};

/// Problem with a configuration file or value.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub key: Option<String>,
    pub msg: String,
}

impl ConfigError {
    fn at(line: usize, key: Option<&str>, msg: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            key: key.map(str::to_string),
            msg: msg.into(),
        }
    }

    fn key(key: &str, msg: impl Into<String>) -> Self {
        Self {
            line: None,
            key: Some(key.to_string()),
            msg: msg.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(l) = self.line {
            write!(f, "line {l}: ")?;
        }
        if let Some(k) = &self.key {
            write!(f, "{k}: ")?;
        }
        f.write_str(&self.msg)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Kuramoto,
    Sir,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Kuramoto => "kuramoto",
            Experiment::Sir => "sir",
        }
    }
}

struct KeySpec {
    key: &'static str,
    kuramoto: Option<&'static str>,
    sir: Option<&'static str>,
}

const fn both(key: &'static str, k: &'static str, s: &'static str) -> KeySpec {
    KeySpec {
        key,
        kuramoto: Some(k),
        sir: Some(s),
    }
}

const fn kur(key: &'static str, v: &'static str) -> KeySpec {
    KeySpec {
        key,
        kuramoto: Some(v),
        sir: None,
    }
}

const fn sir(key: &'static str, v: &'static str) -> KeySpec {
    KeySpec {
        key,
        kuramoto: None,
        sir: Some(v),
    }
}

/// Every accepted key with its default per experiment. Keys without a
/// default for an experiment are rejected for it.
const REGISTRY: &[KeySpec] = &[
    both("seed", "1", "1"),
    kur("graph.nodes", "1024"),
    kur("graph.mean_degree", "6"),
    sir("graph.rows", "32"),
    sir("graph.cols", "32"),
    kur("kuramoto.coupling", "0.4"),
    kur("kuramoto.omega_half_width", "1.7320508075688772"),
    kur("kuramoto.center_omega", "true"),
    kur("kuramoto.margin", "0.1"),
    kur("kuramoto.zeta", "10"),
    kur("controller.hidden", "3,3"),
    sir("controller.rounds", "4"),
    sir("sir.beta", "6"),
    sir("sir.gamma", "1.8"),
    sir("sir.budget", "600"),
    sir("sir.seed_quadrant", "upper-right"),
    sir("sir.target_quadrant", "lower-left"),
    sir("sir.seed_fraction", "0.5"),
    sir("sir.drivers", "bipartite-sources"),
    sir("sir.horizon", "5"),
    sir("sir.rnd_per_step", "false"),
    both("train.epochs", "300", "100"),
    both("train.lr", "0.01", "0.07"),
    kur("train.batch", "8"),
    both("train.optimizer", "adam", "adam"),
    kur("train.curriculum_step", "1"),
    kur("train.max_horizon", "40"),
    sir("train.shrink", "0.5"),
    sir("train.tol_ratio", "1.5"),
    both("train.method", "euler", "euler"),
    both("train.step", "0.01", "0.001"),
    both("train.interaction", "0.01", "0.001"),
    both("train.stride", "10", "1"),
    both("eval.method", "rk4", "rk4"),
    both("eval.step", "0.01", "0.001"),
    both("eval.interaction", "0.01", "0.001"),
    both("eval.stride", "10", "1"),
    kur("eval.horizon", "150"),
    kur("eval.samples", "100"),
    kur("eval.initial", "steady-band"),
    both("eval.controllers", "mlp-nodec,feedback", "gnn-nodec,targeted-constant,random-constant,free"),
];

/// Parsed `key = value` file with defaults filled in for its experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    experiment: Experiment,
    values: BTreeMap<String, String>,
}

impl Config {
    /// Parses the flat format: one `key = value` per line, `#` comments,
    /// blank lines ignored. `experiment` is required.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut raw: BTreeMap<String, (usize, String)> = BTreeMap::new();
        for (k, line) in text.lines().enumerate() {
            let lineno = k + 1;
            let t = line.split('#').next().unwrap_or("").trim();
            if t.is_empty() {
                continue;
            }
            let (key, value) = t
                .split_once('=')
                .ok_or_else(|| ConfigError::at(lineno, None, "expected 'key = value'"))?;
            let (key, value) = (key.trim(), value.trim());
            if key.is_empty() {
                return Err(ConfigError::at(lineno, None, "empty key"));
            }
            if raw.insert(key.to_string(), (lineno, value.to_string())).is_some() {
                return Err(ConfigError::at(lineno, Some(key), "duplicate key"));
            }
        }
        let (exp_line, exp) = raw
            .remove("experiment")
            .ok_or_else(|| ConfigError::key("experiment", "required key missing"))?;
        let experiment = match exp.as_str() {
            "kuramoto" => Experiment::Kuramoto,
            "sir" => Experiment::Sir,
            other => {
                return Err(ConfigError::at(
                    exp_line,
                    Some("experiment"),
                    format!("unknown experiment '{other}' (expected kuramoto or sir)"),
                ))
            }
        };
        let mut cfg = Self::defaults(experiment);
        for (key, (line, value)) in raw {
            cfg.set_at(&key, &value, Some(line))?;
        }
        ExperimentConfig::from_config(&cfg)?;
        Ok(cfg)
    }

    pub fn defaults(experiment: Experiment) -> Self {
        let values = REGISTRY
            .iter()
            .filter_map(|s| {
                let d = match experiment {
                    Experiment::Kuramoto => s.kuramoto,
                    Experiment::Sir => s.sir,
                };
                d.map(|d| (s.key.to_string(), d.to_string()))
            })
            .collect();
        Self { experiment, values }
    }

    fn set_at(&mut self, key: &str, value: &str, line: Option<usize>) -> Result<(), ConfigError> {
        if !self.values.contains_key(key) {
            let known = REGISTRY.iter().any(|s| s.key == key);
            let msg = if known {
                format!("key does not apply to the {} experiment", self.experiment.name())
            } else {
                "unknown key".to_string()
            };
            return Err(ConfigError {
                line,
                key: Some(key.to_string()),
                msg,
            });
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Overrides one value, validating the key and the resulting config.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let mut next = self.clone();
        next.set_at(key, value, None)?;
        ExperimentConfig::from_config(&next)?;
        *self = next;
        Ok(())
    }

    pub fn experiment(&self) -> Experiment {
        self.experiment
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    /// Fully resolved snapshot, keys sorted. Parsing it gives back an equal
    /// config.
    pub fn resolved(&self) -> String {
        let mut out = format!("experiment = {}\n", self.experiment.name());
        for (k, v) in &self.values {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out
    }

    /// SHA-256 of the resolved snapshot, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.resolved().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    fn parsed<T: FromStr>(&self, key: &str) -> Result<T, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let v = self
            .get(key)
            .ok_or_else(|| ConfigError::key(key, "missing value"))?;
        v.parse()
            .map_err(|e| ConfigError::key(key, format!("invalid value '{v}': {e}")))
    }

    fn list<T: FromStr>(&self, key: &str) -> Result<Vec<T>, ConfigError>
    where
        T::Err: fmt::Display,
    {
        let v = self.get(key).unwrap_or_default();
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse()
                    .map_err(|e| ConfigError::key(key, format!("invalid entry '{s}': {e}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DriverMethod {
    MaxMatching,
    BipartiteSources,
    All,
}

impl FromStr for DriverMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "max-matching" => Ok(DriverMethod::MaxMatching),
            "bipartite-sources" => Ok(DriverMethod::BipartiteSources),
            "all" => Ok(DriverMethod::All),
            _ => Err("expected max-matching, bipartite-sources or all".into()),
        }
    }
}

/// How evaluation initial phases are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialStates {
    /// `x_i` uniform between `0.9 x_i*` and `x_i*` of the steady state.
    SteadyBand,
    /// `x_i` uniform in `[0, 1]`.
    UnitUniform,
}

impl FromStr for InitialStates {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "steady-band" => Ok(InitialStates::SteadyBand),
            "unit-uniform" => Ok(InitialStates::UnitUniform),
            _ => Err("expected steady-band or unit-uniform".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KuramotoSettings {
    pub nodes: usize,
    pub mean_degree: f64,
    pub coupling: f64,
    pub omega_half_width: f64,
    pub center_omega: bool,
    pub margin: f64,
    pub zeta: f64,
    pub hidden: Vec<usize>,
    pub eval_horizon: f64,
    pub eval_samples: usize,
    pub initial: InitialStates,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirSettings {
    pub rows: usize,
    pub cols: usize,
    pub beta: f64,
    pub gamma: f64,
    pub budget: f64,
    pub seed_quadrant: Quadrant,
    pub target_quadrant: Quadrant,
    pub seed_fraction: f64,
    pub drivers: DriverMethod,
    pub horizon: f64,
    pub rounds: usize,
    pub rnd_per_step: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Settings {
    Kuramoto(KuramotoSettings),
    Sir(SirSettings),
}

/// Typed view of a [`Config`].
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub settings: Settings,
    pub train: TrainConfig,
    pub train_solver: SolveConfig,
    pub eval_solver: SolveConfig,
    pub controllers: Vec<ControllerKind>,
}

fn method(c: &Config, key: &str) -> Result<Method, ConfigError> {
    c.parsed::<Method>(key)
}

fn solver(c: &Config, prefix: &str) -> Result<SolveConfig, ConfigError> {
    let s = SolveConfig::new(
        method(c, &format!("{prefix}.method"))?,
        c.parsed(&format!("{prefix}.step"))?,
        c.parsed(&format!("{prefix}.interaction"))?,
    )
    .with_stride(c.parsed(&format!("{prefix}.stride"))?);
    s.substeps()
        .map_err(|e| ConfigError::key(&format!("{prefix}.interaction"), e.to_string()))?;
    Ok(s)
}

fn positive(key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::key(key, format!("must be positive, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_config(c: &Config) -> Result<Self, ConfigError> {
        let seed = c.parsed("seed")?;
        let settings = match c.experiment() {
            Experiment::Kuramoto => {
                let nodes: usize = c.parsed("graph.nodes")?;
                if nodes < 2 {
                    return Err(ConfigError::key("graph.nodes", "need at least two nodes"));
                }
                Settings::Kuramoto(KuramotoSettings {
                    nodes,
                    mean_degree: positive("graph.mean_degree", c.parsed("graph.mean_degree")?)?,
                    coupling: positive("kuramoto.coupling", c.parsed("kuramoto.coupling")?)?,
                    omega_half_width: c.parsed("kuramoto.omega_half_width")?,
                    center_omega: c.parsed("kuramoto.center_omega")?,
                    margin: c.parsed("kuramoto.margin")?,
                    zeta: positive("kuramoto.zeta", c.parsed("kuramoto.zeta")?)?,
                    hidden: c.list("controller.hidden")?,
                    eval_horizon: positive("eval.horizon", c.parsed("eval.horizon")?)?,
                    eval_samples: c.parsed("eval.samples")?,
                    initial: c.parsed("eval.initial")?,
                })
            }
            Experiment::Sir => Settings::Sir(SirSettings {
                rows: c.parsed("graph.rows")?,
                cols: c.parsed("graph.cols")?,
                beta: c.parsed("sir.beta")?,
                gamma: c.parsed("sir.gamma")?,
                budget: positive("sir.budget", c.parsed("sir.budget")?)?,
                seed_quadrant: c.parsed("sir.seed_quadrant")?,
                target_quadrant: c.parsed("sir.target_quadrant")?,
                seed_fraction: c.parsed("sir.seed_fraction")?,
                drivers: c.parsed("sir.drivers")?,
                horizon: positive("sir.horizon", c.parsed("sir.horizon")?)?,
                rounds: c.parsed("controller.rounds")?,
                rnd_per_step: c.parsed("sir.rnd_per_step")?,
            }),
        };
        let mut train = TrainConfig {
            epochs: c.parsed("train.epochs")?,
            lr: c.parsed("train.lr")?,
            optimizer: c.parsed::<OptimizerKind>("train.optimizer")?,
            seed,
            ..TrainConfig::default()
        };
        match c.experiment() {
            Experiment::Kuramoto => {
                train.batch_size = c.parsed("train.batch")?;
                train.curriculum_step = c.parsed("train.curriculum_step")?;
                train.max_horizon = c.parsed("train.max_horizon")?;
            }
            Experiment::Sir => {
                train.batch_size = 1;
                train.shrink = c.parsed("train.shrink")?;
                train.tol_ratio = c.parsed("train.tol_ratio")?;
            }
        }
        train
            .validate()
            .map_err(|e| ConfigError::key("train", e.to_string()))?;
        let train_solver = solver(c, "train")?;
        if matches!(train_solver.method, Method::Dopri5 { .. }) {
            return Err(ConfigError::key("train.method", "training needs a fixed-step method"));
        }
        let controllers: Vec<ControllerKind> = c.list("eval.controllers")?;
        if controllers.is_empty() {
            return Err(ConfigError::key("eval.controllers", "at least one controller is needed"));
        }
        Ok(Self {
            seed,
            settings,
            train,
            train_solver,
            eval_solver: solver(c, "eval")?,
            controllers,
        })
    }
}

/// Seed for a named sub-stream of a run.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let digest = Sha256::digest(format!("{seed}:{label}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_is_required() {
        let e = Config::parse("seed = 3\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("experiment"));
    }

    #[test]
    fn unknown_and_foreign_keys_are_rejected_with_line() {
        let e = Config::parse("experiment = sir\n\nfoo.bar = 1\n").unwrap_err();
        assert_eq!(e.line, Some(3));
        assert_eq!(e.msg, "unknown key");
        let e = Config::parse("experiment = sir\nkuramoto.zeta = 3\n").unwrap_err();
        assert!(e.msg.contains("does not apply"));
    }

    #[test]
    fn bad_values_name_the_key() {
        let e = Config::parse("experiment = kuramoto\ntrain.epochs = many\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("train.epochs"));
        let e = Config::parse("experiment = kuramoto\ntrain.step = 0.03\ntrain.interaction = 0.05\n").unwrap_err();
        assert_eq!(e.key.as_deref(), Some("train.interaction"));
    }

    #[test]
    fn hash_ignores_key_order_and_comments() {
        let a = Config::parse("experiment = sir\nseed = 4\nsir.budget = 150 # scaled\n").unwrap();
        let b = Config::parse("# desk\nsir.budget=150\n\nseed=4\nexperiment=sir\n").unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), Config::parse("experiment = sir\n").unwrap().hash());
    }

    #[test]
    fn resolved_snapshot_round_trips() {
        let a = Config::parse("experiment = kuramoto\ngraph.nodes = 64\n").unwrap();
        assert_eq!(Config::parse(&a.resolved()).unwrap(), a);
        assert!(a.resolved().contains("kuramoto.coupling = 0.4\n"));
    }

    #[test]
    fn typed_view_has_full_scale_defaults() {
        let c = Config::parse("experiment = sir\n").unwrap();
        let e = ExperimentConfig::from_config(&c).unwrap();
        match e.settings {
            Settings::Sir(s) => {
                assert_eq!((s.rows, s.cols, s.beta, s.gamma, s.budget), (32, 32, 6.0, 1.8, 600.0));
                assert_eq!(s.target_quadrant, Quadrant::LowerLeft);
            }
            _ => panic!("wrong experiment"),
        }
        assert_eq!(e.train.lr, 0.07);
        assert_eq!(e.eval_solver.interaction, 0.001);
    }

    #[test]
    fn set_validates() {
        let mut c = Config::parse("experiment = kuramoto\n").unwrap();
        c.set("graph.nodes", "64").unwrap();
        assert!(c.set("graph.nodes", "x").is_err());
        assert!(c.set("nope", "1").is_err());
        assert_eq!(c.get("graph.nodes"), Some("64"));
    }

    #[test]
    fn derived_seeds_differ_by_label() {
        assert_ne!(derive_seed(1, "graph"), derive_seed(1, "omega"));
        assert_eq!(derive_seed(1, "graph"), derive_seed(1, "graph"));
    }
}
