//! Experiment configuration, pipelines and the command implementations
//! behind the `nodec` binary.
//!
//! Every command returns a [`CliError`] whose [`CliError::exit_code`] is 2
//! for configuration problems and 1 for everything else.

pub mod config;
pub mod pipeline;

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

pub use config::{Config, ConfigError, Experiment, ExperimentConfig};
pub use pipeline::{evaluate, median, neural_controller, train, Evaluation, RelativeRow, Setup};

use crate::controllers::{read_checkpoint, write_checkpoint, Checkpoint};
use crate::graph::write_edge_list;
use crate::metrics::{metrics_fields, read_metrics_csv, write_metrics_csv, MetricsRow, METRICS_HEADER};
use crate::odesolve::csv_err;
use crate::training::write_loss_csv;
use crate::Error;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "loss.csv";
pub const CONFIG_FILE: &str = "config.resolved";
pub const RUN_FILE: &str = "run.txt";
pub const METRICS_FILE: &str = "metrics.csv";
pub const RELATIVE_FILE: &str = "relative.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const GRAPH_FILE: &str = "graph.txt";

/// Built-in configurations.
pub const PRESETS: &[(&str, &str)] = &[
    ("kuramoto-desk", include_str!("../../presets/kuramoto-desk.conf")),
    ("kuramoto-full", include_str!("../../presets/kuramoto-full.conf")),
    ("sir-desk", include_str!("../../presets/sir-desk.conf")),
    ("sir-full", include_str!("../../presets/sir-full.conf")),
];

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Where a configuration comes from.
#[derive(Debug, Clone)]
pub enum ConfigSource {
    File(PathBuf),
    Preset(String),
    Text(String),
}

/// Loads a configuration and applies the seed and `key=value` overrides.
pub fn load_config(src: &ConfigSource, seed: Option<u64>, overrides: &[String]) -> Result<Config, CliError> {
    let text = match src {
        ConfigSource::File(p) => fs::read_to_string(p)
            .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?,
        ConfigSource::Preset(name) => PRESETS
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.to_string())
            .ok_or_else(|| {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                CliError::Config(format!("unknown preset '{name}' (available: {})", names.join(", ")))
            })?,
        ConfigSource::Text(t) => t.clone(),
    };
    let mut cfg = Config::parse(&text)?;
    if let Some(s) = seed {
        cfg.set("seed", &s.to_string())?;
    }
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| CliError::Config(format!("override '{o}' is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

/// Returns the warning for configurations marked as long-running.
pub fn long_running_warning(text: &str) -> Option<&'static str> {
    text.lines()
        .any(|l| l.trim_start().starts_with("# long-running"))
        .then_some("warning: this configuration is full scale and can run for many hours")
}

/// Provenance of one command invocation.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub command: String,
    pub config_hash: String,
    pub version: String,
    pub artifacts: Vec<PathBuf>,
    /// Controller label with median energy and headline metric.
    pub metrics: Vec<(String, f64, f64)>,
}

impl RunRecord {
    fn new(command: &str, cfg: &Config) -> Self {
        let hash = cfg.hash();
        Self {
            run_id: format!("{}-{}-s{}-{}", cfg.experiment().name(), command, cfg.get("seed").unwrap_or("0"), &hash[..12]),
            command: command.to_string(),
            config_hash: hash,
            version: VERSION.to_string(),
            artifacts: Vec::new(),
            metrics: Vec::new(),
        }
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "run_id = {}\ncommand = {}\nconfig_hash = {}\nversion = {}\n",
            self.run_id, self.command, self.config_hash, self.version
        );
        for a in &self.artifacts {
            s.push_str(&format!("artifact = {}\n", a.display()));
        }
        for (label, e, m) in &self.metrics {
            s.push_str(&format!("metrics = {label} energy={e} headline={m}\n"));
        }
        s
    }

    fn write(&mut self, dir: &Path) -> Result<PathBuf, CliError> {
        let path = dir.join(RUN_FILE);
        self.artifacts.push(path.clone());
        fs::write(&path, self.render()).map_err(io_err(&path))?;
        Ok(path)
    }
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    Ok(BufWriter::new(fs::File::create(path).map_err(io_err(path))?))
}

fn typed(cfg: &Config) -> Result<ExperimentConfig, CliError> {
    Ok(ExperimentConfig::from_config(cfg)?)
}

/// Trains the neural controller and writes the checkpoint, loss history,
/// resolved config and run record into `out`. The checkpoint holds the
/// parameters the controller ends with: the last ones after curriculum
/// training, the best ones after adaptive training.
pub fn cmd_train(cfg: &Config, out: &Path) -> Result<RunRecord, CliError> {
    let ec = typed(cfg)?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let setup = Setup::build(&ec)?;
    let mut controller = neural_controller(&ec, &setup)?;
    let report = train(&ec, &setup, controller.as_mut())?;
    let mut rec = RunRecord::new("train", cfg);

    let path = out.join(LOSS_FILE);
    write_loss_csv(&report.history, create(&path)?)?;
    rec.artifacts.push(path);
    let path = out.join(CONFIG_FILE);
    fs::write(&path, cfg.resolved()).map_err(io_err(&path))?;
    rec.artifacts.push(path);

    if report.history.first().map_or(true, |h| h.unstable) {
        rec.write(out)?;
        return Err(CliError::Runtime(
            "training diverged in the first epoch; lower train.step or train.lr".into(),
        ));
    }
    let path = out.join(CHECKPOINT_FILE);
    let mut w = create(&path)?;
    let ck = Checkpoint {
        params: controller.params().clone(),
        ..report.best.clone()
    };
    write_checkpoint(&ck, &mut w)?;
    w.flush().map_err(io_err(&path))?;
    rec.artifacts.push(path);
    rec.metrics.push(("NODEC".into(), f64::NAN, report.best.best_loss));
    rec.write(out)?;
    Ok(rec)
}

/// Per-controller medians in first-appearance order.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub controller: String,
    pub samples: usize,
    pub energy: f64,
    pub r_final: Option<f64>,
    pub peak_infected: Option<f64>,
}

pub fn summarize(rows: &[MetricsRow]) -> Vec<SummaryRow> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: BTreeMap<String, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        if !groups.contains_key(&r.controller) {
            order.push(r.controller.clone());
        }
        groups.entry(r.controller.clone()).or_default().push(r);
    }
    order
        .into_iter()
        .map(|c| {
            let g = &groups[&c];
            let med = |f: &dyn Fn(&MetricsRow) -> Option<f64>| {
                let mut v: Vec<f64> = g.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty()).then(|| median(&mut v))
            };
            SummaryRow {
                samples: g.len(),
                energy: med(&|r| Some(r.energy)).unwrap_or(f64::NAN),
                r_final: med(&|r| r.r_final),
                peak_infected: med(&|r| r.peak_infected),
                controller: c,
            }
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("-".to_string(), |x| format!("{x:.6}"))
}

/// Aligned text table of summary rows. Rows with a peak are sorted by it.
pub fn summary_table(rows: &[SummaryRow]) -> String {
    let mut rows = rows.to_vec();
    if rows.iter().all(|r| r.peak_infected.is_some()) {
        rows.sort_by(|a, b| a.peak_infected.unwrap().total_cmp(&b.peak_infected.unwrap()));
    }
    let mut s = format!("{:<10} {:>8} {:>16} {:>12} {:>12}\n", "controller", "samples", "energy", "r_final", "peak");
    for r in rows {
        s.push_str(&format!(
            "{:<10} {:>8} {:>16.4} {:>12} {:>12}\n",
            r.controller,
            r.samples,
            r.energy,
            fmt_opt(r.r_final),
            fmt_opt(r.peak_infected)
        ));
    }
    s
}

fn write_relative(rows: &[RelativeRow], path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["sample", "energy_rel", "r_final_rel"]).map_err(csv_err)?;
    for r in rows {
        w.write_record([r.sample.to_string(), r.energy.to_string(), r.r_final.to_string()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Evaluates every configured controller from the same initial states.
/// `checkpoint` is required when the controller list includes NODEC.
pub fn cmd_evaluate(
    cfg: &Config,
    checkpoint: Option<&Path>,
    out: &Path,
    assertion: Option<&str>,
) -> Result<RunRecord, CliError> {
    let ec = typed(cfg)?;
    let assertion = assertion.map(Assertion::parse).transpose()?;
    fs::create_dir_all(out).map_err(io_err(out))?;
    let setup = Setup::build(&ec)?;
    let neural = match checkpoint {
        Some(p) => {
            let f = fs::File::open(p).map_err(io_err(p))?;
            let ck = read_checkpoint(BufReader::new(f))?;
            let mut c = neural_controller(&ec, &setup)?;
            c.params_mut()
                .assign(&ck.params)
                .map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
            Some(c)
        }
        None => None,
    };
    let eval = evaluate(&ec, &setup, neural.as_deref())?;
    let mut rec = RunRecord::new("evaluate", cfg);

    let path = out.join(METRICS_FILE);
    write_metrics_csv(&eval.rows, create(&path)?)?;
    rec.artifacts.push(path);
    if !eval.relative.is_empty() {
        let path = out.join(RELATIVE_FILE);
        write_relative(&eval.relative, &path)?;
        rec.artifacts.push(path);
    }
    for (label, csv) in &eval.trajectories {
        let path = out.join(format!("trajectory_{label}.csv"));
        fs::write(&path, csv).map_err(io_err(&path))?;
        rec.artifacts.push(path);
    }
    let summary = summarize(&eval.rows);
    let path = out.join(SUMMARY_FILE);
    fs::write(&path, summary_table(&summary)).map_err(io_err(&path))?;
    rec.artifacts.push(path);
    let path = out.join(CONFIG_FILE);
    fs::write(&path, cfg.resolved()).map_err(io_err(&path))?;
    rec.artifacts.push(path);
    rec.metrics = summary
        .iter()
        .map(|s| (s.controller.clone(), s.energy, s.peak_infected.or(s.r_final).unwrap_or(f64::NAN)))
        .collect();
    rec.write(out)?;
    if let Some(a) = assertion {
        a.check(&eval.rows)?;
    }
    Ok(rec)
}

/// Ordering claim on per-controller medians, written `metric:A<B<C`.
#[derive(Debug, Clone, PartialEq)]
pub struct Assertion {
    pub metric: String,
    pub order: Vec<String>,
}

impl Assertion {
    pub fn parse(s: &str) -> Result<Self, CliError> {
        let (metric, chain) = s
            .split_once(':')
            .ok_or_else(|| CliError::Config(format!("assertion '{s}' must look like metric:A<B")))?;
        let metric = metric.trim().to_string();
        if !["peak", "energy", "r"].contains(&metric.as_str()) {
            return Err(CliError::Config(format!("unknown assertion metric '{metric}' (peak, energy or r)")));
        }
        let order: Vec<String> = chain.split('<').map(|c| c.trim().to_string()).collect();
        if order.len() < 2 || order.iter().any(String::is_empty) {
            return Err(CliError::Config(format!("assertion '{s}' needs at least two controllers")));
        }
        Ok(Self { metric, order })
    }

    fn value(&self, r: &SummaryRow) -> Option<f64> {
        match self.metric.as_str() {
            "peak" => r.peak_infected,
            "energy" => Some(r.energy),
            _ => r.r_final,
        }
    }

    /// Fails with a runtime error naming the first violated pair.
    pub fn check(&self, rows: &[MetricsRow]) -> Result<(), CliError> {
        let summary = summarize(rows);
        let values = self
            .order
            .iter()
            .map(|c| {
                summary
                    .iter()
                    .find(|r| &r.controller == c)
                    .and_then(|r| self.value(r))
                    .ok_or_else(|| CliError::Runtime(format!("assertion: no {} values for {c}", self.metric)))
            })
            .collect::<Result<Vec<f64>, CliError>>()?;
        for k in 1..values.len() {
            if !(values[k - 1] < values[k]) {
                return Err(CliError::Runtime(format!(
                    "assertion failed: median {} of {} ({}) is not below {} ({})",
                    self.metric,
                    self.order[k - 1],
                    values[k - 1],
                    self.order[k],
                    values[k]
                )));
            }
        }
        Ok(())
    }
}

/// Merged view of several evaluation runs.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub rows: Vec<(String, MetricsRow)>,
    pub table: String,
}

/// Merges `metrics.csv` of each run directory. Headline relative
/// differences are taken against the first run, per controller.
pub fn cmd_compare(runs: &[PathBuf], out: Option<&Path>, assertion: Option<&str>) -> Result<Comparison, CliError> {
    if runs.len() < 2 {
        return Err(CliError::Config("compare needs at least two runs".into()));
    }
    let assertion = assertion.map(Assertion::parse).transpose()?;
    let mut loaded = Vec::new();
    let mut failures = Vec::new();
    for dir in runs {
        let path = dir.join(METRICS_FILE);
        match fs::File::open(&path) {
            Ok(f) => match read_metrics_csv(BufReader::new(f)) {
                Ok(rows) => loaded.push((dir.display().to_string(), rows)),
                Err(e) => failures.push(format!("{}: {e}", path.display())),
            },
            Err(e) => failures.push(format!("{}: {e}", path.display())),
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Runtime(format!("cannot read runs:\n  {}", failures.join("\n  "))));
    }

    let base: BTreeMap<String, SummaryRow> = summarize(&loaded[0].1)
        .into_iter()
        .map(|s| (s.controller.clone(), s))
        .collect();
    let mut table = format!(
        "{:<32} {:<10} {:>16} {:>12} {:>12} {:>12}\n",
        "run", "controller", "energy", "headline", "d_energy", "d_headline"
    );
    for (run, rows) in &loaded {
        for s in summarize(rows) {
            let h = s.peak_infected.or(s.r_final).unwrap_or(f64::NAN);
            let (de, dh) = match base.get(&s.controller) {
                Some(b) => {
                    let bh = b.peak_infected.or(b.r_final).unwrap_or(f64::NAN);
                    (rel(s.energy, b.energy), rel(h, bh))
                }
                None => (f64::NAN, f64::NAN),
            };
            table.push_str(&format!(
                "{:<32} {:<10} {:>16.4} {:>12.6} {:>12.6} {:>12.6}\n",
                run, s.controller, s.energy, h, de, dh
            ));
        }
    }

    let rows: Vec<(String, MetricsRow)> = loaded
        .into_iter()
        .flat_map(|(run, rows)| rows.into_iter().map(move |r| (run.clone(), r)))
        .collect();
    if let Some(path) = out {
        let mut w = csv::Writer::from_writer(create(path)?);
        let mut header = vec!["run".to_string()];
        header.extend(METRICS_HEADER.iter().map(|s| s.to_string()));
        w.write_record(&header).map_err(csv_err)?;
        for (run, r) in &rows {
            let mut fields = vec![run.clone()];
            fields.extend(metrics_fields(r));
            w.write_record(&fields).map_err(csv_err)?;
        }
        w.flush().map_err(io_err(path))?;
    }
    if let Some(a) = assertion {
        let merged: Vec<MetricsRow> = rows.iter().map(|(_, r)| r.clone()).collect();
        a.check(&merged)?;
    }
    Ok(Comparison { rows, table })
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b) / b
    }
}

/// Writes the experiment graph as an edge list.
pub fn cmd_gen_graph(cfg: &Config, out: &Path) -> Result<PathBuf, CliError> {
    let ec = typed(cfg)?;
    let g = pipeline::build_graph(&ec)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut w = create(out)?;
    write_edge_list(&g, &mut w).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.flush().map_err(io_err(out))?;
    Ok(out.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(c: &str, energy: f64, peak: f64) -> MetricsRow {
        MetricsRow {
            run_id: c.into(),
            controller: c.into(),
            seed: 0,
            energy,
            r_final: None,
            r_mean: None,
            r_min: None,
            peak_infected: Some(peak),
            t_peak: Some(0.0),
        }
    }

    #[test]
    fn presets_parse() {
        for (name, text) in PRESETS {
            Config::parse(text).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
        assert!(long_running_warning(PRESETS[1].1).is_some());
        assert!(long_running_warning(PRESETS[0].1).is_none());
    }

    #[test]
    fn assertion_parsing_and_checking() {
        let a = Assertion::parse("peak:NODEC<RND<F").unwrap();
        assert_eq!(a.order, ["NODEC", "RND", "F"]);
        let rows = vec![row("F", 0.0, 0.5), row("NODEC", 3.0, 0.1), row("RND", 2.0, 0.2)];
        a.check(&rows).unwrap();
        let bad = Assertion::parse("peak:RND<NODEC").unwrap();
        assert_eq!(bad.check(&rows).unwrap_err().exit_code(), 1);
        assert_eq!(Assertion::parse("peak:NODEC").unwrap_err().exit_code(), 2);
        assert_eq!(Assertion::parse("speed:A<B").unwrap_err().exit_code(), 2);
    }

    #[test]
    fn summary_sorts_by_peak() {
        let rows = vec![row("F", 0.0, 0.5), row("NODEC", 3.0, 0.1), row("NODEC", 5.0, 0.3)];
        let s = summarize(&rows);
        assert_eq!(s[1].energy, 4.0);
        let t = summary_table(&s);
        assert!(t.find("NODEC").unwrap() < t.find("F ").unwrap());
    }

    #[test]
    fn overrides_and_seed() {
        let c = load_config(&ConfigSource::Text("experiment = sir\n".into()), Some(9), &["sir.budget = 12".into()]).unwrap();
        assert_eq!(c.get("seed"), Some("9"));
        assert_eq!(c.get("sir.budget"), Some("12"));
        let e = load_config(&ConfigSource::Text("experiment = sir\n".into()), None, &["nope=1".into()]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert_eq!(load_config(&ConfigSource::Preset("x".into()), None, &[]).unwrap_err().exit_code(), 2);
    }
}
