//! Experiment orchestration: JSON configuration, single runs, sweeps,
//! ablations and run comparison.
//!
//! A run directory holds `resolved-config.json`, `metrics.jsonl` (one
//! [`StepReport`] per line), `summary.json` ([`RunSummary`]) and, when enabled,
//! `params.json` with the final logits.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::BpgoConfig;
use crate::env::{AmbiguousEnv, EnvSpec};
use crate::error::{Error, Result};
use crate::policy::TabularPolicy;
use crate::report::{median, step_quality, summarize, to_jsonl, RunSummary};
use crate::rng::Substreams;
use crate::trainer::{prior_from_config, train_with, StepReport};

/// Environment variable that overrides `output.directory`.
pub const OUTPUT_ENV_VAR: &str = "BPGO_OUT";

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NON_FINITE: u8 = 3;

/// The alpha grid of the reliability-weight sensitivity study.
pub const ALPHA_GRID: [f64; 4] = [0.1, 0.5, 0.7, 0.9];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyInit {
    /// Standard deviation of the initial logits; zero starts from the uniform policy.
    pub init_std: f64,
}

impl Default for PolicyInit {
    fn default() -> Self {
        Self { init_std: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
    /// Prefix of the timestamped run directory name.
    pub label: String,
    pub save_params: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("runs"),
            label: "run".into(),
            save_params: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Dotted path into the experiment config, e.g. `trainer.alpha`.
    pub parameter: String,
    pub values: Vec<Value>,
    #[serde(default = "default_sweep_seeds")]
    pub seeds: Vec<u64>,
}

fn default_sweep_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub policy: PolicyInit,
    pub trainer: BpgoConfig,
    pub output: OutputConfig,
    pub sweep: Option<SweepSpec>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.trainer.validate()?;
        if !(self.policy.init_std >= 0.0 && self.policy.init_std.is_finite()) {
            return Err(Error::Config("policy.init_std must be finite and >= 0".into()));
        }
        if let Some(b) = self.trainer.batch_prompts {
            if b > self.env.prompts.len() {
                return Err(Error::Config(format!(
                    "trainer.batch_prompts {b} exceeds the {} configured prompts",
                    self.env.prompts.len()
                )));
            }
        }
        Ok(())
    }

    pub fn from_value(value: Value) -> Result<Self> {
        let config: Self = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn initial_policy(&self) -> TabularPolicy<f64> {
        let (p, t, v) = (self.env.prompts.len(), self.env.horizon, self.env.vocab_size);
        if self.policy.init_std > 0.0 {
            TabularPolicy::random(p, t, v, self.policy.init_std, &Substreams::new(self.trainer.seed))
        } else {
            TabularPolicy::uniform(p, t, v)
        }
    }
}

/// Maps a library error onto the CLI exit status contract.
pub fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Config(_) | Error::Json { .. } => EXIT_CONFIG,
        Error::NonFiniteLoss { .. } => EXIT_NON_FINITE,
        _ => EXIT_FAILURE,
    }
}

/// Applies one `dotted.path=value` override. The value is parsed as JSON and
/// falls back to a plain string.
pub fn apply_override(config: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form path=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(config, path, value)
}

pub fn set_path(config: &mut Value, path: &str, value: Value) -> Result<()> {
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(Error::Config(format!("malformed parameter path `{path}`")));
    }
    let mut node = config;
    for key in &keys[..keys.len() - 1] {
        if node.is_null() {
            *node = Value::Object(Default::default());
        }
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{path}`: `{key}` is inside a non-object value")))?;
        node = obj.entry(key.to_string()).or_insert(Value::Null);
    }
    if node.is_null() {
        *node = Value::Object(Default::default());
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| Error::Config(format!("`{path}` does not address an object field")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

fn read_config_value(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read config file {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

/// Reads a config file and applies overrides, returning the raw JSON form.
pub fn load_config_value(path: &Path, overrides: &[String]) -> Result<Value> {
    let mut value = read_config_value(path)?;
    if value.is_null() {
        value = Value::Object(Default::default());
    }
    for o in overrides {
        apply_override(&mut value, o)?;
    }
    Ok(value)
}

pub fn load_config(path: &Path, overrides: &[String]) -> Result<ExperimentConfig> {
    ExperimentConfig::from_value(load_config_value(path, overrides)?)
}

/// Output root: explicit argument, then `BPGO_OUT`, then `output.directory`.
pub fn output_root(config: &ExperimentConfig, explicit: Option<&Path>) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ENV_VAR) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => config.output.directory.clone(),
    }
}

/// Creates `<root>/<label>-<timestamp>`, adding a counter on collision.
pub fn fresh_run_dir(root: &Path, label: &str) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = chrono::Utc::now().format("%Y%m%dT%H%M%S%.3fZ");
    let base = format!("{label}-{stamp}");
    for n in 0.. {
        let name = if n == 0 { base.clone() } else { format!("{base}-{n}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!()
}

/// Writes through a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path.display().to_string(), e))?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Result of training without touching the filesystem.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub reports: Vec<StepReport<f64>>,
    pub summary: RunSummary,
    pub policy: TabularPolicy<f64>,
}

/// Trains the configured experiment. On failure the error is returned along
/// with the reports completed before it.
pub fn run_in_memory(config: &ExperimentConfig) -> std::result::Result<RunResult, (Error, Vec<StepReport<f64>>)> {
    let mut reports = Vec::with_capacity(config.trainer.steps);
    let outcome = (|| {
        config.validate()?;
        let env = AmbiguousEnv::<f64>::new(config.env.clone())?;
        let policy = config.initial_policy();
        let initial = mean_expected_quality(&env, &policy)?;
        let prior = prior_from_config(&config.trainer)?;
        let (policy, final_q) = train_with(&config.trainer, &env, policy, prior, |r| {
            reports.push(r.clone());
            Ok(())
        })?;
        // Without exact enumeration, fall back to the sampled curve end points.
        let initial = initial.or_else(|| reports.first().map(step_quality)).unwrap_or(f64::NAN);
        let final_q = final_q.or_else(|| reports.last().map(step_quality)).unwrap_or(initial);
        Ok((policy, initial, final_q))
    })();
    match outcome {
        Ok((policy, initial, final_q)) => {
            let summary = summarize(&reports, initial, final_q);
            Ok(RunResult {
                reports,
                summary,
                policy,
            })
        }
        Err(e) => Err((e, reports)),
    }
}

fn mean_expected_quality(env: &AmbiguousEnv<f64>, policy: &TabularPolicy<f64>) -> Result<Option<f64>> {
    let mut total = 0.0;
    for p in 0..env.num_prompts() {
        match env.expected_true_quality(policy, crate::policy::PromptId(p))? {
            Some(q) => total += q,
            None => return Ok(None),
        }
    }
    Ok(Some(total / env.num_prompts() as f64))
}

/// Runs one experiment into `run_dir`, which must exist.
pub fn execute(config: &ExperimentConfig, run_dir: &Path) -> Result<RunSummary> {
    write_json(&run_dir.join("resolved-config.json"), config)?;
    match run_in_memory(config) {
        Ok(result) => {
            write_atomic(&run_dir.join("metrics.jsonl"), to_jsonl(&result.reports)?.as_bytes())?;
            write_json(&run_dir.join("summary.json"), &result.summary)?;
            if config.output.save_params {
                write_json(&run_dir.join("params.json"), &result.policy)?;
            }
            Ok(result.summary)
        }
        Err((error, reports)) => {
            write_atomic(&run_dir.join("metrics.jsonl"), to_jsonl(&reports)?.as_bytes())?;
            write_atomic(&run_dir.join("error.txt"), format!("{error}\n").as_bytes())?;
            Err(error)
        }
    }
}

/// `run` verb: load, override, execute into a fresh timestamped directory.
pub fn run(config_path: &Path, overrides: &[String], root: Option<&Path>) -> Result<(PathBuf, RunSummary)> {
    let config = load_config(config_path, overrides)?;
    let dir = fresh_run_dir(&output_root(&config, root), &config.output.label)?;
    let summary = execute(&config, &dir)?;
    Ok((dir, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: String,
    pub seed: u64,
    pub exit_code: u8,
    pub final_true_quality: Option<f64>,
    pub final_raw_reward: Option<f64>,
    pub auc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
    /// Largest exit code over all cells.
    pub exit_code: u8,
}

fn value_label(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// `sweep` verb: the cross product of sweep values and seeds, one run directory
/// per cell plus `sweep.csv`.
pub fn sweep(config_path: &Path, overrides: &[String], root: Option<&Path>) -> Result<SweepOutcome> {
    let mut base = load_config_value(config_path, overrides)?;
    let resolved = ExperimentConfig::from_value(base.clone())?;
    let spec = resolved
        .sweep
        .clone()
        .ok_or_else(|| Error::Config(format!("{} has no `sweep` section", config_path.display())))?;
    if spec.values.is_empty() {
        return Err(Error::Config("sweep.values is empty".into()));
    }
    if spec.seeds.is_empty() {
        return Err(Error::Config("sweep.seeds is empty".into()));
    }
    let mut seen = BTreeSet::new();
    let seeds: Vec<u64> = spec.seeds.iter().copied().filter(|s| seen.insert(*s)).collect();
    let mut seen = BTreeSet::new();
    let values: Vec<Value> = spec
        .values
        .iter()
        .filter(|v| seen.insert(value_label(v)))
        .cloned()
        .collect();

    set_path(&mut base, "sweep", Value::Null)?;
    // Resolve every cell up front so configuration errors surface before any work.
    let mut cells = Vec::with_capacity(values.len() * seeds.len());
    for v in &values {
        for &seed in &seeds {
            let mut cell = base.clone();
            set_path(&mut cell, &spec.parameter, v.clone())?;
            set_path(&mut cell, "trainer.seed", Value::from(seed))?;
            cells.push((value_label(v), seed, ExperimentConfig::from_value(cell)?));
        }
    }

    let sweep_dir = fresh_run_dir(&output_root(&resolved, root), &format!("{}-sweep", resolved.output.label))?;
    write_json(&sweep_dir.join("resolved-config.json"), &resolved)?;
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|(label, seed, config)| {
            let dir = sweep_dir
                .join(format!("{}={label}", spec.parameter))
                .join(format!("seed-{seed}"));
            let result = fs::create_dir_all(&dir)
                .map_err(|e| Error::io(&dir, e))
                .and_then(|_| execute(config, &dir));
            match result {
                Ok(s) => SweepRow {
                    value: label.clone(),
                    seed: *seed,
                    exit_code: EXIT_OK,
                    final_true_quality: Some(s.final_true_quality),
                    final_raw_reward: s.final_raw_reward,
                    auc: Some(s.auc),
                },
                Err(e) => SweepRow {
                    value: label.clone(),
                    seed: *seed,
                    exit_code: exit_code(&e),
                    final_true_quality: None,
                    final_raw_reward: None,
                    auc: None,
                },
            }
        })
        .collect();
    write_csv(&sweep_dir.join("sweep.csv"), &rows)?;
    let exit_code = rows.iter().map(|r| r.exit_code).max().unwrap_or(EXIT_OK);
    Ok(SweepOutcome {
        dir: sweep_dir,
        rows,
        exit_code,
    })
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Csv {
            path: path.to_path_buf(),
            source: e,
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    write_atomic(path, &bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

/// Side-by-side summary metrics and quality curves of several runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub runs: Vec<String>,
    /// `(metric, value per run)`
    pub metrics: Vec<(String, Vec<Option<f64>>)>,
    /// `(step, quality per run)` over the common step range.
    pub curves: Vec<(usize, Vec<f64>)>,
}

fn read_summary(dir: &Path) -> Result<RunSummary> {
    let path = dir.join("summary.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("missing {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn read_curve(dir: &Path) -> Result<Vec<f64>> {
    let path = dir.join("metrics.jsonl");
    let text = fs::read_to_string(&path).map_err(|e| Error::Config(format!("missing {}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str::<StepReport<f64>>(l)
                .map(|r| step_quality(&r))
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
        })
        .collect()
}

/// `compare` verb. Curves of unequal length are truncated to the shortest.
pub fn compare(run_dirs: &[PathBuf]) -> Result<Comparison> {
    if run_dirs.len() < 2 {
        return Err(Error::Config("compare needs at least two run directories".into()));
    }
    let summaries = run_dirs.iter().map(|d| read_summary(d)).collect::<Result<Vec<_>>>()?;
    let curves = run_dirs.iter().map(|d| read_curve(d)).collect::<Result<Vec<_>>>()?;
    let runs = run_dirs
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let name = d.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
            format!("run{}:{name}", i + 1)
        })
        .collect();
    let metric = |name: &str, f: &dyn Fn(&RunSummary) -> Option<f64>| {
        (name.to_string(), summaries.iter().map(f).collect::<Vec<_>>())
    };
    let metrics = vec![
        metric("steps", &|s| Some(s.steps as f64)),
        metric("initial_true_quality", &|s| Some(s.initial_true_quality)),
        metric("final_true_quality", &|s| Some(s.final_true_quality)),
        metric("final_raw_reward", &|s| s.final_raw_reward),
        metric("auc", &|s| Some(s.auc)),
    ];
    let common = curves.iter().map(Vec::len).min().unwrap_or(0);
    let curves = (0..common)
        .map(|step| (step, curves.iter().map(|c| c[step]).collect()))
        .collect();
    Ok(Comparison { runs, metrics, curves })
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Comparison {
    pub fn render_metrics(&self, format: TableFormat) -> String {
        let header: Vec<String> = std::iter::once("metric".to_string()).chain(self.runs.clone()).collect();
        let rows = self
            .metrics
            .iter()
            .map(|(m, vals)| std::iter::once(m.clone()).chain(vals.iter().map(|v| fmt_cell(*v))).collect())
            .collect::<Vec<Vec<String>>>();
        render_table(&header, &rows, format)
    }

    pub fn render_curves(&self, format: TableFormat) -> String {
        let header: Vec<String> = std::iter::once("step".to_string()).chain(self.runs.clone()).collect();
        let rows = self
            .curves
            .iter()
            .map(|(s, vals)| std::iter::once(s.to_string()).chain(vals.iter().map(|v| v.to_string())).collect())
            .collect::<Vec<Vec<String>>>();
        render_table(&header, &rows, format)
    }
}

fn render_table(header: &[String], rows: &[Vec<String>], format: TableFormat) -> String {
    let mut out = String::new();
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(header).expect("in-memory write");
            for r in rows {
                w.write_record(r).expect("in-memory write");
            }
            out = String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8");
        }
        TableFormat::Markdown => {
            let _ = writeln!(out, "| {} |", header.join(" | "));
            let _ = writeln!(out, "|{}", "---|".repeat(header.len()));
            for r in rows {
                let _ = writeln!(out, "| {} |", r.join(" | "));
            }
        }
    }
    out
}

/// One row of the ablation table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub config: String,
    pub enable_ras: bool,
    pub enable_crt: bool,
    pub alpha: f64,
    pub seeds: usize,
    pub mean_final_true_quality: f64,
    pub median_final_true_quality: f64,
    pub mean_auc: f64,
    pub median_auc: f64,
}

/// Labelled trainer configurations of the ablation study: the four on/off
/// combinations of the two prior-guided terms, then the reliability weight
/// alone across [`ALPHA_GRID`].
pub fn ablation_configs(base: &BpgoConfig) -> Vec<(String, BpgoConfig)> {
    let mut out = Vec::new();
    for (name, ras, crt) in [
        ("grpo", false, false),
        ("ras", true, false),
        ("crt", false, true),
        ("ras+crt", true, true),
    ] {
        out.push((
            name.to_string(),
            BpgoConfig {
                enable_ras: ras,
                enable_crt: crt,
                ..base.clone()
            },
        ));
    }
    for alpha in ALPHA_GRID {
        out.push((
            format!("ras alpha={alpha}"),
            BpgoConfig {
                enable_ras: true,
                enable_crt: false,
                alpha,
                ..base.clone()
            },
        ));
    }
    out
}

/// Trains every ablation configuration on every seed and aggregates the final
/// true quality and curve area per configuration.
pub fn ablation_suite(base: &ExperimentConfig, seeds: &[u64]) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let configs = ablation_configs(&base.trainer);
    let jobs: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let summaries: Vec<RunSummary> = jobs
        .par_iter()
        .map(|&(c, seed)| {
            let exp = ExperimentConfig {
                trainer: BpgoConfig {
                    seed,
                    ..configs[c].1.clone()
                },
                ..base.clone()
            };
            run_in_memory(&exp).map(|r| r.summary).map_err(|(e, _)| e)
        })
        .collect::<Result<_>>()?;
    Ok(configs
        .iter()
        .enumerate()
        .map(|(c, (name, cfg))| {
            let mine: Vec<&RunSummary> = jobs
                .iter()
                .zip(&summaries)
                .filter(|((jc, _), _)| *jc == c)
                .map(|(_, s)| s)
                .collect();
            let finals: Vec<f64> = mine.iter().map(|s| s.final_true_quality).collect();
            let aucs: Vec<f64> = mine.iter().map(|s| s.auc).collect();
            AblationRow {
                config: name.clone(),
                enable_ras: cfg.enable_ras,
                enable_crt: cfg.enable_crt,
                alpha: cfg.alpha,
                seeds: mine.len(),
                mean_final_true_quality: finals.iter().sum::<f64>() / finals.len() as f64,
                median_final_true_quality: median(&finals),
                mean_auc: aucs.iter().sum::<f64>() / aucs.len() as f64,
                median_auc: median(&aucs),
            }
        })
        .collect())
}
