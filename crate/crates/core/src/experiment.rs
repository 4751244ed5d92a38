//! Config-driven experiments: strict TOML parsing, per-seed runs in
//! parallel, and CSV artifacts plus a replayable run manifest.
//!
//! Artifact schemas (version [`SCHEMA_VERSION`]):
//!
//! | file                      | columns                                                                 |
//! |---------------------------|-------------------------------------------------------------------------|
//! | `diagnostics_seed_S.csv`  | iteration, best_reward, mean_reward, ess, nonfinite_rollouts, degenerate_components, pi_0.. |
//! | `trace_seed_S.csv`        | snapshot, component, pi, index, mean, variance                          |
//! | `paths_seed_S.csv`        | component, pi, t, x_0..                                                 |
//! | `mpc_seed_S.csv`          | step, route_separation, x_0..                                           |
//! | `components_seed_S.csv`   | component, pi, mean_0.., nearest_mode, distance                         |
//! | `curve_seed_S.csv`        | seed, episode, total_reward, dataset_size, plan_ess_mean                |
//! | `metrics_seed_S.csv`      | metric, value                                                           |
//! | `summary.csv`             | metric, mean, ci95, n                                                   |
//! | `sweep.csv`               | components, kappa, seed, metric, value                                  |
//! | `sweep_grid.csv`          | components, metric, kappa=K for each swept kappa                        |

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{EnsembleConfig, EnsemblePosterior, GroundTruth};
use crate::envs::{Env, Task};
use crate::error::{Error, Result};
use crate::mbrl::{cover_ratio, mpc_episode, run_mbrl_with, seed_dataset, MbrlConfig, MbrlOptions};
use crate::optimality::Estimator;
use crate::planner::{init_gmm, plan, PlanOutcome, PlannerConfig};
use crate::posterior::{GmmParams, VARIANCE_FLOOR};
use crate::sampler::DEFAULT_NONFINITE_REWARD;
use crate::types::{OptimalityConfig, OptimalityKind};

/// Bumped whenever a CSV column changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One planning call from the task's initial state with the true dynamics.
    PlanOnce,
    /// Fit the mixture to the multimodal objective (horizon 1).
    FitObjective,
    Mbrl,
    /// Grid over `components x kappa`, running a base mode in every cell.
    Sweep,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::PlanOnce => "plan_once",
            Mode::FitObjective => "fit_objective",
            Mode::Mbrl => "mbrl",
            Mode::Sweep => "sweep",
        })
    }
}

/// The `dist` entry of a planner triple: `"Gaussian"` or `"GMM(M=5)"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Distribution {
    pub components: usize,
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let compact: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let lower = compact.to_ascii_lowercase();
        if lower == "gaussian" {
            return Ok(Self { components: 1 });
        }
        let m = lower
            .strip_prefix("gmm(")
            .and_then(|r| r.strip_suffix(')'))
            .map(|r| r.strip_prefix("m=").unwrap_or(r))
            .and_then(|r| r.parse::<usize>().ok())
            .filter(|m| *m > 0)
            .ok_or_else(|| Error::invalid_config("dist", format!("expected `Gaussian` or `GMM(M=n)`, got `{s}`")))?;
        Ok(Self { components: m })
    }
}

impl TryFrom<String> for Distribution {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Distribution> for String {
    fn from(d: Distribution) -> String {
        format!("GMM(M={})", d.components)
    }
}

fn default_elite_fraction() -> f64 {
    0.1
}

fn default_lambda() -> f64 {
    0.1
}

/// `[optimizer]`: the `VIMPC(optimality, dist, max_ent)` triple verbatim,
/// plus the transform parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSection {
    pub optimality: OptimalityKind,
    pub dist: Distribution,
    pub max_ent: bool,
    #[serde(default)]
    pub kappa: f64,
    #[serde(default = "default_elite_fraction")]
    pub elite_fraction: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default)]
    pub estimator: Estimator,
}

/// `[planner]`: sampling budget and numerical knobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSection {
    pub samples: usize,
    pub rollouts: usize,
    pub iterations: usize,
    pub horizon: usize,
    pub init_variance: f64,
    pub variance_floor: f64,
    pub nonfinite_reward: f64,
    pub deterministic_execution: bool,
}

impl Default for PlannerSection {
    fn default() -> Self {
        let d = PlannerConfig::default();
        Self {
            samples: d.samples,
            rollouts: d.rollouts,
            iterations: d.iterations,
            horizon: d.horizon,
            init_variance: d.init_variance,
            variance_floor: VARIANCE_FLOOR,
            nonfinite_reward: DEFAULT_NONFINITE_REWARD,
            deterministic_execution: false,
        }
    }
}

fn default_cover_bins() -> usize {
    10
}

/// `[mbrl]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MbrlSection {
    pub episodes: usize,
    pub episode_length: usize,
    /// Size of a held-out random-controller dataset for one-step NLL; 0 disables it.
    #[serde(default)]
    pub validation_steps: usize,
    /// Per-coordinate `[low, high]` over `(s, a)`; enables the cover-ratio metric.
    #[serde(default)]
    pub cover_ranges: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_cover_bins")]
    pub cover_bins: usize,
    /// Write a resumable checkpoint per seed after every episode.
    #[serde(default)]
    pub checkpoint: bool,
}

/// `[sweep]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub base: Mode,
    #[serde(default)]
    pub kappa: Vec<f64>,
    #[serde(default)]
    pub components: Vec<usize>,
}

fn default_active_weight() -> f64 {
    0.1
}

fn default_goal_tolerance() -> f64 {
    0.1
}

fn default_route_separation() -> f64 {
    0.3
}

/// `[analysis]`: thresholds used when summarizing a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Components with mixture weight above this count as active.
    #[serde(default = "default_active_weight")]
    pub active_weight: f64,
    /// In `plan_once`, also run this many closed-loop MPC steps with the
    /// true dynamics; 0 skips it.
    #[serde(default)]
    pub mpc_steps: usize,
    /// Final distance to the point-mass goal counted as reaching it.
    #[serde(default = "default_goal_tolerance")]
    pub goal_tolerance: f64,
    /// Hausdorff distance above which two component paths count as
    /// distinct routes.
    #[serde(default = "default_route_separation")]
    pub route_separation: f64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self {
            active_weight: default_active_weight(),
            mpc_steps: 0,
            goal_tolerance: default_goal_tolerance(),
            route_separation: default_route_separation(),
        }
    }
}

/// A parsed experiment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub mode: Option<Mode>,
    #[serde(default)]
    pub seeds: Option<Vec<u64>>,
    pub optimizer: OptimizerSection,
    #[serde(default)]
    pub planner: PlannerSection,
    pub env: Env,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub mbrl: Option<MbrlSection>,
    #[serde(default)]
    pub sweep: Option<SweepSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl ExperimentConfig {
    pub fn optimality(&self) -> OptimalityConfig {
        let o = &self.optimizer;
        OptimalityConfig {
            kind: o.optimality,
            elite_fraction: o.elite_fraction,
            lambda: o.lambda,
            kappa: o.kappa,
            max_ent: o.max_ent,
        }
    }

    pub fn planner_config(&self) -> PlannerConfig {
        let p = &self.planner;
        PlannerConfig {
            optimality: self.optimality(),
            components: self.optimizer.dist.components,
            samples: p.samples,
            rollouts: p.rollouts,
            iterations: p.iterations,
            horizon: p.horizon,
            init_variance: p.init_variance,
            variance_floor: p.variance_floor,
            estimator: self.optimizer.estimator,
            nonfinite_reward: p.nonfinite_reward,
            deterministic_execution: p.deterministic_execution,
        }
    }

    pub fn mbrl_config(&self, seed: u64) -> Result<MbrlConfig> {
        let m = self
            .mbrl
            .as_ref()
            .ok_or_else(|| Error::invalid_config("mbrl", "section required for mbrl runs"))?;
        Ok(MbrlConfig {
            episodes: m.episodes,
            episode_length: m.episode_length,
            planner: self.planner_config(),
            ensemble: self.ensemble.clone(),
            seed,
        })
    }

    /// Check everything `mode` will use.
    pub fn validate(&self, mode: Mode) -> Result<()> {
        self.env.validate()?;
        let spec = self.env.spec();
        self.planner_config().validate(&spec)?;
        if !(self.analysis.active_weight >= 0.0 && self.analysis.active_weight < 1.0) {
            return Err(Error::invalid_config("active_weight", "must lie in [0, 1)"));
        }
        if !(self.analysis.goal_tolerance > 0.0) {
            return Err(Error::invalid_config("goal_tolerance", "must be > 0"));
        }
        if !(self.analysis.route_separation >= 0.0) {
            return Err(Error::invalid_config("route_separation", "must be >= 0"));
        }
        match mode {
            Mode::PlanOnce => Ok(()),
            Mode::FitObjective => {
                if !matches!(self.env, Env::Multimodal(_)) {
                    return Err(Error::invalid_config("task", "fit_objective needs the multimodal task"));
                }
                if self.planner.horizon != 1 {
                    return Err(Error::invalid_config("horizon", "fit_objective needs horizon = 1"));
                }
                Ok(())
            }
            Mode::Mbrl => {
                self.ensemble.validate()?;
                let m = self
                    .mbrl
                    .as_ref()
                    .ok_or_else(|| Error::invalid_config("mbrl", "section required for mbrl runs"))?;
                if m.episode_length == 0 {
                    return Err(Error::invalid_config("episode_length", "must be >= 1"));
                }
                if let Some(r) = &m.cover_ranges {
                    if r.len() != spec.state_dim + spec.action_dim {
                        return Err(Error::invalid_config(
                            "cover_ranges",
                            format!("expected {} ranges", spec.state_dim + spec.action_dim),
                        ));
                    }
                    if m.cover_bins == 0 {
                        return Err(Error::invalid_config("cover_bins", "must be >= 1"));
                    }
                }
                Ok(())
            }
            Mode::Sweep => {
                let s = self
                    .sweep
                    .as_ref()
                    .ok_or_else(|| Error::invalid_config("sweep", "section required for sweeps"))?;
                if s.base == Mode::Sweep {
                    return Err(Error::invalid_config("base", "a sweep cannot nest another sweep"));
                }
                for cell in self.sweep_cells()? {
                    cell.1.validate(s.base)?;
                }
                Ok(())
            }
        }
    }

    /// Every `(components, kappa)` cell of the sweep grid with its config.
    /// A positive `kappa` switches the entropy bonus on.
    pub fn sweep_cells(&self) -> Result<Vec<((usize, f64), ExperimentConfig)>> {
        let s = self
            .sweep
            .as_ref()
            .ok_or_else(|| Error::invalid_config("sweep", "section required for sweeps"))?;
        let ms = if s.components.is_empty() {
            vec![self.optimizer.dist.components]
        } else {
            s.components.clone()
        };
        let ks = if s.kappa.is_empty() { vec![self.optimizer.kappa] } else { s.kappa.clone() };
        let mut cells = Vec::new();
        for &m in &ms {
            for &k in &ks {
                let mut cfg = self.clone();
                cfg.sweep = None;
                cfg.mode = Some(s.base);
                cfg.optimizer.dist = Distribution { components: m };
                cfg.optimizer.kappa = k;
                cfg.optimizer.max_ent = self.optimizer.max_ent || k > 0.0;
                cells.push(((m, k), cfg));
            }
        }
        Ok(cells)
    }
}

/// Byte offset to 1-based line number.
fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parse (without mode-specific validation) an experiment config from TOML.
pub fn parse_config_str(text: &str) -> Result<ExperimentConfig> {
    toml::from_str(text).map_err(|e| Error::Parse {
        line: e.span().map(|s| line_of(text, s.start)),
        message: e.message().to_string(),
    })
}

pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    parse_config_str(&fs::read_to_string(path)?)
}

/// Parse `"0,1,5"` or `"0-19"` (or a mix) into a seed list.
pub fn parse_seed_list(s: &str) -> Result<Vec<u64>> {
    let bad = |part: &str| Error::Parse {
        line: None,
        message: format!("bad seed `{part}`"),
    };
    let mut seeds = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once('-') {
            let a: u64 = a.trim().parse().map_err(|_| bad(part))?;
            let b: u64 = b.trim().parse().map_err(|_| bad(part))?;
            if b < a {
                return Err(bad(part));
            }
            seeds.extend(a..=b);
        } else {
            seeds.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    if seeds.is_empty() {
        return Err(bad(s));
    }
    Ok(seeds)
}

/// A fully resolved run: what to do, with which config, where, and for
/// which seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub mode: Mode,
    pub config: ExperimentConfig,
    pub config_path: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    /// Mode and seeds fall back to the config file when not given.
    pub fn new(
        config: ExperimentConfig,
        mode: Option<Mode>,
        seeds: Option<Vec<u64>>,
        out_dir: impl Into<PathBuf>,
    ) -> Result<Self> {
        let mode = mode
            .or(config.mode)
            .ok_or_else(|| Error::invalid_config("mode", "not given on the command line or in the config"))?;
        let seeds = seeds.or_else(|| config.seeds.clone()).unwrap_or_else(|| vec![0]);
        if seeds.is_empty() {
            return Err(Error::invalid_config("seeds", "must not be empty"));
        }
        config.validate(mode)?;
        Ok(Self {
            mode,
            config,
            config_path: None,
            out_dir: out_dir.into(),
            seeds,
        })
    }

    pub fn from_file(path: &Path, mode: Option<Mode>, seeds: Option<Vec<u64>>, out_dir: impl Into<PathBuf>) -> Result<Self> {
        let mut spec = Self::new(parse_config(path)?, mode, seeds, out_dir)?;
        spec.config_path = Some(path.to_path_buf());
        Ok(spec)
    }

    /// Rebuild the spec recorded in a `run_manifest.json`.
    pub fn from_manifest(path: &Path, out_dir: impl Into<PathBuf>) -> Result<Self> {
        let m: RunManifest = serde_json::from_str(&fs::read_to_string(path)?)?;
        if m.schema_version != SCHEMA_VERSION {
            return Err(Error::Checkpoint(format!("manifest schema v{}", m.schema_version)));
        }
        Self::new(m.config, Some(m.mode), Some(m.seeds), out_dir)
    }
}

/// Everything needed to replay a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub library: String,
    pub version: String,
    pub schema_version: u32,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub config: ExperimentConfig,
    /// The planner exactly as the run used it, for reference.
    pub resolved_planner: PlannerConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedFailure {
    pub seed: u64,
    pub message: String,
}

/// Metrics of one successful seed; `cell` is the `(components, kappa)`
/// grid cell in a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedMetrics {
    pub seed: u64,
    pub cell: Option<(usize, f64)>,
    pub metrics: Vec<(String, f64)>,
}

impl SeedMetrics {
    pub fn value(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunReport {
    /// `(metric, mean, ci95, n)` rows of `summary.csv`.
    pub summary: Vec<(String, f64, f64, usize)>,
    pub runs: Vec<SeedMetrics>,
    pub failures: Vec<SeedFailure>,
}

impl RunReport {
    pub fn succeeded(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn metric(&self, name: &str) -> Option<f64> {
        self.summary.iter().find(|r| r.0 == name).map(|r| r.1)
    }

    /// Per-seed values of one metric, in seed order, restricted to a sweep
    /// cell when `cell` is given.
    pub fn seed_values(&self, name: &str, cell: Option<(usize, f64)>) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| cell.is_none() || r.cell == cell)
            .filter_map(|r| r.value(name))
            .collect()
    }
}

type Metrics = Vec<(String, f64)>;

/// Run every seed and write artifacts under `spec.out_dir`. Seeds that fail
/// are reported; artifacts of the others are kept.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<RunReport> {
    fs::create_dir_all(&spec.out_dir)?;
    let manifest = RunManifest {
        library: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        schema_version: SCHEMA_VERSION,
        mode: spec.mode,
        seeds: spec.seeds.clone(),
        config: spec.config.clone(),
        resolved_planner: spec.config.planner_config(),
    };
    fs::write(spec.out_dir.join("run_manifest.json"), serde_json::to_string_pretty(&manifest)?)?;

    if spec.mode == Mode::Sweep {
        return run_sweep(spec);
    }
    let results: Vec<(u64, Result<Metrics>)> = spec
        .seeds
        .par_iter()
        .map(|&seed| (seed, run_seed(spec.mode, &spec.config, seed, &spec.out_dir)))
        .collect();
    finish(&spec.out_dir, results)
}

fn finish(out: &Path, results: Vec<(u64, Result<Metrics>)>) -> Result<RunReport> {
    let mut report = RunReport::default();
    let mut ok = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(m) => {
                report.runs.push(SeedMetrics {
                    seed,
                    cell: None,
                    metrics: m.clone(),
                });
                ok.push(m);
            }
            Err(e) => report.failures.push(SeedFailure {
                seed,
                message: e.to_string(),
            }),
        }
    }
    report.summary = summarize(&ok);
    let mut w = csv::Writer::from_path(out.join("summary.csv"))?;
    w.write_record(["metric", "mean", "ci95", "n"])?;
    for (name, mean, ci, n) in &report.summary {
        w.write_record([name.clone(), fmt_f(*mean), fmt_f(*ci), n.to_string()])?;
    }
    w.flush()?;
    Ok(report)
}

/// Mean and 95% normal-approximation half-width `1.96 sd / sqrt(n)` of
/// every metric, in first-seen order.
fn summarize(runs: &[Metrics]) -> Vec<(String, f64, f64, usize)> {
    let mut names: Vec<String> = Vec::new();
    for m in runs {
        for (name, _) in m {
            if !names.contains(name) {
                names.push(name.clone());
            }
        }
    }
    names
        .into_iter()
        .map(|name| {
            let xs: Vec<f64> = runs
                .iter()
                .filter_map(|m| m.iter().find(|(n, _)| *n == name).map(|(_, v)| *v))
                .collect();
            let (mean, ci) = mean_ci(&xs);
            (name, mean, ci, xs.len())
        })
        .collect()
}

pub fn mean_ci(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, 1.96 * var.sqrt() / n.sqrt())
}

fn fmt_f(x: f64) -> String {
    format!("{x}")
}

fn run_sweep(spec: &ExperimentSpec) -> Result<RunReport> {
    let base = spec.config.sweep.as_ref().expect("validated").base;
    let cells = spec.config.sweep_cells()?;
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| spec.seeds.iter().map(move |&s| (c, s)))
        .collect();
    let dirs: Vec<PathBuf> = cells
        .iter()
        .map(|((m, k), _)| spec.out_dir.join(format!("m{m}_kappa{k}")))
        .collect();
    for d in &dirs {
        fs::create_dir_all(d)?;
    }
    let results: Vec<(usize, u64, Result<Metrics>)> = jobs
        .par_iter()
        .map(|&(c, seed)| (c, seed, run_seed(base, &cells[c].1, seed, &dirs[c])))
        .collect();

    let mut long = csv::Writer::from_path(spec.out_dir.join("sweep.csv"))?;
    long.write_record(["components", "kappa", "seed", "metric", "value"])?;
    let mut per_cell: Vec<Vec<Metrics>> = vec![Vec::new(); cells.len()];
    let mut report = RunReport::default();
    let mut all_ok = Vec::new();
    for (c, seed, r) in results {
        let (m, k) = cells[c].0;
        match r {
            Ok(metrics) => {
                for (name, v) in &metrics {
                    long.write_record([m.to_string(), fmt_f(k), seed.to_string(), name.clone(), fmt_f(*v)])?;
                }
                per_cell[c].push(metrics.clone());
                report.runs.push(SeedMetrics {
                    seed,
                    cell: Some((m, k)),
                    metrics: metrics.clone(),
                });
                all_ok.push(metrics);
            }
            Err(e) => report.failures.push(SeedFailure {
                seed,
                message: format!("cell M={m} kappa={k}: {e}"),
            }),
        }
    }
    long.flush()?;

    // one row per (components, metric), one column per kappa
    let mut ms: Vec<usize> = Vec::new();
    let mut ks: Vec<f64> = Vec::new();
    for ((m, k), _) in &cells {
        if !ms.contains(m) {
            ms.push(*m);
        }
        if !ks.contains(k) {
            ks.push(*k);
        }
    }
    let summaries: Vec<_> = per_cell.iter().map(|runs| summarize(runs)).collect();
    let metric_names: Vec<String> = summarize(&all_ok).into_iter().map(|r| r.0).collect();
    let mut grid = csv::Writer::from_path(spec.out_dir.join("sweep_grid.csv"))?;
    let mut header = vec!["components".to_string(), "metric".to_string()];
    header.extend(ks.iter().map(|k| format!("kappa={k}")));
    grid.write_record(&header)?;
    for m in &ms {
        for name in &metric_names {
            let mut row = vec![m.to_string(), name.clone()];
            for k in &ks {
                let c = cells.iter().position(|((cm, ck), _)| cm == m && ck == k).expect("full grid");
                let v = summaries[c].iter().find(|r| &r.0 == name).map(|r| fmt_f(r.1));
                row.push(v.unwrap_or_default());
            }
            grid.write_record(&row)?;
        }
    }
    grid.flush()?;

    report.summary = summarize(&all_ok);
    Ok(report)
}

fn run_seed(mode: Mode, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Metrics> {
    let metrics = match mode {
        Mode::PlanOnce | Mode::FitObjective => run_plan(mode, cfg, seed, out)?,
        Mode::Mbrl => run_mbrl_seed(cfg, seed, out)?,
        Mode::Sweep => return Err(Error::invalid_config("mode", "nested sweep")),
    };
    let mut w = csv::Writer::from_path(out.join(format!("metrics_seed_{seed}.csv")))?;
    w.write_record(["metric", "value"])?;
    for (name, v) in &metrics {
        w.write_record([name.as_str(), &fmt_f(*v)])?;
    }
    w.flush()?;
    Ok(metrics)
}

/// Plan once from the initial state with the task's true dynamics.
pub fn plan_with_true_dynamics(env: &Env, cfg: &PlannerConfig, seed: u64) -> Result<PlanOutcome> {
    let spec = env.spec();
    let posterior = EnsemblePosterior::single(GroundTruth(env.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let init = init_gmm(cfg.components, cfg.horizon, spec.action_dim, cfg.init_variance, &mut rng)?;
    let reward = |s: &[f64], a: &[f64], n: &[f64]| env.reward(s, a, n);
    plan(&env.initial_state(), &init, &posterior, cfg, &spec.bounds, &reward, &mut rng)
}

/// Roll each component's clipped mean open-loop through the task from
/// `start`. Paths include `start`.
pub fn component_paths<T: Task + ?Sized>(task: &T, start: &[f64], phi: &GmmParams) -> Vec<Vec<Vec<f64>>> {
    let bounds = task.spec().bounds;
    (0..phi.components())
        .map(|m| {
            let mut mean = phi.mean(m).to_vec();
            bounds.clamp_in_place(&mut mean);
            let mut s = start.to_vec();
            let mut path = vec![s.clone()];
            for a in mean.chunks(phi.action_dim()) {
                s = task.step(&s, a);
                path.push(s.clone());
            }
            path
        })
        .collect()
}

/// Open-loop return of executing a component mean from the initial state.
pub fn open_loop_return<T: Task + ?Sized>(task: &T, phi: &GmmParams, component: usize) -> f64 {
    let bounds = task.spec().bounds;
    let mut mean = phi.mean(component).to_vec();
    bounds.clamp_in_place(&mut mean);
    let mut s = task.initial_state();
    let mut total = 0.0;
    for a in mean.chunks(phi.action_dim()) {
        let next = task.step(&s, a);
        total += task.reward(&s, a, &next);
        s = next;
    }
    total
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Symmetric Hausdorff distance between two point sets (paths as visited
/// states).
pub fn hausdorff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let directed = |p: &[Vec<f64>], q: &[Vec<f64>]| {
        p.iter()
            .map(|x| q.iter().map(|y| euclid(x, y)).fold(f64::INFINITY, f64::min))
            .fold(0.0, f64::max)
    };
    directed(a, b).max(directed(b, a))
}

/// Largest pairwise Hausdorff distance among paths of components whose
/// weight exceeds `min_weight`; 0 with fewer than two such components.
pub fn max_route_separation(paths: &[Vec<Vec<f64>>], weights: &[f64], min_weight: f64) -> f64 {
    let active: Vec<usize> = (0..paths.len()).filter(|&m| weights[m] > min_weight).collect();
    let mut best = 0.0f64;
    for (i, &a) in active.iter().enumerate() {
        for &b in &active[i + 1..] {
            best = best.max(hausdorff(&paths[a], &paths[b]));
        }
    }
    best
}

fn run_plan(mode: Mode, cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Metrics> {
    let pc = cfg.planner_config();
    let outcome = plan_with_true_dynamics(&cfg.env, &pc, seed)?;
    let phi = &outcome.params;
    write_diagnostics(&outcome, &out.join(format!("diagnostics_seed_{seed}.csv")))?;
    write_trace(&outcome.snapshots, &out.join(format!("trace_seed_{seed}.csv")))?;

    let last = outcome.diagnostics.last().expect("at least one iteration");
    let active_weight = cfg.analysis.active_weight;
    let mut metrics: Metrics = vec![
        ("final_best_reward".into(), last.best_reward),
        ("final_mean_reward".into(), last.mean_reward),
        ("mean_ess".into(), outcome.mean_ess()),
        (
            "active_components".into(),
            phi.mixture().iter().filter(|p| **p > active_weight).count() as f64,
        ),
        (
            "dominant_return".into(),
            open_loop_return(&cfg.env, phi, phi.dominant_component()),
        ),
    ];

    if mode == Mode::FitObjective {
        let Env::Multimodal(obj) = &cfg.env else {
            unreachable!("validated")
        };
        let centers = obj.centers();
        let mut w = csv::Writer::from_path(out.join(format!("components_seed_{seed}.csv")))?;
        let mut header = vec!["component".to_string(), "pi".to_string()];
        header.extend((0..phi.dim()).map(|j| format!("mean_{j}")));
        header.extend(["nearest_mode".to_string(), "distance".to_string()]);
        w.write_record(&header)?;
        for m in 0..phi.components() {
            let (nearest, dist) = centers
                .iter()
                .enumerate()
                .map(|(i, c)| (i, euclid(phi.mean(m), c)))
                .fold((0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
            let mut row = vec![m.to_string(), fmt_f(phi.mixture()[m])];
            row.extend(phi.mean(m).iter().map(|x| fmt_f(*x)));
            row.extend([nearest.to_string(), fmt_f(dist)]);
            w.write_record(&row)?;
        }
        w.flush()?;
        // worst-covered mode: distance to its closest component mean
        let max_mode_error = centers
            .iter()
            .map(|c| {
                (0..phi.components())
                    .map(|m| euclid(phi.mean(m), c))
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(0.0, f64::max);
        metrics.push(("max_mode_error".into(), max_mode_error));
    } else {
        let paths = component_paths(&cfg.env, &cfg.env.initial_state(), phi);
        write_paths(&paths, phi.mixture(), &out.join(format!("paths_seed_{seed}.csv")))?;
        metrics.push((
            "max_route_separation".into(),
            max_route_separation(&paths, phi.mixture(), active_weight),
        ));
        if let Env::PointMass(task) = &cfg.env {
            let goal_distance = (0..phi.components())
                .filter(|&m| phi.mixture()[m] > active_weight || m == phi.dominant_component())
                .map(|m| euclid(paths[m].last().expect("non-empty path"), &task.goal))
                .fold(f64::INFINITY, f64::min);
            metrics.push(("goal_distance".into(), goal_distance));
        }
        if cfg.analysis.mpc_steps > 0 {
            metrics.extend(run_closed_loop(cfg, &pc, seed, out)?);
        }
    }
    Ok(metrics)
}

/// Closed-loop MPC with the true dynamics. Records the visited states and,
/// per step, how far apart the routes of the active components are when
/// rolled out from the current state.
fn run_closed_loop(cfg: &ExperimentConfig, pc: &PlannerConfig, seed: u64, out: &Path) -> Result<Metrics> {
    let a = &cfg.analysis;
    let posterior = EnsemblePosterior::single(GroundTruth(cfg.env.clone()));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log = mpc_episode(&cfg.env, &posterior, pc, a.mpc_steps, true, &mut rng)?;
    let separations: Vec<f64> = log
        .plans
        .iter()
        .zip(&log.states)
        .map(|(phi, s)| max_route_separation(&component_paths(&cfg.env, s, phi), phi.mixture(), a.active_weight))
        .collect();

    let mut w = csv::Writer::from_path(out.join(format!("mpc_seed_{seed}.csv")))?;
    let mut header = vec!["step".to_string(), "route_separation".to_string()];
    header.extend((0..log.states[0].len()).map(|j| format!("x_{j}")));
    w.write_record(&header)?;
    for (t, s) in log.states.iter().enumerate() {
        let mut row = vec![t.to_string(), separations.get(t).map_or(String::new(), |x| fmt_f(*x))];
        row.extend(s.iter().map(|x| fmt_f(*x)));
        w.write_record(&row)?;
    }
    w.flush()?;

    let best_separation = separations.iter().copied().fold(0.0, f64::max);
    let mut metrics: Metrics = vec![
        ("mpc_return".into(), log.total_reward),
        ("mpc_failed_plans".into(), log.failed_plans as f64),
        ("mpc_route_separation".into(), best_separation),
        (
            "mpc_distinct_routes".into(),
            f64::from(u8::from(best_separation > a.route_separation)),
        ),
    ];
    if let Env::PointMass(task) = &cfg.env {
        let d = euclid(log.states.last().expect("initial state"), &task.goal);
        metrics.push(("mpc_goal_distance".into(), d));
        metrics.push(("mpc_reached_goal".into(), f64::from(u8::from(d <= a.goal_tolerance))));
    }
    Ok(metrics)
}

fn write_diagnostics(outcome: &PlanOutcome, path: &Path) -> Result<()> {
    let m = outcome.params.components();
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = [
        "iteration",
        "best_reward",
        "mean_reward",
        "ess",
        "nonfinite_rollouts",
        "degenerate_components",
    ]
    .map(String::from)
    .to_vec();
    header.extend((0..m).map(|i| format!("pi_{i}")));
    w.write_record(&header)?;
    for d in &outcome.diagnostics {
        let mut row = vec![
            d.iteration.to_string(),
            fmt_f(d.best_reward),
            fmt_f(d.mean_reward),
            fmt_f(d.ess),
            d.nonfinite_rollouts.to_string(),
            d.degenerate_components.len().to_string(),
        ];
        row.extend(d.mixture.iter().map(|p| fmt_f(*p)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-format mixture snapshots: one row per (snapshot, component, coordinate).
pub fn write_trace(snapshots: &[GmmParams], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["snapshot", "component", "pi", "index", "mean", "variance"])?;
    for (j, phi) in snapshots.iter().enumerate() {
        for m in 0..phi.components() {
            for (i, (mu, var)) in phi.mean(m).iter().zip(phi.variance(m)).enumerate() {
                w.write_record([
                    j.to_string(),
                    m.to_string(),
                    fmt_f(phi.mixture()[m]),
                    i.to_string(),
                    fmt_f(*mu),
                    fmt_f(*var),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn write_paths(paths: &[Vec<Vec<f64>>], weights: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let dim = paths.first().and_then(|p| p.first()).map_or(0, Vec::len);
    let mut header = vec!["component".to_string(), "pi".to_string(), "t".to_string()];
    header.extend((0..dim).map(|j| format!("x_{j}")));
    w.write_record(&header)?;
    for (m, p) in paths.iter().enumerate() {
        for (t, s) in p.iter().enumerate() {
            let mut row = vec![m.to_string(), fmt_f(weights[m]), t.to_string()];
            row.extend(s.iter().map(|x| fmt_f(*x)));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Stream for the held-out validation set, disjoint from the run's streams.
fn validation_stream(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

fn run_mbrl_seed(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<Metrics> {
    let section = cfg.mbrl.as_ref().expect("validated");
    let mc = cfg.mbrl_config(seed)?;
    let validation = if section.validation_steps > 0 {
        Some(seed_dataset(&cfg.env, section.validation_steps, &mut validation_stream(seed))?)
    } else {
        None
    };
    let opts = MbrlOptions {
        validation,
        checkpoint_dir: section
            .checkpoint
            .then(|| out.join("checkpoints").join(format!("seed_{seed}"))),
    };
    let outcome = run_mbrl_with(&cfg.env, &mc, &opts)?;

    let mut w = csv::Writer::from_path(out.join(format!("curve_seed_{seed}.csv")))?;
    w.write_record(["seed", "episode", "total_reward", "dataset_size", "plan_ess_mean"])?;
    for r in &outcome.curve {
        w.write_record([
            seed.to_string(),
            r.episode.to_string(),
            fmt_f(r.total_reward),
            r.dataset_size.to_string(),
            fmt_f(r.plan_ess_mean),
        ])?;
    }
    w.flush()?;

    let rewards: Vec<f64> = outcome.curve.iter().map(|r| r.total_reward).collect();
    let window = rewards.len().min(3).max(1);
    let avg = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len().max(1) as f64;
    let first = avg(&rewards[..window.min(rewards.len())]);
    let last = avg(&rewards[rewards.len().saturating_sub(window)..]);
    let mut metrics: Metrics = vec![
        ("first3_reward".into(), first),
        ("last3_reward".into(), last),
        ("improvement".into(), last - first),
        ("final_reward".into(), rewards.last().copied().unwrap_or(f64::NAN)),
        ("dataset_size".into(), outcome.dataset.len() as f64),
        (
            "failed_plans".into(),
            outcome.curve.iter().map(|r| r.failed_plans).sum::<usize>() as f64,
        ),
    ];
    if let Some(first_nll) = outcome.curve.first().and_then(|r| r.validation_nll) {
        metrics.push(("first_validation_nll".into(), first_nll));
    }
    if let Some(nll) = outcome.final_validation_nll {
        metrics.push(("final_validation_nll".into(), nll));
    }
    if let Some(ranges) = &section.cover_ranges {
        let ranges: Vec<(f64, f64)> = ranges.iter().map(|r| (r[0], r[1])).collect();
        metrics.push(("cover_ratio".into(), cover_ratio(&outcome.dataset, &ranges, section.cover_bins)?));
    }
    Ok(metrics)
}
