//! Experiment runner, metrics, savings comparison and grid sweeps.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controllers::{
    cem_train, CemConfig, CemOutcome, Controller, CurvePoint, LinearPolicy, NearestEntry, RandomController,
    RbcController, StaticController,
};
use crate::env::{Env, EnvConfig, EnvError, EnvTemplate, SpaceSpec};
use crate::monitor::LogRow;
use crate::presets::preset_config;
use crate::rng::mix_seed;
use crate::wrappers::IncrementalAction;

pub const MONTHS: usize = 12;
pub const PROGRESS_HEADER: [&str; 5] =
    ["episode", "mean_reward", "mean_power_W", "comfort_time_violation_pct", "mean_temp_violation_C"];
pub const METRIC_COLUMNS: [&str; 4] =
    ["mean_reward", "mean_temp_violation_C", "comfort_time_violation_pct", "mean_power_W"];

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("episode log is empty")]
    EmptyLog,
    #[error("reference power is zero ({0})")]
    DivisionByZeroRef(String),
    #[error("output directory {0} already exists (use overwrite)")]
    OutputDirExists(PathBuf),
    #[error("invalid experiment: {0}")]
    Config(String),
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("CSV error in {path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
}

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io { path: path.to_path_buf(), source }
}

fn csv_at(path: &Path) -> impl FnOnce(csv::Error) -> BenchError + '_ {
    move |source| BenchError::Csv { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mean_reward: f64,
    pub mean_power: f64,
    pub comfort_time_violation_pct: f64,
    pub mean_temp_violation: f64,
    /// Mean power per calendar month; 0 for months without steps.
    pub monthly_mean_power: Vec<f64>,
    pub monthly_comfort_violation: Vec<f64>,
}

pub fn compute_metrics(log: &[LogRow]) -> Result<Metrics, BenchError> {
    if log.is_empty() {
        return Err(BenchError::EmptyLog);
    }
    let n = log.len() as f64;
    let mut power = [0.0; MONTHS];
    let mut violation = [0.0; MONTHS];
    let mut count = [0usize; MONTHS];
    for row in log {
        let m = (row.month.clamp(1, 12) - 1) as usize;
        power[m] += row.power;
        violation[m] += row.violation;
        count[m] += 1;
    }
    let monthly = |sums: [f64; MONTHS]| -> Vec<f64> {
        sums.iter().zip(&count).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect()
    };
    Ok(Metrics {
        mean_reward: log.iter().map(|r| r.reward).sum::<f64>() / n,
        mean_power: log.iter().map(|r| r.power).sum::<f64>() / n,
        comfort_time_violation_pct: 100.0 * log.iter().filter(|r| r.violation > 0.0).count() as f64 / n,
        mean_temp_violation: log.iter().map(|r| r.violation).sum::<f64>() / n,
        monthly_mean_power: monthly(power),
        monthly_comfort_violation: monthly(violation),
    })
}

/// Field-wise mean.
pub fn aggregate(episodes: &[Metrics]) -> Result<Metrics, BenchError> {
    if episodes.is_empty() {
        return Err(BenchError::EmptyLog);
    }
    let n = episodes.len() as f64;
    let mean = |f: &dyn Fn(&Metrics) -> f64| episodes.iter().map(f).sum::<f64>() / n;
    let monthly = |f: &dyn Fn(&Metrics) -> &Vec<f64>| -> Vec<f64> {
        (0..MONTHS).map(|m| episodes.iter().map(|e| f(e)[m]).sum::<f64>() / n).collect()
    };
    Ok(Metrics {
        mean_reward: mean(&|m| m.mean_reward),
        mean_power: mean(&|m| m.mean_power),
        comfort_time_violation_pct: mean(&|m| m.comfort_time_violation_pct),
        mean_temp_violation: mean(&|m| m.mean_temp_violation),
        monthly_mean_power: monthly(&|m| &m.monthly_mean_power),
        monthly_comfort_violation: monthly(&|m| &m.monthly_comfort_violation),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Savings {
    /// `100 (ref - cand) / ref` on mean power.
    pub total_savings_pct: f64,
    pub monthly_savings_pct: Vec<f64>,
    /// Candidate minus reference.
    pub comfort_time_delta_pct: f64,
    pub temp_violation_delta: f64,
}

pub fn compare(reference: &Metrics, candidates: &[Metrics]) -> Result<Vec<Savings>, BenchError> {
    if reference.mean_power == 0.0 {
        return Err(BenchError::DivisionByZeroRef("overall mean".into()));
    }
    if let Some(m) = reference.monthly_mean_power.iter().position(|&p| p == 0.0) {
        return Err(BenchError::DivisionByZeroRef(format!("month {}", m + 1)));
    }
    let pct = |r: f64, c: f64| 100.0 * (r - c) / r;
    Ok(candidates
        .iter()
        .map(|c| Savings {
            total_savings_pct: pct(reference.mean_power, c.mean_power),
            monthly_savings_pct: reference
                .monthly_mean_power
                .iter()
                .zip(&c.monthly_mean_power)
                .map(|(&r, &x)| pct(r, x))
                .collect(),
            comfort_time_delta_pct: c.comfort_time_violation_pct - reference.comfort_time_violation_pct,
            temp_violation_delta: c.mean_temp_violation - reference.mean_temp_violation,
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvSource {
    Preset(String),
    Config(Box<EnvConfig>),
}

impl EnvSource {
    pub fn resolve(&self) -> Result<EnvConfig, EnvError> {
        match self {
            EnvSource::Preset(name) => preset_config(name),
            EnvSource::Config(c) => Ok((**c).clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControllerSpec {
    Static { heating: f64, cooling: f64 },
    Rbc { low: f64, high: f64 },
    Random,
    Cem { #[serde(default)] config: CemConfig },
    Policy { path: PathBuf },
}

impl ControllerSpec {
    /// Parses `static`, `rbc`, `random`, `cem` or `policy:<file>` with
    /// default parameters.
    pub fn parse(text: &str) -> Result<Self, String> {
        match text {
            "static" => Ok(ControllerSpec::Static { heating: 20.0, cooling: 23.0 }),
            "rbc" => Ok(ControllerSpec::Rbc { low: 18.0, high: 27.0 }),
            "random" => Ok(ControllerSpec::Random),
            "cem" => Ok(ControllerSpec::Cem { config: CemConfig::default() }),
            other => match other.strip_prefix("policy:") {
                Some(path) if !path.is_empty() => Ok(ControllerSpec::Policy { path: PathBuf::from(path) }),
                _ => Err(format!("unknown controller '{other}' (expected static, rbc, random, cem or policy:<file>)")),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSource,
    pub controller: ControllerSpec,
    pub episodes: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub overwrite: bool,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub episodes: Vec<Metrics>,
    pub aggregate: Metrics,
    pub monitor_paths: Vec<PathBuf>,
    pub training: Option<CemOutcome>,
}

fn prepare_out_dir(dir: &Path, overwrite: bool) -> Result<(), BenchError> {
    if dir.exists() {
        if !overwrite {
            return Err(BenchError::OutputDirExists(dir.to_path_buf()));
        }
        fs::remove_dir_all(dir).map_err(io_at(dir))?;
    }
    fs::create_dir_all(dir).map_err(io_at(dir))
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_progress(path: &Path, episodes: &[Metrics]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_at(path))?;
    w.write_record(PROGRESS_HEADER).map_err(csv_at(path))?;
    for (k, m) in episodes.iter().enumerate() {
        w.write_record([
            (k + 1).to_string(),
            num(m.mean_reward),
            num(m.mean_power),
            num(m.comfort_time_violation_pct),
            num(m.mean_temp_violation),
        ])
        .map_err(csv_at(path))?;
    }
    w.flush().map_err(io_at(path))
}

pub fn write_monthly(path: &Path, metrics: &Metrics) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_at(path))?;
    w.write_record(["month", "mean_power_W", "mean_temp_violation_C"]).map_err(csv_at(path))?;
    for m in 0..MONTHS {
        w.write_record([
            (m + 1).to_string(),
            num(metrics.monthly_mean_power[m]),
            num(metrics.monthly_comfort_violation[m]),
        ])
        .map_err(csv_at(path))?;
    }
    w.flush().map_err(io_at(path))
}

pub fn write_training_curve(path: &Path, curve: &[CurvePoint]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_at(path))?;
    w.write_record(["iteration", "mean_reward", "max_reward", "elite_mean_reward", "eval_reward"])
        .map_err(csv_at(path))?;
    for p in curve {
        w.write_record([
            p.iteration.to_string(),
            num(p.mean_reward),
            num(p.max_reward),
            num(p.elite_mean_reward),
            p.eval_reward.map(num).unwrap_or_default(),
        ])
        .map_err(csv_at(path))?;
    }
    w.flush().map_err(io_at(path))
}

/// One row per candidate: total and monthly savings, then comfort deltas.
pub fn write_savings(path: &Path, names: &[String], savings: &[Savings]) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_at(path))?;
    let mut header = vec!["candidate".to_string(), "total_savings_pct".to_string()];
    header.extend((1..=MONTHS).map(|m| format!("savings_pct_m{m:02}")));
    header.extend(["comfort_time_delta_pct".to_string(), "temp_violation_delta_C".to_string()]);
    w.write_record(&header).map_err(csv_at(path))?;
    for (name, s) in names.iter().zip(savings) {
        let mut record = vec![name.clone(), num(s.total_savings_pct)];
        record.extend(s.monthly_savings_pct.iter().map(|&v| num(v)));
        record.extend([num(s.comfort_time_delta_pct), num(s.temp_violation_delta)]);
        w.write_record(&record).map_err(csv_at(path))?;
    }
    w.flush().map_err(io_at(path))
}

/// Reads an experiment's aggregate back from `progress.csv` and the
/// `monthly.csv` beside it.
pub fn read_metrics(progress: &Path) -> Result<Metrics, BenchError> {
    let mut reader = csv::Reader::from_path(progress).map_err(csv_at(progress))?;
    let headers = reader.headers().map_err(csv_at(progress))?.clone();
    if headers.iter().ne(PROGRESS_HEADER) {
        return Err(BenchError::Config(format!("{} is not a progress file", progress.display())));
    }
    let parse = |s: &str| {
        s.parse::<f64>()
            .map_err(|_| BenchError::Config(format!("{}: non-numeric field '{s}'", progress.display())))
    };
    let mut episodes = Vec::new();
    for record in reader.records() {
        let r = record.map_err(csv_at(progress))?;
        episodes.push(Metrics {
            mean_reward: parse(&r[1])?,
            mean_power: parse(&r[2])?,
            comfort_time_violation_pct: parse(&r[3])?,
            mean_temp_violation: parse(&r[4])?,
            monthly_mean_power: vec![0.0; MONTHS],
            monthly_comfort_violation: vec![0.0; MONTHS],
        });
    }
    let mut metrics = aggregate(&episodes)?;
    let monthly = progress.with_file_name("monthly.csv");
    let mut reader = csv::Reader::from_path(&monthly).map_err(csv_at(&monthly))?;
    for record in reader.records() {
        let r = record.map_err(csv_at(&monthly))?;
        let month: usize = r[0]
            .parse()
            .ok()
            .filter(|m| (1..=MONTHS).contains(m))
            .ok_or_else(|| BenchError::Config(format!("{}: bad month '{}'", monthly.display(), &r[0])))?;
        metrics.monthly_mean_power[month - 1] = parse(&r[1])?;
        metrics.monthly_comfort_violation[month - 1] = parse(&r[2])?;
    }
    Ok(metrics)
}

type DynEnv = Box<dyn Env + Send>;
type DynController = Box<dyn Controller + Send>;

fn build_controller(
    spec: &ControllerSpec,
    template: &EnvTemplate,
    base: crate::env::Environment,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<(DynEnv, DynController, Option<CemOutcome>), BenchError> {
    let space = base.action_space();
    let adapt = |c: DynController| -> DynController {
        match &space {
            SpaceSpec::Discrete { table, .. } => Box::new(NearestEntry { inner: c, table: table.clone() }),
            SpaceSpec::Box { .. } => c,
        }
    };
    Ok(match spec {
        ControllerSpec::Static { heating, cooling } => {
            let c = adapt(Box::new(StaticController { heating: *heating, cooling: *cooling }));
            (Box::new(base), c, None)
        }
        ControllerSpec::Rbc { low, high } => {
            if !matches!(space, SpaceSpec::Box { ref dims } if dims.len() == 2) {
                return Err(BenchError::Config("rule-based control needs a continuous setpoint action space".into()));
            }
            let rbc = RbcController::for_space((*low, *high), &base.observation_space())?;
            (Box::new(IncrementalAction::new(base)?), Box::new(rbc), None)
        }
        ControllerSpec::Random => {
            let c = RandomController::new(space.clone(), mix_seed(seed, 0x52414E44));
            (Box::new(base), Box::new(c), None)
        }
        ControllerSpec::Cem { config } => {
            let training_env = template.instantiate_with(None)?;
            let outcome = cem_train(training_env, config)?;
            if let Some(dir) = out_dir {
                outcome.policy.save(&dir.join("policy.json"))?;
                write_training_curve(&dir.join("training_curve.csv"), &outcome.curve)?;
            }
            (Box::new(base), Box::new(outcome.policy.clone()), Some(outcome))
        }
        ControllerSpec::Policy { path } => {
            let policy = LinearPolicy::load(path)?;
            let obs_names = base.observation_space().names();
            if policy.observation_names != obs_names {
                return Err(BenchError::Config(format!(
                    "policy {} expects observations {:?}",
                    path.display(),
                    policy.observation_names
                )));
            }
            if space.is_discrete() || space.dims().len() != policy.action_dim() {
                return Err(BenchError::Config("policy needs a matching continuous action space".into()));
            }
            (Box::new(base), Box::new(policy), None)
        }
    })
}

/// Runs `episodes` episodes; episode `k` uses the environment's derived
/// seed `mix_seed(seed, k)`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, BenchError> {
    if config.episodes == 0 {
        return Err(BenchError::Config("episodes must be at least 1".into()));
    }
    let mut env_config = config.env.resolve()?;
    env_config.output_root = config.out_dir.clone();
    env_config.max_ep_data_store_num = env_config.max_ep_data_store_num.max(config.episodes);
    if let Some(dir) = &config.out_dir {
        prepare_out_dir(dir, config.overwrite)?;
    }
    let template = EnvTemplate::new(env_config)?;
    let base = template.instantiate()?;
    let workdir = base.workdir().map(Path::to_path_buf);
    let (mut env, mut controller, training) =
        build_controller(&config.controller, &template, base, config.seed, config.out_dir.as_deref())?;

    let mut episodes = Vec::with_capacity(config.episodes);
    let mut monitor_paths = Vec::new();
    let mut log = Vec::new();
    for k in 0..config.episodes {
        let (mut obs, _) = env.reset(if k == 0 { Some(config.seed) } else { None })?;
        controller.reset();
        log.clear();
        loop {
            let r = env.step(&controller.act(&obs))?;
            log.push(LogRow { month: r.info.month, reward: r.reward, power: r.info.total_power, violation: r.info.violation });
            if r.truncated || r.terminated {
                break;
            }
            obs = r.observation;
        }
        episodes.push(compute_metrics(&log)?);
        if let Some(w) = &workdir {
            monitor_paths.push(w.join(format!("episode-{}", k + 1)).join("monitor.csv"));
        }
    }
    env.close()?;
    let aggregate = aggregate(&episodes)?;
    if let Some(dir) = &config.out_dir {
        write_progress(&dir.join("progress.csv"), &episodes)?;
        write_monthly(&dir.join("monthly.csv"), &aggregate)?;
    }
    Ok(ExperimentReport { episodes, aggregate, monitor_paths, training })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: ExperimentConfig,
    pub grid: Vec<GridAxis>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
}

fn default_parallelism() -> usize {
    1
}

#[derive(Debug, Clone)]
pub struct SweepRow {
    pub index: usize,
    pub params: Vec<f64>,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    /// Ranked by mean reward, best first.
    pub rows: Vec<SweepRow>,
    pub failures: Vec<(usize, String)>,
}

/// Grid point `index`, with the last axis varying fastest.
pub fn combination(grid: &[GridAxis], mut index: usize) -> Vec<f64> {
    let mut out = vec![0.0; grid.len()];
    for (slot, axis) in out.iter_mut().zip(grid).rev() {
        *slot = axis.values[index % axis.values.len()];
        index /= axis.values.len();
    }
    out
}

fn as_count(name: &str, v: f64) -> Result<usize, BenchError> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(BenchError::Config(format!("{name} needs a non-negative integer, got {v}")))
    }
}

/// Sets one named parameter: `cem.<field>`, `static.heating|cooling`,
/// `rbc.low|high`, `reward.<field>` or `experiment.episodes`.
pub fn apply_param(exp: &mut ExperimentConfig, name: &str, value: f64) -> Result<(), BenchError> {
    let unknown = || BenchError::Config(format!("unknown sweep parameter '{name}'"));
    let (group, field) = name.split_once('.').ok_or_else(unknown)?;
    match (group, &mut exp.controller) {
        ("cem", ControllerSpec::Cem { config }) => match field {
            "population" => config.population = as_count(name, value)?,
            "elite_frac" => config.elite_frac = value,
            "iterations" => config.iterations = as_count(name, value)?,
            "init_std" => config.init_std = value,
            "episodes_per_candidate" => config.episodes_per_candidate = as_count(name, value)?,
            "eval_every" => config.eval_every = as_count(name, value)?,
            "eval_episodes" => config.eval_episodes = as_count(name, value)?,
            _ => return Err(unknown()),
        },
        ("static", ControllerSpec::Static { heating, cooling }) => match field {
            "heating" => *heating = value,
            "cooling" => *cooling = value,
            _ => return Err(unknown()),
        },
        ("rbc", ControllerSpec::Rbc { low, high }) => match field {
            "low" => *low = value,
            "high" => *high = value,
            _ => return Err(unknown()),
        },
        ("reward", _) => {
            let mut env = exp.env.resolve()?;
            let r = env.reward.base_mut();
            match field {
                "energy_weight" => r.energy_weight = value,
                "lambda_energy" => r.lambda_energy = value,
                "lambda_temperature" => r.lambda_temperature = value,
                _ => return Err(unknown()),
            }
            exp.env = EnvSource::Config(Box::new(env));
        }
        ("experiment", _) if field == "episodes" => exp.episodes = as_count(name, value)?,
        ("cem" | "static" | "rbc", _) => {
            return Err(BenchError::Config(format!("parameter '{name}' does not match the base controller")))
        }
        _ => return Err(unknown()),
    }
    Ok(())
}

/// Runs every grid combination with the base seed and ranks the results.
///
/// Writes `sweep_results.csv`, `failures.csv` and one experiment folder per
/// combination under `runs/` in the base output directory.
pub fn grid_sweep(config: &SweepConfig) -> Result<SweepReport, BenchError> {
    if config.grid.is_empty() || config.grid.iter().any(|a| a.values.is_empty()) {
        return Err(BenchError::Config("sweep grid must be non-empty on every axis".into()));
    }
    if config.parallelism == 0 {
        return Err(BenchError::Config("parallelism must be at least 1".into()));
    }
    let out = config
        .base
        .out_dir
        .clone()
        .ok_or_else(|| BenchError::Config("sweep needs an output directory".into()))?;
    let total: usize = config.grid.iter().map(|a| a.values.len()).product();

    let experiment_for = |index: usize| -> Result<ExperimentConfig, BenchError> {
        let mut exp = config.base.clone();
        for (axis, value) in config.grid.iter().zip(combination(&config.grid, index)) {
            apply_param(&mut exp, &axis.name, value)?;
        }
        exp.out_dir = Some(out.join("runs").join(format!("combo-{index:04}")));
        exp.overwrite = true;
        Ok(exp)
    };
    // Reject unknown parameter names before any work starts.
    experiment_for(0)?;
    prepare_out_dir(&out, config.base.overwrite)?;

    let run = |index: usize| experiment_for(index).and_then(|e| run_experiment(&e));
    let results: Vec<Result<ExperimentReport, BenchError>> = if config.parallelism == 1 {
        (0..total).map(run).collect()
    } else {
        use rayon::prelude::*;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.parallelism)
            .build()
            .map_err(|e| BenchError::Config(format!("thread pool: {e}")))?;
        pool.install(|| (0..total).into_par_iter().map(run).collect())
    };

    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (index, result) in results.into_iter().enumerate() {
        match result {
            Ok(report) => rows.push(SweepRow {
                index,
                params: combination(&config.grid, index),
                metrics: report.aggregate,
            }),
            Err(e) => failures.push((index, e.to_string())),
        }
    }
    rows.sort_by(|a, b| b.metrics.mean_reward.total_cmp(&a.metrics.mean_reward).then(a.index.cmp(&b.index)));

    let path = out.join("sweep_results.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_at(&path))?;
    let mut header = vec!["rank".to_string(), "combination".to_string()];
    header.extend(config.grid.iter().map(|a| a.name.clone()));
    header.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    w.write_record(&header).map_err(csv_at(&path))?;
    for (rank, row) in rows.iter().enumerate() {
        let mut record = vec![(rank + 1).to_string(), row.index.to_string()];
        record.extend(row.params.iter().map(|&v| num(v)));
        let m = &row.metrics;
        record.extend([m.mean_reward, m.mean_temp_violation, m.comfort_time_violation_pct, m.mean_power].map(num));
        w.write_record(&record).map_err(csv_at(&path))?;
    }
    w.flush().map_err(io_at(&path))?;

    let path = out.join("failures.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_at(&path))?;
    w.write_record(["combination", "error"]).map_err(csv_at(&path))?;
    for (index, error) in &failures {
        w.write_record([index.to_string(), error.clone()]).map_err(csv_at(&path))?;
    }
    w.flush().map_err(io_at(&path))?;

    Ok(SweepReport { rows, failures })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::RunPeriod;

    fn row(month: u8, reward: f64, power: f64, violation: f64) -> LogRow {
        LogRow { month, reward, power, violation }
    }

    #[test]
    fn metrics_hand_example() {
        let log = [row(1, -1.0, 10.0, 0.0), row(1, -1.0, 20.0, 0.0), row(2, -1.0, 30.0, 2.0)];
        let m = compute_metrics(&log).unwrap();
        assert!((m.comfort_time_violation_pct - 100.0 / 3.0).abs() < 1e-12);
        assert!((m.mean_temp_violation - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.mean_reward, -1.0);
        assert_eq!(m.mean_power, 20.0);
        assert_eq!(m.monthly_mean_power[0], 15.0);
        assert_eq!(m.monthly_mean_power[1], 30.0);
        assert_eq!(m.monthly_comfort_violation[1], 2.0);
        assert_eq!(m.monthly_mean_power[5], 0.0);
    }

    #[test]
    fn metrics_without_violation() {
        let m = compute_metrics(&[row(3, -0.5, 1.0, 0.0); 4]).unwrap();
        assert_eq!(m.comfort_time_violation_pct, 0.0);
        assert_eq!(m.mean_temp_violation, 0.0);
    }

    #[test]
    fn empty_log_is_an_error() {
        assert!(matches!(compute_metrics(&[]), Err(BenchError::EmptyLog)));
    }

    fn flat_metrics(power: f64) -> Metrics {
        Metrics {
            mean_reward: -1.0,
            mean_power: power,
            comfort_time_violation_pct: 1.0,
            mean_temp_violation: 0.1,
            monthly_mean_power: vec![power; MONTHS],
            monthly_comfort_violation: vec![0.1; MONTHS],
        }
    }

    #[test]
    fn compare_examples() {
        let r = flat_metrics(1000.0);
        let s = compare(&r, &[r.clone(), flat_metrics(500.0)]).unwrap();
        assert!(s[0].monthly_savings_pct.iter().all(|&v| v == 0.0));
        assert_eq!(s[0].total_savings_pct, 0.0);
        assert_eq!(s[1].total_savings_pct, 50.0);
        let mut zero = r.clone();
        zero.monthly_mean_power[3] = 0.0;
        assert!(matches!(compare(&zero, &[r]), Err(BenchError::DivisionByZeroRef(_))));
    }

    #[test]
    fn combination_order_is_odometer() {
        let grid = vec![
            GridAxis { name: "a".into(), values: vec![1.0, 2.0] },
            GridAxis { name: "b".into(), values: vec![10.0, 20.0, 30.0] },
        ];
        assert_eq!(combination(&grid, 0), vec![1.0, 10.0]);
        assert_eq!(combination(&grid, 1), vec![1.0, 20.0]);
        assert_eq!(combination(&grid, 3), vec![2.0, 10.0]);
        assert_eq!(combination(&grid, 5), vec![2.0, 30.0]);
    }

    fn short_config(controller: ControllerSpec) -> ExperimentConfig {
        let mut env = preset_config("vtb-datacenter-mixed-continuous-stochastic-v1").unwrap();
        env.run_period = RunPeriod { start: (7, 1), end: (7, 2) };
        ExperimentConfig { env: EnvSource::Config(Box::new(env)), controller, episodes: 2, seed: 4, out_dir: None, overwrite: false }
    }

    #[test]
    fn apply_param_targets() {
        let mut exp = short_config(ControllerSpec::Cem { config: CemConfig::default() });
        apply_param(&mut exp, "cem.population", 8.0).unwrap();
        apply_param(&mut exp, "reward.energy_weight", 0.3).unwrap();
        let ControllerSpec::Cem { config } = &exp.controller else { unreachable!() };
        assert_eq!(config.population, 8);
        assert_eq!(exp.env.resolve().unwrap().reward.base().energy_weight, 0.3);
        assert!(apply_param(&mut exp, "cem.population", 2.5).is_err());
        assert!(apply_param(&mut exp, "static.heating", 20.0).is_err());
        assert!(apply_param(&mut exp, "nope", 1.0).is_err());
    }

    #[test]
    fn aggregate_is_episode_mean() {
        let report = run_experiment(&short_config(ControllerSpec::Random)).unwrap();
        assert_eq!(report.episodes.len(), 2);
        let a = &report.aggregate;
        let e = &report.episodes;
        assert!((a.mean_reward - (e[0].mean_reward + e[1].mean_reward) / 2.0).abs() < 1e-12);
        assert!((a.mean_power - (e[0].mean_power + e[1].mean_power) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn controller_names_parse() {
        assert!(matches!(ControllerSpec::parse("rbc"), Ok(ControllerSpec::Rbc { .. })));
        assert!(matches!(ControllerSpec::parse("policy:p.json"), Ok(ControllerSpec::Policy { .. })));
        assert!(ControllerSpec::parse("policy:").is_err());
        assert!(ControllerSpec::parse("ppo").is_err());
    }
}
