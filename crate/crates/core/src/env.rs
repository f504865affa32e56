//! Episodic control environment over the thermal model.
//!
//! Lifecycle: [`make_env`] builds the environment (and its working
//! directory), [`Env::reset`] prepares weather and runs a 24 h warm-up,
//! [`Env::step`] applies a setpoint action for one control interval.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::monitor::MonitorWriter;
use crate::rewards::{RewardError, RewardFunction, RewardInput, RewardSpec, SimDate};
use crate::rng::{mix_seed, Stream};
use crate::thermal::{builtin_building_json, BuildingModel, HvacCommand, ThermalError};
use crate::weather::{
    apply_ou_noise, builtin_weather, calendar_of_hour, day_of_year, import_epw, parse_weather_csv, OuParams,
    WeatherError, WeatherRecord, WeatherSeries, SECONDS_PER_YEAR,
};

pub const DEFAULT_ENV_NAME: &str = "eplus-env-v1";
pub const DEFAULT_SETPOINTS: HvacCommand = HvacCommand { heating_setpoint: 20.0, cooling_setpoint: 23.0 };
pub const WARMUP_SECONDS: f64 = 86_400.0;
pub const SENSOR_BOUND: f64 = 5.0e6;
pub const BUILTIN_PREFIX: &str = "builtin:";

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("environment must be reset before stepping")]
    NotReset,
    #[error("discrete action {index} out of range (0..{count})")]
    DiscreteIndexOutOfRange { index: usize, count: usize },
    #[error("invalid space: {0}")]
    InvalidSpace(String),
    #[error("bad action: {0}")]
    BadAction(String),
    #[error("invalid environment configuration: {0}")]
    Config(String),
    #[error("unknown preset '{0}'")]
    UnknownPreset(String),
    #[error(transparent)]
    Weather(#[from] WeatherError),
    #[error(transparent)]
    Thermal(#[from] ThermalError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error("I/O error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EnvError + '_ {
    move |source| EnvError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxDim {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

impl BoxDim {
    pub fn new(name: impl Into<String>, low: f64, high: f64) -> Self {
        Self { name: name.into(), low, high }
    }
}

/// Observation or action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpaceSpec {
    Box { dims: Vec<BoxDim> },
    /// `table[i]` is the continuous vector (over `dims`) selected by index `i`.
    Discrete { dims: Vec<BoxDim>, table: Vec<Vec<f64>> },
}

impl SpaceSpec {
    pub fn empty() -> Self {
        SpaceSpec::Box { dims: Vec::new() }
    }

    pub fn dims(&self) -> &[BoxDim] {
        match self {
            SpaceSpec::Box { dims } | SpaceSpec::Discrete { dims, .. } => dims,
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.dims().iter().map(|d| d.name.clone()).collect()
    }

    pub fn is_empty(&self) -> bool {
        matches!(self, SpaceSpec::Box { dims } if dims.is_empty())
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, SpaceSpec::Discrete { .. })
    }

    pub fn lows(&self) -> Vec<f64> {
        self.dims().iter().map(|d| d.low).collect()
    }

    pub fn highs(&self) -> Vec<f64> {
        self.dims().iter().map(|d| d.high).collect()
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        for d in self.dims() {
            if !(d.low <= d.high) || !d.low.is_finite() || !d.high.is_finite() {
                return Err(EnvError::InvalidSpace(format!(
                    "dimension '{}': lower {} must not exceed upper {}",
                    d.name, d.low, d.high
                )));
            }
        }
        if let SpaceSpec::Discrete { dims, table } = self {
            if table.is_empty() {
                return Err(EnvError::InvalidSpace("discrete table is empty".into()));
            }
            for (i, row) in table.iter().enumerate() {
                if row.len() != dims.len() {
                    return Err(EnvError::InvalidSpace(format!(
                        "discrete entry {i} has {} values, expected {}",
                        row.len(),
                        dims.len()
                    )));
                }
                for (v, d) in row.iter().zip(dims) {
                    if !(d.low..=d.high).contains(v) {
                        return Err(EnvError::InvalidSpace(format!(
                            "discrete entry {i}: {v} outside [{}, {}] for '{}'",
                            d.low, d.high, d.name
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn contains(&self, action: &Action) -> bool {
        match (self, action) {
            (SpaceSpec::Box { dims }, Action::Continuous(v)) => {
                v.len() == dims.len() && v.iter().zip(dims).all(|(x, d)| (d.low..=d.high).contains(x))
            }
            (SpaceSpec::Discrete { table, .. }, Action::Discrete(i)) => *i < table.len(),
            _ => false,
        }
    }
}

/// A control input: a setpoint vector or an index into a discrete table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Continuous(v) => Some(v),
            Action::Discrete(_) => None,
        }
    }
}

pub type Observation = Vec<f64>;

/// Per-step details reported alongside the observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub timestep: usize,
    pub month: u8,
    pub day: u8,
    pub hour: u8,
    pub time_elapsed_s: f64,
    pub reward: f64,
    pub energy_term: f64,
    pub comfort_term: f64,
    #[serde(rename = "total_power_W")]
    pub total_power: f64,
    #[serde(rename = "violation_C")]
    pub violation: f64,
    pub zone_temperatures: Vec<f64>,
    pub heating_setpoint: f64,
    pub cooling_setpoint: f64,
    /// Action actually applied, after clamping.
    pub applied_action: Vec<f64>,
    pub occupancy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// The reset/step contract shared by the environment and its wrappers.
pub trait Env {
    fn observation_space(&self) -> SpaceSpec;
    fn action_space(&self) -> SpaceSpec;
    fn reset(&mut self, seed: Option<u64>) -> Result<(Observation, StepInfo), EnvError>;
    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError>;
    fn close(&mut self) -> Result<(), EnvError>;
}

impl<E: Env + ?Sized> Env for Box<E> {
    fn observation_space(&self) -> SpaceSpec {
        (**self).observation_space()
    }
    fn action_space(&self) -> SpaceSpec {
        (**self).action_space()
    }
    fn reset(&mut self, seed: Option<u64>) -> Result<(Observation, StepInfo), EnvError> {
        (**self).reset(seed)
    }
    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        (**self).step(action)
    }
    fn close(&mut self) -> Result<(), EnvError> {
        (**self).close()
    }
}

pub fn describe_spaces<E: Env + ?Sized>(env: &E) -> (SpaceSpec, SpaceSpec) {
    (env.observation_space(), env.action_space())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeVariable {
    Month,
    Day,
    Hour,
}

/// Inclusive run period within one non-leap year.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunPeriod {
    pub start: (u8, u8),
    pub end: (u8, u8),
}

impl Default for RunPeriod {
    fn default() -> Self {
        Self { start: (1, 1), end: (12, 31) }
    }
}

impl RunPeriod {
    /// (first day of year, number of days)
    pub fn span(&self) -> Result<(u16, u16), EnvError> {
        let start = day_of_year(self.start.0, self.start.1)
            .ok_or_else(|| EnvError::Config(format!("run period start {:?} is not a date", self.start)))?;
        let end = day_of_year(self.end.0, self.end.1)
            .ok_or_else(|| EnvError::Config(format!("run period end {:?} is not a date", self.end)))?;
        if end < start {
            return Err(EnvError::Config("run period must not wrap the year end".into()));
        }
        Ok((start, end - start + 1))
    }
}

fn default_env_name() -> String {
    DEFAULT_ENV_NAME.to_string()
}
fn default_time_variables() -> Vec<TimeVariable> {
    vec![TimeVariable::Month, TimeVariable::Day, TimeVariable::Hour]
}
fn default_max_ep_data_store_num() -> usize {
    10
}
fn default_timesteps_per_hour() -> u32 {
    4
}
fn default_substep() -> f64 {
    60.0
}

/// Everything needed to construct an environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    #[serde(default = "default_env_name")]
    pub env_name: String,
    /// Descriptor path or `builtin:<name>`.
    pub building: String,
    /// CSV/EPW paths or `builtin:<climate>`; one is drawn per episode.
    pub weather_files: Vec<String>,
    /// `None` hands control to the default 20/23 C schedule.
    #[serde(default)]
    pub action_space: Option<SpaceSpec>,
    #[serde(default = "default_time_variables")]
    pub time_variables: Vec<TimeVariable>,
    /// Observed sensor names in order; `None` observes the full catalog.
    #[serde(default)]
    pub variables: Option<Vec<String>>,
    #[serde(default)]
    pub weather_variability: Option<OuParams>,
    #[serde(default)]
    pub reward: RewardSpec,
    #[serde(default = "default_max_ep_data_store_num")]
    pub max_ep_data_store_num: usize,
    #[serde(default = "default_timesteps_per_hour")]
    pub timesteps_per_hour: u32,
    #[serde(default)]
    pub run_period: RunPeriod,
    #[serde(default = "default_substep")]
    pub substep_s: f64,
    #[serde(default)]
    pub seed: u64,
    /// Parent of the `<env_name>-res<N>` working directory. `None` keeps
    /// the environment off the filesystem.
    #[serde(default)]
    pub output_root: Option<PathBuf>,
}

impl EnvConfig {
    pub fn new(building: impl Into<String>, weather: impl Into<String>) -> Self {
        Self {
            env_name: default_env_name(),
            building: building.into(),
            weather_files: vec![weather.into()],
            action_space: None,
            time_variables: default_time_variables(),
            variables: None,
            weather_variability: None,
            reward: RewardSpec::default(),
            max_ep_data_store_num: default_max_ep_data_store_num(),
            timesteps_per_hour: default_timesteps_per_hour(),
            run_period: RunPeriod::default(),
            substep_s: default_substep(),
            seed: 0,
            output_root: None,
        }
    }

    pub fn episode_length(&self) -> Result<usize, EnvError> {
        let (_, days) = self.run_period.span()?;
        Ok(days as usize * 24 * self.timesteps_per_hour as usize)
    }
}

/// Bounds of the two shared setpoints.
pub fn setpoint_dims() -> Vec<BoxDim> {
    vec![
        BoxDim::new("Heating_Setpoint_RL", 15.0, 22.0),
        BoxDim::new("Cooling_Setpoint_RL", 22.0, 30.0),
    ]
}

pub fn setpoint_box() -> SpaceSpec {
    SpaceSpec::Box { dims: setpoint_dims() }
}

/// Integer heating x cooling grid over the setpoint bounds, heating-major:
/// index `h * 9 + c` selects `(15 + h, 22 + c)`.
pub fn default_discrete_table() -> Vec<Vec<f64>> {
    let mut table = Vec::with_capacity(72);
    for h in 15..=22 {
        for c in 22..=30 {
            table.push(vec![h as f64, c as f64]);
        }
    }
    table
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Sensor {
    OutdoorTemperature,
    OutdoorHumidity,
    WindSpeed,
    WindDirection,
    DiffuseSolar,
    DirectSolar,
    HeatingSetpoint,
    CoolingSetpoint,
    ZoneTemperature(usize),
    HvacPower,
    Month,
    Day,
    Hour,
}

fn sensor_catalog(building: &BuildingModel) -> Vec<(String, Sensor)> {
    let mut v = vec![
        ("outdoor_temperature".to_string(), Sensor::OutdoorTemperature),
        ("outdoor_humidity".to_string(), Sensor::OutdoorHumidity),
        ("wind_speed".to_string(), Sensor::WindSpeed),
        ("wind_direction".to_string(), Sensor::WindDirection),
        ("diffuse_solar_radiation".to_string(), Sensor::DiffuseSolar),
        ("direct_solar_radiation".to_string(), Sensor::DirectSolar),
        ("htg_setpoint".to_string(), Sensor::HeatingSetpoint),
        ("clg_setpoint".to_string(), Sensor::CoolingSetpoint),
    ];
    for (i, z) in building.zones.iter().enumerate() {
        v.push((format!("{}_air_temperature", z.name), Sensor::ZoneTemperature(i)));
    }
    v.push(("HVAC_electricity_demand_rate".to_string(), Sensor::HvacPower));
    v
}

/// Names of every sensor a building can expose, in catalog order.
pub fn sensor_names(building: &BuildingModel) -> Vec<String> {
    sensor_catalog(building).into_iter().map(|(n, _)| n).collect()
}

fn weather_cache() -> &'static Mutex<HashMap<String, Arc<WeatherSeries>>> {
    static CACHE: OnceLock<Mutex<HashMap<String, Arc<WeatherSeries>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Loads a weather source: `builtin:<climate>`, an `.epw` file, or CSV.
pub fn load_weather(source: &str) -> Result<Arc<WeatherSeries>, EnvError> {
    if let Some(key) = source.strip_prefix(BUILTIN_PREFIX) {
        if let Some(s) = weather_cache().lock().expect("weather cache").get(key) {
            return Ok(s.clone());
        }
        let series = Arc::new(builtin_weather(key)?);
        weather_cache().lock().expect("weather cache").insert(key.to_string(), series.clone());
        return Ok(series);
    }
    let path = Path::new(source);
    let is_epw = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("epw"));
    let series = if is_epw { import_epw(path)? } else { parse_weather_csv(path)? };
    Ok(Arc::new(series))
}

pub fn load_building(source: &str) -> Result<BuildingModel, EnvError> {
    if let Some(key) = source.strip_prefix(BUILTIN_PREFIX) {
        let json = builtin_building_json(key)
            .ok_or_else(|| EnvError::Config(format!("unknown built-in building '{key}'")))?;
        return Ok(BuildingModel::from_json(json)?);
    }
    Ok(BuildingModel::load(Path::new(source))?)
}

/// A validated configuration with its building and weather loaded; cheap
/// to instantiate repeatedly.
#[derive(Clone)]
pub struct EnvTemplate {
    config: EnvConfig,
    building: BuildingModel,
    weathers: Vec<Arc<WeatherSeries>>,
    sensors: Vec<(String, Sensor)>,
    observation_space: SpaceSpec,
    action_space: SpaceSpec,
    substeps: usize,
}

impl EnvTemplate {
    pub fn new(config: EnvConfig) -> Result<Self, EnvError> {
        if config.weather_files.is_empty() {
            return Err(EnvError::Config("at least one weather file is required".into()));
        }
        if config.timesteps_per_hour == 0 || 60 % config.timesteps_per_hour != 0 {
            return Err(EnvError::Config(format!(
                "timesteps_per_hour {} must divide 60",
                config.timesteps_per_hour
            )));
        }
        if config.max_ep_data_store_num == 0 {
            return Err(EnvError::Config("max_ep_data_store_num must be at least 1".into()));
        }
        if !(config.substep_s > 0.0) {
            return Err(EnvError::Config("substep_s must be > 0".into()));
        }
        config.run_period.span()?;
        config.reward.validate()?;
        if let Some(ou) = &config.weather_variability {
            ou.validate()?;
        }

        let building = load_building(&config.building)?;
        let weathers = config
            .weather_files
            .iter()
            .map(|w| load_weather(w))
            .collect::<Result<Vec<_>, _>>()?;

        let interval = 3600.0 / config.timesteps_per_hour as f64;
        let substeps = (interval / config.substep_s).ceil() as usize;
        let dt = interval / substeps as f64;
        if dt > building.stability_bound() {
            return Err(ThermalError::UnstableTimestep { dt, bound: building.stability_bound() }.into());
        }

        let action_space = match &config.action_space {
            None => SpaceSpec::empty(),
            Some(space) => {
                space.validate()?;
                if space.dims().len() != 2 {
                    return Err(EnvError::InvalidSpace(format!(
                        "setpoint actions need 2 dimensions (heating, cooling), got {}",
                        space.dims().len()
                    )));
                }
                space.clone()
            }
        };

        let catalog = sensor_catalog(&building);
        let mut sensors = match &config.variables {
            None => catalog,
            Some(names) => names
                .iter()
                .map(|n| {
                    catalog
                        .iter()
                        .find(|(c, _)| c == n)
                        .cloned()
                        .ok_or_else(|| EnvError::Config(format!("unknown observation variable '{n}'")))
                })
                .collect::<Result<Vec<_>, _>>()?,
        };
        let mut dims: Vec<BoxDim> =
            sensors.iter().map(|(n, _)| BoxDim::new(n.clone(), -SENSOR_BOUND, SENSOR_BOUND)).collect();
        for (var, name, sensor, low, high) in [
            (TimeVariable::Month, "month", Sensor::Month, 1.0, 12.0),
            (TimeVariable::Day, "day", Sensor::Day, 1.0, 31.0),
            (TimeVariable::Hour, "hour", Sensor::Hour, 0.0, 23.0),
        ] {
            if config.time_variables.contains(&var) {
                sensors.push((name.to_string(), sensor));
                dims.push(BoxDim::new(name, low, high));
            }
        }

        Ok(Self {
            observation_space: SpaceSpec::Box { dims },
            action_space,
            sensors,
            substeps,
            building,
            weathers,
            config,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn instantiate(&self) -> Result<Environment, EnvError> {
        self.instantiate_with(self.config.output_root.clone())
    }

    /// Instantiates with a different output root (or none).
    pub fn instantiate_with(&self, output_root: Option<PathBuf>) -> Result<Environment, EnvError> {
        let workdir = match output_root {
            Some(root) => Some(create_workdir(&root, &self.config.env_name)?),
            None => None,
        };
        let interval = 3600.0 / self.config.timesteps_per_hour as f64;
        let (start_doy, _) = self.config.run_period.span()?;
        Ok(Environment {
            reward_fn: Box::new(self.config.reward.clone()),
            building: self.building.clone(),
            episode_length: self.config.episode_length()?,
            start_time: (start_doy as f64 - 1.0) * 86_400.0,
            interval,
            dt: interval / self.substeps as f64,
            template: self.clone(),
            workdir,
            episodes_started: 0,
            seed_base: self.config.seed,
            next_seed_index: 0,
            episode: None,
            monitor: None,
            closed: false,
        })
    }
}

fn create_workdir(root: &Path, env_name: &str) -> Result<PathBuf, EnvError> {
    fs::create_dir_all(root).map_err(io_err(root))?;
    for n in 1.. {
        let dir = root.join(format!("{env_name}-res{n}"));
        match fs::create_dir(&dir) {
            Ok(()) => {
                let lock = dir.join(".lock");
                fs::write(&lock, std::process::id().to_string()).map_err(io_err(&lock))?;
                return Ok(dir);
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(io_err(&dir)(e)),
        }
    }
    unreachable!("unbounded search for a free working directory")
}

pub fn make_env(config: EnvConfig) -> Result<Environment, EnvError> {
    EnvTemplate::new(config)?.instantiate()
}

struct Episode {
    weather: Arc<WeatherSeries>,
    step: usize,
    setpoints: HvacCommand,
    last_weather: WeatherRecord,
    last_power: f64,
}

pub struct Environment {
    template: EnvTemplate,
    building: BuildingModel,
    reward_fn: Box<dyn RewardFunction>,
    episode_length: usize,
    start_time: f64,
    interval: f64,
    dt: f64,
    workdir: Option<PathBuf>,
    episodes_started: u64,
    seed_base: u64,
    next_seed_index: u64,
    episode: Option<Episode>,
    monitor: Option<MonitorWriter>,
    closed: bool,
}

impl Environment {
    /// Replaces the configured reward with a custom evaluator.
    pub fn with_reward(mut self, reward: Box<dyn RewardFunction>) -> Self {
        self.reward_fn = reward;
        self
    }

    pub fn config(&self) -> &EnvConfig {
        &self.template.config
    }

    pub fn episode_length(&self) -> usize {
        self.episode_length
    }

    pub fn workdir(&self) -> Option<&Path> {
        self.workdir.as_deref()
    }

    pub fn episode_dir(&self) -> Option<PathBuf> {
        self.workdir
            .as_ref()
            .map(|w| w.join(format!("episode-{}", self.episodes_started)))
    }

    pub fn monitor_path(&self) -> Option<&Path> {
        self.monitor.as_ref().map(|m| m.path())
    }

    pub fn episodes_started(&self) -> u64 {
        self.episodes_started
    }

    pub fn building(&self) -> &BuildingModel {
        &self.building
    }

    fn uses_default_controller(&self) -> bool {
        self.template.action_space.is_empty()
    }

    /// Runs one control interval starting at `time`; returns the last
    /// sampled weather and mean electric power.
    fn simulate_interval(
        building: &mut BuildingModel,
        weather: &WeatherSeries,
        time: f64,
        substeps: usize,
        dt: f64,
        cmd: &HvacCommand,
    ) -> Result<(WeatherRecord, f64), EnvError> {
        let mut first = None;
        let mut energy = 0.0;
        for k in 0..substeps {
            let t = (time + k as f64 * dt).rem_euclid(SECONDS_PER_YEAR);
            let w = weather.sample_at(t)?;
            energy += building.advance(w.drybulb, w.direct_normal_rad + w.diffuse_horiz_rad, cmd, dt);
            first.get_or_insert(w);
        }
        Ok((first.expect("at least one substep"), energy / substeps as f64))
    }

    fn observe(&self, ep: &Episode, date: SimDate) -> Observation {
        let w = &ep.last_weather;
        self.template
            .sensors
            .iter()
            .map(|(_, s)| match *s {
                Sensor::OutdoorTemperature => w.drybulb,
                Sensor::OutdoorHumidity => w.rel_humidity,
                Sensor::WindSpeed => w.wind_speed,
                Sensor::WindDirection => w.wind_dir,
                Sensor::DiffuseSolar => w.diffuse_horiz_rad,
                Sensor::DirectSolar => w.direct_normal_rad,
                Sensor::HeatingSetpoint => ep.setpoints.heating_setpoint,
                Sensor::CoolingSetpoint => ep.setpoints.cooling_setpoint,
                Sensor::ZoneTemperature(i) => self.building.zone_temps[i],
                Sensor::HvacPower => ep.last_power,
                Sensor::Month => date.month as f64,
                Sensor::Day => date.day as f64,
                Sensor::Hour => date.hour as f64,
            })
            .collect()
    }

    fn date_at(time: f64) -> SimDate {
        let cal = calendar_of_hour((time / 3600.0).floor() as usize);
        SimDate { month: cal.month, day: cal.day, hour: cal.hour }
    }

    fn resolve_action(&self, action: &Action) -> Result<HvacCommand, EnvError> {
        let (h, c) = match (&self.template.action_space, action) {
            (space, _) if space.is_empty() => return Ok(DEFAULT_SETPOINTS),
            (SpaceSpec::Box { dims }, Action::Continuous(v)) => {
                if v.len() != dims.len() {
                    return Err(EnvError::BadAction(format!("expected {} values, got {}", dims.len(), v.len())));
                }
                if v.iter().any(|x| x.is_nan()) {
                    return Err(EnvError::BadAction("NaN in action".into()));
                }
                (v[0].clamp(dims[0].low, dims[0].high), v[1].clamp(dims[1].low, dims[1].high))
            }
            (SpaceSpec::Discrete { table, .. }, Action::Discrete(i)) => {
                let row = table
                    .get(*i)
                    .ok_or(EnvError::DiscreteIndexOutOfRange { index: *i, count: table.len() })?;
                (row[0], row[1])
            }
            (SpaceSpec::Box { .. }, Action::Discrete(_)) => {
                return Err(EnvError::BadAction("continuous space expects a vector action".into()))
            }
            (SpaceSpec::Discrete { .. }, Action::Continuous(_)) => {
                return Err(EnvError::BadAction("discrete space expects an integer action".into()))
            }
        };
        let deadband = self.building.hvac.deadband;
        Ok(HvacCommand { heating_setpoint: h, cooling_setpoint: c.max(h + deadband) })
    }

    fn info(&self, ep: &Episode, date: SimDate, timestep: usize) -> StepInfo {
        StepInfo {
            timestep,
            month: date.month,
            day: date.day,
            hour: date.hour,
            time_elapsed_s: timestep as f64 * self.interval,
            reward: 0.0,
            energy_term: 0.0,
            comfort_term: 0.0,
            total_power: ep.last_power,
            violation: 0.0,
            zone_temperatures: self.building.zone_temps.clone(),
            heating_setpoint: ep.setpoints.heating_setpoint,
            cooling_setpoint: ep.setpoints.cooling_setpoint,
            applied_action: vec![ep.setpoints.heating_setpoint, ep.setpoints.cooling_setpoint],
            occupancy: self.building.occupants_at(date.hour),
        }
    }

    fn start_episode_outputs(&mut self) -> Result<(), EnvError> {
        self.finish_monitor()?;
        let Some(workdir) = self.workdir.clone() else {
            return Ok(());
        };
        let dir = workdir.join(format!("episode-{}", self.episodes_started));
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        prune_episodes(&workdir, self.template.config.max_ep_data_store_num)?;
        let path = dir.join("monitor.csv");
        let obs_names = self.template.observation_space.names();
        let act_names = if self.uses_default_controller() {
            setpoint_dims().into_iter().map(|d| d.name).collect()
        } else {
            self.template.action_space.names()
        };
        self.monitor = Some(MonitorWriter::create(&path, &obs_names, &act_names).map_err(io_err(&path))?);
        Ok(())
    }

    fn finish_monitor(&mut self) -> Result<(), EnvError> {
        if let Some(mut m) = self.monitor.take() {
            m.flush().map_err(|e| EnvError::Io { path: m.path().to_path_buf(), source: e })?;
        }
        Ok(())
    }
}

fn prune_episodes(workdir: &Path, keep: usize) -> Result<(), EnvError> {
    let mut episodes: Vec<(u64, PathBuf)> = fs::read_dir(workdir)
        .map_err(io_err(workdir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().into_owned();
            let k = name.strip_prefix("episode-")?.parse::<u64>().ok()?;
            Some((k, e.path()))
        })
        .collect();
    episodes.sort();
    while episodes.len() > keep {
        let (_, path) = episodes.remove(0);
        fs::remove_dir_all(&path).map_err(io_err(&path))?;
    }
    Ok(())
}

impl Env for Environment {
    fn observation_space(&self) -> SpaceSpec {
        self.template.observation_space.clone()
    }

    fn action_space(&self) -> SpaceSpec {
        self.template.action_space.clone()
    }

    /// Episode `k` after the last explicit seed `s` draws its weather file
    /// and perturbation seed from `Stream::new(mix_seed(s, k))`.
    fn reset(&mut self, seed: Option<u64>) -> Result<(Observation, StepInfo), EnvError> {
        if let Some(s) = seed {
            self.seed_base = s;
            self.next_seed_index = 0;
        }
        let mut rng = Stream::new(mix_seed(self.seed_base, self.next_seed_index));
        self.next_seed_index += 1;
        self.episodes_started += 1;
        self.closed = false;

        let base = &self.template.weathers[rng.index(self.template.weathers.len())];
        let noise_seed = rng.next_u64();
        let weather = match &self.template.config.weather_variability {
            Some(ou) => Arc::new(apply_ou_noise(base, ou, noise_seed)?),
            None => base.clone(),
        };

        self.building.reset_temps();
        let substeps = self.template.substeps;
        let warmup_steps = (WARMUP_SECONDS / self.interval).round() as usize;
        let mut last = (weather.records[0], self.building.hvac.fan_power);
        for k in 0..warmup_steps {
            let t = self.start_time - WARMUP_SECONDS + k as f64 * self.interval;
            last = Self::simulate_interval(&mut self.building, &weather, t, substeps, self.dt, &DEFAULT_SETPOINTS)?;
        }
        let first_weather = weather.sample_at(self.start_time)?;
        let episode = Episode {
            weather,
            step: 0,
            setpoints: DEFAULT_SETPOINTS,
            last_weather: first_weather,
            last_power: last.1,
        };
        let date = Self::date_at(self.start_time);
        let obs = self.observe(&episode, date);
        let info = self.info(&episode, date, 0);
        self.episode = Some(episode);
        self.start_episode_outputs()?;
        Ok((obs, info))
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        if self.closed || self.episode.is_none() {
            return Err(EnvError::NotReset);
        }
        let cmd = self.resolve_action(action)?;
        let ep = self.episode.as_mut().expect("checked above");
        let t0 = self.start_time + ep.step as f64 * self.interval;
        let (w, power) =
            Self::simulate_interval(&mut self.building, &ep.weather, t0, self.template.substeps, self.dt, &cmd)?;
        ep.step += 1;
        ep.setpoints = cmd;
        ep.last_weather = w;
        ep.last_power = power;
        let timestep = ep.step;
        let truncated = timestep == self.episode_length;

        let date = Self::date_at(t0);
        let occupancy = self.building.occupants_at(date.hour);
        let out = self.reward_fn.evaluate(&RewardInput {
            zone_temps: &self.building.zone_temps,
            electric_power: power,
            date,
            occupancy,
        })?;

        let ep = self.episode.as_ref().expect("episode present");
        let observation = self.observe(ep, date);
        let mut info = self.info(ep, date, timestep);
        info.reward = out.total;
        info.energy_term = out.energy_term;
        info.comfort_term = out.comfort_term;
        info.violation = out.violation_degrees;

        if let Some(m) = self.monitor.as_mut() {
            m.write_row(&info, &observation, &info.applied_action, out.total, truncated)
                .map_err(|e| EnvError::Io { path: m.path().to_path_buf(), source: e })?;
        }
        if truncated {
            self.episode = None;
        }
        Ok(StepResult {
            observation,
            reward: out.total,
            terminated: false,
            truncated,
            info,
        })
    }

    fn close(&mut self) -> Result<(), EnvError> {
        if self.closed {
            return Ok(());
        }
        self.closed = true;
        self.episode = None;
        self.finish_monitor()?;
        if let Some(dir) = &self.workdir {
            let lock = dir.join(".lock");
            if lock.exists() {
                fs::remove_file(&lock).map_err(io_err(&lock))?;
            }
        }
        Ok(())
    }
}

impl Drop for Environment {
    fn drop(&mut self) {
        let _ = self.close();
    }
}
