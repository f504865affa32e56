//! Layers that change what an environment exposes without touching it.
//!
//! Every wrapper implements [`Env`] and owns its inner environment, so
//! chains nest: `StackObservations::new(NormalizeObservation::new(env), 4)`.

use std::collections::VecDeque;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::env::{io_err, setpoint_dims, Action, BoxDim, Env, EnvError, Observation, SpaceSpec, StepInfo, StepResult};
use crate::monitor::MonitorWriter;

pub const DEFAULT_CLIP: f64 = 10.0;
pub const STD_FLOOR: f64 = 1e-8;

/// Welford running mean and population variance per dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: Vec<f64>,
    pub m2: Vec<f64>,
    pub clip: f64,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self { count: 0, mean: vec![0.0; dim], m2: vec![0.0; dim], clip: DEFAULT_CLIP }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn update(&mut self, x: &[f64]) {
        self.count += 1;
        let n = self.count as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let delta = v - *m;
            *m += delta / n;
            *s += delta * (v - *m);
        }
    }

    pub fn variance(&self) -> Vec<f64> {
        if self.count == 0 {
            return vec![1.0; self.dim()];
        }
        self.m2.iter().map(|s| (s / self.count as f64).max(0.0)).collect()
    }

    pub fn std(&self) -> Vec<f64> {
        self.variance().into_iter().map(f64::sqrt).collect()
    }

    pub fn normalize_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let n = self.count.max(1) as f64;
        out.extend(x.iter().zip(&self.mean).zip(&self.m2).map(|((&v, &m), &s)| {
            let std = if self.count == 0 { 1.0 } else { (s / n).max(0.0).sqrt() };
            ((v - m) / std.max(STD_FLOOR)).clamp(-self.clip, self.clip)
        }));
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(x.len());
        self.normalize_into(x, &mut out);
        out
    }
}

pub struct NormalizeObservation<E> {
    inner: E,
    stats: RunningStats,
    frozen: bool,
}

impl<E: Env> NormalizeObservation<E> {
    pub fn new(inner: E) -> Self {
        let dim = inner.observation_space().dims().len();
        Self { inner, stats: RunningStats::new(dim), frozen: false }
    }

    /// Starts from saved statistics, frozen.
    pub fn with_stats(inner: E, stats: RunningStats) -> Result<Self, EnvError> {
        let dim = inner.observation_space().dims().len();
        if stats.dim() != dim {
            return Err(EnvError::InvalidSpace(format!(
                "normalization stats have {} dimensions, observation has {dim}",
                stats.dim()
            )));
        }
        Ok(Self { inner, stats, frozen: true })
    }

    pub fn stats(&self) -> &RunningStats {
        &self.stats
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn into_inner(self) -> E {
        self.inner
    }

    fn process(&mut self, obs: &mut Observation) {
        if !self.frozen {
            self.stats.update(obs);
        }
        let raw = std::mem::take(obs);
        self.stats.normalize_into(&raw, obs);
    }
}

impl<E: Env> Env for NormalizeObservation<E> {
    fn observation_space(&self) -> SpaceSpec {
        let c = self.stats.clip;
        SpaceSpec::Box {
            dims: self.inner.observation_space().dims().iter().map(|d| BoxDim::new(d.name.clone(), -c, c)).collect(),
        }
    }

    fn action_space(&self) -> SpaceSpec {
        self.inner.action_space()
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<(Observation, StepInfo), EnvError> {
        let (mut obs, info) = self.inner.reset(seed)?;
        self.process(&mut obs);
        Ok((obs, info))
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let mut r = self.inner.step(action)?;
        self.process(&mut r.observation);
        Ok(r)
    }

    fn close(&mut self) -> Result<(), EnvError> {
        self.inner.close()
    }
}

/// Maps `a` in [-1, 1] onto `[low, high]`.
pub fn denormalize(a: f64, low: f64, high: f64) -> f64 {
    low + (a + 1.0) * 0.5 * (high - low)
}

pub fn normalize(x: f64, low: f64, high: f64) -> f64 {
    if high == low {
        0.0
    } else {
        (x - low) / (high - low) * 2.0 - 1.0
    }
}

/// Exposes a continuous box as [-1, 1] per dimension.
pub struct NormalizeAction<E> {
    inner: E,
    dims: Vec<BoxDim>,
}

impl<E: Env> NormalizeAction<E> {
    pub fn new(inner: E) -> Result<Self, EnvError> {
        match inner.action_space() {
            SpaceSpec::Box { dims } if !dims.is_empty() => Ok(Self { inner, dims }),
            _ => Err(EnvError::InvalidSpace("action normalization needs a non-empty continuous box".into())),
        }
    }

    pub fn to_inner(&self, a: &[f64]) -> Vec<f64> {
        a.iter().zip(&self.dims).map(|(&v, d)| denormalize(v, d.low, d.high)).collect()
    }

    pub fn to_outer(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.dims).map(|(&v, d)| normalize(v, d.low, d.high)).collect()
    }

    pub fn inner(&self) -> &E {
        &self.inner
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Env> Env for NormalizeAction<E> {
    fn observation_space(&self) -> SpaceSpec {
        self.inner.observation_space()
    }

    fn action_space(&self) -> SpaceSpec {
        SpaceSpec::Box { dims: self.dims.iter().map(|d| BoxDim::new(d.name.clone(), -1.0, 1.0)).collect() }
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<(Observation, StepInfo), EnvError> {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        match action {
            Action::Continuous(a) if a.len() == self.dims.len() => {
                self.inner.step(&Action::Continuous(self.to_inner(a)))
            }
            Action::Continuous(a) => {
                Err(EnvError::BadAction(format!("expected {} values, got {}", self.dims.len(), a.len())))
            }
            Action::Discrete(_) => Err(EnvError::BadAction("normalized space expects a vector action".into())),
        }
    }

    fn close(&mut self) -> Result<(), EnvError> {
        self.inner.close()
    }
}

/// Turns a continuous box into a finite table of actions.
pub struct DiscretizeAction<E> {
    inner: E,
    dims: Vec<BoxDim>,
    table: Vec<Vec<f64>>,
}

impl<E: Env> DiscretizeAction<E> {
    pub fn new(inner: E, table: Vec<Vec<f64>>) -> Result<Self, EnvError> {
        let dims = match inner.action_space() {
            SpaceSpec::Box { dims } if !dims.is_empty() => dims,
            _ => return Err(EnvError::InvalidSpace("discretization needs a non-empty continuous box".into())),
        };
        let space = SpaceSpec::Discrete { dims: dims.clone(), table };
        space.validate()?;
        let SpaceSpec::Discrete { table, .. } = space else { unreachable!() };
        Ok(Self { inner, dims, table })
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Env> Env for DiscretizeAction<E> {
    fn observation_space(&self) -> SpaceSpec {
        self.inner.observation_space()
    }

    fn action_space(&self) -> SpaceSpec {
        SpaceSpec::Discrete { dims: self.dims.clone(), table: self.table.clone() }
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<(Observation, StepInfo), EnvError> {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let Action::Discrete(i) = action else {
            return Err(EnvError::BadAction("discrete space expects an integer action".into()));
        };
        let row = self
            .table
            .get(*i)
            .ok_or(EnvError::DiscreteIndexOutOfRange { index: *i, count: self.table.len() })?
            .clone();
        self.inner.step(&Action::Continuous(row))
    }

    fn close(&mut self) -> Result<(), EnvError> {
        self.inner.close()
    }
}

/// Integer heating x cooling grid used for discrete datacenter control.
pub fn default_datacenter_table() -> Vec<Vec<f64>> {
    crate::env::default_discrete_table()
}

/// Drives the setpoints by per-step deltas snapped to {-1, 0, +1} degrees.
pub struct IncrementalAction<E> {
    inner: E,
    dims: Vec<BoxDim>,
    initial: Vec<f64>,
    state: Vec<f64>,
}

impl<E: Env> IncrementalAction<E> {
    /// Starts each episode from (20, 23).
    pub fn new(inner: E) -> Result<Self, EnvError> {
        Self::with_initial(inner, vec![20.0, 23.0])
    }

    pub fn with_initial(inner: E, initial: Vec<f64>) -> Result<Self, EnvError> {
        let dims = match inner.action_space() {
            SpaceSpec::Box { dims } if dims.len() == initial.len() => dims,
            _ => {
                return Err(EnvError::InvalidSpace(format!(
                    "incremental control needs a continuous box with {} dimensions",
                    initial.len()
                )))
            }
        };
        let initial: Vec<f64> = initial.iter().zip(&dims).map(|(v, d)| v.clamp(d.low, d.high)).collect();
        Ok(Self { inner, state: initial.clone(), initial, dims })
    }

    pub fn setpoints(&self) -> &[f64] {
        &self.state
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Env> Env for IncrementalAction<E> {
    fn observation_space(&self) -> SpaceSpec {
        self.inner.observation_space()
    }

    fn action_space(&self) -> SpaceSpec {
        SpaceSpec::Box { dims: self.dims.iter().map(|d| BoxDim::new(format!("{}_delta", d.name), -1.0, 1.0)).collect() }
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<(Observation, StepInfo), EnvError> {
        self.state.clone_from(&self.initial);
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let deltas = match action {
            Action::Continuous(d) if d.len() == self.dims.len() && d.iter().all(|x| !x.is_nan()) => d,
            _ => return Err(EnvError::BadAction(format!("expected {} deltas", self.dims.len()))),
        };
        for ((s, d), dim) in self.state.iter_mut().zip(deltas).zip(&self.dims) {
            *s = (*s + d.round().clamp(-1.0, 1.0)).clamp(dim.low, dim.high);
        }
        self.inner.step(&Action::Continuous(self.state.clone()))
    }

    fn close(&mut self) -> Result<(), EnvError> {
        self.inner.close()
    }
}

/// Concatenates the last `k` observations, oldest first.
pub struct StackObservations<E> {
    inner: E,
    k: usize,
    frames: VecDeque<Observation>,
}

impl<E: Env> StackObservations<E> {
    pub fn new(inner: E, k: usize) -> Result<Self, EnvError> {
        if k == 0 {
            return Err(EnvError::Config("stack window must be at least 1".into()));
        }
        Ok(Self { inner, k, frames: VecDeque::with_capacity(k) })
    }

    fn stacked(&self) -> Observation {
        self.frames.iter().flatten().copied().collect()
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Env> Env for StackObservations<E> {
    fn observation_space(&self) -> SpaceSpec {
        let base = self.inner.observation_space();
        let dims = (0..self.k)
            .flat_map(|lag| {
                let age = self.k - 1 - lag;
                base.dims()
                    .iter()
                    .map(move |d| BoxDim::new(format!("{}_t-{age}", d.name), d.low, d.high))
            })
            .collect();
        SpaceSpec::Box { dims }
    }

    fn action_space(&self) -> SpaceSpec {
        self.inner.action_space()
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<(Observation, StepInfo), EnvError> {
        let (obs, info) = self.inner.reset(seed)?;
        self.frames.clear();
        for _ in 0..self.k {
            self.frames.push_back(obs.clone());
        }
        Ok((self.stacked(), info))
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let mut r = self.inner.step(action)?;
        if self.frames.len() == self.k {
            self.frames.pop_front();
        }
        self.frames.push_back(std::mem::take(&mut r.observation));
        r.observation = self.stacked();
        Ok(r)
    }

    fn close(&mut self) -> Result<(), EnvError> {
        self.inner.close()
    }
}

/// Appends one monitor row per step (outer observation, applied setpoints)
/// to a file opened when the wrapper is built.
pub struct CsvLogger<E> {
    inner: E,
    writer: MonitorWriter,
}

impl<E: Env> CsvLogger<E> {
    pub fn new(inner: E, path: &Path) -> Result<Self, EnvError> {
        let obs_names = inner.observation_space().names();
        let act_names: Vec<String> = setpoint_dims().into_iter().map(|d| d.name).collect();
        let writer = MonitorWriter::create(path, &obs_names, &act_names).map_err(io_err(path))?;
        Ok(Self { inner, writer })
    }

    pub fn path(&self) -> PathBuf {
        self.writer.path().to_path_buf()
    }

    pub fn rows(&self) -> usize {
        self.writer.rows()
    }

    pub fn into_inner(self) -> E {
        self.inner
    }
}

impl<E: Env> Env for CsvLogger<E> {
    fn observation_space(&self) -> SpaceSpec {
        self.inner.observation_space()
    }

    fn action_space(&self) -> SpaceSpec {
        self.inner.action_space()
    }

    fn reset(&mut self, seed: Option<u64>) -> Result<(Observation, StepInfo), EnvError> {
        self.inner.reset(seed)
    }

    fn step(&mut self, action: &Action) -> Result<StepResult, EnvError> {
        let r = self.inner.step(action)?;
        let path = self.writer.path().to_path_buf();
        self.writer
            .write_row(&r.info, &r.observation, &r.info.applied_action, r.reward, r.truncated)
            .map_err(io_err(&path))?;
        Ok(r)
    }

    fn close(&mut self) -> Result<(), EnvError> {
        let path = self.writer.path().to_path_buf();
        self.writer.flush().map_err(io_err(&path))?;
        self.inner.close()
    }
}
