//! Baseline controllers and a cross-entropy trainer for linear policies.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::env::{io_err, Action, BoxDim, Env, EnvError, SpaceSpec};
use crate::rng::{mix_seed, Stream};
use crate::wrappers::{denormalize, NormalizeAction, NormalizeObservation, RunningStats};

pub trait Controller {
    fn act(&mut self, observation: &[f64]) -> Action;
    fn reset(&mut self) {}
}

impl<C: Controller + ?Sized> Controller for Box<C> {
    fn act(&mut self, observation: &[f64]) -> Action {
        (**self).act(observation)
    }
    fn reset(&mut self) {
        (**self).reset()
    }
}

/// Fixed heating and cooling setpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StaticController {
    pub heating: f64,
    pub cooling: f64,
}

impl Default for StaticController {
    fn default() -> Self {
        Self { heating: 20.0, cooling: 23.0 }
    }
}

impl Controller for StaticController {
    fn act(&mut self, _observation: &[f64]) -> Action {
        Action::Continuous(vec![self.heating, self.cooling])
    }
}

/// Moves both setpoints one degree against the mean zone temperature when
/// it leaves the comfort range. Emits deltas for [`crate::wrappers::IncrementalAction`].
#[derive(Debug, Clone, PartialEq)]
pub struct RbcController {
    pub range: (f64, f64),
    /// Positions of the zone temperatures in the observation.
    pub zone_indices: Vec<usize>,
}

impl RbcController {
    pub fn new(range: (f64, f64), zone_indices: Vec<usize>) -> Self {
        Self { range, zone_indices }
    }

    /// Locates `*_air_temperature` entries in an observation space.
    pub fn for_space(range: (f64, f64), observation_space: &SpaceSpec) -> Result<Self, EnvError> {
        let zone_indices: Vec<usize> = observation_space
            .dims()
            .iter()
            .enumerate()
            .filter(|(_, d)| d.name.ends_with("_air_temperature"))
            .map(|(i, _)| i)
            .collect();
        if zone_indices.is_empty() {
            return Err(EnvError::Config("rule-based control needs zone air temperatures in the observation".into()));
        }
        Ok(Self::new(range, zone_indices))
    }

    pub fn delta_for(&self, mean_temp: f64) -> [f64; 2] {
        if mean_temp > self.range.1 {
            [-1.0, -1.0]
        } else if mean_temp < self.range.0 {
            [1.0, 1.0]
        } else {
            [0.0, 0.0]
        }
    }
}

impl Controller for RbcController {
    fn act(&mut self, observation: &[f64]) -> Action {
        let sum: f64 = self.zone_indices.iter().map(|&i| observation[i]).sum();
        let mean = sum / self.zone_indices.len() as f64;
        Action::Continuous(self.delta_for(mean).to_vec())
    }
}

/// Uniform actions over a box, or uniform indices over a discrete table.
#[derive(Debug, Clone)]
pub struct RandomController {
    space: SpaceSpec,
    rng: Stream,
}

impl RandomController {
    /// One stream per controller; it continues across episodes.
    pub fn new(space: SpaceSpec, seed: u64) -> Self {
        Self { space, rng: Stream::new(seed) }
    }
}

impl Controller for RandomController {
    fn act(&mut self, _observation: &[f64]) -> Action {
        match &self.space {
            SpaceSpec::Box { dims } => {
                Action::Continuous(dims.iter().map(|d| self.rng.uniform_in(d.low, d.high)).collect())
            }
            SpaceSpec::Discrete { table, .. } => Action::Discrete(self.rng.index(table.len())),
        }
    }
}

/// Runs a setpoint controller on a discrete environment by choosing the
/// nearest table entry (lowest index on ties).
pub struct NearestEntry<C> {
    pub inner: C,
    pub table: Vec<Vec<f64>>,
}

impl<C: Controller> Controller for NearestEntry<C> {
    fn act(&mut self, observation: &[f64]) -> Action {
        match self.inner.act(observation) {
            Action::Continuous(v) => {
                let dist = |row: &Vec<f64>| row.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                let mut best = 0;
                for (i, row) in self.table.iter().enumerate() {
                    if dist(row) < dist(&self.table[best]) {
                        best = i;
                    }
                }
                Action::Discrete(best)
            }
            discrete => discrete,
        }
    }

    fn reset(&mut self) {
        self.inner.reset()
    }
}

/// `tanh(W x + b)` on (optionally normalized) observations, mapped onto
/// the action bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearPolicy {
    pub observation_names: Vec<String>,
    pub action_dims: Vec<BoxDim>,
    /// `action_dim` rows of `obs_dim` entries.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    /// Applied to raw observations before the linear map.
    #[serde(default)]
    pub observation_stats: Option<RunningStats>,
}

impl LinearPolicy {
    pub fn zeros(observation_names: Vec<String>, action_dims: Vec<BoxDim>) -> Self {
        let n = observation_names.len();
        Self {
            weights: vec![vec![0.0; n]; action_dims.len()],
            bias: vec![0.0; action_dims.len()],
            observation_names,
            action_dims,
            observation_stats: None,
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.observation_names.len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_dims.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.action_dim() * (self.obs_dim() + 1)
    }

    /// Row-major weights followed by the bias.
    pub fn parameters(&self) -> Vec<f64> {
        self.weights.iter().flatten().chain(&self.bias).copied().collect()
    }

    pub fn set_parameters(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.parameter_count(), "parameter vector length");
        let n = self.obs_dim();
        for (row, chunk) in self.weights.iter_mut().zip(params.chunks(n)) {
            row.copy_from_slice(chunk);
        }
        let split = self.action_dim() * n;
        self.bias.copy_from_slice(&params[split..]);
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let shape_ok = self.weights.len() == self.action_dim()
            && self.bias.len() == self.action_dim()
            && self.weights.iter().all(|r| r.len() == self.obs_dim())
            && self.observation_stats.as_ref().is_none_or(|s| s.dim() == self.obs_dim());
        if !shape_ok {
            return Err(EnvError::Config("policy shapes are inconsistent".into()));
        }
        if !self.parameters().iter().all(|v| v.is_finite()) {
            return Err(EnvError::Config("policy has non-finite parameters".into()));
        }
        Ok(())
    }

    /// `tanh(W x + b)` on an already normalized observation.
    pub fn squashed(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| (row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b).tanh())
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<(), EnvError> {
        let text = serde_json::to_string_pretty(self).expect("policy serializes");
        std::fs::write(path, text).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let policy: Self =
            serde_json::from_str(&text).map_err(|e| EnvError::Config(format!("{}: {e}", path.display())))?;
        policy.validate()?;
        Ok(policy)
    }
}

/// Action of `policy` for a raw observation.
pub fn policy_act(policy: &LinearPolicy, observation: &[f64]) -> Vec<f64> {
    let squashed = match &policy.observation_stats {
        Some(stats) => policy.squashed(&stats.normalize(observation)),
        None => policy.squashed(observation),
    };
    squashed.iter().zip(&policy.action_dims).map(|(&a, d)| denormalize(a, d.low, d.high)).collect()
}

impl Controller for LinearPolicy {
    fn act(&mut self, observation: &[f64]) -> Action {
        Action::Continuous(policy_act(self, observation))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CemConfig {
    pub population: usize,
    pub elite_frac: f64,
    pub iterations: usize,
    pub init_std: f64,
    pub episodes_per_candidate: usize,
    /// Evaluate the distribution mean every this many iterations (0 = only at the end).
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub seed: u64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 32,
            elite_frac: 0.25,
            iterations: 50,
            init_std: 0.05,
            episodes_per_candidate: 1,
            eval_every: 5,
            eval_episodes: 1,
            seed: 0,
        }
    }
}

impl CemConfig {
    pub fn elite_count(&self) -> usize {
        (self.elite_frac * self.population as f64).ceil() as usize
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let bad = |m: &str| Err(EnvError::Config(format!("cem: {m}")));
        if self.population < 2 {
            return bad("population must be at least 2");
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 1.0) {
            return bad("elite_frac must be in (0, 1]");
        }
        if self.elite_count() < 1 {
            return bad("elite count must be at least 1");
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return bad("init_std must be > 0");
        }
        if self.episodes_per_candidate == 0 || self.eval_episodes == 0 {
            return bad("episode counts must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub mean_reward: f64,
    pub max_reward: f64,
    pub elite_mean_reward: f64,
    /// Mean-policy evaluation, present on evaluation iterations.
    pub eval_reward: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CemOutcome {
    /// Best evaluated policy, ready to act on raw observations.
    pub policy: LinearPolicy,
    pub best_eval_reward: f64,
    pub curve: Vec<CurvePoint>,
}

/// Gaussian search distribution after one refit.
pub fn refit(samples: &[Vec<f64>], scores: &[f64], elite_count: usize) -> (Vec<f64>, Vec<f64>) {
    let elites = elite_indices(scores, elite_count);
    let dim = samples[0].len();
    let k = elites.len() as f64;
    let mut mean = vec![0.0; dim];
    for &i in &elites {
        for (m, v) in mean.iter_mut().zip(&samples[i]) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= k);
    let mut std = vec![0.0; dim];
    for &i in &elites {
        for ((s, v), m) in std.iter_mut().zip(&samples[i]).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    std.iter_mut().for_each(|s| *s = (*s / k).sqrt());
    (mean, std)
}

/// Indices of the `k` highest scores; ties go to the lower index.
pub fn elite_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k.min(scores.len()));
    order
}

/// Mean episode reward of `policy` on an environment whose observations
/// are already normalized and whose actions live in [-1, 1].
fn rollout<E: Env>(env: &mut E, policy: &LinearPolicy, seed: u64, episodes: usize) -> Result<f64, EnvError> {
    let mut total = 0.0;
    for e in 0..episodes {
        let (mut obs, _) = env.reset(if e == 0 { Some(seed) } else { None })?;
        let mut sum = 0.0;
        let mut steps = 0usize;
        loop {
            let r = env.step(&Action::Continuous(policy.squashed(&obs)))?;
            sum += r.reward;
            steps += 1;
            if r.truncated || r.terminated {
                break;
            }
            obs = r.observation;
        }
        total += sum / steps as f64;
    }
    Ok(total / episodes as f64)
}

/// Observation statistics from one episode at the midpoint action.
pub fn collect_observation_stats<E: Env>(env: E, seed: u64) -> Result<(RunningStats, E), EnvError> {
    let mut norm = NormalizeObservation::new(NormalizeAction::new(env)?);
    let dim = norm.action_space().dims().len();
    norm.reset(Some(seed))?;
    loop {
        let r = norm.step(&Action::Continuous(vec![0.0; dim]))?;
        if r.truncated || r.terminated {
            break;
        }
    }
    Ok((norm.stats().clone(), norm.into_inner().into_inner()))
}

/// Trains a linear policy with the cross-entropy method.
///
/// Every candidate of iteration `i` is scored on the same episode seeds
/// (`mix_seed(seed, i)`), the search runs behind frozen observation
/// normalization and [-1, 1] action normalization, and the returned policy
/// is the distribution mean (initial or refitted) that scored best on a
/// held-out seed.
pub fn cem_train<E: Env>(env: E, config: &CemConfig) -> Result<CemOutcome, EnvError> {
    config.validate()?;
    let inner_dims = match env.action_space() {
        SpaceSpec::Box { dims } if !dims.is_empty() => dims,
        _ => return Err(EnvError::InvalidSpace("cem needs a non-empty continuous action box".into())),
    };
    let obs_names = env.observation_space().names();
    let eval_seed = mix_seed(config.seed, u64::MAX);
    let (stats, env) = collect_observation_stats(env, eval_seed)?;
    let mut env = NormalizeAction::new(NormalizeObservation::with_stats(env, stats.clone())?)?;

    let mut template = LinearPolicy::zeros(obs_names, inner_dims);
    let dim = template.parameter_count();
    let mut mean = vec![0.0; dim];
    let mut std = vec![config.init_std; dim];
    let mut rng = Stream::new(mix_seed(config.seed, 0x5A3D));
    let elite_count = config.elite_count();

    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut curve = Vec::with_capacity(config.iterations);
    let evaluate = |env: &mut NormalizeAction<NormalizeObservation<E>>,
                        template: &mut LinearPolicy,
                        params: &[f64],
                        best: &mut Option<(f64, Vec<f64>)>|
     -> Result<f64, EnvError> {
        template.set_parameters(params);
        let score = rollout(env, template, eval_seed, config.eval_episodes)?;
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            *best = Some((score, params.to_vec()));
        }
        Ok(score)
    };

    evaluate(&mut env, &mut template, &mean, &mut best)?;
    for iteration in 0..config.iterations {
        let episode_seed = mix_seed(config.seed, iteration as u64);
        let samples: Vec<Vec<f64>> = (0..config.population)
            .map(|_| mean.iter().zip(&std).map(|(m, s)| m + s * rng.normal()).collect())
            .collect();
        let mut scores = Vec::with_capacity(samples.len());
        for params in &samples {
            template.set_parameters(params);
            scores.push(rollout(&mut env, &template, episode_seed, config.episodes_per_candidate)?);
        }
        let elites = elite_indices(&scores, elite_count);
        let point_mean = scores.iter().sum::<f64>() / scores.len() as f64;
        let point_max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let elite_mean = elites.iter().map(|&i| scores[i]).sum::<f64>() / elites.len() as f64;
        (mean, std) = refit(&samples, &scores, elite_count);

        let last = iteration + 1 == config.iterations;
        let due = config.eval_every > 0 && (iteration + 1) % config.eval_every == 0;
        let eval_reward = if due || last { Some(evaluate(&mut env, &mut template, &mean, &mut best)?) } else { None };
        curve.push(CurvePoint {
            iteration,
            mean_reward: point_mean,
            max_reward: point_max,
            elite_mean_reward: elite_mean,
            eval_reward,
        });
    }
    let (best_eval_reward, params) = best.expect("at least one evaluation");
    template.set_parameters(&params);
    template.observation_stats = Some(stats);
    env.close()?;
    Ok(CemOutcome { policy: template, best_eval_reward, curve })
}


#[cfg(test)]
mod tests {
    use super::surrogate::QuadraticEnv;
    use super::*;
    use crate::env::setpoint_box;

    #[test]
    fn static_ignores_observation() {
        let mut c = StaticController::default();
        assert_eq!(c.act(&[1.0, 2.0]), Action::Continuous(vec![20.0, 23.0]));
        assert_eq!(c.act(&[-50.0]), Action::Continuous(vec![20.0, 23.0]));
    }

    #[test]
    fn rbc_rule() {
        let mut c = RbcController::new((18.0, 27.0), vec![0]);
        assert_eq!(c.act(&[28.0]), Action::Continuous(vec![-1.0, -1.0]));
        assert_eq!(c.act(&[22.0]), Action::Continuous(vec![0.0, 0.0]));
        assert_eq!(c.act(&[17.5]), Action::Continuous(vec![1.0, 1.0]));
        assert_eq!(c.act(&[27.0]), Action::Continuous(vec![0.0, 0.0]));
    }

    #[test]
    fn rbc_uses_zone_mean_only() {
        let mut a = RbcController::new((18.0, 27.0), vec![1, 2]);
        let mut b = RbcController::new((18.0, 27.0), vec![2, 1]);
        for obs in [[0.0, 30.0, 20.0], [5.0, 17.0, 18.5], [9.0, 26.0, 29.0]] {
            assert_eq!(a.act(&obs), b.act(&obs));
        }
    }

    #[test]
    fn random_is_seeded_and_bounded() {
        let space = setpoint_box();
        let mut a = RandomController::new(space.clone(), 5);
        let mut b = RandomController::new(space.clone(), 5);
        let mut sums = [0.0; 2];
        let n = 100_000;
        for _ in 0..n {
            let x = a.act(&[]);
            assert_eq!(x, b.act(&[]));
            assert!(space.contains(&x));
            let v = x.continuous().unwrap();
            sums[0] += v[0];
            sums[1] += v[1];
        }
        assert!((sums[0] / n as f64 - 18.5).abs() < 0.185);
        assert!((sums[1] / n as f64 - 26.0).abs() < 0.26);
    }

    #[test]
    fn random_discrete_indices() {
        let space = SpaceSpec::Discrete {
            dims: crate::env::setpoint_dims(),
            table: crate::env::default_discrete_table(),
        };
        let mut c = RandomController::new(space.clone(), 1);
        for _ in 0..1000 {
            assert!(space.contains(&c.act(&[])));
        }
    }

    fn small_policy() -> LinearPolicy {
        LinearPolicy::zeros(vec!["a".into(), "b".into()], crate::env::setpoint_dims())
    }

    #[test]
    fn nearest_entry_maps_setpoints_to_indices() {
        let mut c = NearestEntry { inner: StaticController::default(), table: crate::env::default_discrete_table() };
        // (20, 23) is row 5 * 9 + 1.
        assert_eq!(c.act(&[]), Action::Discrete(46));
    }

    #[test]
    fn zero_policy_gives_midpoint() {
        assert_eq!(policy_act(&small_policy(), &[3.0, -4.0]), vec![18.5, 26.0]);
    }

    #[test]
    fn policy_output_is_bounded_and_monotone() {
        let mut p = small_policy();
        let obs = [1.5, -0.5];
        let mut prev = f64::NEG_INFINITY;
        for k in -20..=20 {
            p.weights[0][0] = k as f64 * 0.1;
            let a = policy_act(&p, &obs);
            assert!((15.0..=22.0).contains(&a[0]) && (22.0..=30.0).contains(&a[1]));
            assert!(a[0] > prev);
            prev = a[0];
        }
    }

    #[test]
    fn parameter_round_trip() {
        let mut p = small_policy();
        let params: Vec<f64> = (0..p.parameter_count()).map(|i| i as f64).collect();
        p.set_parameters(&params);
        assert_eq!(p.parameters(), params);
        assert_eq!(p.weights[1], vec![2.0, 3.0]);
        assert_eq!(p.bias, vec![4.0, 5.0]);
    }

    #[test]
    fn policy_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let mut p = small_policy();
        p.set_parameters(&[0.1, -0.2, 0.3, 1.0 / 3.0, 0.5, -0.6]);
        p.save(&path).unwrap();
        assert_eq!(LinearPolicy::load(&path).unwrap(), p);
    }

    #[test]
    fn elites_break_ties_by_index() {
        assert_eq!(elite_indices(&[1.0, 3.0, 3.0, 2.0], 2), vec![1, 2]);
        assert_eq!(elite_indices(&[0.0, 0.0, 0.0], 2), vec![0, 1]);
    }

    #[test]
    fn full_elite_refit_equals_population_moments() {
        let samples = vec![vec![1.0, 10.0], vec![2.0, 20.0], vec![4.0, 0.0], vec![5.0, 30.0]];
        let scores = [0.3, -1.0, 2.0, 0.0];
        let (mean, std) = refit(&samples, &scores, 4);
        assert_eq!(mean, vec![3.0, 15.0]);
        let var0: f64 = [1.0f64, 2.0, 4.0, 5.0].iter().map(|v| (v - 3.0).powi(2)).sum::<f64>() / 4.0;
        let var1: f64 = [10.0f64, 20.0, 0.0, 30.0].iter().map(|v| (v - 15.0).powi(2)).sum::<f64>() / 4.0;
        assert!((std[0] - var0.sqrt()).abs() < 1e-15);
        assert!((std[1] - var1.sqrt()).abs() < 1e-15);
    }

    fn surrogate_config(seed: u64) -> CemConfig {
        CemConfig { population: 32, iterations: 20, init_std: 1.0, eval_every: 1, seed, ..CemConfig::default() }
    }

    #[test]
    fn cem_finds_surrogate_optimum() {
        let out = cem_train(QuadraticEnv::new(0.3), &surrogate_config(11)).unwrap();
        let a = policy_act(&out.policy, &[0.0])[0];
        assert!((a - 0.3).abs() < 0.05, "action {a}");
        assert_eq!(out.curve.len(), 20);
    }

    #[test]
    fn cem_elite_mean_trends_upward() {
        // Median over seeds of the number of iterations where the elite mean drops.
        let mut drops: Vec<usize> = (0..5)
            .map(|s| {
                let out = cem_train(QuadraticEnv::new(0.3), &surrogate_config(s)).unwrap();
                out.curve
                    .windows(2)
                    .filter(|w| w[1].elite_mean_reward < w[0].elite_mean_reward - 1e-3)
                    .count()
            })
            .collect();
        drops.sort();
        assert_eq!(drops[2], 0, "{drops:?}");
    }

    #[test]
    fn cem_is_deterministic() {
        let a = cem_train(QuadraticEnv::new(-0.4), &surrogate_config(3)).unwrap();
        let b = cem_train(QuadraticEnv::new(-0.4), &surrogate_config(3)).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.policy, b.policy);
    }

    #[test]
    fn cem_rejects_bad_config() {
        let c = CemConfig { population: 1, ..CemConfig::default() };
        assert!(cem_train(QuadraticEnv::new(0.0), &c).is_err());
        let c = CemConfig { elite_frac: 0.0, ..CemConfig::default() };
        assert!(cem_train(QuadraticEnv::new(0.0), &c).is_err());
    }
}
