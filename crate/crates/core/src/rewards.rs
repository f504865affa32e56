//! Reward functions combining an energy term and a thermal-comfort term.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::weather::day_of_year;

#[derive(Debug, Error, PartialEq)]
pub enum RewardError {
    #[error("schedule reward requires an occupancy value")]
    MissingOccupancy,
    #[error("invalid reward specification: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimDate {
    pub month: u8,
    pub day: u8,
    pub hour: u8,
}

#[derive(Debug, Clone, Copy)]
pub struct RewardInput<'a> {
    pub zone_temps: &'a [f64],
    /// Facility HVAC electric demand (W).
    pub electric_power: f64,
    pub date: SimDate,
    pub occupancy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardOutput {
    pub total: f64,
    pub energy_term: f64,
    pub comfort_term: f64,
    /// Sum over zones of degrees outside the active comfort range.
    pub violation_degrees: f64,
    pub power: f64,
}

/// Parameters shared by every reward family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinearRewardSpec {
    pub energy_weight: f64,
    pub lambda_energy: f64,
    pub lambda_temperature: f64,
    pub range_comfort_winter: (f64, f64),
    pub range_comfort_summer: (f64, f64),
    /// (month, day), inclusive.
    pub summer_start: (u8, u8),
    /// (month, day), inclusive.
    pub summer_final: (u8, u8),
}

impl Default for LinearRewardSpec {
    /// Datacenter configuration: equal weights, 18-27 C all year.
    fn default() -> Self {
        Self {
            energy_weight: 0.5,
            lambda_energy: 0.00005,
            lambda_temperature: 1.0,
            range_comfort_winter: (18.0, 27.0),
            range_comfort_summer: (18.0, 27.0),
            summer_start: (6, 1),
            summer_final: (9, 30),
        }
    }
}

impl LinearRewardSpec {
    pub fn validate(&self) -> Result<(), RewardError> {
        let invalid = |m: String| Err(RewardError::Invalid(m));
        if !(0.0..=1.0).contains(&self.energy_weight) {
            return invalid(format!("energy_weight {} outside [0, 1]", self.energy_weight));
        }
        if !(self.lambda_energy >= 0.0) || !(self.lambda_temperature >= 0.0) {
            return invalid("lambda_energy and lambda_temperature must be >= 0".into());
        }
        for (name, (lo, hi)) in [
            ("range_comfort_winter", self.range_comfort_winter),
            ("range_comfort_summer", self.range_comfort_summer),
        ] {
            if !(lo < hi) {
                return invalid(format!("{name}: lower {lo} must be below upper {hi}"));
            }
        }
        for (name, (m, d)) in [("summer_start", self.summer_start), ("summer_final", self.summer_final)] {
            if day_of_year(m, d).is_none() {
                return invalid(format!("{name}: ({m}, {d}) is not a calendar date"));
            }
        }
        Ok(())
    }

    pub fn is_summer(&self, date: SimDate) -> bool {
        let key = (date.month, date.day);
        if self.summer_start <= self.summer_final {
            self.summer_start <= key && key <= self.summer_final
        } else {
            key >= self.summer_start || key <= self.summer_final
        }
    }

    pub fn active_range(&self, date: SimDate) -> (f64, f64) {
        if self.is_summer(date) {
            self.range_comfort_summer
        } else {
            self.range_comfort_winter
        }
    }

    fn energy_term(&self, power: f64) -> f64 {
        -self.energy_weight * self.lambda_energy * power
    }

    fn comfort_weight(&self) -> f64 {
        (1.0 - self.energy_weight) * self.lambda_temperature
    }
}

/// Degrees outside `[low, up]` summed over zones; bounds are inclusive.
pub fn comfort_violation(zone_temps: &[f64], range: (f64, f64)) -> f64 {
    let (low, up) = range;
    zone_temps
        .iter()
        .map(|&t| (low - t).max(0.0) + (t - up).max(0.0))
        .sum()
}

pub fn linear_reward(input: &RewardInput, spec: &LinearRewardSpec) -> RewardOutput {
    let violation = comfort_violation(input.zone_temps, spec.active_range(input.date));
    let energy_term = spec.energy_term(input.electric_power);
    let comfort_term = if violation > 0.0 { -spec.comfort_weight() * violation } else { 0.0 };
    RewardOutput {
        total: energy_term + comfort_term,
        energy_term,
        comfort_term,
        violation_degrees: violation,
        power: input.electric_power,
    }
}

/// Comfort penalty grows as `exp(k * violation) - 1`.
pub fn exponential_reward(input: &RewardInput, spec: &LinearRewardSpec, exponent_scale: f64) -> RewardOutput {
    let violation = comfort_violation(input.zone_temps, spec.active_range(input.date));
    let energy_term = spec.energy_term(input.electric_power);
    let comfort_term = if violation > 0.0 {
        -spec.comfort_weight() * (exponent_scale * violation).exp_m1()
    } else {
        0.0
    };
    RewardOutput {
        total: energy_term + comfort_term,
        energy_term,
        comfort_term,
        violation_degrees: violation,
        power: input.electric_power,
    }
}

/// Linear reward whose comfort term is scaled by occupancy.
pub fn schedule_reward(
    input: &RewardInput,
    spec: &LinearRewardSpec,
    occupied_weight: f64,
    unoccupied_weight: f64,
) -> Result<RewardOutput, RewardError> {
    let occupancy = input.occupancy.ok_or(RewardError::MissingOccupancy)?;
    let mut out = linear_reward(input, spec);
    let weight = if occupancy > 0.0 { occupied_weight } else { unoccupied_weight };
    if out.comfort_term != 0.0 {
        out.comfort_term = if weight == 0.0 { 0.0 } else { out.comfort_term * weight };
        out.total = out.energy_term + out.comfort_term;
    }
    Ok(out)
}

/// Anything that scores a post-step state.
pub trait RewardFunction: Send + Sync {
    fn evaluate(&self, input: &RewardInput) -> Result<RewardOutput, RewardError>;
}

/// Data-configured reward families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RewardSpec {
    Linear(LinearRewardSpec),
    Exponential {
        #[serde(flatten)]
        base: LinearRewardSpec,
        exponent_scale: f64,
    },
    Schedule {
        #[serde(flatten)]
        base: LinearRewardSpec,
        occupied_weight: f64,
        unoccupied_weight: f64,
    },
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec::Linear(LinearRewardSpec::default())
    }
}

impl RewardSpec {
    pub fn base(&self) -> &LinearRewardSpec {
        match self {
            RewardSpec::Linear(b) | RewardSpec::Exponential { base: b, .. } | RewardSpec::Schedule { base: b, .. } => b,
        }
    }

    pub fn base_mut(&mut self) -> &mut LinearRewardSpec {
        match self {
            RewardSpec::Linear(b) | RewardSpec::Exponential { base: b, .. } | RewardSpec::Schedule { base: b, .. } => b,
        }
    }

    pub fn validate(&self) -> Result<(), RewardError> {
        self.base().validate()?;
        match self {
            RewardSpec::Linear(_) => Ok(()),
            RewardSpec::Exponential { exponent_scale, .. } => {
                if *exponent_scale > 0.0 {
                    Ok(())
                } else {
                    Err(RewardError::Invalid(format!("exponent_scale {exponent_scale} must be > 0")))
                }
            }
            RewardSpec::Schedule { occupied_weight, unoccupied_weight, .. } => {
                if *occupied_weight >= 0.0 && *unoccupied_weight >= 0.0 {
                    Ok(())
                } else {
                    Err(RewardError::Invalid("schedule weights must be >= 0".into()))
                }
            }
        }
    }
}

impl RewardFunction for RewardSpec {
    fn evaluate(&self, input: &RewardInput) -> Result<RewardOutput, RewardError> {
        match self {
            RewardSpec::Linear(spec) => Ok(linear_reward(input, spec)),
            RewardSpec::Exponential { base, exponent_scale } => Ok(exponential_reward(input, base, *exponent_scale)),
            RewardSpec::Schedule { base, occupied_weight, unoccupied_weight } => {
                schedule_reward(input, base, *occupied_weight, *unoccupied_weight)
            }
        }
    }
}
