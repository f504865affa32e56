//! Lumped RC thermal network with an ideal-load HVAC plant.
//!
//! Each zone is a single capacitance connected to the outdoor air through
//! its envelope resistance and to other zones through coupling
//! resistances. Zone temperatures advance by explicit Euler.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::weather::WeatherRecord;

pub const DEFAULT_INITIAL_TEMP: f64 = 21.0;

#[derive(Debug, Error)]
pub enum ThermalError {
    #[error("building descriptor schema error: {0}")]
    Schema(String),
    #[error("coupling references unknown zone '{0}'")]
    UnknownZoneInCoupling(String),
    #[error("timestep {dt} s exceeds the explicit stability bound {bound} s")]
    UnstableTimestep { dt: f64, bound: f64 },
    #[error("steady-state system is singular")]
    SingularSystem,
    #[error("invalid HVAC command: {0}")]
    InvalidCommand(String),
    #[error("cannot read building descriptor {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ZoneConfig {
    pub name: String,
    #[serde(rename = "capacitance_J_per_K")]
    pub capacitance: f64,
    #[serde(rename = "envelope_resistance_K_per_W")]
    pub envelope_resistance: f64,
    #[serde(rename = "internal_gain_W", default)]
    pub internal_gain: f64,
    #[serde(default)]
    pub solar_aperture: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingConfig {
    pub zone_a: String,
    pub zone_b: String,
    #[serde(rename = "resistance_K_per_W")]
    pub resistance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HvacConfig {
    pub cop_heat: f64,
    pub cop_cool: f64,
    /// Per-zone heating capacity.
    #[serde(rename = "max_heat_W")]
    pub max_heat: f64,
    /// Per-zone cooling capacity.
    #[serde(rename = "max_cool_W")]
    pub max_cool: f64,
    #[serde(rename = "fan_W")]
    pub fan_power: f64,
    #[serde(rename = "deadband_K", default)]
    pub deadband: f64,
}

/// Daily occupancy window, applied to every day of the year.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OccupancySchedule {
    pub start_hour: u8,
    pub end_hour: u8,
    pub occupants: f64,
}

impl OccupancySchedule {
    pub fn occupants_at(&self, hour: u8) -> f64 {
        if hour >= self.start_hour && hour < self.end_hour {
            self.occupants
        } else {
            0.0
        }
    }
}

/// On-disk building descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BuildingDescriptor {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub description: Option<String>,
    pub zones: Vec<ZoneConfig>,
    #[serde(default)]
    pub couplings: Vec<CouplingConfig>,
    pub hvac: HvacConfig,
    #[serde(rename = "initial_temp_C", default = "default_initial_temp")]
    pub initial_temp: f64,
    #[serde(default)]
    pub occupancy: Option<OccupancySchedule>,
}

fn default_initial_temp() -> f64 {
    DEFAULT_INITIAL_TEMP
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvacCommand {
    pub heating_setpoint: f64,
    pub cooling_setpoint: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HvacResult {
    /// Signed per-zone thermal power, positive when heating.
    pub thermal_power: Vec<f64>,
    /// Fan plus compressor/heater electric demand.
    pub electric_power: f64,
}

#[derive(Debug, Clone)]
struct Link {
    a: usize,
    b: usize,
    conductance: f64,
}

#[derive(Debug, Clone)]
pub struct BuildingModel {
    pub name: String,
    pub zones: Vec<ZoneConfig>,
    pub couplings: Vec<CouplingConfig>,
    pub hvac: HvacConfig,
    pub occupancy: Option<OccupancySchedule>,
    pub initial_temp: f64,
    pub zone_temps: Vec<f64>,
    links: Vec<Link>,
    stability_bound: f64,
    scratch: Vec<f64>,
}

fn positive(field: &str, v: f64) -> Result<(), ThermalError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ThermalError::Schema(format!("{field} must be > 0 (got {v})")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<(), ThermalError> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(ThermalError::Schema(format!("{field} must be >= 0 (got {v})")))
    }
}

impl BuildingModel {
    pub fn from_descriptor(desc: BuildingDescriptor) -> Result<Self, ThermalError> {
        if desc.zones.is_empty() {
            return Err(ThermalError::Schema("zones: at least one zone is required".into()));
        }
        for z in &desc.zones {
            positive(&format!("zones[{}].capacitance_J_per_K", z.name), z.capacitance)?;
            positive(&format!("zones[{}].envelope_resistance_K_per_W", z.name), z.envelope_resistance)?;
            non_negative(&format!("zones[{}].internal_gain_W", z.name), z.internal_gain)?;
            non_negative(&format!("zones[{}].solar_aperture", z.name), z.solar_aperture)?;
        }
        for (i, z) in desc.zones.iter().enumerate() {
            if desc.zones[..i].iter().any(|o| o.name == z.name) {
                return Err(ThermalError::Schema(format!("duplicate zone name '{}'", z.name)));
            }
        }
        let h = &desc.hvac;
        positive("hvac.cop_heat", h.cop_heat)?;
        positive("hvac.cop_cool", h.cop_cool)?;
        non_negative("hvac.max_heat_W", h.max_heat)?;
        non_negative("hvac.max_cool_W", h.max_cool)?;
        non_negative("hvac.fan_W", h.fan_power)?;
        non_negative("hvac.deadband_K", h.deadband)?;
        if !desc.initial_temp.is_finite() {
            return Err(ThermalError::Schema("initial_temp_C must be finite".into()));
        }

        let index_of = |name: &str| {
            desc.zones
                .iter()
                .position(|z| z.name == name)
                .ok_or_else(|| ThermalError::UnknownZoneInCoupling(name.to_string()))
        };
        let mut links = Vec::with_capacity(desc.couplings.len());
        for c in &desc.couplings {
            let a = index_of(&c.zone_a)?;
            let b = index_of(&c.zone_b)?;
            if a == b {
                return Err(ThermalError::Schema(format!("coupling of zone '{}' with itself", c.zone_a)));
            }
            positive("couplings.resistance_K_per_W", c.resistance)?;
            links.push(Link { a, b, conductance: 1.0 / c.resistance });
        }

        let n = desc.zones.len();
        let mut total_conductance: Vec<f64> = desc.zones.iter().map(|z| 1.0 / z.envelope_resistance).collect();
        for l in &links {
            total_conductance[l.a] += l.conductance;
            total_conductance[l.b] += l.conductance;
        }
        let stability_bound = desc
            .zones
            .iter()
            .zip(&total_conductance)
            .map(|(z, g)| z.capacitance / (4.0 * g))
            .fold(f64::INFINITY, f64::min);

        Ok(Self {
            name: desc.name.unwrap_or_else(|| "building".into()),
            zone_temps: vec![desc.initial_temp; n],
            zones: desc.zones,
            couplings: desc.couplings,
            hvac: desc.hvac,
            occupancy: desc.occupancy,
            initial_temp: desc.initial_temp,
            links,
            stability_bound,
            scratch: vec![0.0; n],
        })
    }

    pub fn from_json(text: &str) -> Result<Self, ThermalError> {
        let desc: BuildingDescriptor =
            serde_json::from_str(text).map_err(|e| ThermalError::Schema(e.to_string()))?;
        Self::from_descriptor(desc)
    }

    pub fn load(path: &Path) -> Result<Self, ThermalError> {
        let text = std::fs::read_to_string(path).map_err(|source| ThermalError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn zone_count(&self) -> usize {
        self.zones.len()
    }

    /// Largest admissible Euler step: min over zones of `C / (4 G_total)`.
    pub fn stability_bound(&self) -> f64 {
        self.stability_bound
    }

    pub fn reset_temps(&mut self) {
        self.zone_temps.iter_mut().for_each(|t| *t = self.initial_temp);
    }

    pub fn occupants_at(&self, hour: u8) -> Option<f64> {
        self.occupancy.as_ref().map(|o| o.occupants_at(hour))
    }

    pub fn validate_command(&self, cmd: &HvacCommand) -> Result<(), ThermalError> {
        if !cmd.heating_setpoint.is_finite() || !cmd.cooling_setpoint.is_finite() {
            return Err(ThermalError::InvalidCommand("non-finite setpoint".into()));
        }
        if cmd.heating_setpoint + self.hvac.deadband > cmd.cooling_setpoint {
            return Err(ThermalError::InvalidCommand(format!(
                "heating {} + deadband {} exceeds cooling {}",
                cmd.heating_setpoint, self.hvac.deadband, cmd.cooling_setpoint
            )));
        }
        Ok(())
    }

    /// Advances the zones by `dt` seconds and reports the plant output.
    pub fn step(&mut self, weather: &WeatherRecord, cmd: &HvacCommand, dt: f64) -> Result<HvacResult, ThermalError> {
        if !(dt > 0.0) || dt > self.stability_bound {
            return Err(ThermalError::UnstableTimestep { dt, bound: self.stability_bound });
        }
        self.validate_command(cmd)?;
        let electric_power = self.advance(weather.drybulb, weather.direct_normal_rad + weather.diffuse_horiz_rad, cmd, dt);
        Ok(HvacResult {
            thermal_power: self.scratch.clone(),
            electric_power,
        })
    }

    /// Unchecked substep used by the environment after it has validated
    /// `dt` and the command once. Returns electric power; per-zone thermal
    /// power is left in the scratch buffer.
    pub(crate) fn advance(&mut self, outdoor: f64, solar: f64, cmd: &HvacCommand, dt: f64) -> f64 {
        let q = &mut self.scratch;
        for (i, z) in self.zones.iter().enumerate() {
            q[i] = (outdoor - self.zone_temps[i]) / z.envelope_resistance + z.internal_gain + z.solar_aperture * solar;
        }
        for l in &self.links {
            let flow = (self.zone_temps[l.b] - self.zone_temps[l.a]) * l.conductance;
            q[l.a] += flow;
            q[l.b] -= flow;
        }
        let mut electric = self.hvac.fan_power;
        for (i, z) in self.zones.iter().enumerate() {
            let gain_per_watt = dt / z.capacitance;
            let free_floating = self.zone_temps[i] + gain_per_watt * q[i];
            let hvac = if free_floating < cmd.heating_setpoint {
                (z.capacitance * (cmd.heating_setpoint - free_floating) / dt).min(self.hvac.max_heat)
            } else if free_floating > cmd.cooling_setpoint {
                -(z.capacitance * (free_floating - cmd.cooling_setpoint) / dt).min(self.hvac.max_cool)
            } else {
                0.0
            };
            if hvac > 0.0 {
                electric += hvac / self.hvac.cop_heat;
            } else if hvac < 0.0 {
                electric += -hvac / self.hvac.cop_cool;
            }
            self.zone_temps[i] = if hvac == 0.0 { free_floating } else { free_floating + gain_per_watt * hvac };
            q[i] = hvac;
        }
        electric
    }

    /// Solves the steady-state balance for a constant outdoor temperature
    /// with zero solar gain. With `cmd = None` the plant is off; otherwise
    /// zones outside the setpoint band are held at the violated setpoint as
    /// far as capacity allows.
    pub fn steady_state_temp(&self, outdoor: f64, cmd: Option<&HvacCommand>) -> Result<Vec<f64>, ThermalError> {
        #[derive(Clone, Copy, PartialEq)]
        enum Mode {
            Free,
            Held { setpoint: f64, heating: bool },
            Fixed(f64),
        }
        let n = self.zones.len();
        let mut modes = vec![Mode::Free; n];
        let passive_balance = |temps: &DVector<f64>, i: usize| {
            let z = &self.zones[i];
            let mut q = (outdoor - temps[i]) / z.envelope_resistance + z.internal_gain;
            for l in &self.links {
                if l.a == i {
                    q += (temps[l.b] - temps[i]) * l.conductance;
                } else if l.b == i {
                    q += (temps[l.a] - temps[i]) * l.conductance;
                }
            }
            q
        };

        for _ in 0..(4 * n + 8) {
            let mut a = DMatrix::<f64>::zeros(n, n);
            let mut rhs = DVector::<f64>::zeros(n);
            for (i, z) in self.zones.iter().enumerate() {
                if let Mode::Held { setpoint, .. } = modes[i] {
                    a[(i, i)] = 1.0;
                    rhs[i] = setpoint;
                    continue;
                }
                let g_env = 1.0 / z.envelope_resistance;
                a[(i, i)] -= g_env;
                rhs[i] -= g_env * outdoor + z.internal_gain;
                if let Mode::Fixed(q) = modes[i] {
                    rhs[i] -= q;
                }
            }
            for l in &self.links {
                for (row, other) in [(l.a, l.b), (l.b, l.a)] {
                    if matches!(modes[row], Mode::Held { .. }) {
                        continue;
                    }
                    a[(row, row)] -= l.conductance;
                    a[(row, other)] += l.conductance;
                }
            }
            let temps = a.lu().solve(&rhs).ok_or(ThermalError::SingularSystem)?;
            let Some(cmd) = cmd else {
                return Ok(temps.iter().copied().collect());
            };

            let mut changed = false;
            for i in 0..n {
                let next = match modes[i] {
                    Mode::Free if temps[i] < cmd.heating_setpoint => Mode::Held {
                        setpoint: cmd.heating_setpoint,
                        heating: true,
                    },
                    Mode::Free if temps[i] > cmd.cooling_setpoint => Mode::Held {
                        setpoint: cmd.cooling_setpoint,
                        heating: false,
                    },
                    Mode::Free => Mode::Free,
                    held @ Mode::Held { heating, .. } => {
                        let q = -passive_balance(&temps, i);
                        if heating && q < 0.0 || !heating && q > 0.0 {
                            Mode::Free
                        } else if q > self.hvac.max_heat {
                            Mode::Fixed(self.hvac.max_heat)
                        } else if q < -self.hvac.max_cool {
                            Mode::Fixed(-self.hvac.max_cool)
                        } else {
                            held
                        }
                    }
                    Mode::Fixed(q) if q > 0.0 && temps[i] > cmd.heating_setpoint => Mode::Free,
                    Mode::Fixed(q) if q < 0.0 && temps[i] < cmd.cooling_setpoint => Mode::Free,
                    Mode::Fixed(q) => Mode::Fixed(q),
                };
                if next != modes[i] {
                    modes[i] = next;
                    changed = true;
                }
            }
            if !changed {
                return Ok(temps.iter().copied().collect());
            }
        }
        Err(ThermalError::SingularSystem)
    }
}

/// Descriptors shipped with the crate, by name.
pub fn builtin_building_json(name: &str) -> Option<&'static str> {
    match name {
        "datacenter2zone" => Some(include_str!("../data/buildings/datacenter2zone.json")),
        "fivezone" => Some(include_str!("../data/buildings/fivezone.json")),
        _ => None,
    }
}

pub const BUILTIN_BUILDINGS: [&str; 2] = ["datacenter2zone", "fivezone"];
