//! Named environment presets: building x climate x action kind x
//! optional weather noise.

use crate::env::{default_discrete_table, setpoint_box, setpoint_dims, EnvConfig, EnvError, SpaceSpec};
use crate::rewards::{LinearRewardSpec, RewardSpec};
use crate::weather::OuParams;

pub const PRESET_BUILDINGS: [&str; 2] = ["datacenter", "fivezone"];
pub const PRESET_CLIMATES: [&str; 3] = ["hot", "mixed", "cool"];

/// Noise used by the `-stochastic` presets.
pub const PRESET_VARIABILITY: OuParams = OuParams { sigma: 0.5, mu: 0.1, tau: 0.0 };

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresetInfo {
    pub name: String,
    pub building: &'static str,
    pub climate: &'static str,
    pub discrete: bool,
    pub stochastic: bool,
}

fn preset_name(building: &str, climate: &str, discrete: bool, stochastic: bool) -> String {
    format!(
        "vtb-{building}-{climate}-{}{}-v1",
        if discrete { "discrete" } else { "continuous" },
        if stochastic { "-stochastic" } else { "" }
    )
}

pub fn preset_catalog() -> Vec<PresetInfo> {
    let mut out = Vec::with_capacity(24);
    for building in PRESET_BUILDINGS {
        for climate in PRESET_CLIMATES {
            for discrete in [false, true] {
                for stochastic in [false, true] {
                    out.push(PresetInfo {
                        name: preset_name(building, climate, discrete, stochastic),
                        building,
                        climate,
                        discrete,
                        stochastic,
                    });
                }
            }
        }
    }
    out
}

pub fn preset_names() -> Vec<String> {
    preset_catalog().into_iter().map(|p| p.name).collect()
}

fn building_source(building: &str) -> &'static str {
    match building {
        "datacenter" => "builtin:datacenter2zone",
        _ => "builtin:fivezone",
    }
}

fn building_reward(building: &str) -> RewardSpec {
    match building {
        "datacenter" => RewardSpec::Linear(LinearRewardSpec::default()),
        _ => RewardSpec::Linear(LinearRewardSpec {
            lambda_energy: 1e-4,
            range_comfort_winter: (20.0, 23.5),
            range_comfort_summer: (23.0, 26.0),
            ..LinearRewardSpec::default()
        }),
    }
}

/// Resolves a preset name to a headless configuration.
pub fn preset_config(name: &str) -> Result<EnvConfig, EnvError> {
    let info = preset_catalog()
        .into_iter()
        .find(|p| p.name == name)
        .ok_or_else(|| EnvError::UnknownPreset(name.to_string()))?;
    let mut config = EnvConfig::new(building_source(info.building), format!("builtin:{}", info.climate));
    config.env_name = info.name.clone();
    config.action_space = Some(if info.discrete {
        SpaceSpec::Discrete { dims: setpoint_dims(), table: default_discrete_table() }
    } else {
        setpoint_box()
    });
    config.weather_variability = info.stochastic.then_some(PRESET_VARIABILITY);
    config.reward = building_reward(info.building);
    Ok(config)
}
