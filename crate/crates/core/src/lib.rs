//! Building-control benchmark: weather, a multi-zone thermal model, an
//! episodic environment with rewards and wrappers, baseline controllers,
//! experiment tooling and a JSON-lines wire protocol.

pub mod bench;
pub mod controllers;
pub mod env;
pub mod monitor;
pub mod presets;
pub mod rewards;
pub mod rng;
pub mod thermal;
pub mod weather;
pub mod wire;
pub mod wrappers;

pub use env::{make_env, Action, Env, EnvConfig, EnvError, EnvTemplate, Environment, Observation, SpaceSpec, StepInfo, StepResult};
pub use presets::{preset_config, preset_names};
