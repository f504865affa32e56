#[test]
fn documented_env_and_sweep_configs_parse() {
    let text = r#"{
  "building": "builtin:datacenter2zone",
  "weather_files": ["builtin:mixed"],
  "action_space": {"kind": "box", "dims": [
    {"name": "Heating_Setpoint_RL", "low": 15.0, "high": 22.0},
    {"name": "Cooling_Setpoint_RL", "low": 22.0, "high": 30.0}]},
  "time_variables": ["month", "day", "hour"],
  "weather_variability": {"sigma": 0.5, "mu": 0.1, "tau": 0.0},
  "reward": {"type": "linear", "energy_weight": 0.5, "lambda_energy": 5e-5,
             "lambda_temperature": 1.0},
  "run_period": {"start": [1, 1], "end": [12, 31]}
}"#;
    let c: vtb_core::EnvConfig = serde_json::from_str(text).unwrap();
    vtb_core::make_env(c).unwrap();
    let s = r#"{"base": {"env": {"preset": "vtb-datacenter-mixed-continuous-stochastic-v1"},
    "controller": {"kind": "cem", "config": {"iterations": 10}}, "episodes": 3, "seed": 5},
  "grid": [{"name": "cem.population", "values": [16, 32]}]}"#;
    let _: vtb_core::bench::SweepConfig = serde_json::from_str(s).unwrap();
}
#[test]
fn partial_reward_specs_take_defaults() {
    use vtb_core::rewards::{LinearRewardSpec, RewardSpec};
    let r: RewardSpec = serde_json::from_str(r#"{"type":"exponential","energy_weight":0.3,"exponent_scale":1.0}"#).unwrap();
    let expected = LinearRewardSpec { energy_weight: 0.3, ..LinearRewardSpec::default() };
    assert_eq!(r, RewardSpec::Exponential { base: expected, exponent_scale: 1.0 });
    let r: RewardSpec = serde_json::from_str(r#"{"type":"schedule","occupied_weight":1.0,"unoccupied_weight":0.1}"#).unwrap();
    assert_eq!(r.base(), &LinearRewardSpec::default());
    assert!(serde_json::from_str::<RewardSpec>(r#"{"type":"linear","energy_wieght":0.3}"#).is_err());
}
