use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, CommandFactory, Parser, Subcommand};

use vtb_core::bench::{
    compare, grid_sweep, read_metrics, run_experiment, write_savings, write_training_curve, ControllerSpec, EnvSource,
    ExperimentConfig, SweepConfig,
};
use vtb_core::controllers::{cem_train, CemConfig};
use vtb_core::env::make_env;
use vtb_core::presets::{preset_catalog, preset_config};
use vtb_core::weather::{import_epw, write_weather_csv};
use vtb_core::wire::{serve_tcp, Server};

const SEED_ENV: &str = "SINERGYM_STYLE_SEED";

#[derive(Debug, Parser)]
#[command(name = "vtb", version, about = "Building HVAC control testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// List the environment presets.
    ListEnvs,
    /// Run a controller for a number of episodes and record metrics.
    Run(RunArgs),
    /// Train a linear policy with the cross-entropy method.
    TrainCem(TrainArgs),
    /// Run a parameter grid and rank the combinations.
    Sweep(SweepArgs),
    /// Serve environments over the JSON-lines protocol.
    Serve(ServeArgs),
    /// Convert an EPW weather file to the testbed CSV format.
    ImportWeather(ImportArgs),
    /// Energy savings of candidate runs relative to a reference run.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    env: String,
    /// static, rbc, random, cem or policy:<file>
    #[arg(long, value_parser = ControllerSpec::parse)]
    controller: ControllerSpec,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    episodes: u64,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    env: String,
    /// JSON training configuration; omitted fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configuration's seed.
    #[arg(long, env = SEED_ENV)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    parallel: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, required_unless_present = "stdio", conflicts_with = "stdio")]
    port: Option<u16>,
    #[arg(long)]
    stdio: bool,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Seconds before an idle session is closed.
    #[arg(long, default_value_t = 600)]
    idle_timeout: u64,
    /// Write episode folders under this directory.
    #[arg(long)]
    output_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ImportArgs {
    #[arg(long)]
    epw: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CompareArgs {
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long = "cand", required = true, num_args = 1..)]
    candidates: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn list_envs() -> Result<()> {
    let mut out = std::io::stdout().lock();
    writeln!(out, "{:<48} {:<11} {:<7} {:<11} weather", "name", "building", "climate", "actions")?;
    for p in preset_catalog() {
        writeln!(
            out,
            "{:<48} {:<11} {:<7} {:<11} {}",
            p.name,
            p.building,
            p.climate,
            if p.discrete { "discrete" } else { "continuous" },
            if p.stochastic { "stochastic" } else { "fixed" }
        )?;
    }
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let config = ExperimentConfig {
        env: EnvSource::Preset(args.env),
        controller: args.controller,
        episodes: args.episodes as usize,
        seed: args.seed,
        out_dir: Some(args.out.clone()),
        overwrite: args.overwrite,
    };
    let report = run_experiment(&config)?;
    let m = &report.aggregate;
    println!(
        "episodes={} mean_reward={} mean_power_W={} comfort_time_violation_pct={} mean_temp_violation_C={}",
        report.episodes.len(),
        m.mean_reward,
        m.mean_power,
        m.comfort_time_violation_pct,
        m.mean_temp_violation
    );
    println!("results in {}", args.out.display());
    Ok(())
}

fn train_cem(args: TrainArgs) -> Result<()> {
    let mut config: CemConfig = match &args.config {
        Some(path) => read_json(path)?,
        None => CemConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if args.out.exists() {
        if !args.overwrite {
            bail!("output directory {} already exists (use --overwrite)", args.out.display());
        }
        std::fs::remove_dir_all(&args.out).with_context(|| format!("removing {}", args.out.display()))?;
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let env = make_env(preset_config(&args.env)?)?;
    let outcome = cem_train(env, &config)?;
    outcome.policy.save(&args.out.join("policy.json"))?;
    write_training_curve(&args.out.join("training_curve.csv"), &outcome.curve)?;
    std::fs::write(args.out.join("cem_config.json"), serde_json::to_string_pretty(&config)?)?;
    println!("best_eval_reward={} policy={}", outcome.best_eval_reward, args.out.join("policy.json").display());
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut config: SweepConfig = read_json(&args.config)?;
    config.base.out_dir = Some(args.out.clone());
    config.base.overwrite = args.overwrite;
    config.parallelism = args.parallel as usize;
    let report = grid_sweep(&config)?;
    println!("combinations={} failures={}", report.rows.len() + report.failures.len(), report.failures.len());
    if let Some(best) = report.rows.first() {
        println!("best combination {} mean_reward={}", best.index, best.metrics.mean_reward);
    }
    if !report.failures.is_empty() {
        bail!("{} combinations failed; see {}", report.failures.len(), args.out.join("failures.csv").display());
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    let server = Arc::new(Server::new(Duration::from_secs(args.idle_timeout), args.output_root));
    if args.stdio {
        let stdin = std::io::stdin();
        server.serve_stream(stdin.lock(), std::io::stdout().lock())?;
        return Ok(());
    }
    let port = args.port.expect("clap enforces --port or --stdio");
    let handle = serve_tcp(&format!("{}:{port}", args.host), server)?;
    eprintln!("listening on {}", handle.addr);
    handle.join();
    Ok(())
}

fn import_weather(args: ImportArgs) -> Result<()> {
    let series = import_epw(&args.epw)?;
    write_weather_csv(&series, &args.out)?;
    println!(
        "location={} records={} mean_annual_temp_C={}",
        series.location_name,
        series.records.len(),
        series.mean_annual_temp
    );
    Ok(())
}

fn compare_runs(args: CompareArgs) -> Result<()> {
    let reference = read_metrics(&args.reference)?;
    let candidates = args.candidates.iter().map(|p| read_metrics(p)).collect::<Result<Vec<_>, _>>()?;
    let savings = compare(&reference, &candidates)?;
    let names: Vec<String> = args.candidates.iter().map(|p| p.display().to_string()).collect();
    write_savings(&args.out, &names, &savings)?;
    for (name, s) in names.iter().zip(&savings) {
        println!("{name}: total_savings_pct={}", s.total_savings_pct);
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::ListEnvs => match list_envs() {
            Err(e) if e.downcast_ref::<std::io::Error>().is_some_and(|e| e.kind() == std::io::ErrorKind::BrokenPipe) => {
                Ok(())
            }
            other => other,
        },
        Command::Run(a) => run(a),
        Command::TrainCem(a) => train_cem(a),
        Command::Sweep(a) => sweep(a),
        Command::Serve(a) => serve(a),
        Command::ImportWeather(a) => import_weather(a),
        Command::Compare(a) => compare_runs(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return ExitCode::from(1);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
