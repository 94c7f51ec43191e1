//! `aio`: simulate flights, train the airflow regressor, build a wind map,
//! replay the filter and score failure-injection experiments.

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stages::{Failure, Stage};

#[derive(Parser, Debug)]
#[command(name = "aio", version, about = "Airflow-inertial odometry pipeline")]
struct Cli {
    /// Pipeline configuration (JSON). Defaults to the zero-wind preset.
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in scenario instead of a config file: zero-wind or jet-field.
    #[arg(long, global = true, value_name = "NAME")]
    preset: Option<String>,
    /// Root seed, overriding the one in the configuration.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Directory that receives every artifact and manifest.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate the training, mapping and evaluation flights.
    Simulate,
    /// Train the relative-airflow regressor on the training flights.
    TrainAirflow,
    /// Estimate the wind along the mapping flight (1 Hz CSV).
    EstimateWind,
    /// Fit the wind map to the wind estimates and export a query grid.
    FitMap,
    /// Replay the filter in every configured mode on the evaluation flights.
    RunFilter,
    /// Run the failure-injection experiment and aggregate the metrics.
    Evaluate,
    /// Run every stage in order, or only the one named by --stage.
    Run {
        #[arg(long, value_name = "NAME", value_enum)]
        stage: Option<Stage>,
    },
    /// Print a preset configuration as JSON.
    ShowConfig,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    let cfg = stages::load_config(cli.config.as_deref(), cli.preset.as_deref(), cli.seed)?;
    let run = |stage: Stage| stages::run_stage(stage, &cfg, &cli.out);
    match cli.command {
        Command::Simulate => run(Stage::Simulate),
        Command::TrainAirflow => run(Stage::TrainAirflow),
        Command::EstimateWind => run(Stage::EstimateWind),
        Command::FitMap => run(Stage::FitMap),
        Command::RunFilter => run(Stage::RunFilter),
        Command::Evaluate => run(Stage::Evaluate),
        Command::Run { stage: Some(s) } => run(s),
        Command::Run { stage: None } => stages::run_all(&cfg, &cli.out),
        Command::ShowConfig => {
            println!("{}", serde_json::to_string_pretty(&cfg).map_err(Failure::runtime)?);
            Ok(())
        }
    }
}
