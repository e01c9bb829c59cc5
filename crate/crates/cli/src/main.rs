use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hivpop_cli::commands::{
    calibration_summary, cmd_calibrate, cmd_compare, cmd_project, cmd_synth, cmd_validate,
    comparison_table,
};
use hivpop_cli::config::parse_country_list;
use hivpop_cli::{CliError, Overrides, RunConfig};

#[derive(Parser)]
#[command(name = "hivpop", version, about = "Probabilistic population projections for countries with generalized HIV epidemics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Number of trajectories.
    #[arg(long, global = true, value_name = "K")]
    trajectories: Option<usize>,
    /// Comma-separated country codes.
    #[arg(long, global = true, value_name = "LIST")]
    countries: Option<String>,
    /// Final projection year.
    #[arg(long, global = true, value_name = "YEAR")]
    horizon: Option<i32>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Also write every trajectory to trajectories.csv.
    #[arg(long, global = true)]
    emit_trajectories: bool,
    /// Disable residual noise on generated mortality schedules.
    #[arg(long, global = true)]
    no_noise: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the e0 and mortality models and save them.
    Calibrate,
    /// Project population and write quantile tables.
    Project,
    /// Hold out one period, re-project it and score the projection.
    Validate,
    /// Compare projected medians with an external projection.
    Compare,
    /// Write a synthetic dataset and a config file for it.
    Synth,
}

fn run(cli: Cli) -> Result<(), CliError> {
    let overrides = Overrides {
        seed: cli.seed,
        trajectories: cli.trajectories,
        countries: cli.countries.as_deref().map(parse_country_list),
        horizon: cli.horizon,
        out: cli.out,
        emit_trajectories: cli.emit_trajectories,
        no_noise: cli.no_noise,
    };
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Calibrate => {
            let report = cmd_calibrate(&cfg)?;
            print!("{}", calibration_summary(&report));
        }
        Command::Project => {
            let out = cmd_project(&cfg)?;
            println!("{} countries -> {}", out.countries.len(), out.quantiles.display());
            if let Some(t) = out.trajectories {
                println!("trajectories -> {}", t.display());
            }
        }
        Command::Validate => {
            let report = cmd_validate(&cfg)?;
            print!("{}", report.to_text());
        }
        Command::Compare => {
            let rows = cmd_compare(&cfg)?;
            print!("{}", comparison_table(&rows));
        }
        Command::Synth => {
            let out = cmd_synth(&cfg)?;
            println!(
                "{} countries -> {}; config {}",
                out.countries,
                out.data_dir.display(),
                out.config.display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
