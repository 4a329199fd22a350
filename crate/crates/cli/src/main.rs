use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use critdet_cli::config::EnvOverrides;
use critdet_cli::{load, run, ConfigSources, RunConfig, Subcommand};

/// Simulation and analysis pipelines for the critical-point photon detector.
#[derive(Debug, Parser)]
#[command(name = "critdet", version)]
struct Args {
    /// Pipeline to run; overrides `subcommand` in the config file.
    #[arg(value_enum)]
    subcommand: Option<Subcommand>,
    /// JSON config file. Missing keys take their defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Override a config key by dotted path, e.g. `--set fp.dt_s=1e-9`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(short, long)]
    output_dir: Option<PathBuf>,
    /// Worker threads; 0 uses every core.
    #[arg(short, long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_defaults: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if args.print_defaults {
        println!("{}", serde_json::to_string_pretty(&RunConfig::default()).expect("defaults serialise"));
        return ExitCode::SUCCESS;
    }
    let sources = ConfigSources {
        file: args.config,
        env: EnvOverrides::from_process(),
        sets: args.sets,
        subcommand: args.subcommand,
        output_dir: args.output_dir,
        workers: args.workers,
        master_seed: args.seed,
    };
    let result = load(&sources).and_then(|cfg| run(&cfg));
    match result {
        Ok(manifest) => {
            println!(
                "{}: {} file(s) in {:.2} s, config {}",
                manifest.subcommand,
                manifest.files.len(),
                manifest.wall_time_s,
                &manifest.config_sha256[..12]
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
