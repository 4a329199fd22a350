//! Pipeline runner behind the `critdet` binary: configuration, seeded
//! sweeps, result files and the run manifest.

pub mod config;
pub mod error;
pub mod output;
pub mod pipelines;
pub mod sweep;

pub use config::{load, ConfigSources, RunConfig, Subcommand};
pub use error::CliError;
pub use output::Manifest;

/// Runs the configured pipeline and writes its files plus `manifest.json`.
pub fn run(cfg: &RunConfig) -> Result<Manifest, CliError> {
    let subcommand = cfg
        .subcommand
        .ok_or_else(|| CliError::ConfigInvalid(vec!["subcommand: not given".into()]))?;
    let mut out = output::Outputs::create(&cfg.output_dir)?;
    out.write_json("config.json", &cfg.science_tree())?;
    log::info!("running {} into {}", subcommand.as_str(), cfg.output_dir.display());
    pipelines::dispatch(subcommand, cfg, &mut out)?;
    out.finish(cfg)
}
