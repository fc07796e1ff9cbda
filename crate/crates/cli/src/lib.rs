//! Experiment runner: config handling, the staged pipeline and the command
//! entry points behind the `ramp` binary.

pub mod config;
pub mod error;
pub mod manifest;
pub mod pipeline;

use std::path::Path;

use ramp_core::prompting::PromptMode;

use config::{ConfigError, ExperimentConfig, Overrides};
use error::CliError;
use pipeline::{load_templates, rebuild_reports, Data, Pipeline, SettingOutcome, SweepOutcome};

/// Reads the config file and applies flag and environment overrides.
pub fn load_config(path: &Path, overrides: &Overrides) -> Result<ExperimentConfig, CliError> {
    let mut cfg = ExperimentConfig::load(path)?;
    cfg.apply_overrides(overrides);
    Ok(cfg)
}

/// Checks the config and, when the data files parse, the data-dependent
/// invariants. All problems are reported together.
pub fn cmd_validate(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let mut errors = match cfg.validate() {
        Ok(()) => Vec::new(),
        Err(ConfigError::Invalid(e)) => e,
        Err(e) => return Err(e.into()),
    };
    if let Err(e) = load_templates(cfg) {
        errors.push(e.to_string());
    }
    match Data::load(cfg) {
        Ok(data) => errors.extend(data.problems(cfg, cfg.experiment.k)),
        Err(e) if errors.is_empty() => return Err(e),
        Err(e) => errors.push(e.to_string()),
    }
    if errors.is_empty() {
        Ok(())
    } else {
        Err(CliError::Validation(errors))
    }
}

/// Parses the pools and returns per-cell counts for the train pool and the
/// covered test rows.
pub fn cmd_ingest(cfg: &ExperimentConfig) -> Result<String, CliError> {
    let data = Data::load(cfg)?;
    let test = ramp_core::corpus::ExamplePool::from_examples(data.rows().cloned().collect())
        .map_err(|e| CliError::Data(e.to_string()))?;
    Ok(format!("# train\n{}\n# test\n{}\n", data.pool.stats(), test.stats()))
}

/// Builds (or loads) the similarity index. Returns its size and dimension.
pub fn cmd_index(cfg: ExperimentConfig) -> Result<(usize, usize), CliError> {
    let mut p = Pipeline::open(cfg)?;
    let index = p.ensure_index()?;
    Ok((index.len(), index.dim()))
}

/// Runs the configured (mode, k) setting.
pub fn cmd_run(cfg: ExperimentConfig) -> Result<SettingOutcome, CliError> {
    let (mode, k) = (cfg.experiment.mode, cfg.experiment.k);
    Pipeline::open(cfg)?.run_setting(mode, k)
}

/// Runs every (k, mode) pair. Cell failures are collected in the outcome.
pub fn cmd_sweep(cfg: ExperimentConfig, ks: &[usize], modes: &[PromptMode]) -> Result<SweepOutcome, CliError> {
    Pipeline::open(cfg)?.sweep(ks, modes)
}

/// Regenerates report files from stored judgments. Returns the number of
/// reports written.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<usize, CliError> {
    rebuild_reports(&cfg.experiment.output_dir)
}
