//! Command-line runner for the collective-spin simulator: configuration,
//! parallel trial orchestration and deterministic output files.

pub mod commands;
pub mod config;
pub mod output;

use std::fs;
use std::path::{Path, PathBuf};

use commands::{Command, CommandError};
use config::{ConfigError, RunConfig};
use output::{Manifest, RunOutput};

/// Defaults, then the optional file, then each `key=value` override in order.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, ConfigError> {
    let mut cfg = match path {
        Some(p) => {
            let text =
                fs::read_to_string(p).map_err(|e| ConfigError::Parse { line: None, message: format!("{}: {e}", p.display()) })?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    for o in overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

/// Output directory of one command: `<output_dir>/<command>`.
pub fn command_dir(cfg: &RunConfig, cmd: Command) -> PathBuf {
    Path::new(&cfg.run.output_dir).join(cmd.name())
}

#[derive(Debug)]
pub enum ReplayError {
    Manifest(ConfigError),
    UnknownCommand(String),
    Run(CommandError),
}

/// Per-file replay verdict: `(file, recorded hash, replayed hash)`.
pub type ReplayReport = Vec<(String, String, Option<String>)>;

/// Rerun the command recorded in a manifest and compare output hashes.
pub fn replay(manifest_text: &str) -> Result<(RunOutput, ReplayReport), ReplayError> {
    let m: Manifest = toml::from_str(manifest_text)
        .map_err(|e| ReplayError::Manifest(ConfigError::Parse { line: None, message: e.message().trim().to_string() }))?;
    let cmd = Command::from_name(&m.manifest.command).ok_or_else(|| ReplayError::UnknownCommand(m.manifest.command.clone()))?;
    let out = commands::execute(cmd, &m.config).map_err(ReplayError::Run)?;
    let files = output::render_files(&out, m.config.run.svg);
    let report = m
        .manifest
        .outputs
        .iter()
        .map(|(name, h)| {
            let now = files.iter().find(|(n, _)| n == name).map(|(_, c)| output::sha256_hex(c.as_bytes()));
            (name.clone(), h.clone(), now)
        })
        .collect();
    Ok((out, report))
}
