//! The `safeplan` command line: argument parsing, configuration and the
//! subcommand implementations. `main.rs` only maps outcomes to exit codes.

pub mod args;
pub mod commands;

use std::path::Path;

use anyhow::{Context as _, Result};
use safeplan_core::config::{LlmMode, RunConfig};

pub use args::Cli;
pub use commands::{cmd_evaluate, cmd_verify, run, Context};

/// Positive result.
pub const EXIT_OK: u8 = 0;
/// Unsafe plan, failed gradient check, non-executable simulation.
pub const EXIT_NEGATIVE: u8 = 1;
pub const EXIT_ERROR: u8 = 2;

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// The config file (or defaults) with global flags applied.
pub fn effective_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(p) = cli.parallelism {
        cfg.parallelism = p;
    }
    if let Some(p) = &cli.semantics {
        cfg.paths.semantics = Some(p.clone());
    }
    if let Some(p) = &cli.ruleset {
        cfg.paths.ruleset = Some(p.clone());
    }
    Ok(cfg)
}

impl From<args::Mode> for LlmMode {
    fn from(m: args::Mode) -> Self {
        match m {
            args::Mode::Live => LlmMode::Live,
            args::Mode::Replay => LlmMode::Replay,
            args::Mode::Record => LlmMode::Record,
        }
    }
}
