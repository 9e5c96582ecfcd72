//! Command-line front end for the face pipeline: synthetic data generation,
//! two-stage training, single-image reconstruction, token-level editing,
//! batch evaluation and token clustering.
//!
//! Every command writes its artefacts plus a `run_manifest.json` under the
//! mandatory `--out` directory, and identical invocations produce
//! byte-identical outputs.

pub mod cli;
pub mod commands;
pub mod config;
pub mod manifest;
pub mod pipeline;

use std::path::Path;

use cli::{Cli, Command};
use config::CliConfig;

pub use hyface_nn::{Error, Result};

/// Execute a parsed command line end to end, including the run manifest.
pub fn run(cli: &Cli) -> Result<()> {
    let out = cli
        .out
        .as_deref()
        .ok_or_else(|| Error::Validation("--out <DIR> is required".into()))?;
    std::fs::create_dir_all(out).map_err(|e| hyface_core::Error::io(out, e))?;
    let config = CliConfig::load(cli.config.as_deref())?.with_seed(cli.seed);
    config.validate()?;

    let mut manifest = match &cli.command {
        Command::GenData => commands::gen_data::run(&config, out)?,
        Command::Train { data, stage } => {
            commands::train::run(&config, data, *stage, cli.checkpoint.as_deref(), out)?
        }
        Command::Reconstruct { image } => {
            commands::reconstruct::run(require_checkpoint(cli)?, image, out)?
        }
        Command::Edit {
            mode,
            source,
            target,
        } => commands::edit::run(*mode, require_checkpoint(cli)?, source, target, out)?,
        Command::Eval { data } => commands::eval::run(require_checkpoint(cli)?, data, out)?,
        Command::ClusterTokens { data } => {
            commands::cluster::run(require_checkpoint(cli)?, data, out)?
        }
    };
    if manifest.seed_value().is_none() {
        if let Some(seed) = cli.seed {
            manifest.seed(seed);
        }
    }
    manifest.write(out)
}

/// Process exit code for an error: 2 validation/config, 3 file I/O,
/// 4 checkpoint/state mismatch, 1 anything else.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Validation(_) | Error::Config(_) => 2,
        Error::Checkpoint(_) | Error::State(_) => 4,
        Error::Core(core) => match core {
            hyface_core::Error::Io { .. } | hyface_core::Error::Png { .. } => 3,
            hyface_core::Error::Archive(_) => 4,
            _ => 2,
        },
        Error::Tensor(_) => 1,
    }
}

fn require_checkpoint(cli: &Cli) -> Result<&Path> {
    cli.checkpoint
        .as_deref()
        .ok_or_else(|| Error::Validation("--checkpoint <FILE> is required for this command".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_partition_error_kinds() {
        assert_eq!(exit_code(&Error::Validation("x".into())), 2);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), 4);
        assert_eq!(exit_code(&Error::State("x".into())), 4);
        let io = hyface_core::Error::io(
            Path::new("/x"),
            std::io::Error::new(std::io::ErrorKind::NotFound, "gone"),
        );
        assert_eq!(exit_code(&Error::Core(io)), 3);
        assert_eq!(
            exit_code(&Error::Core(hyface_core::Error::Archive("bad".into()))),
            4
        );
        assert_eq!(
            exit_code(&Error::Core(hyface_core::Error::Validation("bad".into()))),
            2
        );
    }

    #[test]
    fn out_directory_is_mandatory() {
        use clap::Parser;
        let cli = Cli::parse_from(["hyface", "gen-data"]);
        let err = run(&cli).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
        assert!(err.to_string().contains("--out"));
    }
}
