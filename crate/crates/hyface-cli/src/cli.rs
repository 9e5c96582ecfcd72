//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "hyface",
    about = "Hybrid blendshape + appearance-token face pipeline",
    version
)]
pub struct Cli {
    /// JSON configuration file; every section is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Override every configured seed with one value.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Model checkpoint archive.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,

    /// Output directory; created if missing.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a procedural rig plus a synthetic dataset under --out.
    GenData,

    /// Train stage 1 (geometry from landmarks) or stage 2 (full objective).
    Train {
        /// Dataset directory containing manifest.csv and rig.safetensors,
        /// or a manifest.csv path with the rig file next to it.
        #[arg(long)]
        data: PathBuf,

        /// Training stage.
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
        stage: u8,
    },

    /// Reconstruct one image: synthesized frame, mesh overlay, and
    /// parameter/token dumps.
    Reconstruct {
        /// Input image (PNG).
        #[arg(long)]
        image: PathBuf,
    },

    /// Re-synthesize a source image with parameters swapped in from a
    /// target image.
    Edit {
        #[arg(long, value_enum)]
        mode: EditMode,

        /// Image supplying the base reconstruction.
        #[arg(long)]
        source: PathBuf,

        /// Image supplying the swapped-in parameters.
        #[arg(long)]
        target: PathBuf,
    },

    /// Evaluate a checkpoint against a dataset manifest.
    Eval {
        /// Dataset directory or manifest.csv path.
        #[arg(long)]
        data: PathBuf,
    },

    /// Tokenize a dataset and export per-scale 2D embeddings with
    /// identity labels.
    ClusterTokens {
        /// Dataset directory or manifest.csv path.
        #[arg(long)]
        data: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EditMode {
    /// Source geometry with the target's appearance token.
    #[value(alias = "swap_token")]
    SwapToken,
    /// Target appearance token and shape coefficients on the source.
    #[value(alias = "swap_shape_and_token")]
    SwapShapeAndToken,
    /// Source appearance with the target's expression group.
    #[value(alias = "transfer_expression")]
    TransferExpression,
}
