use std::io::Write;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

use crate::config::{BaseName, RunConfig, VariantName};
use crate::{bench, commands};

/// Cross-network transfer with graph subtree discrepancy.
///
/// Settings come from built-in defaults, then `--config`, then flags.
#[derive(Debug, Parser)]
#[command(name = "grade", version)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Train a node classifier or regressor on the source graph.
    TrainNode,
    /// Train a link predictor on two interaction graphs and rank held-out items.
    TrainRec,
    /// WL subtree kernel between two labeled graphs.
    Kernel,
    /// Per-depth discrepancy between two graphs.
    Gsd,
    /// Per-epoch training time against graph size.
    Bench,
    /// Write a synthetic source/target pair to the output directory.
    Synth,
}

#[derive(Debug, Default, Args)]
pub struct Flags {
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    /// Number of GCN layers or WL iterations.
    #[arg(long, global = true)]
    pub depth: Option<usize>,
    #[arg(long, global = true, value_enum)]
    pub base: Option<BaseName>,
    #[arg(long, global = true, value_enum)]
    pub variant: Option<VariantName>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Ranking cutoff.
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Comma-separated node counts for `bench`.
    #[arg(long, global = true, value_delimiter = ',')]
    pub sizes: Option<Vec<usize>>,
}

/// The effective configuration for `command`.
pub fn resolve_config(command: Command, flags: &Flags) -> Result<RunConfig> {
    let mut cfg = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(x) = flags.lambda {
        cfg.train.lambda = Some(x);
    }
    if let Some(x) = flags.depth {
        cfg.train.depth = x;
    }
    if let Some(x) = flags.base {
        match command {
            Command::Gsd => cfg.gsd.base = x,
            Command::Bench => cfg.bench.base = x,
            _ => cfg.train.base = x,
        }
    }
    if let Some(x) = flags.variant {
        cfg.train.variant = x;
    }
    if let Some(x) = flags.seed {
        cfg.seed = x;
    }
    if let Some(x) = flags.k {
        cfg.rec.k = x;
    }
    if let Some(x) = &flags.out {
        cfg.out = std::path::absolute(x)?;
    } else if flags.config.is_none() {
        cfg.out = std::path::absolute(&cfg.out)?;
    }
    if let Some(x) = flags.epochs {
        cfg.train.epochs = x;
    }
    if let Some(x) = &flags.sizes {
        cfg.bench.sizes = x.clone();
    }
    Ok(cfg)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let mut cfg = resolve_config(cli.command, &cli.flags)?;
    match cli.command {
        Command::TrainNode => commands::train_node(&mut cfg, out),
        Command::TrainRec => commands::train_rec(&mut cfg, out),
        Command::Kernel => commands::kernel(&mut cfg, out),
        Command::Gsd => commands::gsd_cmd(&mut cfg, out),
        Command::Bench => bench::bench(&mut cfg, out),
        Command::Synth => commands::synth(&mut cfg, out),
    }
}
