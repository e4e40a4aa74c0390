//! File formats, images, configuration and subcommands of the `lasermix`
//! executable.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod images;
pub mod io;
pub mod manifest;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Process exit codes.
pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "lasermix",
    version,
    about = "Laser-partition mixing for semi-supervised LiDAR segmentation"
)]
pub struct Cli {
    /// JSON run configuration; dotted flags such as `--hyper.T 0.8` override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Point count, extents, class and area counts of one scan.
    Stats {
        scan: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Conditional class entropy per partition kind and area count.
    EntropyReport,
    /// Mix two scans with the configured partition.
    Mix {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        labels_a: Option<PathBuf>,
        #[arg(long)]
        labels_b: Option<PathBuf>,
    },
    /// Range-view images of a scan.
    Project {
        scan: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Cylindrical voxel grid of a scan as CSV.
    Voxelize {
        scan: PathBuf,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
    /// Write a synthetic dataset.
    Synth,
    /// Train student and teacher.
    Train {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on the eval split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Preset grid and hyper-parameter sweeps.
    Ablate,
    /// Correct/incorrect maps for one scan.
    ErrorMap {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Index into the eval split (ignored with `--scan`).
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long, requires = "labels")]
        scan: Option<PathBuf>,
        #[arg(long)]
        labels: Option<PathBuf>,
    },
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run(args: Vec<String>) -> i32 {
    let (rest, overrides) = match config::split_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e:#}");
            return EXIT_CONFIG;
        }
    };
    let cli = match Cli::try_parse_from(rest) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let mut cfg = match config::RunConfig::load(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e:#}");
            return EXIT_CONFIG;
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let ctx = commands::Ctx { cfg, out: cli.out };
    let result = match &cli.command {
        Command::Stats { scan, labels } => {
            commands::stats(&ctx, scan, labels.as_deref()).map(|v| println!("{v:#}"))
        }
        Command::EntropyReport => commands::entropy_report(&ctx).map(|csv| print!("{csv}")),
        Command::Mix {
            a,
            b,
            labels_a,
            labels_b,
        } => commands::mix(&ctx, a, b, labels_a.as_deref(), labels_b.as_deref()),
        Command::Project { scan, labels } => commands::project(&ctx, scan, labels.as_deref()),
        Command::Voxelize { scan, labels } => commands::voxelize(&ctx, scan, labels.as_deref()),
        Command::Synth => commands::synth(&ctx),
        Command::Train { resume } => commands::train(&ctx, resume.as_deref()).map(|_| ()),
        Command::Eval { checkpoint } => commands::eval(&ctx, checkpoint).map(|v| println!("{v:#}")),
        Command::Ablate => commands::ablate(&ctx).map(|_| ()),
        Command::ErrorMap {
            checkpoint,
            index,
            scan,
            labels,
        } => {
            let choice = match (scan, labels) {
                (Some(scan), Some(labels)) => commands::ScanChoice::File { scan, labels },
                _ => commands::ScanChoice::Eval(*index),
            };
            commands::error_map(&ctx, checkpoint, choice).map(|v| println!("{v:#}"))
        }
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}
