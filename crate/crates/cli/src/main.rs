mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rockhunt::dataset::TilePolicy;
use rockhunt::detect::{DEFAULT_CONF_THRESH, DEFAULT_IOU_THRESH};
use rockhunt::eval::DEFAULT_REPS;

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 1583;

#[derive(Debug, Parser)]
#[command(
    name = "rockhunt",
    version,
    about = "Tiny edge-vision toolkit: chip, quantize, infer, detect, eval, bench"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Seed for every random choice (splits, calibration sampling).
    #[arg(long, global = true, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads for per-tile work; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    #[value(name = "pad_edge", alias = "pad-edge")]
    PadEdge,
    #[value(name = "drop_partial", alias = "drop-partial")]
    DropPartial,
}

impl From<PolicyArg> for TilePolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::PadEdge => TilePolicy::PadEdge,
            PolicyArg::DropPartial => TilePolicy::DropPartial,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut a panorama PNG into tiles, assign splits and write a manifest.
    Chip {
        #[arg(long)]
        image: PathBuf,
        #[arg(long, default_value_t = 224)]
        tile: usize,
        /// Defaults to the tile size.
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, value_enum, default_value_t = PolicyArg::PadEdge)]
        policy: PolicyArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Post-training int8 quantization calibrated on a tile directory.
    Quantize {
        #[arg(long)]
        model: PathBuf,
        /// Tile directory; with a manifest only its train split is used.
        #[arg(long)]
        calib: PathBuf,
        /// Calibrate on at most this many images, sampled with the seed.
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Classify PNG tiles.
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// A PNG file or a directory of them.
        #[arg(long)]
        input: PathBuf,
        /// Write predictions.tsv here instead of printing.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
        /// Print the arena plan before running.
        #[arg(long)]
        dump_plan: bool,
    },
    /// Run a detector over tiles and write overlays plus detections.tsv.
    Detect {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        tiles: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CONF_THRESH)]
        conf: f64,
        #[arg(long, default_value_t = DEFAULT_IOU_THRESH)]
        iou: f64,
        #[arg(long, value_delimiter = ',', default_value = "rock")]
        classes: Vec<String>,
        /// Draw class and confidence above each box.
        #[arg(long)]
        labels: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confusion matrix and accuracy on a labeled tile directory.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        eval: PathBuf,
        /// Only manifest entries of this split.
        #[arg(long)]
        split: Option<String>,
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
    },
    /// Latency, peak RAM, ROM and accuracy per model.
    Bench {
        #[arg(long, required = true)]
        model: Vec<PathBuf>,
        #[arg(long)]
        eval: Option<PathBuf>,
        #[arg(long)]
        split: Option<String>,
        #[arg(long, default_value_t = DEFAULT_REPS)]
        reps: usize,
        #[arg(long, value_delimiter = ',')]
        classes: Option<Vec<String>>,
        /// Tab-separated output.
        #[arg(long)]
        tsv: bool,
        #[arg(long)]
        dump_plan: bool,
    },
}

fn existing(paths: &[&PathBuf]) -> Result<(), String> {
    match paths.iter().find(|p| !p.exists()) {
        Some(p) => Err(format!("{} does not exist", p.display())),
        None => Ok(()),
    }
}

fn unit(name: &str, v: f64) -> Result<(), String> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(format!("--{name} must lie in [0, 1], got {v}"))
    }
}

/// Flag values and input paths, checked before any work starts.
fn validate(cmd: &Command) -> Result<(), String> {
    match cmd {
        Command::Chip {
            image, tile, stride, ..
        } => {
            if *tile == 0 || *stride == Some(0) {
                return Err("--tile and --stride must be positive".into());
            }
            existing(&[image])
        }
        Command::Quantize {
            model, calib, limit, ..
        } => {
            if *limit == Some(0) {
                return Err("--limit must be positive".into());
            }
            existing(&[model, calib])
        }
        Command::Infer { model, input, .. } => existing(&[model, input]),
        Command::Detect {
            model,
            tiles,
            conf,
            iou,
            classes,
            ..
        } => {
            unit("conf", *conf)?;
            unit("iou", *iou)?;
            if classes.is_empty() {
                return Err("--classes needs at least one name".into());
            }
            existing(&[model, tiles])
        }
        Command::Eval { model, eval, .. } => existing(&[model, eval]),
        Command::Bench { model, eval, reps, .. } => {
            if *reps < 3 {
                return Err(format!("--reps must be at least 3, got {reps}"));
            }
            existing(&model.iter().chain(eval).collect::<Vec<_>>())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = validate(&cli.command) {
        Cli::command().error(ErrorKind::ValueValidation, msg).exit();
    }
    let jobs = match cli.command {
        // timings must not share the machine with worker threads
        Command::Bench { .. } => 1,
        _ => cli.global.jobs,
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(jobs).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::FAILURE;
        }
    };
    match pool.install(|| commands::run(cli.command, &cli.global)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
