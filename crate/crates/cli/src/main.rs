use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use anywidth::Result;
use anywidth_cli::commands::{
    cmd_calibrate, cmd_eval, cmd_stats, cmd_sweep, cmd_train, CalibrationWidths,
};
use anywidth_cli::config::{parse_config_file, parse_float_list, Overrides, RunConfig};

#[derive(Parser)]
#[command(
    name = "awn",
    about = "Adjustable-width CNN training: triangular-masked any-width models, \
             switchable-norm baselines, width sweeps, and statistics reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model variant and write a checkpoint plus an epoch log.
    Train(TrainArgs),
    /// Re-accumulate normalization statistics of a usnet checkpoint at new widths.
    Calibrate(CalibrateArgs),
    /// Evaluate a checkpoint across a width grid; writes the curve CSV and prints AUC.
    Sweep(SweepArgs),
    /// Run the three-variant activation-statistics experiment.
    Stats(TrainArgs),
    /// Test-set accuracy of a checkpoint at one width.
    Eval(EvalArgs),
}

/// Flags shared by every subcommand; each one overrides the config file.
#[derive(Args, Clone)]
struct CommonArgs {
    /// Flat key=value config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    variant: Option<String>,
    /// mnist | fashionmnist | cifar10 | synthetic
    #[arg(long)]
    dataset: Option<String>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// Output directory for checkpoints, logs, and reports.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long, alias = "wd")]
    weight_decay: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed training widths, descending from 1.0 (e.g. 1.0,0.75,0.5,0.25).
    #[arg(long)]
    widths: Option<String>,
    /// Width samples per iteration in random mode.
    #[arg(long)]
    random_n: Option<usize>,
    #[arg(long)]
    alpha_min: Option<f64>,
    #[arg(long)]
    alpha_max: Option<f64>,
    /// step | linear
    #[arg(long)]
    schedule: Option<String>,
    /// Step-decay milestones as fractions of total epochs.
    #[arg(long)]
    milestones: Option<String>,
    #[arg(long)]
    decay_factor: Option<f64>,
    #[arg(long)]
    base_channels: Option<usize>,
    #[arg(long)]
    synth_train: Option<usize>,
    #[arg(long)]
    synth_test: Option<usize>,
    #[arg(long)]
    synth_classes: Option<usize>,
    #[arg(long)]
    synth_noise: Option<f64>,
}

impl CommonArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let file = match &self.config {
            Some(path) => Some(parse_config_file(path)?),
            None => None,
        };
        let flags = Overrides {
            variant: self.variant.clone(),
            dataset: self.dataset.clone(),
            data_dir: self.data_dir.clone(),
            out_dir: self.out.clone(),
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            seed: self.seed,
            widths: self.widths.as_deref().map(parse_float_list).transpose()?,
            random_n: self.random_n,
            alpha_min: self.alpha_min,
            alpha_max: self.alpha_max,
            schedule: self.schedule.clone(),
            milestones: self.milestones.as_deref().map(parse_float_list).transpose()?,
            decay_factor: self.decay_factor,
            base_channels: self.base_channels,
            synth_train: self.synth_train,
            synth_test: self.synth_test,
            synth_classes: self.synth_classes,
            synth_noise: self.synth_noise,
        };
        RunConfig::resolve(file, flags)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Either a count of evenly spaced widths over [alpha_min, 1] (e.g.
    /// `10`) or an explicit ascending comma list (e.g. `0.25,0.5,1.0`).
    #[arg(long, default_value = "10")]
    calib_widths: String,
    #[arg(long, default_value_t = 1)]
    passes: usize,
    /// Output checkpoint path (defaults to <out>/calibrated.ckpt).
    #[arg(long)]
    out_checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0.25)]
    grid_min: f64,
    #[arg(long, default_value_t = 1.0)]
    grid_max: f64,
    #[arg(long, default_value_t = 0.025)]
    grid_step: f64,
    /// Curve CSV path (defaults to <out>/curve.csv).
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    alpha: f64,
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train(args) => {
            let cfg = args.common.resolve()?;
            let out = cmd_train(&cfg)?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!("log: {}", out.log.display());
        }
        Command::Calibrate(args) => {
            let cfg = args.common.resolve()?;
            let widths = match args.calib_widths.parse::<usize>() {
                Ok(count) => CalibrationWidths::EvenlySpaced {
                    count,
                    alpha_min: cfg.alpha_min,
                },
                Err(_) => CalibrationWidths::List(parse_float_list(&args.calib_widths)?),
            };
            let out_path = args
                .out_checkpoint
                .unwrap_or_else(|| cfg.out_dir.join("calibrated.ckpt"));
            let out = cmd_calibrate(&cfg, &args.checkpoint, &widths, args.passes, &out_path)?;
            println!("checkpoint: {}", out.checkpoint.display());
            println!(
                "bytes: {} -> {} (+{}), norm payload {} bytes",
                out.old_bytes,
                out.new_bytes,
                out.new_bytes as i64 - out.old_bytes as i64,
                out.bn_payload_bytes
            );
        }
        Command::Sweep(args) => {
            let cfg = args.common.resolve()?;
            let mut grid = Vec::new();
            let mut a = args.grid_min;
            while a <= args.grid_max + 1e-9 {
                grid.push(a.min(1.0));
                a += args.grid_step;
            }
            let out_csv = args.out_csv.unwrap_or_else(|| cfg.out_dir.join("curve.csv"));
            let (curve, area) = cmd_sweep(&cfg, &args.checkpoint, &grid, &out_csv)?;
            println!("curve: {} ({} points)", out_csv.display(), curve.points().len());
            println!("AUC={area:.6}");
        }
        Command::Stats(args) => {
            let cfg = args.common.resolve()?;
            let out = cmd_stats(&cfg)?;
            for path in &out.reports {
                println!("report: {}", path.display());
            }
            println!("summary: {}", out.summary.display());
        }
        Command::Eval(args) => {
            let cfg = args.common.resolve()?;
            let acc = cmd_eval(&cfg, &args.checkpoint, args.alpha)?;
            println!("accuracy={acc:.6}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
