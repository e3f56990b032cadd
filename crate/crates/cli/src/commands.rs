//! The five workflows behind the CLI subcommands, as library functions so
//! the test suites can drive them in-process.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use anywidth::eval::{auc, evaluate, width_sweep, write_curve_csv, TradeoffCurve};
use anywidth::model::{build_lenet3c1l, Model, ModelVariant, VariantKind};
use anywidth::rng::{substream, stream};
use anywidth::statlab::{
    run_varying_stats_experiment, write_report_csv, StatsExperimentConfig,
};
use anywidth::train::{
    calibrate_bn, train_fixed_widths, train_random_sample, EpochStats, WidthsMode,
};
use anywidth::widths::WidthFactor;
use anywidth::{Error, Result};

use crate::checkpoint::{load_checkpoint, read_raw, save_checkpoint};
use crate::config::RunConfig;

pub struct TrainOutput {
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

/// Train per the run config and write `model.ckpt` plus `train_log.csv`
/// (columns epoch,width,loss,lr) into the output directory.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutput> {
    let (train, _test, preprocess) = cfg.load_data()?;
    let train_cfg = cfg.train_config()?;
    let kind = VariantKind::parse(&cfg.variant)?;
    let bank_widths = cfg.bank_widths();
    let mut rng = substream(cfg.seed, stream::INIT, 0);
    let mut model: Model<f32> = build_lenet3c1l(
        ModelVariant::new(kind).with_base_channels(cfg.base_channels),
        train.channels(),
        train.num_classes,
        train.hw(),
        bank_widths.as_deref(),
        &mut rng,
    )?;

    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", cfg.out_dir.display())))?;
    let log_path = cfg.out_dir.join("train_log.csv");
    let mut log = Vec::new();
    writeln!(log, "epoch,width,loss,lr").expect("vec write");

    let mut on_epoch = |stats: &EpochStats, _model: &Model<f32>| {
        for &(width, loss) in &stats.slots {
            writeln!(log, "{},{width:.4},{loss:.6},{:.6}", stats.epoch, stats.lr)
                .expect("vec write");
        }
        let slot_text: Vec<String> = stats
            .slots
            .iter()
            .map(|(w, l)| format!("w={w:.3} loss={l:.4}"))
            .collect();
        println!(
            "epoch {:>3}  lr {:.5}  {}",
            stats.epoch,
            stats.lr,
            slot_text.join("  ")
        );
    };
    match &train_cfg.widths_mode {
        WidthsMode::Fixed(_) => {
            train_fixed_widths(&mut model, &train, &preprocess, &train_cfg, &mut on_epoch)?
        }
        WidthsMode::Random { .. } => {
            train_random_sample(&mut model, &train, &preprocess, &train_cfg, &mut on_epoch)?
        }
    };

    std::fs::write(&log_path, log).map_err(|e| Error::Io(format!("{}: {e}", log_path.display())))?;
    let ckpt_path = cfg.out_dir.join("model.ckpt");
    save_checkpoint(
        &ckpt_path,
        &model,
        None,
        &[
            ("seed".into(), cfg.seed.to_string()),
            ("epoch".into(), cfg.epochs.to_string()),
            ("config_hash".into(), cfg.config_hash()),
        ],
    )?;
    Ok(TrainOutput {
        checkpoint: ckpt_path,
        log: log_path,
    })
}

pub struct CalibrateOutput {
    pub checkpoint: PathBuf,
    pub old_bytes: u64,
    pub new_bytes: u64,
    pub bn_payload_bytes: usize,
}

/// Calibration widths: either an explicit ascending list or a count of
/// evenly spaced widths over [alpha_min, 1].
pub enum CalibrationWidths {
    List(Vec<f64>),
    EvenlySpaced { count: usize, alpha_min: f64 },
}

impl CalibrationWidths {
    pub fn resolve(&self) -> Result<Vec<f64>> {
        match self {
            CalibrationWidths::List(w) => Ok(w.clone()),
            CalibrationWidths::EvenlySpaced { count, alpha_min } => {
                if *count == 0 {
                    return Err(Error::Arg("need at least one calibration width".into()));
                }
                if *count == 1 {
                    return Ok(vec![1.0]);
                }
                Ok((0..*count)
                    .map(|i| alpha_min + i as f64 * (1.0 - alpha_min) / (*count as f64 - 1.0))
                    .collect())
            }
        }
    }
}

/// Re-accumulate normalization statistics of a trained calibrated-variant
/// checkpoint at the requested widths and write a new checkpoint.
pub fn cmd_calibrate(
    cfg: &RunConfig,
    checkpoint: &Path,
    widths: &CalibrationWidths,
    passes: usize,
    out: &Path,
) -> Result<CalibrateOutput> {
    let widths = widths.resolve()?;
    let (mut model, _, meta) = load_checkpoint::<f32>(checkpoint)?;
    let (train, _test, preprocess) = cfg.load_data()?;
    calibrate_bn(&mut model, &train, &preprocess, &widths, passes, cfg.seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::Io(format!("{}: {e}", parent.display())))?;
        }
    }
    let carried: Vec<(String, String)> = meta
        .entries
        .iter()
        .filter(|(k, _)| matches!(k.as_str(), "seed" | "epoch" | "config_hash"))
        .cloned()
        .collect();
    save_checkpoint(out, &model, None, &carried)?;
    let old_bytes = std::fs::metadata(checkpoint)
        .map_err(|e| Error::Io(format!("{}: {e}", checkpoint.display())))?
        .len();
    let new_bytes = std::fs::metadata(out)
        .map_err(|e| Error::Io(format!("{}: {e}", out.display())))?
        .len();
    let bn_payload_bytes = read_raw(out)?.bn_payload_bytes();
    Ok(CalibrateOutput {
        checkpoint: out.to_path_buf(),
        old_bytes,
        new_bytes,
        bn_payload_bytes,
    })
}

/// Sweep the width grid, write the curve CSV, and return (curve, auc).
pub fn cmd_sweep(
    cfg: &RunConfig,
    checkpoint: &Path,
    grid: &[f64],
    out_csv: &Path,
) -> Result<(TradeoffCurve, f64)> {
    let (model, _, _) = load_checkpoint::<f32>(checkpoint)?;
    let (_train, test, preprocess) = cfg.load_data()?;
    let curve = width_sweep(&model, &test, &preprocess, grid)?;
    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::Io(format!("{}: {e}", parent.display())))?;
        }
    }
    write_curve_csv(&curve, out_csv)?;
    let area = auc(&curve);
    Ok((curve, area))
}

/// Test-set accuracy of a checkpoint at one width.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, alpha: f64) -> Result<f64> {
    let (model, _, _) = load_checkpoint::<f32>(checkpoint)?;
    let (_train, test, preprocess) = cfg.load_data()?;
    evaluate(&model, &test, &preprocess, WidthFactor::new(alpha)?)
}

pub struct StatsOutput {
    pub reports: Vec<PathBuf>,
    pub summary: PathBuf,
}

/// The varying-statistics experiment: three variants trained at the same
/// fixed widths, per-epoch statistics traces, divergence reports, and the
/// per-width accuracy table.
pub fn cmd_stats(cfg: &RunConfig) -> Result<StatsOutput> {
    let (train, test, preprocess) = cfg.load_data()?;
    let widths = if cfg.widths.is_empty() {
        vec![0.25, 0.5, 0.75, 1.0]
    } else {
        let mut w = cfg.widths.clone();
        w.sort_by(|a, b| a.partial_cmp(b).expect("finite widths"));
        w
    };
    let exp_cfg = StatsExperimentConfig {
        widths,
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr0: cfg.lr,
        momentum: cfg.momentum,
        probe_batch: 256,
        base_channels: cfg.base_channels,
        seed: cfg.seed,
    };
    let experiment = run_varying_stats_experiment(&train, &test, &preprocess, &exp_cfg)?;

    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::Io(format!("{}: {e}", cfg.out_dir.display())))?;
    let mut reports = Vec::new();
    for outcome in &experiment.outcomes {
        let path = cfg
            .out_dir
            .join(format!("stats_{}.csv", outcome.kind.as_str()));
        write_report_csv(&outcome.trace, &path)?;
        reports.push(path);
    }

    let awn = experiment.outcome(VariantKind::Awn).summary_divergence;
    let shared = experiment.outcome(VariantKind::Standard).summary_divergence;
    let mut summary = Vec::new();
    writeln!(summary, "variant,width,accuracy").expect("vec write");
    for outcome in &experiment.outcomes {
        for &(w, acc) in &outcome.accuracy {
            writeln!(summary, "{},{w:.6},{acc:.6}", outcome.kind.as_str()).expect("vec write");
        }
    }
    for outcome in &experiment.outcomes {
        writeln!(
            summary,
            "# summary_divergence {} {:.9}",
            outcome.kind.as_str(),
            outcome.summary_divergence
        )
        .expect("vec write");
    }
    writeln!(summary, "# awn_divergence_below_shared {}", awn < shared).expect("vec write");
    let summary_path = cfg.out_dir.join("stats_summary.csv");
    std::fs::write(&summary_path, summary)
        .map_err(|e| Error::Io(format!("{}: {e}", summary_path.display())))?;
    Ok(StatsOutput {
        reports,
        summary: summary_path,
    })
}
