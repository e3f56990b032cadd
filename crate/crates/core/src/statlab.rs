//! Activation-statistics laboratory.
//!
//! Tracks per-width batch statistics at every normalization site during
//! training (observation passes that never mutate the model), quantifies
//! how far the per-width distributions drift apart, and runs the
//! three-variant comparison experiment: shared-norm standard vs switchable
//! vs triangular, trained identically at a fixed width set.
//!
//! The divergence scalar normalizes mean shifts by the running standard
//! deviation, so sites of different scales are comparable:
//! mean over shared active channels of |mean_a - mean_b| / sqrt(run_var + eps).

use std::io::Write as _;
use std::path::Path;

use crate::data::{Dataset, Preprocess};
use crate::error::{Error, Result};
use crate::layers::BN_EPS;
use crate::model::{build_lenet3c1l, Model, ModelVariant, Norm, VariantKind};
use crate::rng::{substream, stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::{train_fixed_widths, TrainConfig, WidthsMode};
use crate::widths::{active_count, WidthFactor};
use crate::eval::evaluate;

/// One observation: per width, per site, channel-wise batch mean/var, plus
/// each site's running statistics at the time of recording.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub epoch: usize,
    /// Indexed [width][site] -> (means, vars), full channel length.
    pub per_width: Vec<Vec<(Vec<f64>, Vec<f64>)>>,
    /// Indexed [site] -> (running means, running vars).
    pub running: Vec<(Vec<f64>, Vec<f64>)>,
}

/// Statistics recorded over a training run.
#[derive(Debug, Clone)]
pub struct StatTrace {
    pub widths: Vec<f64>,
    /// Channel count per normalization site.
    pub channels: Vec<usize>,
    pub entries: Vec<TraceEntry>,
}

impl StatTrace {
    pub fn new(widths: Vec<f64>, channels: Vec<usize>) -> Self {
        StatTrace {
            widths,
            channels,
            entries: Vec::new(),
        }
    }

    pub fn sites(&self) -> usize {
        self.channels.len()
    }

    fn width_index(&self, width: f64) -> Result<usize> {
        self.widths
            .iter()
            .position(|&w| (w - width).abs() < 1e-9)
            .ok_or_else(|| Error::Arg(format!("width {width} was not tracked")))
    }
}

/// Observation pass over one (already normalized) probe batch at each
/// width. Purely read-only on the model.
pub fn track_stats<S: Scalar>(
    model: &Model<S>,
    epoch: usize,
    probe: &Tensor<S>,
    widths: &[f64],
) -> Result<TraceEntry> {
    if widths.is_empty() {
        return Err(Error::Arg("track_stats needs at least one width".into()));
    }
    let mut per_width = Vec::with_capacity(widths.len());
    for &w in widths {
        let alpha = WidthFactor::new(w)?;
        let (_, stats) = model.forward_observe(probe, alpha)?;
        per_width.push(
            stats
                .iter()
                .map(|s| {
                    (
                        s.mean.iter().map(|v| v.as_f64()).collect(),
                        s.var.iter().map(|v| v.as_f64()).collect(),
                    )
                })
                .collect(),
        );
    }
    let running = model
        .norms
        .iter()
        .map(|norm| {
            // Switchable sites report the full-width state; only used to
            // scale the divergence metric.
            let bn = match norm {
                Norm::Shared(bn) => bn,
                Norm::Switchable(bank) => bank.states.last().expect("non-empty bank"),
            };
            (
                bn.running_mean.iter().map(|v| v.as_f64()).collect(),
                bn.running_var.iter().map(|v| v.as_f64()).collect(),
            )
        })
        .collect();
    Ok(TraceEntry {
        epoch,
        per_width,
        running,
    })
}

/// Per-site normalized mean shift between two tracked widths, averaged
/// over the channels active at the smaller width.
pub fn divergence(trace: &StatTrace, entry: &TraceEntry, width_a: f64, width_b: f64) -> Result<Vec<f64>> {
    pairwise(trace, entry, width_a, width_b).map(|v| v.into_iter().map(|(m, _)| m).collect())
}

/// As `divergence`, but the variance term: mean |ln((va+eps)/(vb+eps))|.
pub fn variance_ratio(
    trace: &StatTrace,
    entry: &TraceEntry,
    width_a: f64,
    width_b: f64,
) -> Result<Vec<f64>> {
    pairwise(trace, entry, width_a, width_b).map(|v| v.into_iter().map(|(_, r)| r).collect())
}

fn pairwise(
    trace: &StatTrace,
    entry: &TraceEntry,
    width_a: f64,
    width_b: f64,
) -> Result<Vec<(f64, f64)>> {
    let ia = trace.width_index(width_a)?;
    let ib = trace.width_index(width_b)?;
    let alpha_min = WidthFactor::new(width_a.min(width_b))?;
    let mut out = Vec::with_capacity(trace.sites());
    for site in 0..trace.sites() {
        let k = active_count(alpha_min, trace.channels[site]);
        let (mean_a, var_a) = &entry.per_width[ia][site];
        let (mean_b, var_b) = &entry.per_width[ib][site];
        let run_var = &entry.running[site].1;
        let mut shift = 0.0;
        let mut ratio = 0.0;
        for c in 0..k {
            shift += (mean_a[c] - mean_b[c]).abs() / (run_var[c] + BN_EPS).sqrt();
            ratio += ((var_a[c] + BN_EPS) / (var_b[c] + BN_EPS)).ln().abs();
        }
        out.push((shift / k as f64, ratio / k as f64));
    }
    Ok(out)
}

/// Max over sites and width pairs of the per-pair mean shift, from the
/// final recorded entry.
pub fn summary_divergence(trace: &StatTrace) -> f64 {
    let Some(entry) = trace.entries.last() else {
        return 0.0;
    };
    let mut worst = 0.0f64;
    for (i, &wa) in trace.widths.iter().enumerate() {
        for &wb in &trace.widths[i + 1..] {
            if let Ok(per_site) = divergence(trace, entry, wa, wb) {
                for v in per_site {
                    worst = worst.max(v);
                }
            }
        }
    }
    worst
}

/// Report CSV: site, width_a, width_b, mean_shift, var_ratio, epoch.
pub fn write_report_csv(trace: &StatTrace, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "site,width_a,width_b,mean_shift,var_ratio,epoch").expect("vec write");
    for entry in &trace.entries {
        for (i, &wa) in trace.widths.iter().enumerate() {
            for &wb in &trace.widths[i + 1..] {
                let shifts = divergence(trace, entry, wa, wb)?;
                let ratios = variance_ratio(trace, entry, wa, wb)?;
                for site in 0..trace.sites() {
                    writeln!(
                        out,
                        "{site},{wa:.6},{wb:.6},{:.6},{:.6},{}",
                        shifts[site], ratios[site], entry.epoch
                    )
                    .expect("vec write");
                }
            }
        }
    }
    std::fs::write(&path, out)
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct StatsExperimentConfig {
    /// Ascending width set to track and train, last must be 1.0.
    pub widths: Vec<f64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub probe_batch: usize,
    pub base_channels: usize,
    pub seed: u64,
}

impl Default for StatsExperimentConfig {
    fn default() -> Self {
        StatsExperimentConfig {
            widths: vec![0.25, 0.5, 0.75, 1.0],
            epochs: 5,
            batch_size: 128,
            lr0: 0.01,
            momentum: 0.9,
            probe_batch: 256,
            base_channels: 32,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariantOutcome {
    pub kind: VariantKind,
    pub trace: StatTrace,
    pub summary_divergence: f64,
    /// (width, test accuracy) per tracked width.
    pub accuracy: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct StatsExperiment {
    pub outcomes: Vec<VariantOutcome>,
}

impl StatsExperiment {
    pub fn outcome(&self, kind: VariantKind) -> &VariantOutcome {
        self.outcomes
            .iter()
            .find(|o| o.kind == kind)
            .expect("all three variants present")
    }
}

/// Train the three variants at the same fixed widths with per-epoch
/// observation on a fixed held-out probe batch, then evaluate each at
/// every width.
pub fn run_varying_stats_experiment<S: Scalar>(
    train_ds: &Dataset<S>,
    test_ds: &Dataset<S>,
    preprocess: &Preprocess<S>,
    cfg: &StatsExperimentConfig,
) -> Result<StatsExperiment> {
    let mut widths_desc = cfg.widths.clone();
    widths_desc.sort_by(|a, b| b.partial_cmp(a).expect("finite widths"));
    let train_cfg = TrainConfig {
        batch_size: cfg.batch_size,
        lr0: cfg.lr0,
        momentum: cfg.momentum,
        weight_decay: 0.0,
        epochs: cfg.epochs,
        schedule: Default::default(),
        widths_mode: WidthsMode::Fixed(widths_desc),
        seed: cfg.seed,
    };

    // Fixed probe batch from the held-out split, seeded once.
    let probe = {
        let mut rng = substream(cfg.seed, stream::PROBE, 0);
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..test_ds.len()).collect();
        idx.shuffle(&mut rng);
        idx.truncate(cfg.probe_batch.min(test_ds.len()));
        let batch = test_ds.gather(&idx);
        let mut images = batch.images;
        preprocess.normalize(&mut images);
        images
    };

    let mut outcomes = Vec::new();
    for kind in [VariantKind::Awn, VariantKind::Standard, VariantKind::SNet] {
        let trained_widths = match kind {
            VariantKind::SNet => Some(cfg.widths.as_slice()),
            _ => None,
        };
        let mut rng = substream(cfg.seed, stream::INIT, kind as u64);
        let mut model: Model<S> = build_lenet3c1l(
            ModelVariant::new(kind).with_base_channels(cfg.base_channels),
            train_ds.channels(),
            train_ds.num_classes,
            train_ds.hw(),
            trained_widths,
            &mut rng,
        )?;

        let channels = model.norms.iter().map(|n| n.channels()).collect();
        let mut trace = StatTrace::new(cfg.widths.clone(), channels);
        let mut track_err = None;
        train_fixed_widths(&mut model, train_ds, preprocess, &train_cfg, |stats, m| {
            if track_err.is_some() {
                return;
            }
            match track_stats(m, stats.epoch, &probe, &cfg.widths) {
                Ok(entry) => trace.entries.push(entry),
                Err(e) => track_err = Some(e),
            }
        })?;
        if let Some(e) = track_err {
            return Err(e);
        }

        let mut accuracy = Vec::new();
        for &w in &cfg.widths {
            let acc = evaluate(&model, test_ds, preprocess, WidthFactor::new(w)?)?;
            accuracy.push((w, acc));
        }
        let summary = summary_divergence(&trace);
        outcomes.push(VariantOutcome {
            kind,
            trace,
            summary_divergence: summary,
            accuracy,
        });
    }
    Ok(StatsExperiment { outcomes })
}
