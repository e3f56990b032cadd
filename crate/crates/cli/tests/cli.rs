//! Workflow smoke tests for the command layer.

use std::path::PathBuf;

use anywidth::model::Norm;
use anywidth_cli::checkpoint::load_checkpoint;
use anywidth_cli::commands::{cmd_eval, cmd_stats, cmd_train};
use anywidth_cli::config::{Overrides, RunConfig};

fn tmp_dir(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join("awn_cli_smoke").join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_overrides(out: &std::path::Path) -> Overrides {
    Overrides {
        dataset: Some("synthetic".into()),
        out_dir: Some(out.to_path_buf()),
        epochs: Some(1),
        batch_size: Some(32),
        base_channels: Some(6),
        synth_train: Some(128),
        synth_test: Some(64),
        synth_classes: Some(4),
        seed: Some(3),
        ..Default::default()
    }
}

#[test]
fn snet_training_stores_four_norm_copies() {
    let dir = tmp_dir("snet_copies");
    let cfg = RunConfig::resolve(
        None,
        Overrides {
            variant: Some("snet".into()),
            widths: Some(vec![1.0, 0.75, 0.5, 0.25]),
            ..tiny_overrides(&dir)
        },
    )
    .unwrap();
    let out = cmd_train(&cfg).unwrap();
    let (model, _, meta) = load_checkpoint::<f32>(&out.checkpoint).unwrap();
    assert!(model
        .norms
        .iter()
        .all(|n| matches!(n, Norm::Switchable(bank) if bank.len() == 4)));
    assert_eq!(meta.get("widths"), Some("0.25,0.5,0.75,1"));

    // train_log.csv: one row per width slot per epoch plus the header
    let log = std::fs::read_to_string(&out.log).unwrap();
    assert_eq!(log.lines().next(), Some("epoch,width,loss,lr"));
    assert_eq!(log.lines().count(), 1 + 4);

    let acc = cmd_eval(&cfg, &out.checkpoint, 0.6).unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn stats_command_writes_reports_and_footer() {
    let dir = tmp_dir("stats_smoke");
    let cfg = RunConfig::resolve(
        None,
        Overrides {
            widths: Some(vec![1.0, 0.5]),
            ..tiny_overrides(&dir)
        },
    )
    .unwrap();
    let out = cmd_stats(&cfg).unwrap();
    assert_eq!(out.reports.len(), 3);
    for path in &out.reports {
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("site,width_a,width_b,mean_shift,var_ratio,epoch"));
        assert!(text.lines().count() > 1, "{} has no rows", path.display());
    }
    let summary = std::fs::read_to_string(&out.summary).unwrap();
    assert!(summary.contains("variant,width,accuracy"));
    assert!(summary.contains("# awn_divergence_below_shared true"));
}

/// A constant-classifier checkpoint (all weights zero, a fixed bias
/// winner) sweeps to a flat curve whose AUC is the winning class's prior.
#[test]
fn degenerate_constant_classifier_gives_flat_curve() {
    use anywidth_cli::checkpoint::{load_checkpoint, save_checkpoint};
    use anywidth_cli::commands::cmd_sweep;

    let dir = tmp_dir("degenerate");
    let cfg = RunConfig::resolve(
        None,
        Overrides {
            variant: Some("awn".into()),
            ..tiny_overrides(&dir)
        },
    )
    .unwrap();
    let out = cmd_train(&cfg).unwrap();
    let (mut model, _, _) = load_checkpoint::<f32>(&out.checkpoint).unwrap();
    model.visit_params_mut(&mut |name, data| {
        data.fill(0.0);
        if name == "classifier.bias" {
            data[2] = 1.0; // class 2 always wins
        }
    });
    let degenerate = dir.join("degenerate.ckpt");
    save_checkpoint(&degenerate, &model, None, &[]).unwrap();

    let grid: Vec<f64> = vec![0.25, 0.5, 0.75, 1.0];
    let csv = dir.join("flat.csv");
    let (curve, auc) = cmd_sweep(&cfg, &degenerate, &grid, &csv).unwrap();
    let first = curve.points()[0].1;
    assert!(curve.points().iter().all(|&(_, acc)| acc == first));
    // balanced 4-class synthetic data: prior = 1/4
    assert!((auc - 0.25).abs() < 0.05, "auc {auc}");
}

#[test]
fn train_rejects_bad_flag_combinations() {
    let dir = tmp_dir("bad_cfg");
    // ascending width list violates the descending-from-1.0 contract
    let err = RunConfig::resolve(
        None,
        Overrides {
            variant: Some("snet".into()),
            widths: Some(vec![0.25, 0.5, 0.75, 1.0]),
            ..tiny_overrides(&dir)
        },
    )
    .unwrap_err();
    assert!(err.to_string().contains("descending"), "{err}");
}
