//! Width-sweep evaluation: accuracy over the test set, width-accuracy
//! trade-off curves, and their normalized area-under-curve summary.

use std::io::Write;
use std::path::Path;

use crate::data::{Dataset, Preprocess};
use crate::error::{Error, Result};
use crate::model::{BnRoute, Model};
use crate::scalar::Scalar;
use crate::train::select_inference_width;
use crate::widths::WidthFactor;

const EVAL_BATCH: usize = 256;

/// Ordered (alpha, accuracy) samples, alphas strictly ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct TradeoffCurve {
    points: Vec<(f64, f64)>,
}

impl TradeoffCurve {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Arg("a curve needs at least 2 points".into()));
        }
        for pair in points.windows(2) {
            if pair[0].0 >= pair[1].0 {
                return Err(Error::Arg(format!(
                    "curve alphas must be strictly ascending, got {} then {}",
                    pair[0].0, pair[1].0
                )));
            }
        }
        if points
            .iter()
            .any(|&(a, acc)| !(0.0..=1.0).contains(&acc) || a <= 0.0 || a > 1.0)
        {
            return Err(Error::Arg("curve points out of range".into()));
        }
        Ok(TradeoffCurve { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    /// Largest accuracy fall when stepping down one grid point in width.
    pub fn max_step_drop(&self) -> f64 {
        self.points
            .windows(2)
            .map(|p| (p[1].1 - p[0].1).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Eval-mode accuracy over the full test set. Models with a switchable
/// normalization bank are evaluated at the next-larger trained width.
pub fn evaluate<S: Scalar>(
    model: &Model<S>,
    dataset: &Dataset<S>,
    preprocess: &Preprocess<S>,
    alpha: WidthFactor,
) -> Result<f64> {
    let (alpha, route) = match model.bank() {
        Some(bank) => (select_inference_width(&bank.widths, alpha), BnRoute::ByWidth),
        None => (alpha, BnRoute::ByWidth),
    };
    accuracy_routed(model, dataset, preprocess, alpha, route)
}

/// N-Width probe at an untrained width: run the network at `alpha` itself
/// while normalizing with the next-larger trained width's statistics.
/// This is how a fixed-width-bank model must operate between its modes,
/// and the statistics mismatch it suffers there is what per-width
/// calibration removes.
pub fn evaluate_borrowed_stats<S: Scalar>(
    model: &Model<S>,
    dataset: &Dataset<S>,
    preprocess: &Preprocess<S>,
    alpha: WidthFactor,
) -> Result<f64> {
    let bank = model.bank().ok_or_else(|| {
        Error::State("borrowed-statistics evaluation needs a switchable bank".into())
    })?;
    let resolved = select_inference_width(&bank.widths, alpha);
    let slot = bank
        .index_of(resolved)
        .expect("next-larger width is in the bank");
    accuracy_routed(model, dataset, preprocess, alpha, BnRoute::Slot(slot))
}

fn accuracy_routed<S: Scalar>(
    model: &Model<S>,
    dataset: &Dataset<S>,
    preprocess: &Preprocess<S>,
    alpha: WidthFactor,
    route: BnRoute,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::Arg("cannot evaluate on an empty dataset".into()));
    }
    // No augmentation here regardless of the preprocess policy; evaluation
    // only normalizes.
    let mut correct = 0usize;
    let mut start = 0usize;
    while start < dataset.len() {
        let end = (start + EVAL_BATCH).min(dataset.len());
        let indices: Vec<usize> = (start..end).collect();
        let batch = dataset.gather(&indices);
        let mut images = batch.images;
        preprocess.normalize(&mut images);
        let logits = model.forward_eval_routed(&images, alpha, route)?;
        let k = logits.shape()[1];
        for (row, &label) in batch.labels.iter().enumerate() {
            let row_data = &logits.data()[row * k..(row + 1) * k];
            let mut best = 0usize;
            for (j, &v) in row_data.iter().enumerate() {
                if v > row_data[best] {
                    best = j;
                }
            }
            if best == label as usize {
                correct += 1;
            }
        }
        start = end;
    }
    Ok(correct as f64 / dataset.len() as f64)
}

/// Evaluate at each alpha (ascending). The next-larger rule inside
/// `evaluate` makes switchable-bank curves piecewise constant between
/// trained widths.
pub fn width_sweep<S: Scalar>(
    model: &Model<S>,
    dataset: &Dataset<S>,
    preprocess: &Preprocess<S>,
    alphas: &[f64],
) -> Result<TradeoffCurve> {
    let mut points = Vec::with_capacity(alphas.len());
    for &a in alphas {
        let alpha = WidthFactor::new(a)?;
        let acc = evaluate(model, dataset, preprocess, alpha)?;
        points.push((a, acc));
    }
    TradeoffCurve::new(points)
}

/// The default sweep grid: 31 evenly spaced widths, 0.25 to 1.0 step 0.025.
pub fn default_grid() -> Vec<f64> {
    (0..31).map(|i| 0.25 + i as f64 * 0.025).collect()
}

/// Normalized trapezoidal area under the curve: the integral of accuracy
/// over alpha divided by the alpha range, i.e. a mean accuracy in [0, 1].
pub fn auc(curve: &TradeoffCurve) -> f64 {
    let pts = curve.points();
    let mut area = 0.0;
    for pair in pts.windows(2) {
        let ((x1, y1), (x2, y2)) = (pair[0], pair[1]);
        area += (x2 - x1) * (y2 + y1) / 2.0;
    }
    area / (pts[pts.len() - 1].0 - pts[0].0)
}

/// Curve CSV: header `alpha,accuracy`, six decimal places.
pub fn write_curve_csv(curve: &TradeoffCurve, path: impl AsRef<Path>) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "alpha,accuracy").expect("vec write");
    for &(a, acc) in curve.points() {
        writeln!(out, "{a:.6},{acc:.6}").expect("vec write");
    }
    std::fs::write(&path, out)
        .map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::model::{build_lenet3c1l, ModelVariant, VariantKind};
    use crate::rng::{substream, stream};
    use crate::train::{train_fixed_widths, TrainConfig, WidthsMode};
    use crate::widths::active_count;
    use proptest::prelude::*;

    fn tiny_setup(seed: u64) -> (Model<f32>, Dataset<f32>, Dataset<f32>, Preprocess<f32>) {
        let mut rng = substream(seed, stream::INIT, 0);
        let model = build_lenet3c1l(
            ModelVariant::new(VariantKind::Awn).with_base_channels(6),
            1,
            4,
            (12, 12),
            None,
            &mut rng,
        )
        .unwrap();
        let (train, test) = crate::data::synth::generate(&crate::data::synth::SynthSpec {
            classes: 4,
            side: 12,
            train_n: 64,
            test_n: 40,
            seed,
            noise: 0.1,
            max_shift: 2,
        });
        (model, train, test, Preprocess::mnist())
    }

    #[test]
    fn untrained_model_sits_near_chance() {
        let (model, _, test, pre) = tiny_setup(21);
        let acc = evaluate(&model, &test, &pre, WidthFactor::FULL).unwrap();
        assert!(acc < 0.75, "untrained accuracy suspiciously high: {acc}");
    }

    #[test]
    fn memorizing_a_tiny_set_reaches_perfect_accuracy() {
        let (mut model, train, _, pre) = tiny_setup(22);
        let tiny = train.take(8);
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 8,
            lr0: 0.02,
            widths_mode: WidthsMode::Fixed(vec![1.0]),
            ..Default::default()
        };
        train_fixed_widths(&mut model, &tiny, &pre, &cfg, |_, _| {}).unwrap();
        let train_view = Dataset {
            split: Split::Test,
            ..tiny
        };
        let acc = evaluate(&model, &train_view, &pre, WidthFactor::FULL).unwrap();
        assert_eq!(acc, 1.0, "failed to memorize 8 examples");
    }

    /// Accuracy is a function of the resolved channel counts only.
    #[test]
    fn equal_active_counts_give_equal_accuracy() {
        let (model, _, test, pre) = tiny_setup(23);
        // channels = 8 (6 * sqrt2 rounded): alpha .3 and .375 both give k=3
        let k1 = active_count(WidthFactor::new(0.3).unwrap(), 8);
        let k2 = active_count(WidthFactor::new(0.375).unwrap(), 8);
        assert_eq!(k1, k2);
        let a1 = evaluate(&model, &test, &pre, WidthFactor::new(0.3).unwrap()).unwrap();
        let a2 = evaluate(&model, &test, &pre, WidthFactor::new(0.375).unwrap()).unwrap();
        assert_eq!(a1, a2);
    }

    #[test]
    fn borrowed_stats_equals_plain_eval_at_trained_widths() {
        let mut rng = substream(29, stream::INIT, 0);
        let model = build_lenet3c1l::<f32>(
            ModelVariant::new(VariantKind::SNet).with_base_channels(6),
            1,
            4,
            (12, 12),
            Some(&[0.5, 1.0]),
            &mut rng,
        )
        .unwrap();
        let (_, test) = crate::data::synth::generate(&crate::data::synth::SynthSpec {
            classes: 4,
            side: 12,
            train_n: 8,
            test_n: 40,
            seed: 30,
            noise: 0.1,
            max_shift: 2,
        });
        let pre = Preprocess::mnist();
        // at an exactly-trained width the borrowed slot is the width's own
        let half = WidthFactor::new(0.5).unwrap();
        let a = evaluate(&model, &test, &pre, half).unwrap();
        let b = evaluate_borrowed_stats(&model, &test, &pre, half).unwrap();
        assert_eq!(a, b);

        // shared-norm models have no bank to borrow from
        let (shared, _, test2, pre2) = tiny_setup(31);
        assert!(evaluate_borrowed_stats(&shared, &test2, &pre2, half).is_err());
    }

    #[test]
    fn default_grid_has_31_points() {
        let grid = default_grid();
        assert_eq!(grid.len(), 31);
        assert_eq!(grid[0], 0.25);
        assert!((grid[30] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn auc_of_constant_curve_is_the_constant() {
        let curve = TradeoffCurve::new(vec![(0.25, 0.9), (0.5, 0.9), (1.0, 0.9)]).unwrap();
        assert!((auc(&curve) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn auc_of_linear_ramp_is_half() {
        let curve = TradeoffCurve::new(vec![(0.25, 0.0), (1.0, 1.0)]).unwrap();
        assert!((auc(&curve) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn curve_validation() {
        assert!(TradeoffCurve::new(vec![(0.5, 0.5)]).is_err());
        assert!(TradeoffCurve::new(vec![(0.5, 0.5), (0.5, 0.6)]).is_err());
        assert!(TradeoffCurve::new(vec![(0.5, 0.5), (0.4, 0.6)]).is_err());
        assert!(TradeoffCurve::new(vec![(0.5, 1.5), (0.6, 0.6)]).is_err());
    }

    #[test]
    fn max_step_drop_ignores_rises() {
        let curve =
            TradeoffCurve::new(vec![(0.25, 0.5), (0.5, 0.8), (0.75, 0.7), (1.0, 0.9)]).unwrap();
        // stepping down in width: 0.9 -> 0.7 is a 0.2 drop? No: drops are
        // measured from the smaller-alpha side: acc rises 0.5->0.8 then
        // falls 0.8->0.7 going up; walking DOWN the widths the falls are
        // (0.8-0.5) and (0.9-0.7).
        assert!((curve.max_step_drop() - 0.3).abs() < 1e-12);
    }

    proptest! {
        /// Subdividing any segment with its own linear interpolant leaves
        /// the area unchanged.
        #[test]
        fn auc_is_invariant_under_linear_subdivision(
            accs in proptest::collection::vec(0.0f64..=1.0, 3..8),
            t in 0.05f64..0.95,
        ) {
            let n = accs.len();
            let alphas: Vec<f64> = (0..n).map(|i| 0.25 + 0.75 * i as f64 / (n - 1) as f64).collect();
            let pts: Vec<(f64, f64)> = alphas.iter().copied().zip(accs.iter().copied()).collect();
            let base = TradeoffCurve::new(pts.clone()).unwrap();

            // insert an interpolated point inside the first segment
            let (x1, y1) = pts[0];
            let (x2, y2) = pts[1];
            let xm = x1 + t * (x2 - x1);
            let ym = y1 + (xm - x1) / (x2 - x1) * (y2 - y1);
            let mut refined = pts.clone();
            refined.insert(1, (xm, ym));
            let fine = TradeoffCurve::new(refined).unwrap();

            prop_assert!((auc(&base) - auc(&fine)).abs() < 1e-12);
        }
    }
}
