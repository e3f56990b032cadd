//! Optimizers, learning-rate schedules, and the training regimes:
//! fixed-width multi-loss, random width sampling, and post-training
//! normalization calibration, plus the next-larger inference-width rule.
//!
//! Every iteration runs one forward/backward per width in the iteration's
//! width list (descending), sums the losses unweighted by accumulating the
//! per-width gradients, and takes a single SGD step. All randomness comes
//! from streams derived from the config seed, so training is reproducible
//! bit for bit.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::data::{augment_crop_flip, batch_iter, Augment, Dataset, Preprocess, Split};
use crate::error::{Error, Result};
use crate::layers::check_width_list;
use crate::model::{BnRoute, Gradients, Model, Norm, VariantKind};
use crate::ops::softmax_cross_entropy;
use crate::rng::{substream, stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::widths::WidthFactor;

#[derive(Debug, Clone, PartialEq)]
pub enum Schedule {
    /// lr0 * factor^(milestones passed); milestones are fractions of the
    /// total epochs.
    StepDecay { milestones: Vec<f64>, factor: f64 },
    /// lr0 * (1 - iter/total_iters), per iteration.
    Linear,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::StepDecay {
            milestones: vec![0.5, 0.75],
            factor: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum WidthsMode {
    /// Train this exact width set every iteration; must be sorted
    /// descending from 1.0.
    Fixed(Vec<f64>),
    /// Per iteration: alpha_min, alpha_max, and (n-2) uniform draws.
    Random {
        n: usize,
        alpha_min: f64,
        alpha_max: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr0: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub schedule: Schedule,
    pub widths_mode: WidthsMode,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            lr0: 0.01,
            momentum: 0.9,
            weight_decay: 0.0,
            epochs: 20,
            schedule: Schedule::default(),
            widths_mode: WidthsMode::Fixed(vec![1.0, 0.75, 0.5, 0.25]),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        match &self.widths_mode {
            WidthsMode::Fixed(widths) => {
                if widths.is_empty() {
                    return Err(Error::Config("fixed width list must not be empty".into()));
                }
                if (widths[0] - 1.0).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "fixed widths must start at 1.0 descending, got {widths:?}"
                    )));
                }
                for pair in widths.windows(2) {
                    if pair[0] <= pair[1] {
                        return Err(Error::Config(format!(
                            "fixed widths must be strictly descending, got {widths:?}"
                        )));
                    }
                }
                for &w in widths {
                    WidthFactor::new(w)?;
                }
            }
            WidthsMode::Random {
                n,
                alpha_min,
                alpha_max,
            } => {
                if *n < 2 {
                    return Err(Error::Config(
                        "random mode needs n >= 2 (the endpoints are always included)".into(),
                    ));
                }
                if alpha_min >= alpha_max {
                    return Err(Error::Config(format!(
                        "alpha_min {alpha_min} must be below alpha_max {alpha_max}"
                    )));
                }
                WidthFactor::new(*alpha_min)?;
                WidthFactor::new(*alpha_max)?;
            }
        }
        Ok(())
    }
}

/// Momentum buffers, keyed like the gradients.
#[derive(Debug, Clone, Default)]
pub struct SgdState<S> {
    pub velocity: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> SgdState<S> {
    pub fn new() -> Self {
        SgdState {
            velocity: BTreeMap::new(),
        }
    }
}

/// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
/// Parameters without a gradient this step are left untouched. Masked
/// entries are re-zeroed afterwards via `apply_masks`.
pub fn sgd_step<S: Scalar>(
    model: &mut Model<S>,
    grads: &Gradients<S>,
    state: &mut SgdState<S>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    let lr = S::from_f64(lr);
    let mu = S::from_f64(momentum);
    let wd = S::from_f64(weight_decay);
    let mut shape_err = None;
    model.visit_params_mut(&mut |name, param| {
        let Some(grad) = grads.by_name.get(name) else {
            return;
        };
        if grad.len() != param.len() {
            shape_err = Some(format!(
                "gradient '{name}' has {} elements, parameter has {}",
                grad.len(),
                param.len()
            ));
            return;
        }
        let v = state
            .velocity
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(grad.shape()));
        for ((p, &g), vel) in param.iter_mut().zip(grad.data()).zip(v.data_mut()) {
            *vel = mu * *vel + g + wd * *p;
            *p -= lr * *vel;
        }
    });
    if let Some(msg) = shape_err {
        return Err(Error::Shape(msg));
    }
    model.apply_masks();
    Ok(())
}

/// Learning rate for (epoch, iteration). Step decay is an epoch-level
/// schedule; the linear schedule decays every iteration.
pub fn lr_at(
    config: &TrainConfig,
    epoch: usize,
    iter_in_epoch: usize,
    iters_per_epoch: usize,
) -> f64 {
    match &config.schedule {
        Schedule::StepDecay { milestones, factor } => {
            let passed = milestones
                .iter()
                .filter(|&&frac| {
                    let at = (frac * config.epochs as f64).floor() as usize;
                    epoch >= at
                })
                .count();
            config.lr0 * factor.powi(passed as i32)
        }
        Schedule::Linear => {
            let total = (config.epochs * iters_per_epoch).max(1);
            let it = epoch * iters_per_epoch + iter_in_epoch;
            config.lr0 * (1.0 - it as f64 / total as f64)
        }
    }
}

/// Per-epoch training record: one (width, mean loss) row per width slot.
/// In random mode the interior slots hold that slot's mean sampled width.
#[derive(Debug, Clone)]
pub struct EpochStats {
    pub epoch: usize,
    pub lr: f64,
    pub slots: Vec<(f64, f64)>,
}

/// Owns the optimizer and random streams across epochs.
pub struct Trainer<S> {
    pub config: TrainConfig,
    pub sgd: SgdState<S>,
    epoch: usize,
}

impl<S: Scalar> Trainer<S> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config,
            sgd: SgdState::new(),
            epoch: 0,
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    /// One pass over the training set. Width routing by variant:
    /// switchable-per-width models route normalization by the exact width;
    /// the calibrated variant trains everything through slot 0; shared
    /// states ignore routing.
    pub fn run_epoch(
        &mut self,
        model: &mut Model<S>,
        dataset: &Dataset<S>,
        preprocess: &Preprocess<S>,
    ) -> Result<EpochStats> {
        if dataset.split != Split::Train {
            return Err(Error::Arg("training requires the train split".into()));
        }
        let epoch = self.epoch;
        let cfg = self.config.clone();
        let iters_per_epoch = dataset.len().div_ceil(cfg.batch_size);
        let mut width_rng = substream(cfg.seed, stream::WIDTHS, epoch as u64);
        let mut aug_rng = substream(cfg.seed, stream::AUGMENT, epoch as u64);
        let shuffle_seed = cfg.seed ^ (epoch as u64).wrapping_mul(0x9e37_79b9);

        let slot_count = match &cfg.widths_mode {
            WidthsMode::Fixed(w) => w.len(),
            WidthsMode::Random { n, .. } => *n,
        };
        let mut slot_loss = vec![0.0f64; slot_count];
        let mut slot_width = vec![0.0f64; slot_count];
        let mut iters = 0usize;

        for (it, batch) in batch_iter(dataset, cfg.batch_size, true, shuffle_seed).enumerate() {
            let batch = if preprocess.augment == Augment::Crop4Flip {
                augment_crop_flip(&batch, &mut aug_rng)
            } else {
                batch
            };
            let mut images = batch.images;
            preprocess.normalize(&mut images);

            let widths = iteration_widths(&cfg.widths_mode, &mut width_rng);
            let mut grads = Gradients::new();
            for (slot, &alpha) in widths.iter().enumerate() {
                let alpha = WidthFactor::new(alpha)?;
                let route = bn_route(model, alpha)?;
                let (logits, trace) = model.forward_train(&images, alpha, route)?;
                let (loss, d_logits) = softmax_cross_entropy(&logits, &batch.labels)?;
                grads.accumulate(model.backward(&trace, &d_logits)?)?;
                slot_loss[slot] += loss.as_f64();
                slot_width[slot] += alpha.value();
            }
            let lr = lr_at(&cfg, epoch, it, iters_per_epoch);
            sgd_step(
                model,
                &grads,
                &mut self.sgd,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )?;
            iters += 1;
        }

        self.epoch += 1;
        let denom = iters.max(1) as f64;
        Ok(EpochStats {
            epoch,
            lr: lr_at(&cfg, epoch, 0, iters_per_epoch),
            slots: (0..slot_count)
                .map(|s| (slot_width[s] / denom, slot_loss[s] / denom))
                .collect(),
        })
    }
}

/// The widths trained in one iteration, descending. Random mode always
/// includes both endpoints exactly once; duplicates among the interior
/// draws are kept so the per-iteration cost stays fixed.
fn iteration_widths(mode: &WidthsMode, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match mode {
        WidthsMode::Fixed(widths) => widths.clone(),
        WidthsMode::Random {
            n,
            alpha_min,
            alpha_max,
        } => {
            let mut widths = Vec::with_capacity(*n);
            widths.push(*alpha_max);
            widths.push(*alpha_min);
            for _ in 0..n - 2 {
                widths.push(rng.random_range(*alpha_min..=*alpha_max));
            }
            widths.sort_by(|a, b| b.partial_cmp(a).expect("finite widths"));
            widths
        }
    }
}

fn bn_route<S: Scalar>(model: &Model<S>, alpha: WidthFactor) -> Result<BnRoute> {
    match (&model.norms[0], model.variant.kind) {
        // Shared states ignore the route entirely.
        (Norm::Shared(_), _) => Ok(BnRoute::ByWidth),
        // Calibrated variant: one state trained at every sampled width,
        // replaced wholesale by `calibrate_bn` afterwards.
        (Norm::Switchable(_), VariantKind::UsNet) => Ok(BnRoute::Slot(0)),
        (Norm::Switchable(bank), _) => {
            if bank.index_of(alpha).is_some() {
                Ok(BnRoute::ByWidth)
            } else {
                Err(Error::Arg(format!(
                    "width {} is not in the trained set {:?}",
                    alpha.value(),
                    bank.widths
                )))
            }
        }
    }
}

/// Train at the exact width list in `config` (fixed mode).
pub fn train_fixed_widths<S: Scalar>(
    model: &mut Model<S>,
    dataset: &Dataset<S>,
    preprocess: &Preprocess<S>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &Model<S>),
) -> Result<Vec<EpochStats>> {
    if !matches!(config.widths_mode, WidthsMode::Fixed(_)) {
        return Err(Error::Config("train_fixed_widths needs fixed widths".into()));
    }
    run(model, dataset, preprocess, config, &mut on_epoch)
}

/// Random-sample training: endpoints plus (n-2) uniform widths per
/// iteration (random mode).
pub fn train_random_sample<S: Scalar>(
    model: &mut Model<S>,
    dataset: &Dataset<S>,
    preprocess: &Preprocess<S>,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &Model<S>),
) -> Result<Vec<EpochStats>> {
    if !matches!(config.widths_mode, WidthsMode::Random { .. }) {
        return Err(Error::Config(
            "train_random_sample needs random widths".into(),
        ));
    }
    run(model, dataset, preprocess, config, &mut on_epoch)
}

fn run<S: Scalar>(
    model: &mut Model<S>,
    dataset: &Dataset<S>,
    preprocess: &Preprocess<S>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochStats, &Model<S>),
) -> Result<Vec<EpochStats>> {
    let mut trainer = Trainer::new(config.clone())?;
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let stats = trainer.run_epoch(model, dataset, preprocess)?;
        on_epoch(&stats, model);
        history.push(stats);
    }
    Ok(history)
}

/// Rebuild the calibrated variant's normalization bank: freeze parameters,
/// then for each requested width stream `passes` epochs of training data
/// through train-mode normalization only (no optimizer), storing the
/// resulting running statistics in that width's slot. Scale/shift are
/// cloned from the trained state.
pub fn calibrate_bn<S: Scalar>(
    model: &mut Model<S>,
    dataset: &Dataset<S>,
    preprocess: &Preprocess<S>,
    widths: &[f64],
    passes: usize,
    seed: u64,
) -> Result<()> {
    if model.variant.kind != VariantKind::UsNet {
        return Err(Error::State(format!(
            "calibration applies to the usnet variant, got '{}'",
            model.variant.kind.as_str()
        )));
    }
    check_width_list(widths)?;
    if passes == 0 {
        return Err(Error::Arg("calibration needs at least one pass".into()));
    }

    // Fresh bank per site: trained gamma/beta, reset running statistics.
    for norm in &mut model.norms {
        let Norm::Switchable(bank) = norm else {
            return Err(Error::State("usnet norm sites must be switchable".into()));
        };
        let donor = bank.states.last().expect("non-empty bank").clone();
        let states = widths
            .iter()
            .map(|_| {
                let mut st = donor.clone();
                let c = st.gamma.len();
                st.running_mean = vec![S::zero(); c];
                st.running_var = vec![S::one(); c];
                st
            })
            .collect();
        bank.states = states;
        bank.widths = widths.to_vec();
    }

    for (slot, &width) in widths.iter().enumerate() {
        let alpha = WidthFactor::new(width)?;
        for pass in 0..passes {
            let shuffle_seed = seed ^ ((slot as u64) << 32) ^ pass as u64;
            for batch in batch_iter(dataset, 128, true, shuffle_seed) {
                let mut images = batch.images;
                preprocess.normalize(&mut images);
                let _ = model.forward_train(&images, alpha, BnRoute::Slot(slot))?;
            }
        }
    }
    Ok(())
}

/// The smallest trained width >= alpha (exact matches return themselves).
/// `trained` must be ascending with 1.0 last, so a result always exists.
pub fn select_inference_width(trained: &[f64], alpha: WidthFactor) -> WidthFactor {
    debug_assert!(!trained.is_empty() && (trained[trained.len() - 1] - 1.0).abs() < 1e-12);
    for &w in trained {
        if w >= alpha.value() - 1e-12 {
            return WidthFactor::new(w.min(1.0)).expect("trained widths are valid");
        }
    }
    WidthFactor::FULL
}
