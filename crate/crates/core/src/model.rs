//! LeNet-3C1L in four variants, with width-conditioned forward/backward.
//!
//! The backbone is 3 x (conv 5x5 pad 2 -> batch norm -> relu -> maxpool
//! 2x2) followed by one dense classifier over the active flattened
//! features. Variants differ in two orthogonal choices: whether the convs
//! are triangular or dense, and whether normalization state is shared or
//! switchable per width:
//!
//! - `Awn`: triangular convs (stages 2 and 3), one shared norm state,
//!   widened by sqrt(2) so its active parameter count at full width matches
//!   the dense baseline.
//! - `Standard`: dense convs, one shared norm state.
//! - `SNet`: dense convs, one norm state per trained width.
//! - `UsNet`: dense convs, a switchable norm bank that is rebuilt by
//!   post-training calibration.
//!
//! The first conv is never masked: its input is the image, whose channels
//! are active at every width, so the any-width constraint imposes nothing
//! there (with one input channel a triangular mask would be vacuous anyway).

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::{BatchNorm, BnBatchStats, BnCache, Conv2d, Linear, SwitchableBatchNorm};
use crate::ops::{flatten, maxpool2d, maxpool2d_backward, relu, relu_backward};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::widths::{active_count, WidthFactor};

pub const CONV_KERNEL: usize = 5;
pub const CONV_PAD: usize = 2;
pub const POOL: usize = 2;
pub const STAGES: usize = 3;
pub const DEFAULT_BASE_CHANNELS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    Awn,
    Standard,
    SNet,
    UsNet,
}

impl VariantKind {
    pub fn as_str(self) -> &'static str {
        match self {
            VariantKind::Awn => "awn",
            VariantKind::Standard => "standard",
            VariantKind::SNet => "snet",
            VariantKind::UsNet => "usnet",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "awn" => Ok(VariantKind::Awn),
            "standard" => Ok(VariantKind::Standard),
            "snet" => Ok(VariantKind::SNet),
            "usnet" => Ok(VariantKind::UsNet),
            other => Err(Error::Arg(format!(
                "unknown variant '{other}' (expected awn|standard|snet|usnet)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelVariant {
    pub kind: VariantKind,
    pub width_multiplier: f64,
    pub base_channels: usize,
}

impl ModelVariant {
    pub fn new(kind: VariantKind) -> Self {
        let width_multiplier = match kind {
            VariantKind::Awn => std::f64::consts::SQRT_2,
            _ => 1.0,
        };
        ModelVariant {
            kind,
            width_multiplier,
            base_channels: DEFAULT_BASE_CHANNELS,
        }
    }

    pub fn with_base_channels(mut self, base: usize) -> Self {
        self.base_channels = base;
        self
    }

    /// Per-conv channel count: round(base * multiplier).
    pub fn channels(&self) -> usize {
        (self.base_channels as f64 * self.width_multiplier).round() as usize
    }
}

/// Normalization site: one shared state or one state per trained width.
#[derive(Debug, Clone, PartialEq)]
pub enum Norm<S> {
    Shared(BatchNorm<S>),
    Switchable(SwitchableBatchNorm<S>),
}

impl<S: Scalar> Norm<S> {
    pub fn channels(&self) -> usize {
        match self {
            Norm::Shared(bn) => bn.channels(),
            Norm::Switchable(bank) => bank.channels(),
        }
    }

    /// Number of stored normalization copies.
    pub fn copies(&self) -> usize {
        match self {
            Norm::Shared(_) => 1,
            Norm::Switchable(bank) => bank.len(),
        }
    }
}

/// How a training-mode pass picks the normalization state at a switchable
/// site: by exact trained width, or pinned to one slot (random-width
/// training of the calibrated variant, and calibration itself).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnRoute {
    ByWidth,
    Slot(usize),
}

#[derive(Debug, Clone)]
pub struct Model<S> {
    pub variant: ModelVariant,
    pub convs: Vec<Conv2d<S>>,
    pub norms: Vec<Norm<S>>,
    pub classifier: Linear<S>,
    pub in_channels: usize,
    pub num_classes: usize,
    pub input_hw: (usize, usize),
}

/// Per-stage activations cached by a training forward pass.
pub struct StageTape<S> {
    conv_in: Tensor<S>,
    bn_cache: BnCache<S>,
    bn_slot: Option<usize>,
    relu_in: Tensor<S>,
    pool_in_shape: Vec<usize>,
    pool_argmax: Vec<usize>,
    k_out: usize,
    k_in: usize,
}

/// Everything `backward` needs from the matching `forward_train` call.
pub struct Trace<S> {
    pub alpha: WidthFactor,
    stages: Vec<StageTape<S>>,
    classifier_in: Tensor<S>,
    feat_active: usize,
}

/// Parameter gradients keyed by parameter name.
#[derive(Debug, Clone, Default)]
pub struct Gradients<S> {
    pub by_name: BTreeMap<String, Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn new() -> Self {
        Gradients {
            by_name: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: String, grad: Tensor<S>) {
        self.by_name.insert(name, grad);
    }

    /// Elementwise sum with another gradient set (union of keys), which is
    /// how the unweighted multi-width loss sum accumulates.
    pub fn accumulate(&mut self, other: Gradients<S>) -> Result<()> {
        for (name, grad) in other.by_name {
            match self.by_name.get_mut(&name) {
                None => {
                    self.by_name.insert(name, grad);
                }
                Some(existing) => {
                    if existing.shape() != grad.shape() {
                        return Err(Error::Shape(format!(
                            "gradient '{name}' shape {:?} vs {:?}",
                            existing.shape(),
                            grad.shape()
                        )));
                    }
                    for (a, b) in existing.data_mut().iter_mut().zip(grad.data()) {
                        *a += *b;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<S>> {
        self.by_name.get(name)
    }
}

/// Build LeNet-3C1L. `input_hw` fixes the classifier's input size.
/// `trained_widths` is required for the switchable variants and must be
/// strictly ascending ending at 1.0.
pub fn build_lenet3c1l<S: Scalar>(
    variant: ModelVariant,
    in_channels: usize,
    num_classes: usize,
    input_hw: (usize, usize),
    trained_widths: Option<&[f64]>,
    rng: &mut ChaCha8Rng,
) -> Result<Model<S>> {
    let channels = variant.channels();
    if channels == 0 || in_channels == 0 || num_classes == 0 {
        return Err(Error::Arg(
            "channels, in_channels and num_classes must be positive".into(),
        ));
    }
    let triangular = variant.kind == VariantKind::Awn;
    let switchable = matches!(variant.kind, VariantKind::SNet | VariantKind::UsNet);
    if switchable && trained_widths.is_none() {
        return Err(Error::Arg(format!(
            "variant '{}' requires trained_widths",
            variant.kind.as_str()
        )));
    }

    let mut convs = Vec::with_capacity(STAGES);
    let mut norms = Vec::with_capacity(STAGES);
    let mut c_in = in_channels;
    let (mut h, mut w) = input_hw;
    for stage in 0..STAGES {
        // The stem conv stays dense: image channels never deactivate.
        let conv = if triangular && stage > 0 {
            Conv2d::triangular(channels, c_in, CONV_KERNEL, 1, CONV_PAD, rng)
        } else {
            Conv2d::standard(channels, c_in, CONV_KERNEL, 1, CONV_PAD, rng)
        };
        convs.push(conv);
        norms.push(if switchable {
            Norm::Switchable(SwitchableBatchNorm::new(
                channels,
                trained_widths.expect("checked above"),
            )?)
        } else {
            Norm::Shared(BatchNorm::new(channels))
        });
        c_in = channels;
        if h < POOL || w < POOL {
            return Err(Error::Arg(format!(
                "input {input_hw:?} too small for {STAGES} pooling stages"
            )));
        }
        h = (h - POOL) / POOL + 1;
        w = (w - POOL) / POOL + 1;
    }

    let classifier = Linear::standard(num_classes, channels * h * w, rng);
    Ok(Model {
        variant,
        convs,
        norms,
        classifier,
        in_channels,
        num_classes,
        input_hw,
    })
}

impl<S: Scalar> Model<S> {
    /// Active channel counts per stage at `alpha`.
    pub fn stage_widths(&self, alpha: WidthFactor) -> Vec<usize> {
        self.convs
            .iter()
            .map(|c| active_count(alpha, c.out_channels()))
            .collect()
    }

    /// Spatial extents after the final pooling stage.
    pub fn final_hw(&self) -> (usize, usize) {
        let (mut h, mut w) = self.input_hw;
        for _ in 0..STAGES {
            h = (h - POOL) / POOL + 1;
            w = (w - POOL) / POOL + 1;
        }
        (h, w)
    }

    pub fn bank(&self) -> Option<&SwitchableBatchNorm<S>> {
        match &self.norms[0] {
            Norm::Switchable(bank) => Some(bank),
            Norm::Shared(_) => None,
        }
    }

    /// Training forward: batch-statistic normalization, running stats
    /// updated at the active channels, full tape returned for `backward`.
    pub fn forward_train(
        &mut self,
        images: &Tensor<S>,
        alpha: WidthFactor,
        route: BnRoute,
    ) -> Result<(Tensor<S>, Trace<S>)> {
        self.check_images(images)?;
        let mut stages = Vec::with_capacity(STAGES);
        let mut x = images.clone();
        let mut k_in = self.in_channels;
        for stage in 0..STAGES {
            let k_out = active_count(alpha, self.convs[stage].out_channels());
            let conv_in = x;
            let conv_out = self.convs[stage].forward(&conv_in, k_out, k_in)?;
            let (slot, state) = match &mut self.norms[stage] {
                Norm::Shared(bn) => (None, bn),
                Norm::Switchable(bank) => {
                    let idx = resolve_slot(bank, alpha, route)?;
                    (Some(idx), bank.state_mut(idx)?)
                }
            };
            let (bn_out, bn_cache, _) = state.forward_train(&conv_out, k_out)?;
            let relu_out = relu(&bn_out);
            let (pool_out, pool_argmax) = maxpool2d(&relu_out, POOL, POOL)?;
            stages.push(StageTape {
                conv_in,
                bn_cache,
                bn_slot: slot,
                relu_in: bn_out,
                pool_in_shape: relu_out.shape().to_vec(),
                pool_argmax,
                k_out,
                k_in,
            });
            k_in = k_out;
            x = pool_out;
        }
        let classifier_in = flatten(&x);
        let feat_active = classifier_in.shape()[1];
        let logits = self
            .classifier
            .forward(&classifier_in, self.num_classes, feat_active)?;
        Ok((
            logits,
            Trace {
                alpha,
                stages,
                classifier_in,
                feat_active,
            },
        ))
    }

    /// Inference forward using running statistics. For switchable variants
    /// `alpha` must equal one of the trained widths (resolve untrained
    /// widths with the next-larger rule first).
    pub fn forward_eval(&self, images: &Tensor<S>, alpha: WidthFactor) -> Result<Tensor<S>> {
        self.forward_eval_routed(images, alpha, BnRoute::ByWidth)
    }

    /// Eval forward with explicit normalization routing: `Slot(i)` runs the
    /// network at width `alpha` while normalizing with state `i`'s
    /// statistics, the protocol for probing a switchable model at widths it
    /// was never calibrated for.
    pub fn forward_eval_routed(
        &self,
        images: &Tensor<S>,
        alpha: WidthFactor,
        route: BnRoute,
    ) -> Result<Tensor<S>> {
        let (flat, feat_active) = self.backbone(images, alpha, route)?;
        self.classifier.forward(&flat, self.num_classes, feat_active)
    }

    /// Eval-mode backbone output (flattened active features), the surface
    /// on which width-reduced and full-width passes are comparable.
    pub fn backbone_eval(&self, images: &Tensor<S>, alpha: WidthFactor) -> Result<Tensor<S>> {
        Ok(self.backbone(images, alpha, BnRoute::ByWidth)?.0)
    }

    /// Observation forward: batch-statistic normalization at each site
    /// without mutating anything; reports each site's batch statistics.
    pub fn forward_observe(
        &self,
        images: &Tensor<S>,
        alpha: WidthFactor,
    ) -> Result<(Tensor<S>, Vec<BnBatchStats<S>>)> {
        self.check_images(images)?;
        let mut stats = Vec::with_capacity(STAGES);
        let mut x = images.clone();
        let mut k_in = self.in_channels;
        for stage in 0..STAGES {
            let k_out = active_count(alpha, self.convs[stage].out_channels());
            let conv_out = self.convs[stage].forward(&x, k_out, k_in)?;
            let state = match &self.norms[stage] {
                Norm::Shared(bn) => bn,
                Norm::Switchable(bank) => {
                    let idx = resolve_slot(bank, alpha, BnRoute::ByWidth)?;
                    bank.state(idx)?
                }
            };
            let (bn_out, site_stats) = state.forward_observe(&conv_out, k_out)?;
            stats.push(site_stats);
            let relu_out = relu(&bn_out);
            let (pool_out, _) = maxpool2d(&relu_out, POOL, POOL)?;
            k_in = k_out;
            x = pool_out;
        }
        let flat = flatten(&x);
        let feat = flat.shape()[1];
        let logits = self.classifier.forward(&flat, self.num_classes, feat)?;
        Ok((logits, stats))
    }

    fn backbone(
        &self,
        images: &Tensor<S>,
        alpha: WidthFactor,
        route: BnRoute,
    ) -> Result<(Tensor<S>, usize)> {
        self.check_images(images)?;
        let mut x = images.clone();
        let mut k_in = self.in_channels;
        for stage in 0..STAGES {
            let k_out = active_count(alpha, self.convs[stage].out_channels());
            let conv_out = self.convs[stage].forward(&x, k_out, k_in)?;
            let bn_out = match &self.norms[stage] {
                Norm::Shared(bn) => bn.forward_eval(&conv_out, k_out)?,
                Norm::Switchable(bank) => {
                    let idx = resolve_slot(bank, alpha, route)?;
                    bank.state(idx)?.forward_eval(&conv_out, k_out)?
                }
            };
            let relu_out = relu(&bn_out);
            let (pool_out, _) = maxpool2d(&relu_out, POOL, POOL)?;
            k_in = k_out;
            x = pool_out;
        }
        let flat = flatten(&x);
        let feat = flat.shape()[1];
        Ok((flat, feat))
    }

    /// Backward through the tape of a `forward_train` call. Gradients cover
    /// exactly the parameters active at the trace's width; masked weight
    /// entries and inactive channels carry exact zeros.
    pub fn backward(&self, trace: &Trace<S>, d_logits: &Tensor<S>) -> Result<Gradients<S>> {
        let mut grads = Gradients::new();
        let (d_flat, d_w, d_b) = self.classifier.backward(
            &trace.classifier_in,
            d_logits,
            self.num_classes,
            trace.feat_active,
        )?;
        grads.insert("classifier.weight".into(), d_w);
        grads.insert(
            "classifier.bias".into(),
            Tensor::from_vec(&[self.num_classes], d_b)?,
        );

        let last = &trace.stages[STAGES - 1];
        let pool_out_shape = [
            trace.classifier_in.shape()[0],
            last.k_out,
            (last.pool_in_shape[2] - POOL) / POOL + 1,
            (last.pool_in_shape[3] - POOL) / POOL + 1,
        ];
        let mut d_x = d_flat.reshape(&pool_out_shape)?;
        for (stage_idx, tape) in trace.stages.iter().enumerate().rev() {
            let d_pool = maxpool2d_backward(&tape.pool_in_shape, &tape.pool_argmax, &d_x);
            let d_relu = relu_backward(&tape.relu_in, &d_pool);
            let state = match &self.norms[stage_idx] {
                Norm::Shared(bn) => bn,
                Norm::Switchable(bank) => bank.state(tape.bn_slot.expect("switchable tape"))?,
            };
            let (d_bn_in, d_gamma, d_beta) = state.backward(&tape.bn_cache, &d_relu);
            let prefix = match tape.bn_slot {
                None => format!("bn{}", stage_idx + 1),
                Some(slot) => format!("bn{}.states.{slot}", stage_idx + 1),
            };
            let c = self.norms[stage_idx].channels();
            grads.insert(format!("{prefix}.gamma"), Tensor::from_vec(&[c], d_gamma)?);
            grads.insert(format!("{prefix}.beta"), Tensor::from_vec(&[c], d_beta)?);

            let (d_conv_in, d_w, d_b) =
                self.convs[stage_idx].backward(&tape.conv_in, &d_bn_in, tape.k_out, tape.k_in)?;
            let c_out = self.convs[stage_idx].out_channels();
            grads.insert(format!("conv{}.weight", stage_idx + 1), d_w);
            grads.insert(
                format!("conv{}.bias", stage_idx + 1),
                Tensor::from_vec(&[c_out], d_b)?,
            );
            d_x = d_conv_in;
        }
        Ok(grads)
    }

    /// Re-zero masked weight entries on every triangular layer.
    pub fn apply_masks(&mut self) {
        for conv in &mut self.convs {
            conv.apply_mask();
        }
        self.classifier.apply_mask();
    }

    /// Trainable scalar count; masked conv entries do not count.
    pub fn param_count(&self) -> usize {
        let convs: usize = self.convs.iter().map(|c| c.param_count()).sum();
        let norms: usize = self
            .norms
            .iter()
            .map(|n| 2 * n.channels() * n.copies())
            .sum();
        convs + norms + self.classifier.param_count()
    }

    /// Visit every trainable parameter as (name, shape, data).
    #[allow(clippy::type_complexity)]
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &[usize], &[S])) {
        self.visit(false, f)
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut [S])) {
        self.visit_mut(false, f)
    }

    /// Visit parameters plus normalization running statistics — the full
    /// persistent state of the model.
    #[allow(clippy::type_complexity)]
    pub fn visit_state(&self, f: &mut dyn FnMut(&str, &[usize], &[S])) {
        self.visit(true, f)
    }

    pub fn visit_state_mut(&mut self, f: &mut dyn FnMut(&str, &mut [S])) {
        self.visit_mut(true, f)
    }

    #[allow(clippy::type_complexity)]
    fn visit(&self, buffers: bool, f: &mut dyn FnMut(&str, &[usize], &[S])) {
        fn visit_bn<S: Scalar>(
            f: &mut dyn FnMut(&str, &[usize], &[S]),
            prefix: &str,
            buffers: bool,
            bn: &BatchNorm<S>,
        ) {
            f(&format!("{prefix}.gamma"), &[bn.gamma.len()], &bn.gamma);
            f(&format!("{prefix}.beta"), &[bn.beta.len()], &bn.beta);
            if buffers {
                f(
                    &format!("{prefix}.running_mean"),
                    &[bn.running_mean.len()],
                    &bn.running_mean,
                );
                f(
                    &format!("{prefix}.running_var"),
                    &[bn.running_var.len()],
                    &bn.running_var,
                );
            }
        }

        for (i, conv) in self.convs.iter().enumerate() {
            f(
                &format!("conv{}.weight", i + 1),
                conv.weight.shape(),
                conv.weight.data(),
            );
            f(&format!("conv{}.bias", i + 1), &[conv.bias.len()], &conv.bias);
        }
        for (i, norm) in self.norms.iter().enumerate() {
            match norm {
                Norm::Shared(bn) => visit_bn(f, &format!("bn{}", i + 1), buffers, bn),
                Norm::Switchable(bank) => {
                    for (j, state) in bank.states.iter().enumerate() {
                        visit_bn(f, &format!("bn{}.states.{j}", i + 1), buffers, state);
                    }
                }
            }
        }
        f(
            "classifier.weight",
            self.classifier.weight.shape(),
            self.classifier.weight.data(),
        );
        f(
            "classifier.bias",
            &[self.classifier.bias.len()],
            &self.classifier.bias,
        );
    }

    fn visit_mut(&mut self, buffers: bool, f: &mut dyn FnMut(&str, &mut [S])) {
        fn visit_bn<S: Scalar>(
            f: &mut dyn FnMut(&str, &mut [S]),
            prefix: &str,
            buffers: bool,
            bn: &mut BatchNorm<S>,
        ) {
            f(&format!("{prefix}.gamma"), &mut bn.gamma);
            f(&format!("{prefix}.beta"), &mut bn.beta);
            if buffers {
                f(&format!("{prefix}.running_mean"), &mut bn.running_mean);
                f(&format!("{prefix}.running_var"), &mut bn.running_var);
            }
        }

        for (i, conv) in self.convs.iter_mut().enumerate() {
            f(&format!("conv{}.weight", i + 1), conv.weight.data_mut());
            f(&format!("conv{}.bias", i + 1), &mut conv.bias);
        }
        for (i, norm) in self.norms.iter_mut().enumerate() {
            match norm {
                Norm::Shared(bn) => visit_bn(f, &format!("bn{}", i + 1), buffers, bn),
                Norm::Switchable(bank) => {
                    for (j, state) in bank.states.iter_mut().enumerate() {
                        visit_bn(f, &format!("bn{}.states.{j}", i + 1), buffers, state);
                    }
                }
            }
        }
        f("classifier.weight", self.classifier.weight.data_mut());
        f("classifier.bias", &mut self.classifier.bias);
    }

    /// Overwrite the model state from named tensors, consuming matched
    /// entries from the map. Every state slot must be present with the
    /// right element count.
    pub fn load_state(
        &mut self,
        tensors: &mut BTreeMap<String, (Vec<usize>, Vec<S>)>,
    ) -> Result<()> {
        let mut missing = Vec::new();
        let mut mismatched = Vec::new();
        self.visit_state_mut(&mut |name, slot| match tensors.remove(name) {
            None => missing.push(name.to_string()),
            Some((_, data)) => {
                if data.len() == slot.len() {
                    slot.copy_from_slice(&data);
                } else {
                    mismatched.push(format!("{name} ({} vs {})", data.len(), slot.len()));
                }
            }
        });
        if !missing.is_empty() {
            return Err(Error::Format(format!("missing tensors: {missing:?}")));
        }
        if !mismatched.is_empty() {
            return Err(Error::Format(format!("tensor size mismatch: {mismatched:?}")));
        }
        Ok(())
    }

    fn check_images(&self, images: &Tensor<S>) -> Result<()> {
        if images.rank() != 4
            || images.shape()[1] != self.in_channels
            || (images.shape()[2], images.shape()[3]) != self.input_hw
        {
            return Err(Error::Shape(format!(
                "expected images [N, {}, {}, {}], got {:?}",
                self.in_channels,
                self.input_hw.0,
                self.input_hw.1,
                images.shape()
            )));
        }
        Ok(())
    }
}

fn resolve_slot<S: Scalar>(
    bank: &SwitchableBatchNorm<S>,
    alpha: WidthFactor,
    route: BnRoute,
) -> Result<usize> {
    match route {
        BnRoute::Slot(idx) => {
            if idx >= bank.len() {
                return Err(Error::Index(format!(
                    "norm slot {idx} out of {}",
                    bank.len()
                )));
            }
            Ok(idx)
        }
        BnRoute::ByWidth => bank.index_of(alpha).ok_or_else(|| {
            Error::Arg(format!(
                "width {} is not a trained width {:?}; resolve it with the next-larger rule first",
                alpha.value(),
                bank.widths
            ))
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::softmax_cross_entropy;
    use crate::rng::{normal_f64, substream, stream};

    fn rng(seed: u64) -> ChaCha8Rng {
        substream(seed, stream::INIT, 0)
    }

    fn random_images<S: Scalar>(n: usize, c: usize, hw: usize, seed: u64) -> Tensor<S> {
        let mut r = rng(seed);
        let data = (0..n * c * hw * hw)
            .map(|_| S::from_f64(normal_f64(&mut r)))
            .collect();
        Tensor::from_vec(&[n, c, hw, hw], data).unwrap()
    }

    #[test]
    fn awn_default_is_45_channels() {
        let v = ModelVariant::new(VariantKind::Awn);
        assert_eq!(v.channels(), 45); // round(32 * sqrt(2))
        let m = build_lenet3c1l::<f32>(v, 1, 10, (28, 28), None, &mut rng(1)).unwrap();
        assert_eq!(m.convs.len(), 3);
        assert!(m.convs.iter().all(|c| c.out_channels() == 45));
        assert!(m.convs[0].mask.is_none());
        assert!(m.convs[1].mask.is_some() && m.convs[2].mask.is_some());
        assert_eq!(m.final_hw(), (3, 3));
        assert_eq!(m.classifier.in_features(), 45 * 9);
    }

    #[test]
    fn standard_conv_param_count_is_dense_arithmetic() {
        let v = ModelVariant::new(VariantKind::Standard);
        let m = build_lenet3c1l::<f32>(v, 1, 10, (28, 28), None, &mut rng(2)).unwrap();
        assert_eq!(m.convs[1].param_count(), 32 * 32 * 25 + 32);
    }

    #[test]
    fn switchable_variants_require_widths() {
        let v = ModelVariant::new(VariantKind::SNet);
        assert!(build_lenet3c1l::<f32>(v, 1, 10, (28, 28), None, &mut rng(3)).is_err());
        let m =
            build_lenet3c1l::<f32>(v, 1, 10, (28, 28), Some(&[0.25, 0.5, 0.75, 1.0]), &mut rng(3))
                .unwrap();
        assert_eq!(m.norms[0].copies(), 4);
    }

    /// The sqrt(2)-widened triangular model carries about as many usable
    /// parameters at full width as the dense base model.
    #[test]
    fn parameter_count_parity_within_ten_percent() {
        let awn = build_lenet3c1l::<f32>(
            ModelVariant::new(VariantKind::Awn),
            1,
            10,
            (28, 28),
            None,
            &mut rng(4),
        )
        .unwrap();
        let dense = build_lenet3c1l::<f32>(
            ModelVariant::new(VariantKind::Standard),
            1,
            10,
            (28, 28),
            None,
            &mut rng(5),
        )
        .unwrap();
        let ratio = awn.param_count() as f64 / dense.param_count() as f64;
        assert!((ratio - 1.0).abs() < 0.10, "ratio {ratio}");
    }

    #[test]
    fn same_resolved_width_gives_bitwise_identical_logits() {
        let m = build_lenet3c1l::<f32>(
            ModelVariant::new(VariantKind::Awn).with_base_channels(8),
            1,
            10,
            (12, 12),
            None,
            &mut rng(6),
        )
        .unwrap();
        let x = random_images::<f32>(2, 1, 12, 61);
        // ceil(0.999 * 11) == 11 == ceil(1.0 * 11): same active widths
        let a = m.forward_eval(&x, WidthFactor::new(1.0).unwrap()).unwrap();
        let b = m.forward_eval(&x, WidthFactor::new(0.999).unwrap()).unwrap();
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn forward_is_deterministic() {
        let m = build_lenet3c1l::<f32>(
            ModelVariant::new(VariantKind::Standard).with_base_channels(8),
            1,
            10,
            (12, 12),
            None,
            &mut rng(7),
        )
        .unwrap();
        let x = random_images::<f32>(3, 1, 12, 62);
        let a = m.forward_eval(&x, WidthFactor::FULL).unwrap();
        let b = m.forward_eval(&x, WidthFactor::FULL).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn reduced_width_gradients_vanish_outside_active_blocks() {
        let mut m = build_lenet3c1l::<f64>(
            ModelVariant::new(VariantKind::Awn).with_base_channels(8),
            1,
            10,
            (12, 12),
            None,
            &mut rng(8),
        )
        .unwrap();
        let x = random_images::<f64>(2, 1, 12, 63);
        let alpha = WidthFactor::new(0.25).unwrap();
        let k = active_count(alpha, m.convs[0].out_channels());
        let (logits, trace) = m.forward_train(&x, alpha, BnRoute::ByWidth).unwrap();
        let (_, d_logits) = softmax_cross_entropy(&logits, &[1, 2]).unwrap();
        let grads = m.backward(&trace, &d_logits).unwrap();

        let dw2 = grads.get("conv2.weight").unwrap();
        let mask = m.convs[1].mask.clone().unwrap();
        for s in 0..m.convs[1].out_channels() {
            for t in 0..m.convs[1].in_channels() {
                let block_zero = (0..CONV_KERNEL)
                    .flat_map(|r| (0..CONV_KERNEL).map(move |q| dw2.at4(s, t, r, q)))
                    .all(|g| g == 0.0);
                if s >= k || t >= k || !mask.is_allowed(s, t) {
                    assert!(block_zero, "block ({s},{t}) has gradient");
                }
            }
        }
        // classifier columns beyond the active features are untouched
        let (h, w) = m.final_hw();
        let dwc = grads.get("classifier.weight").unwrap();
        for o in 0..10 {
            for fidx in k * h * w..m.classifier.in_features() {
                assert_eq!(dwc.at2(o, fidx), 0.0);
            }
        }
    }

    /// Gradient of the summed multi-width loss equals the sum of per-width
    /// gradients; the training loops rely on plain accumulation.
    #[test]
    fn multi_width_gradient_is_additive() {
        let mut m = build_lenet3c1l::<f64>(
            ModelVariant::new(VariantKind::Awn).with_base_channels(8),
            1,
            10,
            (12, 12),
            None,
            &mut rng(9),
        )
        .unwrap();
        let x = random_images::<f64>(2, 1, 12, 64);
        let labels = [3u16, 8];

        let mut acc = Gradients::new();
        let mut per_width = Vec::new();
        for alpha in [1.0, 0.5] {
            let alpha = WidthFactor::new(alpha).unwrap();
            let (logits, trace) = m.forward_train(&x, alpha, BnRoute::ByWidth).unwrap();
            let (_, d_logits) = softmax_cross_entropy(&logits, &labels).unwrap();
            let g = m.backward(&trace, &d_logits).unwrap();
            per_width.push(g.clone());
            acc.accumulate(g).unwrap();
        }
        let name = "conv2.weight";
        let a = acc.get(name).unwrap();
        let m0 = per_width[0].get(name).unwrap();
        let m1 = per_width[1].get(name).unwrap();
        for i in 0..a.len() {
            let sum = m0.data()[i] + m1.data()[i];
            assert!((a.data()[i] - sum).abs() < 1e-12);
        }
    }

    #[test]
    fn visit_state_roundtrip_is_lossless() {
        let m = build_lenet3c1l::<f32>(
            ModelVariant::new(VariantKind::SNet).with_base_channels(8),
            1,
            10,
            (12, 12),
            Some(&[0.5, 1.0]),
            &mut rng(10),
        )
        .unwrap();
        let mut dump: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
        m.visit_state(&mut |name, shape, data| {
            dump.insert(name.to_string(), (shape.to_vec(), data.to_vec()));
        });
        let mut copy = build_lenet3c1l::<f32>(
            ModelVariant::new(VariantKind::SNet).with_base_channels(8),
            1,
            10,
            (12, 12),
            Some(&[0.5, 1.0]),
            &mut rng(11),
        )
        .unwrap();
        copy.load_state(&mut dump).unwrap();
        assert!(dump.is_empty());
        let x = random_images::<f32>(2, 1, 12, 65);
        assert_eq!(
            m.forward_eval(&x, WidthFactor::FULL).unwrap(),
            copy.forward_eval(&x, WidthFactor::FULL).unwrap()
        );
    }
}
