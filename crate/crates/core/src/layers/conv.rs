//! Width-aware convolution layer, with or without a triangular channel mask.
//!
//! Masked entries are stored as literal zeros in the dense weight tensor
//! and re-zeroed after every optimizer step, so a width-reduced forward is
//! the plain dense kernel over a channel prefix, bitwise equal to slicing
//! the full-width output.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{conv2d_sliced, conv2d_sliced_backward};
use crate::rng::normal_f64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::widths::TriangularMask;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d<S> {
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
    pub stride: usize,
    pub pad: usize,
    pub mask: Option<TriangularMask>,
}

impl<S: Scalar> Conv2d<S> {
    /// Dense layer, Kaiming-normal init over fan-in = C_in * kH * kW.
    pub fn standard(
        c_out: usize,
        c_in: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self::build(c_out, c_in, kernel, stride, pad, None, rng)
    }

    /// Triangular layer. Each output row's fan-in is its own permitted
    /// connection count, so init is scaled per row; a uniform scale would
    /// leave the early (narrow) rows over-amplified.
    pub fn triangular(
        c_out: usize,
        c_in: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mask = TriangularMask::new(c_out, c_in);
        Self::build(c_out, c_in, kernel, stride, pad, Some(mask), rng)
    }

    fn build(
        c_out: usize,
        c_in: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        mask: Option<TriangularMask>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut weight = Tensor::zeros(&[c_out, c_in, kernel, kernel]);
        let taps = kernel * kernel;
        {
            let data = weight.data_mut();
            for s in 0..c_out {
                let fan_in = mask.as_ref().map_or(c_in, |m| m.t_max(s)) * taps;
                let std = (2.0 / fan_in as f64).sqrt();
                for t in 0..c_in {
                    for i in 0..taps {
                        let v = normal_f64(rng) * std;
                        data[(s * c_in + t) * taps + i] = S::from_f64(v);
                    }
                }
            }
        }
        let mut layer = Conv2d {
            weight,
            bias: vec![S::zero(); c_out],
            stride,
            pad,
            mask,
        };
        layer.apply_mask();
        layer
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[2]
    }

    /// Zero every masked weight entry. Called at init and after each
    /// optimizer step so decay can never resurrect a masked connection.
    pub fn apply_mask(&mut self) {
        let Some(mask) = &self.mask else { return };
        let (c_in, kh, kw) = (
            self.weight.shape()[1],
            self.weight.shape()[2],
            self.weight.shape()[3],
        );
        let taps = kh * kw;
        let data = self.weight.data_mut();
        for s in 0..mask.m_out() {
            for t in mask.t_max(s)..c_in {
                data[(s * c_in + t) * taps..(s * c_in + t + 1) * taps].fill(S::zero());
            }
        }
    }

    /// Forward over the first `k_out` output channels given `k_in` input
    /// channels. `x` must carry exactly `k_in` channels.
    pub fn forward(&self, x: &Tensor<S>, k_out: usize, k_in: usize) -> Result<Tensor<S>> {
        self.check_active(k_out, k_in)?;
        conv2d_sliced(x, &self.weight, &self.bias, self.stride, self.pad, k_out, k_in)
    }

    /// Paired backward; the weight gradient is full-shaped with masked
    /// entries forced to exact zero.
    pub fn backward(
        &self,
        x: &Tensor<S>,
        d_out: &Tensor<S>,
        k_out: usize,
        k_in: usize,
    ) -> Result<(Tensor<S>, Tensor<S>, Vec<S>)> {
        self.check_active(k_out, k_in)?;
        let (d_x, mut d_w, d_b) = conv2d_sliced_backward(
            x,
            &self.weight,
            self.stride,
            self.pad,
            k_out,
            k_in,
            d_out,
        )?;
        if let Some(mask) = &self.mask {
            let (c_in, kh, kw) = (
                self.weight.shape()[1],
                self.weight.shape()[2],
                self.weight.shape()[3],
            );
            let taps = kh * kw;
            let data = d_w.data_mut();
            for s in 0..k_out {
                for t in mask.t_max(s)..k_in {
                    data[(s * c_in + t) * taps..(s * c_in + t + 1) * taps].fill(S::zero());
                }
            }
        }
        Ok((d_x, d_w, d_b))
    }

    /// Weight entries that can ever be non-zero, plus biases.
    pub fn param_count(&self) -> usize {
        let taps = self.kernel() * self.kernel();
        let weights = match &self.mask {
            Some(m) => m.allowed_connections() * taps,
            None => self.out_channels() * self.in_channels() * taps,
        };
        weights + self.out_channels()
    }

    fn check_active(&self, k_out: usize, k_in: usize) -> Result<()> {
        if k_out == 0 || k_out > self.out_channels() || k_in == 0 || k_in > self.in_channels() {
            return Err(Error::Arg(format!(
                "active block ({k_out}, {k_in}) invalid for conv of ({}, {})",
                self.out_channels(),
                self.in_channels()
            )));
        }
        Ok(())
    }
}
