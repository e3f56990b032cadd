//! Fully-connected layer over a feature prefix, optionally triangular.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::normal_f64;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::widths::TriangularMask;

#[derive(Debug, Clone, PartialEq)]
pub struct Linear<S> {
    /// [out_features, in_features], row-major.
    pub weight: Tensor<S>,
    pub bias: Vec<S>,
    pub mask: Option<TriangularMask>,
}

impl<S: Scalar> Linear<S> {
    pub fn standard(out_features: usize, in_features: usize, rng: &mut ChaCha8Rng) -> Self {
        Self::build(out_features, in_features, None, rng)
    }

    pub fn triangular(out_features: usize, in_features: usize, rng: &mut ChaCha8Rng) -> Self {
        let mask = TriangularMask::new(out_features, in_features);
        Self::build(out_features, in_features, Some(mask), rng)
    }

    fn build(
        out_features: usize,
        in_features: usize,
        mask: Option<TriangularMask>,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut weight = Tensor::zeros(&[out_features, in_features]);
        {
            let data = weight.data_mut();
            for s in 0..out_features {
                let fan_in = mask.as_ref().map_or(in_features, |m| m.t_max(s));
                let std = (2.0 / fan_in as f64).sqrt();
                for t in 0..in_features {
                    data[s * in_features + t] = S::from_f64(normal_f64(rng) * std);
                }
            }
        }
        let mut layer = Linear {
            weight,
            bias: vec![S::zero(); out_features],
            mask,
        };
        layer.apply_mask();
        layer
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn apply_mask(&mut self) {
        let Some(mask) = &self.mask else { return };
        let in_f = self.in_features();
        let data = self.weight.data_mut();
        for s in 0..mask.m_out() {
            data[s * in_f + mask.t_max(s)..(s + 1) * in_f].fill(S::zero());
        }
    }

    /// y[n, s] = bias[s] + sum over the first `in_active` features. `x` must
    /// be [N, in_active]; the first `out_active` rows of the weight are used.
    pub fn forward(&self, x: &Tensor<S>, out_active: usize, in_active: usize) -> Result<Tensor<S>> {
        self.check(x, out_active, in_active)?;
        let n = x.shape()[0];
        let in_f = self.in_features();
        let mut out = Tensor::zeros(&[n, out_active]);
        let src = x.data();
        let w = self.weight.data();
        let dst = out.data_mut();
        for img in 0..n {
            let x_row = &src[img * in_active..(img + 1) * in_active];
            for s in 0..out_active {
                let w_row = &w[s * in_f..s * in_f + in_active];
                let mut acc = self.bias[s];
                for (&xv, &wv) in x_row.iter().zip(w_row) {
                    acc += xv * wv;
                }
                dst[img * out_active + s] = acc;
            }
        }
        Ok(out)
    }

    /// Paired backward. d_weight is full-shaped; columns beyond `in_active`
    /// and rows beyond `out_active` stay exactly zero, as do masked entries.
    pub fn backward(
        &self,
        x: &Tensor<S>,
        d_out: &Tensor<S>,
        out_active: usize,
        in_active: usize,
    ) -> Result<(Tensor<S>, Tensor<S>, Vec<S>)> {
        self.check(x, out_active, in_active)?;
        let n = x.shape()[0];
        if d_out.shape() != [n, out_active] {
            return Err(Error::Shape(format!(
                "linear backward: upstream {:?} does not match [{n}, {out_active}]",
                d_out.shape()
            )));
        }
        let in_f = self.in_features();
        let mut d_x = Tensor::zeros(&[n, in_active]);
        let mut d_w = Tensor::zeros(self.weight.shape());
        let mut d_b = vec![S::zero(); self.out_features()];
        let w = self.weight.data();
        let dy = d_out.data();
        let xs = x.data();
        {
            let dxd = d_x.data_mut();
            let dwd = d_w.data_mut();
            for img in 0..n {
                let x_row = &xs[img * in_active..(img + 1) * in_active];
                let dx_row = &mut dxd[img * in_active..(img + 1) * in_active];
                for s in 0..out_active {
                    let g = dy[img * out_active + s];
                    d_b[s] += g;
                    let w_row = &w[s * in_f..s * in_f + in_active];
                    let dw_row = &mut dwd[s * in_f..s * in_f + in_active];
                    for i in 0..in_active {
                        dx_row[i] += g * w_row[i];
                        dw_row[i] += g * x_row[i];
                    }
                }
            }
        }
        if let Some(mask) = &self.mask {
            let data = d_w.data_mut();
            for s in 0..out_active {
                data[s * in_f + mask.t_max(s)..s * in_f + in_active].fill(S::zero());
            }
        }
        Ok((d_x, d_w, d_b))
    }

    pub fn param_count(&self) -> usize {
        let weights = match &self.mask {
            Some(m) => m.allowed_connections(),
            None => self.out_features() * self.in_features(),
        };
        weights + self.out_features()
    }

    fn check(&self, x: &Tensor<S>, out_active: usize, in_active: usize) -> Result<()> {
        if x.rank() != 2 || x.shape()[1] != in_active {
            return Err(Error::Shape(format!(
                "linear input must be [N, {in_active}], got {:?}",
                x.shape()
            )));
        }
        if out_active == 0
            || out_active > self.out_features()
            || in_active == 0
            || in_active > self.in_features()
        {
            return Err(Error::Arg(format!(
                "active block ({out_active}, {in_active}) invalid for linear ({}, {})",
                self.out_features(),
                self.in_features()
            )));
        }
        Ok(())
    }
}
