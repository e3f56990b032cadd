//! 2-D convolution (cross-correlation, no kernel flip) via im2col + GEMM.
//!
//! The sliced entry points compute only a channel prefix of the output from
//! a channel prefix of the weights, which is how width-reduced forward
//! passes run. Because OIHW weight rows keep the first `k_in` input
//! channels contiguous, the reduced GEMM reads weight prefixes in place and
//! accumulates the surviving terms in the same order as the full-width
//! pass, so a reduced output is bitwise equal to the sliced full output.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::matmul::{gemm_nt, gemm_strided_nn, gemm_strided_tn};

/// Output spatial extent: floor((in + 2*pad - kernel)/stride) + 1.
pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 {
        return Err(Error::Arg("conv stride must be positive".into()));
    }
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::Shape(format!(
            "kernel extent {kernel} exceeds padded input extent {padded} ({input} + 2*{pad})"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Full-width convolution of [N,C_in,H,W] with OIHW weights [C_out,C_in,kH,kW].
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &[S],
    stride: usize,
    pad: usize,
) -> Result<Tensor<S>> {
    let c_out = weight_rank4(weight)?.0;
    let c_in = input_rank4(input)?.1;
    conv2d_sliced(input, weight, bias, stride, pad, c_out, c_in)
}

/// Gradients of `conv2d`: (d_input, d_weight, d_bias).
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Vec<S>)> {
    let c_out = weight_rank4(weight)?.0;
    let c_in = input_rank4(input)?.1;
    conv2d_sliced_backward(input, weight, stride, pad, c_out, c_in, d_out)
}

/// Convolution restricted to the first `k_out` output channels reading the
/// first `k_in` input channels. `input` must carry exactly `k_in` channels;
/// `weight`/`bias` are full-size and used as prefixes.
pub fn conv2d_sliced<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &[S],
    stride: usize,
    pad: usize,
    k_out: usize,
    k_in: usize,
) -> Result<Tensor<S>> {
    let geo = Geometry::resolve(input, weight, stride, pad, k_out, k_in)?;
    if bias.len() != geo.c_out_total {
        return Err(Error::Shape(format!(
            "bias length {} does not match {} output channels",
            bias.len(),
            geo.c_out_total
        )));
    }

    let mut out = Tensor::zeros(&[geo.n, k_out, geo.h_out, geo.w_out]);
    let mut col = vec![S::zero(); geo.k_cols * geo.patch];
    let x = input.data();
    let out_data = out.data_mut();
    for img in 0..geo.n {
        im2col(&geo, &x[img * geo.image_len..(img + 1) * geo.image_len], &mut col);
        let out_img = &mut out_data[img * k_out * geo.patch..(img + 1) * k_out * geo.patch];
        for (s, row) in out_img.chunks_exact_mut(geo.patch).enumerate() {
            row.fill(bias[s]);
        }
        gemm_strided_nn(
            k_out,
            geo.k_cols,
            geo.patch,
            weight.data(),
            geo.weight_row_stride,
            &col,
            out_img,
        );
    }
    Ok(out)
}

/// Gradients of `conv2d_sliced`. `d_weight` comes back full-shaped with
/// zeros outside the active (k_out, k_in) block; `d_bias` is full-length
/// with zeros beyond `k_out`.
pub fn conv2d_sliced_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    stride: usize,
    pad: usize,
    k_out: usize,
    k_in: usize,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Vec<S>)> {
    let geo = Geometry::resolve(input, weight, stride, pad, k_out, k_in)?;
    if d_out.shape() != [geo.n, k_out, geo.h_out, geo.w_out] {
        return Err(Error::Shape(format!(
            "conv backward: upstream shape {:?} does not match output [{}, {}, {}, {}]",
            d_out.shape(),
            geo.n,
            k_out,
            geo.h_out,
            geo.w_out
        )));
    }

    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weight = Tensor::zeros(weight.shape());
    let mut d_bias = vec![S::zero(); geo.c_out_total];
    let mut col = vec![S::zero(); geo.k_cols * geo.patch];
    let mut d_col = vec![S::zero(); geo.k_cols * geo.patch];
    // Weight gradient accumulates into a dense [k_out, k_cols] scratch and
    // is scattered into the strided full-shape rows once at the end.
    let mut d_w_block = vec![S::zero(); k_out * geo.k_cols];

    let x = input.data();
    let dy = d_out.data();
    let dx = d_input.data_mut();
    for img in 0..geo.n {
        let x_img = &x[img * geo.image_len..(img + 1) * geo.image_len];
        let dy_img = &dy[img * k_out * geo.patch..(img + 1) * k_out * geo.patch];

        im2col(&geo, x_img, &mut col);
        for (s, dy_row) in dy_img.chunks_exact(geo.patch).enumerate() {
            let mut acc = S::zero();
            for &v in dy_row {
                acc += v;
            }
            d_bias[s] += acc;
        }
        gemm_nt(k_out, geo.patch, geo.k_cols, dy_img, &col, &mut d_w_block);

        d_col.fill(S::zero());
        gemm_strided_tn(
            geo.k_cols,
            k_out,
            geo.patch,
            weight.data(),
            geo.weight_row_stride,
            dy_img,
            &mut d_col,
        );
        col2im(&geo, &d_col, &mut dx[img * geo.image_len..(img + 1) * geo.image_len]);
    }

    let dw = d_weight.data_mut();
    for s in 0..k_out {
        let dst = &mut dw[s * geo.weight_row_stride..s * geo.weight_row_stride + geo.k_cols];
        dst.copy_from_slice(&d_w_block[s * geo.k_cols..(s + 1) * geo.k_cols]);
    }
    Ok((d_input, d_weight, d_bias))
}

struct Geometry {
    n: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
    k_in: usize,
    c_out_total: usize,
    /// Active column count of the im2col matrix: k_in * kh * kw.
    k_cols: usize,
    /// h_out * w_out.
    patch: usize,
    /// Elements per image in the (k_in-channel) input tensor.
    image_len: usize,
    /// Full row stride of one output channel's weight block.
    weight_row_stride: usize,
}

impl Geometry {
    fn resolve<S: Scalar>(
        input: &Tensor<S>,
        weight: &Tensor<S>,
        stride: usize,
        pad: usize,
        k_out: usize,
        k_in: usize,
    ) -> Result<Self> {
        let (n, in_ch, h, w) = input_rank4(input)?;
        let (c_out_total, c_in_total, kh, kw) = weight_rank4(weight)?;
        if in_ch != k_in {
            return Err(Error::Shape(format!(
                "input carries {in_ch} channels but k_in is {k_in}"
            )));
        }
        if k_in > c_in_total || k_out > c_out_total || k_out == 0 || k_in == 0 {
            return Err(Error::Shape(format!(
                "active block ({k_out}, {k_in}) exceeds weight extents ({c_out_total}, {c_in_total})"
            )));
        }
        let h_out = conv_out_extent(h, kh, stride, pad)?;
        let w_out = conv_out_extent(w, kw, stride, pad)?;
        Ok(Geometry {
            n,
            h,
            w,
            kh,
            kw,
            stride,
            pad,
            h_out,
            w_out,
            k_in,
            c_out_total,
            k_cols: k_in * kh * kw,
            patch: h_out * w_out,
            image_len: k_in * h * w,
            weight_row_stride: c_in_total * kh * kw,
        })
    }

    /// Valid output-column range [lo, hi) for kernel tap offset q. Taps that
    /// never land inside the input (large q on heavily padded edges) get an
    /// empty range.
    fn ow_range(&self, q: usize) -> (usize, usize) {
        if q >= self.w + self.pad {
            return (0, 0);
        }
        let lo = if q >= self.pad {
            0
        } else {
            (self.pad - q).div_ceil(self.stride)
        };
        let hi = ((self.w + self.pad - q - 1) / self.stride + 1).min(self.w_out);
        (lo.min(hi), hi)
    }
}

/// Fill `col` (k_cols x patch) from one image. Out-of-bounds taps are never
/// written, so the buffer must start zeroed; the zero pattern is identical
/// for every image, which lets the buffer be reused across the batch.
fn im2col<S: Scalar>(geo: &Geometry, x_img: &[S], col: &mut [S]) {
    for c in 0..geo.k_in {
        let plane = &x_img[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for r in 0..geo.kh {
            for q in 0..geo.kw {
                let row_idx = (c * geo.kh + r) * geo.kw + q;
                let (ow_lo, ow_hi) = geo.ow_range(q);
                for oh in 0..geo.h_out {
                    let ih = oh * geo.stride + r;
                    if ih < geo.pad || ih >= geo.h + geo.pad {
                        continue;
                    }
                    let src_row = &plane[(ih - geo.pad) * geo.w..(ih - geo.pad + 1) * geo.w];
                    let dst =
                        &mut col[row_idx * geo.patch + oh * geo.w_out..][..geo.w_out];
                    if geo.stride == 1 {
                        let iw0 = ow_lo + q - geo.pad;
                        dst[ow_lo..ow_hi].copy_from_slice(&src_row[iw0..iw0 + (ow_hi - ow_lo)]);
                    } else {
                        for (ow, d) in dst[ow_lo..ow_hi].iter_mut().enumerate() {
                            *d = src_row[(ow_lo + ow) * geo.stride + q - geo.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add of the column gradient back onto one image (reverse of im2col).
fn col2im<S: Scalar>(geo: &Geometry, d_col: &[S], dx_img: &mut [S]) {
    for c in 0..geo.k_in {
        let plane = &mut dx_img[c * geo.h * geo.w..(c + 1) * geo.h * geo.w];
        for r in 0..geo.kh {
            for q in 0..geo.kw {
                let row_idx = (c * geo.kh + r) * geo.kw + q;
                let (ow_lo, ow_hi) = geo.ow_range(q);
                for oh in 0..geo.h_out {
                    let ih = oh * geo.stride + r;
                    if ih < geo.pad || ih >= geo.h + geo.pad {
                        continue;
                    }
                    let dst_row = &mut plane[(ih - geo.pad) * geo.w..(ih - geo.pad + 1) * geo.w];
                    let src = &d_col[row_idx * geo.patch + oh * geo.w_out..][..geo.w_out];
                    for ow in ow_lo..ow_hi {
                        dst_row[ow * geo.stride + q - geo.pad] += src[ow];
                    }
                }
            }
        }
    }
}

fn input_rank4<S: Scalar>(t: &Tensor<S>) -> Result<(usize, usize, usize, usize)> {
    if t.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv input must be rank 4 (N,C,H,W), got {:?}",
            t.shape()
        )));
    }
    let s = t.shape();
    Ok((s[0], s[1], s[2], s[3]))
}

fn weight_rank4<S: Scalar>(t: &Tensor<S>) -> Result<(usize, usize, usize, usize)> {
    if t.rank() != 4 {
        return Err(Error::Shape(format!(
            "conv weight must be rank 4 (C_out,C_in,kH,kW), got {:?}",
            t.shape()
        )));
    }
    let s = t.shape();
    Ok((s[0], s[1], s[2], s[3]))
}
