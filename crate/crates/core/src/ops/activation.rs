use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Elementwise max(0, x).
pub fn relu<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let data = x.data().iter().map(|&v| v.max(S::zero())).collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Routes the upstream gradient through the positive entries of `x`.
pub fn relu_backward<S: Scalar>(x: &Tensor<S>, d_out: &Tensor<S>) -> Tensor<S> {
    assert_eq!(x.shape(), d_out.shape(), "relu backward shape mismatch");
    let data = x
        .data()
        .iter()
        .zip(d_out.data())
        .map(|(&v, &g)| if v > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::from_vec(x.shape(), data).expect("same shape")
}

/// Windowed max over non-overlapping or strided windows. Returns the pooled
/// tensor plus the flat input index of each window's argmax (first maximum
/// wins on ties) for gradient routing.
pub fn maxpool2d<S: Scalar>(
    x: &Tensor<S>,
    window: usize,
    stride: usize,
) -> Result<(Tensor<S>, Vec<usize>)> {
    if x.rank() != 4 {
        return Err(Error::Shape(format!(
            "maxpool input must be rank 4, got {:?}",
            x.shape()
        )));
    }
    if window == 0 || stride == 0 {
        return Err(Error::Arg("maxpool window and stride must be positive".into()));
    }
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if window > h || window > w {
        return Err(Error::Shape(format!(
            "maxpool window {window} exceeds spatial extents {h}x{w}"
        )));
    }
    let h_out = (h - window) / stride + 1;
    let w_out = (w - window) / stride + 1;
    let mut out = Tensor::zeros(&[n, c, h_out, w_out]);
    let mut argmax = vec![0usize; n * c * h_out * w_out];
    let src = x.data();
    let dst = out.data_mut();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oh in 0..h_out {
            for ow in 0..w_out {
                let mut best_idx = base + oh * stride * w + ow * stride;
                let mut best = src[best_idx];
                for r in 0..window {
                    let row = base + (oh * stride + r) * w + ow * stride;
                    for q in 0..window {
                        let v = src[row + q];
                        if v > best {
                            best = v;
                            best_idx = row + q;
                        }
                    }
                }
                let o = (plane * h_out + oh) * w_out + ow;
                dst[o] = best;
                argmax[o] = best_idx;
            }
        }
    }
    Ok((out, argmax))
}

/// Scatter the upstream gradient back to each window's argmax position.
pub fn maxpool2d_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    d_out: &Tensor<S>,
) -> Tensor<S> {
    assert_eq!(argmax.len(), d_out.len(), "argmax/upstream length mismatch");
    let mut d_in = Tensor::zeros(input_shape);
    let dst = d_in.data_mut();
    for (&idx, &g) in argmax.iter().zip(d_out.data()) {
        dst[idx] += g;
    }
    d_in
}

/// [N,C,H,W] -> [N, C*H*W], preserving the batch extent.
pub fn flatten<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let n = x.shape()[0];
    let rest: usize = x.shape()[1..].iter().product();
    x.clone().reshape(&[n, rest]).expect("same element count")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, max_rel_err, DEFAULT_STEP};
    use crate::rng::{normal_f64, substream, stream};

    #[test]
    fn relu_clamps_negatives() {
        let x = Tensor::from_vec(&[3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn maxpool_2x2_takes_max() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]).unwrap();
        let (y, _) = maxpool2d(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn oversized_window_errors() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(matches!(maxpool2d(&x, 3, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn pool_backward_routes_to_argmax_only() {
        let mut rng = substream(81, stream::INIT, 0);
        let data: Vec<f64> = (0..2 * 2 * 4 * 4).map(|_| normal_f64(&mut rng)).collect();
        let x = Tensor::from_vec(&[2, 2, 4, 4], data).unwrap();
        let probe: Vec<f64> = (0..2 * 2 * 2 * 2).map(|_| normal_f64(&mut rng)).collect();

        let objective = |xv: &[f64]| -> f64 {
            let xt = Tensor::from_vec(&[2, 2, 4, 4], xv.to_vec()).unwrap();
            let (y, _) = maxpool2d(&xt, 2, 2).unwrap();
            y.data().iter().zip(&probe).map(|(a, r)| a * r).sum()
        };

        let (y, argmax) = maxpool2d(&x, 2, 2).unwrap();
        let d_out = Tensor::from_vec(y.shape(), probe.clone()).unwrap();
        let d_in = maxpool2d_backward(x.shape(), &argmax, &d_out);
        let numeric = finite_diff_grad(objective, x.data(), DEFAULT_STEP);
        assert!(max_rel_err(d_in.data(), &numeric, 1e-9) < 1e-6);

        // Gradient is zero away from argmax positions.
        let nonzero = d_in.data().iter().filter(|v| **v != 0.0).count();
        assert!(nonzero <= argmax.len());
    }

    #[test]
    fn flatten_preserves_batch_extent() {
        let x = Tensor::<f32>::zeros(&[3, 2, 4, 4]);
        assert_eq!(flatten(&x).shape(), &[3, 32]);
    }
}
