use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Mean cross-entropy over the batch with the softmax fused in, stabilized
/// by max-subtraction. Returns the loss and d_loss/d_logits directly, since
/// the pair is cheaper and more accurate than composing the two gradients.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[u16],
) -> Result<(S, Tensor<S>)> {
    if logits.rank() != 2 {
        return Err(Error::Shape(format!(
            "logits must be rank 2 (N,K), got {:?}",
            logits.shape()
        )));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    if labels.len() != n {
        return Err(Error::Shape(format!(
            "{n} logit rows but {} labels",
            labels.len()
        )));
    }
    let inv_n = S::from_f64(1.0 / n as f64);
    let mut d_logits = Tensor::zeros(&[n, k]);
    let mut loss_acc = 0.0f64;
    let src = logits.data();
    let dst = d_logits.data_mut();
    for (row, &label) in labels.iter().enumerate() {
        let label = label as usize;
        if label >= k {
            return Err(Error::Index(format!(
                "label {label} out of range for {k} classes (row {row})"
            )));
        }
        let row_src = &src[row * k..(row + 1) * k];
        let max = row_src.iter().fold(row_src[0], |m, &v| m.max(v));
        let mut denom = S::zero();
        for &v in row_src {
            denom += (v - max).exp();
        }
        let log_denom = denom.ln();
        loss_acc -= (row_src[label] - max - log_denom).as_f64();
        let row_dst = &mut dst[row * k..(row + 1) * k];
        for (j, d) in row_dst.iter_mut().enumerate() {
            let p = (row_src[j] - max).exp() / denom;
            let target = if j == label { S::one() } else { S::zero() };
            *d = (p - target) * inv_n;
        }
    }
    Ok((S::from_f64(loss_acc / n as f64), d_logits))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, max_rel_err, DEFAULT_STEP};
    use crate::rng::{normal_f64, substream, stream};

    #[test]
    fn uniform_logits_give_ln_k() {
        let logits = Tensor::<f64>::filled(&[3, 10], 0.7);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 5, 9]).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn saturated_correct_class_gives_near_zero_loss() {
        let mut logits = Tensor::<f32>::zeros(&[2, 10]);
        logits.data_mut()[3] = 1e6;
        logits.data_mut()[10 + 7] = 1e6;
        let (loss, _) = softmax_cross_entropy(&logits, &[3, 7]).unwrap();
        assert!(loss.abs() < 1e-6, "{loss}");
    }

    #[test]
    fn label_out_of_range_errors() {
        let logits = Tensor::<f32>::zeros(&[2, 10]);
        let err = softmax_cross_entropy(&logits, &[0, 10]).unwrap_err();
        assert!(matches!(err, Error::Index(_)), "{err}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = substream(91, stream::INIT, 0);
        let data: Vec<f64> = (0..4 * 10).map(|_| normal_f64(&mut rng)).collect();
        let logits = Tensor::from_vec(&[4, 10], data).unwrap();
        let labels = [1u16, 0, 9, 4];

        let (_, analytic) = softmax_cross_entropy(&logits, &labels).unwrap();
        let numeric = finite_diff_grad(
            |v| {
                let t = Tensor::from_vec(&[4, 10], v.to_vec()).unwrap();
                softmax_cross_entropy(&t, &labels).unwrap().0
            },
            logits.data(),
            DEFAULT_STEP,
        );
        assert!(max_rel_err(analytic.data(), &numeric, 1e-9) < 1e-6);
    }
}
