use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// C = A·B for A: [M,K], B: [K,N].
pub fn matmul<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>) -> Result<Tensor<S>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::Shape(format!(
            "matmul expects [M,K]x[K,N], got {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut c = Tensor::zeros(&[m, n]);
    gemm_strided_nn(m, k, n, a.data(), k, b.data(), c.data_mut());
    Ok(c)
}

/// Gradients of `matmul` given upstream dC: dA = dC·Bᵀ, dB = Aᵀ·dC.
pub fn matmul_backward<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    d_c: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    if d_c.shape() != [m, n] {
        return Err(Error::Shape(format!(
            "matmul backward: upstream shape {:?} does not match output [{m}, {n}]",
            d_c.shape()
        )));
    }
    let mut d_a = Tensor::zeros(&[m, k]);
    let mut d_b = Tensor::zeros(&[k, n]);
    gemm_nt(m, n, k, d_c.data(), b.data(), d_a.data_mut());
    gemm_strided_tn(k, m, n, a.data(), k, d_c.data(), d_b.data_mut());
    Ok((d_a, d_b))
}

/// C += A·B with an explicit row stride for A, so a prefix block of a wider
/// weight matrix can be used without copying. A rows start at `lda`-sized
/// intervals; B and C are dense [K,N] / [M,N].
///
/// The k-outer loop order streams B exactly once while C (small: M x N
/// output tile) stays cache-resident; each C element still accumulates its
/// k-terms in ascending order, which the bitwise prefix-consistency
/// guarantee relies on. Exact-zero A entries (masked weights) are skipped;
/// the skip set is width-independent, so reduced and full passes add the
/// same terms in the same order.
#[inline]
pub(crate) fn gemm_strided_nn<S: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[S],
    lda: usize,
    b: &[S],
    c: &mut [S],
) {
    debug_assert!(a.len() >= (m - 1) * lda + k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let a_ip = a[i * lda + p];
            if a_ip == S::zero() {
                continue;
            }
            let c_row = &mut c[i * n..(i + 1) * n];
            for (c_el, &b_el) in c_row.iter_mut().zip(b_row) {
                *c_el += a_ip * b_el;
            }
        }
    }
}

/// C += Aᵀ·B where A is [M,K] with row stride `lda`, B is [M,N], C is [K,N].
/// k-outer for the same cache behavior as `gemm_strided_nn`; per-element
/// accumulation stays in ascending m order.
#[inline]
pub(crate) fn gemm_strided_tn<S: Scalar>(
    k: usize,
    m: usize,
    n: usize,
    a: &[S],
    lda: usize,
    b: &[S],
    c: &mut [S],
) {
    debug_assert!(a.len() >= (m - 1) * lda + k);
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(c.len(), k * n);
    for p in 0..k {
        let c_row = &mut c[p * n..(p + 1) * n];
        for i in 0..m {
            let a_ip = a[i * lda + p];
            if a_ip == S::zero() {
                continue;
            }
            let b_row = &b[i * n..(i + 1) * n];
            for (c_el, &b_el) in c_row.iter_mut().zip(b_row) {
                *c_el += a_ip * b_el;
            }
        }
    }
}

/// C += A·Bᵀ where A is [M,K], B is [N,K], C is [M,N]. Each output element
/// is a dot product of two contiguous rows; four interleaved accumulators
/// let the reduction vectorize. Only used for weight gradients, which have
/// no bitwise cross-width contract.
#[inline]
pub(crate) fn gemm_nt<S: Scalar>(m: usize, k: usize, n: usize, a: &[S], b: &[S], c: &mut [S]) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for j in 0..n {
        let b_row = &b[j * k..(j + 1) * k];
        for i in 0..m {
            let a_row = &a[i * k..(i + 1) * k];
            c[i * n + j] += dot4(a_row, b_row);
        }
    }
}

#[inline]
fn dot4<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let (x, y) = (&a[i * 4..i * 4 + 4], &b[i * 4..i * 4 + 4]);
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = S::zero();
    for i in chunks * 4..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff_grad, max_rel_err, DEFAULT_STEP};
    use crate::rng::{normal_f64, substream, stream};

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = substream(seed, stream::INIT, 0);
        let data = (0..shape.iter().product::<usize>())
            .map(|_| normal_f64(&mut rng))
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn identity_passthrough() {
        let i2 = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(matmul(&i2, &b).unwrap().data(), b.data());
    }

    #[test]
    fn projector_zeroes_second_row() {
        let p = Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![5.0, 6.0, 7.0, 8.0]).unwrap();
        assert_eq!(matmul(&p, &b).unwrap().data(), &[5.0, 6.0, 0.0, 0.0]);
    }

    #[test]
    fn shape_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 2]);
        let err = matmul(&a, &b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn backward_matches_finite_differences() {
        let a = random_tensor(&[3, 4], 11);
        let b = random_tensor(&[4, 2], 12);
        // Scalar objective: weighted sum of the product entries.
        let w = random_tensor(&[3, 2], 13);
        let objective = |av: &[f64], bv: &[f64]| -> f64 {
            let at = Tensor::from_vec(&[3, 4], av.to_vec()).unwrap();
            let bt = Tensor::from_vec(&[4, 2], bv.to_vec()).unwrap();
            let c = matmul(&at, &bt).unwrap();
            c.data().iter().zip(w.data()).map(|(x, r)| x * r).sum()
        };

        let (d_a, d_b) = matmul_backward(&a, &b, &w).unwrap();
        let num_a = finite_diff_grad(|av| objective(av, b.data()), a.data(), DEFAULT_STEP);
        let num_b = finite_diff_grad(|bv| objective(a.data(), bv), b.data(), DEFAULT_STEP);
        assert!(max_rel_err(d_a.data(), &num_a, 1e-9) < 1e-6);
        assert!(max_rel_err(d_b.data(), &num_b, 1e-9) < 1e-6);
    }

    #[test]
    fn inputs_are_not_mutated() {
        let a = random_tensor(&[3, 3], 21);
        let b = random_tensor(&[3, 3], 22);
        let (a0, b0) = (a.clone(), b.clone());
        let c = matmul(&a, &b).unwrap();
        let _ = matmul_backward(&a, &b, &c).unwrap();
        assert_eq!(a, a0);
        assert_eq!(b, b0);
    }
}
