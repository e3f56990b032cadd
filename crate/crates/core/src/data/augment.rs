//! Pad-4 random crop plus horizontal flip, the standard CIFAR recipe.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tensor::{Batch, Tensor};

const PAD: usize = 4;

/// Per image: zero-pad 4 on each side, crop back to the original extent at
/// a random offset, and flip horizontally with probability 1/2. The rng is
/// a seeded stream owned by the caller, so augmented batches replay exactly.
pub fn augment_crop_flip<S: Scalar>(batch: &Batch<S>, rng: &mut ChaCha8Rng) -> Batch<S> {
    let shape = batch.images.shape();
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    assert!(h >= 2 * PAD && w >= 2 * PAD, "spatial extents too small to crop");
    let mut out = Tensor::zeros(shape);
    let src = batch.images.data();
    let dst = out.data_mut();
    for img in 0..n {
        let dy = rng.random_range(0..=2 * PAD);
        let dx = rng.random_range(0..=2 * PAD);
        let flip = rng.random_range(0..2u8) == 1;
        for ch in 0..c {
            let plane = &src[(img * c + ch) * h * w..(img * c + ch + 1) * h * w];
            let out_plane = &mut dst[(img * c + ch) * h * w..(img * c + ch + 1) * h * w];
            crop_one(plane, out_plane, h, w, dy, dx, flip);
        }
    }
    Batch {
        images: out,
        labels: batch.labels.clone(),
    }
}

/// Crop the padded image at offset (dy, dx): output (y, x) reads padded
/// (y + dy, x + dx), i.e. source (y + dy - PAD, x + dx - PAD) or zero.
/// Offset (PAD, PAD) with no flip is the identity.
fn crop_one<S: Scalar>(
    src: &[S],
    dst: &mut [S],
    h: usize,
    w: usize,
    dy: usize,
    dx: usize,
    flip: bool,
) {
    for y in 0..h {
        let sy = y + dy;
        if sy < PAD || sy >= h + PAD {
            continue; // stays zero
        }
        let src_row = &src[(sy - PAD) * w..(sy - PAD + 1) * w];
        for x in 0..w {
            let sx = x + dx;
            if sx < PAD || sx >= w + PAD {
                continue;
            }
            let out_x = if flip { w - 1 - x } else { x };
            dst[y * w + out_x] = src_row[sx - PAD];
        }
    }
}
