//! Procedurally generated classification data.
//!
//! Self-contained stand-in for file-based datasets in demos, CI, and the
//! acceptance suites: each class is a fixed mixture of Gaussian blobs, and
//! each sample is the class template under a random shift, brightness
//! scale, and pixel noise. Shift invariance keeps the task convolutional
//! while remaining learnable in a few epochs at desk scale.

use rand::Rng;

use crate::rng::{normal_f64, substream, stream};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Dataset, Split};

#[derive(Debug, Clone, Copy)]
pub struct SynthSpec {
    pub classes: usize,
    pub side: usize,
    pub train_n: usize,
    pub test_n: usize,
    pub seed: u64,
    /// Gaussian pixel noise standard deviation.
    pub noise: f64,
    /// Maximum absolute shift in pixels, each axis.
    pub max_shift: i64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            classes: 10,
            side: 28,
            train_n: 3000,
            test_n: 1000,
            seed: 0,
            noise: 0.18,
            max_shift: 4,
        }
    }
}

/// Generate a (train, test) pair. Templates are shared between the splits;
/// sample randomness is independent per split.
pub fn generate<S: Scalar>(spec: &SynthSpec) -> (Dataset<S>, Dataset<S>) {
    let templates = make_templates(spec);
    let train = make_split(spec, &templates, spec.train_n, Split::Train);
    let test = make_split(spec, &templates, spec.test_n, Split::Test);
    (train, test)
}

fn make_templates(spec: &SynthSpec) -> Vec<Vec<f64>> {
    let mut rng = substream(spec.seed, stream::SYNTH, 0);
    let side = spec.side as f64;
    (0..spec.classes)
        .map(|_| {
            let blobs: Vec<(f64, f64, f64, f64)> = (0..3)
                .map(|_| {
                    let cy = rng.random_range(0.22 * side..0.78 * side);
                    let cx = rng.random_range(0.22 * side..0.78 * side);
                    let sigma = rng.random_range(0.08 * side..0.20 * side);
                    let amp = rng.random_range(0.5..1.0);
                    (cy, cx, sigma, amp)
                })
                .collect();
            let mut img = vec![0.0f64; spec.side * spec.side];
            let mut peak = 0.0f64;
            for y in 0..spec.side {
                for x in 0..spec.side {
                    let mut v = 0.0;
                    for &(cy, cx, sigma, amp) in &blobs {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        v += amp * (-d2 / (2.0 * sigma * sigma)).exp();
                    }
                    img[y * spec.side + x] = v;
                    peak = peak.max(v);
                }
            }
            for v in &mut img {
                *v /= peak.max(1e-9);
            }
            img
        })
        .collect()
}

fn make_split<S: Scalar>(
    spec: &SynthSpec,
    templates: &[Vec<f64>],
    n: usize,
    split: Split,
) -> Dataset<S> {
    let split_tag = match split {
        Split::Train => 1,
        Split::Test => 2,
    };
    let mut rng = substream(spec.seed, stream::SYNTH, split_tag);
    let side = spec.side;
    let mut data = Vec::with_capacity(n * side * side);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.classes; // balanced
        labels.push(class as u16);
        let dy = rng.random_range(-spec.max_shift..=spec.max_shift);
        let dx = rng.random_range(-spec.max_shift..=spec.max_shift);
        let brightness = rng.random_range(0.65..1.0);
        let template = &templates[class];
        for y in 0..side {
            for x in 0..side {
                let sy = y as i64 - dy;
                let sx = x as i64 - dx;
                let base = if sy >= 0 && sx >= 0 && (sy as usize) < side && (sx as usize) < side {
                    template[sy as usize * side + sx as usize]
                } else {
                    0.0
                };
                let v = (base * brightness + spec.noise * normal_f64(&mut rng)).clamp(0.0, 1.0);
                data.push(S::from_f64(v));
            }
        }
    }
    // labels are balanced but arrive class-ordered; shuffle the examples
    let perm = {
        use rand::seq::SliceRandom;
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        idx
    };
    let img_len = side * side;
    let mut shuffled = Vec::with_capacity(data.len());
    let mut shuffled_labels = Vec::with_capacity(n);
    for &i in &perm {
        shuffled.extend_from_slice(&data[i * img_len..(i + 1) * img_len]);
        shuffled_labels.push(labels[i]);
    }
    let images = Tensor::from_vec(&[n, 1, side, side], shuffled).expect("synth shape");
    Dataset::new(images, shuffled_labels, split, spec.classes).expect("synth dataset")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic_and_balanced() {
        let spec = SynthSpec {
            train_n: 40,
            test_n: 20,
            ..Default::default()
        };
        let (train_a, _) = generate::<f32>(&spec);
        let (train_b, _) = generate::<f32>(&spec);
        assert_eq!(train_a.images, train_b.images);
        assert_eq!(train_a.labels, train_b.labels);

        let mut counts = [0usize; 10];
        for &l in &train_a.labels {
            counts[l as usize] += 1;
        }
        assert!(counts.iter().all(|&c| c == 4), "{counts:?}");
    }

    #[test]
    fn pixels_stay_in_unit_range() {
        let spec = SynthSpec {
            train_n: 20,
            test_n: 10,
            ..Default::default()
        };
        let (train, test) = generate::<f32>(&spec);
        for ds in [train, test] {
            assert!(ds.images.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn splits_differ() {
        let spec = SynthSpec {
            train_n: 30,
            test_n: 30,
            ..Default::default()
        };
        let (train, test) = generate::<f32>(&spec);
        assert_ne!(train.images.data()[..784], test.images.data()[..784]);
    }
}
