//! CIFAR binary batch format.
//!
//! CIFAR-10 records are 3073 bytes: one label byte then 3072 pixel bytes in
//! planar R, G, B row-major order. CIFAR-100 records carry two label bytes
//! (coarse then fine) before the pixels; the fine label is used.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Dataset, Split};

const SIDE: usize = 32;
const PIXELS: usize = 3 * SIDE * SIDE;

pub fn load_cifar10<S: Scalar>(dir: impl AsRef<Path>, split: Split) -> Result<Dataset<S>> {
    let dir = dir.as_ref();
    let files: Vec<std::path::PathBuf> = match split {
        Split::Train => (1..=5)
            .map(|i| dir.join(format!("data_batch_{i}.bin")))
            .collect(),
        Split::Test => vec![dir.join("test_batch.bin")],
    };
    load_batches(&files, split, 1, 10)
}

pub fn load_cifar100<S: Scalar>(dir: impl AsRef<Path>, split: Split) -> Result<Dataset<S>> {
    let dir = dir.as_ref();
    let files = match split {
        Split::Train => vec![dir.join("train.bin")],
        Split::Test => vec![dir.join("test.bin")],
    };
    load_batches(&files, split, 2, 100)
}

fn load_batches<S: Scalar>(
    files: &[std::path::PathBuf],
    split: Split,
    label_bytes: usize,
    num_classes: usize,
) -> Result<Dataset<S>> {
    let record = label_bytes + PIXELS;
    let mut data: Vec<S> = Vec::new();
    let mut labels: Vec<u16> = Vec::new();
    let scale = S::from_f64(1.0 / 255.0);
    for path in files {
        let bytes = fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        if bytes.is_empty() || bytes.len() % record != 0 {
            return Err(Error::Format(format!(
                "{}: length {} is not a positive multiple of the {record}-byte record",
                path.display(),
                bytes.len()
            )));
        }
        for rec in bytes.chunks_exact(record) {
            labels.push(rec[label_bytes - 1] as u16);
            data.extend(rec[label_bytes..].iter().map(|&b| S::from_f64(b as f64) * scale));
        }
    }
    let n = labels.len();
    let images = Tensor::from_vec(&[n, 3, SIDE, SIDE], data)?;
    Dataset::new(images, labels, split, num_classes)
}

/// Write one CIFAR-10-format batch file (fixtures and round-trip checks).
pub fn save_cifar_batch<S: Scalar>(dataset: &Dataset<S>, path: impl AsRef<Path>) -> Result<()> {
    let shape = dataset.images.shape();
    if shape[1..] != [3, SIDE, SIDE] {
        return Err(Error::Shape(format!(
            "CIFAR batch needs [N,3,32,32] images, got {shape:?}"
        )));
    }
    let mut bytes = Vec::with_capacity(dataset.len() * (1 + PIXELS));
    for i in 0..dataset.len() {
        bytes.push(dataset.labels[i] as u8);
        let img = &dataset.images.data()[i * PIXELS..(i + 1) * PIXELS];
        bytes.extend(img.iter().map(|&v| (v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    fs::write(&path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_record_places_label_and_planes() {
        let dir = std::env::temp_dir().join("awn_cifar_test");
        fs::create_dir_all(&dir).unwrap();
        let mut record = vec![9u8]; // label
        let mut pixels = vec![0u8; PIXELS];
        pixels[0] = 255; // R plane, first pixel
        pixels[SIDE * SIDE] = 128; // G plane, first pixel
        pixels[2 * SIDE * SIDE + SIDE * SIDE - 1] = 64; // B plane, last pixel
        record.extend_from_slice(&pixels);
        let path = dir.join("test_batch.bin");
        fs::write(&path, &record).unwrap();

        let ds: Dataset<f32> = load_cifar10(&dir, Split::Test).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.labels, vec![9]);
        assert_eq!(ds.images.at4(0, 0, 0, 0), 1.0);
        assert_eq!(ds.images.at4(0, 1, 0, 0), 128.0 / 255.0);
        assert_eq!(ds.images.at4(0, 2, SIDE - 1, SIDE - 1), 64.0 / 255.0);
    }

    #[test]
    fn bad_length_is_rejected() {
        let dir = std::env::temp_dir().join("awn_cifar_badlen");
        fs::create_dir_all(&dir).unwrap();
        fs::write(dir.join("test_batch.bin"), vec![0u8; 3072]).unwrap();
        let err = load_cifar10::<f32>(&dir, Split::Test).unwrap_err();
        assert!(matches!(err, Error::Format(_)), "{err}");
    }

    #[test]
    fn missing_directory_gives_io_error() {
        let err = load_cifar10::<f32>("/nonexistent/cifar", Split::Train).unwrap_err();
        assert!(matches!(err, Error::Io(_)), "{err}");
    }

    #[test]
    fn roundtrip_reproduces_bytes() {
        let dir = std::env::temp_dir().join("awn_cifar_roundtrip");
        fs::create_dir_all(&dir).unwrap();
        let mut bytes = Vec::new();
        for i in 0..3u8 {
            bytes.push(i);
            bytes.extend((0..PIXELS).map(|p| ((p as u32 * 7 + i as u32 * 13) % 256) as u8));
        }
        let path = dir.join("test_batch.bin");
        fs::write(&path, &bytes).unwrap();
        let ds: Dataset<f32> = load_cifar10(&dir, Split::Test).unwrap();
        let path2 = dir.join("copy.bin");
        save_cifar_batch(&ds, &path2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }
}
