//! IDX binary format (MNIST / FashionMNIST distribution files).
//!
//! Big-endian headers: images carry magic 0x00000803 then count, rows,
//! cols, followed by one unsigned byte per pixel; labels carry magic
//! 0x00000801 then count, followed by one byte per label. Pixels are
//! scaled to [0, 1] on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Dataset, Split};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

pub fn load_idx<S: Scalar>(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    split: Split,
) -> Result<Dataset<S>> {
    let images_path = images_path.as_ref();
    let labels_path = labels_path.as_ref();
    let image_bytes = fs::read(images_path)
        .map_err(|e| Error::Io(format!("{}: {e}", images_path.display())))?;
    let label_bytes = fs::read(labels_path)
        .map_err(|e| Error::Io(format!("{}: {e}", labels_path.display())))?;

    let mut img_cur = Cursor::new(&image_bytes, images_path);
    let magic = img_cur.read_u32()?;
    if magic != IMAGES_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad images magic 0x{magic:08x}, expected 0x{IMAGES_MAGIC:08x}",
            images_path.display()
        )));
    }
    let count = img_cur.read_u32()? as usize;
    let rows = img_cur.read_u32()? as usize;
    let cols = img_cur.read_u32()? as usize;
    let pixels = img_cur.read_exact(count * rows * cols)?;
    img_cur.expect_eof()?;

    let mut lbl_cur = Cursor::new(&label_bytes, labels_path);
    let magic = lbl_cur.read_u32()?;
    if magic != LABELS_MAGIC {
        return Err(Error::Format(format!(
            "{}: bad labels magic 0x{magic:08x}, expected 0x{LABELS_MAGIC:08x}",
            labels_path.display()
        )));
    }
    let label_count = lbl_cur.read_u32()? as usize;
    if label_count != count {
        return Err(Error::Format(format!(
            "{count} images but {label_count} labels"
        )));
    }
    let labels_raw = lbl_cur.read_exact(count)?;
    lbl_cur.expect_eof()?;

    let scale = S::from_f64(1.0 / 255.0);
    let data: Vec<S> = pixels
        .iter()
        .map(|&b| S::from_f64(b as f64) * scale)
        .collect();
    let images = Tensor::from_vec(&[count, 1, rows, cols], data)?;
    let labels: Vec<u16> = labels_raw.iter().map(|&b| b as u16).collect();
    let num_classes = labels.iter().copied().max().unwrap_or(0) as usize + 1;
    Dataset::new(images, labels, split, num_classes)
}

/// Re-emit a dataset as an IDX file pair (fixtures and round-trip checks).
/// Pixel values are mapped back with round(v * 255).
pub fn save_idx<S: Scalar>(
    dataset: &Dataset<S>,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let shape = dataset.images.shape();
    let (n, rows, cols) = (shape[0], shape[2], shape[3]);
    let mut image_bytes = Vec::with_capacity(16 + n * rows * cols);
    image_bytes.extend_from_slice(&IMAGES_MAGIC.to_be_bytes());
    image_bytes.extend_from_slice(&(n as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(rows as u32).to_be_bytes());
    image_bytes.extend_from_slice(&(cols as u32).to_be_bytes());
    for &v in dataset.images.data() {
        image_bytes.push((v.as_f64() * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    let mut label_bytes = Vec::with_capacity(8 + n);
    label_bytes.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    label_bytes.extend_from_slice(&(n as u32).to_be_bytes());
    label_bytes.extend(dataset.labels.iter().map(|&l| l as u8));

    fs::write(&images_path, image_bytes)
        .map_err(|e| Error::Io(format!("{}: {e}", images_path.as_ref().display())))?;
    fs::write(&labels_path, label_bytes)
        .map_err(|e| Error::Io(format!("{}: {e}", labels_path.as_ref().display())))?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Cursor { bytes, pos: 0, path }
    }

    fn read_u32(&mut self) -> Result<u32> {
        let chunk = self.read_exact(4)?;
        Ok(u32::from_be_bytes(chunk.try_into().expect("4 bytes")))
    }

    fn read_exact(&mut self, len: usize) -> Result<&'a [u8]> {
        if self.pos + len > self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated file (needed {} bytes at offset {}, have {})",
                self.path.display(),
                len,
                self.pos,
                self.bytes.len()
            )));
        }
        let out = &self.bytes[self.pos..self.pos + len];
        self.pos += len;
        Ok(out)
    }

    fn expect_eof(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{}: {} trailing bytes after declared contents",
                self.path.display(),
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }
}
