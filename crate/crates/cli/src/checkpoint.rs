//! Checkpoint container: magic "AWNCKPT1", a format version, a UTF-8
//! key=value metadata block, and a named-tensor table.
//!
//! Layout (all integers little-endian):
//!   magic [8] | version u32 | meta_len u32 | meta bytes |
//!   tensor_count u32 | tensors...
//! Tensor record:
//!   name_len u32 | name bytes | dtype u8 | rank u32 | extents u32 x rank |
//!   raw little-endian scalars
//!
//! A checkpoint stores the complete model state (parameters plus every
//! normalization copy's running statistics) and, when saved mid-training,
//! the optimizer velocity under `opt.v.<param>`. Loading then saving again
//! reproduces the file byte for byte.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};

use anywidth::model::{build_lenet3c1l, Model, ModelVariant, VariantKind};
use anywidth::rng::{substream, stream};
use anywidth::scalar::{Dtype, Scalar};
use anywidth::tensor::Tensor;
use anywidth::train::SgdState;
use anywidth::{Error, Result};

pub const MAGIC: &[u8; 8] = b"AWNCKPT1";
pub const VERSION: u32 = 1;

/// Ordered key=value metadata block.
#[derive(Debug, Clone, Default)]
pub struct CheckpointMeta {
    pub entries: Vec<(String, String)>,
}

impl CheckpointMeta {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Format(format!("checkpoint metadata missing '{key}'")))
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        for (k, v) in &self.entries {
            out.push_str(k);
            out.push('=');
            out.push_str(v);
            out.push('\n');
        }
        out.into_bytes()
    }

    fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let text = std::str::from_utf8(bytes)
            .map_err(|_| Error::Format("checkpoint metadata is not UTF-8".into()))?;
        let mut entries = Vec::new();
        for line in text.lines() {
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Format(format!("bad metadata line '{line}'")));
            };
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(CheckpointMeta { entries })
    }
}

/// A tensor record as stored on disk.
#[derive(Debug, Clone)]
pub struct RawTensor {
    pub name: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub payload: Vec<u8>,
}

/// Parsed checkpoint file, before any model reconstruction.
#[derive(Debug, Clone)]
pub struct RawCheckpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<RawTensor>,
}

impl RawCheckpoint {
    /// Payload bytes of the normalization tensors (scale, shift, running
    /// statistics across every stored copy), excluding optimizer state.
    pub fn bn_payload_bytes(&self) -> usize {
        self.tensors
            .iter()
            .filter(|t| t.name.starts_with("bn"))
            .map(|t| t.payload.len())
            .sum()
    }
}

/// Serialize the model (and optionally optimizer state) with the given
/// metadata entries appended after the model-geometry keys.
pub fn save_checkpoint<S: Scalar>(
    path: impl AsRef<Path>,
    model: &Model<S>,
    opt: Option<&SgdState<S>>,
    extra_meta: &[(String, String)],
) -> Result<()> {
    let mut meta = CheckpointMeta::default();
    let push = |meta: &mut CheckpointMeta, k: &str, v: String| {
        meta.entries.push((k.to_string(), v));
    };
    push(&mut meta, "variant", model.variant.kind.as_str().to_string());
    push(&mut meta, "width_multiplier", format!("{}", model.variant.width_multiplier));
    push(&mut meta, "base_channels", model.variant.base_channels.to_string());
    push(&mut meta, "in_channels", model.in_channels.to_string());
    push(&mut meta, "num_classes", model.num_classes.to_string());
    push(&mut meta, "input_h", model.input_hw.0.to_string());
    push(&mut meta, "input_w", model.input_hw.1.to_string());
    let widths = model
        .bank()
        .map(|bank| {
            bank.widths
                .iter()
                .map(|w| format!("{w}"))
                .collect::<Vec<_>>()
                .join(",")
        })
        .unwrap_or_default();
    push(&mut meta, "widths", widths);
    push(&mut meta, "dtype", S::DTYPE.code().to_string());
    for (k, v) in extra_meta {
        push(&mut meta, k, v.clone());
    }

    let mut tensors: Vec<(String, Vec<usize>, Vec<S>)> = Vec::new();
    model.visit_state(&mut |name, shape, data| {
        tensors.push((name.to_string(), shape.to_vec(), data.to_vec()));
    });
    if let Some(state) = opt {
        for (name, v) in &state.velocity {
            tensors.push((format!("opt.v.{name}"), v.shape().to_vec(), v.data().to_vec()));
        }
    }

    let meta_bytes = meta.to_bytes();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(meta_bytes.len() as u32).to_le_bytes());
    out.extend_from_slice(&meta_bytes);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, shape, data) in &tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(S::DTYPE.code());
        out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
        for &e in shape {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for &v in data {
            v.write_le(&mut out);
        }
    }
    std::fs::write(&path, out).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    Ok(())
}

/// Parse the container without interpreting tensors.
pub fn read_raw(path: impl AsRef<Path>) -> Result<RawCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut cur = 0usize;
    let take = |cur: &mut usize, len: usize| -> Result<&[u8]> {
        if *cur + len > bytes.len() {
            return Err(Error::Format(format!(
                "{}: truncated checkpoint at offset {cur}",
                path.display()
            )));
        }
        let out = &bytes[*cur..*cur + len];
        *cur += len;
        Ok(out)
    };
    let take_u32 = |cur: &mut usize| -> Result<u32> {
        Ok(u32::from_le_bytes(take(cur, 4)?.try_into().expect("4 bytes")))
    };

    let magic = take(&mut cur, 8)?;
    if magic != MAGIC {
        return Err(Error::Format(format!(
            "{}: not a checkpoint (magic {:02x?})",
            path.display(),
            magic
        )));
    }
    let version = take_u32(&mut cur)?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "{}: unsupported checkpoint version {version} (expected {VERSION})",
            path.display()
        )));
    }
    let meta_len = take_u32(&mut cur)? as usize;
    let meta = CheckpointMeta::from_bytes(take(&mut cur, meta_len)?)?;
    let count = take_u32(&mut cur)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = take_u32(&mut cur)? as usize;
        let name = std::str::from_utf8(take(&mut cur, name_len)?)
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
            .to_string();
        let dtype_code = take(&mut cur, 1)?[0];
        let dtype = Dtype::from_code(dtype_code)
            .ok_or_else(|| Error::Format(format!("unknown dtype code {dtype_code}")))?;
        let rank = take_u32(&mut cur)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(take_u32(&mut cur)? as usize);
        }
        let len: usize = shape.iter().product();
        let payload = take(&mut cur, len * dtype.size())?.to_vec();
        tensors.push(RawTensor {
            name,
            dtype,
            shape,
            payload,
        });
    }
    if cur != bytes.len() {
        return Err(Error::Format(format!(
            "{}: {} trailing bytes",
            path.display(),
            bytes.len() - cur
        )));
    }
    Ok(RawCheckpoint { meta, tensors })
}

/// Rebuild the model (and optimizer velocity, if stored) from a checkpoint.
pub fn load_checkpoint<S: Scalar>(
    path: impl AsRef<Path>,
) -> Result<(Model<S>, SgdState<S>, CheckpointMeta)> {
    let raw = read_raw(&path)?;
    let meta = raw.meta.clone();

    let dtype_code: u8 = parse(&meta, "dtype")?;
    if Dtype::from_code(dtype_code) != Some(S::DTYPE) {
        return Err(Error::Format(format!(
            "checkpoint holds dtype code {dtype_code}, expected {:?}",
            S::DTYPE
        )));
    }
    let kind = VariantKind::parse(meta.require("variant")?)?;
    let variant = ModelVariant {
        kind,
        width_multiplier: parse(&meta, "width_multiplier")?,
        base_channels: parse(&meta, "base_channels")?,
    };
    let in_channels: usize = parse(&meta, "in_channels")?;
    let num_classes: usize = parse(&meta, "num_classes")?;
    let input_hw = (parse::<usize>(&meta, "input_h")?, parse::<usize>(&meta, "input_w")?);
    let widths_text = meta.require("widths")?;
    let widths: Option<Vec<f64>> = if widths_text.is_empty() {
        None
    } else {
        Some(
            widths_text
                .split(',')
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::Format(format!("bad width '{t}' in metadata")))
                })
                .collect::<Result<_>>()?,
        )
    };

    // Initialization is immediately overwritten by the stored state.
    let mut rng = substream(0, stream::INIT, 0);
    let mut model: Model<S> = build_lenet3c1l(
        variant,
        in_channels,
        num_classes,
        input_hw,
        widths.as_deref(),
        &mut rng,
    )?;

    let mut state_tensors: BTreeMap<String, (Vec<usize>, Vec<S>)> = BTreeMap::new();
    let mut opt = SgdState::new();
    for t in raw.tensors {
        if t.dtype != S::DTYPE {
            return Err(Error::Format(format!(
                "tensor '{}' dtype {:?} does not match checkpoint dtype",
                t.name, t.dtype
            )));
        }
        let data: Vec<S> = t
            .payload
            .chunks_exact(t.dtype.size())
            .map(S::read_le)
            .collect();
        if let Some(param) = t.name.strip_prefix("opt.v.") {
            opt.velocity
                .insert(param.to_string(), Tensor::from_vec(&t.shape, data)?);
        } else {
            state_tensors.insert(t.name, (t.shape, data));
        }
    }
    model.load_state(&mut state_tensors)?;
    if let Some(extra) = state_tensors.keys().next() {
        return Err(Error::Format(format!(
            "checkpoint carries unknown tensor '{extra}'"
        )));
    }
    Ok((model, opt, meta))
}

fn parse<T: std::str::FromStr>(meta: &CheckpointMeta, key: &str) -> Result<T> {
    meta.require(key)?
        .parse::<T>()
        .map_err(|_| Error::Format(format!("bad checkpoint metadata value for '{key}'")))
}

/// Hex SHA-256 of a file's bytes; the determinism checks compare these.
pub fn sha256_hex(path: impl AsRef<Path>) -> Result<String> {
    let bytes =
        std::fs::read(&path).map_err(|e| Error::Io(format!("{}: {e}", path.as_ref().display())))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}
