//! Single-file checkpoint archives.
//!
//! Layout: `GANPCKPT` magic, format version (u32 LE), header length
//! (u64 LE), JSON header, payload, then the SHA-256 of every preceding
//! byte. The payload holds little-endian `f32` tensors followed by
//! LSB-first bit-packed masks; the header indexes both by name.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentManifest;
use crate::error::{Error, Result};
use crate::pruning::{Granularity, PruningMask};

pub const MAGIC: &[u8; 8] = b"GANPCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl NamedTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::validation(format!(
                "tensor shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

/// Generic archive contents: free-form metadata plus tensors and masks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub meta: serde_json::Value,
    pub tensors: BTreeMap<String, NamedTensor>,
    pub masks: BTreeMap<String, PruningMask>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: u64,
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct MaskEntry {
    name: String,
    shape: [usize; 4],
    granularity: Granularity,
    offset: u64,
    bits: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
    masks: Vec<MaskEntry>,
}

fn pack_bits(bits: &[u8]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        out[i / 8] |= (b & 1) << (i % 8);
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<u8> {
    (0..n).map(|i| (bytes[i / 8] >> (i % 8)) & 1).collect()
}

pub fn encode_archive(archive: &Archive) -> Vec<u8> {
    let mut payload = Vec::new();
    let mut tensors = Vec::new();
    for (name, t) in &archive.tensors {
        let offset = payload.len() as u64;
        for v in &t.data {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: t.shape.clone(),
            dtype: "f32".into(),
            offset,
            len: (t.data.len() * 4) as u64,
        });
    }
    let mut masks = Vec::new();
    for (name, m) in &archive.masks {
        let offset = payload.len() as u64;
        payload.extend(pack_bits(m.bits()));
        masks.push(MaskEntry {
            name: name.clone(),
            shape: m.shape(),
            granularity: m.granularity(),
            offset,
            bits: m.len() as u64,
        });
    }
    let header = serde_json::to_vec(&Header {
        meta: archive.meta.clone(),
        tensors,
        masks,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(20 + header.len() + payload.len() + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend(header);
    out.extend(payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode_archive(path: &Path, bytes: &[u8]) -> Result<Archive> {
    let bad = |msg: String| Error::checkpoint(path, msg);
    if bytes.len() < 20 + DIGEST_LEN || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint archive (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch".into()));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    if 20 + header_len > body.len() {
        return Err(bad("truncated header".into()));
    }
    let header: Header =
        serde_json::from_slice(&body[20..20 + header_len]).map_err(|e| bad(format!("malformed header: {e}")))?;
    let payload = &body[20 + header_len..];
    let slice = |offset: u64, len: u64, name: &str| -> Result<&[u8]> {
        let (o, l) = (offset as usize, len as usize);
        payload
            .get(o..o.saturating_add(l))
            .ok_or_else(|| bad(format!("{name}: payload range out of bounds")))
    };
    let mut archive = Archive {
        meta: header.meta,
        ..Archive::default()
    };
    for e in header.tensors {
        if e.dtype != "f32" {
            return Err(bad(format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let raw = slice(e.offset, e.len, &e.name)?;
        let data: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let t = NamedTensor::new(e.shape, data).map_err(|err| bad(format!("{}: {err}", e.name)))?;
        archive.tensors.insert(e.name, t);
    }
    for e in header.masks {
        let raw = slice(e.offset, e.bits.div_ceil(8), &e.name)?;
        let bits = unpack_bits(raw, e.bits as usize);
        let m = PruningMask::from_bits(e.shape, e.granularity, bits).map_err(|err| bad(format!("{}: {err}", e.name)))?;
        archive.masks.insert(e.name, m);
    }
    Ok(archive)
}

/// Writes atomically through a sibling temporary file.
pub fn write_archive(path: &Path, archive: &Archive) -> Result<()> {
    let bytes = encode_archive(archive);
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).and_then(|_| f.sync_all()).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_archive(path: &Path) -> Result<Archive> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_archive(path, &bytes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub manifest: ExperimentManifest,
    pub parameters: BTreeMap<String, NamedTensor>,
    pub masks: BTreeMap<String, PruningMask>,
    pub step: u64,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointMeta {
    manifest: ExperimentManifest,
    step: u64,
    metrics: BTreeMap<String, f64>,
}

impl Checkpoint {
    /// Every mask must match a parameter's shape, and masked parameter
    /// positions must be exactly zero.
    pub fn validate(&self) -> Result<()> {
        for (name, mask) in &self.masks {
            let p = self
                .parameters
                .get(name)
                .ok_or_else(|| Error::validation(format!("mask {name:?} has no matching parameter")))?;
            if p.shape != mask.shape() {
                return Err(Error::validation(format!(
                    "mask {name:?} has shape {:?} but the parameter has {:?}",
                    mask.shape(),
                    p.shape
                )));
            }
            if let Some(i) = p.data.iter().zip(mask.bits()).position(|(v, b)| *b == 0 && *v != 0.0) {
                return Err(Error::validation(format!("parameter {name:?} is nonzero at masked position {i}")));
            }
        }
        Ok(())
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.validate()?;
    let meta = CheckpointMeta {
        manifest: ckpt.manifest.clone(),
        step: ckpt.step,
        metrics: ckpt.metrics.clone(),
    };
    let archive = Archive {
        meta: serde_json::to_value(meta).expect("metadata serializes"),
        tensors: ckpt.parameters.clone(),
        masks: ckpt.masks.clone(),
    };
    write_archive(path, &archive)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let archive = read_archive(path)?;
    let meta: CheckpointMeta = serde_json::from_value(archive.meta)
        .map_err(|e| Error::checkpoint(path, format!("bad checkpoint metadata: {e}")))?;
    let ckpt = Checkpoint {
        manifest: meta.manifest,
        parameters: archive.tensors,
        masks: archive.masks,
        step: meta.step,
        metrics: meta.metrics,
    };
    ckpt.validate().map_err(|e| Error::checkpoint(path, e.to_string()))?;
    Ok(ckpt)
}
