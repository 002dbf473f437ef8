//! Checkpoint container.
//!
//! All integers little-endian:
//!
//! ```text
//! magic        8 bytes  "HMLMCKPT"
//! version      u32      1
//! dtype        u8       1 = f32, 2 = f64
//! config_len   u32
//! config       config_len bytes of UTF-8 JSON (ModelConfig)
//! count        u32      number of tensors
//! tensor × count:
//!     name_len u32, name (UTF-8)
//!     rows u64, cols u64
//!     data     rows·cols elements of dtype
//! digest       32 bytes SHA-256 of every preceding byte
//! ```

use super::config::ModelConfig;
use super::params::ModelParams;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scalar::{DType, Scalar};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::path::Path;

pub const MAGIC: &[u8; 8] = b"HMLMCKPT";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode_checkpoint<T: Scalar>(params: &ModelParams<T>) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::DTYPE.tag());
    let config = serde_json::to_vec(params.config()).expect("config serializes");
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(&config);
    let tensors = params.named_tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, _, m) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
        for &x in m.as_slice() {
            x.write_le(&mut out);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated while reading {what}"))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

fn read_elements<T: Scalar>(raw: &[u8], dtype: DType) -> Vec<T> {
    let size = dtype.size_in_bytes();
    raw.chunks_exact(size)
        .map(|c| match dtype {
            DType::F32 => T::from_f32(f32::read_le(c)).unwrap_or_else(T::nan),
            DType::F64 => T::from_f64(f64::read_le(c)).unwrap_or_else(T::nan),
        })
        .collect()
}

/// Parses a checkpoint, converting stored elements to `T`. Nothing is
/// returned unless the whole file is intact.
pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<ModelParams<T>> {
    if bytes.len() < MAGIC.len() + 32 {
        return Err(Error::Checkpoint("file too short".into()));
    }
    if &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a checkpoint file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checkpoint("checksum mismatch (truncated or corrupted file)".into()));
    }

    let mut r = Reader {
        bytes: body,
        pos: MAGIC.len(),
    };
    let version = r.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported format version {version}")));
    }
    let tag = r.take(1, "dtype")?[0];
    let dtype = DType::from_tag(tag).ok_or_else(|| Error::Checkpoint(format!("unknown dtype tag {tag}")))?;
    let config_len = r.u32("config length")? as usize;
    let config: ModelConfig = serde_json::from_slice(r.take(config_len, "config")?)
        .map_err(|e| Error::Checkpoint(format!("config header: {e}")))?;
    config.validate()?;

    let count = r.u32("tensor count")? as usize;
    let mut stored: HashMap<String, (usize, usize, &[u8])> = HashMap::with_capacity(count);
    for _ in 0..count {
        let name_len = r.u32("tensor name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = r.u64("tensor rows")? as usize;
        let cols = r.u64("tensor cols")? as usize;
        let len = rows
            .checked_mul(cols)
            .and_then(|n| n.checked_mul(dtype.size_in_bytes()))
            .ok_or_else(|| Error::Checkpoint(format!("tensor {name} is too large")))?;
        let data = r.take(len, &name)?;
        stored.insert(name, (rows, cols, data));
    }
    if r.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after tensors".into()));
    }

    let mut params = ModelParams::<T>::zeros(&config);
    for (name, _, m) in params.named_tensors_mut() {
        let (rows, cols, data) = stored
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if (rows, cols) != m.shape() {
            return Err(Error::ShapeMismatch(format!(
                "tensor {name} is {rows}×{cols} but the embedded config implies {}×{}",
                m.rows(),
                m.cols()
            )));
        }
        *m = Matrix::from_vec(rows, cols, read_elements(data, dtype));
    }
    if let Some(extra) = stored.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor {extra}")));
    }
    Ok(params)
}

pub fn save_checkpoint<T: Scalar>(path: &Path, params: &ModelParams<T>) -> Result<()> {
    // Written to a sibling temp file first so a crash never leaves a
    // half-written checkpoint under the final name.
    let tmp = path.with_extension("tmp");
    crate::error::write_file(&tmp, &encode_checkpoint(params))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        Error::Checkpoint(msg) => Error::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Loads a checkpoint and checks it against a vocabulary of `vocab_len`
/// tokens.
pub fn load_checkpoint_for_vocab<T: Scalar>(path: &Path, vocab_len: usize) -> Result<ModelParams<T>> {
    let params = load_checkpoint(path)?;
    if params.config().vocab_size != vocab_len {
        return Err(Error::VocabularyMismatch {
            checkpoint: params.config().vocab_size,
            vocabulary: vocab_len,
        });
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 11,
            hidden_size: 8,
            num_layers: 2,
            num_heads: 2,
            intermediate_size: 12,
            max_position: 10,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn round_trip_bitwise() {
        let p = init_params::<f64>(&cfg(), 5);
        let back: ModelParams<f64> = decode_checkpoint(&encode_checkpoint(&p)).unwrap();
        assert_eq!(back, p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &p).unwrap();
        assert_eq!(load_checkpoint::<f64>(&path).unwrap(), p);
    }

    #[test]
    fn cross_precision_load() {
        let p = init_params::<f32>(&cfg(), 5);
        let wide: ModelParams<f64> = decode_checkpoint(&encode_checkpoint(&p)).unwrap();
        assert_eq!(wide.cast::<f32>(), p);
    }

    #[test]
    fn truncated_rejected() {
        let bytes = encode_checkpoint(&init_params::<f64>(&cfg(), 1));
        for cut in [0, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_checkpoint::<f64>(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(decode_checkpoint::<f64>(&flipped).is_err());
    }

    #[test]
    fn shape_mismatch_detected() {
        let p = init_params::<f64>(&cfg(), 1);
        let mut bytes = encode_checkpoint(&p);
        // Rewrite the config header with a different hidden size, keeping the
        // tensors, and re-seal the digest.
        bytes.truncate(bytes.len() - 32);
        let start = 8 + 4 + 1;
        let len = u32::from_le_bytes(bytes[start..start + 4].try_into().unwrap()) as usize;
        let mut config: ModelConfig = serde_json::from_slice(&bytes[start + 4..start + 4 + len]).unwrap();
        config.intermediate_size = 16;
        let new_cfg = serde_json::to_vec(&config).unwrap();
        let mut out = bytes[..start].to_vec();
        out.extend_from_slice(&(new_cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(&new_cfg);
        out.extend_from_slice(&bytes[start + 4 + len..]);
        let d = Sha256::digest(&out);
        out.extend_from_slice(&d);
        let err = decode_checkpoint::<f64>(&out).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch(_)), "{err}");
    }

    #[test]
    fn vocab_mismatch_names_both_sizes() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save_checkpoint(&path, &init_params::<f64>(&cfg(), 1)).unwrap();
        let err = load_checkpoint_for_vocab::<f64>(&path, 30).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("11") && msg.contains("30"), "{msg}");
    }
}
