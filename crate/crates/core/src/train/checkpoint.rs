//! Binary checkpoint format. All integers and floats are little-endian.
//!
//! ```text
//! magic      8 bytes  "TGCCKPT\0"
//! version    u32      1
//! cfg_hash   32 bytes SHA-256 of the model config JSON
//! n_blocks   u32
//! block*     u32 name_len, name (UTF-8), u32 ndim, u64 dims[ndim], f64 values[prod(dims)]
//! ```

use std::fs;
use std::path::Path;

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::params::ParamSet;

pub const MAGIC: &[u8; 8] = b"TGCCKPT\0";
pub const VERSION: u32 = 1;

fn hash_bytes(cfg: &ModelConfig) -> [u8; 32] {
    let hex = cfg.hash();
    let mut out = [0u8; 32];
    for (i, b) in out.iter_mut().enumerate() {
        *b = u8::from_str_radix(&hex[2 * i..2 * i + 2], 16).expect("hex digest");
    }
    out
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_bytes(model: &Model) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + model.params.num_values() * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&hash_bytes(&model.config));
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::Checkpoint(format!("truncated at byte {} while reading {what}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
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

/// Parses a checkpoint and checks it against `config`, whose parameter
/// layout it must match.
pub fn from_bytes(bytes: &[u8], config: &ModelConfig) -> Result<Model> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let found = hex(r.take(32, "config hash")?);
    let expected = config.hash();
    if found != expected {
        return Err(Error::HashMismatch { expected, found });
    }
    let n_blocks = r.u32("block count")?;
    let mut params = ParamSet::new();
    for b in 0..n_blocks {
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "name")?)
            .map_err(|_| Error::Checkpoint(format!("block {b} name is not UTF-8")))?
            .to_string();
        let ndim = r.u32("rank")? as usize;
        let shape = (0..ndim).map(|_| r.u64("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
        let n = n
            .filter(|&n| n <= bytes.len() / 8)
            .ok_or_else(|| Error::Checkpoint(format!("block `{name}` has implausible shape {shape:?}")))?;
        let raw = r.take(n * 8, &format!("values of `{name}`"))?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::Checkpoint(format!("block `{name}`: {e}")))?;
        params.insert(&name, t);
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let reference = config.init_params(0)?;
    if !params.same_layout(&reference) {
        return Err(Error::Checkpoint("parameter blocks do not match the model layout".into()));
    }
    Ok(Model {
        config: config.clone(),
        params,
    })
}

pub fn save(model: &Model, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, config: &ModelConfig) -> Result<Model> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes, config)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> Model {
        let mut cfg = ModelConfig::new(2, 16, 3);
        cfg.tdf.slices = 4;
        cfg.tdf.embed_dim = 8;
        Model::new(cfg, 4).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let m = model();
        let back = from_bytes(&to_bytes(&m), &m.config).unwrap();
        assert_eq!(back, m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        save(&m, &path).unwrap();
        assert_eq!(load(&path, &m.config).unwrap(), m);
    }

    #[test]
    fn truncation_is_reported() {
        let m = model();
        let bytes = to_bytes(&m);
        for cut in [0, 5, 20, 50, bytes.len() - 1] {
            let err = from_bytes(&bytes[..cut], &m.config).unwrap_err();
            assert!(matches!(err, Error::Checkpoint(_)), "{cut}: {err}");
        }
    }

    #[test]
    fn mismatched_config_names_both_hashes() {
        let m = model();
        let mut other = m.config.clone();
        other.dgl.iterations = 3;
        match from_bytes(&to_bytes(&m), &other).unwrap_err() {
            Error::HashMismatch { expected, found } => {
                assert_eq!(expected, other.hash());
                assert_eq!(found, m.config.hash());
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn bad_magic_rejected() {
        let m = model();
        let mut bytes = to_bytes(&m);
        bytes[0] = b'X';
        assert!(matches!(from_bytes(&bytes, &m.config), Err(Error::Checkpoint(_))));
    }
}
