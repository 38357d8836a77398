//! Parameter checkpoints.
//!
//! ```text
//! "XMLP" | version u32 | d u32 | k u32 | n_tensors u32
//! per tensor: name_len u16 | name | rank u8 | dims u32 × rank | f64 LE payload
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::params::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::featstore::store::Cursor;
use crate::numkit::Rng;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"XMLP";
const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tensors = params.tensors();
    let mut buf = Vec::with_capacity(20 + 8 * params.n_params() + 64 * tensors.len());
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(params.hidden() as u32).to_le_bytes());
    buf.extend_from_slice(&(params.kernel_size() as u32).to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in &tensors {
        buf.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        buf.extend_from_slice(t.name.as_bytes());
        buf.push(t.shape.len() as u8);
        for d in &t.shape {
            buf.extend_from_slice(&(*d as u32).to_le_bytes());
        }
        for x in t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut cur = Cursor::new(&bytes, path);
    let magic = cur.take(4, "magic").map_err(|_| bad_magic(path))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(bad_magic(path));
    }
    let version = cur.u32("version")?;
    if version == 0 || version > CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let hidden = cur.u32("hidden size")? as usize;
    let kernel_size = cur.u32("kernel size")? as usize;
    let n = cur.u32("tensor count")? as usize;
    let mut table: HashMap<String, (Vec<usize>, Vec<f64>)> = HashMap::new();
    for _ in 0..n {
        let name_len = cur.u16("name length")? as usize;
        let name = cur.string(name_len, "tensor name")?;
        let rank = cur.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| cur.u32("dim").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let data = cur.f64_vec(shape.iter().product(), &name)?;
        table.insert(name, (shape, data));
    }

    let mismatch = |detail: String| Error::DimMismatch {
        path: path.to_path_buf(),
        detail,
    };
    let dim = |name: &str, axis: usize| -> Result<usize> {
        table
            .get(name)
            .and_then(|(s, _)| s.get(axis).copied())
            .ok_or_else(|| mismatch(format!("missing tensor {name}")))
    };
    let config = ModelConfig {
        d_v: dim("proj_v.weight", 0)?,
        d_s: dim("proj_s.weight", 0)?,
        d_q: dim("proj_q.weight", 0)?,
        hidden,
        max_len: dim("pos_enc", 0)?,
        kernel_size,
        init_std: ModelConfig::DEFAULT_INIT_STD,
    };
    let mut params = ModelParams::init(config, &mut Rng::new(0)).map_err(|e| mismatch(e.to_string()))?;
    let expected: Vec<(String, Vec<usize>)> = params
        .tensors()
        .into_iter()
        .map(|t| (t.name, t.shape))
        .collect();
    if expected.len() != table.len() {
        return Err(mismatch(format!(
            "expected {} tensors, found {}",
            expected.len(),
            table.len()
        )));
    }
    for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let (found_shape, data) = table
            .get(name)
            .ok_or_else(|| mismatch(format!("missing tensor {name}")))?;
        if found_shape != shape {
            return Err(mismatch(format!(
                "tensor {name} has shape {found_shape:?}, expected {shape:?}"
            )));
        }
        slot.copy_from_slice(data);
    }
    Ok(params)
}

fn bad_magic(path: &Path) -> Error {
    Error::BadMagic {
        path: path.to_path_buf(),
        expected: "XMLP",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_bitwise() {
        let mut cfg = ModelConfig::new(5, 4, 3);
        cfg.hidden = 8;
        cfg.max_len = 12;
        cfg.kernel_size = 7;
        let p = ModelParams::init(cfg, &mut Rng::new(77)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.xmlp");
        write_checkpoint(&p, &path).unwrap();
        let q = read_checkpoint(&path).unwrap();
        assert_eq!(p, q);

        let mut bytes = fs::read(&path).unwrap();
        bytes[1] = b'?';
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::BadMagic { .. })));
    }
}
