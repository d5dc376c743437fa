//! Binary checkpoint format. All integers are little-endian.
//!
//! ```text
//! "NPNT" | version u32 | config_len u32 | config (UTF-8 key=value lines)
//! tensor_count u32
//! per tensor: name_len u16 | name | dtype u8 (0 = f32) | ndim u32 | dims u32 * ndim | values f32 LE
//! ```
//!
//! Parameters are written in model order, then batchnorm running statistics.

use std::path::Path;

use super::{Model, ModelConfig};
use crate::error::{CheckpointError, Error, Result};

const MAGIC: &[u8; 4] = b"NPNT";
const VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

/// Serializes the model's config, parameters and running statistics.
pub fn write_checkpoint(model: &Model) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let config = model.config().to_kv_lines();
    out.extend_from_slice(&(config.len() as u32).to_le_bytes());
    out.extend_from_slice(config.as_bytes());

    let store = model.store();
    let count = store.params().len() + store.buffers().len();
    out.extend_from_slice(&(count as u32).to_le_bytes());
    for p in store.params() {
        write_tensor(&mut out, &p.name, &p.dims, p.value.data());
    }
    for b in store.buffers() {
        write_tensor(&mut out, &b.name, &[b.value.len()], &b.value);
    }
    out
}

fn write_tensor(out: &mut Vec<u8>, name: &str, dims: &[usize], values: &[f32]) {
    out.extend_from_slice(&(name.len() as u16).to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(DTYPE_F32);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &'static str) -> Result<u8, CheckpointError> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &'static str) -> Result<u16, CheckpointError> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn str(&mut self, n: usize, what: &'static str) -> Result<&'a str, CheckpointError> {
        std::str::from_utf8(self.take(n, what)?).map_err(|_| CheckpointError::Utf8(what))
    }
}

/// Rebuilds a model from checkpoint bytes. Every stored tensor must match the
/// config's architecture by name and dims, and every model tensor must be present.
pub fn read_checkpoint(bytes: &[u8]) -> Result<Model, CheckpointError> {
    let mut r = Reader { bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let config_len = r.u32("config length")? as usize;
    let config = ModelConfig::from_kv_lines(r.str(config_len, "config block")?)
        .map_err(CheckpointError::BadConfig)?;
    // The seed is irrelevant: every value is overwritten below.
    let mut model = Model::new(config, 0).map_err(|e| CheckpointError::BadConfig(e.to_string()))?;
    let store = model.store_mut();
    let mut seen_params = vec![false; store.params().len()];
    let mut seen_buffers = vec![false; store.buffers().len()];

    let count = r.u32("tensor count")?;
    for _ in 0..count {
        let name_len = r.u16("tensor name length")? as usize;
        let name = r.str(name_len, "tensor name")?.to_string();
        let dtype = r.u8("dtype")?;
        if dtype != DTYPE_F32 {
            return Err(CheckpointError::UnsupportedDtype { name, dtype });
        }
        let ndim = r.u32("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim.min(8));
        for _ in 0..ndim {
            dims.push(r.u32("dims")? as usize);
        }
        let (expected, slot): (Vec<usize>, &mut [f32]) =
            if let Some(i) = store.params().iter().position(|p| p.name == name) {
                seen_params[i] = true;
                let p = &mut store.params_mut()[i];
                (p.dims.clone(), p.value.data_mut())
            } else if let Some(i) = store.buffers().iter().position(|b| b.name == name) {
                seen_buffers[i] = true;
                let b = &mut store.buffers_mut()[i];
                (vec![b.value.len()], &mut b.value[..])
            } else {
                return Err(CheckpointError::UnknownTensor(name));
            };
        if dims != expected {
            return Err(CheckpointError::DimsMismatch {
                name,
                expected,
                found: dims,
            });
        }
        let raw = r.take(slot.len() * 4, "tensor values")?;
        for (v, chunk) in slot.iter_mut().zip(raw.chunks_exact(4)) {
            *v = f32::from_le_bytes(chunk.try_into().unwrap());
        }
    }
    if let Some(i) = seen_params.iter().position(|s| !s) {
        return Err(CheckpointError::MissingTensor(
            store.params()[i].name.clone(),
        ));
    }
    if let Some(i) = seen_buffers.iter().position(|s| !s) {
        return Err(CheckpointError::MissingTensor(
            store.buffers()[i].name.clone(),
        ));
    }
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(model)
}

pub fn save_checkpoint(model: &Model, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, write_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Model> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&bytes).map_err(|source| Error::Checkpoint {
        path: path.to_path_buf(),
        source,
    })
}
