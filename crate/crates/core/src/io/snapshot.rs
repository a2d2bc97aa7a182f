//! Binary snapshot container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ECOV"            magic
//! u16               format version (1)
//! u8                element width in bytes (4 = f32, 8 = f64)
//! u32               tensor count
//! per tensor:
//!   u16 + bytes     UTF-8 name
//!   u8              rank
//!   u32 × rank      dims
//!   width × Πdims   values
//! u32               CRC-32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use crate::arch::ArchSpec;
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::params::LayerParams;
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"ECOV";
pub const FORMAT_VERSION: u16 = 1;

pub fn encode_snapshot<T: Scalar>(params: &LayerParams<T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.push(T::WIDTH);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, p) in params.iter() {
        let name = p.name.as_bytes();
        let name_len = u16::try_from(name.len())
            .map_err(|_| Error::Argument(format!("parameter name {:?} too long", p.name)))?;
        out.extend_from_slice(&name_len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            v.write_le(&mut out);
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Truncated(format!("ran out of bytes reading {what}")))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

/// Decodes a container into `(name, tensor)` pairs in file order.
pub fn decode_snapshot<T: Scalar>(bytes: &[u8]) -> Result<Vec<(String, Tensor<T>)>> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < 4 + 2 + 1 + 4 + 4 {
        return Err(Error::Truncated("file shorter than the fixed header".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CrcMismatch { stored, computed });
    }
    let mut cur = Cursor { bytes: body, pos: 4 };
    let version = cur.u16("version")?;
    if version != FORMAT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let width = cur.u8("element width")?;
    if width != T::WIDTH {
        return Err(Error::WidthMismatch {
            stored: width,
            expected: T::WIDTH,
        });
    }
    let count = cur.u32("tensor count")? as usize;
    let mut out = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = cur.u16("name length")? as usize;
        let name = std::str::from_utf8(cur.take(name_len, "name")?)
            .map_err(|_| Error::Truncated("tensor name is not UTF-8".into()))?
            .to_string();
        let rank = cur.u8("rank")? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32("dims")? as usize);
        }
        let len: usize = shape.iter().product();
        let raw = cur.take(len * width as usize, "values")?;
        let data = raw.chunks_exact(width as usize).map(T::read_le).collect();
        out.push((name, Tensor::from_vec(&shape, data)?));
    }
    if cur.pos != body.len() {
        return Err(Error::Truncated(format!(
            "{} unexpected trailing bytes",
            body.len() - cur.pos
        )));
    }
    Ok(out)
}

pub fn save_snapshot<T: Scalar>(params: &LayerParams<T>, path: &Path) -> Result<()> {
    let bytes = encode_snapshot(params)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a snapshot and installs it into a model built from `spec`. Every
/// tensor the architecture defines must be present with the same shape.
pub fn load_snapshot<T: Scalar>(path: &Path, spec: &ArchSpec) -> Result<ModelParams<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    snapshot_into_model(&decode_snapshot(&bytes)?, spec)
}

pub fn snapshot_into_model<T: Scalar>(tensors: &[(String, Tensor<T>)], spec: &ArchSpec) -> Result<ModelParams<T>> {
    let mut model = ModelParams::<T>::empty(spec)?;
    let mismatch = |name: &str, reason: String| Error::ShapeMismatch {
        name: name.to_string(),
        reason,
    };
    if tensors.len() != model.params().len() {
        return Err(mismatch(
            "*",
            format!(
                "file holds {} tensors, architecture defines {}",
                tensors.len(),
                model.params().len()
            ),
        ));
    }
    for (name, t) in tensors {
        let slot = model
            .params_mut()
            .by_name_mut(name)
            .ok_or_else(|| mismatch(name, "not defined by the architecture".into()))?;
        if slot.shape() != t.shape() {
            return Err(mismatch(
                name,
                format!("stored {:?}, expected {:?}", t.shape(), slot.shape()),
            ));
        }
        *slot = t.clone();
    }
    Ok(model)
}
