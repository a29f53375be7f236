//! Named-tensor container: `u32 count`, then per tensor `u32 name_len`,
//! UTF-8 name, `u32 rank`, `u32` dims, raw little-endian `f32` data.
//! Values are stored as `f32` regardless of the in-memory scalar type.

use std::io::Read;
use std::path::Path;

use super::{ParamStore, Scalar};
use crate::error::{Error, Result};

pub fn save_store<F: Scalar>(path: impl AsRef<Path>, store: &ParamStore<F>) -> Result<()> {
    let mut out: Vec<u8> = Vec::new();
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (_, entry) in store.iter() {
        let name = entry.name.as_bytes();
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(entry.shape.len() as u32).to_le_bytes());
        for &d in &entry.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &entry.data {
            out.extend_from_slice(&v.as_f32().to_le_bytes());
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn rd_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Read every tensor in a container file.
pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<usize>, Vec<f32>)>> {
    let bytes = std::fs::read(path)?;
    let mut r = bytes.as_slice();
    let count = rd_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let name_len = rd_u32(&mut r)? as usize;
        let mut name_bytes = vec![0u8; name_len];
        r.read_exact(&mut name_bytes)?;
        let name = String::from_utf8(name_bytes).map_err(|_| Error::Format {
            field: "tensor_name".into(),
            msg: "invalid UTF-8".into(),
        })?;
        let rank = rd_u32(&mut r)? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(rd_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let mut data = Vec::with_capacity(numel);
        for _ in 0..numel {
            let mut b = [0u8; 4];
            r.read_exact(&mut b)?;
            data.push(f32::from_le_bytes(b));
        }
        tensors.push((name, shape, data));
    }
    Ok(tensors)
}

/// Load a container into an existing store. Every store entry must be
/// present in the file with a matching shape; extra file tensors are
/// ignored.
pub fn load_store<F: Scalar>(path: impl AsRef<Path>, store: &mut ParamStore<F>) -> Result<()> {
    let tensors = load_tensors(path)?;
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let (name, shape) = {
            let e = store.entry(id);
            (e.name.clone(), e.shape.clone())
        };
        let found = tensors
            .iter()
            .find(|(n, _, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("checkpoint is missing tensor {name:?}")))?;
        if found.1 != shape {
            return Err(Error::Shape(format!(
                "checkpoint tensor {name:?} has shape {:?}, expected {shape:?}",
                found.1
            )));
        }
        store.entry_mut(id).data = found.2.iter().map(|&v| F::from_f32(v)).collect();
    }
    Ok(())
}
