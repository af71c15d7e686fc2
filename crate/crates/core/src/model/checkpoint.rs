//! Flat named-tensor checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "SAGCKPT\0"
//! version u32      1
//! count   u32      number of tensors
//! per tensor:
//!   name_len u32, name (UTF-8, name_len bytes)
//!   ndim u32, dims (ndim × u64)
//!   data (product(dims) × f64)
//! ```

use std::io::{Read, Write};

use super::network::{NamedTensor, ResidualCNN1D};
use super::ModelError;
use crate::autodiff::Tensor;

pub const MAGIC: &[u8; 8] = b"SAGCKPT\0";
pub const VERSION: u32 = 1;

pub fn write_checkpoint(model: &ResidualCNN1D, mut w: impl Write) -> Result<(), ModelError> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(model.parameters().len() as u32).to_le_bytes())?;
    for p in model.parameters() {
        w.write_all(&(p.name.len() as u32).to_le_bytes())?;
        w.write_all(p.name.as_bytes())?;
        w.write_all(&(p.tensor.ndim() as u32).to_le_bytes())?;
        for &d in p.tensor.shape() {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        for v in p.tensor.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32, ModelError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64, ModelError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint(mut r: impl Read) -> Result<ResidualCNN1D, ModelError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(ModelError::Checkpoint("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(ModelError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)?;
    let mut params = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
        let ndim = read_u32(&mut r)?;
        let shape = (0..ndim)
            .map(|_| read_u64(&mut r).map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            data.push(f64::from_le_bytes(b));
        }
        let tensor = Tensor::new(shape, data).map_err(|e| ModelError::Checkpoint(e.to_string()))?;
        params.push(NamedTensor { name, tensor });
    }
    ResidualCNN1D::from_named(params)
}
