//! Binary parameter checkpoints.
//!
//! Layout, little-endian: magic `NFCK`, `u32` version, `u32` parameter count,
//! then per parameter `u32` name length, UTF-8 name, `u32` rank, `rank` x `u32`
//! dims, and `f32` data in row-major order.

use std::io::{self, Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::param::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"NFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn eof(what: &str) -> impl Fn(io::Error) -> Error + '_ {
    move |e| {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated(format!("checkpoint ended inside {what}"))
        } else {
            Error::Io(e)
        }
    }
}

pub fn write_checkpoint<W: Write>(store: &ParamStore, mut w: W) -> Result<()> {
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
    w.write_u32::<LittleEndian>(store.len() as u32)?;
    for p in store.iter() {
        w.write_u32::<LittleEndian>(p.name.len() as u32)?;
        w.write_all(p.name.as_bytes())?;
        let shape = p.value.shape();
        w.write_u32::<LittleEndian>(shape.len() as u32)?;
        for d in shape {
            w.write_u32::<LittleEndian>(d as u32)?;
        }
        for &x in &p.value.data {
            w.write_f32::<LittleEndian>(x as f32)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Vec<CheckpointEntry>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(eof("magic"))?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic { expected: CHECKPOINT_MAGIC, found: magic });
    }
    let version = r.read_u32::<LittleEndian>().map_err(eof("header"))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::BadVersion { found: version, supported: CHECKPOINT_VERSION });
    }
    let count = r.read_u32::<LittleEndian>().map_err(eof("header"))?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.read_u32::<LittleEndian>().map_err(eof("name length"))? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name).map_err(eof("name"))?;
        let name = String::from_utf8(name).map_err(|e| Error::Inconsistent(format!("parameter name: {e}")))?;
        let rank = r.read_u32::<LittleEndian>().map_err(eof("rank"))? as usize;
        let shape = (0..rank)
            .map(|_| r.read_u32::<LittleEndian>().map(|d| d as usize))
            .collect::<io::Result<Vec<_>>>()
            .map_err(eof("shape"))?;
        let n: usize = shape.iter().product();
        let mut data = vec![0f32; n];
        r.read_f32_into::<LittleEndian>(&mut data).map_err(eof("data"))?;
        out.push(CheckpointEntry { name, shape, data });
    }
    Ok(out)
}

/// Overwrites every parameter of `store` from a checkpoint with identical names and shapes.
pub fn load_checkpoint<R: Read>(store: &mut ParamStore, r: R) -> Result<()> {
    let entries = read_checkpoint(r)?;
    if entries.len() != store.len() {
        return Err(Error::Inconsistent(format!(
            "checkpoint holds {} parameters, model has {}",
            entries.len(),
            store.len()
        )));
    }
    for e in entries {
        let id = store.id(&e.name).ok_or_else(|| Error::Inconsistent(format!("unknown parameter {:?}", e.name)))?;
        let p = store.get_mut(id);
        if p.value.shape() != e.shape {
            return Err(Error::Shape { op: "load_checkpoint", lhs: p.value.shape(), rhs: e.shape });
        }
        p.value = Tensor::new(p.value.rows, p.value.cols, e.data.iter().map(|&x| x as f64).collect())?;
    }
    Ok(())
}
