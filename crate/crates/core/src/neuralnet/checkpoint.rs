//! Binary checkpoint container. All integers and floats are little-endian:
//!
//! ```text
//! magic      8 bytes  "ICSRLCKP"
//! version    u32      CHECKPOINT_VERSION
//! meta_len   u32      byte length of the metadata
//! metadata   meta_len bytes of UTF-8 JSON
//! count      u32      number of arrays
//! then per array:
//!   name_len u32, name bytes (UTF-8)
//!   ndim     u32, ndim x u64 dimensions
//!   values   prod(dims) x f64
//! ```

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde_json::Value;

use super::{ParameterBlock, Parameterized};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ICSRLCKP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: Value,
    pub arrays: Vec<NamedArray>,
}

impl Checkpoint {
    pub fn new(metadata: Value) -> Self {
        Self {
            metadata,
            arrays: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> Result<()> {
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(Error::Shape {
                context: "Checkpoint::push",
                expected: n,
                actual: values.len(),
            });
        }
        self.arrays.push(NamedArray {
            name: name.into(),
            shape,
            values,
        });
        Ok(())
    }

    /// Appends every block of `model`, names prefixed with `prefix`.
    pub fn push_model(&mut self, prefix: &str, model: &dyn Parameterized) -> Result<()> {
        for block in model.blocks() {
            self.push(format!("{prefix}{}", block.name), block.shape.clone(), block.values.clone())?;
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&NamedArray> {
        self.arrays.iter().find(|a| a.name == name)
    }

    /// Loads values into `model` by name, checking shapes.
    pub fn load_model(&self, prefix: &str, model: &mut dyn Parameterized) -> Result<()> {
        for block in model.blocks_mut() {
            let name = format!("{prefix}{}", block.name);
            let array = self
                .get(&name)
                .ok_or_else(|| Error::Format(format!("checkpoint has no array named {name}")))?;
            copy_into(array, block)?;
        }
        Ok(())
    }

    pub fn metadata_str(&self, key: &str) -> Option<&str> {
        self.metadata.get(key).and_then(Value::as_str)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write_to(&mut out)?;
        Ok(out)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.metadata)?;
        write_u32(w, meta.len())?;
        w.write_all(&meta)?;
        write_u32(w, self.arrays.len())?;
        for a in &self.arrays {
            write_u32(w, a.name.len())?;
            w.write_all(a.name.as_bytes())?;
            write_u32(w, a.shape.len())?;
            for &d in &a.shape {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in &a.values {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Format("truncated checkpoint header".into()))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file (bad magic)".into()));
        }
        let version = read_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let meta_len = read_u32(r)? as usize;
        let meta = read_bytes(r, meta_len)?;
        let metadata: Value = serde_json::from_slice(&meta)?;
        let count = read_u32(r)? as usize;
        let mut arrays = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = read_u32(r)? as usize;
            let name = String::from_utf8(read_bytes(r, name_len)?)
                .map_err(|_| Error::Format("array name is not UTF-8".into()))?;
            let ndim = read_u32(r)? as usize;
            let mut shape = Vec::with_capacity(ndim.min(16));
            for _ in 0..ndim {
                let mut b = [0u8; 8];
                r.read_exact(&mut b)
                    .map_err(|_| Error::Format("truncated array shape".into()))?;
                shape.push(u64::from_le_bytes(b) as usize);
            }
            let n: usize = shape.iter().product();
            let raw = read_bytes(r, n * 8)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            arrays.push(NamedArray { name, shape, values });
        }
        Ok(Self { metadata, arrays })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let tmp = path.with_extension("ckpt.tmp");
        fs::write(&tmp, bytes)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

fn copy_into(array: &NamedArray, block: &mut ParameterBlock) -> Result<()> {
    if array.shape != block.shape {
        return Err(Error::Format(format!(
            "array {} has shape {:?}, model expects {:?}",
            array.name, array.shape, block.shape
        )));
    }
    block.values.copy_from_slice(&array.values);
    Ok(())
}

fn write_u32<W: Write>(w: &mut W, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Format("length exceeds u32".into()))?;
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| Error::Format("truncated checkpoint".into()))?;
    Ok(u32::from_le_bytes(b))
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    r.take(n as u64).read_to_end(&mut buf)?;
    if buf.len() != n {
        return Err(Error::Format("truncated checkpoint".into()));
    }
    Ok(buf)
}
