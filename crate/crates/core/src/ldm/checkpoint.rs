//! Versioned binary checkpoints.
//!
//! Layout (little-endian): magic `CAUDTOY\0`, version `u16`, the 32-byte
//! model-config digest, a `u32` block count, then per block: `u16` name
//! length, UTF-8 name, role byte (0 frozen, 1 trainable), `u32` rows,
//! `u32` cols and `rows * cols` IEEE-754 single-precision values.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::config::ModelConfig;
use super::model::ToyModel;
use super::params::Role;
use super::{LdmError, Result};

const MAGIC: &[u8; 8] = b"CAUDTOY\0";
pub const CHECKPOINT_VERSION: u16 = 1;

fn hex(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(model: &ToyModel, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&model.config().digest());
    buf.extend_from_slice(&(model.params().len() as u32).to_le_bytes());
    for (_, p) in model.params().iter() {
        let name = p.name.as_bytes();
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name);
        buf.push(match p.role {
            Role::Frozen => 0,
            Role::Trainable => 1,
        });
        let (r, c) = p.value.dim();
        buf.extend_from_slice(&(r as u32).to_le_bytes());
        buf.extend_from_slice(&(c as u32).to_le_bytes());
        for v in p.value.iter() {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(LdmError::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Rebuilds the model for `config` and overwrites every parameter from the file.
pub fn load_checkpoint(path: impl AsRef<Path>, config: &ModelConfig) -> Result<ToyModel> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let mut r = Reader { data: &data, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(LdmError::Checkpoint("bad magic".into()));
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(LdmError::Checkpoint(format!("unsupported version {version}")));
    }
    let digest = r.take(32)?;
    let expected = config.digest();
    if digest != expected {
        return Err(LdmError::DigestMismatch { expected: hex(&expected), found: hex(digest) });
    }
    let mut model = ToyModel::new(config)?;
    let count = r.u32()? as usize;
    if count != model.params().len() {
        return Err(LdmError::Checkpoint(format!("{count} blocks, model has {}", model.params().len())));
    }
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| LdmError::Checkpoint("parameter name is not UTF-8".into()))?
            .to_string();
        let role = match r.take(1)?[0] {
            0 => Role::Frozen,
            1 => Role::Trainable,
            b => return Err(LdmError::Checkpoint(format!("bad role byte {b} for {name}"))),
        };
        let rows = r.u32()? as usize;
        let cols = r.u32()? as usize;
        let raw = r.take(rows * cols * 4)?;
        let values: Vec<f64> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
        let value = Array2::from_shape_vec((rows, cols), values).expect("length checked");
        if !seen.insert(name.clone()) {
            return Err(LdmError::Checkpoint(format!("duplicate block {name}")));
        }
        model.set_param(&name, role, value)?;
    }
    if r.pos != data.len() {
        return Err(LdmError::Checkpoint(format!("{} trailing bytes", data.len() - r.pos)));
    }
    Ok(model)
}
