//! `ACND` layout, all little-endian: magic `ACND`, version `u16`, kind
//! `u8`, rows `u32`, cols `u32`, then `rows * cols` `f32` values row-major.

use std::path::Path;

use super::{DatasetError, Result};
use crate::dsp::Contour;

pub const ACND_VERSION: u16 = 1;
const MAGIC: &[u8; 4] = b"ACND";
const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AcndKind {
    Pitch = 0,
    Energy = 1,
    Grid = 2,
    Object = 3,
    /// A `T' x F'` diffusion latent.
    Latent = 4,
}

impl AcndKind {
    fn from_byte(b: u8) -> Result<Self> {
        Ok(match b {
            0 => Self::Pitch,
            1 => Self::Energy,
            2 => Self::Grid,
            3 => Self::Object,
            4 => Self::Latent,
            _ => return Err(DatasetError::Format(format!("unknown ACND kind {b}"))),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Pitch => "pitch",
            Self::Energy => "energy",
            Self::Grid => "grid",
            Self::Object => "object",
            Self::Latent => "latent",
        }
    }
}

/// A row-major `f32` matrix tagged with what it holds. Contours are `1 x L`,
/// grids `D x L`, class objects `L x H` and latents `T' x F'`.
#[derive(Debug, Clone, PartialEq)]
pub struct AcndArray {
    pub kind: AcndKind,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

pub fn encode_acnd(array: &AcndArray) -> Result<Vec<u8>> {
    if array.rows * array.cols != array.data.len() {
        return Err(DatasetError::Format(format!(
            "{} x {} array holds {} values",
            array.rows,
            array.cols,
            array.data.len()
        )));
    }
    let dim = |n: usize| u32::try_from(n).map_err(|_| DatasetError::Format(format!("dimension {n} too large")));
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * array.data.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&ACND_VERSION.to_le_bytes());
    out.push(array.kind as u8);
    out.extend_from_slice(&dim(array.rows)?.to_le_bytes());
    out.extend_from_slice(&dim(array.cols)?.to_le_bytes());
    for v in &array.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_acnd(bytes: &[u8]) -> Result<AcndArray> {
    if bytes.len() < HEADER_LEN {
        return Err(DatasetError::Format(format!("truncated ACND header ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(DatasetError::Format("bad magic, not an ACND file".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != ACND_VERSION {
        return Err(DatasetError::Version { found: version, expected: ACND_VERSION });
    }
    let kind = AcndKind::from_byte(bytes[6])?;
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes")) as usize;
    let (rows, cols) = (u32_at(7), u32_at(11));
    let expected = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| DatasetError::Format(format!("dimensions {rows} x {cols} overflow")))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(DatasetError::Format(format!(
            "payload is {} bytes, {rows} x {cols} needs {expected}",
            payload.len()
        )));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok(AcndArray { kind, rows, cols, data })
}

impl AcndArray {
    /// Rounds an `f64` matrix to single precision.
    pub fn from_matrix(kind: AcndKind, m: &ndarray::Array2<f64>) -> Self {
        Self { kind, rows: m.nrows(), cols: m.ncols(), data: m.iter().map(|&v| v as f32).collect() }
    }

    pub fn to_matrix(&self) -> ndarray::Array2<f64> {
        ndarray::Array2::from_shape_fn((self.rows, self.cols), |(i, j)| self.data[i * self.cols + j] as f64)
    }
}

pub fn write_acnd(path: impl AsRef<Path>, array: &AcndArray) -> Result<()> {
    std::fs::write(path, encode_acnd(array)?)?;
    Ok(())
}

pub fn read_acnd(path: impl AsRef<Path>) -> Result<AcndArray> {
    decode_acnd(&std::fs::read(path)?)
}

/// Stores a pitch or energy contour as a `1 x L` array.
pub fn write_contour(path: impl AsRef<Path>, kind: AcndKind, contour: &Contour) -> Result<()> {
    if !matches!(kind, AcndKind::Pitch | AcndKind::Energy) {
        return Err(DatasetError::Format(format!("{} is not a contour kind", kind.name())));
    }
    write_acnd(path, &AcndArray { kind, rows: 1, cols: contour.len(), data: contour.values.clone() })
}

/// Loads a contour; pitch voicing is recovered from nonzero values.
pub fn read_contour(path: impl AsRef<Path>, frame_rate: f64) -> Result<(AcndKind, Contour)> {
    let a = read_acnd(path)?;
    if a.rows != 1 {
        return Err(DatasetError::Format(format!("contour must have one row, found {}", a.rows)));
    }
    let contour = match a.kind {
        AcndKind::Pitch => Contour::from_hz(a.data, frame_rate)?,
        AcndKind::Energy => Contour::dense(a.data, frame_rate)?,
        k => return Err(DatasetError::Format(format!("expected a contour, found {}", k.name()))),
    };
    Ok((a.kind, contour))
}
