//! Binary containers and small I/O helpers.
//!
//! Dataset (`EQFD1`) and rollout (`EQFR1`) files share one layout: the magic,
//! a `u32` rank (2 or 4), the shape as `u32`s (`n, d` or `n, c, h, w`) and then
//! the samples row-major as little-endian `f32`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(truncated)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn write_f32s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn write_f32s_native<W: Write>(w: &mut W, values: &[f32]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 4);
    for &v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f32s_native<R: Read>(r: &mut R, n: usize) -> Result<Vec<f32>> {
    let mut buf = vec![0u8; n * 4];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub(crate) fn read_f32s<R: Read>(r: &mut R, n: usize) -> Result<Vec<f64>> {
    Ok(read_f32s_native(r, n)?.into_iter().map(f64::from).collect())
}

fn truncated(e: std::io::Error) -> Error {
    if e.kind() == std::io::ErrorKind::UnexpectedEof {
        Error::Format("file is truncated".into())
    } else {
        Error::Io(e)
    }
}

/// Writes through a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::invalid("output path has no file name"))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Shape of one sample (or one frame).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleShape {
    Vector { d: usize },
    Grid { c: usize, h: usize, w: usize },
}

impl SampleShape {
    pub fn len(&self) -> usize {
        match *self {
            SampleShape::Vector { d } => d,
            SampleShape::Grid { c, h, w } => c * h * w,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ContainerKind {
    Dataset,
    Rollout,
}

impl ContainerKind {
    fn magic(self) -> &'static [u8; 5] {
        match self {
            ContainerKind::Dataset => b"EQFD1",
            ContainerKind::Rollout => b"EQFR1",
        }
    }
}

/// `n` samples of a common shape, one per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub shape: SampleShape,
    pub data: Array2<f64>,
}

impl Dataset {
    pub fn new(shape: SampleShape, data: Array2<f64>) -> Result<Self> {
        if data.ncols() != shape.len() {
            return Err(Error::shape(shape.len(), data.ncols()));
        }
        Ok(Self { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn to_bytes(&self, kind: ContainerKind) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(32 + self.data.len() * 4);
        out.extend_from_slice(kind.magic());
        let n = self.data.nrows() as u32;
        match self.shape {
            SampleShape::Vector { d } => {
                write_u32(&mut out, 2)?;
                write_u32(&mut out, n)?;
                write_u32(&mut out, d as u32)?;
            }
            SampleShape::Grid { c, h, w } => {
                write_u32(&mut out, 4)?;
                for v in [n, c as u32, h as u32, w as u32] {
                    write_u32(&mut out, v)?;
                }
            }
        }
        let flat: Vec<f64> = self.data.iter().copied().collect();
        write_f32s(&mut out, &flat)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], kind: ContainerKind) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 5];
        r.read_exact(&mut magic).map_err(truncated)?;
        if &magic != kind.magic() {
            return Err(Error::Format(format!(
                "expected magic {}, found {:?}",
                String::from_utf8_lossy(kind.magic()),
                String::from_utf8_lossy(&magic)
            )));
        }
        let rank = read_u32(&mut r)?;
        let n = read_u32(&mut r)? as usize;
        let shape = match rank {
            2 => SampleShape::Vector { d: read_u32(&mut r)? as usize },
            4 => {
                let c = read_u32(&mut r)? as usize;
                let h = read_u32(&mut r)? as usize;
                let w = read_u32(&mut r)? as usize;
                SampleShape::Grid { c, h, w }
            }
            other => return Err(Error::Format(format!("unsupported rank {other}"))),
        };
        let expected = n
            .checked_mul(shape.len())
            .and_then(|v| v.checked_mul(4))
            .ok_or_else(|| Error::Format("shape overflows".into()))?;
        if r.len() != expected {
            return Err(Error::Format(format!("payload is {} bytes, header implies {expected}", r.len())));
        }
        let values = read_f32s(&mut r, n * shape.len())?;
        let data = Array2::from_shape_vec((n, shape.len()), values).unwrap();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Format("payload contains non-finite values".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn save(&self, path: &Path, kind: ContainerKind) -> Result<()> {
        write_atomic(path, &self.to_bytes(kind)?)
    }

    pub fn load(path: &Path, kind: ContainerKind) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?, kind)
    }
}
