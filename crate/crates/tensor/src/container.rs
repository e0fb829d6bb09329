//! Raw tensor container files.
//!
//! Single tensor (`.tnsr`):
//!
//! ```text
//! magic    8 bytes  "TRITNSR\0"
//! version  u8       1
//! rank     u8
//! extents  rank × u64 little-endian
//! data     product(extents) × f32 little-endian, row-major
//! ```
//!
//! Checkpoint (`.ckpt`), a set of named tensors plus a UTF-8 metadata blob:
//!
//! ```text
//! magic    8 bytes  "TRITCKPT"
//! version  u8       1
//! meta     u32 LE byte length, then UTF-8 text
//! count    u32 LE number of sections
//! section  u32 LE name length, UTF-8 name, rank u8, extents u64 LE, f32 LE data
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const TENSOR_MAGIC: &[u8; 8] = b"TRITNSR\0";
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TRITCKPT";
pub const VERSION: u8 = 1;

fn format_err(msg: impl Into<String>) -> TensorError {
    TensorError::Format(msg.into())
}

fn write_body<T: Scalar>(w: &mut impl Write, t: &Tensor<T>) -> Result<()> {
    let rank = u8::try_from(t.rank()).map_err(|_| format_err(format!("rank {} exceeds 255", t.rank())))?;
    w.write_all(&[rank])?;
    for &d in t.shape() {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.numel() * 4);
    for v in t.data() {
        buf.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_exact(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => format_err(format!("truncated while reading {what}")),
        _ => TensorError::Io(e),
    })?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4, what)?.try_into().unwrap()))
}

fn read_body<T: Scalar>(r: &mut impl Read) -> Result<Tensor<T>> {
    let rank = read_exact(r, 1, "rank")?[0] as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let d = u64::from_le_bytes(read_exact(r, 8, "extent")?.try_into().unwrap());
        shape.push(usize::try_from(d).map_err(|_| format_err(format!("extent {d} overflows")))?);
    }
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(4).map(|_| n))
        .ok_or_else(|| format_err(format!("extents {shape:?} overflow")))?;
    let bytes = read_exact(r, count * 4, "tensor data")?;
    let data = bytes.chunks_exact(4).map(|c| T::from_f64(f32::from_le_bytes(c.try_into().unwrap()) as f64)).collect();
    Tensor::new(shape, data)
}

fn expect_header(r: &mut impl Read, magic: &[u8; 8]) -> Result<()> {
    let got = read_exact(r, 8, "magic")?;
    if got != magic {
        return Err(format_err(format!("bad magic {:?}", String::from_utf8_lossy(&got))));
    }
    let version = read_exact(r, 1, "version")?[0];
    if version != VERSION {
        return Err(format_err(format!("unsupported version {version}")));
    }
    Ok(())
}

pub fn write_tensor<T: Scalar>(w: &mut impl Write, t: &Tensor<T>) -> Result<()> {
    w.write_all(TENSOR_MAGIC)?;
    w.write_all(&[VERSION])?;
    write_body(w, t)
}

pub fn read_tensor<T: Scalar>(r: &mut impl Read) -> Result<Tensor<T>> {
    expect_header(r, TENSOR_MAGIC)?;
    read_body(r)
}

pub fn save_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, t)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path)?;
    read_tensor(&mut bytes.as_slice())
}

/// Named tensor sections plus free-form metadata text.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: String,
    pub sections: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.sections.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn push<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        self.sections.push((name.into(), t.cast()));
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[VERSION])?;
        w.write_all(&(self.meta.len() as u32).to_le_bytes())?;
        w.write_all(self.meta.as_bytes())?;
        w.write_all(&(self.sections.len() as u32).to_le_bytes())?;
        for (name, t) in &self.sections {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            write_body(w, t)?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read) -> Result<Self> {
        expect_header(r, CHECKPOINT_MAGIC)?;
        let meta_len = read_u32(r, "metadata length")? as usize;
        let meta = String::from_utf8(read_exact(r, meta_len, "metadata")?)
            .map_err(|_| format_err("metadata is not UTF-8"))?;
        let count = read_u32(r, "section count")?;
        let mut sections = Vec::new();
        for _ in 0..count {
            let len = read_u32(r, "section name length")? as usize;
            let name = String::from_utf8(read_exact(r, len, "section name")?)
                .map_err(|_| format_err("section name is not UTF-8"))?;
            let t = read_body(r)?;
            sections.push((name, t));
        }
        Ok(Self { meta, sections })
    }

    /// Writes to a sibling temporary file, then renames over `path`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write(&mut buf)?;
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, buf)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read(&mut bytes.as_slice())
    }
}
