//! The `SKT1` raw tensor format: the magic bytes `SKT1`, a little-endian
//! `u32` rank, `rank` little-endian `u32` dims, then the row-major `f32`
//! little-endian payload.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SKT1";

pub fn write_raw<W: Write>(mut w: W, dims: &[usize], data: &[f32]) -> Result<()> {
    let expected: usize = dims.iter().product();
    if expected != data.len() {
        return Err(Error::shape(
            "write_raw",
            format!("dims {dims:?} need {expected} values, got {}", data.len()),
        ));
    }
    let mut buf = Vec::with_capacity(8 + 4 * dims.len() + 4 * data.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| Error::InvalidArgument(format!("dimension {d} exceeds u32")))?;
        buf.extend_from_slice(&d.to_le_bytes());
    }
    for v in data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Reads one record, returning its dims and payload.
pub fn read_raw<R: Read>(mut r: R) -> Result<(Vec<usize>, Vec<f32>)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("<stream>", format!("bad magic {magic:?}")));
    }
    let rank = read_u32(&mut r)? as usize;
    if rank > 16 {
        return Err(Error::format(
            "<stream>",
            format!("implausible rank {rank}"),
        ));
    }
    let dims = (0..rank)
        .map(|_| read_u32(&mut r).map(|d| d as usize))
        .collect::<std::io::Result<Vec<_>>>()?;
    let count: usize = dims.iter().product();
    let mut bytes = vec![0u8; count * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok((dims, data))
}

pub fn write_tensor<W: Write>(w: W, t: &Tensor) -> Result<()> {
    write_raw(w, &t.shape(), t.data())
}

/// Reads a record of rank ≤ 4 as a tensor; missing leading dims become 1.
pub fn read_tensor<R: Read>(r: R) -> Result<Tensor> {
    let (dims, data) = read_raw(r)?;
    if dims.len() > 4 {
        return Err(Error::format(
            "<stream>",
            format!("rank {} > 4", dims.len()),
        ));
    }
    let mut shape = [1usize; 4];
    shape[4 - dims.len()..].copy_from_slice(&dims);
    Tensor::from_vec(shape, data)
}

/// Writes `bytes` to `path` through a temporary sibling file and a rename.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_raw(path: &Path, dims: &[usize], data: &[f32]) -> Result<()> {
    let mut buf = Vec::new();
    write_raw(&mut buf, dims, data)?;
    atomic_write(path, &buf)
}

pub fn save_tensor(path: &Path, t: &Tensor) -> Result<()> {
    save_raw(path, &t.shape(), t.data())
}

pub fn load_raw(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path)?;
    read_raw(bytes.as_slice()).map_err(|e| match e {
        Error::Format { detail, .. } => Error::format(path, detail),
        Error::Io(io) => Error::format(path, io.to_string()),
        other => other,
    })
}

pub fn load_tensor(path: &Path) -> Result<Tensor> {
    let (dims, data) = load_raw(path)?;
    if dims.len() > 4 {
        return Err(Error::format(path, format!("rank {} > 4", dims.len())));
    }
    let mut shape = [1usize; 4];
    shape[4 - dims.len()..].copy_from_slice(&dims);
    Tensor::from_vec(shape, data)
}
