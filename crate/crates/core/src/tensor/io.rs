//! Tensor binary format: `b"STN1"`, `u32` rank, `rank` x `u32` extents,
//! `u8` dtype tag (0 = f32, 1 = f64, 2 = u8), then the little-endian
//! row-major payload.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{DType, Tensor};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"STN1";

pub trait Element: Copy + 'static {
    const DTYPE: DType;
    const SIZE: usize;
    fn put(self, out: &mut Vec<u8>);
    fn take(bytes: &[u8]) -> Self;
}

impl Element for f32 {
    const DTYPE: DType = DType::F32;
    const SIZE: usize = 4;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f32::from_le_bytes(bytes.try_into().expect("4 bytes"))
    }
}

impl Element for f64 {
    const DTYPE: DType = DType::F64;
    const SIZE: usize = 8;
    fn put(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn take(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes.try_into().expect("8 bytes"))
    }
}

impl Element for u8 {
    const DTYPE: DType = DType::U8;
    const SIZE: usize = 1;
    fn put(self, out: &mut Vec<u8>) {
        out.push(self);
    }
    fn take(bytes: &[u8]) -> Self {
        bytes[0]
    }
}

pub fn encode<T: Element>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(9 + 4 * t.rank() + t.len() * T::SIZE);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    out.push(T::DTYPE as u8);
    for &x in t.data() {
        x.put(&mut out);
    }
    out
}

fn format_err(offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        msg: msg.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
        .ok_or_else(|| format_err(at, "truncated header"))
}

/// Shape and dtype tag of an encoded tensor, plus the payload offset.
pub fn decode_header(bytes: &[u8]) -> Result<(Vec<usize>, u8, usize)> {
    if bytes.get(..4) != Some(&MAGIC[..]) {
        return Err(format_err(0, "bad magic, expected STN1"));
    }
    let rank = read_u32(bytes, 4)? as usize;
    if rank == 0 {
        return Err(format_err(4, "rank must be at least 1"));
    }
    let mut shape = Vec::with_capacity(rank);
    for i in 0..rank {
        let at = 8 + 4 * i;
        let e = read_u32(bytes, at)? as usize;
        if e == 0 {
            return Err(format_err(at, format!("extent {i} is zero")));
        }
        shape.push(e);
    }
    let tag_at = 8 + 4 * rank;
    let tag = *bytes
        .get(tag_at)
        .ok_or_else(|| format_err(tag_at, "truncated header"))?;
    Ok((shape, tag, tag_at + 1))
}

pub fn decode<T: Element>(bytes: &[u8]) -> Result<Tensor<T>> {
    let (shape, tag, start) = decode_header(bytes)?;
    if tag != T::DTYPE as u8 {
        return Err(format_err(
            start - 1,
            format!("dtype tag {tag}, expected {}", T::DTYPE as u8),
        ));
    }
    let n: usize = shape.iter().product();
    let need = n * T::SIZE;
    let have = bytes.len() - start;
    if have < need {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: need {need} bytes, found {have}"),
        ));
    }
    if have > need {
        return Err(format_err(start + need, "trailing bytes after payload"));
    }
    let data = bytes[start..].chunks_exact(T::SIZE).map(T::take).collect();
    Tensor::new(&shape, data)
}

pub fn save<T: Element>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(t))?;
    Ok(())
}

pub fn load<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    decode(&fs::read(path)?)
}
