//! Flat binary dump of real tensors for inspection and golden files.
//!
//! Each record: `b"MSTN"`, `u8` version, `u8` dtype (0 = f64), `u16` ndim,
//! `ndim` x `u64` dims, then the data in little-endian order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MSTN";
const VERSION: u8 = 1;
const DTYPE_F64: u8 = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "tensor dims {dims:?} imply {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { dims, data })
    }
}

pub fn encode_tensors(tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    for t in tensors {
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(DTYPE_F64);
        out.extend_from_slice(&(t.dims.len() as u16).to_le_bytes());
        for &d in &t.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn take<'a>(buf: &mut &'a [u8], n: usize) -> Result<&'a [u8]> {
    if buf.len() < n {
        return Err(Error::Shape("truncated tensor file".into()));
    }
    let (head, tail) = buf.split_at(n);
    *buf = tail;
    Ok(head)
}

pub fn decode_tensors(mut buf: &[u8]) -> Result<Vec<Tensor>> {
    let mut out = Vec::new();
    while !buf.is_empty() {
        if take(&mut buf, 4)? != MAGIC {
            return Err(Error::Shape("bad tensor record magic".into()));
        }
        let head = take(&mut buf, 4)?;
        if head[0] != VERSION {
            return Err(Error::Shape(format!(
                "unsupported tensor version {}",
                head[0]
            )));
        }
        if head[1] != DTYPE_F64 {
            return Err(Error::Shape(format!(
                "unsupported tensor dtype {}",
                head[1]
            )));
        }
        let ndim = u16::from_le_bytes([head[2], head[3]]) as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let b = take(&mut buf, 8)?;
            dims.push(u64::from_le_bytes(b.try_into().unwrap()) as usize);
        }
        let n: usize = dims.iter().product();
        let bytes = take(
            &mut buf,
            n.checked_mul(8)
                .ok_or_else(|| Error::Shape("tensor size overflow".into()))?,
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        out.push(Tensor { dims, data });
    }
    Ok(out)
}

pub fn write_tensors(path: impl AsRef<Path>, tensors: &[Tensor]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensors(tensors)).map_err(|e| Error::io(path, e))
}

pub fn read_tensors(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tensors(&buf)
}
