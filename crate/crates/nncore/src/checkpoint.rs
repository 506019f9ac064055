//! Versioned little-endian binary checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "NNCKPT\0\0"
//! version    u32      = 1
//! count      u32      number of tensors
//! per tensor:
//!   name_len u32, name utf-8 bytes
//!   ndim     u32, dims u64 * ndim
//!   data     f64 * prod(dims)
//! has_opt    u8       0 or 1
//! if has_opt:
//!   step     u64
//!   m then v for every tensor, in table order, f64 * len
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{NnError, Result};
use crate::optim::AdamState;
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"NNCKPT\0\0";
pub const VERSION: u32 = 1;

pub fn encode(store: &ParamStore, opt: Option<&AdamState>) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + store.num_scalars() * 8 * 3);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, t) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    match opt {
        None => out.push(0),
        Some(st) => {
            out.push(1);
            out.extend_from_slice(&st.step.to_le_bytes());
            for buf in st.m.iter().chain(st.v.iter()) {
                for v in buf {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(NnError::Checkpoint("truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ParamStore, Option<AdamState>)> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(NnError::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(NnError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let nlen = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(nlen)?)
            .map_err(|e| NnError::Checkpoint(e.to_string()))?
            .to_string();
        let ndim = r.u32()? as usize;
        let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = shape.iter().product();
        let data = r.f64s(n)?;
        store.insert(&name, Tensor::new(shape, data)?)?;
    }
    let opt = match r.take(1)?[0] {
        0 => None,
        1 => {
            let step = r.u64()?;
            let lens: Vec<usize> = store.iter().map(|(_, t)| t.len()).collect();
            let m = lens.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
            let v = lens.iter().map(|&n| r.f64s(n)).collect::<Result<Vec<_>>>()?;
            Some(AdamState { step, m, v })
        }
        b => return Err(NnError::Checkpoint(format!("bad optimizer flag {b}"))),
    };
    if r.pos != bytes.len() {
        return Err(NnError::Checkpoint("trailing bytes".into()));
    }
    Ok((store, opt))
}

pub fn save(path: &Path, store: &ParamStore, opt: Option<&AdamState>) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(store, opt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<(ParamStore, Option<AdamState>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    decode(&buf)
}

/// Names and shapes of the tensor table, without materializing the data.
pub fn inspect(bytes: &[u8]) -> Result<Vec<(String, Vec<usize>)>> {
    let (store, _) = decode(bytes)?;
    Ok(store.iter().map(|(n, t)| (n.to_string(), t.shape().to_vec())).collect())
}
