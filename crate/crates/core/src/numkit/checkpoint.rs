//! Binary checkpoint format (all integers little-endian):
//!
//! ```text
//! magic      8 bytes   "KMARLCK\0"
//! version    u32       currently 1
//! n_meta     u32
//!   key      u32 length + UTF-8 bytes
//!   value    u32 length + UTF-8 bytes
//! n_params   u32
//!   name     u32 length + UTF-8 bytes
//!   rows     u32
//!   cols     u32
//!   values   rows*cols f64, row-major
//! ```
//!
//! Writing the same store twice produces identical bytes, and reloading
//! restores every value bit-for-bit.

use std::io::{Read, Write};

use crate::error::{Error, Result};

use super::{Matrix, ParamStore, Scalar};

pub const MAGIC: &[u8; 8] = b"KMARLCK\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Vec<(String, String)>,
    pub params: Vec<(String, Matrix<f64>)>,
}

impl Checkpoint {
    pub fn from_store<S: Scalar>(meta: Vec<(String, String)>, store: &ParamStore<S>) -> Self {
        let params = store
            .iter()
            .map(|p| {
                let (r, c) = p.value.shape();
                let data = p.value.data().iter().map(|v| v.to_f64_lossy()).collect();
                (p.name.clone(), Matrix::new(r, c, data).expect("shape preserved"))
            })
            .collect();
        Self { meta, params }
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn require_meta(&self, key: &str) -> Result<&str> {
        self.meta(key)
            .ok_or_else(|| Error::Checkpoint(format!("missing header field `{key}`")))
    }

    /// Overwrites values in `store` by name; every store parameter must be present with the same shape.
    pub fn load_into<S: Scalar>(&self, store: &mut ParamStore<S>) -> Result<()> {
        for p in store.iter_mut() {
            let (_, m) = self
                .params
                .iter()
                .find(|(n, _)| *n == p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if m.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {:?}, expected {:?}",
                    p.name,
                    m.shape(),
                    p.value.shape()
                )));
            }
            for (dst, &src) in p.value.data_mut().iter_mut().zip(m.data()) {
                *dst = S::of(src);
            }
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        write_u32(w, self.meta.len())?;
        for (k, v) in &self.meta {
            write_str(w, k)?;
            write_str(w, v)?;
        }
        write_u32(w, self.params.len())?;
        for (name, m) in &self.params {
            write_str(w, name)?;
            write_u32(w, m.rows())?;
            write_u32(w, m.cols())?;
            for v in m.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_meta = read_u32(r)?;
        let mut meta = Vec::with_capacity(n_meta as usize);
        for _ in 0..n_meta {
            meta.push((read_str(r)?, read_str(r)?));
        }
        let n_params = read_u32(r)?;
        let mut params = Vec::with_capacity(n_params as usize);
        for _ in 0..n_params {
            let name = read_str(r)?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let mut data = Vec::with_capacity(rows * cols);
            let mut buf = [0u8; 8];
            for _ in 0..rows * cols {
                r.read_exact(&mut buf)?;
                data.push(f64::from_le_bytes(buf));
            }
            params.push((name, Matrix::new(rows, cols, data)?));
        }
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
        Self::read_from(&mut f)
    }
}

fn write_u32(w: &mut impl Write, n: usize) -> Result<()> {
    let n = u32::try_from(n).map_err(|_| Error::Checkpoint(format!("length {n} exceeds u32")))?;
    w.write_all(&n.to_le_bytes())?;
    Ok(())
}

fn write_str(w: &mut impl Write, s: &str) -> Result<()> {
    write_u32(w, s.len())?;
    w.write_all(s.as_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_str(r: &mut impl Read) -> Result<String> {
    let n = read_u32(r)? as usize;
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Checkpoint(e.to_string()))
}
