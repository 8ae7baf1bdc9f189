//! Versioned binary blob of named matrices.
//!
//! Layout (little-endian): magic `DKCK`, version `u32`, count `u32`, then per
//! matrix: name length `u32`, UTF-8 name, rows `u32`, cols `u32`, `rows*cols` `f64`s.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Matrix, ParamSet};

pub const MAGIC: &[u8; 4] = b"DKCK";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Checkpoint {
    pub entries: Vec<(String, Matrix)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, m: Matrix) {
        self.entries.push((name.into(), m));
    }

    /// Appends every tensor of `params` under `prefix.`.
    pub fn push_params(&mut self, prefix: &str, params: &impl ParamSet) {
        params.visit(&mut |n, m| self.entries.push((format!("{prefix}.{n}"), m.clone())));
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, m)| m)
            .ok_or_else(|| Error::format("checkpoint", format!("missing tensor `{name}`")))
    }

    /// Loads tensors written by [`Checkpoint::push_params`] back into `params`.
    pub fn load_params(&self, prefix: &str, params: &mut impl ParamSet) -> Result<()> {
        let mut err = None;
        params.visit_mut(&mut |n, m| {
            let key = format!("{prefix}.{n}");
            match self.get(&key) {
                Ok(v) if v.shape() == m.shape() => *m = v.clone(),
                Ok(v) => {
                    err.get_or_insert(Error::format(
                        "checkpoint",
                        format!("`{key}` has shape {:?}, expected {:?}", v.shape(), m.shape()),
                    ));
                }
                Err(e) => {
                    err.get_or_insert(e);
                }
            }
        });
        err.map_or(Ok(()), Err)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&u32_len(self.entries.len())?.to_le_bytes())?;
        for (name, m) in &self.entries {
            w.write_all(&u32_len(name.len())?.to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            w.write_all(&u32_len(m.rows())?.to_le_bytes())?;
            w.write_all(&u32_len(m.cols())?.to_le_bytes())?;
            for v in m.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(Error::format(
                "checkpoint",
                format!("unsupported version {version}"),
            ));
        }
        let count = read_u32(r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = read_u32(r)? as usize;
            let mut name = vec![0u8; len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::format("checkpoint", "tensor name is not UTF-8"))?;
            let rows = read_u32(r)? as usize;
            let cols = read_u32(r)? as usize;
            let mut data = vec![0f64; rows * cols];
            let mut buf = [0u8; 8];
            for v in &mut data {
                r.read_exact(&mut buf)?;
                *v = f64::from_le_bytes(buf);
            }
            entries.push((name, Matrix::from_vec(rows, cols, data)?));
        }
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}

pub(crate) fn u32_len(n: usize) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::Domain(format!("{n} does not fit in u32")))
}

pub(crate) fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64(r: &mut impl Read) -> Result<f64> {
    Ok(f64::from_bits(read_u64(r)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let mut c = Checkpoint::new();
        c.push("ab", Matrix::row_vector(&[1.5]));
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        let mut expect = b"DKCK".to_vec();
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(2u32.to_le_bytes());
        expect.extend(b"ab");
        expect.extend(1u32.to_le_bytes());
        expect.extend(1u32.to_le_bytes());
        expect.extend(1.5f64.to_le_bytes());
        assert_eq!(buf, expect);
        assert_eq!(Checkpoint::read_from(&mut buf.as_slice()).unwrap(), c);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(Checkpoint::read_from(&mut &b"XXXX\x01\0\0\0\0\0\0\0"[..]).is_err());
        let mut c = Checkpoint::new();
        c.push("w", Matrix::zeros(2, 2));
        let mut buf = Vec::new();
        c.write_to(&mut buf).unwrap();
        buf.truncate(buf.len() - 3);
        assert!(Checkpoint::read_from(&mut buf.as_slice()).is_err());
    }
}
