//! Signed graph file: magic `DKPG`, version `u32`, then `N`, `N_c`, `p` as `u32`,
//! `α`, `λ1`, `λ2` as `f64`, the seed as `u64`, and per video: index, positive
//! count, positive indices, negative count, negative indices (all `u32`).
//! Everything little-endian.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::{GraphHeader, SignedGraph};
use crate::checkpoint::{read_f64, read_u32, read_u64, u32_len};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DKPG";
pub const VERSION: u32 = 1;

pub fn write_graph(g: &SignedGraph, w: &mut impl Write) -> Result<()> {
    let h = &g.header;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for v in [h.n, h.n_centers, h.p] {
        w.write_all(&u32_len(v)?.to_le_bytes())?;
    }
    for v in [h.bandwidth, h.lambda1, h.lambda2] {
        w.write_all(&v.to_le_bytes())?;
    }
    w.write_all(&h.seed.to_le_bytes())?;
    for i in 0..g.len() {
        w.write_all(&u32_len(i)?.to_le_bytes())?;
        for list in [&g.positives[i], &g.negatives[i]] {
            w.write_all(&u32_len(list.len())?.to_le_bytes())?;
            for &j in list {
                w.write_all(&u32_len(j)?.to_le_bytes())?;
            }
        }
    }
    Ok(())
}

pub fn read_graph(r: &mut impl Read) -> Result<SignedGraph> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("graph file", "bad magic"));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::format("graph file", format!("unsupported version {version}")));
    }
    let n = read_u32(r)? as usize;
    let n_centers = read_u32(r)? as usize;
    let p = read_u32(r)? as usize;
    let header = GraphHeader {
        n,
        n_centers,
        p,
        bandwidth: read_f64(r)?,
        lambda1: read_f64(r)?,
        lambda2: read_f64(r)?,
        seed: read_u64(r)?,
    };
    let mut positives = Vec::with_capacity(n);
    let mut negatives = Vec::with_capacity(n);
    for i in 0..n {
        let idx = read_u32(r)? as usize;
        if idx != i {
            return Err(Error::format("graph file", format!("row {i} labelled {idx}")));
        }
        for out in [&mut positives, &mut negatives] {
            let count = read_u32(r)? as usize;
            let mut list = Vec::with_capacity(count);
            for _ in 0..count {
                let j = read_u32(r)? as usize;
                if j >= n {
                    return Err(Error::format("graph file", format!("neighbour {j} >= {n}")));
                }
                list.push(j);
            }
            out.push(list);
        }
    }
    Ok(SignedGraph {
        header,
        positives,
        negatives,
    })
}

pub fn save_graph(g: &SignedGraph, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::new();
    write_graph(g, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<SignedGraph> {
    read_graph(&mut fs::read(path)?.as_slice())
}
