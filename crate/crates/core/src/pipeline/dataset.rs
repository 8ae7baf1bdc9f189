//! Feature, label and split files.

use std::io::{BufRead, BufWriter, Read, Write};
use std::path::Path;

use crate::checkpoint::{read_u32, u32_len};
use crate::error::{Error, Result};
use crate::numerics::Matrix;
use crate::retrieval::{read_labels, write_labels};

const FEATURE_MAGIC: &[u8; 4] = b"DKPH";
const FEATURE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Query,
    Database,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Database => "database",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "query" => Some(Split::Query),
            "database" => Some(Split::Database),
            _ => None,
        }
    }
}

/// Videos with labels and split membership; ids are positions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub videos: Vec<Matrix>,
    pub labels: Vec<u32>,
    pub splits: Vec<Split>,
}

impl Dataset {
    pub fn new(videos: Vec<Matrix>, labels: Vec<u32>, splits: Vec<Split>) -> Result<Self> {
        if videos.len() != labels.len() || videos.len() != splits.len() {
            return Err(Error::shape(
                "Dataset::new",
                format!(
                    "{} videos, {} labels, {} splits",
                    videos.len(),
                    labels.len(),
                    splits.len()
                ),
            ));
        }
        if let Some(first) = videos.first() {
            if videos.iter().any(|v| v.shape() != first.shape()) {
                return Err(Error::shape("Dataset::new", "videos differ in shape"));
            }
        }
        Ok(Self {
            videos,
            labels,
            splits,
        })
    }

    pub fn len(&self) -> usize {
        self.videos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.videos.is_empty()
    }

    pub fn ids(&self, split: Split) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.splits[i] == split).collect()
    }

    pub fn subset(&self, ids: &[usize]) -> Vec<Matrix> {
        ids.iter().map(|&i| self.videos[i].clone()).collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_features(&dir.join("features.bin"), &self.videos)?;
        write_labels(&dir.join("labels.txt"), &self.labels)?;
        write_splits(&dir.join("splits.txt"), &self.splits)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::new(
            read_features(&dir.join("features.bin"))?,
            read_labels(&dir.join("labels.txt"))?,
            read_splits(&dir.join("splits.txt"))?,
        )
    }
}

/// `N·M·D` values stored as little-endian `f32`, row-major.
pub fn write_features(path: &Path, videos: &[Matrix]) -> Result<()> {
    let (m, d) = videos.first().map_or((0, 0), Matrix::shape);
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(FEATURE_MAGIC)?;
    for v in [FEATURE_VERSION, u32_len(videos.len())?, u32_len(m)?, u32_len(d)?] {
        w.write_all(&v.to_le_bytes())?;
    }
    for x in videos {
        if x.shape() != (m, d) {
            return Err(Error::shape("write_features", "videos differ in shape"));
        }
        for &v in x.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Vec<Matrix>> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != FEATURE_MAGIC {
        return Err(Error::format("features", "bad magic"));
    }
    let version = read_u32(&mut r)?;
    if version != FEATURE_VERSION {
        return Err(Error::format("features", format!("unsupported version {version}")));
    }
    let n = read_u32(&mut r)? as usize;
    let m = read_u32(&mut r)? as usize;
    let d = read_u32(&mut r)? as usize;
    let mut buf = vec![0u8; m * d * 4];
    (0..n)
        .map(|_| {
            r.read_exact(&mut buf)?;
            let vals = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                .collect();
            Matrix::from_vec(m, d, vals)
                .map_err(|e| Error::format("features", e.to_string()))
        })
        .collect()
}

/// One split name per line, aligned with video ids.
pub fn write_splits(path: &Path, splits: &[Split]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for s in splits {
        writeln!(w, "{}", s.name())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_splits(path: &Path) -> Result<Vec<Split>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(
            Split::parse(t)
                .ok_or_else(|| Error::format("splits", format!("line {}: {t:?}", n + 1)))?,
        );
    }
    Ok(out)
}
