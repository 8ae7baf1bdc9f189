//! Packed Hamming index and retrieval metrics.

use std::collections::BTreeSet;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use crate::checkpoint::{read_u32, u32_len};
use crate::codes::BinaryCode;
use crate::error::{Error, Result};

const CODES_MAGIC: &[u8; 4] = b"DKPB";
const CODES_VERSION: u32 = 1;

/// Differing bits between two codes, counted on packed bytes.
pub fn hamming(a: &BinaryCode, b: &BinaryCode) -> Result<u32> {
    if a.len() != b.len() {
        return Err(Error::shape(
            "hamming",
            format!("code lengths {} and {}", a.len(), b.len()),
        ));
    }
    Ok(packed_hamming(&a.pack(), &b.pack()))
}

fn packed_hamming(a: &[u8], b: &[u8]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

/// Immutable database of packed codes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeIndex {
    bits: usize,
    stride: usize,
    packed: Vec<u8>,
    ids: Vec<usize>,
}

impl CodeIndex {
    pub fn build(codes: &[BinaryCode], ids: &[usize]) -> Result<Self> {
        if codes.len() != ids.len() {
            return Err(Error::shape(
                "CodeIndex::build",
                format!("{} codes, {} ids", codes.len(), ids.len()),
            ));
        }
        let bits = codes.first().map_or(0, BinaryCode::len);
        if codes.iter().any(|c| c.len() != bits) {
            return Err(Error::shape("CodeIndex::build", "mixed code lengths"));
        }
        if ids.iter().collect::<BTreeSet<_>>().len() != ids.len() {
            return Err(Error::Domain("database ids must be unique".into()));
        }
        let stride = BinaryCode::packed_len(bits);
        let mut packed = Vec::with_capacity(stride * codes.len());
        for c in codes {
            packed.extend(c.pack());
        }
        Ok(Self {
            bits,
            stride,
            packed,
            ids: ids.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn code(&self, row: usize) -> Result<BinaryCode> {
        BinaryCode::unpack(&self.packed[row * self.stride..(row + 1) * self.stride], self.bits)
    }

    /// `(id, distance)` for every entry except `exclude`, sorted by distance then id.
    fn ranked(&self, q: &BinaryCode, exclude: Option<usize>) -> Result<Vec<(usize, u32)>> {
        if q.len() != self.bits {
            return Err(Error::shape(
                "query",
                format!("query has {} bits, index {}", q.len(), self.bits),
            ));
        }
        let qp = q.pack();
        let mut out: Vec<(usize, u32)> = self
            .ids
            .iter()
            .enumerate()
            .filter(|(_, &id)| Some(id) != exclude)
            .map(|(r, &id)| {
                let row = &self.packed[r * self.stride..(r + 1) * self.stride];
                (id, packed_hamming(&qp, row))
            })
            .collect();
        out.sort_unstable_by_key(|&(id, d)| (d, id));
        Ok(out)
    }

    /// The `k` nearest entries.
    pub fn query_topk(&self, q: &BinaryCode, k: usize) -> Result<Vec<(usize, u32)>> {
        if k > self.len() {
            return Err(Error::Domain(format!(
                "k = {k} exceeds database size {}",
                self.len()
            )));
        }
        let mut r = self.ranked(q, None)?;
        r.truncate(k);
        Ok(r)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CODES_MAGIC)?;
        w.write_all(&CODES_VERSION.to_le_bytes())?;
        w.write_all(&u32_len(self.len())?.to_le_bytes())?;
        w.write_all(&u32_len(self.bits)?.to_le_bytes())?;
        w.write_all(&self.packed)?;
        Ok(())
    }

    /// Reads a codes file; ids are row positions.
    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CODES_MAGIC {
            return Err(Error::format("codes", "bad magic"));
        }
        let version = read_u32(r)?;
        if version != CODES_VERSION {
            return Err(Error::format("codes", format!("unsupported version {version}")));
        }
        let n = read_u32(r)? as usize;
        let bits = read_u32(r)? as usize;
        let stride = BinaryCode::packed_len(bits);
        let mut packed = vec![0u8; n * stride];
        r.read_exact(&mut packed)?;
        let codes = packed
            .chunks(stride.max(1))
            .take(n)
            .map(|c| BinaryCode::unpack(c, bits))
            .collect::<Result<Vec<_>>>()?;
        Self::build(&codes, &(0..n).collect::<Vec<_>>())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

/// A labelled query. Database entries with the same id are not retrieved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Query {
    pub id: usize,
    pub code: BinaryCode,
    pub label: u32,
}

/// Database labels aligned with index rows.
fn relevant_count(db_labels: &[u32], db_ids: &[usize], q: &Query) -> usize {
    db_labels
        .iter()
        .zip(db_ids)
        .filter(|&(&l, &id)| l == q.label && id != q.id)
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapReport {
    pub map: f64,
    pub evaluated: usize,
    /// Queries with no relevant database item.
    pub skipped: usize,
}

/// `Σ_{j≤k} P(j)·rel(j) / min(R, k)` for one ranked relevance list.
pub fn average_precision(rel: &[bool], total_relevant: usize, k: usize) -> f64 {
    let denom = total_relevant.min(k);
    if denom == 0 {
        return 0.0;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (j, &r) in rel.iter().take(k).enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (j + 1) as f64;
        }
    }
    sum / denom as f64
}

pub fn map_at_k(queries: &[Query], idx: &CodeIndex, db_labels: &[u32], k: usize) -> Result<MapReport> {
    if queries.is_empty() {
        return Err(Error::Domain("MAP needs at least one query".into()));
    }
    if db_labels.len() != idx.len() {
        return Err(Error::shape(
            "map_at_k",
            format!("{} labels for {} codes", db_labels.len(), idx.len()),
        ));
    }
    let label_of: std::collections::HashMap<usize, u32> =
        idx.ids.iter().copied().zip(db_labels.iter().copied()).collect();
    let mut sum = 0.0;
    let mut evaluated = 0;
    let mut skipped = 0;
    for q in queries {
        let total = relevant_count(db_labels, &idx.ids, q);
        if total == 0 {
            skipped += 1;
            continue;
        }
        let ranked = idx.ranked(&q.code, Some(q.id))?;
        let rel: Vec<bool> = ranked
            .iter()
            .take(k)
            .map(|(id, _)| label_of[id] == q.label)
            .collect();
        sum += average_precision(&rel, total, k);
        evaluated += 1;
    }
    if evaluated == 0 {
        log::warn!("no query has a relevant database item; MAP undefined, reported as 0");
    } else if skipped > 0 {
        log::info!("{skipped} queries without relevant items skipped");
    }
    Ok(MapReport {
        map: if evaluated == 0 { 0.0 } else { sum / evaluated as f64 },
        evaluated,
        skipped,
    })
}

/// Averages over queries at one Hamming radius.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrPoint {
    pub radius: u32,
    pub recall: f64,
    /// `None` when no query retrieved anything.
    pub precision: Option<f64>,
}

/// Precision and recall of the ball of radius `r` for `r = 0..=K`. Recall is averaged
/// over queries with at least one relevant item; precision over queries whose ball
/// is non-empty.
pub fn pr_curve(queries: &[Query], idx: &CodeIndex, db_labels: &[u32]) -> Result<Vec<PrPoint>> {
    if db_labels.len() != idx.len() {
        return Err(Error::shape(
            "pr_curve",
            format!("{} labels for {} codes", db_labels.len(), idx.len()),
        ));
    }
    let bits = idx.bits;
    let label_of: std::collections::HashMap<usize, u32> =
        idx.ids.iter().copied().zip(db_labels.iter().copied()).collect();
    // per radius: recall sum, recall count, precision sum, precision count
    let mut acc = vec![(0.0, 0usize, 0.0, 0usize); bits + 1];
    for q in queries {
        let total = relevant_count(db_labels, &idx.ids, q);
        let ranked = idx.ranked(&q.code, Some(q.id))?;
        let mut hist_all = vec![0usize; bits + 1];
        let mut hist_rel = vec![0usize; bits + 1];
        for (id, d) in &ranked {
            hist_all[*d as usize] += 1;
            if label_of[id] == q.label {
                hist_rel[*d as usize] += 1;
            }
        }
        let (mut got, mut good) = (0usize, 0usize);
        for r in 0..=bits {
            got += hist_all[r];
            good += hist_rel[r];
            if total > 0 {
                acc[r].0 += good as f64 / total as f64;
                acc[r].1 += 1;
            }
            if got > 0 {
                acc[r].2 += good as f64 / got as f64;
                acc[r].3 += 1;
            }
        }
    }
    Ok(acc
        .into_iter()
        .enumerate()
        .map(|(r, (rs, rc, ps, pc))| PrPoint {
            radius: r as u32,
            recall: if rc == 0 { 0.0 } else { rs / rc as f64 },
            precision: (pc > 0).then(|| ps / pc as f64),
        })
        .collect())
}

pub fn write_labels(path: &Path, labels: &[u32]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<u32>> {
    let r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(
            t.parse()
                .map_err(|_| Error::format("labels", format!("line {}: {t:?}", n + 1)))?,
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::Rational64;
    use proptest::prelude::*;

    fn code(bits: &[i8]) -> BinaryCode {
        BinaryCode::from_bits(bits.to_vec()).unwrap()
    }

    fn code_strategy(k: usize) -> impl Strategy<Value = BinaryCode> {
        prop::collection::vec(prop::bool::ANY, k)
            .prop_map(|v| code(&v.iter().map(|&b| if b { 1 } else { -1 }).collect::<Vec<_>>()))
    }

    #[test]
    fn hamming_cases() {
        let a = code(&[1, 1, -1, -1, 1, -1, 1, 1]);
        let b = code(&[1, -1, -1, 1, 1, -1, -1, 1]);
        let oracle = a.bits().iter().zip(b.bits()).filter(|(x, y)| x != y).count() as u32;
        assert_eq!(hamming(&a, &b).unwrap(), oracle);
        assert_eq!(oracle, 3);
        assert_eq!(hamming(&a, &a).unwrap(), 0);
        assert_eq!(hamming(&a, &a.negated()).unwrap(), 8);
        assert!(hamming(&a, &code(&[1, 1])).is_err());
    }

    fn hand_db() -> (CodeIndex, Vec<BinaryCode>) {
        let codes = vec![
            code(&[1, 1, 1, 1]),
            code(&[1, 1, 1, -1]),
            code(&[-1, -1, 1, 1]),
            code(&[1, -1, -1, -1]),
            code(&[1, 1, -1, 1]),
        ];
        (CodeIndex::build(&codes, &[10, 11, 12, 13, 14]).unwrap(), codes)
    }

    #[test]
    fn topk_matches_sort_oracle() {
        let (idx, codes) = hand_db();
        let q = code(&[1, 1, 1, 1]);
        let mut oracle: Vec<(usize, u32)> = codes
            .iter()
            .zip(10..)
            .map(|(c, id)| {
                (id, c.bits().iter().zip(q.bits()).filter(|(a, b)| a != b).count() as u32)
            })
            .collect();
        oracle.sort_by_key(|&(id, d)| (d, id));
        assert_eq!(idx.query_topk(&q, 5).unwrap(), oracle);
        assert_eq!(idx.query_topk(&q, 1).unwrap(), vec![(10, 0)]);
        assert!(idx.query_topk(&q, 6).is_err());
    }

    #[test]
    fn index_rejects_duplicates_and_mixed_lengths() {
        let a = code(&[1, -1]);
        assert!(CodeIndex::build(&[a.clone(), a.clone()], &[1, 1]).is_err());
        assert!(CodeIndex::build(&[a, code(&[1])], &[1, 2]).is_err());
    }

    /// AP computed with exact rationals.
    fn ap_oracle(rel: &[bool], total: usize, k: usize) -> Rational64 {
        let mut sum = Rational64::from_integer(0);
        let mut hits = 0i64;
        for (j, &r) in rel.iter().take(k).enumerate() {
            if r {
                hits += 1;
                sum += Rational64::new(hits, j as i64 + 1);
            }
        }
        sum / Rational64::from_integer(total.min(k) as i64)
    }

    #[test]
    fn average_precision_cases() {
        assert_eq!(average_precision(&[true; 5], 9, 5), 1.0);
        assert_eq!(average_precision(&[false; 5], 3, 5), 0.0);
        let rel = [true, false, true, false, false];
        let ap = average_precision(&rel, 2, 5);
        let exact = ap_oracle(&rel, 2, 5);
        assert_eq!(exact, Rational64::new(5, 6));
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn map_skips_queries_without_relevant_items() {
        let (idx, _) = hand_db();
        let labels = [0, 0, 1, 1, 0];
        let qs = vec![
            Query { id: 100, code: code(&[1, 1, 1, 1]), label: 0 },
            Query { id: 101, code: code(&[1, 1, 1, 1]), label: 7 },
        ];
        let r = map_at_k(&qs, &idx, &labels, 5).unwrap();
        assert_eq!((r.evaluated, r.skipped), (1, 1));
        // ranking 10(0), 11(1), 14(1), 12(2), 13(3): relevant at ranks 1, 2, 3
        assert!((r.map - 1.0).abs() < 1e-15);
        assert!(map_at_k(&[], &idx, &labels, 5).is_err());
    }

    #[test]
    fn self_match_is_excluded() {
        let (idx, _) = hand_db();
        let labels = [0, 1, 1, 1, 0];
        let q = Query { id: 10, code: code(&[1, 1, 1, 1]), label: 0 };
        // without id 10 the only relevant item is 14 at rank 2 (after 11)
        let r = map_at_k(&[q], &idx, &labels, 4).unwrap();
        assert!((r.map - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pr_curve_matches_counting_oracle() {
        let codes = vec![
            code(&[1, 1, 1]),
            code(&[1, 1, -1]),
            code(&[-1, -1, 1]),
            code(&[-1, -1, -1]),
        ];
        let idx = CodeIndex::build(&codes, &[0, 1, 2, 3]).unwrap();
        let labels = [0, 1, 0, 1];
        let q = Query { id: 99, code: code(&[1, 1, 1]), label: 0 };
        let curve = pr_curve(std::slice::from_ref(&q), &idx, &labels).unwrap();
        for p in &curve {
            let within: Vec<usize> = (0..4)
                .filter(|&i| hamming(&codes[i], &q.code).unwrap() <= p.radius)
                .collect();
            let good = within.iter().filter(|&&i| labels[i] == 0).count() as f64;
            assert_eq!(p.recall, good / 2.0);
            assert_eq!(p.precision, Some(good / within.len() as f64));
        }
        assert_eq!(curve.last().unwrap().recall, 1.0);

        let q2 = Query { id: 99, code: code(&[1, -1, 1]), label: 0 };
        let c2 = pr_curve(&[q2], &idx, &labels).unwrap();
        assert_eq!(c2[0].recall, 0.0);
        assert_eq!(c2[0].precision, None);
    }

    #[test]
    fn codes_file_round_trip() {
        let (idx, codes) = hand_db();
        let mut buf = Vec::new();
        idx.write_to(&mut buf).unwrap();
        let back = CodeIndex::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), 5);
        for (i, c) in codes.iter().enumerate() {
            assert_eq!(&back.code(i).unwrap(), c);
        }
        buf[0] = b'X';
        assert!(CodeIndex::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn labels_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("labels.txt");
        write_labels(&p, &[3, 0, 12]).unwrap();
        assert_eq!(read_labels(&p).unwrap(), vec![3, 0, 12]);
        std::fs::write(&p, "1\nx\n").unwrap();
        assert!(read_labels(&p).is_err());
    }

    proptest! {
        #[test]
        fn hamming_is_a_metric(a in code_strategy(19), b in code_strategy(19), c in code_strategy(19)) {
            let ab = hamming(&a, &b).unwrap();
            prop_assert_eq!(ab, hamming(&b, &a).unwrap());
            prop_assert_eq!(ab == 0, a == b);
            prop_assert!(hamming(&a, &c).unwrap() <= ab + hamming(&b, &c).unwrap());
        }

        #[test]
        fn map_invariant_under_database_permutation(
            codes in prop::collection::vec(code_strategy(6), 8),
            labels in prop::collection::vec(0u32..3, 8),
            q in code_strategy(6),
            perm in Just((0..8usize).collect::<Vec<_>>()).prop_shuffle(),
        ) {
            let ids: Vec<usize> = (0..8).collect();
            let a = CodeIndex::build(&codes, &ids).unwrap();
            let pc: Vec<BinaryCode> = perm.iter().map(|&i| codes[i].clone()).collect();
            let pl: Vec<u32> = perm.iter().map(|&i| labels[i]).collect();
            let b = CodeIndex::build(&pc, &perm).unwrap();
            let qs = [Query { id: 1000, code: q, label: 0 }];
            let ra = map_at_k(&qs, &a, &labels, 5).unwrap();
            let rb = map_at_k(&qs, &b, &pl, 5).unwrap();
            prop_assert_eq!(ra.map.to_bits(), rb.map.to_bits());
        }

        #[test]
        fn promoting_a_relevant_item_never_lowers_ap(
            rel in prop::collection::vec(prop::bool::ANY, 2..12),
            at in 1usize..11,
            k in 1usize..12,
        ) {
            let at = at.min(rel.len() - 1);
            prop_assume!(rel[at] && !rel[at - 1]);
            let total = rel.iter().filter(|&&r| r).count() + 2;
            let mut up = rel.clone();
            up.swap(at, at - 1);
            prop_assert!(ap_oracle(&up, total, k) >= ap_oracle(&rel, total, k));
            prop_assert!(average_precision(&up, total, k) >= average_precision(&rel, total, k) - 1e-15);
        }
    }
}
