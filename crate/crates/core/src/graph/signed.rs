use log::warn;
use rand::Rng;

use super::AnchorGraph;
use crate::error::{Error, Result};

/// Per-row Gaussian statistics of adjacency values and the derived cut-offs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianThresholds {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub positive: f64,
    pub negative: f64,
    pub support_count: usize,
}

impl GaussianThresholds {
    pub fn from_values(values: &[f64], lambda1: f64, lambda2: f64) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        Self {
            mean,
            std,
            positive: mean + lambda1 * std,
            negative: mean - lambda2 * std,
            support_count: values.len(),
        }
    }

    /// `+1` if `a >= PT`, `-1` if `NT < a < μ`, otherwise `0`.
    #[inline]
    pub fn label(&self, a: f64) -> i8 {
        if a >= self.positive {
            1
        } else if self.negative < a && a < self.mean {
            -1
        } else {
            0
        }
    }
}

/// Thresholds over the nonzero off-diagonal entries of row `i`.
pub fn row_thresholds(
    row: &[(usize, f64)],
    i: usize,
    lambda1: f64,
    lambda2: f64,
) -> Result<GaussianThresholds> {
    let values: Vec<f64> = row
        .iter()
        .filter(|&&(j, v)| j != i && v != 0.0)
        .map(|&(_, v)| v)
        .collect();
    if values.len() < 2 {
        return Err(Error::IsolatedNode { video: i });
    }
    Ok(GaussianThresholds::from_values(&values, lambda1, lambda2))
}

/// Nonzero labels of row `i`. The self entry and zero entries are never labelled.
pub fn sign_row(row: &[(usize, f64)], i: usize, th: &GaussianThresholds) -> Vec<(usize, i8)> {
    row.iter()
        .filter(|&&(j, v)| j != i && v != 0.0)
        .filter_map(|&(j, v)| match th.label(v) {
            0 => None,
            l => Some((j, l)),
        })
        .collect()
}

/// Provenance stored alongside a signed graph.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphHeader {
    pub n: usize,
    pub n_centers: usize,
    pub p: usize,
    pub bandwidth: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
}

/// Sparse `{-1, 0, +1}` labelling, row-asymmetric: row `i` holds the labels
/// assigned with `i`'s thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedGraph {
    pub header: GraphHeader,
    pub positives: Vec<Vec<usize>>,
    pub negatives: Vec<Vec<usize>>,
}

impl SignedGraph {
    pub fn len(&self) -> usize {
        self.positives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positives.is_empty()
    }

    /// Label of `(i, j)` taken from row `i`.
    pub fn label(&self, i: usize, j: usize) -> i8 {
        if self.positives[i].binary_search(&j).is_ok() {
            1
        } else if self.negatives[i].binary_search(&j).is_ok() {
            -1
        } else {
            0
        }
    }

    pub fn edge_counts(&self) -> (usize, usize) {
        (
            self.positives.iter().map(Vec::len).sum(),
            self.negatives.iter().map(Vec::len).sum(),
        )
    }
}

/// Labels every row of `graph`. Rows with fewer than two nonzero neighbours are
/// left empty and reported as `None` thresholds.
pub fn build_signed_graph(
    graph: &AnchorGraph,
    lambda1: f64,
    lambda2: f64,
    seed: u64,
) -> Result<(SignedGraph, Vec<Option<GaussianThresholds>>)> {
    let n = graph.len();
    let mut positives = vec![Vec::new(); n];
    let mut negatives = vec![Vec::new(); n];
    let mut thresholds = Vec::with_capacity(n);
    for i in 0..n {
        let row = graph.adjacency_row(i)?;
        match row_thresholds(&row, i, lambda1, lambda2) {
            Ok(th) => {
                for (j, l) in sign_row(&row, i, &th) {
                    if l > 0 {
                        positives[i].push(j);
                    } else {
                        negatives[i].push(j);
                    }
                }
                thresholds.push(Some(th));
            }
            Err(Error::IsolatedNode { .. }) => thresholds.push(None),
            Err(e) => return Err(e),
        }
    }
    let header = GraphHeader {
        n,
        n_centers: graph.affinity.n_centers,
        p: graph.affinity.p,
        bandwidth: graph.affinity.bandwidth,
        lambda1,
        lambda2,
        seed,
    };
    Ok((
        SignedGraph {
            header,
            positives,
            negatives,
        },
        thresholds,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairSample {
    pub anchor: usize,
    pub partner: usize,
    pub label: i8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledPairs {
    pub pairs: Vec<PairSample>,
    /// Draws whose coin asked for a label class absent from the batch.
    pub fallbacks: usize,
}

/// Equal-probability positive/negative pair sampling. Anchors come from `batch`;
/// partners are drawn from the anchor's full label list.
pub fn sample_pairs(
    g: &SignedGraph,
    batch: &[usize],
    count: usize,
    rng: &mut impl Rng,
) -> Result<SampledPairs> {
    if count == 0 {
        return Err(Error::Sampling("pair count must be >= 1".into()));
    }
    let with_pos: Vec<usize> = batch
        .iter()
        .copied()
        .filter(|&i| !g.positives[i].is_empty())
        .collect();
    let with_neg: Vec<usize> = batch
        .iter()
        .copied()
        .filter(|&i| !g.negatives[i].is_empty())
        .collect();
    if with_pos.is_empty() && with_neg.is_empty() {
        return Err(Error::Sampling(
            "no labelled pairs for any video in the batch".into(),
        ));
    }
    let mut pairs = Vec::with_capacity(count);
    let mut fallbacks = 0;
    for _ in 0..count {
        let mut positive = rng.random_bool(0.5);
        if positive && with_pos.is_empty() || !positive && with_neg.is_empty() {
            positive = !positive;
            fallbacks += 1;
        }
        let (anchors, label) = if positive {
            (&with_pos, 1)
        } else {
            (&with_neg, -1)
        };
        let anchor = anchors[rng.random_range(0..anchors.len())];
        let list = if positive {
            &g.positives[anchor]
        } else {
            &g.negatives[anchor]
        };
        let partner = list[rng.random_range(0..list.len())];
        pairs.push(PairSample {
            anchor,
            partner,
            label,
        });
    }
    if fallbacks > 0 {
        warn!("pair sampler fell back to the other label class {fallbacks} times out of {count}");
    }
    Ok(SampledPairs { pairs, fallbacks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn brute_label(a: f64, th: &GaussianThresholds) -> i8 {
        if a >= th.positive {
            return 1;
        }
        if th.negative < a && a < th.mean {
            return -1;
        }
        0
    }

    #[test]
    fn constant_row_all_positive() {
        let row: Vec<(usize, f64)> = (1..5).map(|j| (j, 0.2)).collect();
        let th = row_thresholds(&row, 0, 2.0, 1.0).unwrap();
        assert_eq!((th.mean, th.std), (0.2, 0.0));
        assert_eq!((th.positive, th.negative), (0.2, 0.2));
        assert!(sign_row(&row, 0, &th).iter().all(|&(_, l)| l == 1));
    }

    #[test]
    fn two_point_statistics() {
        let row = [(1, 0.1), (2, 0.3), (0, 0.9)];
        let th = row_thresholds(&row, 0, 2.0, 1.0).unwrap();
        assert!((th.mean - 0.2).abs() < 1e-15);
        assert!((th.std - 0.1).abs() < 1e-15);
        assert!((th.positive - 0.4).abs() < 1e-15);
        assert!((th.negative - 0.1).abs() < 1e-15);
        assert_eq!(th.support_count, 2);
    }

    #[test]
    fn isolated_rows() {
        assert!(matches!(
            row_thresholds(&[(0, 1.0), (3, 0.5)], 0, 2.0, 1.0),
            Err(Error::IsolatedNode { video: 0 })
        ));
    }

    #[test]
    fn boundary_semantics() {
        let th = GaussianThresholds {
            mean: 0.2,
            std: 0.1,
            positive: 0.4,
            negative: 0.1,
            support_count: 2,
        };
        assert_eq!(th.label(0.4), 1);
        assert_eq!(th.label(0.2), 0);
        assert_eq!(th.label(0.1), 0);
        assert_eq!(th.label(0.15), -1);
    }

    #[test]
    fn four_entry_example() {
        let vals = [0.5, 0.25, 0.15, 0.05];
        let row: Vec<(usize, f64)> = vals.iter().enumerate().map(|(j, &v)| (j + 1, v)).collect();
        let th = row_thresholds(&row, 0, 2.0, 1.0).unwrap();
        assert!((th.mean - 0.2375).abs() < 1e-15);
        assert!((th.std - 0.027_968_75f64.sqrt()).abs() < 1e-15);
        let got: Vec<i8> = vals.iter().map(|&v| th.label(v)).collect();
        let want: Vec<i8> = vals.iter().map(|&v| brute_label(v, &th)).collect();
        assert_eq!(got, want);
        assert_eq!(got, vec![0, 0, -1, 0]);
        assert_eq!(sign_row(&row, 0, &th), vec![(3, -1)]);
    }

    #[test]
    fn self_entry_never_labelled() {
        let row = [(0, 5.0), (1, 0.1), (2, 0.2)];
        let th = row_thresholds(&row, 0, 0.0, 1.0).unwrap();
        assert!(sign_row(&row, 0, &th).iter().all(|&(j, _)| j != 0));
    }

    fn toy_graph(pos: Vec<Vec<usize>>, neg: Vec<Vec<usize>>) -> SignedGraph {
        SignedGraph {
            header: GraphHeader {
                n: pos.len(),
                n_centers: 2,
                p: 1,
                bandwidth: 1.0,
                lambda1: 2.0,
                lambda2: 1.0,
                seed: 0,
            },
            positives: pos,
            negatives: neg,
        }
    }

    #[test]
    fn only_positives_forces_fallback() {
        let g = toy_graph(vec![vec![1], vec![0], vec![]], vec![vec![], vec![], vec![]]);
        let s = sample_pairs(&g, &[0, 1, 2], 200, &mut seeded_rng(1)).unwrap();
        assert!(s.pairs.iter().all(|p| p.label == 1));
        assert!(s.fallbacks > 50);
        for p in &s.pairs {
            assert_eq!(g.label(p.anchor, p.partner), p.label);
        }
    }

    #[test]
    fn empty_batch_classes_error() {
        let g = toy_graph(vec![vec![1], vec![]], vec![vec![], vec![]]);
        assert!(matches!(
            sample_pairs(&g, &[1], 3, &mut seeded_rng(1)),
            Err(Error::Sampling(_))
        ));
        assert!(sample_pairs(&g, &[0], 0, &mut seeded_rng(1)).is_err());
    }

    #[test]
    fn reproducible_under_seed() {
        let g = toy_graph(
            vec![vec![1, 2], vec![0], vec![0, 3], vec![2]],
            vec![vec![3], vec![2, 3], vec![1], vec![0, 1]],
        );
        let a = sample_pairs(&g, &[0, 1, 2, 3], 40, &mut seeded_rng(9)).unwrap();
        let b = sample_pairs(&g, &[0, 1, 2, 3], 40, &mut seeded_rng(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn balanced_label_frequency() {
        let g = toy_graph(
            vec![vec![1], vec![0], vec![3], vec![2]],
            vec![vec![2], vec![3], vec![0], vec![1]],
        );
        let s = sample_pairs(&g, &[0, 1, 2, 3], 10_000, &mut seeded_rng(10)).unwrap();
        let pos = s.pairs.iter().filter(|p| p.label == 1).count() as f64 / 1e4;
        assert!((pos - 0.5).abs() <= 0.02, "{pos}");
        assert_eq!(s.fallbacks, 0);
    }
}
