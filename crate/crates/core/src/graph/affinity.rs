use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Matrix};

/// Row-sparse point-to-anchor affinity: each point keeps its `p` nearest centres.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinity {
    /// Per point, `(centre, weight)` ordered from nearest to farthest.
    pub rows: Vec<Vec<(usize, f64)>>,
    pub n_centers: usize,
    pub p: usize,
    pub bandwidth: f64,
}

impl SparseAffinity {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// The nearest centre of every point.
    pub fn nearest(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r[0].0).collect()
    }

    pub fn to_dense(&self) -> Matrix {
        let mut z = Matrix::zeros(self.rows.len(), self.n_centers);
        for (i, row) in self.rows.iter().enumerate() {
            for &(k, w) in row {
                z.set(i, k, w);
            }
        }
        z
    }
}

/// `(centre, Euclidean distance)` for the `p` nearest centres, ties to the lower index.
pub fn nearest_centers(point: &[f64], centers: &Matrix, p: usize) -> Vec<(usize, f64)> {
    let mut d: Vec<(usize, f64)> = (0..centers.rows())
        .map(|c| (c, squared_distance(point, centers.row(c)).sqrt()))
        .collect();
    d.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    d.truncate(p);
    d
}

/// Mean distance from each point to its `p`-th nearest centre, or 1.0 if that is zero.
pub fn default_bandwidth(points: &Matrix, centers: &Matrix, p: usize) -> f64 {
    let n = points.rows().max(1) as f64;
    let mean = (0..points.rows())
        .map(|i| nearest_centers(points.row(i), centers, p).last().map_or(0.0, |e| e.1))
        .sum::<f64>()
        / n;
    if mean > 0.0 && mean.is_finite() {
        mean
    } else {
        1.0
    }
}

/// Point-to-anchor weights `exp(-dist/α)` normalised over each point's `p` nearest
/// centres. The exponent uses the plain (unsquared) Euclidean distance.
pub fn build_affinity(
    points: &Matrix,
    centers: &Matrix,
    p: usize,
    bandwidth: f64,
) -> Result<SparseAffinity> {
    if p == 0 || p > centers.rows() {
        return Err(Error::Domain(format!(
            "p must be in 1..={}, got {p}",
            centers.rows()
        )));
    }
    if !(bandwidth > 0.0) {
        return Err(Error::Domain(format!("bandwidth must be > 0, got {bandwidth}")));
    }
    if points.cols() != centers.cols() {
        return Err(Error::shape(
            "build_affinity",
            format!("points {:?}, centres {:?}", points.shape(), centers.shape()),
        ));
    }
    let rows = (0..points.rows())
        .map(|i| {
            let near = nearest_centers(points.row(i), centers, p);
            let d0 = near[0].1;
            let w: Vec<f64> = near.iter().map(|&(_, d)| (-(d - d0) / bandwidth).exp()).collect();
            let z: f64 = w.iter().sum();
            near.iter().zip(w).map(|(&(c, _), w)| (c, w / z)).collect()
        })
        .collect();
    Ok(SparseAffinity {
        rows,
        n_centers: centers.rows(),
        p,
        bandwidth,
    })
}

/// Implicit `A = Z Λ⁻¹ Zᵀ` with `Λ = diag(Zᵀ1)`, answered one row at a time.
#[derive(Debug, Clone)]
pub struct AnchorGraph {
    pub affinity: SparseAffinity,
    /// Column sums of `Z`.
    pub lambda: Vec<f64>,
    postings: Vec<Vec<(usize, f64)>>,
}

impl AnchorGraph {
    pub fn new(affinity: SparseAffinity) -> Self {
        let mut lambda = vec![0.0; affinity.n_centers];
        let mut postings = vec![Vec::new(); affinity.n_centers];
        for (i, row) in affinity.rows.iter().enumerate() {
            for &(k, w) in row {
                lambda[k] += w;
                postings[k].push((i, w));
            }
        }
        Self {
            affinity,
            lambda,
            postings,
        }
    }

    pub fn len(&self) -> usize {
        self.affinity.len()
    }

    pub fn is_empty(&self) -> bool {
        self.affinity.is_empty()
    }

    /// Nonzero entries of row `i` of `A`, sorted by column, diagonal included.
    /// Only points sharing an anchor with `i` are visited.
    pub fn adjacency_row(&self, i: usize) -> Result<Vec<(usize, f64)>> {
        let row = self
            .affinity
            .rows
            .get(i)
            .ok_or_else(|| Error::Domain(format!("video {i} out of range")))?;
        let mut acc: BTreeMap<usize, f64> = BTreeMap::new();
        for &(k, zik) in row {
            let lam = self.lambda[k];
            if !(lam > 0.0) {
                return Err(Error::DegenerateAnchor { center: k });
            }
            for &(j, zjk) in &self.postings[k] {
                *acc.entry(j).or_insert(0.0) += zik * zjk / lam;
            }
        }
        Ok(acc.into_iter().filter(|&(_, v)| v != 0.0).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::kmeans;
    use crate::numerics::seeded_rng;

    /// Dense `Z Λ⁻¹ Zᵀ` by explicit matrix products.
    fn dense_adjacency(z: &Matrix) -> Matrix {
        let lambda = z.sum_rows();
        let mut zl = z.clone();
        for i in 0..zl.rows() {
            for k in 0..zl.cols() {
                let l = lambda.get(0, k);
                zl.set(i, k, if l > 0.0 { zl.get(i, k) / l } else { 0.0 });
            }
        }
        zl.matmul_t(z).unwrap()
    }

    #[test]
    fn single_nearest_gets_full_weight() {
        let centers = Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 0.0]]).unwrap();
        let pts = Matrix::from_rows(&[vec![1.0, 0.0], vec![2.9, 0.0]]).unwrap();
        let z = build_affinity(&pts, &centers, 1, 0.7).unwrap();
        assert_eq!(z.rows[0], vec![(0, 1.0)]);
        assert_eq!(z.rows[1], vec![(1, 1.0)]);
    }

    #[test]
    fn equidistant_pair_splits_evenly() {
        let centers = Matrix::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let pts = Matrix::from_rows(&[vec![0.0, 2.0]]).unwrap();
        for alpha in [0.01, 1.0, 50.0] {
            let z = build_affinity(&pts, &centers, 2, alpha).unwrap();
            assert_eq!(z.rows[0], vec![(0, 0.5), (1, 0.5)]);
        }
    }

    #[test]
    fn matches_dense_formula() {
        let mut rng = seeded_rng(21);
        let pts = Matrix::fan_in_uniform(3, 4, 1, &mut rng);
        let centers = Matrix::fan_in_uniform(2, 4, 1, &mut rng);
        let z = build_affinity(&pts, &centers, 2, 1.0).unwrap().to_dense();
        for i in 0..3 {
            let e: Vec<f64> = (0..2)
                .map(|c| (-squared_distance(pts.row(i), centers.row(c)).sqrt()).exp())
                .collect();
            let s: f64 = e.iter().sum();
            for c in 0..2 {
                assert!((z.get(i, c) - e[c] / s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let c = Matrix::zeros(2, 2);
        assert!(build_affinity(&c, &c, 3, 1.0).is_err());
        assert!(build_affinity(&c, &c, 0, 1.0).is_err());
        assert!(build_affinity(&c, &c, 1, 0.0).is_err());
    }

    #[test]
    fn single_node_has_unit_self_similarity() {
        let c = Matrix::from_rows(&[vec![0.0], vec![1.0], vec![5.0]]).unwrap();
        let z = build_affinity(&Matrix::row_vector(&[0.3]), &c, 3, 1.0).unwrap();
        let g = AnchorGraph::new(z);
        let row = g.adjacency_row(0).unwrap();
        assert_eq!(row.len(), 1);
        assert!((row[0].1 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn disjoint_support_is_zero() {
        let c = Matrix::from_rows(&[vec![0.0], vec![10.0]]).unwrap();
        let pts = Matrix::from_rows(&[vec![0.1], vec![9.9]]).unwrap();
        let g = AnchorGraph::new(build_affinity(&pts, &c, 1, 1.0).unwrap());
        assert_eq!(g.adjacency_row(0).unwrap(), vec![(0, 1.0)]);
    }

    #[test]
    fn zero_mass_anchor_is_reported() {
        let z = SparseAffinity {
            rows: vec![vec![(0, 1.0), (1, 0.0)]],
            n_centers: 2,
            p: 2,
            bandwidth: 1.0,
        };
        let err = AnchorGraph::new(z).adjacency_row(0).unwrap_err();
        assert!(matches!(err, Error::DegenerateAnchor { center: 1 }));
    }

    #[test]
    fn streaming_rows_match_dense_product() {
        let mut rng = seeded_rng(22);
        let pts = Matrix::fan_in_uniform(6, 3, 1, &mut rng);
        let anchors = kmeans(&pts, 3, &mut rng, 30).unwrap();
        let z = build_affinity(&pts, &anchors.centers, 2, 0.5).unwrap();
        let dense = dense_adjacency(&z.to_dense());
        let g = AnchorGraph::new(z);
        for i in 0..6 {
            let mut full = [0.0; 6];
            for (j, v) in g.adjacency_row(i).unwrap() {
                full[j] = v;
            }
            for j in 0..6 {
                assert!((full[j] - dense.get(i, j)).abs() < 1e-12);
            }
            assert!((full.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }
}
