use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{squared_distance, Matrix};

/// Cluster centres with the nearest-centre assignment of every input point.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub centers: Matrix,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after each assignment step, first entry from the seeding.
    pub inertia_history: Vec<f64>,
}

impl AnchorSet {
    pub fn len(&self) -> usize {
        self.centers.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.rows() == 0
    }
}

/// Index and squared distance of the nearest centre, ties to the lower index.
pub fn nearest_center(point: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = squared_distance(point, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign(points: &Matrix, centers: &Matrix) -> (Vec<usize>, Vec<f64>) {
    (0..points.rows())
        .map(|i| nearest_center(points.row(i), centers))
        .unzip()
}

fn plus_plus_seed(points: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = points.rows();
    let mut centers = Matrix::zeros(k, points.cols());
    let first = rng.random_range(0..n);
    centers.row_mut(0).copy_from_slice(points.row(first));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| squared_distance(points.row(i), centers.row(0)))
        .collect();
    for c in 1..k {
        let pick = match WeightedIndex::new(&d2) {
            Ok(dist) => dist.sample(rng),
            // every point already coincides with a centre
            Err(_) => rng.random_range(0..n),
        };
        centers.row_mut(c).copy_from_slice(points.row(pick));
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(squared_distance(points.row(i), centers.row(c)));
        }
    }
    centers
}

/// k-means++ seeding followed by Lloyd iterations until the assignment stops
/// changing or `max_iters` is reached. Empty clusters are re-seeded to the point
/// farthest from its current centre.
pub fn kmeans(
    points: &Matrix,
    n_centers: usize,
    rng: &mut impl Rng,
    max_iters: usize,
) -> Result<AnchorSet> {
    let n = points.rows();
    if n_centers == 0 || n < n_centers {
        return Err(Error::Domain(format!(
            "k-means needs 1 <= centres <= points, got {n_centers} centres for {n} points"
        )));
    }
    let dim = points.cols();
    let mut centers = plus_plus_seed(points, n_centers, rng);
    let (mut assignments, mut dists) = assign(points, &centers);
    let mut history = vec![dists.iter().sum::<f64>()];

    for _ in 0..max_iters {
        let mut sums = Matrix::zeros(n_centers, dim);
        let mut counts = vec![0usize; n_centers];
        for (i, &c) in assignments.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums.row_mut(c).iter_mut().zip(points.row(i)) {
                *s += v;
            }
        }
        for c in 0..n_centers {
            if counts[c] > 0 {
                let inv = 1.0 / counts[c] as f64;
                for (dst, s) in centers.row_mut(c).iter_mut().zip(sums.row(c)) {
                    *dst = s * inv;
                }
            }
        }
        for c in 0..n_centers {
            if counts[c] == 0 {
                let far = dists
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &d)| {
                        if d > best.1 {
                            (i, d)
                        } else {
                            best
                        }
                    })
                    .0;
                centers.row_mut(c).copy_from_slice(points.row(far));
                dists[far] = 0.0;
            }
        }

        let (next, next_dists) = assign(points, &centers);
        history.push(next_dists.iter().sum());
        let converged = next == assignments;
        assignments = next;
        dists = next_dists;
        if converged {
            break;
        }
    }

    Ok(AnchorSet {
        centers,
        assignments,
        inertia: dists.iter().sum(),
        inertia_history: history,
    })
}
