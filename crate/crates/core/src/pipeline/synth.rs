//! Synthetic video-feature corpus: each class owns a static prototype plus a
//! periodic trajectory; videos are time-shifted copies with per-frame noise.
//! Features are divided by their expected standard deviation
//! `sqrt(1 + drift² + noise²)` so every value has unit variance.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::numerics::{seeded_rng, squared_distance, Matrix};

/// Harmonics per class trajectory.
const HARMONICS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub videos_per_class: usize,
    pub frames: usize,
    pub feature_dim: usize,
    pub intra_class_noise: f64,
    pub temporal_drift: f64,
    pub seed: u64,
    /// Fractions of each class sent to train and query; the rest is database.
    pub train_fraction: f64,
    pub query_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_classes: 10,
            videos_per_class: 40,
            frames: 25,
            feature_dim: 64,
            intra_class_noise: 0.3,
            temporal_drift: 3.0,
            seed: 7,
            train_fraction: 0.5,
            query_fraction: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.videos_per_class == 0 || self.frames == 0 || self.feature_dim == 0
        {
            return Err(Error::Config("synthetic counts must be >= 1".into()));
        }
        if !(self.intra_class_noise >= 0.0 && self.temporal_drift >= 0.0)
            || !self.intra_class_noise.is_finite()
            || !self.temporal_drift.is_finite()
        {
            return Err(Error::Config("noise and drift must be finite and >= 0".into()));
        }
        let (t, q) = (self.train_fraction, self.query_fraction);
        if !(t >= 0.0 && q >= 0.0 && t + q <= 1.0) {
            return Err(Error::Config(format!(
                "split fractions {t}/{q} must be non-negative and sum to <= 1"
            )));
        }
        Ok(())
    }
}

/// Class generative parameters.
#[derive(Debug, Clone)]
struct ClassModel {
    prototype: Vec<f64>,
    /// Per harmonic, sine and cosine amplitude vectors.
    harmonics: Vec<(Vec<f64>, Vec<f64>)>,
}

fn gaussian_vec(dim: usize, scale: f64, rng: &mut impl Rng) -> Vec<f64> {
    (0..dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

/// Corpus with its class prototypes.
#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dataset: Dataset,
    pub prototypes: Matrix,
}

/// Values pass through `f32` so the in-memory corpus equals what the feature file holds.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = seeded_rng(cfg.seed);
    let (m, dim) = (cfg.frames, cfg.feature_dim);
    let amp = 1.0 / (HARMONICS as f64).sqrt();
    let unit = 1.0 / (1.0 + cfg.temporal_drift.powi(2) + cfg.intra_class_noise.powi(2)).sqrt();
    let classes: Vec<ClassModel> = (0..cfg.num_classes)
        .map(|_| ClassModel {
            prototype: gaussian_vec(dim, 1.0, &mut rng),
            harmonics: (0..HARMONICS)
                .map(|_| (gaussian_vec(dim, amp, &mut rng), gaussian_vec(dim, amp, &mut rng)))
                .collect(),
        })
        .collect();
    let noise = Normal::new(0.0, cfg.intra_class_noise.max(0.0))
        .map_err(|e| Error::Config(e.to_string()))?;

    let mut videos = Vec::new();
    let mut labels = Vec::new();
    let mut splits = Vec::new();
    for (c, model) in classes.iter().enumerate() {
        let n_train = (cfg.train_fraction * cfg.videos_per_class as f64).round() as usize;
        let n_query = (cfg.query_fraction * cfg.videos_per_class as f64).round() as usize;
        for v in 0..cfg.videos_per_class {
            let shift: f64 = rng.random_range(0.0..TAU);
            let mut x = Matrix::zeros(m, dim);
            for f in 0..m {
                let t = TAU * f as f64 / m as f64 + shift;
                let row = x.row_mut(f);
                for (j, out) in row.iter_mut().enumerate() {
                    let mut drift = 0.0;
                    for (h, (s, co)) in model.harmonics.iter().enumerate() {
                        let w = (h + 1) as f64 * t;
                        drift += s[j] * w.sin() + co[j] * w.cos();
                    }
                    let val = model.prototype[j]
                        + cfg.temporal_drift * drift
                        + noise.sample(&mut rng);
                    *out = (val * unit) as f32 as f64;
                }
            }
            videos.push(x);
            labels.push(c as u32);
            splits.push(if v < n_train {
                Split::Train
            } else if v < n_train + n_query {
                Split::Query
            } else {
                Split::Database
            });
        }
    }
    let prototypes = Matrix::from_rows(
        &classes.iter().map(|c| c.prototype.clone()).collect::<Vec<_>>(),
    )?
    .scale(unit);
    Ok(SynthCorpus {
        dataset: Dataset::new(videos, labels, splits)?,
        prototypes,
    })
}

/// Fraction of videos whose frame-mean feature is nearest to its own class prototype.
pub fn nearest_prototype_accuracy(corpus: &SynthCorpus) -> f64 {
    let ds = &corpus.dataset;
    let correct = ds
        .videos
        .iter()
        .zip(&ds.labels)
        .filter(|(x, &l)| {
            let mean = x.mean_rows();
            let best = (0..corpus.prototypes.rows())
                .min_by(|&a, &b| {
                    squared_distance(mean.data(), corpus.prototypes.row(a))
                        .total_cmp(&squared_distance(mean.data(), corpus.prototypes.row(b)))
                })
                .unwrap_or(0);
            best as u32 == l
        })
        .count();
    correct as f64 / ds.videos.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            num_classes: 3,
            videos_per_class: 10,
            frames: 5,
            feature_dim: 4,
            ..Default::default()
        }
    }

    #[test]
    fn zero_noise_zero_drift_gives_identical_class_members() {
        let c = generate_synthetic(&SynthConfig {
            intra_class_noise: 0.0,
            temporal_drift: 0.0,
            ..small()
        })
        .unwrap();
        let ds = &c.dataset;
        for i in 0..ds.len() {
            for j in 0..ds.len() {
                if ds.labels[i] == ds.labels[j] {
                    assert_eq!(ds.videos[i], ds.videos[j]);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.dataset, b.dataset);
        let c = generate_synthetic(&SynthConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.dataset, c.dataset);
    }

    #[test]
    fn default_corpus_is_learnable() {
        let c = generate_synthetic(&SynthConfig::default()).unwrap();
        assert_eq!(c.dataset.len(), 400);
        assert!(nearest_prototype_accuracy(&c) >= 0.95);
    }

    #[test]
    fn splits_are_stratified() {
        let c = generate_synthetic(&SynthConfig::default()).unwrap();
        let ds = &c.dataset;
        for class in 0..10 {
            let count = |s: Split| {
                (0..ds.len())
                    .filter(|&i| ds.labels[i] == class && ds.splits[i] == s)
                    .count()
            };
            assert_eq!(
                (count(Split::Train), count(Split::Query), count(Split::Database)),
                (20, 4, 16)
            );
        }
    }

    #[test]
    fn drift_cancels_in_frame_mean() {
        let c = generate_synthetic(&SynthConfig {
            intra_class_noise: 0.0,
            frames: 25,
            ..small()
        })
        .unwrap();
        for (x, &l) in c.dataset.videos.iter().zip(&c.dataset.labels) {
            let mean = x.mean_rows();
            for j in 0..4 {
                assert!((mean.get(0, j) - c.prototypes.get(l as usize, j)).abs() < 1e-5);
            }
        }
    }
}
