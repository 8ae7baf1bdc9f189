//! Flat `key = value` run configuration.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use super::synth::SynthConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::student::LossWeights;

/// Every knob of an end-to-end run. `Default` carries full-scale settings;
/// [`RunConfig::desk`] shrinks the model and data so a run takes about a minute.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub synth: SynthConfig,
    pub encoder: EncoderConfig,
    pub weights: LossWeights,
    pub teacher_epochs: usize,
    pub student_epochs: usize,
    pub batch_size: usize,
    /// Pairs per student batch; 0 means one per batch member.
    pub pairs_per_batch: usize,
    pub n_centers: usize,
    pub anchors_per_point: usize,
    pub kmeans_iters: usize,
    pub code_bits: Vec<usize>,
    pub map_cutoffs: Vec<usize>,
    pub ablation_bits: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("run"),
            seed: 1,
            synth: SynthConfig::default(),
            encoder: EncoderConfig::default(),
            weights: LossWeights::default(),
            teacher_epochs: 60,
            student_epochs: 48,
            batch_size: 256,
            pairs_per_batch: 0,
            n_centers: 20,
            anchors_per_point: 10,
            kmeans_iters: 100,
            code_bits: vec![16, 32, 64],
            map_cutoffs: vec![5, 20, 60, 100],
            ablation_bits: 16,
        }
    }
}

impl RunConfig {
    /// Reduced model and batch for the synthetic corpus on one core.
    pub fn desk() -> Self {
        let synth = SynthConfig::default();
        Self {
            encoder: EncoderConfig {
                frames: synth.frames,
                input_dim: synth.feature_dim,
                model_dim: 32,
                ffn_dim: 64,
            },
            teacher_epochs: 30,
            batch_size: 16,
            synth,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.encoder.validate()?;
        self.weights.validate()?;
        let positive = [
            ("batch_size", self.batch_size),
            ("n_centers", self.n_centers),
            ("anchors_per_point", self.anchors_per_point),
            ("ablation_bits", self.ablation_bits),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be >= 1")));
            }
        }
        if self.anchors_per_point > self.n_centers {
            return Err(Error::Config(format!(
                "anchors_per_point ({}) exceeds n_centers ({})",
                self.anchors_per_point, self.n_centers
            )));
        }
        if self.code_bits.is_empty() || self.code_bits.contains(&0) {
            return Err(Error::Config("code_bits needs positive entries".into()));
        }
        if self.map_cutoffs.is_empty() || self.map_cutoffs.contains(&0) {
            return Err(Error::Config("map_cutoffs needs positive entries".into()));
        }
        if self.encoder.frames != self.synth.frames || self.encoder.input_dim != self.synth.feature_dim {
            return Err(Error::Config(format!(
                "encoder expects {}x{} videos but the corpus has {}x{}",
                self.encoder.frames, self.encoder.input_dim, self.synth.frames, self.synth.feature_dim
            )));
        }
        if !(self.weights.mask_ratio > 0.0 && self.weights.mask_ratio <= 1.0) {
            return Err(Error::Config("mask_ratio must be in (0, 1]".into()));
        }
        Ok(())
    }

    /// `(key, value)` for every setting, paths first.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(",");
        let w = &self.weights;
        vec![
            ("data_dir", self.data_dir.display().to_string()),
            ("out_dir", self.out_dir.display().to_string()),
            ("seed", self.seed.to_string()),
            ("num_classes", self.synth.num_classes.to_string()),
            ("videos_per_class", self.synth.videos_per_class.to_string()),
            ("frames", self.synth.frames.to_string()),
            ("feature_dim", self.synth.feature_dim.to_string()),
            ("intra_class_noise", self.synth.intra_class_noise.to_string()),
            ("temporal_drift", self.synth.temporal_drift.to_string()),
            ("data_seed", self.synth.seed.to_string()),
            ("train_fraction", self.synth.train_fraction.to_string()),
            ("query_fraction", self.synth.query_fraction.to_string()),
            ("model_dim", self.encoder.model_dim.to_string()),
            ("ffn_dim", self.encoder.ffn_dim.to_string()),
            ("gamma1", w.gamma1.to_string()),
            ("gamma2", w.gamma2.to_string()),
            ("eta", w.eta.to_string()),
            ("beta", w.beta.to_string()),
            ("lambda1", w.lambda1.to_string()),
            ("lambda2", w.lambda2.to_string()),
            (
                "bandwidth",
                w.bandwidth.map_or_else(|| "auto".to_string(), |b| b.to_string()),
            ),
            ("learning_rate", w.learning_rate.to_string()),
            ("mask_ratio", w.mask_ratio.to_string()),
            ("teacher_epochs", self.teacher_epochs.to_string()),
            ("student_epochs", self.student_epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("pairs_per_batch", self.pairs_per_batch.to_string()),
            ("n_centers", self.n_centers.to_string()),
            ("anchors_per_point", self.anchors_per_point.to_string()),
            ("kmeans_iters", self.kmeans_iters.to_string()),
            ("code_bits", list(&self.code_bits)),
            ("map_cutoffs", list(&self.map_cutoffs)),
            ("ablation_bits", self.ablation_bits.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {v:?}")))
        }
        fn list(key: &str, v: &str) -> Result<Vec<usize>> {
            v.split(',').map(|s| num(key, s.trim())).collect()
        }
        let w = &mut self.weights;
        match key {
            "data_dir" => self.data_dir = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "seed" => self.seed = num(key, value)?,
            "num_classes" => self.synth.num_classes = num(key, value)?,
            "videos_per_class" => self.synth.videos_per_class = num(key, value)?,
            "frames" => {
                self.synth.frames = num(key, value)?;
                self.encoder.frames = self.synth.frames;
            }
            "feature_dim" => {
                self.synth.feature_dim = num(key, value)?;
                self.encoder.input_dim = self.synth.feature_dim;
            }
            "intra_class_noise" => self.synth.intra_class_noise = num(key, value)?,
            "temporal_drift" => self.synth.temporal_drift = num(key, value)?,
            "data_seed" => self.synth.seed = num(key, value)?,
            "train_fraction" => self.synth.train_fraction = num(key, value)?,
            "query_fraction" => self.synth.query_fraction = num(key, value)?,
            "model_dim" => self.encoder.model_dim = num(key, value)?,
            "ffn_dim" => self.encoder.ffn_dim = num(key, value)?,
            "gamma1" => w.gamma1 = num(key, value)?,
            "gamma2" => w.gamma2 = num(key, value)?,
            "eta" => w.eta = num(key, value)?,
            "beta" => w.beta = num(key, value)?,
            "lambda1" => w.lambda1 = num(key, value)?,
            "lambda2" => w.lambda2 = num(key, value)?,
            "bandwidth" => {
                w.bandwidth = if value == "auto" {
                    None
                } else {
                    Some(num(key, value)?)
                }
            }
            "learning_rate" => w.learning_rate = num(key, value)?,
            "mask_ratio" => w.mask_ratio = num(key, value)?,
            "teacher_epochs" => self.teacher_epochs = num(key, value)?,
            "student_epochs" => self.student_epochs = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            "pairs_per_batch" => self.pairs_per_batch = num(key, value)?,
            "n_centers" => self.n_centers = num(key, value)?,
            "anchors_per_point" => self.anchors_per_point = num(key, value)?,
            "kmeans_iters" => self.kmeans_iters = num(key, value)?,
            "code_bits" => self.code_bits = list(key, value)?,
            "map_cutoffs" => self.map_cutoffs = list(key, value)?,
            "ablation_bits" => self.ablation_bits = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines on top of `self`. `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        let mut seen = std::collections::BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let k = k.trim();
            if !seen.insert(k.to_string()) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            self.set(k, v.trim())?;
        }
        Ok(())
    }

    /// Desk defaults overridden by the file.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::desk();
        cfg.apply_text(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        self.entries()
            .into_iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    /// SHA-256 over the sorted settings, paths excluded, so relocated runs share a hash.
    pub fn hash(&self) -> String {
        let mut lines: Vec<String> = self
            .entries()
            .into_iter()
            .filter(|(k, _)| !k.ends_with("_dir"))
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        lines.sort();
        hex::encode(Sha256::digest(lines.concat().as_bytes()))
    }

    /// Student stages see the reconstruction-only objective.
    pub fn is_reconstruction_only(&self) -> bool {
        self.weights.gamma1 == 0.0 && self.weights.gamma2 == 0.0
    }
}
