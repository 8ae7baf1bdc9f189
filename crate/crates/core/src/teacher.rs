//! Teacher model: shared encoder, per-frame hash to 128-bit frame codes, and a
//! per-frame decoder trained on masked-frame reconstruction.

use log::debug;
use rand::seq::index;
use rand::Rng;

use crate::codes::BinaryCode;
use crate::encoder::{
    encode_backward, encode_forward, EncoderCache, EncoderConfig, EncoderParams, FrameMask,
    VisualEmbeddings,
};
use crate::error::{Error, Result};
use crate::numerics::{
    hard_sign, seeded_rng, Adam, AdamConfig, Linear, Matrix, ParamSet, SignGradient,
};

/// Frame code length of the teacher.
pub const TEACHER_CODE_BITS: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherParams {
    pub encoder: EncoderParams,
    pub frame_hash: Linear,
    pub decoder: Linear,
    pub mask_embed: Matrix,
}

impl TeacherParams {
    pub fn new(cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        let encoder = EncoderParams::new(cfg, rng)?;
        let d = cfg.model_dim;
        Ok(Self {
            frame_hash: Linear::new(d, TEACHER_CODE_BITS, rng),
            decoder: Linear::new(TEACHER_CODE_BITS, cfg.input_dim, rng),
            mask_embed: Matrix::fan_in_uniform(1, d, d, rng),
            encoder,
        })
    }

    pub fn code_bits(&self) -> usize {
        self.frame_hash.output_dim()
    }
}

impl ParamSet for TeacherParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.encoder.visit(&mut |n, m| f(&format!("encoder.{n}"), m));
        f("frame_hash.weight", &self.frame_hash.weight);
        f("frame_hash.bias", &self.frame_hash.bias);
        f("decoder.weight", &self.decoder.weight);
        f("decoder.bias", &self.decoder.bias);
        f("mask_embed", &self.mask_embed);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.encoder.visit_mut(&mut |n, m| f(&format!("encoder.{n}"), m));
        f("frame_hash.weight", &mut self.frame_hash.weight);
        f("frame_hash.bias", &mut self.frame_hash.bias);
        f("decoder.weight", &mut self.decoder.weight);
        f("decoder.bias", &mut self.decoder.bias);
        f("mask_embed", &mut self.mask_embed);
    }
}

/// Per-frame binary codes, `M x K_T`, every entry exactly ±1.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameCodes {
    codes: Matrix,
}

impl FrameCodes {
    pub fn from_matrix(codes: Matrix) -> Result<Self> {
        if codes.data().iter().any(|&v| v != 1.0 && v != -1.0) {
            return Err(Error::Domain("frame codes must be ±1".into()));
        }
        Ok(Self { codes })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.codes
    }

    pub fn frame(&self, m: usize) -> BinaryCode {
        BinaryCode::from_reals(self.codes.row(m))
    }
}

/// Forward state kept for [`teacher_backward`].
#[derive(Debug, Clone)]
pub struct TeacherForward {
    pub codes: FrameCodes,
    pub reconstruction: Matrix,
    pub embeddings: VisualEmbeddings,
    relaxed: Matrix,
    encoder_cache: EncoderCache,
}

pub fn teacher_forward(x: &Matrix, p: &TeacherParams, mask: &[usize]) -> Result<TeacherForward> {
    let frame_mask = (!mask.is_empty()).then_some(FrameMask {
        frames: mask,
        embed: &p.mask_embed,
    });
    let (embeddings, encoder_cache) = encode_forward(x, &p.encoder, frame_mask)?;
    let relaxed = p.frame_hash.forward(&embeddings.per_frame)?.tanh();
    let codes = relaxed.map(hard_sign);
    let reconstruction = p.decoder.forward(&codes)?;
    Ok(TeacherForward {
        codes: FrameCodes { codes },
        reconstruction,
        embeddings,
        relaxed,
        encoder_cache,
    })
}

/// Squared error over the masked frames, averaged over `D * |mask|`.
pub fn teacher_recon_loss(x: &Matrix, recon: &Matrix, mask: &[usize]) -> Result<f64> {
    if mask.is_empty() {
        return Err(Error::Domain("teacher loss needs at least one masked frame".into()));
    }
    if x.shape() != recon.shape() {
        return Err(Error::shape(
            "teacher_recon_loss",
            format!("{:?} vs {:?}", x.shape(), recon.shape()),
        ));
    }
    let mut total = 0.0;
    for &m in mask {
        if m >= x.rows() {
            return Err(Error::shape(
                "teacher_recon_loss",
                format!("mask index {m} out of range"),
            ));
        }
        total += x
            .row(m)
            .iter()
            .zip(recon.row(m))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>();
    }
    Ok(total / (x.cols() * mask.len()) as f64)
}

/// Gradients of `scale * teacher_recon_loss` accumulated into `grads`.
pub fn teacher_backward(
    x: &Matrix,
    p: &TeacherParams,
    fwd: &TeacherForward,
    mask: &[usize],
    scale: f64,
    sign: SignGradient,
    grads: &mut TeacherParams,
) -> Result<()> {
    let norm = 2.0 * scale / (x.cols() * mask.len()) as f64;
    let mut d_recon = Matrix::zeros(x.rows(), x.cols());
    for &m in mask {
        for ((o, a), b) in d_recon
            .row_mut(m)
            .iter_mut()
            .zip(fwd.reconstruction.row(m))
            .zip(x.row(m))
        {
            *o = norm * (a - b);
        }
    }
    let d_codes = p.decoder.backward(fwd.codes.matrix(), &d_recon, &mut grads.decoder)?;
    if !sign.passes() {
        return Ok(());
    }
    let d_pre = d_codes.zip_with(&fwd.relaxed, "tanh_backward", |g, r| g * (1.0 - r * r))?;
    let d_emb = p
        .frame_hash
        .backward(&fwd.embeddings.per_frame, &d_pre, &mut grads.frame_hash)?;
    let eg = encode_backward(&d_emb, &fwd.encoder_cache, &p.encoder)?;
    accumulate(&mut grads.encoder, &eg.params)?;
    if let Some(dm) = eg.mask_embed {
        grads.mask_embed.add_assign(&dm)?;
    }
    Ok(())
}

pub(crate) fn accumulate<P: ParamSet>(into: &mut P, from: &P) -> Result<()> {
    let src = from.flat();
    let mut i = 0;
    let mut res = Ok(());
    into.visit_mut(&mut |_, m| {
        if res.is_ok() {
            res = m.add_assign(&src[i]);
        }
        i += 1;
    });
    res
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TieRule {
    /// Exact zeros of the frame average become `+1`.
    #[default]
    PlusOne,
}

/// Video code from frame codes by per-bit averaging then sign; returns the code and
/// the number of bits whose average was exactly zero.
pub fn video_code_from_frames(fc: &FrameCodes, tie_rule: TieRule) -> (BinaryCode, usize) {
    let TieRule::PlusOne = tie_rule;
    let sums = fc.codes.sum_rows();
    let ties = sums.data().iter().filter(|&&s| s == 0.0).count();
    (BinaryCode::from_reals(sums.data()), ties)
}

/// Number of masked frames for `frames` at `ratio`, at least one.
pub fn mask_count(frames: usize, ratio: f64) -> usize {
    ((frames as f64 * ratio).round() as usize).clamp(1, frames)
}

/// Uniformly chosen distinct frames to mask, sorted.
pub fn sample_mask(frames: usize, ratio: f64, rng: &mut impl Rng) -> Vec<usize> {
    let mut v = index::sample(rng, frames, mask_count(frames, ratio)).into_vec();
    v.sort_unstable();
    v
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TeacherTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub mask_ratio: f64,
    pub seed: u64,
}

impl Default for TeacherTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            batch_size: 256,
            learning_rate: 5e-4,
            mask_ratio: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeacherTrainLog {
    /// Masked reconstruction loss on a fixed evaluation mask, index 0 before training.
    pub epoch_losses: Vec<f64>,
}

/// Mean masked reconstruction loss over `videos` under a seeded evaluation mask.
pub fn evaluate_teacher(videos: &[Matrix], p: &TeacherParams, ratio: f64, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut total = 0.0;
    for x in videos {
        let mask = sample_mask(x.rows(), ratio, &mut rng);
        let fwd = teacher_forward(x, p, &mask)?;
        total += teacher_recon_loss(x, &fwd.reconstruction, &mask)?;
    }
    Ok(total / videos.len().max(1) as f64)
}

pub fn train_teacher(
    videos: &[Matrix],
    mut params: TeacherParams,
    cfg: &TeacherTrainConfig,
) -> Result<(TeacherParams, TeacherTrainLog)> {
    if videos.is_empty() {
        return Err(Error::Domain("teacher training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Domain("batch size must be >= 1".into()));
    }
    let eval_seed = cfg.seed ^ 0x5eed_e7a1;
    let initial = evaluate_teacher(videos, &params, cfg.mask_ratio, eval_seed)?;
    let mut log = TeacherTrainLog {
        epoch_losses: vec![initial],
    };
    let mut rng = seeded_rng(cfg.seed);
    let mut opt = Adam::new(
        AdamConfig {
            learning_rate: cfg.learning_rate,
            ..Default::default()
        },
        &params,
    );
    let mut order: Vec<usize> = (0..videos.len()).collect();
    for epoch in 1..=cfg.epochs {
        rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = params.zeroed();
            let mut batch_loss = 0.0;
            for &v in batch {
                let x = &videos[v];
                let mask = sample_mask(x.rows(), cfg.mask_ratio, &mut rng);
                let fwd = teacher_forward(x, &params, &mask)?;
                batch_loss += teacher_recon_loss(x, &fwd.reconstruction, &mask)?;
                let scale = 1.0 / batch.len() as f64;
                teacher_backward(
                    x,
                    &params,
                    &fwd,
                    &mask,
                    scale,
                    SignGradient::StraightThrough,
                    &mut grads,
                )?;
            }
            if !batch_loss.is_finite() || !grads.is_finite() {
                return Err(Error::Training {
                    epoch,
                    reason: "teacher loss is not finite".into(),
                });
            }
            opt.step(&mut params, &grads)?;
        }
        let loss = evaluate_teacher(videos, &params, cfg.mask_ratio, eval_seed)?;
        if !loss.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: "teacher loss is not finite".into(),
            });
        }
        debug!("teacher epoch {epoch}: masked recon {loss:.6}");
        log.epoch_losses.push(loss);
    }
    let last = *log.epoch_losses.last().unwrap_or(&initial);
    if last > initial {
        return Err(Error::Training {
            epoch: cfg.epochs,
            reason: format!("loss rose from {initial} to {last}"),
        });
    }
    Ok((params, log))
}
