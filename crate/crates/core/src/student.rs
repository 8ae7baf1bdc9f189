//! Dual-stream student: shared encoder, a concat hash layer producing the video
//! code, a per-frame temporal layer producing latent features, and a decoder fed
//! with `latent + code` for every frame.

use std::collections::BTreeMap;

use log::debug;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::codes::BinaryCode;
use crate::encoder::{
    encode_backward, encode_forward, EncoderCache, EncoderConfig, EncoderParams, VisualEmbeddings,
};
use crate::error::{Error, Result};
use crate::graph::{sample_pairs, PairSample, SignedGraph};
use crate::numerics::{
    finite_diff_check, hard_sign, seeded_rng, squared_distance, Adam, AdamConfig, GradCheckReport,
    Linear, Matrix, ParamSet, SignGradient,
};
use crate::teacher::accumulate;

/// Which streams feed the decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StreamMode {
    /// `x̃ᵐ = D(lᵐ + b)`.
    #[default]
    Dual,
    /// `x̃ᵐ = D(b)`; the temporal layer is unused.
    HashOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudentParams {
    pub encoder: EncoderParams,
    pub hash: Linear,
    pub temporal: Linear,
    pub decoder: Linear,
    pub mode: StreamMode,
}

impl StudentParams {
    pub fn new(cfg: &EncoderConfig, code_bits: usize, rng: &mut impl Rng) -> Result<Self> {
        if code_bits == 0 {
            return Err(Error::Domain("code length must be >= 1".into()));
        }
        let encoder = EncoderParams::new(cfg, rng)?;
        let d = cfg.model_dim;
        Ok(Self {
            hash: Linear::new(cfg.frames * d, code_bits, rng),
            temporal: Linear::new(d, code_bits, rng),
            decoder: Linear::new(code_bits, cfg.input_dim, rng),
            encoder,
            mode: StreamMode::Dual,
        })
    }

    pub fn code_bits(&self) -> usize {
        self.hash.output_dim()
    }
}

impl ParamSet for StudentParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        self.encoder.visit(&mut |n, m| f(&format!("encoder.{n}"), m));
        f("hash.weight", &self.hash.weight);
        f("hash.bias", &self.hash.bias);
        f("temporal.weight", &self.temporal.weight);
        f("temporal.bias", &self.temporal.bias);
        f("decoder.weight", &self.decoder.weight);
        f("decoder.bias", &self.decoder.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.encoder.visit_mut(&mut |n, m| f(&format!("encoder.{n}"), m));
        f("hash.weight", &mut self.hash.weight);
        f("hash.bias", &mut self.hash.bias);
        f("temporal.weight", &mut self.temporal.weight);
        f("temporal.bias", &mut self.temporal.bias);
        f("decoder.weight", &mut self.decoder.weight);
        f("decoder.bias", &mut self.decoder.bias);
    }
}

/// Scalar hyperparameters of the student objective and graph construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub gamma1: f64,
    pub gamma2: f64,
    pub eta: f64,
    pub beta: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    /// Affinity bandwidth; `None` picks it from the data.
    pub bandwidth: Option<f64>,
    pub learning_rate: f64,
    pub mask_ratio: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            gamma1: 0.11,
            gamma2: 0.9,
            eta: 0.1,
            beta: 1.0,
            lambda1: 2.0,
            lambda2: 1.0,
            bandwidth: None,
            learning_rate: 5e-4,
            mask_ratio: 0.15,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.gamma1,
            self.gamma2,
            self.eta,
            self.beta,
            self.lambda1,
            self.lambda2,
            self.learning_rate,
            self.mask_ratio,
            self.bandwidth.unwrap_or(1.0),
        ];
        if vals.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain(format!(
                "loss weights must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Forward state of one video.
#[derive(Debug, Clone)]
pub struct StudentForward {
    pub code: BinaryCode,
    /// `tanh(t̂)`, `1 x K`.
    pub relaxed: Matrix,
    /// Latent features `l`, `M x K`.
    pub latent: Matrix,
    pub reconstruction: Matrix,
    pub embeddings: VisualEmbeddings,
    mix: Matrix,
    flat: Matrix,
    cache: EncoderCache,
}

impl StudentForward {
    pub fn code_row(&self) -> Matrix {
        Matrix::row_vector(&self.code.to_f64())
    }
}

pub fn student_forward(x: &Matrix, p: &StudentParams) -> Result<StudentForward> {
    let (embeddings, cache) = encode_forward(x, &p.encoder, None)?;
    let flat = embeddings.per_frame.flatten();
    let relaxed = p.hash.forward(&flat)?.tanh();
    let code_row = relaxed.map(hard_sign);
    let latent = p.temporal.forward(&embeddings.per_frame)?;
    let mix = match p.mode {
        StreamMode::Dual => latent.add_row_broadcast(&code_row)?,
        StreamMode::HashOnly => Matrix::zeros(latent.rows(), latent.cols()).add_row_broadcast(&code_row)?,
    };
    let reconstruction = p.decoder.forward(&mix)?;
    Ok(StudentForward {
        code: BinaryCode::from_reals(code_row.data()),
        relaxed,
        latent,
        reconstruction,
        embeddings,
        mix,
        flat,
        cache,
    })
}

/// Decoder inputs used by the reconstruction analyses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMode {
    Intact,
    /// Decode from `l` alone.
    RemoveCode,
    /// Decode from `b` alone.
    RemoveLatent,
    /// Replace every `lᵐ` by the video's mean latent vector.
    FreezeLatent,
}

pub fn reconstruct(fwd: &StudentForward, p: &StudentParams, mode: ReconMode) -> Result<Matrix> {
    let code = fwd.code_row();
    let (m, k) = fwd.latent.shape();
    let mix = match mode {
        ReconMode::Intact => return Ok(fwd.reconstruction.clone()),
        ReconMode::RemoveCode => fwd.latent.clone(),
        ReconMode::RemoveLatent => Matrix::zeros(m, k).add_row_broadcast(&code)?,
        ReconMode::FreezeLatent => Matrix::zeros(m, k)
            .add_row_broadcast(&fwd.latent.mean_rows())?
            .add_row_broadcast(&code)?,
    };
    p.decoder.forward(&mix)
}

/// Mean squared error over every scalar of the batch.
pub fn student_recon_loss(x: &[Matrix], recon: &[Matrix]) -> Result<f64> {
    if x.len() != recon.len() {
        return Err(Error::shape("student_recon_loss", "batch length mismatch"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for (a, b) in x.iter().zip(recon) {
        total += a.sub(b)?.sum_squares();
        count += a.data().len();
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// Loss value with gradients keyed by video index.
#[derive(Debug, Clone, PartialEq)]
pub struct PairLoss {
    pub loss: f64,
    pub grads: BTreeMap<usize, Vec<f64>>,
}

fn add_grad(grads: &mut BTreeMap<usize, Vec<f64>>, v: usize, g: impl Iterator<Item = f64>) {
    let k = grads.entry(v).or_default();
    if k.is_empty() {
        k.extend(g);
    } else {
        for (a, b) in k.iter_mut().zip(g) {
            *a += b;
        }
    }
}

/// Pairwise code agreement loss on relaxed codes:
/// mean over pairs of `|a|·(a − ⟨cᵢ, cⱼ⟩/K)²`.
pub fn bsim_loss<'a>(
    pairs: &[PairSample],
    codes: impl Fn(usize) -> &'a [f64],
) -> Result<PairLoss> {
    if pairs.is_empty() {
        return Err(Error::Domain("bsim loss needs at least one pair".into()));
    }
    let n = pairs.len() as f64;
    let mut loss = 0.0;
    let mut grads = BTreeMap::new();
    for pair in pairs {
        let a = pair.label as f64;
        let (ci, cj) = (codes(pair.anchor), codes(pair.partner));
        if ci.len() != cj.len() {
            return Err(Error::shape("bsim_loss", "code lengths differ"));
        }
        let k = ci.len() as f64;
        let sim = ci.iter().zip(cj).map(|(x, y)| x * y).sum::<f64>() / k;
        let resid = a - sim;
        loss += a.abs() * resid * resid / n;
        let coef = -2.0 * a.abs() * resid / (k * n);
        add_grad(&mut grads, pair.anchor, cj.iter().map(|v| coef * v));
        add_grad(&mut grads, pair.partner, ci.iter().map(|v| coef * v));
    }
    Ok(PairLoss { loss, grads })
}

/// Embedding hint loss against frozen teacher centres: mean over pairs of
/// `‖t̄ᵢ − cᵢ‖² + η|a|(1 − a)[‖t̄ᵢ − cᵢ‖² − ‖t̄ᵢ − cⱼ‖² + β]₊`, where `cᵢ` is the
/// nearest teacher centre of video `i`.
pub fn tsim_loss<'a>(
    pairs: &[PairSample],
    means: impl Fn(usize) -> &'a [f64],
    anchor_of: impl Fn(usize) -> usize,
    centers: &Matrix,
    eta: f64,
    beta: f64,
) -> Result<PairLoss> {
    if pairs.is_empty() {
        return Err(Error::Domain("tsim loss needs at least one pair".into()));
    }
    let n = pairs.len() as f64;
    let mut loss = 0.0;
    let mut grads = BTreeMap::new();
    for pair in pairs {
        let a = pair.label as f64;
        let t = means(pair.anchor);
        let ci = centers.row(anchor_of(pair.anchor));
        let cj = centers.row(anchor_of(pair.partner));
        if t.len() != ci.len() {
            return Err(Error::shape("tsim_loss", "embedding and centre widths differ"));
        }
        let pull = squared_distance(t, ci);
        let hinge = pull - squared_distance(t, cj) + beta;
        let w = eta * a.abs() * (1.0 - a);
        loss += (pull + w * hinge.max(0.0)) / n;
        let active = w != 0.0 && hinge > 0.0;
        add_grad(
            &mut grads,
            pair.anchor,
            t.iter().zip(ci).zip(cj).map(|((&tv, &civ), &cjv)| {
                let mut g = 2.0 * (tv - civ);
                if active {
                    g += w * 2.0 * (cjv - civ);
                }
                g / n
            }),
        );
    }
    Ok(PairLoss { loss, grads })
}

/// Frozen teacher knowledge consumed by the student.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherKnowledge {
    pub centers: Matrix,
    /// Nearest centre of every training video's teacher embedding.
    pub nearest: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossBreakdown {
    pub recon: f64,
    pub bsim: f64,
    pub tsim: f64,
    pub total: f64,
}

/// Student objective on one batch and its gradient. `pairs` may reference videos
/// outside `batch`; those are forwarded too but do not enter the reconstruction term.
pub fn student_loss_and_grads(
    p: &StudentParams,
    videos: &[Matrix],
    batch: &[usize],
    pairs: &[PairSample],
    knowledge: &TeacherKnowledge,
    w: &LossWeights,
    sign: SignGradient,
) -> Result<(LossBreakdown, StudentParams)> {
    let use_bsim = w.gamma1 != 0.0 && !pairs.is_empty();
    let use_tsim = w.gamma2 != 0.0 && !pairs.is_empty();

    let mut needed: BTreeMap<usize, StudentForward> = BTreeMap::new();
    let extra = pairs.iter().flat_map(|p| [p.anchor, p.partner]);
    for v in batch.iter().copied().chain(extra) {
        if needed.contains_key(&v) {
            continue;
        }
        let x = videos
            .get(v)
            .ok_or_else(|| Error::Domain(format!("video {v} out of range")))?;
        needed.insert(v, student_forward(x, p)?);
    }

    let xs: Vec<Matrix> = batch.iter().map(|&v| videos[v].clone()).collect();
    let recons: Vec<Matrix> = batch
        .iter()
        .map(|v| needed[v].reconstruction.clone())
        .collect();
    let recon = student_recon_loss(&xs, &recons)?;

    let bsim = if use_bsim {
        Some(bsim_loss(pairs, |v| needed[&v].relaxed.data())?)
    } else {
        None
    };
    let tsim = if use_tsim {
        Some(tsim_loss(
            pairs,
            |v| needed[&v].embeddings.mean.data(),
            |v| knowledge.nearest[v],
            &knowledge.centers,
            w.eta,
            w.beta,
        )?)
    } else {
        None
    };

    let bsim_v = bsim.as_ref().map_or(0.0, |l| l.loss);
    let tsim_v = tsim.as_ref().map_or(0.0, |l| l.loss);
    let mut total = recon;
    if use_bsim {
        total += w.gamma1 * bsim_v;
    }
    if use_tsim {
        total += w.gamma2 * tsim_v;
    }
    let breakdown = LossBreakdown {
        recon,
        bsim: bsim_v,
        tsim: tsim_v,
        total,
    };

    let mut grads = p.zeroed();
    let recon_count: usize = xs.iter().map(|x| x.data().len()).sum();
    let recon_scale = 2.0 / recon_count.max(1) as f64;
    let in_batch: std::collections::BTreeSet<usize> = batch.iter().copied().collect();
    let (m, d) = (p.encoder.frames(), p.encoder.model_dim());

    for (&v, fwd) in &needed {
        let mut d_emb = Matrix::zeros(m, d);
        let mut d_relaxed = Matrix::zeros(1, p.code_bits());
        let mut touched = false;

        if in_batch.contains(&v) {
            let d_recon = fwd.reconstruction.sub(&videos[v])?.scale(recon_scale);
            let d_mix = p.decoder.backward(&fwd.mix, &d_recon, &mut grads.decoder)?;
            if p.mode == StreamMode::Dual {
                d_emb.add_assign(&p.temporal.backward(
                    &fwd.embeddings.per_frame,
                    &d_mix,
                    &mut grads.temporal,
                )?)?;
            }
            if sign.passes() {
                d_relaxed.add_assign(&d_mix.sum_rows())?;
            }
            touched = true;
        }
        if let Some(g) = bsim.as_ref().and_then(|l| l.grads.get(&v)) {
            d_relaxed.add_scaled(&Matrix::row_vector(g), w.gamma1)?;
            touched = true;
        }
        if let Some(g) = tsim.as_ref().and_then(|l| l.grads.get(&v)) {
            let share = w.gamma2 / m as f64;
            for r in 0..m {
                for (o, gi) in d_emb.row_mut(r).iter_mut().zip(g) {
                    *o += share * gi;
                }
            }
            touched = true;
        }
        if !touched {
            continue;
        }

        let d_pre = d_relaxed.zip_with(&fwd.relaxed, "tanh_backward", |g, r| g * (1.0 - r * r))?;
        let d_flat = p.hash.backward(&fwd.flat, &d_pre, &mut grads.hash)?;
        d_emb.add_assign(&d_flat.reshape(m, d)?)?;
        let eg = encode_backward(&d_emb, &fwd.cache, &p.encoder)?;
        accumulate(&mut grads.encoder, &eg.params)?;
    }
    Ok((breakdown, grads))
}

/// One optimiser update on the student objective.
#[allow(clippy::too_many_arguments)]
pub fn student_step(
    p: &mut StudentParams,
    opt: &mut Adam,
    videos: &[Matrix],
    batch: &[usize],
    pairs: &[PairSample],
    knowledge: &TeacherKnowledge,
    w: &LossWeights,
    epoch: usize,
) -> Result<LossBreakdown> {
    let (loss, grads) = student_loss_and_grads(
        p,
        videos,
        batch,
        pairs,
        knowledge,
        w,
        SignGradient::StraightThrough,
    )?;
    if !loss.total.is_finite() || !grads.is_finite() {
        return Err(Error::Training {
            epoch,
            reason: format!("non-finite student loss {loss:?}"),
        });
    }
    opt.step(p, &grads)?;
    Ok(loss)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudentTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Pairs drawn per batch; 0 means one per batch member.
    pub pairs_per_batch: usize,
    pub weights: LossWeights,
    pub seed: u64,
}

impl Default for StudentTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 48,
            batch_size: 256,
            pairs_per_batch: 0,
            weights: LossWeights::default(),
            seed: 0,
        }
    }
}

/// Batch-averaged loss components of one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

impl EpochRecord {
    /// `epoch recon bsim tsim total`, whitespace separated.
    pub fn log_line(&self) -> String {
        format!(
            "{} {:.9e} {:.9e} {:.9e} {:.9e}",
            self.epoch, self.loss.recon, self.loss.bsim, self.loss.tsim, self.loss.total
        )
    }
}

pub fn train_student(
    videos: &[Matrix],
    graph: &SignedGraph,
    knowledge: &TeacherKnowledge,
    mut params: StudentParams,
    cfg: &StudentTrainConfig,
) -> Result<(StudentParams, Vec<EpochRecord>)> {
    cfg.weights.validate()?;
    if videos.is_empty() {
        return Err(Error::Domain("student training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Domain("batch size must be >= 1".into()));
    }
    if graph.len() != videos.len() || knowledge.nearest.len() != videos.len() {
        return Err(Error::shape(
            "train_student",
            format!(
                "{} videos, graph over {}, {} nearest centres",
                videos.len(),
                graph.len(),
                knowledge.nearest.len()
            ),
        ));
    }
    let needs_pairs = cfg.weights.gamma1 != 0.0 || cfg.weights.gamma2 != 0.0;
    let mut rng = seeded_rng(cfg.seed);
    let mut opt = Adam::new(
        AdamConfig {
            learning_rate: cfg.weights.learning_rate,
            ..Default::default()
        },
        &params,
    );
    let mut order: Vec<usize> = (0..videos.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut acc = LossBreakdown::default();
        let mut batches = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let pairs = if needs_pairs {
                let count = if cfg.pairs_per_batch == 0 {
                    batch.len()
                } else {
                    cfg.pairs_per_batch
                };
                sample_pairs(graph, batch, count, &mut rng)?.pairs
            } else {
                Vec::new()
            };
            let l = student_step(
                &mut params,
                &mut opt,
                videos,
                batch,
                &pairs,
                knowledge,
                &cfg.weights,
                epoch,
            )?;
            acc.recon += l.recon;
            acc.bsim += l.bsim;
            acc.tsim += l.tsim;
            acc.total += l.total;
            batches += 1.0;
        }
        let rec = EpochRecord {
            epoch,
            loss: LossBreakdown {
                recon: acc.recon / batches,
                bsim: acc.bsim / batches,
                tsim: acc.tsim / batches,
                total: acc.total / batches,
            },
        };
        debug!("student {}", rec.log_line());
        log.push(rec);
    }
    Ok((params, log))
}

/// Hard codes of every video.
pub fn encode_videos(p: &StudentParams, videos: &[Matrix]) -> Result<Vec<BinaryCode>> {
    videos
        .iter()
        .map(|x| student_forward(x, p).map(|f| f.code))
        .collect()
}

/// Mean squared reconstruction error over `videos` under `mode`.
pub fn reconstruction_error(p: &StudentParams, videos: &[Matrix], mode: ReconMode) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for x in videos {
        let fwd = student_forward(x, p)?;
        total += reconstruct(&fwd, p, mode)?.sub(x)?.sum_squares();
        count += x.data().len();
    }
    Ok(total / count.max(1) as f64)
}

/// Central-difference check of the whole student objective on a six-video toy
/// (4 frames, 6 features, width 8, 8 bits) covering both pair labels and an active
/// hinge. Runs with [`SignGradient::Exact`]: the sign has zero derivative almost
/// everywhere, so the hash layer is reached only through the similarity term.
pub fn toy_gradcheck(seed: u64) -> Result<GradCheckReport> {
    let mut rng = seeded_rng(seed);
    let cfg = EncoderConfig {
        frames: 4,
        input_dim: 6,
        model_dim: 8,
        ffn_dim: 10,
    };
    let p = StudentParams::new(&cfg, 8, &mut rng)?;
    let videos: Vec<Matrix> = (0..6).map(|_| Matrix::fan_in_uniform(4, 6, 1, &mut rng)).collect();
    let knowledge = TeacherKnowledge {
        centers: Matrix::fan_in_uniform(3, 8, 1, &mut rng),
        nearest: (0..6).map(|i| i % 3).collect(),
    };
    let pair = |anchor, partner, label| PairSample {
        anchor,
        partner,
        label,
    };
    let pairs = [
        pair(0, 1, 1),
        pair(1, 4, -1),
        pair(2, 5, -1),
        pair(3, 0, 1),
        pair(5, 2, -1),
    ];
    let w = LossWeights {
        eta: 0.5,
        beta: 3.0,
        ..Default::default()
    };
    let batch: Vec<usize> = (0..6).collect();
    let run = |q: &StudentParams| {
        student_loss_and_grads(q, &videos, &batch, &pairs, &knowledge, &w, SignGradient::Exact)
    };
    let (_, grads) = run(&p)?;
    let mut scratch = p.clone();
    let loss = |vals: &[Matrix]| {
        scratch.load_flat(vals).expect("same shapes");
        run(&scratch).map_or(f64::NAN, |(l, _)| l.total)
    };
    finite_diff_check(loss, &p.flat(), &grads.flat(), 1e-5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn cfg() -> EncoderConfig {
        EncoderConfig {
            frames: 4,
            input_dim: 6,
            model_dim: 8,
            ffn_dim: 10,
        }
    }

    fn toy(seed: u64) -> (StudentParams, Vec<Matrix>) {
        let mut rng = seeded_rng(seed);
        let p = StudentParams::new(&cfg(), 8, &mut rng).unwrap();
        let xs = (0..3).map(|_| Matrix::fan_in_uniform(4, 6, 1, &mut rng)).collect();
        (p, xs)
    }

    fn pair(anchor: usize, partner: usize, label: i8) -> PairSample {
        PairSample {
            anchor,
            partner,
            label,
        }
    }

    #[test]
    fn zero_hash_gives_all_plus_code() {
        let (mut p, xs) = toy(1);
        p.hash = Linear::zeros(32, 8);
        let f = student_forward(&xs[0], &p).unwrap();
        assert!(f.code.bits().iter().all(|&b| b == 1));
        assert_eq!(f.relaxed.max_abs(), 0.0);
    }

    #[test]
    fn zero_temporal_gives_identical_frames() {
        let (mut p, xs) = toy(2);
        p.temporal = Linear::zeros(8, 8);
        let f = student_forward(&xs[1], &p).unwrap();
        for m in 1..4 {
            assert_eq!(f.reconstruction.row(m), f.reconstruction.row(0));
        }
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        let (p, xs) = toy(3);
        let f = student_forward(&xs[0], &p).unwrap();
        let t = &f.embeddings.per_frame;
        let mut code = vec![0.0; 8];
        for k in 0..8 {
            let mut pre = p.hash.bias.get(0, k);
            for m in 0..4 {
                for j in 0..8 {
                    pre += t.get(m, j) * p.hash.weight.get(m * 8 + j, k);
                }
            }
            code[k] = if pre.tanh() >= 0.0 { 1.0 } else { -1.0 };
        }
        assert_eq!(f.code.to_f64(), code);
        for m in 0..4 {
            let l: Vec<f64> = (0..8)
                .map(|k| {
                    p.temporal.bias.get(0, k)
                        + (0..8).map(|j| t.get(m, j) * p.temporal.weight.get(j, k)).sum::<f64>()
                })
                .collect();
            for k in 0..8 {
                assert!((f.latent.get(m, k) - l[k]).abs() < 1e-12);
            }
            for dd in 0..6 {
                let r = p.decoder.bias.get(0, dd)
                    + (0..8)
                        .map(|k| (l[k] + code[k]) * p.decoder.weight.get(k, dd))
                        .sum::<f64>();
                assert!((f.reconstruction.get(m, dd) - r).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn recon_loss_cases() {
        let (_, xs) = toy(4);
        assert_eq!(student_recon_loss(&xs, &xs).unwrap(), 0.0);
        let shifted: Vec<Matrix> = xs.iter().map(|x| x.map(|v| v + 0.3)).collect();
        assert!((student_recon_loss(&xs, &shifted).unwrap() - 0.09).abs() < 1e-12);
        let other: Vec<Matrix> = xs.iter().map(|x| x.map(|v| v * v)).collect();
        let mut s = 0.0;
        for (a, b) in xs.iter().zip(&other) {
            for i in 0..a.data().len() {
                s += (a.data()[i] - b.data()[i]).powi(2);
            }
        }
        assert!((student_recon_loss(&xs, &other).unwrap() - s / 72.0).abs() < 1e-15);
    }

    #[test]
    fn bsim_cases() {
        let c = [1.0, -1.0, 1.0, 1.0];
        let neg: Vec<f64> = c.iter().map(|v| -v).collect();
        let half = [1.0, 1.0, -1.0, 1.0];
        let codes = |v: usize| -> &[f64] {
            match v {
                0 | 1 => &c,
                2 => &neg,
                _ => &half,
            }
        };
        assert_eq!(bsim_loss(&[pair(0, 1, 1)], codes).unwrap().loss, 0.0);
        assert_eq!(bsim_loss(&[pair(0, 2, 1)], codes).unwrap().loss, 4.0);
        assert_eq!(bsim_loss(&[pair(0, 3, -1)], codes).unwrap().loss, 1.0);
        assert!(bsim_loss(&[], codes).is_err());
        // symmetric in (i, j)
        let a = bsim_loss(&[pair(2, 3, -1)], codes).unwrap().loss;
        let b = bsim_loss(&[pair(3, 2, -1)], codes).unwrap().loss;
        assert_eq!(a, b);
    }

    #[test]
    fn tsim_cases() {
        let centers = Matrix::from_rows(&[vec![0.0, 0.0], vec![1.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let anchor_of = |v: usize| v;
        let at_c0 = [0.0, 0.0];
        let means = |_: usize| -> &[f64] { &at_c0 };
        // on its own centre, positive pair
        let l = tsim_loss(&[pair(0, 1, 1)], means, anchor_of, &centers, 0.1, 1.0).unwrap();
        assert_eq!(l.loss, 0.0);
        // negative pair with partner centre at squared distance 2: hinge inactive
        let l = tsim_loss(&[pair(0, 1, -1)], means, anchor_of, &centers, 0.1, 1.0).unwrap();
        assert_eq!(l.loss, 0.0);
        // partner centre at squared distance 0.5: 0.1 * 2 * 0.5
        let l = tsim_loss(&[pair(0, 2, -1)], means, anchor_of, &centers, 0.1, 1.0).unwrap();
        assert!((l.loss - 0.1).abs() < 1e-15);
    }

    fn toy_knowledge(seed: u64, n: usize) -> TeacherKnowledge {
        let mut rng = seeded_rng(seed);
        TeacherKnowledge {
            centers: Matrix::fan_in_uniform(3, 8, 1, &mut rng),
            nearest: (0..n).map(|i| i % 3).collect(),
        }
    }

    fn toy_pairs() -> Vec<PairSample> {
        vec![
            pair(0, 1, 1),
            pair(1, 4, -1),
            pair(2, 5, -1),
            pair(3, 0, 1),
            pair(5, 2, -1),
        ]
    }

    fn six_videos(seed: u64) -> (StudentParams, Vec<Matrix>) {
        let mut rng = seeded_rng(seed);
        let p = StudentParams::new(&cfg(), 8, &mut rng).unwrap();
        let xs = (0..6).map(|_| Matrix::fan_in_uniform(4, 6, 1, &mut rng)).collect();
        (p, xs)
    }

    #[test]
    fn degenerate_weights_equal_recon_only() {
        let (p, xs) = six_videos(5);
        let k = toy_knowledge(6, 6);
        let w0 = LossWeights {
            gamma1: 0.0,
            gamma2: 0.0,
            ..Default::default()
        };
        let (_, g_pairs) =
            student_loss_and_grads(&p, &xs, &[0, 1, 2], &toy_pairs(), &k, &w0, SignGradient::StraightThrough)
                .unwrap();
        let (_, g_none) =
            student_loss_and_grads(&p, &xs, &[0, 1, 2], &[], &k, &w0, SignGradient::StraightThrough)
                .unwrap();
        for (a, b) in g_pairs.flat().iter().zip(g_none.flat()) {
            assert_eq!(a.data(), b.data());
        }
    }

    #[test]
    fn full_loss_exact_gradcheck() {
        let r = toy_gradcheck(7).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn sign_preserving_perturbation_leaves_recon_loss() {
        let (p, xs) = six_videos(9);
        let k = toy_knowledge(10, 6);
        let w0 = LossWeights {
            gamma1: 0.0,
            gamma2: 0.0,
            ..Default::default()
        };
        let mut q = p.clone();
        q.hash.weight = q.hash.weight.scale(2.5);
        q.hash.bias = q.hash.bias.scale(2.5);
        let a = student_loss_and_grads(&p, &xs, &[0, 1, 2], &[], &k, &w0, SignGradient::Exact).unwrap().0;
        let b = student_loss_and_grads(&q, &xs, &[0, 1, 2], &[], &k, &w0, SignGradient::Exact).unwrap().0;
        assert_eq!(a.total.to_bits(), b.total.to_bits());
    }

    #[test]
    fn straight_through_matches_frozen_offset_surrogate() {
        let (p, xs) = six_videos(12);
        let k = toy_knowledge(13, 6);
        let w0 = LossWeights {
            gamma1: 0.0,
            gamma2: 0.0,
            ..Default::default()
        };
        let batch = [0usize, 1, 2];
        let (_, g) =
            student_loss_and_grads(&p, &xs, &batch, &[], &k, &w0, SignGradient::StraightThrough)
                .unwrap();
        // decoder(l + r(θ) + (b₀ − r₀)) has the same value as the real model at θ₀
        // and its plain gradient is what the straight-through pass should produce
        let offsets: Vec<Matrix> = batch
            .iter()
            .map(|&v| {
                let f = student_forward(&xs[v], &p).unwrap();
                f.code_row().sub(&f.relaxed).unwrap()
            })
            .collect();
        let template = p.clone();
        let surrogate = |vals: &[Matrix]| {
            let mut q = template.clone();
            q.load_flat(vals).unwrap();
            let mut total = 0.0;
            for (&v, off) in batch.iter().zip(&offsets) {
                let (e, _) = encode_forward(&xs[v], &q.encoder, None).unwrap();
                let r = q.hash.forward(&e.per_frame.flatten()).unwrap().tanh();
                let code = r.add(off).unwrap();
                let l = q.temporal.forward(&e.per_frame).unwrap();
                let rec = q.decoder.forward(&l.add_row_broadcast(&code).unwrap()).unwrap();
                total += rec.sub(&xs[v]).unwrap().sum_squares();
            }
            total / (3.0 * 24.0)
        };
        let r = finite_diff_check(surrogate, &p.flat(), &g.flat(), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn recon_modes() {
        let (p, xs) = toy(11);
        let f = student_forward(&xs[0], &p).unwrap();
        assert_eq!(reconstruct(&f, &p, ReconMode::Intact).unwrap(), f.reconstruction);
        let only_b = reconstruct(&f, &p, ReconMode::RemoveLatent).unwrap();
        for m in 1..4 {
            assert_eq!(only_b.row(m), only_b.row(0));
        }
        let frozen = reconstruct(&f, &p, ReconMode::FreezeLatent).unwrap();
        // decoder is affine, so the frozen reconstruction is the frame average
        let avg = f.reconstruction.mean_rows();
        for m in 0..4 {
            for j in 0..6 {
                assert!((frozen.get(m, j) - avg.get(0, j)).abs() < 1e-12);
            }
        }
        let mut hp = p.clone();
        hp.mode = StreamMode::HashOnly;
        let fh = student_forward(&xs[0], &hp).unwrap();
        assert_eq!(fh.reconstruction, only_b);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vec_in(n: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(-1.0f64..1.0, n)
        }

        proptest! {
            #[test]
            fn bsim_is_symmetric(a in vec_in(6), b in vec_in(6), label in prop::sample::select(vec![-1i8, 1])) {
                let codes = |v: usize| -> &[f64] { if v == 0 { &a } else { &b } };
                let x = bsim_loss(&[pair(0, 1, label)], codes).unwrap().loss;
                let y = bsim_loss(&[pair(1, 0, label)], codes).unwrap().loss;
                prop_assert_eq!(x, y);
            }

            #[test]
            fn tsim_hinge_is_nonnegative_and_inactive_past_margin(
                t in vec_in(3), c in prop::collection::vec(vec_in(3), 2), beta in 0.0f64..2.0,
            ) {
                let centers = Matrix::from_rows(&c).unwrap();
                let means = |_: usize| -> &[f64] { &t };
                let neg = tsim_loss(&[pair(0, 1, -1)], means, |v| v, &centers, 0.1, beta).unwrap().loss;
                let pos = tsim_loss(&[pair(0, 1, 1)], means, |v| v, &centers, 0.1, beta).unwrap().loss;
                let hinge = neg - pos;
                prop_assert!(hinge >= 0.0);
                if squared_distance(&t, &c[0]) + beta <= squared_distance(&t, &c[1]) {
                    prop_assert_eq!(hinge, 0.0);
                }
            }

            #[test]
            fn codes_are_hard_and_latents_finite(seed in 0u64..1000, scale in 0.0f64..50.0) {
                let mut rng = seeded_rng(seed);
                let p = StudentParams::new(&cfg(), 8, &mut rng).unwrap();
                let x = Matrix::fan_in_uniform(4, 6, 1, &mut rng).scale(scale);
                let f = student_forward(&x, &p).unwrap();
                prop_assert!(f.code.bits().iter().all(|&b| b == 1 || b == -1));
                prop_assert!(f.latent.is_finite());
                prop_assert_eq!(BinaryCode::unpack(&f.code.pack(), 8).unwrap(), f.code);
            }
        }
    }
}
