//! Single-block, single-head transformer encoder over frame features.
//!
//! Frames are projected to the model width, optionally replaced by a mask token,
//! offset by learned positional rows, then passed through one pre-norm block:
//! `X + Attn(LN(X))` followed by `X + FFN(LN(X))`.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{gelu, gelu_grad, LayerNorm, LayerNormCache, Linear, Matrix, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncoderConfig {
    pub frames: usize,
    pub input_dim: usize,
    pub model_dim: usize,
    pub ffn_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            frames: 25,
            input_dim: 64,
            model_dim: 256,
            ffn_dim: 512,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.input_dim == 0 || self.model_dim == 0 || self.ffn_dim == 0 {
            return Err(Error::Domain(format!(
                "encoder dimensions must all be >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

static STAMP: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Trainable encoder weights. Any mutable access through [`ParamSet::visit_mut`]
/// invalidates caches produced by earlier forward passes.
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub input_proj: Linear,
    pub pos_embed: Matrix,
    pub ln_attn: LayerNorm,
    pub wq: Matrix,
    pub wk: Matrix,
    pub wv: Matrix,
    pub out_proj: Linear,
    pub ln_ffn: LayerNorm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    stamp: u64,
}

impl PartialEq for EncoderParams {
    fn eq(&self, other: &Self) -> bool {
        self.flat() == other.flat()
    }
}

impl EncoderParams {
    pub fn new(cfg: &EncoderConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        Ok(Self {
            input_proj: Linear::new(cfg.input_dim, d, rng),
            pos_embed: Matrix::fan_in_uniform(cfg.frames, d, d, rng),
            ln_attn: LayerNorm::identity(d),
            wq: Matrix::fan_in_uniform(d, d, d, rng),
            wk: Matrix::fan_in_uniform(d, d, d, rng),
            wv: Matrix::fan_in_uniform(d, d, d, rng),
            out_proj: Linear::new(d, d, rng),
            ln_ffn: LayerNorm::identity(d),
            ffn_in: Linear::new(d, cfg.ffn_dim, rng),
            ffn_out: Linear::new(cfg.ffn_dim, d, rng),
            stamp: next_stamp(),
        })
    }

    /// All weights zero, layer norms identity.
    pub fn zeros(cfg: &EncoderConfig) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.model_dim;
        Ok(Self {
            input_proj: Linear::zeros(cfg.input_dim, d),
            pos_embed: Matrix::zeros(cfg.frames, d),
            ln_attn: LayerNorm::identity(d),
            wq: Matrix::zeros(d, d),
            wk: Matrix::zeros(d, d),
            wv: Matrix::zeros(d, d),
            out_proj: Linear::zeros(d, d),
            ln_ffn: LayerNorm::identity(d),
            ffn_in: Linear::zeros(d, cfg.ffn_dim),
            ffn_out: Linear::zeros(cfg.ffn_dim, d),
            stamp: next_stamp(),
        })
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            frames: self.pos_embed.rows(),
            input_dim: self.input_proj.input_dim(),
            model_dim: self.pos_embed.cols(),
            ffn_dim: self.ffn_in.output_dim(),
        }
    }

    pub fn frames(&self) -> usize {
        self.pos_embed.rows()
    }

    pub fn model_dim(&self) -> usize {
        self.pos_embed.cols()
    }

    pub fn input_dim(&self) -> usize {
        self.input_proj.input_dim()
    }
}

impl ParamSet for EncoderParams {
    fn visit(&self, f: &mut dyn FnMut(&str, &Matrix)) {
        f("input_proj.weight", &self.input_proj.weight);
        f("input_proj.bias", &self.input_proj.bias);
        f("pos_embed", &self.pos_embed);
        f("ln_attn.gain", &self.ln_attn.gain);
        f("ln_attn.bias", &self.ln_attn.bias);
        f("wq", &self.wq);
        f("wk", &self.wk);
        f("wv", &self.wv);
        f("out_proj.weight", &self.out_proj.weight);
        f("out_proj.bias", &self.out_proj.bias);
        f("ln_ffn.gain", &self.ln_ffn.gain);
        f("ln_ffn.bias", &self.ln_ffn.bias);
        f("ffn_in.weight", &self.ffn_in.weight);
        f("ffn_in.bias", &self.ffn_in.bias);
        f("ffn_out.weight", &self.ffn_out.weight);
        f("ffn_out.bias", &self.ffn_out.bias);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix)) {
        self.stamp = next_stamp();
        f("input_proj.weight", &mut self.input_proj.weight);
        f("input_proj.bias", &mut self.input_proj.bias);
        f("pos_embed", &mut self.pos_embed);
        f("ln_attn.gain", &mut self.ln_attn.gain);
        f("ln_attn.bias", &mut self.ln_attn.bias);
        f("wq", &mut self.wq);
        f("wk", &mut self.wk);
        f("wv", &mut self.wv);
        f("out_proj.weight", &mut self.out_proj.weight);
        f("out_proj.bias", &mut self.out_proj.bias);
        f("ln_ffn.gain", &mut self.ln_ffn.gain);
        f("ln_ffn.bias", &mut self.ln_ffn.bias);
        f("ffn_in.weight", &mut self.ffn_in.weight);
        f("ffn_in.bias", &mut self.ffn_in.bias);
        f("ffn_out.weight", &mut self.ffn_out.weight);
        f("ffn_out.bias", &mut self.ffn_out.bias);
    }
}

/// Per-frame encoder outputs and their row average.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualEmbeddings {
    pub per_frame: Matrix,
    pub mean: Matrix,
}

impl VisualEmbeddings {
    fn from_frames(per_frame: Matrix) -> Self {
        let mean = per_frame.mean_rows();
        Self { per_frame, mean }
    }
}

/// Frames to hide behind a shared mask token (visual cloze).
#[derive(Debug, Clone, Copy)]
pub struct FrameMask<'a> {
    pub frames: &'a [usize],
    pub embed: &'a Matrix,
}

/// Intermediates saved by [`encode_forward`] for [`encode_backward`].
#[derive(Debug, Clone)]
pub struct EncoderCache {
    stamp: u64,
    x: Matrix,
    masked: Vec<usize>,
    ln_attn: LayerNormCache,
    h_attn: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: Matrix,
    ctx: Matrix,
    ln_ffn: LayerNormCache,
    h_ffn: Matrix,
    pre_act: Matrix,
    act: Matrix,
}

impl EncoderCache {
    /// Attention weights, `M x M`, each row on the simplex.
    pub fn attention(&self) -> &Matrix {
        &self.attn
    }
}

/// Gradients produced by [`encode_backward`].
#[derive(Debug, Clone)]
pub struct EncoderGrads {
    pub params: EncoderParams,
    pub mask_embed: Option<Matrix>,
    pub input: Matrix,
}

pub fn encode_forward(
    x: &Matrix,
    p: &EncoderParams,
    mask: Option<FrameMask<'_>>,
) -> Result<(VisualEmbeddings, EncoderCache)> {
    let (m, d) = (p.frames(), p.model_dim());
    if x.shape() != (m, p.input_dim()) {
        return Err(Error::shape(
            "encode_forward",
            format!("input {:?}, expected ({m}, {})", x.shape(), p.input_dim()),
        ));
    }

    let mut proj = p.input_proj.forward(x)?;
    let mut masked = Vec::new();
    if let Some(mask) = mask {
        if mask.embed.shape() != (1, d) {
            return Err(Error::shape(
                "encode_forward",
                format!("mask embedding {:?}, expected (1, {d})", mask.embed.shape()),
            ));
        }
        for &f in mask.frames {
            if f >= m {
                return Err(Error::shape(
                    "encode_forward",
                    format!("mask index {f} out of range for {m} frames"),
                ));
            }
            proj.row_mut(f).copy_from_slice(mask.embed.data());
        }
        masked = mask.frames.to_vec();
        masked.sort_unstable();
        masked.dedup();
    }

    let tokens = proj.add(&p.pos_embed)?;

    let (h_attn, ln_attn) = p.ln_attn.forward(&tokens)?;
    let q = h_attn.matmul(&p.wq)?;
    let k = h_attn.matmul(&p.wk)?;
    let v = h_attn.matmul(&p.wv)?;
    let attn = q.matmul_t(&k)?.row_softmax(1.0 / (d as f64).sqrt())?;
    let ctx = attn.matmul(&v)?;
    let mid = tokens.add(&p.out_proj.forward(&ctx)?)?;

    let (h_ffn, ln_ffn) = p.ln_ffn.forward(&mid)?;
    let pre_act = p.ffn_in.forward(&h_ffn)?;
    let act = pre_act.map(gelu);
    let out = mid.add(&p.ffn_out.forward(&act)?)?;

    let cache = EncoderCache {
        stamp: p.stamp,
        x: x.clone(),
        masked,
        ln_attn,
        h_attn,
        q,
        k,
        v,
        attn,
        ctx,
        ln_ffn,
        h_ffn,
        pre_act,
        act,
    };
    Ok((VisualEmbeddings::from_frames(out), cache))
}

pub fn encode_backward(
    grad_out: &Matrix,
    cache: &EncoderCache,
    p: &EncoderParams,
) -> Result<EncoderGrads> {
    if cache.stamp != p.stamp {
        return Err(Error::Cache(
            "parameters changed since the forward pass".into(),
        ));
    }
    let (m, d) = (p.frames(), p.model_dim());
    if grad_out.shape() != (m, d) {
        return Err(Error::Cache(format!(
            "gradient {:?} does not match cached output ({m}, {d})",
            grad_out.shape()
        )));
    }
    let mut g = p.zeroed();

    // Feed-forward sub-block.
    let mut d_mid = grad_out.clone();
    let d_act = p.ffn_out.backward(&cache.act, grad_out, &mut g.ffn_out)?;
    let d_pre = d_act.zip_with(&cache.pre_act, "gelu_backward", |g, u| g * gelu_grad(u))?;
    let d_hffn = p.ffn_in.backward(&cache.h_ffn, &d_pre, &mut g.ffn_in)?;
    d_mid.add_assign(&p.ln_ffn.backward(&cache.ln_ffn, &d_hffn, &mut g.ln_ffn)?)?;

    // Attention sub-block.
    let mut d_tokens = d_mid.clone();
    let d_ctx = p.out_proj.backward(&cache.ctx, &d_mid, &mut g.out_proj)?;
    let d_attn = d_ctx.matmul_t(&cache.v)?;
    let d_v = cache.attn.t_matmul(&d_ctx)?;
    let scale = 1.0 / (d as f64).sqrt();
    let mut d_scores = Matrix::zeros(m, m);
    for r in 0..m {
        let s = cache.attn.row(r);
        let ds = d_attn.row(r);
        let inner: f64 = s.iter().zip(ds).map(|(a, b)| a * b).sum();
        for ((o, &si), &dsi) in d_scores.row_mut(r).iter_mut().zip(s).zip(ds) {
            *o = si * (dsi - inner) * scale;
        }
    }
    let d_q = d_scores.matmul(&cache.k)?;
    let d_k = d_scores.t_matmul(&cache.q)?;
    g.wq = cache.h_attn.t_matmul(&d_q)?;
    g.wk = cache.h_attn.t_matmul(&d_k)?;
    g.wv = cache.h_attn.t_matmul(&d_v)?;
    let mut d_hattn = d_q.matmul_t(&p.wq)?;
    d_hattn.add_assign(&d_k.matmul_t(&p.wk)?)?;
    d_hattn.add_assign(&d_v.matmul_t(&p.wv)?)?;
    d_tokens.add_assign(&p.ln_attn.backward(&cache.ln_attn, &d_hattn, &mut g.ln_attn)?)?;

    // Token assembly.
    g.pos_embed = d_tokens.clone();
    let mut d_proj = d_tokens;
    let mask_embed = if cache.masked.is_empty() {
        None
    } else {
        let mut dm = Matrix::zeros(1, d);
        for &f in &cache.masked {
            for (o, v) in dm.data_mut().iter_mut().zip(d_proj.row_mut(f)) {
                *o += *v;
                *v = 0.0;
            }
        }
        Some(dm)
    };
    let input = p.input_proj.backward(&cache.x, &d_proj, &mut g.input_proj)?;

    Ok(EncoderGrads {
        params: g,
        mask_embed,
        input,
    })
}
