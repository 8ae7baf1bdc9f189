//! Objective and architecture ablations plus reconstruction-stream analysis.

use std::fmt::Write as _;

use super::dataset::Split;
use super::run::{Evaluation, Pipeline, Variant};
use crate::error::Result;
use crate::student::{reconstruction_error, ReconMode};

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub bits: usize,
    pub variants: Vec<(Variant, Evaluation)>,
    /// Full model on the database split.
    pub recon_intact: f64,
    pub recon_remove_code: f64,
    pub recon_remove_latent: f64,
    pub recon_freeze_latent: f64,
}

impl AblationReport {
    pub fn eval(&self, v: Variant) -> Option<&Evaluation> {
        self.variants.iter().find(|(x, _)| *x == v).map(|(_, e)| e)
    }

    /// Relative error increase over the intact reconstruction.
    pub fn relative(&self, err: f64) -> f64 {
        (err - self.recon_intact) / self.recon_intact
    }

    pub fn to_text(&self, config_hash: &str) -> String {
        let mut s = String::new();
        writeln!(s, "dkph ablation").ok();
        writeln!(s, "config_hash = {config_hash}").ok();
        writeln!(s, "bits = {}", self.bits).ok();
        let full = self.eval(Variant::Full).cloned();
        for (v, e) in &self.variants {
            for (k, m) in &e.maps {
                let delta = full
                    .as_ref()
                    .and_then(|f| f.map_at(*k))
                    .map_or(0.0, |f| m - f);
                writeln!(s, "{}.map@{k} = {m:.6} (delta {delta:+.6})", v.tag()).ok();
            }
        }
        let rows = [
            ("intact", self.recon_intact),
            ("remove_code", self.recon_remove_code),
            ("remove_latent", self.recon_remove_latent),
            ("freeze_latent", self.recon_freeze_latent),
        ];
        for (name, err) in rows {
            writeln!(
                s,
                "recon.{name} = {err:.6} ({:+.2}%)",
                100.0 * self.relative(err)
            )
            .ok();
        }
        s
    }
}

/// Trains (or reuses) every variant at the ablation code length and analyses the
/// full model's decoder inputs on held-out videos.
pub fn ablation_suite(p: &mut Pipeline) -> Result<AblationReport> {
    let bits = p.config().ablation_bits;
    let mut variants = Vec::new();
    for v in Variant::ALL {
        variants.push((v, p.evaluate(v, bits)?));
    }
    let student = p.student(Variant::Full, bits)?;
    let ds = p.data()?;
    let held_out = ds.subset(&ds.ids(Split::Database));
    let err = |mode| reconstruction_error(&student, &held_out, mode);
    let report = AblationReport {
        bits,
        recon_intact: err(ReconMode::Intact)?,
        recon_remove_code: err(ReconMode::RemoveCode)?,
        recon_remove_latent: err(ReconMode::RemoveLatent)?,
        recon_freeze_latent: err(ReconMode::FreezeLatent)?,
        variants,
    };
    let hash = p.config_hash().to_string();
    std::fs::write(p.config().out_dir.join("ablation.txt"), report.to_text(&hash))?;
    p.write_timings()?;
    Ok(report)
}
