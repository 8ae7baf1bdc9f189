//! Resumable stage runner: teacher warm-up, graph, student, codes, evaluation.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::dataset::{Dataset, Split};
use super::synth::generate_synthetic;
use crate::checkpoint::Checkpoint;
use crate::codes::BinaryCode;
use crate::error::{Error, Result};
use crate::graph::io::{load_graph, save_graph};
use crate::graph::{build_affinity, build_signed_graph, default_bandwidth, kmeans, AnchorGraph, SignedGraph};
use crate::numerics::{seeded_rng, Matrix};
use crate::retrieval::{map_at_k, pr_curve, CodeIndex, PrPoint, Query};
use crate::student::{
    encode_videos, train_student, LossWeights, StreamMode, StudentParams, StudentTrainConfig,
    TeacherKnowledge,
};
use crate::teacher::{teacher_forward, train_teacher, TeacherParams, TeacherTrainConfig};

// Offsets from the master seed, one per random consumer.
const TEACHER_INIT: u64 = 11;
const TEACHER_TRAIN: u64 = 12;
const KMEANS: u64 = 13;
const STUDENT_INIT: u64 = 14;
const STUDENT_TRAIN: u64 = 15;

/// Student objective variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Both similarity weights zeroed.
    ReconOnly,
    NoBsim,
    NoTsim,
    /// Decoder sees only the code.
    HashOnly,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Full,
        Variant::ReconOnly,
        Variant::NoBsim,
        Variant::NoTsim,
        Variant::HashOnly,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::ReconOnly => "recon_only",
            Variant::NoBsim => "no_bsim",
            Variant::NoTsim => "no_tsim",
            Variant::HashOnly => "hash_only",
        }
    }

    pub fn weights(self, base: &LossWeights) -> LossWeights {
        let mut w = *base;
        match self {
            Variant::Full | Variant::HashOnly => {}
            Variant::ReconOnly => {
                w.gamma1 = 0.0;
                w.gamma2 = 0.0;
            }
            Variant::NoBsim => w.gamma1 = 0.0,
            Variant::NoTsim => w.gamma2 = 0.0,
        }
        w
    }

    pub fn mode(self) -> StreamMode {
        if self == Variant::HashOnly {
            StreamMode::HashOnly
        } else {
            StreamMode::Dual
        }
    }
}

/// Teacher-side artefacts the student consumes.
#[derive(Debug, Clone)]
pub struct GraphArtifacts {
    pub graph: SignedGraph,
    pub knowledge: TeacherKnowledge,
}

pub struct Pipeline {
    cfg: RunConfig,
    hash: String,
    dataset: Option<Dataset>,
    /// Wall time of every stage executed in this process.
    timings: Vec<(String, f64)>,
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(std::fs::read(path)?)))
}

impl Pipeline {
    pub fn new(cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(cfg.out_dir.join("stages"))?;
        std::fs::write(cfg.out_dir.join("config.txt"), cfg.to_text())?;
        Ok(Self {
            hash: cfg.hash(),
            cfg,
            dataset: None,
            timings: Vec::new(),
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn timings(&self) -> &[(String, f64)] {
        &self.timings
    }

    fn out(&self, file: &str) -> PathBuf {
        self.cfg.out_dir.join(file)
    }

    fn marker(&self, key: &str) -> PathBuf {
        self.cfg.out_dir.join("stages").join(format!("{key}.done"))
    }

    fn marker_text(&self, artifacts: &[PathBuf]) -> Result<String> {
        let mut s = format!("config_hash = {}\n", self.hash);
        for a in artifacts {
            let name = a.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            writeln!(s, "{name} {}", sha256_file(a)?).ok();
        }
        Ok(s)
    }

    fn is_done(&self, key: &str, artifacts: &[PathBuf]) -> bool {
        let Ok(existing) = std::fs::read_to_string(self.marker(key)) else {
            return false;
        };
        matches!(self.marker_text(artifacts), Ok(expected) if expected == existing)
    }

    /// Runs `body` unless a marker with this config hash and matching artefact
    /// digests exists. Failures are wrapped with the stage name.
    fn stage(
        &mut self,
        stage: &'static str,
        key: &str,
        artifacts: &[PathBuf],
        body: impl FnOnce(&mut Self) -> Result<()>,
    ) -> Result<()> {
        if self.is_done(key, artifacts) {
            info!("stage {key}: up to date, skipped");
            return Ok(());
        }
        let _ = std::fs::remove_file(self.marker(key));
        let t0 = Instant::now();
        body(self).map_err(|e| Error::Stage {
            stage,
            source: Box::new(e),
        })?;
        let secs = t0.elapsed().as_secs_f64();
        std::fs::write(self.marker(key), self.marker_text(artifacts)?)?;
        info!("stage {key}: done in {secs:.2}s");
        self.timings.push((key.to_string(), secs));
        Ok(())
    }

    /// Generates the synthetic corpus when the data directory has none, then loads it.
    pub fn data(&mut self) -> Result<&Dataset> {
        if self.dataset.is_none() {
            let dir = self.cfg.data_dir.clone();
            if !dir.join("features.bin").exists() {
                let t0 = Instant::now();
                let corpus = generate_synthetic(&self.cfg.synth).map_err(|e| Error::Stage {
                    stage: "data",
                    source: Box::new(e),
                })?;
                corpus.dataset.save(&dir)?;
                self.timings.push(("data".into(), t0.elapsed().as_secs_f64()));
            }
            let ds = Dataset::load(&dir).map_err(|e| Error::Stage {
                stage: "data",
                source: Box::new(e),
            })?;
            if ds.videos.first().map(Matrix::shape)
                != Some((self.cfg.encoder.frames, self.cfg.encoder.input_dim))
            {
                return Err(Error::Stage {
                    stage: "data",
                    source: Box::new(Error::Config(format!(
                        "dataset in {} does not match the encoder shape",
                        dir.display()
                    ))),
                });
            }
            self.dataset = Some(ds);
        }
        Ok(self.dataset.as_ref().expect("dataset loaded above"))
    }

    fn train_videos(&mut self) -> Result<Vec<Matrix>> {
        let ds = self.data()?;
        Ok(ds.subset(&ds.ids(Split::Train)))
    }

    fn teacher_template(&self) -> Result<TeacherParams> {
        TeacherParams::new(&self.cfg.encoder, &mut seeded_rng(self.cfg.seed + TEACHER_INIT))
    }

    pub fn teacher(&mut self) -> Result<TeacherParams> {
        let arts = [self.out("teacher.ckpt"), self.out("teacher_log.txt")];
        self.stage("teacher", "teacher", &arts, |p| {
            let videos = p.train_videos()?;
            let tcfg = TeacherTrainConfig {
                epochs: p.cfg.teacher_epochs,
                batch_size: p.cfg.batch_size,
                learning_rate: p.cfg.weights.learning_rate,
                mask_ratio: p.cfg.weights.mask_ratio,
                seed: p.cfg.seed + TEACHER_TRAIN,
            };
            let (params, log) = train_teacher(&videos, p.teacher_template()?, &tcfg)?;
            let mut ck = Checkpoint::new();
            ck.push_params("teacher", &params);
            ck.save(p.out("teacher.ckpt"))?;
            let text: String = log
                .epoch_losses
                .iter()
                .enumerate()
                .map(|(e, l)| format!("{e} {l:.9e}\n"))
                .collect();
            std::fs::write(p.out("teacher_log.txt"), text)?;
            Ok(())
        })?;
        let mut params = self.teacher_template()?;
        Checkpoint::load(self.out("teacher.ckpt"))?.load_params("teacher", &mut params)?;
        Ok(params)
    }

    pub fn graph(&mut self) -> Result<GraphArtifacts> {
        let arts = [
            self.out("teacher_embeddings.ckpt"),
            self.out("anchors.ckpt"),
            self.out("graph.bin"),
        ];
        let teacher = self.teacher()?;
        self.stage("graph", "graph", &arts, |p| {
            let videos = p.train_videos()?;
            let rows = videos
                .iter()
                .map(|x| Ok(teacher_forward(x, &teacher, &[])?.embeddings.mean.into_data()))
                .collect::<Result<Vec<_>>>()?;
            let points = Matrix::from_rows(&rows)?;
            let mut ck = Checkpoint::new();
            ck.push("embeddings", points.clone());
            ck.save(p.out("teacher_embeddings.ckpt"))?;

            let c = &p.cfg;
            let anchors = kmeans(&points, c.n_centers, &mut seeded_rng(c.seed + KMEANS), c.kmeans_iters)?;
            let bw = match c.weights.bandwidth {
                Some(b) => b,
                None => default_bandwidth(&points, &anchors.centers, c.anchors_per_point),
            };
            let z = build_affinity(&points, &anchors.centers, c.anchors_per_point, bw)?;
            let nearest: Vec<f64> = z.nearest().iter().map(|&k| k as f64).collect();
            let (graph, _) = build_signed_graph(
                &AnchorGraph::new(z),
                c.weights.lambda1,
                c.weights.lambda2,
                c.seed + KMEANS,
            )?;
            let mut ck = Checkpoint::new();
            ck.push("centers", anchors.centers);
            ck.push("nearest", Matrix::from_vec(nearest.len(), 1, nearest)?);
            ck.save(p.out("anchors.ckpt"))?;
            save_graph(&graph, p.out("graph.bin"))
        })?;
        let ck = Checkpoint::load(self.out("anchors.ckpt"))?;
        let knowledge = TeacherKnowledge {
            centers: ck.get("centers")?.clone(),
            nearest: ck.get("nearest")?.data().iter().map(|&v| v as usize).collect(),
        };
        Ok(GraphArtifacts {
            graph: load_graph(self.out("graph.bin"))?,
            knowledge,
        })
    }

    fn student_template(&self, variant: Variant, bits: usize) -> Result<StudentParams> {
        let mut p = StudentParams::new(
            &self.cfg.encoder,
            bits,
            &mut seeded_rng(self.cfg.seed + STUDENT_INIT),
        )?;
        p.mode = variant.mode();
        Ok(p)
    }

    fn student_name(variant: Variant, bits: usize) -> String {
        format!("student_{}_k{bits}", variant.tag())
    }

    pub fn student(&mut self, variant: Variant, bits: usize) -> Result<StudentParams> {
        let name = Self::student_name(variant, bits);
        let arts = [self.out(&format!("{name}.ckpt")), self.out(&format!("{name}_log.txt"))];
        let ga = self.graph()?;
        self.stage("student", &name, &arts, |p| {
            let videos = p.train_videos()?;
            let scfg = StudentTrainConfig {
                epochs: p.cfg.student_epochs,
                batch_size: p.cfg.batch_size,
                pairs_per_batch: p.cfg.pairs_per_batch,
                weights: variant.weights(&p.cfg.weights),
                seed: p.cfg.seed + STUDENT_TRAIN,
            };
            let init = p.student_template(variant, bits)?;
            let (params, log) = train_student(&videos, &ga.graph, &ga.knowledge, init, &scfg)?;
            let mut ck = Checkpoint::new();
            ck.push_params("student", &params);
            ck.save(&arts[0])?;
            let text: String = log.iter().map(|r| r.log_line() + "\n").collect();
            std::fs::write(&arts[1], text)?;
            Ok(())
        })?;
        let mut params = self.student_template(variant, bits)?;
        Checkpoint::load(&arts[0])?.load_params("student", &mut params)?;
        Ok(params)
    }

    /// Codes of every video, row `i` belonging to video `i`.
    pub fn encode(&mut self, variant: Variant, bits: usize) -> Result<Vec<BinaryCode>> {
        let path = self.out(&format!("codes_{}_k{bits}.bin", variant.tag()));
        let student = self.student(variant, bits)?;
        let key = format!("codes_{}_k{bits}", variant.tag());
        self.stage("encode", &key, std::slice::from_ref(&path), |p| {
            let codes = encode_videos(&student, &p.data()?.videos)?;
            let ids: Vec<usize> = (0..codes.len()).collect();
            CodeIndex::build(&codes, &ids)?.save(&path)
        })?;
        let idx = CodeIndex::load(&path)?;
        (0..idx.len()).map(|r| idx.code(r)).collect()
    }

    /// Database index and query list over the held-out splits.
    pub fn retrieval_sets(&mut self, codes: &[BinaryCode]) -> Result<(CodeIndex, Vec<u32>, Vec<Query>)> {
        let ds = self.data()?;
        let db = ds.ids(Split::Database);
        let idx = CodeIndex::build(&db.iter().map(|&i| codes[i].clone()).collect::<Vec<_>>(), &db)?;
        let labels = db.iter().map(|&i| ds.labels[i]).collect();
        let queries = ds
            .ids(Split::Query)
            .into_iter()
            .map(|i| Query {
                id: i,
                code: codes[i].clone(),
                label: ds.labels[i],
            })
            .collect();
        Ok((idx, labels, queries))
    }

    /// MAP at every configured cutoff and the PR curve for one trained variant.
    pub fn evaluate(&mut self, variant: Variant, bits: usize) -> Result<Evaluation> {
        let codes = self.encode(variant, bits)?;
        let (idx, labels, queries) = self.retrieval_sets(&codes)?;
        let mut maps = Vec::new();
        let mut skipped = 0;
        for &k in &self.cfg.map_cutoffs.clone() {
            let r = map_at_k(&queries, &idx, &labels, k)?;
            skipped = r.skipped;
            maps.push((k, r.map));
        }
        Ok(Evaluation {
            bits,
            maps,
            skipped,
            pr: pr_curve(&queries, &idx, &labels)?,
        })
    }

    /// Full run: every configured code length, then the report.
    pub fn run(&mut self) -> Result<String> {
        let variant = Variant::Full;
        let mut evals = Vec::new();
        for bits in self.cfg.code_bits.clone() {
            evals.push(self.evaluate(variant, bits)?);
        }
        let report = self.report(&evals)?;
        std::fs::write(self.out("report.txt"), &report)?;
        self.write_timings()?;
        Ok(report)
    }

    pub fn write_timings(&self) -> Result<()> {
        let text: String = self
            .timings
            .iter()
            .map(|(s, t)| format!("{s} {t:.3}\n"))
            .collect();
        std::fs::write(self.out("timings.txt"), text)?;
        Ok(())
    }

    fn report(&mut self, evals: &[Evaluation]) -> Result<String> {
        let ds = self.data()?;
        let counts = [Split::Train, Split::Query, Split::Database].map(|s| ds.ids(s).len());
        let teacher_log = std::fs::read_to_string(self.out("teacher_log.txt"))?;
        let losses: Vec<&str> = teacher_log
            .lines()
            .filter_map(|l| l.split_whitespace().nth(1))
            .collect();
        let graph = load_graph(self.out("graph.bin"))?;
        let (pos, neg) = graph.edge_counts();
        let unlabeled = (0..graph.len())
            .filter(|&i| graph.positives[i].is_empty() && graph.negatives[i].is_empty())
            .count();

        let mut s = String::new();
        writeln!(s, "dkph report").ok();
        writeln!(s, "config_hash = {}", self.hash).ok();
        let variant = if self.cfg.is_reconstruction_only() {
            "reconstruction-only baseline"
        } else {
            "full"
        };
        writeln!(s, "variant = {variant}").ok();
        writeln!(
            s,
            "splits = train {} / query {} / database {}",
            counts[0], counts[1], counts[2]
        )
        .ok();
        writeln!(s, "teacher.initial_loss = {}", losses.first().unwrap_or(&"-")).ok();
        writeln!(s, "teacher.final_loss = {}", losses.last().unwrap_or(&"-")).ok();
        writeln!(s, "graph.positive_edges = {pos}").ok();
        writeln!(s, "graph.negative_edges = {neg}").ok();
        writeln!(s, "graph.unlabeled_rows = {unlabeled}").ok();
        for e in evals {
            for (k, m) in &e.maps {
                writeln!(s, "map@{k}.k{} = {m:.6}", e.bits).ok();
            }
            writeln!(s, "queries_without_relevant.k{} = {}", e.bits, e.skipped).ok();
        }
        for e in evals {
            let pts: Vec<String> = e
                .pr
                .iter()
                .map(|p| {
                    let prec = p.precision.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
                    format!("{}:{:.6}:{prec}", p.radius, p.recall)
                })
                .collect();
            writeln!(s, "pr.k{} = {}", e.bits, pts.join(" ")).ok();
        }
        Ok(s)
    }
}

/// Retrieval quality of one model.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub bits: usize,
    /// `(cutoff, MAP)` in configured order.
    pub maps: Vec<(usize, f64)>,
    pub skipped: usize,
    pub pr: Vec<PrPoint>,
}

impl Evaluation {
    pub fn map_at(&self, k: usize) -> Option<f64> {
        self.maps.iter().find(|(c, _)| *c == k).map(|(_, m)| *m)
    }
}
