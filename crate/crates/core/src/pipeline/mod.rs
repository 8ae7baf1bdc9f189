//! Configuration, synthetic data, and end-to-end orchestration.

pub mod ablation;
pub mod config;
pub mod dataset;
pub mod run;
pub mod synth;

pub use ablation::{ablation_suite, AblationReport};
pub use config::RunConfig;
pub use dataset::{Dataset, Split};
pub use run::{Evaluation, GraphArtifacts, Pipeline, Variant};
pub use synth::{generate_synthetic, nearest_prototype_accuracy, SynthConfig, SynthCorpus};
