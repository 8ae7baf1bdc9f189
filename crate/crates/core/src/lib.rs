//! Dual-stream knowledge-preserving hashing for unsupervised video retrieval.
//!
//! A teacher transformer is warmed up on a masked-frame reconstruction task; its
//! frame embeddings seed an anchor similarity graph whose confident positives and
//! hard negatives supervise a dual-stream student. The student's hash layer emits
//! compact video codes while a parallel temporal layer absorbs the frame-level detail
//! needed for reconstruction.

pub mod checkpoint;
pub mod codes;
pub mod encoder;
pub mod error;
pub mod graph;
pub mod numerics;
pub mod pipeline;
pub mod retrieval;
pub mod student;
pub mod teacher;

pub use error::{Error, Result};
pub use numerics::Matrix;
