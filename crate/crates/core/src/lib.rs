//! Zero-shot image classification by weighted visual-text cross alignment.
//!
//! An image is split into random square crops, every crop is compared with
//! every generated description of a class, and the resulting similarity
//! matrix is reduced with softmax weights on both axes: crops by how much
//! they resemble the whole image, descriptions by how much they resemble
//! the class prompt. The class with the highest weighted score wins.
//!
//! The engine never runs a neural network itself. Embeddings come from an
//! [`encoder::EncoderBackend`], normally a [`encoder::PrecomputedStore`]
//! read from a WEM1 file.

pub mod bench;
pub mod classifier;
pub mod encoder;
pub mod error;
pub mod fixtures;
pub mod manifest;
pub mod math;
pub mod oracle;
pub mod rng;
pub mod scoring;
pub mod text_prompt;
pub mod theorem;
pub mod visual_prompt;

pub use classifier::{Aggregation, ClassificationReport, Classifier, EvalReport, RunConfig};
pub use error::{FormatErrorKind, Result, WcaError};
pub use math::{Embedding, WeightVector};
