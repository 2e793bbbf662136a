//! Length-controllable summarization with a word-level prototype extractor
//! and a prototype-guided copy decoder.
//!
//! The pipeline runs in two stages. A small transformer encoder scores every
//! source word for importance and extracts the top-K words (in source order)
//! as a "prototype" of the summary; K doubles as the length control. A joint
//! encoder then aligns source and prototype, and a decoder generates the
//! summary while mixing a generation distribution with copy distributions
//! over both texts.
//!
//! Everything is self-contained: corpus synthesis, pseudo-label
//! construction, a reverse-mode autodiff kernel, training loops, beam-search
//! inference, and ROUGE evaluation.

pub mod abstractor;
pub mod config;
pub mod corpus;
pub mod extractor;
pub mod infer;
pub mod labeler;
pub mod layers;
pub mod numerics;
pub mod rouge;
pub mod trainer;

use thiserror::Error;

/// Seed salts keep the RNG streams for initialization, epoch shuffling, and
/// corpus splitting independent even when built from the same base seed.
pub(crate) const INIT_SALT: u64 = 0x696e6974;
pub(crate) const EPOCH_SALT: u64 = 0x65706f63;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: &'static str, details: String },

    #[error("{0}")]
    InvalidInput(String),

    #[error("corpus: {0}")]
    Corpus(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing prototype for document {0}; run gen-prototypes first")]
    MissingPrototype(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            details: details.into(),
        }
    }
}
