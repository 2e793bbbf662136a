//! Run configuration: one TOML file drives every pipeline command, with a
//! few CLI overrides. Each section has desk-scale defaults, and the whole
//! config hashes to a stable fingerprint that output artifacts embed.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Runtime knobs for one training loop.
#[derive(Debug, Clone)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup: u64,
    pub lr_mult: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct CorpusSection {
    pub n_docs: usize,
    pub vocab_size: usize,
    pub n_sentences: usize,
    pub sentence_len: usize,
    pub salient_fraction: f64,
    /// Source token budget applied on load.
    pub truncate: usize,
}

impl Default for CorpusSection {
    fn default() -> Self {
        CorpusSection {
            n_docs: 2000,
            vocab_size: 60,
            n_sentences: 4,
            sentence_len: 10,
            salient_fraction: 0.6,
            truncate: 400,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct VocabSection {
    pub input_cap: usize,
    pub output_cap: usize,
}

impl Default for VocabSection {
    fn default() -> Self {
        VocabSection {
            input_cap: 10000,
            output_cap: 48,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_word: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ffn: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d_word: 32,
            d_model: 64,
            n_blocks: 2,
            n_heads: 2,
            ffn: 128,
        }
    }
}

/// Which attention the prototype guide loss steers: the decoder's
/// prototype attention (stack A head 0, default) or the dual encoder's
/// prototype-side cross attention.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum ProtoGuide {
    Decoder,
    Encoder,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AbstractorSection {
    pub d_word: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ffn: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub proto_guide: ProtoGuide,
    pub max_decode_len: usize,
}

impl Default for AbstractorSection {
    fn default() -> Self {
        AbstractorSection {
            d_word: 32,
            d_model: 64,
            n_blocks: 2,
            n_heads: 2,
            ffn: 128,
            lambda1: 0.5,
            lambda2: 0.5,
            proto_guide: ProtoGuide::Decoder,
            max_decode_len: 80,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub warmup: u64,
    pub lr_mult: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            epochs: 24,
            batch_size: 16,
            warmup: 300,
            lr_mult: 1.0,
        }
    }
}

impl TrainSection {
    pub fn to_params(&self, seed: u64) -> TrainParams {
        TrainParams {
            epochs: self.epochs,
            batch_size: self.batch_size,
            warmup: self.warmup,
            lr_mult: self.lr_mult,
            seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct InferSection {
    pub n_beam: usize,
}

impl Default for InferSection {
    fn default() -> Self {
        InferSection { n_beam: 5 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub corpus: CorpusSection,
    pub vocab: VocabSection,
    pub extractor: ModelSection,
    pub extractor_train: TrainSection,
    pub abstractor: AbstractorSection,
    pub abstractor_train: TrainSection,
    pub infer: InferSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 13,
            out_dir: PathBuf::from("out"),
            corpus: CorpusSection::default(),
            vocab: VocabSection::default(),
            extractor: ModelSection::default(),
            extractor_train: TrainSection {
                epochs: 12,
                batch_size: 16,
                warmup: 300,
                lr_mult: 1.0,
            },
            abstractor: AbstractorSection::default(),
            abstractor_train: TrainSection::default(),
            infer: InferSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidInput(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text)
            .map_err(|e| Error::InvalidInput(format!("bad config {}: {e}", path.display())))
    }

    /// Stable fingerprint of the configuration, embedded in output artifacts
    /// so runs are attributable. The output directory is excluded: it decides
    /// where artifacts land, never what they contain.
    pub fn hash(&self) -> String {
        let mut normalized = self.clone();
        normalized.out_dir = PathBuf::new();
        let text = toml::to_string(&normalized).expect("config serializes");
        format!("{:016x}", fnv1a_64(text.as_bytes()))
    }
}

pub fn fnv1a_64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}
