//! Word-level importance scoring and top-K prototype extraction.
//!
//! A small trainable transformer encoder produces one logit per source
//! word; sigmoid gives the word score, each sentence's score is the mean
//! of its word scores, and the weighted score is their product. The
//! prototype is the top-K words by weighted score, kept in source order.

use crate::config::TrainParams;
use crate::corpus::{Document, Vocabulary};
use crate::labeler::LabeledExample;
use crate::layers::{embed, encoder_block, init_embedding, init_encoder_block};
use crate::numerics::{
    load_checkpoint, save_checkpoint, AdamState, GradAccumulator, Graph, NodeId, ParamNodes,
    ParamSet,
};
use crate::{Error, Result, EPOCH_SALT, INIT_SALT};
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractorConfig {
    pub d_word: usize,
    pub d_model: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub ffn: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        ExtractorConfig {
            d_word: 32,
            d_model: 64,
            n_blocks: 2,
            n_heads: 2,
            ffn: 128,
        }
    }
}

pub struct ExtractorModel {
    pub params: ParamSet,
    pub config: ExtractorConfig,
    pub vocab_size: usize,
}

impl ExtractorModel {
    pub fn init(vocab_size: usize, config: &ExtractorConfig, seed: u64) -> ExtractorModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT);
        let mut params = ParamSet::new();
        init_embedding(
            &mut params,
            "emb",
            vocab_size,
            config.d_word,
            config.d_model,
            &mut rng,
        );
        for i in 0..config.n_blocks {
            init_encoder_block(&mut params, &format!("enc{i}"), config.d_model, config.ffn, &mut rng);
        }
        params.init_uniform("head.w", config.d_model, 1, &mut rng);
        params.init_zeros("head.b", 1, 1);
        ExtractorModel {
            params,
            config: config.clone(),
            vocab_size,
        }
    }

    /// Per-word importance logits, shape (L, 1).
    pub fn forward(&self, g: &mut Graph, nodes: &ParamNodes, ids: &[usize]) -> Result<NodeId> {
        let mut h = embed(g, nodes, "emb", ids, self.config.d_model)?;
        for i in 0..self.config.n_blocks {
            h = encoder_block(g, nodes, &format!("enc{i}"), h, self.config.n_heads)?;
        }
        let w = nodes.get("head.w")?;
        let b = nodes.get("head.b")?;
        let scores = g.matmul(h, w)?;
        g.add_row(scores, b)
    }

    pub fn save(&self, prefix: &Path, extra_meta: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = extra_meta.clone();
        meta.insert("kind".into(), "extractor".into());
        meta.insert("d_word".into(), self.config.d_word.to_string());
        meta.insert("d_model".into(), self.config.d_model.to_string());
        meta.insert("n_blocks".into(), self.config.n_blocks.to_string());
        meta.insert("n_heads".into(), self.config.n_heads.to_string());
        meta.insert("ffn".into(), self.config.ffn.to_string());
        meta.insert("vocab_size".into(), self.vocab_size.to_string());
        save_checkpoint(prefix, &self.params, &meta)
    }

    pub fn load(prefix: &Path) -> Result<ExtractorModel> {
        let (params, meta) = load_checkpoint(prefix)?;
        if meta.get("kind").map(|s| s.as_str()) != Some("extractor") {
            return Err(Error::Checkpoint(format!(
                "{} is not an extractor checkpoint",
                prefix.display()
            )));
        }
        let get = |key: &str| -> Result<usize> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or bad meta field {key}")))
        };
        Ok(ExtractorModel {
            config: ExtractorConfig {
                d_word: get("d_word")?,
                d_model: get("d_model")?,
                n_blocks: get("n_blocks")?,
                n_heads: get("n_heads")?,
                ffn: get("ffn")?,
            },
            vocab_size: get("vocab_size")?,
            params,
        })
    }
}

/// Word, sentence, and weighted importance scores for one document.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceScores {
    pub word: Vec<f64>,
    pub sentence: Vec<f64>,
    pub weighted: Vec<f64>,
}

impl ImportanceScores {
    /// Builds sentence scores (mean of word scores per sentence) and
    /// weighted scores (word * own-sentence score) from raw word scores.
    pub fn from_word_scores(word: Vec<f64>, sentence_index: &[usize], n_sentences: usize) -> Self {
        assert_eq!(word.len(), sentence_index.len());
        let mut sums = vec![0.0f64; n_sentences];
        let mut counts = vec![0usize; n_sentences];
        for (&s, &j) in word.iter().zip(sentence_index) {
            sums[j] += s;
            counts[j] += 1;
        }
        let sentence: Vec<f64> = sums
            .iter()
            .zip(&counts)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect();
        let weighted = word
            .iter()
            .zip(sentence_index)
            .map(|(&s, &j)| s * sentence[j])
            .collect();
        ImportanceScores {
            word,
            sentence,
            weighted,
        }
    }
}

pub fn score_words(
    model: &ExtractorModel,
    vocab: &Vocabulary,
    doc: &Document,
) -> Result<ImportanceScores> {
    let ids: Vec<usize> = doc
        .flat_source()
        .iter()
        .map(|t| vocab.id(t) as usize)
        .collect();
    let mut g = Graph::new();
    let nodes = ParamNodes::new(&model.params, &mut g);
    let logits = model.forward(&mut g, &nodes, &ids)?;
    let probs = g.sigmoid(logits);
    let word: Vec<f64> = g.value(probs).column(0).to_vec();
    Ok(ImportanceScores::from_word_scores(
        word,
        &doc.sentence_index(),
        doc.sentences.len(),
    ))
}

/// Positions of the K largest scores among `candidates`, ties broken
/// toward the lower position, result in increasing position order.
pub fn top_k_positions(scores: &[f64], candidates: &[usize], k: usize) -> Vec<usize> {
    let mut ranked: Vec<usize> = candidates.to_vec();
    ranked.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ranked.truncate(k);
    ranked.sort_unstable();
    ranked
}

/// Top-K prototype over the whole source by weighted score.
pub fn extract_prototype(doc: &Document, scores: &ImportanceScores, k: usize) -> Vec<usize> {
    assert!(k >= 1, "prototype size must be at least 1");
    let all: Vec<usize> = (0..doc.source_len()).collect();
    top_k_positions(&scores.weighted, &all, k)
}

#[derive(Debug, Clone)]
pub struct ExtractorTrainLog {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

pub struct TrainedExtractor {
    pub model: ExtractorModel,
    pub log: Vec<ExtractorTrainLog>,
    pub best_val_loss: f64,
    pub val_f1: f64,
}

type NamedGrads = BTreeMap<String, Array2<f64>>;

fn example_loss(
    model: &ExtractorModel,
    vocab: &Vocabulary,
    ex: &LabeledExample,
    with_grads: bool,
) -> Result<(f64, Option<NamedGrads>)> {
    let ids: Vec<usize> = ex
        .doc
        .flat_source()
        .iter()
        .map(|t| vocab.id(t) as usize)
        .collect();
    let targets = Array2::from_shape_vec(
        (ids.len(), 1),
        ex.labels.iter().map(|&r| r as f64).collect(),
    )
    .expect("label column");
    let mut g = Graph::new();
    let nodes = ParamNodes::new(&model.params, &mut g);
    let logits = model.forward(&mut g, &nodes, &ids)?;
    let loss = g.bce_logits(logits, &targets)?;
    let value = g.value(loss)[[0, 0]];
    if with_grads {
        g.backward(loss)?;
        Ok((value, Some(nodes.grads(&g))))
    } else {
        Ok((value, None))
    }
}

pub fn validation_loss(
    model: &ExtractorModel,
    vocab: &Vocabulary,
    examples: &[LabeledExample],
) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        total += example_loss(model, vocab, ex, false)?.0;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Micro-averaged F1 of thresholded word scores (>= 0.5) against labels.
pub fn word_label_f1(
    model: &ExtractorModel,
    vocab: &Vocabulary,
    examples: &[LabeledExample],
) -> Result<f64> {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for ex in examples {
        let scores = score_words(model, vocab, &ex.doc)?;
        for (&s, &r) in scores.word.iter().zip(&ex.labels) {
            let p = s >= 0.5;
            match (p, r == 1) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let precision = tp as f64 / (tp + fp) as f64;
    let recall = tp as f64 / (tp + fn_) as f64;
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Minimizes mean binary cross-entropy with Adam; gradients accumulate
/// per example into batch means. Keeps the best-validation parameters.
pub fn train_extractor(
    train: &[LabeledExample],
    val: &[LabeledExample],
    vocab: &Vocabulary,
    config: &ExtractorConfig,
    tp: &TrainParams,
) -> Result<TrainedExtractor> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput(
            "extractor training needs non-empty train and validation sets".into(),
        ));
    }
    let mut model = ExtractorModel::init(vocab.len(), config, tp.seed);
    let mut adam = AdamState::new(config.d_model, tp.warmup, tp.lr_mult);
    let mut log = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..tp.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(tp.seed ^ EPOCH_SALT ^ (epoch as u64));
        order.shuffle(&mut rng);
        for batch in order.chunks(tp.batch_size.max(1)) {
            let mut acc = GradAccumulator::new();
            let mut batch_loss = 0.0;
            for &i in batch {
                let (loss, grads) = example_loss(&model, vocab, &train[i], true)?;
                assert!(loss.is_finite(), "non-finite extractor loss at step {}", adam.step + 1);
                batch_loss += loss;
                acc.add(grads.expect("grads requested"));
            }
            batch_loss /= batch.len() as f64;
            let grads = acc.mean();
            for (name, grad) in &grads {
                assert!(
                    grad.iter().all(|v| v.is_finite()),
                    "non-finite gradient for {name} at step {}",
                    adam.step + 1
                );
            }
            adam.apply(&mut model.params, &grads);
            log.push(ExtractorTrainLog {
                step: adam.step,
                lr: adam.lr(adam.step),
                loss: batch_loss,
            });
        }
        let val_loss = validation_loss(&model, vocab, val)?;
        if val_loss < best_val {
            best_val = val_loss;
            best_params = model.params.clone();
        }
    }
    model.params = best_params;
    let val_f1 = word_label_f1(&model, vocab, val)?;
    Ok(TrainedExtractor {
        model,
        log,
        best_val_loss: best_val,
        val_f1,
    })
}
