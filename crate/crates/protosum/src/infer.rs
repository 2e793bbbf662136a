//! Beam-search decoding, repetition re-ranking, and length-controlled
//! summarization over a trained extractor/abstractor pair.

use std::collections::HashSet;
use std::hash::Hash;

use crate::abstractor::{AbstractorModel, DecoderSession, ExtVocab};
use crate::corpus::{Document, Vocabulary, BOS, EOS};
use crate::extractor::{extract_prototype, score_words, ExtractorModel};
use crate::labeler::bin_length;
use crate::numerics::LOG_FLOOR;
use crate::{Error, Result};

/// One decoder beam entry. `tokens` are input-vocabulary ids starting at BOS;
/// `logprob` is the sum of per-step floored log probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    pub tokens: Vec<usize>,
    pub logprob: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Generated tokens without the BOS prefix and without a trailing EOS.
    pub fn emitted(&self) -> &[usize] {
        let mut toks = &self.tokens[1..];
        if let Some((&last, rest)) = toks.split_last() {
            if last == EOS as usize {
                toks = rest;
            }
        }
        toks
    }
}

/// Descending logprob, ties toward the lexicographically smaller sequence.
fn beam_order(a: &Hypothesis, b: &Hypothesis) -> std::cmp::Ordering {
    b.logprob
        .total_cmp(&a.logprob)
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search over an arbitrary next-token distribution. Each step the top
/// `n_beam` candidates win a slot; finished winners retire to the result pool
/// and their slots are refilled with the best remaining unfinished candidates.
/// The search stops once no active hypothesis can still beat the pool.
fn beam_core<F>(mut step: F, ext: &ExtVocab, n_beam: usize, max_len: usize) -> Result<Vec<Hypothesis>>
where
    F: FnMut(&[usize]) -> Result<Vec<f64>>,
{
    let mut active = vec![Hypothesis {
        tokens: vec![BOS as usize],
        logprob: 0.0,
        finished: false,
    }];
    let mut pool: Vec<Hypothesis> = Vec::new();
    while !active.is_empty() {
        let mut candidates: Vec<Hypothesis> = Vec::new();
        for hyp in &active {
            let p = step(&hyp.tokens)?;
            if p.len() != ext.size() {
                return Err(Error::shape(
                    "beam_search",
                    format!("step returned {} probabilities, expected {}", p.len(), ext.size()),
                ));
            }
            for (e, &pe) in p.iter().enumerate() {
                let mut tokens = hyp.tokens.clone();
                tokens.push(ext.input_id(e));
                let finished = e == EOS as usize || tokens.len() > max_len;
                candidates.push(Hypothesis {
                    tokens,
                    logprob: hyp.logprob + pe.max(LOG_FLOOR).ln(),
                    finished,
                });
            }
        }
        candidates.sort_by(beam_order);
        let mut next_active = Vec::new();
        for (rank, cand) in candidates.into_iter().enumerate() {
            if cand.finished {
                // Only slot winners retire; lower-ranked finished candidates
                // would have been pruned by the beam and are dropped.
                if rank < n_beam {
                    pool.push(cand);
                }
            } else if next_active.len() < n_beam {
                next_active.push(cand);
            }
        }
        active = next_active;
        // Per-step log terms are <= 0, so once the pool's n-th best strictly
        // beats every active hypothesis no extension can change the result.
        if pool.len() >= n_beam {
            pool.sort_by(beam_order);
            let bar = pool[n_beam - 1].logprob;
            if active.iter().all(|h| h.logprob < bar) {
                break;
            }
        }
    }
    pool.sort_by(beam_order);
    pool.truncate(n_beam);
    Ok(pool)
}

/// Beam search over the decoder's copy/generate mixture. Returns up to
/// `n_beam` finished hypotheses (EOS emitted or `max_len` tokens generated),
/// best first; ties are broken toward the smaller token sequence. `n_beam`
/// of 1 degenerates to greedy decoding.
pub fn beam_search(session: &DecoderSession, n_beam: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
    if n_beam == 0 {
        return Err(Error::InvalidInput("beam width must be >= 1".into()));
    }
    if max_len == 0 {
        return Err(Error::InvalidInput("max decode length must be >= 1".into()));
    }
    beam_core(
        |prefix| session.step(prefix).map(|s| s.p),
        session.ext(),
        n_beam,
        max_len,
    )
}

/// Occurrences beyond the first of each distinct trigram.
pub fn repeated_trigrams<T: Eq + Hash>(tokens: &[T]) -> usize {
    if tokens.len() < 3 {
        return 0;
    }
    let windows: Vec<&[T]> = tokens.windows(3).collect();
    let distinct: HashSet<&[T]> = windows.iter().copied().collect();
    windows.len() - distinct.len()
}

/// Picks the candidate with the fewest repeated trigrams; ties go to the
/// higher logprob, then to the lexicographically smaller token sequence.
pub fn rerank(candidates: &[Hypothesis]) -> Result<&Hypothesis> {
    if candidates.is_empty() {
        return Err(Error::InvalidInput("rerank needs at least one candidate".into()));
    }
    let repeats: Vec<usize> = candidates
        .iter()
        .map(|h| repeated_trigrams(&h.tokens))
        .collect();
    let best = (0..candidates.len())
        .min_by(|&i, &j| {
            repeats[i]
                .cmp(&repeats[j])
                .then_with(|| beam_order(&candidates[i], &candidates[j]))
        })
        .expect("nonempty");
    Ok(&candidates[best])
}

/// A trained extractor/abstractor pair ready for decoding. `avg_ref_len` is
/// the mean validation reference length stored at abstractor training time;
/// it calibrates K when the caller gives no desired length.
pub struct Summarizer<'a> {
    pub extractor: &'a ExtractorModel,
    pub abstractor: &'a AbstractorModel,
    pub avg_ref_len: Option<f64>,
    pub n_beam: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOutput {
    /// Desired length actually used (given or calibrated).
    pub k: usize,
    pub prototype_positions: Vec<usize>,
    pub prototype_tokens: Vec<String>,
    pub summary: Vec<String>,
    pub logprob: f64,
    pub repeated_trigrams: usize,
}

impl Summarizer<'_> {
    /// The desired length: the given K, or the length bin of the stored
    /// validation average when none is given.
    pub fn resolve_k(&self, given: Option<usize>) -> Result<usize> {
        match given {
            Some(0) => Err(Error::InvalidInput("desired length K must be >= 1".into())),
            Some(k) => Ok(k),
            None => {
                let avg = self.avg_ref_len.ok_or_else(|| {
                    Error::InvalidInput(
                        "no desired length given and the checkpoint stores no validation \
                         average; pass a K or re-run train-abstractor to calibrate"
                            .into(),
                    )
                })?;
                Ok(bin_length(avg.round() as usize))
            }
        }
    }

    /// Extracts a prototype of min(K, source length) words, decodes with beam
    /// search capped at min(2K + 10, the model's decode limit), and re-ranks
    /// the candidates by repeated trigrams.
    pub fn summarize(&self, vocab: &Vocabulary, doc: &Document, k: Option<usize>) -> Result<SummaryOutput> {
        let k = self.resolve_k(k)?;
        let words = doc.flat_source();
        let scores = score_words(self.extractor, vocab, doc)?;
        let k_used = k.min(words.len());
        let positions = extract_prototype(doc, &scores, k_used);
        let source_ids: Vec<usize> = vocab.encode(&words).iter().map(|&i| i as usize).collect();
        let session = DecoderSession::new(self.abstractor, &source_ids, &positions)?;
        let max_len = (2 * k_used + 10).min(self.abstractor.config.max_decode_len);
        let hyps = beam_search(&session, self.n_beam, max_len)?;
        let best = rerank(&hyps)?;
        let summary = best
            .emitted()
            .iter()
            .map(|&id| vocab.token(id as u32).to_string())
            .collect();
        Ok(SummaryOutput {
            k,
            prototype_tokens: positions.iter().map(|&p| words[p].clone()).collect(),
            prototype_positions: positions,
            summary,
            logprob: best.logprob,
            repeated_trigrams: repeated_trigrams(&best.tokens),
        })
    }
}
