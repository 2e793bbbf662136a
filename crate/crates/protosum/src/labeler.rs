//! Pseudo training-data construction: oracle sentence selection, word-level
//! alignment, binary extraction labels, length bins, and gold prototypes.
//!
//! The pipeline is staged: labels come first and train the extractor, then
//! the trained extractor's scores pick the gold prototypes that supervise
//! the abstractor's attention.

use crate::corpus::{is_meta_line, write_meta_line, Document};
use crate::rouge::mean_recall_12;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

/// A document plus everything the two training stages need from it.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub doc: Document,
    pub oracle_sentences: Vec<usize>,
    /// One 0/1 label per flattened source word.
    pub labels: Vec<u8>,
    /// (summary position t, absolute source position l(t)) pairs, strictly
    /// increasing in both coordinates.
    pub alignment: Vec<(usize, usize)>,
    /// Binned reference length.
    pub k: usize,
    /// Source positions of the gold prototype, filled in by the
    /// prototype-generation stage once an extractor exists.
    pub gold_prototype_positions: Option<Vec<usize>>,
}

/// Greedy oracle sentence selection maximizing the mean of ROUGE-1 and
/// ROUGE-2 recall of the concatenated selection against the summary. The
/// first pick is always taken (ties to the lowest index); later picks must
/// strictly improve the objective. Returns sorted indices.
pub fn select_oracle_sentences(doc: &Document) -> Vec<usize> {
    let n = doc.sentences.len();
    let mut selected: Vec<bool> = vec![false; n];
    let mut current = 0.0f64;
    let mut n_selected = 0usize;
    loop {
        let mut best: Option<(usize, f64)> = None;
        for j in 0..n {
            if selected[j] {
                continue;
            }
            let mut candidate: Vec<&String> = Vec::new();
            for (i, s) in doc.sentences.iter().enumerate() {
                if selected[i] || i == j {
                    candidate.extend(s.iter());
                }
            }
            let summary: Vec<&String> = doc.summary.iter().collect();
            let score = mean_recall_12(&candidate, &summary);
            let better = match best {
                None => true,
                Some((_, b)) => score > b,
            };
            if better {
                best = Some((j, score));
            }
        }
        match best {
            Some((j, score)) if n_selected == 0 || score > current => {
                selected[j] = true;
                n_selected += 1;
                current = score;
            }
            _ => break,
        }
    }
    (0..n).filter(|&j| selected[j]).collect()
}

/// Flattens the oracle sentences, returning their tokens and absolute
/// source positions.
pub fn oracle_flat(doc: &Document, oracle_sentences: &[usize]) -> (Vec<String>, Vec<usize>) {
    let mut tokens = Vec::new();
    let mut positions = Vec::new();
    let mut offset = 0usize;
    for (j, s) in doc.sentences.iter().enumerate() {
        if oracle_sentences.contains(&j) {
            for (i, t) in s.iter().enumerate() {
                tokens.push(t.clone());
                positions.push(offset + i);
            }
        }
        offset += s.len();
    }
    (tokens, positions)
}

/// One longest common subsequence between the summary and the flattened
/// oracle text, reported as (summary index, absolute source position)
/// pairs. The walk over the suffix LCS table prefers, on equal table
/// values, match > advance-oracle > advance-summary, which pins down the
/// leftmost-in-source alignment.
pub fn align_lcs(
    summary: &[String],
    oracle_tokens: &[String],
    oracle_positions: &[usize],
) -> Vec<(usize, usize)> {
    assert_eq!(oracle_tokens.len(), oracle_positions.len());
    let m = summary.len();
    let k = oracle_tokens.len();
    // suffix[i][j] = LCS length of summary[i..] and oracle[j..]
    let mut suffix = vec![vec![0usize; k + 1]; m + 1];
    for i in (0..m).rev() {
        for j in (0..k).rev() {
            suffix[i][j] = if summary[i] == oracle_tokens[j] {
                suffix[i + 1][j + 1] + 1
            } else {
                suffix[i + 1][j].max(suffix[i][j + 1])
            };
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    while i < m && j < k {
        if summary[i] == oracle_tokens[j] && suffix[i][j] == suffix[i + 1][j + 1] + 1 {
            out.push((i, oracle_positions[j]));
            i += 1;
            j += 1;
        } else if suffix[i][j + 1] == suffix[i][j] {
            j += 1;
        } else {
            i += 1;
        }
    }
    out
}

/// r_l = 1 exactly at aligned absolute source positions. Every aligned
/// position must lie inside an oracle sentence.
pub fn make_labels(
    doc: &Document,
    oracle_sentences: &[usize],
    alignment: &[(usize, usize)],
) -> Result<Vec<u8>> {
    let sentence_of = doc.sentence_index();
    let mut labels = vec![0u8; doc.source_len()];
    for &(t, l) in alignment {
        if l >= labels.len() || !oracle_sentences.contains(&sentence_of[l]) {
            return Err(Error::InvalidInput(format!(
                "alignment pair ({t},{l}) falls outside the oracle sentences of document {}",
                doc.id
            )));
        }
        labels[l] = 1;
    }
    Ok(labels)
}

/// Quantizes a summary length to the nearest multiple of 5, clamped to a
/// minimum of 5.
pub fn bin_length(t: usize) -> usize {
    (5 * ((t + 2) / 5)).max(5)
}

/// Top-K oracle words by weighted importance score, emitted in source
/// order. Ties go to the lower position; if fewer than K oracle words
/// exist, all are returned.
pub fn make_gold_prototype(
    doc: &Document,
    oracle_sentences: &[usize],
    weighted_scores: &[f64],
    k: usize,
) -> Result<Vec<usize>> {
    if weighted_scores.len() != doc.source_len() {
        return Err(Error::InvalidInput(format!(
            "score vector length {} does not match source length {} for document {}",
            weighted_scores.len(),
            doc.source_len(),
            doc.id
        )));
    }
    let sentence_of = doc.sentence_index();
    let candidates: Vec<usize> = (0..doc.source_len())
        .filter(|&l| oracle_sentences.contains(&sentence_of[l]))
        .collect();
    Ok(crate::extractor::top_k_positions(
        weighted_scores,
        &candidates,
        k,
    ))
}

/// Runs the label-construction stages that need no trained model.
pub fn label_document(doc: &Document) -> Result<LabeledExample> {
    let oracle_sentences = select_oracle_sentences(doc);
    let (tokens, positions) = oracle_flat(doc, &oracle_sentences);
    let alignment = align_lcs(&doc.summary, &tokens, &positions);
    let labels = make_labels(doc, &oracle_sentences, &alignment)?;
    let k = bin_length(doc.summary.len());
    Ok(LabeledExample {
        doc: doc.clone(),
        oracle_sentences,
        labels,
        alignment,
        k,
        gold_prototype_positions: None,
    })
}

#[derive(Serialize, Deserialize)]
struct LabelRecord {
    id: String,
    oracle_sentences: Vec<usize>,
    labels: Vec<u8>,
    alignment: Vec<[usize; 2]>,
    #[serde(rename = "K")]
    k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gold_prototype_positions: Option<Vec<usize>>,
}

pub fn write_labels(
    path: &Path,
    examples: &[LabeledExample],
    meta: &BTreeMap<String, String>,
) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    write_meta_line(&mut writer, meta)?;
    for ex in examples {
        let record = LabelRecord {
            id: ex.doc.id.clone(),
            oracle_sentences: ex.oracle_sentences.clone(),
            labels: ex.labels.clone(),
            alignment: ex.alignment.iter().map(|&(t, l)| [t, l]).collect(),
            k: ex.k,
            gold_prototype_positions: ex.gold_prototype_positions.clone(),
        };
        let json = serde_json::to_string(&record)
            .map_err(|e| Error::Corpus(format!("label serialization: {e}")))?;
        writeln!(writer, "{json}")?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a label file and re-attaches each record to its document. Every
/// record must name a document present in `corpus`.
pub fn read_labels(path: &Path, corpus: &[Document]) -> Result<Vec<LabeledExample>> {
    let by_id: std::collections::HashMap<&str, &Document> =
        corpus.iter().map(|d| (d.id.as_str(), d)).collect();
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Corpus(format!("malformed label line at line {lineno}: {e}")))?;
        if is_meta_line(&value) {
            continue;
        }
        let record: LabelRecord = serde_json::from_value(value)
            .map_err(|e| Error::Corpus(format!("malformed label line at line {lineno}: {e}")))?;
        let doc = by_id.get(record.id.as_str()).ok_or_else(|| {
            Error::Corpus(format!(
                "label line {lineno} names unknown document {}",
                record.id
            ))
        })?;
        if record.labels.len() != doc.source_len() {
            return Err(Error::Corpus(format!(
                "label line {lineno}: {} labels for {} source words",
                record.labels.len(),
                doc.source_len()
            )));
        }
        out.push(LabeledExample {
            doc: (*doc).clone(),
            oracle_sentences: record.oracle_sentences,
            labels: record.labels,
            alignment: record.alignment.iter().map(|p| (p[0], p[1])).collect(),
            k: record.k,
            gold_prototype_positions: record.gold_prototype_positions,
        });
    }
    Ok(out)
}
