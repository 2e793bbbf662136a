//! Tokenization, vocabulary construction, corpus I/O, and synthetic-corpus
//! generation.
//!
//! The corpus file format is UTF-8 JSONL, one document per line, with fields
//! `id` (string), `sentences` (array of raw sentence strings), and `summary`
//! (string). Tokenization is applied on load: lowercase, alphanumeric runs
//! kept together, every punctuation character split into its own token,
//! whitespace discarded.

use crate::{Error, Result};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const RESERVED_TOKENS: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Lowercase whitespace tokenizer that splits punctuation into single-char
/// tokens. Idempotent on its own output joined by spaces.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                tokens.push(ch.to_lowercase().collect());
            }
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// One corpus record: tokenized source sentences plus reference summary.
#[derive(Debug, Clone, PartialEq)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    pub summary: Vec<String>,
}

impl Document {
    /// Validates the corpus invariants: empty sentences are dropped, and at
    /// least one source token and one summary token must remain.
    pub fn new(id: String, sentences: Vec<Vec<String>>, summary: Vec<String>) -> Result<Document> {
        let sentences: Vec<Vec<String>> = sentences.into_iter().filter(|s| !s.is_empty()).collect();
        if sentences.is_empty() {
            return Err(Error::Corpus(format!("document {id}: no non-empty sentences")));
        }
        if summary.is_empty() {
            return Err(Error::Corpus(format!("document {id}: empty summary")));
        }
        Ok(Document {
            id,
            sentences,
            summary,
        })
    }

    pub fn source_len(&self) -> usize {
        self.sentences.iter().map(|s| s.len()).sum()
    }

    /// Flattened source tokens, sentence by sentence.
    pub fn flat_source(&self) -> Vec<String> {
        self.sentences.iter().flatten().cloned().collect()
    }

    /// Sentence index of each flattened source position.
    pub fn sentence_index(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.source_len());
        for (j, s) in self.sentences.iter().enumerate() {
            out.extend(std::iter::repeat_n(j, s.len()));
        }
        out
    }

    /// Truncates the flattened source to at most `budget` tokens, keeping
    /// sentence boundaries for whatever survives. The summary is untouched.
    pub fn truncate(&self, budget: usize) -> Result<Document> {
        if budget == 0 {
            return Err(Error::InvalidInput("truncation budget must be >= 1".into()));
        }
        let mut remaining = budget;
        let mut sentences = Vec::new();
        for s in &self.sentences {
            if remaining == 0 {
                break;
            }
            let take = s.len().min(remaining);
            sentences.push(s[..take].to_vec());
            remaining -= take;
        }
        Document::new(self.id.clone(), sentences, self.summary.clone())
    }
}

/// Token/id maps with fixed reserved ids and separate input/output caps.
/// The output vocabulary is the id prefix `0..output_size`; generation
/// scores cover exactly that prefix, while copying can reach any input id.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
    output_size: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    tokens: Vec<String>,
    output_size: usize,
}

impl Vocabulary {
    pub fn id(&self, token: &str) -> u32 {
        self.token_to_id.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        &self.id_to_token[id as usize]
    }

    pub fn len(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn output_size(&self) -> usize {
        self.output_size
    }

    pub fn is_output(&self, id: u32) -> bool {
        (id as usize) < self.output_size
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = VocabFile {
            tokens: self.id_to_token.clone(),
            output_size: self.output_size,
        };
        let json = serde_json::to_string(&file)
            .map_err(|e| Error::Corpus(format!("vocabulary serialization: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Vocabulary> {
        let text = std::fs::read_to_string(path)?;
        let file: VocabFile = serde_json::from_str(&text)
            .map_err(|e| Error::Corpus(format!("vocabulary file {}: {e}", path.display())))?;
        if file.tokens.len() < 4 || file.tokens[..4] != RESERVED_TOKENS {
            return Err(Error::Corpus(format!(
                "vocabulary file {}: reserved tokens missing or reordered",
                path.display()
            )));
        }
        if file.output_size < 4 || file.output_size > file.tokens.len() {
            return Err(Error::Corpus(format!(
                "vocabulary file {}: output_size {} out of range",
                path.display(),
                file.output_size
            )));
        }
        let token_to_id = file
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Ok(Vocabulary {
            token_to_id,
            id_to_token: file.tokens,
            output_size: file.output_size,
        })
    }
}

/// Ranks tokens by corpus frequency (source and summary), ties broken
/// lexicographically, keeps the top `input_cap - 4`, and prepends the
/// reserved tokens. The output vocabulary is capped at `output_cap`.
pub fn build_vocab(corpus: &[Document], input_cap: usize, output_cap: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::InvalidInput("build_vocab: empty corpus".into()));
    }
    if input_cap < 4 || output_cap < 4 {
        return Err(Error::InvalidInput(format!(
            "vocabulary caps must be >= 4, got input {input_cap} output {output_cap}"
        )));
    }
    let mut counts: HashMap<&str, u64> = HashMap::new();
    for doc in corpus {
        for token in doc.sentences.iter().flatten().chain(doc.summary.iter()) {
            *counts.entry(token).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    ranked.truncate(input_cap - 4);

    let mut id_to_token: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
    id_to_token.extend(ranked.iter().map(|(t, _)| t.to_string()));
    let token_to_id = id_to_token
        .iter()
        .enumerate()
        .map(|(i, t)| (t.clone(), i as u32))
        .collect();
    let output_size = output_cap.min(id_to_token.len());
    Ok(Vocabulary {
        token_to_id,
        id_to_token,
        output_size,
    })
}

pub fn read_corpus(path: &Path) -> Result<Vec<Document>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut docs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)
            .map_err(|e| Error::Corpus(format!("malformed line at line {lineno}: {e}")))?;
        if is_meta_line(&value) {
            continue;
        }
        for field in ["id", "sentences", "summary"] {
            if value.get(field).is_none() {
                return Err(Error::Corpus(format!(
                    "missing field: {field} at line {lineno}"
                )));
            }
        }
        let id = value["id"]
            .as_str()
            .ok_or_else(|| Error::Corpus(format!("field `id` must be a string at line {lineno}")))?
            .to_string();
        let raw_sentences = value["sentences"].as_array().ok_or_else(|| {
            Error::Corpus(format!("field `sentences` must be an array at line {lineno}"))
        })?;
        let mut sentences = Vec::with_capacity(raw_sentences.len());
        for s in raw_sentences {
            let text = s.as_str().ok_or_else(|| {
                Error::Corpus(format!(
                    "field `sentences` must contain strings at line {lineno}"
                ))
            })?;
            sentences.push(tokenize(text));
        }
        let summary_text = value["summary"].as_str().ok_or_else(|| {
            Error::Corpus(format!("field `summary` must be a string at line {lineno}"))
        })?;
        let doc = Document::new(id, sentences, tokenize(summary_text))
            .map_err(|e| Error::Corpus(format!("{e} at line {lineno}")))?;
        docs.push(doc);
    }
    Ok(docs)
}

pub fn write_corpus(path: &Path, docs: &[Document], meta: &BTreeMap<String, String>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    write_meta_line(&mut writer, meta)?;
    for doc in docs {
        let record = serde_json::json!({
            "id": doc.id,
            "sentences": doc.sentences.iter().map(|s| s.join(" ")).collect::<Vec<_>>(),
            "summary": doc.summary.join(" "),
        });
        writeln!(writer, "{record}")?;
    }
    writer.flush()?;
    Ok(())
}

/// Optional first line of a JSONL artifact carrying run provenance, e.g.
/// `{"meta":{"config_hash":"...","seed":"13"}}`. Readers skip it.
pub fn write_meta_line<W: Write>(writer: &mut W, meta: &BTreeMap<String, String>) -> Result<()> {
    if !meta.is_empty() {
        let record = serde_json::json!({ "meta": meta });
        writeln!(writer, "{record}")?;
    }
    Ok(())
}

pub fn is_meta_line(value: &serde_json::Value) -> bool {
    value.get("meta").is_some() && value.get("id").is_none()
}

/// Marker that opens every summary-worthy sentence in the synthetic corpus.
pub const SALIENT_MARKER: &str = "mk1";
/// Marker that opens every other sentence.
pub const PLAIN_MARKER: &str = "mk0";

#[derive(Debug, Clone)]
pub struct SynthParams {
    /// Number of distinct content tokens (w0, w1, ...).
    pub vocab_size: usize,
    pub n_sentences: usize,
    /// Nominal tokens per sentence including the marker; actual content
    /// length jitters by up to 3 tokens either way.
    pub sentence_len: usize,
    /// Expected fraction of sentences marked salient.
    pub salient_fraction: f64,
}

/// Generates documents where each sentence opens with a salience marker
/// (`mk1` or `mk0`) and the summary is the in-order concatenation of the
/// salient sentences' content tokens. Content tokens are drawn without
/// replacement per document when the vocabulary allows, which makes the
/// salient set uniquely recoverable from the summary.
pub fn synth_corpus(seed: u64, n_docs: usize, params: &SynthParams) -> Result<Vec<Document>> {
    if params.vocab_size == 0
        || params.n_sentences == 0
        || params.sentence_len == 0
        || n_docs == 0
    {
        return Err(Error::InvalidInput("synth_corpus: params must be positive".into()));
    }
    if !(params.salient_fraction > 0.0 && params.salient_fraction < 1.0) {
        return Err(Error::InvalidInput(format!(
            "synth_corpus: salient_fraction must be in (0,1), got {}",
            params.salient_fraction
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(n_docs);
    for d in 0..n_docs {
        let content_lens: Vec<usize> = (0..params.n_sentences)
            .map(|_| {
                let jitter = rng.random_range(-3i64..=3);
                ((params.sentence_len as i64 - 1 + jitter).max(2)) as usize
            })
            .collect();
        let total: usize = content_lens.iter().sum();

        let mut pool: Vec<usize>;
        if params.vocab_size >= total {
            pool = (0..params.vocab_size).collect();
            pool.shuffle(&mut rng);
            pool.truncate(total);
        } else {
            pool = (0..total)
                .map(|_| rng.random_range(0..params.vocab_size))
                .collect();
        }

        let mut salient: Vec<bool> = (0..params.n_sentences)
            .map(|_| rng.random_bool(params.salient_fraction))
            .collect();
        if !salient.iter().any(|&s| s) {
            let forced = rng.random_range(0..params.n_sentences);
            salient[forced] = true;
        }

        let mut sentences = Vec::with_capacity(params.n_sentences);
        let mut summary = Vec::new();
        let mut cursor = 0usize;
        for (j, &len) in content_lens.iter().enumerate() {
            let content: Vec<String> = pool[cursor..cursor + len]
                .iter()
                .map(|w| format!("w{w}"))
                .collect();
            cursor += len;
            let marker = if salient[j] { SALIENT_MARKER } else { PLAIN_MARKER };
            let mut sentence = Vec::with_capacity(len + 1);
            sentence.push(marker.to_string());
            sentence.extend(content.iter().cloned());
            sentences.push(sentence);
            if salient[j] {
                summary.extend(content);
            }
        }
        docs.push(Document::new(format!("synth-{d:05}"), sentences, summary)?);
    }
    Ok(docs)
}

const SPLIT_SALT: u64 = 0x73706c6974;

/// Deterministic 0.8/0.1/0.1 split. Documents keep their original relative
/// order inside each part.
pub fn split_corpus(
    corpus: &[Document],
    seed: u64,
) -> Result<(Vec<Document>, Vec<Document>, Vec<Document>)> {
    let n = corpus.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!(
            "split_corpus: need at least 3 documents, got {n}"
        )));
    }
    let n_val = ((n as f64 * 0.1).round() as usize).max(1);
    let n_test = n_val;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT);
    indices.shuffle(&mut rng);

    let mut val: Vec<usize> = indices[..n_val].to_vec();
    let mut test: Vec<usize> = indices[n_val..n_val + n_test].to_vec();
    let mut train: Vec<usize> = indices[n_val + n_test..].to_vec();
    val.sort_unstable();
    test.sort_unstable();
    train.sort_unstable();

    let pick = |idx: &[usize]| idx.iter().map(|&i| corpus[i].clone()).collect();
    Ok((pick(&train), pick(&val), pick(&test)))
}
