//! Pipeline driver: synthesize data, build pseudo-labels, train the
//! extractor and abstractor, decode, and report scores as plot-ready CSV.
//!
//! Every artifact embeds the config hash and seed (CSV `#` comments, JSONL
//! meta lines, checkpoint metadata), and re-running a command with the same
//! config reproduces it byte for byte. Exit codes: 0 success, 1 usage,
//! 2 missing dependency, 3 validation failure.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use protosum::abstractor::AbstractorModel;
use protosum::config::{ProtoGuide, RunConfig};
use protosum::corpus::{
    build_vocab, read_corpus, split_corpus, synth_corpus, write_corpus, write_meta_line, Document,
    SynthParams, Vocabulary,
};
use protosum::extractor::{train_extractor, score_words, ExtractorConfig, ExtractorModel};
use protosum::infer::{Summarizer, SummaryOutput};
use protosum::labeler::{
    bin_length, label_document, make_gold_prototype, read_labels, write_labels, LabeledExample,
};
use protosum::numerics::primitive_grad_errors;
use protosum::rouge::{rouge_l, rouge_n, RougeScore};
use protosum::trainer::{probe_loss_grad_error, train_abstractor};
use protosum::Error;

#[derive(Parser)]
#[command(
    name = "protosum",
    version,
    about = "Two-stage length-controllable summarization: prototype extraction plus copy-mixture generation"
)]
struct Cli {
    /// TOML run configuration; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Desired summary length for `summarize` (defaults to the calibrated
    /// average stored in the abstractor checkpoint).
    #[arg(long, global = true, value_name = "N")]
    k: Option<usize>,
    /// Output directory; beats the PROTOSUM_OUT env var, which beats the
    /// configured out_dir.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus.
    Synth,
    /// Build oracle sentences, alignments, length bins, and word labels.
    Label,
    /// Train the word-importance extractor (also builds the vocabulary).
    TrainExtractor,
    /// Write gold prototype positions into the label file.
    GenPrototypes,
    /// Train the prototype-guided abstractor.
    TrainAbstractor,
    /// Decode the test split and write summaries as JSONL.
    Summarize,
    /// Decode the test split at per-document gold lengths and score it.
    Eval {
        /// Score the references against themselves instead (metric check).
        #[arg(long)]
        self_test: bool,
    },
    /// Decode at several desired lengths and report ROUGE + length stats.
    LengthSweep {
        /// Comma-separated desired lengths.
        #[arg(long, value_delimiter = ',', default_value = "5,10,15,20")]
        ks: Vec<usize>,
    },
    /// Validate reverse-mode gradients against finite differences.
    GradCheck,
}

/// A failed command, carrying its process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(err: Error) -> Failure {
        let code = match err {
            Error::MissingPrototype(_) => 2,
            _ => 3,
        };
        Failure {
            code,
            message: err.to_string(),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = if err.use_stderr() { 1 } else { 0 };
            let _ = err.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    } else if let Ok(dir) = std::env::var("PROTOSUM_OUT") {
        if !dir.is_empty() {
            config.out_dir = PathBuf::from(dir);
        }
    }
    std::fs::create_dir_all(&config.out_dir)
        .map_err(|e| fail(3, format!("cannot create {}: {e}", config.out_dir.display())))?;
    let paths = ArtifactPaths::new(&config.out_dir);
    match cli.command {
        Command::Synth => cmd_synth(&config, &paths),
        Command::Label => cmd_label(&config, &paths),
        Command::TrainExtractor => cmd_train_extractor(&config, &paths),
        Command::GenPrototypes => cmd_gen_prototypes(&config, &paths),
        Command::TrainAbstractor => cmd_train_abstractor(&config, &paths),
        Command::Summarize => cmd_summarize(&config, &paths, cli.k),
        Command::Eval { self_test } => cmd_eval(&config, &paths, self_test),
        Command::LengthSweep { ks } => cmd_length_sweep(&config, &paths, &ks),
        Command::GradCheck => cmd_grad_check(&config),
    }
}

struct ArtifactPaths {
    corpus: PathBuf,
    labels: PathBuf,
    vocab: PathBuf,
    extractor: PathBuf,
    abstractor: PathBuf,
    extractor_log: PathBuf,
    abstractor_log: PathBuf,
    summaries: PathBuf,
    eval: PathBuf,
    sweep: PathBuf,
}

impl ArtifactPaths {
    fn new(out_dir: &Path) -> ArtifactPaths {
        ArtifactPaths {
            corpus: out_dir.join("corpus.jsonl"),
            labels: out_dir.join("labels.jsonl"),
            vocab: out_dir.join("vocab.json"),
            extractor: out_dir.join("extractor"),
            abstractor: out_dir.join("abstractor"),
            extractor_log: out_dir.join("extractor_train.csv"),
            abstractor_log: out_dir.join("abstractor_train.csv"),
            summaries: out_dir.join("summaries.jsonl"),
            eval: out_dir.join("eval.csv"),
            sweep: out_dir.join("length_sweep.csv"),
        }
    }
}

/// Provenance map embedded in every artifact.
fn run_meta(config: &RunConfig) -> BTreeMap<String, String> {
    BTreeMap::from([
        ("config_hash".to_string(), config.hash()),
        ("seed".to_string(), config.seed.to_string()),
    ])
}

/// Checkpoints live at `prefix.json` + `prefix.bin`.
fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn require(path: &Path, producer: &str) -> Result<(), Failure> {
    if path.exists() {
        Ok(())
    } else {
        Err(fail(
            2,
            format!(
                "{} not found; run `protosum {producer}` first",
                path.display()
            ),
        ))
    }
}

fn require_checkpoint(prefix: &Path, producer: &str) -> Result<(), Failure> {
    require(&with_suffix(prefix, ".json"), producer)?;
    require(&with_suffix(prefix, ".bin"), producer)
}

/// Reads the corpus and applies the configured source budget.
fn load_corpus(config: &RunConfig, paths: &ArtifactPaths) -> Result<Vec<Document>, Failure> {
    require(&paths.corpus, "synth")?;
    let docs = read_corpus(&paths.corpus)?;
    let budget = config.corpus.truncate;
    let mut out = Vec::with_capacity(docs.len());
    for doc in docs {
        out.push(doc.truncate(budget)?);
    }
    Ok(out)
}

/// Splits labeled examples along the corpus split, matching by document id.
fn split_examples(
    examples: &[LabeledExample],
    parts: (&[Document], &[Document]),
) -> Result<(Vec<LabeledExample>, Vec<LabeledExample>), Failure> {
    let by_id: HashMap<&str, &LabeledExample> =
        examples.iter().map(|ex| (ex.doc.id.as_str(), ex)).collect();
    let pick = |docs: &[Document]| -> Result<Vec<LabeledExample>, Failure> {
        docs.iter()
            .map(|d| {
                by_id
                    .get(d.id.as_str())
                    .map(|&ex| ex.clone())
                    .ok_or_else(|| {
                        fail(
                            2,
                            format!("no labels for document {}; run `protosum label` first", d.id),
                        )
                    })
            })
            .collect()
    };
    Ok((pick(parts.0)?, pick(parts.1)?))
}

fn open_csv(path: &Path, config: &RunConfig) -> Result<BufWriter<std::fs::File>, Failure> {
    let file = std::fs::File::create(path)
        .map_err(|e| fail(3, format!("cannot create {}: {e}", path.display())))?;
    let mut writer = BufWriter::new(file);
    writeln!(writer, "# config_hash {}", config.hash()).map_err(Error::from)?;
    writeln!(writer, "# seed {}", config.seed).map_err(Error::from)?;
    Ok(writer)
}

fn cmd_synth(config: &RunConfig, paths: &ArtifactPaths) -> CmdResult {
    let c = &config.corpus;
    let params = SynthParams {
        vocab_size: c.vocab_size,
        n_sentences: c.n_sentences,
        sentence_len: c.sentence_len,
        salient_fraction: c.salient_fraction,
    };
    let docs = synth_corpus(config.seed, c.n_docs, &params)?;
    write_corpus(&paths.corpus, &docs, &run_meta(config))?;
    println!("wrote {} documents to {}", docs.len(), paths.corpus.display());
    Ok(())
}

fn cmd_label(config: &RunConfig, paths: &ArtifactPaths) -> CmdResult {
    let docs = load_corpus(config, paths)?;
    let examples: Vec<LabeledExample> = docs
        .iter()
        .map(label_document)
        .collect::<Result<_, Error>>()?;
    write_labels(&paths.labels, &examples, &run_meta(config))?;
    let positives: usize = examples
        .iter()
        .flat_map(|ex| ex.labels.iter())
        .filter(|&&l| l == 1)
        .count();
    println!(
        "labeled {} documents ({} positive word labels) into {}",
        examples.len(),
        positives,
        paths.labels.display()
    );
    Ok(())
}

fn cmd_train_extractor(config: &RunConfig, paths: &ArtifactPaths) -> CmdResult {
    let docs = load_corpus(config, paths)?;
    require(&paths.labels, "label")?;
    let examples = read_labels(&paths.labels, &docs)?;
    let (train_docs, val_docs, _) = split_corpus(&docs, config.seed)?;
    let vocab = build_vocab(&train_docs, config.vocab.input_cap, config.vocab.output_cap)?;
    vocab.save(&paths.vocab)?;
    let (train_ex, val_ex) = split_examples(&examples, (&train_docs, &val_docs))?;

    let m = &config.extractor;
    let ext_config = ExtractorConfig {
        d_word: m.d_word,
        d_model: m.d_model,
        n_blocks: m.n_blocks,
        n_heads: m.n_heads,
        ffn: m.ffn,
    };
    let tp = config.extractor_train.to_params(config.seed);
    let trained = train_extractor(&train_ex, &val_ex, &vocab, &ext_config, &tp)?;

    let mut log = open_csv(&paths.extractor_log, config)?;
    writeln!(log, "step,lr,loss").map_err(Error::from)?;
    for r in &trained.log {
        writeln!(log, "{},{},{}", r.step, r.lr, r.loss).map_err(Error::from)?;
    }
    log.flush().map_err(Error::from)?;

    let mut meta = run_meta(config);
    meta.insert("val_f1".to_string(), trained.val_f1.to_string());
    trained.model.save(&paths.extractor, &meta)?;
    println!(
        "extractor saved to {}* (val loss {:.6}, val word F1 {:.4})",
        paths.extractor.display(),
        trained.best_val_loss,
        trained.val_f1
    );
    Ok(())
}

fn cmd_gen_prototypes(config: &RunConfig, paths: &ArtifactPaths) -> CmdResult {
    let docs = load_corpus(config, paths)?;
    require(&paths.labels, "label")?;
    require(&paths.vocab, "train-extractor")?;
    require_checkpoint(&paths.extractor, "train-extractor")?;
    let vocab = Vocabulary::load(&paths.vocab)?;
    let model = ExtractorModel::load(&paths.extractor)?;
    let mut examples = read_labels(&paths.labels, &docs)?;
    for ex in &mut examples {
        let scores = score_words(&model, &vocab, &ex.doc)?;
        let gold = make_gold_prototype(&ex.doc, &ex.oracle_sentences, &scores.weighted, ex.k)?;
        ex.gold_prototype_positions = Some(gold);
    }
    write_labels(&paths.labels, &examples, &run_meta(config))?;
    println!(
        "wrote gold prototypes for {} documents into {}",
        examples.len(),
        paths.labels.display()
    );
    Ok(())
}

fn cmd_train_abstractor(config: &RunConfig, paths: &ArtifactPaths) -> CmdResult {
    let docs = load_corpus(config, paths)?;
    require(&paths.labels, "label")?;
    require(&paths.vocab, "train-extractor")?;
    let vocab = Vocabulary::load(&paths.vocab)?;
    let examples = read_labels(&paths.labels, &docs)?;
    let (train_docs, val_docs, _) = split_corpus(&docs, config.seed)?;
    let (train_ex, val_ex) = split_examples(&examples, (&train_docs, &val_docs))?;

    let tp = config.abstractor_train.to_params(config.seed);
    let trained = train_abstractor(&train_ex, &val_ex, &vocab, &config.abstractor, &tp)?;

    let mut log = open_csv(&paths.abstractor_log, config)?;
    writeln!(log, "step,lr,main,attn_sum,attn_proto,total").map_err(Error::from)?;
    for r in &trained.log {
        writeln!(
            log,
            "{},{},{},{},{},{}",
            r.step, r.lr, r.main, r.attn_sum, r.attn_proto, r.total
        )
        .map_err(Error::from)?;
    }
    log.flush().map_err(Error::from)?;

    // The mean validation reference length calibrates K for the standard
    // (uncontrolled) summarize setting.
    let avg_ref_len = val_ex
        .iter()
        .map(|ex| ex.doc.summary.len() as f64)
        .sum::<f64>()
        / val_ex.len() as f64;
    let mut meta = run_meta(config);
    meta.insert("avg_ref_len".to_string(), avg_ref_len.to_string());
    trained.model.save(&paths.abstractor, &meta)?;
    println!(
        "abstractor saved to {}* (val loss {:.6}, avg reference length {:.2})",
        paths.abstractor.display(),
        trained.best_val_loss,
        avg_ref_len
    );
    Ok(())
}

/// Loads everything decoding needs. The summarizer borrows the models, so
/// the models are returned alongside and the caller keeps them alive.
struct DecodeSetup {
    vocab: Vocabulary,
    extractor: ExtractorModel,
    abstractor: AbstractorModel,
    avg_ref_len: Option<f64>,
    test_docs: Vec<Document>,
}

impl DecodeSetup {
    fn load(config: &RunConfig, paths: &ArtifactPaths) -> Result<DecodeSetup, Failure> {
        let docs = load_corpus(config, paths)?;
        require(&paths.vocab, "train-extractor")?;
        require_checkpoint(&paths.extractor, "train-extractor")?;
        require_checkpoint(&paths.abstractor, "train-abstractor")?;
        let vocab = Vocabulary::load(&paths.vocab)?;
        let extractor = ExtractorModel::load(&paths.extractor)?;
        let (abstractor, meta) = AbstractorModel::load(&paths.abstractor)?;
        let avg_ref_len = meta.get("avg_ref_len").and_then(|s| s.parse().ok());
        let (_, _, test_docs) = split_corpus(&docs, config.seed)?;
        Ok(DecodeSetup {
            vocab,
            extractor,
            abstractor,
            avg_ref_len,
            test_docs,
        })
    }

    fn summarizer(&self, config: &RunConfig) -> Summarizer<'_> {
        Summarizer {
            extractor: &self.extractor,
            abstractor: &self.abstractor,
            avg_ref_len: self.avg_ref_len,
            n_beam: config.infer.n_beam,
        }
    }
}

fn cmd_summarize(config: &RunConfig, paths: &ArtifactPaths, k: Option<usize>) -> CmdResult {
    let setup = DecodeSetup::load(config, paths)?;
    let summarizer = setup.summarizer(config);
    let file = std::fs::File::create(&paths.summaries)
        .map_err(|e| fail(3, format!("cannot create {}: {e}", paths.summaries.display())))?;
    let mut writer = BufWriter::new(file);
    write_meta_line(&mut writer, &run_meta(config))?;
    for doc in &setup.test_docs {
        let out = summarizer.summarize(&setup.vocab, doc, k)?;
        let record = serde_json::json!({
            "id": doc.id,
            "k": out.k,
            "prototype_positions": out.prototype_positions,
            "prototype_tokens": out.prototype_tokens,
            "summary": out.summary,
            "logprob": out.logprob,
            "repeated_trigrams": out.repeated_trigrams,
        });
        writeln!(writer, "{record}").map_err(Error::from)?;
    }
    writer.flush().map_err(Error::from)?;
    println!(
        "wrote {} summaries to {}",
        setup.test_docs.len(),
        paths.summaries.display()
    );
    Ok(())
}

/// Per-metric mean of per-document precision/recall/F1.
#[derive(Default)]
struct RougeMeans {
    r1: MeanScore,
    r2: MeanScore,
    rl: MeanScore,
}

#[derive(Default)]
struct MeanScore {
    precision: f64,
    recall: f64,
    f1: f64,
    n: usize,
}

impl MeanScore {
    fn push(&mut self, s: RougeScore) {
        self.precision += s.precision;
        self.recall += s.recall;
        self.f1 += s.f1;
        self.n += 1;
    }

    fn mean(&self) -> RougeScore {
        let n = self.n.max(1) as f64;
        RougeScore {
            precision: self.precision / n,
            recall: self.recall / n,
            f1: self.f1 / n,
        }
    }
}

impl RougeMeans {
    fn push(&mut self, candidate: &[String], reference: &[String]) {
        self.r1.push(rouge_n(candidate, reference, 1));
        self.r2.push(rouge_n(candidate, reference, 2));
        self.rl.push(rouge_l(candidate, reference));
    }
}

fn cmd_eval(config: &RunConfig, paths: &ArtifactPaths, self_test: bool) -> CmdResult {
    let mut means = RougeMeans::default();
    if self_test {
        let docs = load_corpus(config, paths)?;
        let (_, _, test_docs) = split_corpus(&docs, config.seed)?;
        for doc in &test_docs {
            means.push(&doc.summary, &doc.summary);
        }
    } else {
        let setup = DecodeSetup::load(config, paths)?;
        let summarizer = setup.summarizer(config);
        for doc in &setup.test_docs {
            let k = bin_length(doc.summary.len());
            let out = summarizer.summarize(&setup.vocab, doc, Some(k))?;
            means.push(&out.summary, &doc.summary);
        }
    }
    let mut writer = open_csv(&paths.eval, config)?;
    writeln!(writer, "metric,precision,recall,f1").map_err(Error::from)?;
    for (name, mean) in [
        ("rouge1", means.r1.mean()),
        ("rouge2", means.r2.mean()),
        ("rougeL", means.rl.mean()),
    ] {
        writeln!(writer, "{name},{},{},{}", mean.precision, mean.recall, mean.f1)
            .map_err(Error::from)?;
        println!(
            "{name}: precision {:.4} recall {:.4} f1 {:.4}",
            mean.precision, mean.recall, mean.f1
        );
    }
    writer.flush().map_err(Error::from)?;
    println!("wrote {}", paths.eval.display());
    Ok(())
}

fn cmd_length_sweep(config: &RunConfig, paths: &ArtifactPaths, ks: &[usize]) -> CmdResult {
    if ks.is_empty() || ks.contains(&0) {
        return Err(fail(3, "sweep lengths must be positive".to_string()));
    }
    let setup = DecodeSetup::load(config, paths)?;
    let summarizer = setup.summarizer(config);
    let mut writer = open_csv(&paths.sweep, config)?;
    writeln!(
        writer,
        "K,r1_p,r1_r,r1_f,r2_p,r2_r,r2_f,rl_p,rl_r,rl_f,len_mean,len_std"
    )
    .map_err(Error::from)?;
    for &k in ks {
        let mut means = RougeMeans::default();
        let mut lengths: Vec<f64> = Vec::with_capacity(setup.test_docs.len());
        for doc in &setup.test_docs {
            let out: SummaryOutput = summarizer.summarize(&setup.vocab, doc, Some(k))?;
            lengths.push(out.summary.len() as f64);
            means.push(&out.summary, &doc.summary);
        }
        let n = lengths.len() as f64;
        let len_mean = lengths.iter().sum::<f64>() / n;
        let len_std =
            (lengths.iter().map(|l| (l - len_mean).powi(2)).sum::<f64>() / n).sqrt();
        let (r1, r2, rl) = (means.r1.mean(), means.r2.mean(), means.rl.mean());
        writeln!(
            writer,
            "{k},{},{},{},{},{},{},{},{},{},{len_mean},{len_std}",
            r1.precision,
            r1.recall,
            r1.f1,
            r2.precision,
            r2.recall,
            r2.f1,
            rl.precision,
            rl.recall,
            rl.f1
        )
        .map_err(Error::from)?;
        println!(
            "K={k}: rougeL recall {:.4} precision {:.4}, length {:.2} +- {:.2}",
            rl.recall, rl.precision, len_mean, len_std
        );
    }
    writer.flush().map_err(Error::from)?;
    println!("wrote {}", paths.sweep.display());
    Ok(())
}

fn cmd_grad_check(config: &RunConfig) -> CmdResult {
    let mut worst = 0.0f64;
    let mut failed = false;
    for (name, err) in primitive_grad_errors(config.seed)? {
        let ok = err < 1e-6;
        failed |= !ok;
        worst = worst.max(err);
        println!(
            "{:28} {err:.3e}  {}",
            name,
            if ok { "ok" } else { "FAIL (>= 1e-6)" }
        );
    }
    for guide in [ProtoGuide::Decoder, ProtoGuide::Encoder] {
        let err = probe_loss_grad_error(guide, config.seed)?;
        let ok = err < 1e-4;
        failed |= !ok;
        worst = worst.max(err);
        let name = match guide {
            ProtoGuide::Decoder => "full_loss_decoder_guide",
            ProtoGuide::Encoder => "full_loss_encoder_guide",
        };
        println!(
            "{:28} {err:.3e}  {}",
            name,
            if ok { "ok" } else { "FAIL (>= 1e-4)" }
        );
    }
    println!("max relative error {worst:.3e}");
    if failed {
        return Err(fail(3, format!("gradient check failed (max {worst:.3e})")));
    }
    Ok(())
}
