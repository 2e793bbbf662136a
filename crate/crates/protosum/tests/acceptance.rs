//! Acceptance suite: one test per release criterion, each printing a single
//! `criterion N (...): PASS/FAIL` line with the measured numbers.
//!
//! Criteria 6 and 7 share one full training run (driven through the CLI
//! binary, exactly as a user would run it) guarded by a `OnceLock`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use protosum::abstractor::{AbstractorModel, DecoderSession};
use protosum::config::{AbstractorSection, ProtoGuide, RunConfig};
use protosum::corpus::{
    read_corpus, split_corpus, synth_corpus, tokenize, Document, SynthParams, Vocabulary,
    BOS, SALIENT_MARKER,
};
use protosum::extractor::{top_k_positions, ExtractorModel};
use protosum::infer::Summarizer;
use protosum::labeler::{align_lcs, bin_length, read_labels, select_oracle_sentences, LabeledExample};
use protosum::numerics::{load_checkpoint, primitive_grad_errors};
use protosum::rouge::{rouge_l, rouge_n, RougeScore};
use protosum::trainer::{guide_mass, probe_loss_grad_error};

fn report(n: usize, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n} ({name}): {} -- {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

fn tmp(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name)
}

fn run_cli(out: &Path, config: Option<&Path>, args: &[&str]) {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_protosum"));
    if let Some(cfg) = config {
        cmd.arg("--config").arg(cfg);
    }
    cmd.arg("--out").arg(out).args(args);
    let output = cmd.output().expect("spawn protosum");
    assert!(
        output.status.success(),
        "protosum {args:?} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

// ---------------------------------------------------------------- criterion 1

fn brute_scores(overlap: f64, n_cand: f64, n_ref: f64) -> RougeScore {
    if n_cand == 0.0 || n_ref == 0.0 {
        return RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        };
    }
    let precision = overlap / n_cand;
    let recall = overlap / n_ref;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    RougeScore {
        precision,
        recall,
        f1,
    }
}

/// Exhaustive clipped n-gram overlap via full multiset maps.
fn brute_rouge_n(cand: &[u32], refr: &[u32], n: usize) -> RougeScore {
    if cand.len() < n || refr.len() < n {
        return brute_scores(0.0, 0.0, 0.0);
    }
    let grams = |s: &[u32]| -> BTreeMap<Vec<u32>, usize> {
        let mut m = BTreeMap::new();
        for w in s.windows(n) {
            *m.entry(w.to_vec()).or_insert(0) += 1;
        }
        m
    };
    let c = grams(cand);
    let r = grams(refr);
    let overlap: usize = c
        .iter()
        .map(|(g, &k)| k.min(*r.get(g).unwrap_or(&0)))
        .sum();
    brute_scores(
        overlap as f64,
        (cand.len() - n + 1) as f64,
        (refr.len() - n + 1) as f64,
    )
}

/// LCS by the full quadratic table, no rolling-row shortcut.
fn brute_rouge_l(cand: &[u32], refr: &[u32]) -> RougeScore {
    if cand.is_empty() || refr.is_empty() {
        return brute_scores(0.0, 0.0, 0.0);
    }
    let (m, n) = (cand.len(), refr.len());
    let mut table = vec![vec![0usize; n + 1]; m + 1];
    for i in 1..=m {
        for j in 1..=n {
            table[i][j] = if cand[i - 1] == refr[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    brute_scores(table[m][n] as f64, m as f64, n as f64)
}

fn close(a: RougeScore, b: RougeScore) -> bool {
    (a.precision - b.precision).abs() <= 1e-12
        && (a.recall - b.recall).abs() <= 1e-12
        && (a.f1 - b.f1).abs() <= 1e-12
}

#[test]
fn c1_rouge_matches_bruteforce_reference() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce0001);
    let mut checked = 0usize;
    let mut all_match = true;
    for _ in 0..200 {
        let draw = |rng: &mut ChaCha8Rng| -> Vec<u32> {
            let len = rng.random_range(1..=40);
            (0..len).map(|_| rng.random_range(0..20u32)).collect()
        };
        let cand = draw(&mut rng);
        let refr = draw(&mut rng);
        for n in [1usize, 2] {
            all_match &= close(rouge_n(&cand, &refr, n), brute_rouge_n(&cand, &refr, n));
        }
        all_match &= close(rouge_l(&cand, &refr), brute_rouge_l(&cand, &refr));
        checked += 3;
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = all_match && secs < 5.0;
    report(
        1,
        "rouge equals brute-force reference",
        ok,
        &format!("{checked} comparisons within 1e-12 in {secs:.2}s (limit 5s)"),
    );
}

// ---------------------------------------------------------------- criterion 2

#[test]
fn c2_gradients_match_finite_differences() {
    let start = Instant::now();
    let mut worst_primitive = 0.0f64;
    let mut worst_full = 0.0f64;
    let mut ops = 0usize;
    for seed in 0..10u64 {
        for (_, err) in primitive_grad_errors(seed).expect("primitive sweep") {
            worst_primitive = worst_primitive.max(err);
            ops += 1;
        }
        for guide in [ProtoGuide::Decoder, ProtoGuide::Encoder] {
            let err = probe_loss_grad_error(guide, seed).expect("probe loss gradcheck");
            worst_full = worst_full.max(err);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let ok = worst_primitive < 1e-6 && worst_full < 1e-4 && secs < 120.0;
    report(
        2,
        "gradient checks",
        ok,
        &format!(
            "{ops} primitive checks worst {worst_primitive:.2e} (< 1e-6), \
             full loss worst {worst_full:.2e} (< 1e-4), 10 seeds in {secs:.1}s (limit 120s)"
        ),
    );
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn c3_decode_step_distribution_invariants() {
    let config = AbstractorSection {
        d_word: 8,
        d_model: 8,
        n_blocks: 1,
        n_heads: 2,
        ffn: 16,
        ..AbstractorSection::default()
    };
    let (vocab_size, output_size) = (30usize, 12usize);
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce0003);
    let mut ok = true;
    let mut worst_p = 0.0f64;
    for trial in 0..100u64 {
        let model = AbstractorModel::init(vocab_size, output_size, &config, trial);
        let src_len = rng.random_range(4..=14);
        let source_ids: Vec<usize> = (0..src_len)
            .map(|_| rng.random_range(0..vocab_size))
            .collect();
        let mut positions: Vec<usize> = (0..src_len).collect();
        positions.shuffle(&mut rng);
        let n_proto = rng.random_range(1..=src_len);
        let mut proto = positions[..n_proto].to_vec();
        proto.sort_unstable();
        let session = DecoderSession::new(&model, &source_ids, &proto).expect("session");
        let mut prefix = vec![BOS as usize];
        for _ in 0..rng.random_range(0..4usize) {
            prefix.push(rng.random_range(0..vocab_size));
        }
        let step = session.step(&prefix).expect("step");
        let ext = session.ext();

        // Support law: the distribution vector covers exactly the output
        // vocabulary plus one slot per distinct out-of-vocabulary source id,
        // so any off-support id would need a slot that does not exist.
        let extra: HashSet<usize> = source_ids
            .iter()
            .copied()
            .filter(|&id| id >= output_size)
            .collect();
        ok &= step.p.len() == output_size + extra.len();
        ok &= step.p.len() == ext.size();
        ok &= (output_size..ext.size()).all(|e| source_ids.contains(&ext.input_id(e)));

        let sum_p: f64 = step.p.iter().sum();
        worst_p = worst_p.max((sum_p - 1.0).abs());
        ok &= (sum_p - 1.0).abs() <= 1e-6;
        ok &= step.p.iter().all(|&x| x.is_finite() && x >= 0.0);

        let sum_l: f64 = step.lambda.iter().sum();
        ok &= (sum_l - 1.0).abs() <= 1e-9;
        ok &= step.lambda.iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x));

        for (row, want_len) in [(&step.alpha_c, src_len), (&step.alpha_p, n_proto)] {
            ok &= row.len() == want_len;
            let s: f64 = row.iter().sum();
            ok &= (s - 1.0).abs() <= 1e-9;
            ok &= row.iter().all(|&x| x.is_finite() && x >= 0.0);
        }
    }
    report(
        3,
        "decode-step distribution invariants",
        ok,
        &format!("100 random-parameter steps, worst |sum p - 1| = {worst_p:.2e}"),
    );
}

// ---------------------------------------------------------------- criterion 4

fn doc(sentences: &[&str], summary: &str) -> Document {
    Document::new(
        "golden".to_string(),
        sentences.iter().map(|s| tokenize(s)).collect(),
        tokenize(summary),
    )
    .expect("golden document")
}

#[test]
fn c4_labeler_goldens_and_synthetic_label_f1() {
    let mut ok = true;

    // Oracle sentence selection over three disjoint sentences.
    let d = doc(&["a b", "c d", "e f"], "e f");
    ok &= select_oracle_sentences(&d) == vec![2];
    let d = doc(&["a b", "c d", "e f"], "a b e f");
    ok &= select_oracle_sentences(&d) == vec![0, 2];
    let d = doc(&["a b", "c d", "e f"], "q r");
    ok &= select_oracle_sentences(&d) == vec![0];

    // Alignment backtrace preferences.
    let s = |v: &[&str]| -> Vec<String> { v.iter().map(|t| t.to_string()).collect() };
    ok &= align_lcs(&s(&["a", "b", "c"]), &s(&["a", "b", "c"]), &[0, 1, 2])
        == vec![(0, 0), (1, 1), (2, 2)];
    ok &= align_lcs(&s(&["a", "b"]), &s(&["a", "x", "b"]), &[0, 1, 2]) == vec![(0, 0), (1, 2)];
    ok &= align_lcs(&s(&["a", "a"]), &s(&["a"]), &[0]) == vec![(0, 0)];

    // Length binning.
    ok &= bin_length(33) == 35 && bin_length(32) == 30 && bin_length(1) == 5;

    // On generated corpora the word labels must recover the generator's
    // salience mask exactly.
    let params = SynthParams {
        vocab_size: 80,
        n_sentences: 4,
        sentence_len: 10,
        salient_fraction: 0.5,
    };
    let docs = synth_corpus(99, 150, &params).expect("synth corpus");
    let (mut tp, mut fp, mut missed) = (0usize, 0usize, 0usize);
    for d in &docs {
        let ex = protosum::labeler::label_document(d).expect("label");
        let mut mask: Vec<u8> = Vec::with_capacity(d.source_len());
        for sentence in &d.sentences {
            let salient = sentence[0] == SALIENT_MARKER;
            mask.push(0);
            mask.extend(std::iter::repeat_n(u8::from(salient), sentence.len() - 1));
        }
        for (&got, &want) in ex.labels.iter().zip(&mask) {
            match (got, want) {
                (1, 1) => tp += 1,
                (1, 0) => fp += 1,
                (0, 1) => missed += 1,
                _ => {}
            }
        }
    }
    let f1 = 2.0 * tp as f64 / (2.0 * tp as f64 + fp as f64 + missed as f64);
    ok &= f1 == 1.0;
    report(
        4,
        "labeler goldens and synthetic label recovery",
        ok,
        &format!("goldens exact, label F1 vs generator mask = {f1} over 150 documents"),
    );
}

// ---------------------------------------------------------------- criterion 5

/// Independent selection by repeated linear argmax, no sorting.
fn argmax_select(scores: &[f64], k: usize) -> Vec<usize> {
    let mut taken = vec![false; scores.len()];
    for _ in 0..k.min(scores.len()) {
        let mut best: Option<usize> = None;
        for i in 0..scores.len() {
            if taken[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(b) if scores[i] > scores[b] => Some(i),
                keep => keep,
            };
        }
        taken[best.expect("k <= len")] = true;
    }
    (0..scores.len()).filter(|&i| taken[i]).collect()
}

/// Exhaustive subset search: maximal total score, ties to the
/// lexicographically smallest position list.
fn exhaustive_best(scores: &[f64], k: usize) -> Vec<usize> {
    let l = scores.len();
    let mut best: Option<(f64, Vec<usize>)> = None;
    for mask in 0u32..(1 << l) {
        if mask.count_ones() as usize != k {
            continue;
        }
        let subset: Vec<usize> = (0..l).filter(|&i| mask >> i & 1 == 1).collect();
        let total: f64 = subset.iter().map(|&i| scores[i]).sum();
        best = match best {
            None => Some((total, subset)),
            Some((t, s)) if total > t || (total == t && subset < s) => Some((total, subset)),
            keep => keep,
        };
    }
    best.expect("k <= len").1
}

#[test]
fn c5_prototype_topk_matches_bruteforce() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce0005);
    let mut ok = true;

    // Random vectors with heavy score ties.
    for _ in 0..500 {
        let l = rng.random_range(1..=50);
        let scores: Vec<f64> = (0..l).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
        let k = rng.random_range(1..=l);
        let candidates: Vec<usize> = (0..l).collect();
        let got = top_k_positions(&scores, &candidates, k);
        ok &= got == argmax_select(&scores, k);
        ok &= got.windows(2).all(|w| w[0] < w[1]);
    }

    // Exhaustive order-preservation and tie-break audit on short vectors.
    let mut exhaustive_cases = 0usize;
    for l in 1..=8usize {
        for trial in 0..30 {
            let scores: Vec<f64> = if trial == 0 {
                vec![0.5; l]
            } else {
                (0..l).map(|_| rng.random_range(0..3) as f64 / 4.0).collect()
            };
            for k in 1..=l {
                let got = top_k_positions(&scores, &(0..l).collect::<Vec<_>>(), k);
                ok &= got == exhaustive_best(&scores, k);
                ok &= got.windows(2).all(|w| w[0] < w[1]);
                exhaustive_cases += 1;
            }
        }
    }
    report(
        5,
        "prototype top-K selection",
        ok,
        &format!("500 random vectors (L <= 50) plus {exhaustive_cases} exhaustive subset checks (L <= 8)"),
    );
}

// ------------------------------------------------------- criteria 6 and 7

struct Pipeline {
    out: PathBuf,
    build_secs: f64,
    extractor_val_f1: f64,
    rouge1_f1: f64,
}

static PIPELINE: OnceLock<Pipeline> = OnceLock::new();

fn eval_row(path: &Path, metric: &str) -> RougeScore {
    let text = fs::read_to_string(path).expect("read eval csv");
    for line in text.lines() {
        if line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',');
        if parts.next() == Some(metric) {
            let mut next = || -> f64 { parts.next().expect("field").parse().expect("float") };
            return RougeScore {
                precision: next(),
                recall: next(),
                f1: next(),
            };
        }
    }
    panic!("metric {metric} missing from {}", path.display());
}

/// Full training run at the default configuration, through the CLI binary.
fn pipeline() -> &'static Pipeline {
    PIPELINE.get_or_init(|| {
        let out = tmp("acceptance_e2e");
        let _ = fs::remove_dir_all(&out);
        let start = Instant::now();
        for cmd in [
            "synth",
            "label",
            "train-extractor",
            "gen-prototypes",
            "train-abstractor",
            "eval",
        ] {
            run_cli(&out, None, &[cmd]);
        }
        let build_secs = start.elapsed().as_secs_f64();
        let (_, meta) = load_checkpoint(&out.join("extractor")).expect("extractor checkpoint");
        let extractor_val_f1 = meta
            .get("val_f1")
            .expect("val_f1 in checkpoint meta")
            .parse()
            .expect("val_f1 parses");
        let rouge1_f1 = eval_row(&out.join("eval.csv"), "rouge1").f1;
        Pipeline {
            out,
            build_secs,
            extractor_val_f1,
            rouge1_f1,
        }
    })
}

/// Corpus, labeled examples, and models exactly as the pipeline run left them.
struct PipelineState {
    config: RunConfig,
    docs: Vec<Document>,
    examples: Vec<LabeledExample>,
    vocab: Vocabulary,
    extractor: ExtractorModel,
    abstractor: AbstractorModel,
    abstractor_meta: BTreeMap<String, String>,
}

fn load_pipeline_state(out: &Path) -> PipelineState {
    let config = RunConfig::default();
    let docs: Vec<Document> = read_corpus(&out.join("corpus.jsonl"))
        .expect("corpus")
        .into_iter()
        .map(|d| d.truncate(config.corpus.truncate).expect("truncate"))
        .collect();
    let examples = read_labels(&out.join("labels.jsonl"), &docs).expect("labels");
    let vocab = Vocabulary::load(&out.join("vocab.json")).expect("vocab");
    let extractor = ExtractorModel::load(&out.join("extractor")).expect("extractor");
    let (abstractor, abstractor_meta) =
        AbstractorModel::load(&out.join("abstractor")).expect("abstractor");
    PipelineState {
        config,
        docs,
        examples,
        vocab,
        extractor,
        abstractor,
        abstractor_meta,
    }
}

#[test]
fn c6_end_to_end_training_reaches_thresholds() {
    let p = pipeline();
    let state = load_pipeline_state(&p.out);

    // Converged attention must concentrate on the aligned source positions:
    // mean mass at least 10x the uniform 1/L baseline, on held-out data.
    let (_, val_docs, _) = split_corpus(&state.docs, state.config.seed).expect("split");
    let val_ids: HashSet<&str> = val_docs.iter().map(|d| d.id.as_str()).collect();
    let val_ex: Vec<LabeledExample> = state
        .examples
        .into_iter()
        .filter(|ex| val_ids.contains(ex.doc.id.as_str()))
        .collect();
    let uniform: f64 = val_ex
        .iter()
        .map(|ex| 1.0 / ex.doc.source_len() as f64)
        .sum::<f64>()
        / val_ex.len() as f64;
    let mass = guide_mass(&state.abstractor, &state.vocab, &val_ex).expect("guide mass");

    let ok = p.extractor_val_f1 >= 0.95
        && p.rouge1_f1 >= 0.85
        && p.build_secs <= 1800.0
        && mass >= 10.0 * uniform;
    report(
        6,
        "end-to-end training quality",
        ok,
        &format!(
            "extractor val F1 {:.4} (>= 0.95), rouge1 F1 {:.4} (>= 0.85), \
             guide mass {:.3} (>= {:.3}), pipeline {:.0}s (limit 1800s)",
            p.extractor_val_f1,
            p.rouge1_f1,
            mass,
            10.0 * uniform,
            p.build_secs
        ),
    );
}

#[test]
fn c7_prototype_size_controls_output_length() {
    let p = pipeline();
    let state = load_pipeline_state(&p.out);
    let (_, _, test_docs) = split_corpus(&state.docs, state.config.seed).expect("split");
    let summarizer = Summarizer {
        extractor: &state.extractor,
        abstractor: &state.abstractor,
        avg_ref_len: state
            .abstractor_meta
            .get("avg_ref_len")
            .and_then(|s| s.parse().ok()),
        n_beam: state.config.infer.n_beam,
    };

    let ks = [5usize, 10, 15, 20];
    let mut mean_lens = Vec::new();
    let mut recalls = Vec::new();
    let mut precisions = Vec::new();
    let mut within5 = Vec::new();
    for &k in &ks {
        let mut lens = Vec::with_capacity(test_docs.len());
        let (mut rec, mut prec) = (0.0, 0.0);
        let mut near = 0usize;
        for d in &test_docs {
            let out = summarizer.summarize(&state.vocab, d, Some(k)).expect("summarize");
            let len = out.summary.len();
            lens.push(len as f64);
            if len.abs_diff(k) <= 5 {
                near += 1;
            }
            let score = rouge_l(&out.summary, &d.summary);
            rec += score.recall;
            prec += score.precision;
        }
        let n = test_docs.len() as f64;
        mean_lens.push(lens.iter().sum::<f64>() / n);
        recalls.push(rec / n);
        precisions.push(prec / n);
        within5.push(near as f64 / n);
    }

    let increasing = mean_lens.windows(2).all(|w| w[0] < w[1]);
    let near_target = within5.iter().all(|&f| f >= 0.8);
    let recall_monotone = recalls.windows(2).all(|w| w[1] >= w[0]);
    let precision_monotone = precisions.windows(2).all(|w| w[1] <= w[0]);
    let ok = increasing && near_target && recall_monotone && precision_monotone;
    report(
        7,
        "length control across K",
        ok,
        &format!(
            "mean lengths {:?} (strictly increasing: {increasing}), \
             within-5 fractions {:?} (all >= 0.8: {near_target}), \
             recall {:?} non-decreasing: {recall_monotone}, \
             precision {:?} non-increasing: {precision_monotone}",
            mean_lens
                .iter()
                .map(|x| (x * 100.0).round() / 100.0)
                .collect::<Vec<_>>(),
            within5,
            recalls
                .iter()
                .map(|x| (x * 1e4).round() / 1e4)
                .collect::<Vec<_>>(),
            precisions
                .iter()
                .map(|x| (x * 1e4).round() / 1e4)
                .collect::<Vec<_>>()
        ),
    );
}

// ---------------------------------------------------------------- criterion 8

fn dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut map = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("read out dir") {
        let entry = entry.expect("dir entry");
        let name = entry.file_name().to_string_lossy().into_owned();
        map.insert(name, fs::read(entry.path()).expect("read artifact"));
    }
    map
}

#[test]
fn c8_reruns_are_byte_identical() {
    let config_path = tmp("acceptance_det.toml");
    fs::write(
        &config_path,
        r#"
seed = 7

[corpus]
n_docs = 30
vocab_size = 40
n_sentences = 3
sentence_len = 8
salient_fraction = 0.6

[extractor]
d_word = 16
d_model = 16
n_blocks = 1
n_heads = 2
ffn = 32

[extractor_train]
epochs = 1
batch_size = 8
warmup = 10

[abstractor]
d_word = 16
d_model = 16
n_blocks = 1
n_heads = 2
ffn = 32
max_decode_len = 30

[abstractor_train]
epochs = 1
batch_size = 8
warmup = 10

[infer]
n_beam = 2
"#,
    )
    .expect("write config");

    let run_all = |out: &Path| {
        let _ = fs::remove_dir_all(out);
        for args in [
            vec!["synth"],
            vec!["label"],
            vec!["train-extractor"],
            vec!["gen-prototypes"],
            vec!["train-abstractor"],
            vec!["summarize"],
            vec!["eval"],
            vec!["length-sweep", "--ks", "3,5"],
        ] {
            run_cli(out, Some(&config_path), &args);
        }
    };
    let (out_a, out_b) = (tmp("det_a"), tmp("det_b"));
    run_all(&out_a);
    run_all(&out_b);

    let (a, b) = (dir_bytes(&out_a), dir_bytes(&out_b));
    let mut ok = a.keys().collect::<Vec<_>>() == b.keys().collect::<Vec<_>>();
    for name in [
        "corpus.jsonl",
        "labels.jsonl",
        "vocab.json",
        "extractor.json",
        "extractor.bin",
        "abstractor.json",
        "abstractor.bin",
        "extractor_train.csv",
        "abstractor_train.csv",
        "summaries.jsonl",
        "eval.csv",
        "length_sweep.csv",
    ] {
        ok &= a.contains_key(name);
    }
    let mut identical = 0usize;
    for (name, bytes) in &a {
        if b.get(name) == Some(bytes) {
            identical += 1;
        } else {
            ok = false;
            println!("artifact {name} differs between reruns");
        }
    }
    report(
        8,
        "rerun determinism",
        ok,
        &format!(
            "{identical}/{} artifacts byte-identical across two full pipeline runs",
            a.len()
        ),
    );
}
