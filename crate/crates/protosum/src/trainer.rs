//! Loss assembly and the training loop for the copy-mixture decoder.
//!
//! The generation loss is the mean negative log-likelihood of the reference
//! summary under the mixture distribution, plus two attention guide terms:
//! the source copy attention is pulled toward each summary word's aligned
//! source position, and the prototype attention toward the prototype slot
//! holding that position. Steps without an alignment are excluded from the
//! guide terms rather than given artificial targets.

use crate::abstractor::{decoder_prefix, AbstractorModel, ExtVocab};
use crate::config::{AbstractorSection, ProtoGuide, TrainParams};
use crate::corpus::{Vocabulary, EOS};
use crate::labeler::LabeledExample;
use crate::numerics::{AdamState, GradAccumulator, Graph, NodeId, ParamNodes};
use crate::{Error, Result, EPOCH_SALT};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

/// Scalar components of one example's training loss.
#[derive(Debug, Clone, PartialEq)]
pub struct GenLossBreakdown {
    pub main: f64,
    pub attn_sum: f64,
    pub attn_proto: f64,
    pub total: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

/// Per-step guide targets. Index t runs over target steps (summary words,
/// then EOS): `source[t]` is the aligned source position l(t) and `proto[t]`
/// the prototype slot whose source position equals l(t). Unaligned steps,
/// steps whose position missed the prototype cut, and the EOS step carry
/// `None` in the respective vector.
pub fn attention_targets(example: &LabeledExample) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let t_total = example.doc.summary.len() + 1;
    let mut source = vec![None; t_total];
    let mut proto = vec![None; t_total];
    let slot_of: HashMap<usize, usize> = example
        .gold_prototype_positions
        .iter()
        .flatten()
        .enumerate()
        .map(|(k, &pos)| (pos, k))
        .collect();
    for &(t, pos) in &example.alignment {
        source[t] = Some(pos);
        if let Some(&k) = slot_of.get(&pos) {
            proto[t] = Some(k);
        }
    }
    (source, proto)
}

/// -mean over targeted steps of log attention; a constant zero when no step
/// has a target.
fn guide_term(g: &mut Graph, weights: NodeId, pairs: &[(usize, usize)]) -> Result<NodeId> {
    if pairs.is_empty() {
        return Ok(g.scalar(0.0));
    }
    let gathered = g.gather_pairs(weights, pairs)?;
    let logs = g.log_floor(gathered);
    let mean = g.mean_all(logs);
    Ok(g.scale(mean, -1.0))
}

/// The total loss node for one example plus its scalar breakdown.
pub struct ExampleLoss {
    pub loss: NodeId,
    pub breakdown: GenLossBreakdown,
}

/// Builds the full training loss for one labeled example: teacher-forced
/// negative log-likelihood plus the two guide terms, weighted by the
/// configured lambdas.
pub fn gen_loss(
    g: &mut Graph,
    nodes: &ParamNodes,
    model: &AbstractorModel,
    vocab: &Vocabulary,
    example: &LabeledExample,
) -> Result<ExampleLoss> {
    let proto_positions = example
        .gold_prototype_positions
        .as_ref()
        .ok_or_else(|| Error::MissingPrototype(example.doc.id.clone()))?;
    let source_ids: Vec<usize> = example
        .doc
        .flat_source()
        .iter()
        .map(|t| vocab.id(t) as usize)
        .collect();
    let mut target_ids: Vec<usize> = example
        .doc
        .summary
        .iter()
        .map(|t| vocab.id(t) as usize)
        .collect();
    target_ids.push(EOS as usize);

    let enc = model.joint_encode(g, nodes, &source_ids, proto_positions)?;
    let ext = ExtVocab::build(model.output_size, &source_ids);
    let prefix = decoder_prefix(&target_ids);
    let outs = model.decode_all(g, nodes, &enc, &ext, &prefix)?;

    let nll_pairs: Vec<(usize, usize)> = target_ids
        .iter()
        .enumerate()
        .map(|(t, &y)| (t, ext.target_id(y)))
        .collect();
    let gathered = g.gather_pairs(outs.probs, &nll_pairs)?;
    let logs = g.log_floor(gathered);
    let mean = g.mean_all(logs);
    let main = g.scale(mean, -1.0);

    let (src_targets, proto_targets) = attention_targets(example);
    let src_pairs: Vec<(usize, usize)> = src_targets
        .iter()
        .enumerate()
        .filter_map(|(t, o)| o.map(|l| (t, l)))
        .collect();
    let attn_sum = guide_term(g, outs.alpha_c, &src_pairs)?;
    let attn_proto = match model.config.proto_guide {
        ProtoGuide::Decoder => {
            let pairs: Vec<(usize, usize)> = proto_targets
                .iter()
                .enumerate()
                .filter_map(|(t, o)| o.map(|k| (t, k)))
                .collect();
            guide_term(g, outs.alpha_p, &pairs)?
        }
        ProtoGuide::Encoder => {
            let pairs: Vec<(usize, usize)> = proto_targets
                .iter()
                .enumerate()
                .filter_map(|(t, o)| o.map(|k| (k, src_targets[t].unwrap())))
                .collect();
            guide_term(g, enc.dual_proto_heads[0], &pairs)?
        }
    };

    let weighted_sum = g.scale(attn_sum, model.config.lambda1);
    let weighted_proto = g.scale(attn_proto, model.config.lambda2);
    let partial = g.add(main, weighted_sum)?;
    let total = g.add(partial, weighted_proto)?;

    let breakdown = GenLossBreakdown {
        main: g.value(main)[[0, 0]],
        attn_sum: g.value(attn_sum)[[0, 0]],
        attn_proto: g.value(attn_proto)[[0, 0]],
        total: g.value(total)[[0, 0]],
        lambda1: model.config.lambda1,
        lambda2: model.config.lambda2,
    };
    Ok(ExampleLoss {
        loss: total,
        breakdown,
    })
}

type NamedGrads = std::collections::BTreeMap<String, ndarray::Array2<f64>>;

fn example_loss(
    model: &AbstractorModel,
    vocab: &Vocabulary,
    example: &LabeledExample,
    with_grads: bool,
) -> Result<(GenLossBreakdown, Option<NamedGrads>)> {
    let mut g = Graph::new();
    let nodes = ParamNodes::new(&model.params, &mut g);
    let out = gen_loss(&mut g, &nodes, model, vocab, example)?;
    if with_grads {
        g.backward(out.loss)?;
        Ok((out.breakdown, Some(nodes.grads(&g))))
    } else {
        Ok((out.breakdown, None))
    }
}

/// Mean total loss over a set of examples.
pub fn validation_loss(
    model: &AbstractorModel,
    vocab: &Vocabulary,
    examples: &[LabeledExample],
) -> Result<f64> {
    let mut total = 0.0;
    for ex in examples {
        total += example_loss(model, vocab, ex, false)?.0.total;
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Mean source-copy attention mass at the aligned source positions over all
/// targeted steps; the health metric the source guide loss optimizes. A
/// uniform model scores 1/L.
pub fn guide_mass(
    model: &AbstractorModel,
    vocab: &Vocabulary,
    examples: &[LabeledExample],
) -> Result<f64> {
    let mut mass = 0.0;
    let mut count = 0usize;
    for ex in examples {
        let proto_positions = ex
            .gold_prototype_positions
            .as_ref()
            .ok_or_else(|| Error::MissingPrototype(ex.doc.id.clone()))?;
        let source_ids: Vec<usize> = ex
            .doc
            .flat_source()
            .iter()
            .map(|t| vocab.id(t) as usize)
            .collect();
        let mut target_ids: Vec<usize> =
            ex.doc.summary.iter().map(|t| vocab.id(t) as usize).collect();
        target_ids.push(EOS as usize);

        let mut g = Graph::new();
        let nodes = ParamNodes::new(&model.params, &mut g);
        let enc = model.joint_encode(&mut g, &nodes, &source_ids, proto_positions)?;
        let ext = ExtVocab::build(model.output_size, &source_ids);
        let prefix = decoder_prefix(&target_ids);
        let outs = model.decode_all(&mut g, &nodes, &enc, &ext, &prefix)?;
        let alpha_c = g.value(outs.alpha_c);
        for &(t, pos) in &ex.alignment {
            mass += alpha_c[[t, pos]];
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput(
            "guide_mass: no aligned steps in the given examples".into(),
        ));
    }
    Ok(mass / count as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbsTrainRecord {
    pub step: u64,
    pub lr: f64,
    pub main: f64,
    pub attn_sum: f64,
    pub attn_proto: f64,
    pub total: f64,
}

pub struct TrainedAbstractor {
    pub model: AbstractorModel,
    pub log: Vec<AbsTrainRecord>,
    pub best_val_loss: f64,
}

/// Minimizes the mixture loss with Adam; gradients accumulate per example
/// into batch means. Keeps the best-validation parameters.
pub fn train_abstractor(
    train: &[LabeledExample],
    val: &[LabeledExample],
    vocab: &Vocabulary,
    config: &AbstractorSection,
    tp: &TrainParams,
) -> Result<TrainedAbstractor> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput(
            "abstractor training needs non-empty train and validation sets".into(),
        ));
    }
    for ex in train.iter().chain(val.iter()) {
        if ex.gold_prototype_positions.is_none() {
            return Err(Error::MissingPrototype(ex.doc.id.clone()));
        }
    }
    let mut model = AbstractorModel::init(vocab.len(), vocab.output_size(), config, tp.seed);
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
            let (mut main, mut attn_sum, mut attn_proto, mut total) = (0.0, 0.0, 0.0, 0.0);
            for &i in batch {
                let (bd, grads) = example_loss(&model, vocab, &train[i], true)?;
                assert!(
                    bd.total.is_finite(),
                    "non-finite abstractor loss at step {}",
                    adam.step + 1
                );
                main += bd.main;
                attn_sum += bd.attn_sum;
                attn_proto += bd.attn_proto;
                total += bd.total;
                acc.add(grads.expect("grads requested"));
            }
            let n = batch.len() as f64;
            let grads = acc.mean();
            for (name, grad) in &grads {
                assert!(
                    grad.iter().all(|v| v.is_finite()),
                    "non-finite gradient for {name} at step {}",
                    adam.step + 1
                );
            }
            adam.apply(&mut model.params, &grads);
            log.push(AbsTrainRecord {
                step: adam.step,
                lr: adam.lr(adam.step),
                main: main / n,
                attn_sum: attn_sum / n,
                attn_proto: attn_proto / n,
                total: total / n,
            });
        }
        let val_loss = validation_loss(&model, vocab, val)?;
        if val_loss < best_val {
            best_val = val_loss;
            best_params = model.params.clone();
        }
    }
    model.params = best_params;
    Ok(TrainedAbstractor {
        model,
        log,
        best_val_loss: best_val,
    })
}

/// Checks the full generation loss gradient on a fixed probe problem
/// (5 source words, 3 prototype words, 4 target steps, d_model 8, one
/// block, two heads) against central finite differences. Returns the
/// maximum relative error over every parameter coordinate.
pub fn probe_loss_grad_error(guide: ProtoGuide, seed: u64) -> Result<f64> {
    use crate::corpus::{build_vocab, tokenize, Document};
    use crate::labeler::label_document;
    use crate::numerics::grad_check;
    use ndarray::Array2;
    use std::collections::BTreeMap;

    let doc = Document::new(
        "probe".to_string(),
        vec![tokenize("aa bb cc dd ee")],
        tokenize("bb dd cc"),
    )?;
    let vocab = build_vocab(std::slice::from_ref(&doc), 100, 100)?;
    let mut ex = label_document(&doc)?;
    ex.gold_prototype_positions = Some(vec![1, 2, 3]);
    let config = AbstractorSection {
        d_word: 8,
        d_model: 8,
        n_blocks: 1,
        n_heads: 2,
        ffn: 16,
        proto_guide: guide,
        ..AbstractorSection::default()
    };
    let model = AbstractorModel::init(vocab.len(), vocab.output_size(), &config, seed);
    let names: Vec<String> = model.params.names().map(str::to_string).collect();
    let points: Vec<Array2<f64>> = names
        .iter()
        .map(|n| model.params.get(n).expect("listed name").clone())
        .collect();
    let f = |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
        let map: BTreeMap<String, NodeId> =
            names.iter().cloned().zip(ids.iter().copied()).collect();
        let nodes = ParamNodes::from_map(map);
        Ok(gen_loss(g, &nodes, &model, &vocab, &ex)?.loss)
    };
    grad_check(&f, &points, 1e-4)
}
