//! Prototype-guided encoder-decoder with a three-way copy/generate mixture.
//!
//! Two independent encoder stacks read the source and the prototype; a pair
//! of dual cross-attention stacks then reads each side over the other's
//! output, producing the source memory M^C and the prototype memory M^P.
//! The decoder runs two causal cross-attention stacks in sequence (first
//! over M^P, then over M^C) and mixes a generation distribution over the
//! output vocabulary with two copy distributions. The copy weights are the
//! first attention head of each decoder stack's last block, and a learned
//! three-way gate blends generate / copy-source / copy-prototype per step.

use crate::config::{AbstractorSection, ProtoGuide};
use crate::corpus::{Vocabulary, BOS, UNK};
use crate::layers::{
    causal_mask, cross_block, embed, encoder_block, init_cross_block, init_embedding,
    init_encoder_block,
};
use crate::numerics::{
    load_checkpoint, save_checkpoint, Graph, NodeId, ParamNodes, ParamSet, LOG_FLOOR,
};
use crate::{Error, Result, INIT_SALT};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

/// Per-document extended vocabulary: the fixed output vocabulary plus one
/// slot for every distinct source token that falls outside it, in order of
/// first occurrence. Copy attention can therefore place mass on any source
/// word, including words generation alone could never emit.
#[derive(Debug, Clone)]
pub struct ExtVocab {
    output_size: usize,
    /// Input-vocabulary id behind each extra slot.
    ext_ids: Vec<usize>,
    ext_of_input: HashMap<usize, usize>,
    /// Extended id of every source position.
    source_ext: Vec<usize>,
}

impl ExtVocab {
    pub fn build(output_size: usize, source_ids: &[usize]) -> ExtVocab {
        let mut ext_ids = Vec::new();
        let mut ext_of_input = HashMap::new();
        let mut source_ext = Vec::with_capacity(source_ids.len());
        for &id in source_ids {
            let ext = if id < output_size {
                id
            } else {
                *ext_of_input.entry(id).or_insert_with(|| {
                    ext_ids.push(id);
                    output_size + ext_ids.len() - 1
                })
            };
            source_ext.push(ext);
        }
        ExtVocab {
            output_size,
            ext_ids,
            ext_of_input,
            source_ext,
        }
    }

    pub fn size(&self) -> usize {
        self.output_size + self.ext_ids.len()
    }

    pub fn n_ext(&self) -> usize {
        self.ext_ids.len()
    }

    pub fn output_size(&self) -> usize {
        self.output_size
    }

    /// Extended id for an input-vocabulary id, if this document can express it.
    pub fn ext_id(&self, input_id: usize) -> Option<usize> {
        if input_id < self.output_size {
            Some(input_id)
        } else {
            self.ext_of_input.get(&input_id).copied()
        }
    }

    /// Scoring target for an input-vocabulary id; ids with no extended slot
    /// collapse to UNK.
    pub fn target_id(&self, input_id: usize) -> usize {
        self.ext_id(input_id).unwrap_or(UNK as usize)
    }

    /// Input-vocabulary id to feed back into the decoder after emitting `ext`.
    pub fn input_id(&self, ext: usize) -> usize {
        if ext < self.output_size {
            ext
        } else {
            self.ext_ids[ext - self.output_size]
        }
    }

    pub fn token<'a>(&self, ext: usize, vocab: &'a Vocabulary) -> &'a str {
        vocab.token(self.input_id(ext) as u32)
    }

    pub fn source_ext(&self) -> &[usize] {
        &self.source_ext
    }

    /// (L, size) 0/1 matrix scattering source positions onto extended ids.
    /// Every row has exactly one 1, so a normalized attention row maps to a
    /// normalized copy distribution.
    pub fn source_map(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.source_ext.len(), self.size()));
        for (l, &e) in self.source_ext.iter().enumerate() {
            m[[l, e]] = 1.0;
        }
        m
    }

    /// (K, size) 0/1 matrix scattering prototype slots onto extended ids.
    pub fn proto_map(&self, proto_positions: &[usize]) -> Array2<f64> {
        let mut m = Array2::zeros((proto_positions.len(), self.size()));
        for (k, &pos) in proto_positions.iter().enumerate() {
            m[[k, self.source_ext[pos]]] = 1.0;
        }
        m
    }
}

pub struct AbstractorModel {
    pub params: ParamSet,
    pub config: AbstractorSection,
    pub input_size: usize,
    pub output_size: usize,
}

impl AbstractorModel {
    pub fn init(
        input_size: usize,
        output_size: usize,
        config: &AbstractorSection,
        seed: u64,
    ) -> AbstractorModel {
        assert!(config.n_blocks >= 1, "abstractor needs at least one block");
        assert!(
            output_size <= input_size,
            "output vocabulary must be a prefix of the input vocabulary"
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ INIT_SALT);
        let mut params = ParamSet::new();
        init_embedding(
            &mut params,
            "emb",
            input_size,
            config.d_word,
            config.d_model,
            &mut rng,
        );
        for i in 0..config.n_blocks {
            init_encoder_block(&mut params, &format!("src{i}"), config.d_model, config.ffn, &mut rng);
        }
        for i in 0..config.n_blocks {
            init_encoder_block(
                &mut params,
                &format!("proto{i}"),
                config.d_model,
                config.ffn,
                &mut rng,
            );
        }
        for i in 0..config.n_blocks {
            init_cross_block(&mut params, &format!("dualsrc{i}"), config.d_model, config.ffn, &mut rng);
        }
        for i in 0..config.n_blocks {
            init_cross_block(
                &mut params,
                &format!("dualproto{i}"),
                config.d_model,
                config.ffn,
                &mut rng,
            );
        }
        for i in 0..config.n_blocks {
            init_cross_block(&mut params, &format!("deca{i}"), config.d_model, config.ffn, &mut rng);
        }
        for i in 0..config.n_blocks {
            init_cross_block(&mut params, &format!("decb{i}"), config.d_model, config.ffn, &mut rng);
        }
        params.init_uniform("gen.w", config.d_model, output_size, &mut rng);
        params.init_zeros("gen.b", 1, output_size);
        params.init_uniform("mix.w", 3 * config.d_model, 3, &mut rng);
        params.init_zeros("mix.b", 1, 3);
        AbstractorModel {
            params,
            config: config.clone(),
            input_size,
            output_size,
        }
    }

    /// Runs both encoder stacks and the dual cross stacks for one
    /// source/prototype pair. `proto_positions` are strictly increasing
    /// source positions, as produced by prototype extraction.
    pub fn joint_encode(
        &self,
        g: &mut Graph,
        nodes: &ParamNodes,
        source_ids: &[usize],
        proto_positions: &[usize],
    ) -> Result<EncodedPair> {
        if source_ids.is_empty() {
            return Err(Error::InvalidInput("empty source".into()));
        }
        if proto_positions.is_empty() {
            return Err(Error::InvalidInput("empty prototype".into()));
        }
        if proto_positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "prototype positions must be strictly increasing".into(),
            ));
        }
        let last = *proto_positions.last().unwrap();
        if last >= source_ids.len() {
            return Err(Error::InvalidInput(format!(
                "prototype position {last} outside source of length {}",
                source_ids.len()
            )));
        }
        let proto_ids: Vec<usize> = proto_positions.iter().map(|&p| source_ids[p]).collect();
        let (d, n_heads) = (self.config.d_model, self.config.n_heads);

        let mut e_c = embed(g, nodes, "emb", source_ids, d)?;
        for i in 0..self.config.n_blocks {
            e_c = encoder_block(g, nodes, &format!("src{i}"), e_c, n_heads)?;
        }
        let mut e_p = embed(g, nodes, "emb", &proto_ids, d)?;
        for i in 0..self.config.n_blocks {
            e_p = encoder_block(g, nodes, &format!("proto{i}"), e_p, n_heads)?;
        }

        let mut m_c = e_c;
        for i in 0..self.config.n_blocks {
            m_c = cross_block(g, nodes, &format!("dualsrc{i}"), m_c, e_p, n_heads, None)?.out;
        }
        let mut m_p = e_p;
        let mut dual_proto_heads = Vec::new();
        for i in 0..self.config.n_blocks {
            let blk = cross_block(g, nodes, &format!("dualproto{i}"), m_p, e_c, n_heads, None)?;
            m_p = blk.out;
            dual_proto_heads = blk.cross_heads;
        }

        Ok(EncodedPair {
            m_c,
            m_p,
            e_c,
            e_p,
            source_ids: source_ids.to_vec(),
            proto_positions: proto_positions.to_vec(),
            dual_proto_heads,
        })
    }

    /// Teacher-forced decoding of all prefix positions at once. `prefix_ids`
    /// are input-vocabulary ids starting with BOS; step t predicts the token
    /// following `prefix_ids[t]`.
    pub fn decode_all(
        &self,
        g: &mut Graph,
        nodes: &ParamNodes,
        enc: &EncodedPair,
        ext: &ExtVocab,
        prefix_ids: &[usize],
    ) -> Result<DecodeOutputs> {
        self.decode_with(g, nodes, enc.m_c, enc.m_p, &enc.proto_positions, ext, prefix_ids)
    }

    #[allow(clippy::too_many_arguments)]
    fn decode_with(
        &self,
        g: &mut Graph,
        nodes: &ParamNodes,
        m_c: NodeId,
        m_p: NodeId,
        proto_positions: &[usize],
        ext: &ExtVocab,
        prefix_ids: &[usize],
    ) -> Result<DecodeOutputs> {
        let t = prefix_ids.len();
        if t == 0 {
            return Err(Error::InvalidInput("empty decoder prefix".into()));
        }
        if t > self.config.max_decode_len {
            return Err(Error::InvalidInput(format!(
                "decoder prefix of length {t} exceeds max_decode_len {}",
                self.config.max_decode_len
            )));
        }
        let n_heads = self.config.n_heads;
        let mask = g.constant(causal_mask(t));

        let mut x = embed(g, nodes, "emb", prefix_ids, self.config.d_model)?;
        let mut alpha_p = None;
        for i in 0..self.config.n_blocks {
            let blk = cross_block(g, nodes, &format!("deca{i}"), x, m_p, n_heads, Some(mask))?;
            x = blk.out;
            alpha_p = Some(blk.cross_heads[0]);
        }
        let mut alpha_c = None;
        for i in 0..self.config.n_blocks {
            let blk = cross_block(g, nodes, &format!("decb{i}"), x, m_c, n_heads, Some(mask))?;
            x = blk.out;
            alpha_c = Some(blk.cross_heads[0]);
        }
        let (alpha_p, alpha_c) = (alpha_p.unwrap(), alpha_c.unwrap());
        let m_s = x;

        let gen_scores = g.matmul(m_s, nodes.get("gen.w")?)?;
        let gen_logits = g.add_row(gen_scores, nodes.get("gen.b")?)?;
        let p_g = g.softmax_rows(gen_logits);
        let p_g_ext = if ext.n_ext() > 0 {
            let zeros = g.constant(Array2::zeros((t, ext.n_ext())));
            g.concat_cols(&[p_g, zeros])?
        } else {
            p_g
        };

        let map_c = g.constant(ext.source_map());
        let p_c = g.matmul(alpha_c, map_c)?;
        let map_p = g.constant(ext.proto_map(proto_positions));
        let p_p = g.matmul(alpha_p, map_p)?;

        let c_c = g.matmul(alpha_c, m_c)?;
        let c_p = g.matmul(alpha_p, m_p)?;
        let mix_in = g.concat_cols(&[m_s, c_c, c_p])?;
        let mix_scores = g.matmul(mix_in, nodes.get("mix.w")?)?;
        let mix_logits = g.add_row(mix_scores, nodes.get("mix.b")?)?;
        let lambda = g.softmax_rows(mix_logits);

        let lam_g = g.slice_cols(lambda, 0, 1)?;
        let lam_c = g.slice_cols(lambda, 1, 2)?;
        let lam_p = g.slice_cols(lambda, 2, 3)?;
        let part_g = g.mul_colvec(p_g_ext, lam_g)?;
        let part_c = g.mul_colvec(p_c, lam_c)?;
        let part_p = g.mul_colvec(p_p, lam_p)?;
        let gc = g.add(part_g, part_c)?;
        let probs = g.add(gc, part_p)?;

        Ok(DecodeOutputs {
            probs,
            alpha_c,
            alpha_p,
            lambda,
            m_s,
        })
    }

    pub fn save(&self, prefix: &Path, extra_meta: &BTreeMap<String, String>) -> Result<()> {
        let mut meta = extra_meta.clone();
        meta.insert("kind".into(), "abstractor".into());
        meta.insert("d_word".into(), self.config.d_word.to_string());
        meta.insert("d_model".into(), self.config.d_model.to_string());
        meta.insert("n_blocks".into(), self.config.n_blocks.to_string());
        meta.insert("n_heads".into(), self.config.n_heads.to_string());
        meta.insert("ffn".into(), self.config.ffn.to_string());
        meta.insert("lambda1".into(), self.config.lambda1.to_string());
        meta.insert("lambda2".into(), self.config.lambda2.to_string());
        let guide = match self.config.proto_guide {
            ProtoGuide::Decoder => "decoder",
            ProtoGuide::Encoder => "encoder",
        };
        meta.insert("proto_guide".into(), guide.to_string());
        meta.insert("max_decode_len".into(), self.config.max_decode_len.to_string());
        meta.insert("input_size".into(), self.input_size.to_string());
        meta.insert("output_size".into(), self.output_size.to_string());
        save_checkpoint(prefix, &self.params, &meta)
    }

    /// Loads a model and returns the checkpoint metadata alongside it, so
    /// callers can read extra fields such as the stored reference length.
    pub fn load(prefix: &Path) -> Result<(AbstractorModel, BTreeMap<String, String>)> {
        let (params, meta) = load_checkpoint(prefix)?;
        if meta.get("kind").map(|s| s.as_str()) != Some("abstractor") {
            return Err(Error::Checkpoint(format!(
                "{} is not an abstractor checkpoint",
                prefix.display()
            )));
        }
        let get = |key: &str| -> Result<usize> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or bad meta field {key}")))
        };
        let get_f = |key: &str| -> Result<f64> {
            meta.get(key)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Checkpoint(format!("missing or bad meta field {key}")))
        };
        let proto_guide = match meta.get("proto_guide").map(|s| s.as_str()) {
            Some("decoder") => ProtoGuide::Decoder,
            Some("encoder") => ProtoGuide::Encoder,
            other => {
                return Err(Error::Checkpoint(format!(
                    "missing or bad meta field proto_guide: {other:?}"
                )))
            }
        };
        let config = AbstractorSection {
            d_word: get("d_word")?,
            d_model: get("d_model")?,
            n_blocks: get("n_blocks")?,
            n_heads: get("n_heads")?,
            ffn: get("ffn")?,
            lambda1: get_f("lambda1")?,
            lambda2: get_f("lambda2")?,
            proto_guide,
            max_decode_len: get("max_decode_len")?,
        };
        let model = AbstractorModel {
            params,
            config,
            input_size: get("input_size")?,
            output_size: get("output_size")?,
        };
        Ok((model, meta))
    }
}

/// Joint encoding of one source/prototype pair.
pub struct EncodedPair {
    /// Source memory after the dual stack, (L, d_model).
    pub m_c: NodeId,
    /// Prototype memory after the dual stack, (K, d_model).
    pub m_p: NodeId,
    /// Source encoder output before the dual stack, (L, d_model).
    pub e_c: NodeId,
    /// Prototype encoder output before the dual stack, (K, d_model).
    pub e_p: NodeId,
    pub source_ids: Vec<usize>,
    pub proto_positions: Vec<usize>,
    /// Cross-attention weights, one (K, L) node per head, from the last
    /// prototype-side dual block; head 0 is the encoder-side guide target.
    pub dual_proto_heads: Vec<NodeId>,
}

/// Teacher-forced decoder outputs over a whole prefix.
pub struct DecodeOutputs {
    /// Mixture distribution per step, (T, extended size).
    pub probs: NodeId,
    /// Source copy attention, head 0 of the last source-side block, (T, L).
    pub alpha_c: NodeId,
    /// Prototype copy attention, head 0 of the last prototype-side block, (T, K).
    pub alpha_p: NodeId,
    /// Mixture weights per step as [generate, copy-source, copy-prototype], (T, 3).
    pub lambda: NodeId,
    /// Final decoder states, (T, d_model).
    pub m_s: NodeId,
}

/// One decoding step's distributions, read out of the graph.
#[derive(Debug, Clone)]
pub struct StepOutput {
    /// Mixture probability over the extended vocabulary.
    pub p: Vec<f64>,
    /// Source copy attention row.
    pub alpha_c: Vec<f64>,
    /// Prototype copy attention row.
    pub alpha_p: Vec<f64>,
    /// [generate, copy-source, copy-prototype].
    pub lambda: [f64; 3],
    /// Final decoder state for the step.
    pub state: Vec<f64>,
}

/// Reads one row of every decoder output into plain vectors.
pub fn step_output(g: &Graph, outs: &DecodeOutputs, row: usize) -> StepOutput {
    let take = |id: NodeId| -> Vec<f64> { g.value(id).row(row).to_vec() };
    let lam = take(outs.lambda);
    StepOutput {
        p: take(outs.probs),
        alpha_c: take(outs.alpha_c),
        alpha_p: take(outs.alpha_p),
        lambda: [lam[0], lam[1], lam[2]],
        state: take(outs.m_s),
    }
}

/// Incremental decoding against a fixed encoded pair. The joint encoder runs
/// once; each step rebuilds only the decoder on top of the cached memories,
/// so beam search does not re-encode the document.
pub struct DecoderSession<'a> {
    model: &'a AbstractorModel,
    ext: ExtVocab,
    m_c: Array2<f64>,
    m_p: Array2<f64>,
    proto_positions: Vec<usize>,
}

impl<'a> DecoderSession<'a> {
    pub fn new(
        model: &'a AbstractorModel,
        source_ids: &[usize],
        proto_positions: &[usize],
    ) -> Result<DecoderSession<'a>> {
        let mut g = Graph::new();
        let nodes = ParamNodes::new(&model.params, &mut g);
        let enc = model.joint_encode(&mut g, &nodes, source_ids, proto_positions)?;
        Ok(DecoderSession {
            model,
            ext: ExtVocab::build(model.output_size, source_ids),
            m_c: g.value(enc.m_c).clone(),
            m_p: g.value(enc.m_p).clone(),
            proto_positions: proto_positions.to_vec(),
        })
    }

    pub fn ext(&self) -> &ExtVocab {
        &self.ext
    }

    /// Distribution over the next token after `prefix` (which starts at BOS).
    pub fn step(&self, prefix: &[usize]) -> Result<StepOutput> {
        let mut g = Graph::new();
        let nodes = ParamNodes::new(&self.model.params, &mut g);
        let m_c = g.constant(self.m_c.clone());
        let m_p = g.constant(self.m_p.clone());
        let outs = self.model.decode_with(
            &mut g,
            &nodes,
            m_c,
            m_p,
            &self.proto_positions,
            &self.ext,
            prefix,
        )?;
        Ok(step_output(&g, &outs, prefix.len() - 1))
    }
}

/// Decoder input for teacher forcing: BOS followed by all but the last target.
pub fn decoder_prefix(target_ids: &[usize]) -> Vec<usize> {
    let mut prefix = Vec::with_capacity(target_ids.len());
    prefix.push(BOS as usize);
    prefix.extend_from_slice(&target_ids[..target_ids.len() - 1]);
    prefix
}

/// Teacher-forced log-likelihood of a target sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceScore {
    pub total: f64,
    pub steps: Vec<f64>,
    /// Steps whose probability hit the floor before the log.
    pub n_floored: usize,
}

/// Scores `target_ids` (input-vocabulary ids, EOS included by the caller)
/// against the source and prototype in one teacher-forced pass.
pub fn sequence_logprob(
    model: &AbstractorModel,
    source_ids: &[usize],
    proto_positions: &[usize],
    target_ids: &[usize],
) -> Result<SequenceScore> {
    if target_ids.is_empty() {
        return Err(Error::InvalidInput("empty target".into()));
    }
    let mut g = Graph::new();
    let nodes = ParamNodes::new(&model.params, &mut g);
    let enc = model.joint_encode(&mut g, &nodes, source_ids, proto_positions)?;
    let ext = ExtVocab::build(model.output_size, source_ids);
    let prefix = decoder_prefix(target_ids);
    let outs = model.decode_all(&mut g, &nodes, &enc, &ext, &prefix)?;
    let pairs: Vec<(usize, usize)> = target_ids
        .iter()
        .enumerate()
        .map(|(t, &y)| (t, ext.target_id(y)))
        .collect();
    let gathered = g.gather_pairs(outs.probs, &pairs)?;
    let n_floored = g.value(gathered).iter().filter(|&&p| p < LOG_FLOOR).count();
    let logs = g.log_floor(gathered);
    let steps: Vec<f64> = g.value(logs).column(0).to_vec();
    Ok(SequenceScore {
        total: steps.iter().sum(),
        steps,
        n_floored,
    })
}
