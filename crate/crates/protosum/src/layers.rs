//! Transformer building blocks shared by the extractor and abstractor:
//! sinusoidal positional encoding, the embedding layer (table lookup, FC
//! projection, ReLU, positional term), and post-norm encoder/decoder
//! blocks. Every block's parameters are named "{prefix}.part.tensor" so
//! checkpoints stay readable.

use crate::numerics::{multi_head_attention, Graph, NodeId, ParamNodes, ParamSet, MASK_NEG};
use crate::Result;
use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

/// Sinusoidal positional encoding: even columns sin(pos / 10000^(2i/d)),
/// odd columns cos of the same angle.
pub fn positional_encoding(len: usize, d_model: usize) -> Array2<f64> {
    assert!(d_model.is_multiple_of(2), "positional encoding needs even d_model");
    Array2::from_shape_fn((len, d_model), |(pos, j)| {
        let i = (j / 2) as f64;
        let angle = pos as f64 / 10000f64.powf(2.0 * i / d_model as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Additive causal mask: 0 at or below the diagonal, large-negative above.
pub fn causal_mask(n: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |(i, j)| if j <= i { 0.0 } else { MASK_NEG })
}

pub fn init_embedding(
    params: &mut ParamSet,
    prefix: &str,
    vocab: usize,
    d_word: usize,
    d_model: usize,
    rng: &mut ChaCha8Rng,
) {
    params.init_uniform(&format!("{prefix}.table"), vocab, d_word, rng);
    params.init_uniform(&format!("{prefix}.proj_w"), d_word, d_model, rng);
    params.init_zeros(&format!("{prefix}.proj_b"), 1, d_model);
}

/// Embedding lookup -> FC to d_model -> ReLU -> + positional encoding.
pub fn embed(
    g: &mut Graph,
    nodes: &ParamNodes,
    prefix: &str,
    ids: &[usize],
    d_model: usize,
) -> Result<NodeId> {
    let table = nodes.get(&format!("{prefix}.table"))?;
    let proj_w = nodes.get(&format!("{prefix}.proj_w"))?;
    let proj_b = nodes.get(&format!("{prefix}.proj_b"))?;
    let looked = g.embedding(table, ids)?;
    let projected = g.matmul(looked, proj_w)?;
    let biased = g.add_row(projected, proj_b)?;
    let activated = g.relu(biased);
    let pe = g.constant(positional_encoding(ids.len(), d_model));
    g.add(activated, pe)
}

fn init_attention(params: &mut ParamSet, prefix: &str, d_model: usize, rng: &mut ChaCha8Rng) {
    for w in ["wq", "wk", "wv", "wo"] {
        params.init_uniform(&format!("{prefix}.{w}"), d_model, d_model, rng);
    }
}

fn init_layer_norm(params: &mut ParamSet, prefix: &str, d_model: usize) {
    params.insert(&format!("{prefix}.g"), Array2::ones((1, d_model)));
    params.init_zeros(&format!("{prefix}.b"), 1, d_model);
}

fn init_ffn(params: &mut ParamSet, prefix: &str, d_model: usize, ffn: usize, rng: &mut ChaCha8Rng) {
    params.init_uniform(&format!("{prefix}.w1"), d_model, ffn, rng);
    params.init_zeros(&format!("{prefix}.b1"), 1, ffn);
    params.init_uniform(&format!("{prefix}.w2"), ffn, d_model, rng);
    params.init_zeros(&format!("{prefix}.b2"), 1, d_model);
}

/// Self-attention-only block: x -> LN(x + MHA(x)) -> LN(· + FFN(·)).
pub fn init_encoder_block(
    params: &mut ParamSet,
    prefix: &str,
    d_model: usize,
    ffn: usize,
    rng: &mut ChaCha8Rng,
) {
    init_attention(params, &format!("{prefix}.attn"), d_model, rng);
    init_layer_norm(params, &format!("{prefix}.ln1"), d_model);
    init_ffn(params, &format!("{prefix}.ffn"), d_model, ffn, rng);
    init_layer_norm(params, &format!("{prefix}.ln2"), d_model);
}

/// Block with a cross-attention sublayer between self-attention and FFN;
/// used by the dual encoder stacks (no self mask) and both decoder stacks
/// (causal self mask).
pub fn init_cross_block(
    params: &mut ParamSet,
    prefix: &str,
    d_model: usize,
    ffn: usize,
    rng: &mut ChaCha8Rng,
) {
    init_attention(params, &format!("{prefix}.attn"), d_model, rng);
    init_layer_norm(params, &format!("{prefix}.ln1"), d_model);
    init_attention(params, &format!("{prefix}.cross"), d_model, rng);
    init_layer_norm(params, &format!("{prefix}.ln2"), d_model);
    init_ffn(params, &format!("{prefix}.ffn"), d_model, ffn, rng);
    init_layer_norm(params, &format!("{prefix}.ln3"), d_model);
}

fn layer_norm(g: &mut Graph, nodes: &ParamNodes, prefix: &str, x: NodeId) -> Result<NodeId> {
    let gamma = nodes.get(&format!("{prefix}.g"))?;
    let beta = nodes.get(&format!("{prefix}.b"))?;
    let normed = g.layer_norm_rows(x);
    let scaled = g.mul_row(normed, gamma)?;
    g.add_row(scaled, beta)
}

/// Projects q/k/v, runs multi-head attention, applies the output
/// projection. Returns the projected output and the per-head weights.
fn attention_sublayer(
    g: &mut Graph,
    nodes: &ParamNodes,
    prefix: &str,
    queries: NodeId,
    keys: NodeId,
    n_heads: usize,
    mask: Option<NodeId>,
) -> Result<(NodeId, Vec<NodeId>)> {
    let wq = nodes.get(&format!("{prefix}.wq"))?;
    let wk = nodes.get(&format!("{prefix}.wk"))?;
    let wv = nodes.get(&format!("{prefix}.wv"))?;
    let wo = nodes.get(&format!("{prefix}.wo"))?;
    let q = g.matmul(queries, wq)?;
    let k = g.matmul(keys, wk)?;
    let v = g.matmul(keys, wv)?;
    let (ctx, heads) = multi_head_attention(g, q, k, v, n_heads, mask)?;
    let out = g.matmul(ctx, wo)?;
    Ok((out, heads))
}

fn ffn_sublayer(g: &mut Graph, nodes: &ParamNodes, prefix: &str, x: NodeId) -> Result<NodeId> {
    let w1 = nodes.get(&format!("{prefix}.w1"))?;
    let b1 = nodes.get(&format!("{prefix}.b1"))?;
    let w2 = nodes.get(&format!("{prefix}.w2"))?;
    let b2 = nodes.get(&format!("{prefix}.b2"))?;
    let h = g.matmul(x, w1)?;
    let h = g.add_row(h, b1)?;
    let h = g.relu(h);
    let h = g.matmul(h, w2)?;
    g.add_row(h, b2)
}

pub fn encoder_block(
    g: &mut Graph,
    nodes: &ParamNodes,
    prefix: &str,
    x: NodeId,
    n_heads: usize,
) -> Result<NodeId> {
    let (attn, _) = attention_sublayer(g, nodes, &format!("{prefix}.attn"), x, x, n_heads, None)?;
    let res1 = g.add(x, attn)?;
    let h1 = layer_norm(g, nodes, &format!("{prefix}.ln1"), res1)?;
    let ff = ffn_sublayer(g, nodes, &format!("{prefix}.ffn"), h1)?;
    let res2 = g.add(h1, ff)?;
    layer_norm(g, nodes, &format!("{prefix}.ln2"), res2)
}

/// Output of a cross block: the block output plus the cross-attention
/// head weights (head 0 first), which the copy mechanism and the guide
/// losses read from the last block of each stack.
pub struct CrossBlockOut {
    pub out: NodeId,
    pub cross_heads: Vec<NodeId>,
}

pub fn cross_block(
    g: &mut Graph,
    nodes: &ParamNodes,
    prefix: &str,
    x: NodeId,
    memory: NodeId,
    n_heads: usize,
    self_mask: Option<NodeId>,
) -> Result<CrossBlockOut> {
    let (attn, _) =
        attention_sublayer(g, nodes, &format!("{prefix}.attn"), x, x, n_heads, self_mask)?;
    let res1 = g.add(x, attn)?;
    let h1 = layer_norm(g, nodes, &format!("{prefix}.ln1"), res1)?;
    let (cross, cross_heads) =
        attention_sublayer(g, nodes, &format!("{prefix}.cross"), h1, memory, n_heads, None)?;
    let res2 = g.add(h1, cross)?;
    let h2 = layer_norm(g, nodes, &format!("{prefix}.ln2"), res2)?;
    let ff = ffn_sublayer(g, nodes, &format!("{prefix}.ffn"), h2)?;
    let res3 = g.add(h2, ff)?;
    let out = layer_norm(g, nodes, &format!("{prefix}.ln3"), res3)?;
    Ok(CrossBlockOut { out, cross_heads })
}
