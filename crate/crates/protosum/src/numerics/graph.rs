//! Arena-based computation graph with reverse-mode automatic
//! differentiation over dense 64-bit matrices.
//!
//! Every tensor is a 2-D `ndarray` array; scalars are (1,1), row vectors
//! (1,n), column vectors (n,1). Nodes are appended in creation order, so
//! the arena order is already topological and `backward` is one reverse
//! sweep. Graphs are built per example and thrown away; parameters live
//! outside the graph and enter as leaves.

use crate::{Error, Result};
use ndarray::{concatenate, s, Array2, Axis};

pub type NodeId = usize;

/// Additive mask value for attention: large enough that exp underflows to
/// exactly zero after the row-max shift, without producing NaN the way an
/// actual -inf would when a whole row is masked.
pub const MASK_NEG: f64 = -1e30;

/// Probabilities are clamped to this floor before any log, so a zero under
/// the mixture can never produce an infinite loss.
pub const LOG_FLOOR: f64 = 1e-12;
const LAYER_NORM_EPS: f64 = 1e-9;

enum Op {
    Leaf,
    Add(NodeId, NodeId),
    /// (m,n) + (1,n), broadcast over rows.
    AddRow(NodeId, NodeId),
    /// Hadamard product of same-shape matrices.
    Mul(NodeId, NodeId),
    /// (m,n) * (1,n), broadcast over rows.
    MulRow(NodeId, NodeId),
    /// (m,n) * (m,1), broadcast over columns.
    MulColVec(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    /// a · b^T without materializing the transpose.
    MatMulNT(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    /// ln(max(x, floor)); gradient is zero below the floor.
    LogFloor(NodeId),
    SoftmaxRows(NodeId),
    /// Row-wise normalization (x - mean) / std, before any affine.
    LayerNormRows(NodeId),
    Embedding { table: NodeId, ids: Vec<usize> },
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    MeanAll(NodeId),
    SumAll(NodeId),
    /// Gathers entries (row, col) into a (k,1) column.
    GatherPairs { src: NodeId, pairs: Vec<(usize, usize)> },
    /// Mean binary cross-entropy from logits against constant targets.
    BceLogits { logits: NodeId, targets: Array2<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
    /// Extra forward state some ops need for backward (layer norm keeps
    /// per-row inverse std here).
    aux: Option<Array2<f64>>,
}

pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

fn dims(a: &Array2<f64>) -> String {
    format!("({},{})", a.nrows(), a.ncols())
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Graph {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<f64> {
        &self.nodes[id].value
    }

    /// Gradient of the last `backward` loss w.r.t. node `id`. Zero for
    /// nodes the loss does not depend on.
    pub fn grad(&self, id: NodeId) -> Array2<f64> {
        match &self.grads[id] {
            Some(g) => g.clone(),
            None => Array2::zeros(self.nodes[id].value.dim()),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> NodeId {
        debug_assert!(
            value.iter().all(|v| v.is_finite()),
            "non-finite value produced by node {}",
            self.nodes.len()
        );
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            aux: None,
        });
        self.grads.push(None);
        self.nodes.len() - 1
    }

    fn requires(&self, id: NodeId) -> bool {
        self.nodes[id].requires_grad
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> NodeId {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Array2::from_elem((1, 1), value))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.dim() != vb.dim() {
            return Err(Error::shape("add", format!("{} vs {}", dims(va), dims(vb))));
        }
        let value = va + vb;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[row].value);
        if vb.nrows() != 1 || va.ncols() != vb.ncols() {
            return Err(Error::shape(
                "add_row",
                format!("{} vs {}", dims(va), dims(vb)),
            ));
        }
        let value = va + vb;
        let rg = self.requires(a) || self.requires(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.dim() != vb.dim() {
            return Err(Error::shape("mul", format!("{} vs {}", dims(va), dims(vb))));
        }
        let value = va * vb;
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[row].value);
        if vb.nrows() != 1 || va.ncols() != vb.ncols() {
            return Err(Error::shape(
                "mul_row",
                format!("{} vs {}", dims(va), dims(vb)),
            ));
        }
        let value = va * vb;
        let rg = self.requires(a) || self.requires(row);
        Ok(self.push(value, Op::MulRow(a, row), rg))
    }

    pub fn mul_colvec(&mut self, a: NodeId, col: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[col].value);
        if vb.ncols() != 1 || va.nrows() != vb.nrows() {
            return Err(Error::shape(
                "mul_colvec",
                format!("{} vs {}", dims(va), dims(vb)),
            ));
        }
        let value = va * vb;
        let rg = self.requires(a) || self.requires(col);
        Ok(self.push(value, Op::MulColVec(a, col), rg))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let value = &self.nodes[a].value * factor;
        let rg = self.requires(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.ncols() != vb.nrows() {
            return Err(Error::shape(
                "matmul",
                format!("{} vs {}", dims(va), dims(vb)),
            ));
        }
        let value = va.dot(vb);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.ncols() != vb.ncols() {
            return Err(Error::shape(
                "matmul_nt",
                format!("{} vs {}", dims(va), dims(vb)),
            ));
        }
        let value = va.dot(&vb.t());
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(value, Op::MatMulNT(a, b), rg))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(|v| v.max(0.0));
        let rg = self.requires(a);
        self.push(value, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(stable_sigmoid);
        let rg = self.requires(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    pub fn log_floor(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a].value.mapv(|v| v.max(LOG_FLOOR).ln());
        let rg = self.requires(a);
        self.push(value, Op::LogFloor(a), rg)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let src = &self.nodes[a].value;
        let mut value = src.clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        let rg = self.requires(a);
        self.push(value, Op::SoftmaxRows(a), rg)
    }

    pub fn layer_norm_rows(&mut self, a: NodeId) -> NodeId {
        let src = &self.nodes[a].value;
        let n = src.ncols() as f64;
        let mut value = src.clone();
        let mut inv_std = Array2::zeros((src.nrows(), 1));
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[[i, 0]] = inv;
            row.mapv_inplace(|v| (v - mean) * inv);
        }
        let rg = self.requires(a);
        let id = self.push(value, Op::LayerNormRows(a), rg);
        self.nodes[id].aux = Some(inv_std);
        id
    }

    pub fn embedding(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let vt = &self.nodes[table].value;
        if let Some(&bad) = ids.iter().find(|&&i| i >= vt.nrows()) {
            return Err(Error::shape(
                "embedding",
                format!("id {bad} out of range for table {}", dims(vt)),
            ));
        }
        if ids.is_empty() {
            return Err(Error::shape("embedding", "empty id list".to_string()));
        }
        let mut value = Array2::zeros((ids.len(), vt.ncols()));
        for (i, &id) in ids.iter().enumerate() {
            value.row_mut(i).assign(&vt.row(id));
        }
        let rg = self.requires(table);
        Ok(self.push(
            value,
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        ))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::shape("concat_cols", "no inputs".to_string()));
        }
        let rows = self.nodes[parts[0]].value.nrows();
        for &p in parts {
            if self.nodes[p].value.nrows() != rows {
                return Err(Error::shape(
                    "concat_cols",
                    format!(
                        "row mismatch: {} vs {}",
                        dims(&self.nodes[parts[0]].value),
                        dims(&self.nodes[p].value)
                    ),
                ));
            }
        }
        let views: Vec<_> = parts.iter().map(|&p| self.nodes[p].value.view()).collect();
        let value = concatenate(Axis(1), &views)
            .map_err(|e| Error::shape("concat_cols", e.to_string()))?;
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> Result<NodeId> {
        let va = &self.nodes[a].value;
        if start >= end || end > va.ncols() {
            return Err(Error::shape(
                "slice_cols",
                format!("range {start}..{end} of {}", dims(va)),
            ));
        }
        let value = va.slice(s![.., start..end]).to_owned();
        let rg = self.requires(a);
        Ok(self.push(value, Op::SliceCols(a, start, end), rg))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let va = &self.nodes[a].value;
        let value = Array2::from_elem((1, 1), va.sum() / va.len() as f64);
        let rg = self.requires(a);
        self.push(value, Op::MeanAll(a), rg)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let value = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        let rg = self.requires(a);
        self.push(value, Op::SumAll(a), rg)
    }

    pub fn gather_pairs(&mut self, src: NodeId, pairs: &[(usize, usize)]) -> Result<NodeId> {
        let vs = &self.nodes[src].value;
        if pairs.is_empty() {
            return Err(Error::shape("gather_pairs", "no pairs".to_string()));
        }
        if let Some(&(r, c)) = pairs.iter().find(|&&(r, c)| r >= vs.nrows() || c >= vs.ncols()) {
            return Err(Error::shape(
                "gather_pairs",
                format!("index ({r},{c}) out of range for {}", dims(vs)),
            ));
        }
        let mut value = Array2::zeros((pairs.len(), 1));
        for (i, &(r, c)) in pairs.iter().enumerate() {
            value[[i, 0]] = vs[[r, c]];
        }
        let rg = self.requires(src);
        Ok(self.push(
            value,
            Op::GatherPairs {
                src,
                pairs: pairs.to_vec(),
            },
            rg,
        ))
    }

    /// Mean element-wise binary cross-entropy computed directly from
    /// logits: max(z,0) - z·t + ln(1 + exp(-|z|)).
    pub fn bce_logits(&mut self, logits: NodeId, targets: &Array2<f64>) -> Result<NodeId> {
        let vz = &self.nodes[logits].value;
        if vz.dim() != targets.dim() {
            return Err(Error::shape(
                "bce_logits",
                format!("{} vs {}", dims(vz), dims(targets)),
            ));
        }
        let total: f64 = vz
            .iter()
            .zip(targets.iter())
            .map(|(&z, &t)| z.max(0.0) - z * t + (-z.abs()).exp().ln_1p())
            .sum();
        let value = Array2::from_elem((1, 1), total / vz.len() as f64);
        let rg = self.requires(logits);
        Ok(self.push(
            value,
            Op::BceLogits {
                logits,
                targets: targets.clone(),
            },
            rg,
        ))
    }

    /// Reverse-mode sweep from a scalar loss node. Gradients accumulate in
    /// the graph and are read back with `grad`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.nodes[loss].value.dim() != (1, 1) {
            return Err(Error::InvalidInput(format!(
                "backward needs a scalar loss, got shape {}",
                dims(&self.nodes[loss].value)
            )));
        }
        for g in self.grads.iter_mut() {
            *g = None;
        }
        self.grads[loss] = Some(Array2::ones((1, 1)));

        for id in (0..=loss).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let g = match self.grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            debug_assert!(
                g.iter().all(|v| v.is_finite()),
                "non-finite gradient at node {id}"
            );
            self.dispatch_backward(id, &g);
            self.grads[id] = Some(g);
        }
        Ok(())
    }

    fn accumulate(&mut self, id: NodeId, delta: Array2<f64>) {
        if !self.nodes[id].requires_grad {
            return;
        }
        match &mut self.grads[id] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn dispatch_backward(&mut self, id: NodeId, g: &Array2<f64>) {
        // Ops are matched by moving cheap copies of the input ids out of the
        // node first so the borrow on `self.nodes` ends before accumulation.
        enum Plan {
            None,
            One(NodeId, Array2<f64>),
            Two(NodeId, Array2<f64>, NodeId, Array2<f64>),
            Many(Vec<(NodeId, Array2<f64>)>),
        }
        let plan = {
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => Plan::None,
                Op::Add(a, b) => Plan::Two(*a, g.clone(), *b, g.clone()),
                Op::AddRow(a, row) => {
                    let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    Plan::Two(*a, g.clone(), *row, db)
                }
                Op::Mul(a, b) => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    Plan::Two(*a, g * vb, *b, g * va)
                }
                Op::MulRow(a, row) => {
                    let va = &self.nodes[*a].value;
                    let vrow = &self.nodes[*row].value;
                    let da = g * vrow;
                    let db = (g * va).sum_axis(Axis(0)).insert_axis(Axis(0));
                    Plan::Two(*a, da, *row, db)
                }
                Op::MulColVec(a, col) => {
                    let va = &self.nodes[*a].value;
                    let vcol = &self.nodes[*col].value;
                    let da = g * vcol;
                    let dc = (g * va).sum_axis(Axis(1)).insert_axis(Axis(1));
                    Plan::Two(*a, da, *col, dc)
                }
                Op::Scale(a, factor) => Plan::One(*a, g * *factor),
                Op::MatMul(a, b) => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    Plan::Two(*a, g.dot(&vb.t()), *b, va.t().dot(g))
                }
                Op::MatMulNT(a, b) => {
                    let va = &self.nodes[*a].value;
                    let vb = &self.nodes[*b].value;
                    Plan::Two(*a, g.dot(vb), *b, g.t().dot(va))
                }
                Op::Relu(a) => {
                    let mask = node.value.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
                    Plan::One(*a, g * &mask)
                }
                Op::Sigmoid(a) => {
                    let dy = node.value.mapv(|y| y * (1.0 - y));
                    Plan::One(*a, g * &dy)
                }
                Op::LogFloor(a) => {
                    let vx = &self.nodes[*a].value;
                    let dx = vx.mapv(|x| if x > LOG_FLOOR { 1.0 / x } else { 0.0 });
                    Plan::One(*a, g * &dx)
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut da = g * y;
                    for (mut row, yrow) in da.rows_mut().into_iter().zip(y.rows()) {
                        let dot: f64 = row.sum();
                        row.iter_mut()
                            .zip(yrow.iter())
                            .for_each(|(d, &yv)| *d -= dot * yv);
                    }
                    Plan::One(*a, da)
                }
                Op::LayerNormRows(a) => {
                    let y = &node.value;
                    let inv_std = node.aux.as_ref().expect("layer norm aux");
                    let n = y.ncols() as f64;
                    let mut da = Array2::zeros(y.dim());
                    for i in 0..y.nrows() {
                        let grow = g.row(i);
                        let yrow = y.row(i);
                        let g_mean = grow.sum() / n;
                        let gy_mean = grow
                            .iter()
                            .zip(yrow.iter())
                            .map(|(&gv, &yv)| gv * yv)
                            .sum::<f64>()
                            / n;
                        let inv = inv_std[[i, 0]];
                        for j in 0..y.ncols() {
                            da[[i, j]] = inv * (grow[j] - g_mean - yrow[j] * gy_mean);
                        }
                    }
                    Plan::One(*a, da)
                }
                Op::Embedding { table, ids } => {
                    let vt = &self.nodes[*table].value;
                    let mut dt = Array2::zeros(vt.dim());
                    for (i, &tok) in ids.iter().enumerate() {
                        let mut row = dt.row_mut(tok);
                        row += &g.row(i);
                    }
                    Plan::One(*table, dt)
                }
                Op::ConcatCols(parts) => {
                    let mut plans = Vec::with_capacity(parts.len());
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        plans.push((p, g.slice(s![.., offset..offset + w]).to_owned()));
                        offset += w;
                    }
                    Plan::Many(plans)
                }
                Op::SliceCols(a, start, end) => {
                    let va = &self.nodes[*a].value;
                    let mut da = Array2::zeros(va.dim());
                    da.slice_mut(s![.., *start..*end]).assign(g);
                    Plan::One(*a, da)
                }
                Op::MeanAll(a) => {
                    let va = &self.nodes[*a].value;
                    let factor = g[[0, 0]] / va.len() as f64;
                    Plan::One(*a, Array2::from_elem(va.dim(), factor))
                }
                Op::SumAll(a) => {
                    let va = &self.nodes[*a].value;
                    Plan::One(*a, Array2::from_elem(va.dim(), g[[0, 0]]))
                }
                Op::GatherPairs { src, pairs } => {
                    let vs = &self.nodes[*src].value;
                    let mut ds = Array2::zeros(vs.dim());
                    for (i, &(r, c)) in pairs.iter().enumerate() {
                        ds[[r, c]] += g[[i, 0]];
                    }
                    Plan::One(*src, ds)
                }
                Op::BceLogits { logits, targets } => {
                    let vz = &self.nodes[*logits].value;
                    let scale = g[[0, 0]] / vz.len() as f64;
                    let mut dz = Array2::zeros(vz.dim());
                    for ((d, &z), &t) in dz.iter_mut().zip(vz.iter()).zip(targets.iter()) {
                        *d = scale * (stable_sigmoid(z) - t);
                    }
                    Plan::One(*logits, dz)
                }
            }
        };
        match plan {
            Plan::None => {}
            Plan::One(a, da) => self.accumulate(a, da),
            Plan::Two(a, da, b, db) => {
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Plan::Many(plans) => {
                for (p, dp) in plans {
                    self.accumulate(p, dp);
                }
            }
        }
    }
}

fn stable_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Scaled dot-product attention over already-projected inputs, split into
/// `n_heads` column blocks. Returns the concatenated per-head contexts
/// (callers apply the output projection) and every head's attention
/// weights, head 0 first; the copy mechanism reads head 0 of the last
/// block.
pub fn multi_head_attention(
    g: &mut Graph,
    q: NodeId,
    k: NodeId,
    v: NodeId,
    n_heads: usize,
    mask: Option<NodeId>,
) -> Result<(NodeId, Vec<NodeId>)> {
    let d = g.value(q).ncols();
    if n_heads == 0 || !d.is_multiple_of(n_heads) {
        return Err(Error::shape(
            "multi_head_attention",
            format!("model dim {d} not divisible by {n_heads} heads"),
        ));
    }
    if g.value(k).ncols() != d || g.value(v).ncols() != d {
        return Err(Error::shape(
            "multi_head_attention",
            format!(
                "q/k/v widths {} / {} / {}",
                d,
                g.value(k).ncols(),
                g.value(v).ncols()
            ),
        ));
    }
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut contexts = Vec::with_capacity(n_heads);
    let mut weights = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice_cols(q, lo, hi)?;
        let kh = g.slice_cols(k, lo, hi)?;
        let vh = g.slice_cols(v, lo, hi)?;
        let scores = g.matmul_nt(qh, kh)?;
        let mut scaled = g.scale(scores, scale);
        if let Some(m) = mask {
            scaled = g.add(scaled, m)?;
        }
        let w = g.softmax_rows(scaled);
        let ctx = g.matmul(w, vh)?;
        weights.push(w);
        contexts.push(ctx);
    }
    let output = g.concat_cols(&contexts)?;
    Ok((output, weights))
}
