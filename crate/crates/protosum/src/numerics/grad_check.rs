//! Central finite-difference validation of the reverse-mode gradients.

use super::graph::{multi_head_attention, Graph, NodeId, MASK_NEG};
use crate::Result;
use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

/// Compares backward gradients of `f` against central finite differences
/// at the given point. `f` must rebuild the same computation from fresh
/// leaves each call. Returns the maximum over all coordinates of
/// |analytic - numeric| / max(|analytic|, |numeric|, scale, 1e-8), where
/// scale is 1e-3 times the largest gradient magnitude anywhere: coordinates
/// a thousand times smaller than the dominant entry are judged against
/// difference noise at the gradient's own scale, since demanding per-entry
/// relative accuracy below the evaluation roundoff is meaningless.
pub fn grad_check(
    f: &dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId>,
    points: &[Array2<f64>],
    eps: f64,
) -> Result<f64> {
    assert!(eps > 0.0, "grad_check eps must be positive");
    let eval = |pts: &[Array2<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = pts.iter().map(|p| g.leaf(p.clone(), true)).collect();
        let loss = f(&mut g, &ids)?;
        Ok(g.value(loss)[[0, 0]])
    };

    let mut g = Graph::new();
    let ids: Vec<NodeId> = points.iter().map(|p| g.leaf(p.clone(), true)).collect();
    let loss = f(&mut g, &ids)?;
    g.backward(loss)?;
    let analytic: Vec<Array2<f64>> = ids.iter().map(|&i| g.grad(i)).collect();

    let mut work: Vec<Array2<f64>> = points.to_vec();
    let mut pairs: Vec<(f64, f64)> = Vec::new();
    for pi in 0..points.len() {
        for idx in 0..points[pi].len() {
            let slot = work[pi].as_slice_mut().expect("contiguous array");
            let orig = slot[idx];
            slot[idx] = orig + eps;
            let f_plus = eval(&work)?;
            work[pi].as_slice_mut().expect("contiguous array")[idx] = orig - eps;
            let f_minus = eval(&work)?;
            work[pi].as_slice_mut().expect("contiguous array")[idx] = orig;

            let numeric = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[pi].as_slice().expect("contiguous array")[idx];
            pairs.push((a, numeric));
        }
    }
    let scale = 1e-3
        * pairs
            .iter()
            .map(|&(a, n)| a.abs().max(n.abs()))
            .fold(0.0f64, f64::max);
    Ok(pairs
        .iter()
        .map(|&(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(scale).max(1e-8))
        .fold(0.0f64, f64::max))
}

/// Contracts a matrix output against fixed weights before the scalar
/// reduction, so gradient errors cannot cancel in a symmetric sum.
fn contracted(g: &mut Graph, out: NodeId, weights: &Array2<f64>) -> Result<NodeId> {
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w)?;
    Ok(g.sum_all(prod))
}

/// Runs a finite-difference check on every differentiable primitive with
/// seeded random inputs, at points away from the few non-smooth spots
/// (ReLU's kink, the log floor). Returns (op name, max relative error)
/// pairs, one per primitive.
pub fn primitive_grad_errors(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mat = |r: usize, c: usize| -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    };
    let mut results: Vec<(&'static str, f64)> = Vec::new();
    let eps = 1e-5;

    {
        let (a, b, w) = (mat(3, 4), mat(3, 4), mat(3, 4));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.add(ids[0], ids[1])?;
            contracted(g, out, &w)
        };
        results.push(("add", grad_check(&f, &[a, b], eps)?));
    }
    {
        let (a, r, w) = (mat(3, 4), mat(1, 4), mat(3, 4));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.add_row(ids[0], ids[1])?;
            contracted(g, out, &w)
        };
        results.push(("add_row", grad_check(&f, &[a, r], eps)?));
    }
    {
        let (a, b, w) = (mat(3, 4), mat(3, 4), mat(3, 4));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.mul(ids[0], ids[1])?;
            contracted(g, out, &w)
        };
        results.push(("mul", grad_check(&f, &[a, b], eps)?));
    }
    {
        let (a, r, w) = (mat(3, 4), mat(1, 4), mat(3, 4));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.mul_row(ids[0], ids[1])?;
            contracted(g, out, &w)
        };
        results.push(("mul_row", grad_check(&f, &[a, r], eps)?));
    }
    {
        let (a, c, w) = (mat(3, 4), mat(3, 1), mat(3, 4));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.mul_colvec(ids[0], ids[1])?;
            contracted(g, out, &w)
        };
        results.push(("mul_colvec", grad_check(&f, &[a, c], eps)?));
    }
    {
        let (a, w) = (mat(3, 4), mat(3, 4));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.scale(ids[0], -1.7);
            contracted(g, out, &w)
        };
        results.push(("scale", grad_check(&f, &[a], eps)?));
    }
    {
        let (a, b, w) = (mat(3, 4), mat(4, 2), mat(3, 2));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.matmul(ids[0], ids[1])?;
            contracted(g, out, &w)
        };
        results.push(("matmul", grad_check(&f, &[a, b], eps)?));
    }
    {
        let (a, b, w) = (mat(3, 4), mat(2, 4), mat(3, 2));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.matmul_nt(ids[0], ids[1])?;
            contracted(g, out, &w)
        };
        results.push(("matmul_nt", grad_check(&f, &[a, b], eps)?));
    }
    {
        // Inputs kept at least 0.2 away from ReLU's kink.
        let mut a = mat(3, 4);
        a.mapv_inplace(|x| x.signum() * (0.2 + 0.8 * x.abs()));
        let w = mat(3, 4);
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.relu(ids[0]);
            contracted(g, out, &w)
        };
        results.push(("relu", grad_check(&f, &[a], eps)?));
    }
    {
        let (a, w) = (mat(3, 4), mat(3, 4));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.sigmoid(ids[0]);
            contracted(g, out, &w)
        };
        results.push(("sigmoid", grad_check(&f, &[a], eps)?));
    }
    {
        // Positive inputs well above the floor.
        let mut a = mat(3, 4);
        a.mapv_inplace(|x| 1.0 + 0.5 * x);
        let w = mat(3, 4);
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.log_floor(ids[0]);
            contracted(g, out, &w)
        };
        results.push(("log_floor", grad_check(&f, &[a], eps)?));
    }
    {
        let (a, w) = (mat(3, 4), mat(3, 4));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.softmax_rows(ids[0]);
            contracted(g, out, &w)
        };
        results.push(("softmax_rows", grad_check(&f, &[a], eps)?));
    }
    {
        let (a, w) = (mat(3, 4), mat(3, 4));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.layer_norm_rows(ids[0]);
            contracted(g, out, &w)
        };
        results.push(("layer_norm_rows", grad_check(&f, &[a], eps)?));
    }
    {
        // A repeated id exercises gradient accumulation into one row.
        let (table, w) = (mat(6, 4), mat(4, 4));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.embedding(ids[0], &[2, 0, 5, 2])?;
            contracted(g, out, &w)
        };
        results.push(("embedding", grad_check(&f, &[table], eps)?));
    }
    {
        let (a, b, c, w) = (mat(3, 2), mat(3, 3), mat(3, 1), mat(3, 6));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.concat_cols(ids)?;
            contracted(g, out, &w)
        };
        results.push(("concat_cols", grad_check(&f, &[a, b, c], eps)?));
    }
    {
        let (a, w) = (mat(3, 5), mat(3, 3));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.slice_cols(ids[0], 1, 4)?;
            contracted(g, out, &w)
        };
        results.push(("slice_cols", grad_check(&f, &[a], eps)?));
    }
    {
        let a = mat(3, 4);
        let f = |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> { Ok(g.mean_all(ids[0])) };
        results.push(("mean_all", grad_check(&f, &[a], eps)?));
    }
    {
        let a = mat(3, 4);
        let f = |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> { Ok(g.sum_all(ids[0])) };
        results.push(("sum_all", grad_check(&f, &[a], eps)?));
    }
    {
        // A repeated pair exercises gradient accumulation into one cell.
        let (a, w) = (mat(4, 5), mat(4, 1));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let out = g.gather_pairs(ids[0], &[(0, 1), (2, 3), (2, 3), (3, 4)])?;
            contracted(g, out, &w)
        };
        results.push(("gather_pairs", grad_check(&f, &[a], eps)?));
    }
    {
        let mut logits = mat(4, 1);
        logits.mapv_inplace(|x| 2.0 * x);
        let targets = Array2::from_shape_vec((4, 1), vec![1.0, 0.0, 0.0, 1.0]).expect("shape");
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            g.bce_logits(ids[0], &targets)
        };
        results.push(("bce_logits", grad_check(&f, &[logits], eps)?));
    }
    {
        let (q, k, v, w) = (mat(3, 8), mat(4, 8), mat(4, 8), mat(3, 8));
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let (out, _) = multi_head_attention(g, ids[0], ids[1], ids[2], 2, None)?;
            contracted(g, out, &w)
        };
        results.push(("multi_head_attention", grad_check(&f, &[q, k, v], eps)?));
    }
    {
        let (q, k, v, w) = (mat(3, 8), mat(3, 8), mat(3, 8), mat(3, 8));
        let mask =
            Array2::from_shape_fn((3, 3), |(i, j)| if j > i { MASK_NEG } else { 0.0 });
        let f = move |g: &mut Graph, ids: &[NodeId]| -> Result<NodeId> {
            let m = g.constant(mask.clone());
            let (out, _) = multi_head_attention(g, ids[0], ids[1], ids[2], 2, Some(m))?;
            contracted(g, out, &w)
        };
        results.push(("multi_head_attention_masked", grad_check(&f, &[q, k, v], eps)?));
    }
    Ok(results)
}
