//! Graph builders for every scoring path and loss term.
//!
//! Entity inputs are row indices; batched outputs have one row per index.

use crate::engine::{Graph, Matrix, ParamId, Var};

use super::params::{Mask, Mlp, ModelParams, Side};

/// Runs `x` through the layers of `mlp`.
pub fn mlp_forward(g: &mut Graph, mlp: &Mlp, x: Var) -> Var {
    let mut h = x;
    let last = mlp.layers.len() - 1;
    for (l, layer) in mlp.layers.iter().enumerate() {
        let w = g.param(layer.w);
        let b = g.param(layer.b);
        h = g.affine(h, w, b);
        if l < last || !mlp.linear_output {
            h = g.relu(h);
        }
    }
    h
}

fn rows(idx: &[u32]) -> Vec<usize> {
    idx.iter().map(|&i| i as usize).collect()
}

/// Embedding rows of `side` for `idx`.
pub fn embeddings(g: &mut Graph, p: &ModelParams, side: Side, idx: &[u32]) -> Var {
    g.gather(p.embedding(side), rows(idx))
}

/// `β = softmax(x W + b)`, one row per entity of `x`.
pub fn group_activation(g: &mut Graph, p: &ModelParams, side: Side, x: Var) -> Var {
    let s = p.side(side);
    let w = g.param(s.proj_w);
    let b = g.param(s.proj_b);
    let logits = g.affine(x, w, b);
    g.softmax(logits)
}

/// `μ = β G`: convex combination of group embeddings.
pub fn soft_group_repr(g: &mut Graph, p: &ModelParams, side: Side, beta: Var) -> Var {
    let groups = g.param(p.side(side).group_emb);
    g.matmul(beta, groups)
}

/// `x′ = sigmoid(μ W′ + b′)`.
pub fn reconstruct(g: &mut Graph, p: &ModelParams, side: Side, mu: Var) -> Var {
    let s = p.side(side);
    let w = g.param(s.recon_w);
    let b = g.param(s.recon_b);
    let h = g.affine(mu, w, b);
    g.sigmoid(h)
}

/// `Σ_b Σ_s max(0, 1 − cos(x′_b, x_b) + cos(x′_b, n_s))` with `recon` and
/// `target` of shape `B×d` and `negatives` of shape `p×d`.
pub fn group_margin_loss(g: &mut Graph, recon: Var, target: Var, negatives: Var, p: usize) -> Var {
    let r = g.l2_normalize(recon);
    let t = g.l2_normalize(target);
    let n = g.l2_normalize(negatives);
    let pos = g.dot(r, t);
    let neg = g.matmul_t(r, n);
    let pos = g.broadcast_cols(pos, p);
    let margin = g.sub(neg, pos);
    let margin = g.offset(margin, 1.0);
    let hinge = g.max0(margin);
    g.sum(hinge)
}

/// Index of the largest activation per row; ties resolve to the lowest
/// index.
pub fn hard_assignment(beta: &Matrix) -> Vec<usize> {
    (0..beta.rows())
        .map(|r| {
            let row = beta.row(r);
            let mut best = 0;
            for (s, &x) in row.iter().enumerate().skip(1) {
                if x > row[best] {
                    best = s;
                }
            }
            best
        })
        .collect()
}

/// Logits `z · Gᵀ` of the hierarchy network, `z = φ(x + ε)`.
pub fn hierarchy_logits(g: &mut Graph, p: &ModelParams, side: Side, idx: &[u32]) -> Var {
    let s = p.side(side);
    let x = embeddings(g, p, side, idx);
    let eps = g.gather(s.offset, rows(idx));
    let z0 = g.add(x, eps);
    let z = mlp_forward(g, &s.hier, z0);
    let groups = g.param(s.group_emb);
    g.matmul_t(z, groups)
}

/// Posterior over the `k` groups for each entity.
pub fn hierarchy_posterior(g: &mut Graph, p: &ModelParams, side: Side, idx: &[u32]) -> Var {
    let logits = hierarchy_logits(g, p, side, idx);
    g.softmax(logits)
}

/// `−Σ log posterior[label]` over `idx`.
pub fn hierarchy_loss(g: &mut Graph, p: &ModelParams, side: Side, idx: &[u32], labels: Vec<usize>) -> Var {
    let logits = hierarchy_logits(g, p, side, idx);
    let per = g.softmax_xent(logits, labels);
    g.sum(per)
}

fn fusion(g: &mut Graph, mlp: &Mlp, w: ParamId, input: Var) -> Var {
    let h = mlp_forward(g, mlp, input);
    let w = g.param(w);
    g.matmul(h, w)
}

/// User-item logit from `[u; v; u∘v]`, `B×1`.
pub fn basic_logit(g: &mut Graph, p: &ModelParams, users: &[u32], items: &[u32]) -> Var {
    let u = embeddings(g, p, Side::User, users);
    let v = embeddings(g, p, Side::Item, items);
    let uv = g.hadamard(u, v);
    let z = g.concat(vec![u, v, uv]);
    fusion(g, &p.mlp_uv, p.w_uv, z)
}

/// Sum of the enabled branch logits, `B×1`.
///
/// `user_groups[b]` and `item_groups[b]` are the hard labels of
/// `users[b]` and `items[b]`; they are only read for enabled branches.
pub fn dual_bridge_logit(
    g: &mut Graph,
    p: &ModelParams,
    mask: &Mask,
    users: &[u32],
    items: &[u32],
    user_groups: &[usize],
    item_groups: &[usize],
) -> Var {
    let u = embeddings(g, p, Side::User, users);
    let v = embeddings(g, p, Side::Item, items);
    let uv = g.hadamard(u, v);
    let z = g.concat(vec![u, v, uv]);
    let mut logit = fusion(g, &p.mlp_uv, p.w_uv, z);
    if mask.item_group_bridge {
        let gv = g.gather(p.item.group_emb, item_groups.to_vec());
        let m = g.param(p.bilinear_u);
        let inter = g.bilinear(u, m, gv);
        let z = g.concat(vec![u, gv, inter]);
        let branch = fusion(g, &p.mlp_ug, p.w_ug, z);
        logit = g.add(logit, branch);
    }
    if mask.user_group_bridge {
        let gu = g.gather(p.user.group_emb, user_groups.to_vec());
        let m = g.param(p.bilinear_v);
        let inter = g.bilinear(v, m, gu);
        let z = g.concat(vec![gu, v, inter]);
        let branch = fusion(g, &p.mlp_vg, p.w_vg, z);
        logit = g.add(logit, branch);
    }
    logit
}

/// Summed binary cross-entropy of `sigmoid(logits)` against `labels`.
pub fn cf_loss(g: &mut Graph, logits: Var, labels: Vec<f64>) -> Var {
    let probs = g.sigmoid(logits);
    g.bce(probs, labels)
}
