//! Recursive hierarchy-interactive attention.
//!
//! Level `i` takes the sentence vector `u` and the heuristic state `h_{i−1}`:
//!
//! ```text
//! α    = softmax(uᵀ R⁽ⁱ⁾)            c    = R⁽ⁱ⁾ α
//! α_h  = softmax(h_{i−1}ᵀ R⁽ⁱ⁾)      c_h  = R⁽ⁱ⁾ α_h
//! β₁   = σ(W¹[u; h_{i−1}] + b¹)       ĉ    = β₁∘c + (1−β₁)∘c_h
//! β₂   = σ(W²[u; ĉ] + b²)             û    = β₂∘u + (1−β₂)∘ĉ
//! u⁽ⁱ⁾ = LayerNorm(u + MLP(û))
//! β₃   = σ(W³[h_{i−1}; ĉ] + b³)       h_i  = β₃∘h_{i−1} + (1−β₃)∘ĉ
//! ```
//!
//! The gate weights are shared by all levels; relation matrices, MLPs and
//! normalization parameters are per level. `u^r = [u⁽¹⁾; …; u⁽ᵏ⁾]`.

use alloc::vec::Vec;
use core::ops::Range;

use super::{Dropout, Model};
use crate::diff::{NodeId, Tape};
use crate::{Error, Real, Result};

/// Node handles of one RHI cell.
#[derive(Debug, Clone, Copy)]
pub struct LevelNodes {
    pub level: usize,
    pub alpha_logits: NodeId,
    pub alpha: NodeId,
    pub context: NodeId,
    pub alpha_hier: NodeId,
    pub context_hier: NodeId,
    pub beta1: NodeId,
    pub context_mix: NodeId,
    pub beta2: NodeId,
    pub mixed: NodeId,
    pub output: NodeId,
    /// `(β₃, h_i)`; absent when the heuristic state is frozen.
    pub update: Option<(NodeId, NodeId)>,
    pub heuristic_in: NodeId,
    pub heuristic_out: NodeId,
}

#[derive(Debug, Clone)]
pub struct Augmented {
    /// `u^r`, one row of `k·d_f` per sentence.
    pub augmented: NodeId,
    /// Final heuristic state `h_k` per sentence.
    pub heuristic: NodeId,
    /// Cells in execution order.
    pub levels: Vec<LevelNodes>,
}

fn gate<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    model: &'p Model<T>,
    which: usize,
    a: NodeId,
    b: NodeId,
) -> Result<NodeId> {
    let ids = model.ids();
    let (w, bias) = match which {
        1 => (ids.gate1_w, ids.gate1_b),
        2 => (ids.gate2_w, ids.gate2_b),
        _ => (ids.gate3_w, ids.gate3_b),
    };
    let x = tape.concat(&[a, b])?;
    let w = tape.param(w);
    let bias = tape.param(bias);
    let pre = tape.affine(x, w, bias)?;
    Ok(tape.sigmoid(pre))
}

/// One RHI cell at 0-based `level` for every row of `u` and `h_prev`.
pub fn rhi_cell<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    model: &'p Model<T>,
    u: NodeId,
    h_prev: NodeId,
    level: usize,
) -> Result<LevelNodes> {
    let lp = model
        .ids()
        .levels
        .get(level)
        .ok_or_else(|| Error::Config(alloc::format!("no hierarchy level {level}")))?;
    let r = tape.param(lp.relations);

    let alpha_logits = tape.matmul(u, r)?;
    let alpha = tape.softmax(alpha_logits)?;
    let context = tape.matmul_t(alpha, r, false, true)?;

    let hier_logits = tape.matmul(h_prev, r)?;
    let alpha_hier = tape.softmax(hier_logits)?;
    let context_hier = tape.matmul_t(alpha_hier, r, false, true)?;

    let beta1 = gate(tape, model, 1, u, h_prev)?;
    let context_mix = tape.gate_mix(beta1, context, context_hier)?;

    let beta2 = gate(tape, model, 2, u, context_mix)?;
    let mixed = tape.gate_mix(beta2, u, context_mix)?;

    let hw = tape.param(lp.mlp_hidden_w);
    let hb = tape.param(lp.mlp_hidden_b);
    let hidden = tape.affine(mixed, hw, hb)?;
    let hidden = tape.relu(hidden);
    let ow = tape.param(lp.mlp_out_w);
    let ob = tape.param(lp.mlp_out_b);
    let mlp = tape.affine(hidden, ow, ob)?;
    let residual = tape.add(u, mlp)?;
    let gain = tape.param(lp.norm_gain);
    let shift = tape.param(lp.norm_shift);
    let output = tape.layer_norm(residual, gain, shift, T::lit(model.config().layer_norm_eps))?;

    let (update, heuristic_out) = if model.config().freeze_heuristic {
        (None, h_prev)
    } else {
        let beta3 = gate(tape, model, 3, h_prev, context_mix)?;
        let h = tape.gate_mix(beta3, h_prev, context_mix)?;
        (Some((beta3, h)), h)
    };

    Ok(LevelNodes {
        level,
        alpha_logits,
        alpha,
        context,
        alpha_hier,
        context_hier,
        beta1,
        context_mix,
        beta2,
        mixed,
        output,
        update,
        heuristic_in: h_prev,
        heuristic_out,
    })
}

/// Runs the cells in `order` (normally `0..k`), threading the heuristic
/// state from the learned `h₀`, and concatenates the per-level outputs in
/// execution order.
pub fn relation_augment<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    model: &'p Model<T>,
    u: NodeId,
    order: &[usize],
) -> Result<Augmented> {
    let rows = tape.shape(u).0;
    let h0 = tape.param(model.ids().h0);
    let mut h = tape.broadcast_row(h0, rows)?;
    let mut levels = Vec::with_capacity(order.len());
    for &level in order {
        let cell = rhi_cell(tape, model, u, h, level)?;
        h = cell.heuristic_out;
        levels.push(cell);
    }
    let outputs: Vec<NodeId> = levels.iter().map(|l| l.output).collect();
    let augmented = tape.concat(&outputs)?;
    Ok(Augmented {
        augmented,
        heuristic: h,
        levels,
    })
}

/// Bag representations `b = B^r softmax(W_attᵀ [U; H])`, one row per group
/// of sentence rows. Returns `(b, pooling weights)`.
pub fn attention_pool<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    model: &'p Model<T>,
    augmented: NodeId,
    u: NodeId,
    h: NodeId,
    groups: &[Range<usize>],
) -> Result<(NodeId, NodeId)> {
    let stacked = tape.concat(&[u, h])?;
    let w = tape.param(model.ids().pool_w);
    let scores = tape.matmul(stacked, w)?;
    let weights = tape.segment_softmax(scores, groups)?;
    let b = tape.segment_weighted_sum(weights, augmented, groups)?;
    Ok((b, weights))
}

/// Classifier logits over all relations; `softmax` of these is `o_b`.
pub fn classifier_logits<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    model: &'p Model<T>,
    b: NodeId,
    dropout: Option<Dropout<'_>>,
) -> Result<NodeId> {
    let input = match dropout {
        Some(Dropout { rate, rng }) if rate > 0.0 => {
            let (r, c) = tape.shape(b);
            let keep = 1.0 - rate;
            let scale = T::lit(1.0 / keep);
            let mask = (0..r * c)
                .map(|_| {
                    if rand::Rng::random_bool(rng, keep) {
                        scale
                    } else {
                        T::zero()
                    }
                })
                .collect();
            tape.dropout(b, mask)?
        }
        _ => b,
    };
    let w = tape.param(model.ids().classifier_w);
    let bias = tape.param(model.ids().classifier_b);
    tape.affine(input, w, bias)
}
