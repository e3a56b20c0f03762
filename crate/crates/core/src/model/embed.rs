//! Entity-aware input representation.
//!
//! For token `i` with word vector `v_i`, position vectors `p_i^h`, `p_i^t` and
//! entity vectors `v_h`, `v_t`:
//!
//! ```text
//! x^p_i = [v_i; p_i^h; p_i^t]          x^e_i = [v_i; v_h; v_t]
//! a_i   = sigmoid(λ · (W^e x^e_i + b^e))
//! x_i   = a_i ∘ x^e_i + (1 − a_i) ∘ tanh(W^p x^p_i + b^p)
//! ```
//!
//! When `d_x ≠ 3·d_w`, `x^e_i` is linearly projected to `d_x` before the mix.

use alloc::vec::Vec;

use super::Model;
use crate::diff::{NodeId, Tape};
use crate::instance::Instance;
use crate::{Real, Result};

/// Intermediate nodes of the embedding stage.
#[derive(Debug, Clone, Copy)]
pub struct EmbedNodes {
    pub entity_features: NodeId,
    pub position_features: NodeId,
    pub gate: NodeId,
    pub position_branch: NodeId,
    pub output: NodeId,
}

/// Returns `X` with one row per real token of every sentence, sentences
/// stacked in order.
pub fn entity_aware_embed<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    model: &'p Model<T>,
    sentences: &[&Instance],
) -> Result<NodeId> {
    Ok(entity_aware_embed_nodes(tape, model, sentences)?.output)
}

pub fn entity_aware_embed_nodes<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    model: &'p Model<T>,
    sentences: &[&Instance],
) -> Result<EmbedNodes> {
    let ids = model.ids();
    let total: usize = sentences.iter().map(|s| s.len()).sum();
    let mut words = Vec::with_capacity(total);
    let mut heads = Vec::with_capacity(total);
    let mut tails = Vec::with_capacity(total);
    let mut pos_h = Vec::with_capacity(total);
    let mut pos_t = Vec::with_capacity(total);
    for s in sentences {
        words.extend_from_slice(s.tokens());
        heads.extend(core::iter::repeat(s.head_word()).take(s.len()));
        tails.extend(core::iter::repeat(s.tail_word()).take(s.len()));
        let (h, t) = s.position_indices();
        pos_h.extend(h);
        pos_t.extend(t);
    }
    let word_table = tape.param(ids.word);
    let v = tape.gather_rows(word_table, &words)?;
    let vh = tape.gather_rows(word_table, &heads)?;
    let vt = tape.gather_rows(word_table, &tails)?;
    let ph_table = tape.param(ids.pos_head);
    let pt_table = tape.param(ids.pos_tail);
    let ph = tape.gather_rows(ph_table, &pos_h)?;
    let pt = tape.gather_rows(pt_table, &pos_t)?;

    let xe = tape.concat(&[v, vh, vt])?;
    let xp = tape.concat(&[v, ph, pt])?;

    let we = tape.param(ids.entity_gate_w);
    let be = tape.param(ids.entity_gate_b);
    let pre_gate = tape.affine(xe, we, be)?;
    let scaled = tape.scale(pre_gate, T::lit(model.config().lambda));
    let gate = tape.sigmoid(scaled);

    let wp = tape.param(ids.position_w);
    let bp = tape.param(ids.position_b);
    let pre_pos = tape.affine(xp, wp, bp)?;
    let position_branch = tape.tanh(pre_pos);

    let entity_branch = match ids.entity_proj {
        Some(p) => {
            let proj = tape.param(p);
            tape.matmul(xe, proj)?
        }
        None => xe,
    };
    let output = tape.gate_mix(gate, entity_branch, position_branch)?;
    Ok(EmbedNodes {
        entity_features: entity_branch,
        position_features: xp,
        gate,
        position_branch,
        output,
    })
}
