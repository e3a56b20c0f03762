//! Entity-order head and the training objective
//! `L = L_re + μ·L_hier + ξ·L_ord + η·‖θ‖²`.

use alloc::vec::Vec;

use super::{Forward, Model, ParamRole};
use crate::diff::{NodeId, Tape};
use crate::hierarchy::RelationHierarchy;
use crate::instance::Instance;
use crate::{Error, Real, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    /// `μ`, weight of the hierarchical attention objective.
    pub hier: f64,
    /// `ξ`, weight of the entity-order objective.
    pub order: f64,
    /// `η`, L2 coefficient.
    pub reg: f64,
    /// Whether word and position tables are regularized.
    pub reg_embeddings: bool,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            hier: 1.0,
            order: 1.0,
            reg: 1e-5,
            reg_embeddings: false,
        }
    }
}

/// Loss components. A term whose weight is zero is left out of the graph.
#[derive(Debug, Clone, Copy)]
pub struct LossNodes {
    pub total: NodeId,
    pub re: NodeId,
    pub hier: Option<NodeId>,
    pub order: Option<NodeId>,
    /// Unweighted `‖θ‖²`.
    pub reg: Option<NodeId>,
}

/// Two-way logits (head first, tail first) for every row of `u^r`.
pub fn order_logits<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    model: &'p Model<T>,
    augmented: NodeId,
) -> Result<NodeId> {
    let w = tape.param(model.ids().order_w);
    let b = tape.param(model.ids().order_b);
    tape.affine(augmented, w, b)
}

/// Mean `−log softmax(logits)[target]` over rows.
pub fn cross_entropy<T: Real>(tape: &mut Tape<'_, T>, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
    let logp = tape.log_softmax(logits)?;
    tape.nll(logp, targets)
}

/// Mean negative log-likelihood of `targets` under explicit distributions.
pub fn nll_of_distributions(dists: &[&[f64]], targets: &[usize]) -> Result<f64> {
    if dists.len() != targets.len() || dists.is_empty() {
        return Err(Error::Shape {
            op: "nll_of_distributions",
            left: (dists.len(), 1),
            right: (targets.len(), 1),
        });
    }
    let mut sum = 0.0;
    for (d, &t) in dists.iter().zip(targets) {
        let p = *d.get(t).ok_or(Error::LabelOutOfRange {
            label: t,
            classes: d.len(),
        })?;
        sum -= libm_ln(p);
    }
    Ok(sum / dists.len() as f64)
}

fn libm_ln(x: f64) -> f64 {
    num_traits::Float::ln(x)
}

/// `−(1/(S·k)) Σ_s Σ_l log α⁽ˡ⁾_s[r^l]` given per-level, per-sentence gold
/// probabilities.
pub fn hier_from_gold_probs(per_sentence_levels: &[&[f64]]) -> f64 {
    let count: usize = per_sentence_levels.iter().map(|l| l.len()).sum();
    let sum: f64 = per_sentence_levels
        .iter()
        .flat_map(|l| l.iter())
        .map(|&p| libm_ln(p))
        .sum();
    -sum / count as f64
}

/// Recomposes the total from its parts.
pub fn combine(re: f64, hier: f64, order: f64, sum_squares: f64, w: &LossWeights) -> f64 {
    re + w.hier * hier + w.order * order + w.reg * sum_squares
}

/// Builds `L_re`, `L_hier`, `L_ord`, the regularizer and their weighted sum
/// for a forward pass over `bags` with one gold relation each.
pub fn total_loss<'p, T: Real>(
    tape: &mut Tape<'p, T>,
    model: &'p Model<T>,
    forward: &Forward,
    bags: &[&[Instance]],
    gold: &[usize],
    hierarchy: &RelationHierarchy,
    weights: &LossWeights,
) -> Result<LossNodes> {
    if gold.len() != bags.len() {
        return Err(Error::Shape {
            op: "total_loss",
            left: (bags.len(), 1),
            right: (gold.len(), 1),
        });
    }
    let classes = model.config().num_relations;
    if let Some(&g) = gold.iter().find(|&&g| g >= classes) {
        return Err(Error::LabelOutOfRange { label: g, classes });
    }
    let re = cross_entropy(tape, forward.logits, gold)?;
    let mut total = re;

    let hier = if weights.hier != 0.0 {
        let mut level_losses = Vec::new();
        for cell in &forward.augmented.levels {
            let targets: Vec<usize> = bags
                .iter()
                .zip(gold)
                .flat_map(|(b, &g)| core::iter::repeat(hierarchy.chain(g)[cell.level]).take(b.len()))
                .collect();
            level_losses.push(cross_entropy(tape, cell.alpha_logits, &targets)?);
        }
        let mut sum = level_losses[0];
        for &l in &level_losses[1..] {
            sum = tape.add(sum, l)?;
        }
        let mean = tape.scale(sum, T::one() / T::from_usize(level_losses.len()).unwrap());
        let weighted = tape.scale(mean, T::lit(weights.hier));
        total = tape.add(total, weighted)?;
        Some(mean)
    } else {
        None
    };

    let order = if weights.order != 0.0 {
        let labels: Vec<usize> = bags
            .iter()
            .flat_map(|b| b.iter().map(|s| s.entity_order().label()))
            .collect();
        let l = cross_entropy(tape, forward.order_logits, &labels)?;
        let weighted = tape.scale(l, T::lit(weights.order));
        total = tape.add(total, weighted)?;
        Some(l)
    } else {
        None
    };

    let reg = if weights.reg != 0.0 {
        let mut sum: Option<NodeId> = None;
        for id in model.params().ids() {
            let include = match model.role(id) {
                ParamRole::Weight => true,
                ParamRole::Embedding => weights.reg_embeddings,
                ParamRole::OrderWeight => weights.order != 0.0,
                ParamRole::Other => false,
            };
            if !include {
                continue;
            }
            let p = tape.param(id);
            let sq = tape.sum_squares(p);
            sum = Some(match sum {
                Some(s) => tape.add(s, sq)?,
                None => sq,
            });
        }
        if let Some(s) = sum {
            let weighted = tape.scale(s, T::lit(weights.reg));
            total = tape.add(total, weighted)?;
        }
        sum
    } else {
        None
    };

    Ok(LossNodes {
        total,
        re,
        hier,
        order,
        reg,
    })
}
