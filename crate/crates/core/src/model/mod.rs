//! The relation extractor: entity-aware embedding → PCNN → recursive
//! hierarchy-interactive attention → attention pooling → bag classifier, with
//! an entity-order head on every relation-augmented sentence.
//!
//! All computations are batched: one row per token in the embedding and
//! convolution stages, one row per sentence in the attention stages and one
//! row per bag in the classifier.

pub mod embed;
pub mod encoder;
pub mod objectives;
pub mod rhia;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use num_traits::Float;
use rand::RngCore;
use rand_distr::{Distribution, Normal, Uniform};

use crate::diff::{Gradients, HasParams, NodeId, ParamId, ParamStore, Tape, Tensor};
use crate::hierarchy::RelationHierarchy;
use crate::instance::Instance;
use crate::{Error, Real, Result};

pub use objectives::{LossNodes, LossWeights};
pub use rhia::{Augmented, LevelNodes};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Rows of the word table (UNK and PAD included).
    pub vocab_size: usize,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub max_len: usize,
    /// Entity-aware gate smoothing `λ`.
    pub lambda: f64,
    /// Width of the entity-aware embedding `d_x`.
    pub embed_dim: usize,
    pub window: usize,
    /// PCNN filters `d_c`; sentence vectors have `3·d_c` entries.
    pub filters: usize,
    /// Node count per hierarchy level (NA included).
    pub level_sizes: Vec<usize>,
    pub num_relations: usize,
    pub layer_norm_eps: f64,
    /// Std of the Gaussian used for `h₀` and the relation matrices.
    pub init_std: f64,
    /// Ablation: keep the heuristic state at `h₀` for every level.
    pub freeze_heuristic: bool,
}

impl ModelConfig {
    /// Defaults from the reference setup (`d_w=50, d_p=5, n=120, λ=0.05,
    /// d_x=150, ω=3, d_c=230`).
    pub fn new(vocab_size: usize, hierarchy: &RelationHierarchy) -> Self {
        ModelConfig {
            vocab_size,
            word_dim: 50,
            pos_dim: 5,
            max_len: 120,
            lambda: 0.05,
            embed_dim: 150,
            window: 3,
            filters: 230,
            level_sizes: (0..hierarchy.depth()).map(|l| hierarchy.level_size(l)).collect(),
            num_relations: hierarchy.num_relations(),
            layer_norm_eps: 1e-5,
            init_std: 0.02,
            freeze_heuristic: false,
        }
    }

    pub fn sentence_dim(&self) -> usize {
        3 * self.filters
    }

    pub fn depth(&self) -> usize {
        self.level_sizes.len()
    }

    pub fn augmented_dim(&self) -> usize {
        self.depth() * self.sentence_dim()
    }

    /// Position tables have one row per offset in `[−n, n]`.
    pub fn position_rows(&self) -> usize {
        2 * self.max_len + 1
    }

    /// `X^e` is projected only when `d_x ≠ 3·d_w`.
    pub fn needs_entity_projection(&self) -> bool {
        self.embed_dim != 3 * self.word_dim
    }

    pub fn validate(&self) -> Result<()> {
        let checks = [
            (self.vocab_size >= 1, "vocab_size"),
            (self.word_dim >= 1, "word_dim"),
            (self.pos_dim >= 1, "pos_dim"),
            (self.max_len >= 1, "max_len"),
            (self.embed_dim >= 1, "embed_dim"),
            (self.window >= 1, "window"),
            (self.filters >= 1, "filters"),
            (!self.level_sizes.is_empty(), "depth"),
            (self.level_sizes.iter().all(|&n| n >= 1), "level_sizes"),
            (self.num_relations >= 1, "num_relations"),
            (self.layer_norm_eps >= 0.0, "layer_norm_eps"),
        ];
        for (ok, name) in checks {
            if !ok {
                return Err(Error::Config(format!("invalid {name}")));
            }
        }
        Ok(())
    }

    /// `key=value` lines describing the architecture; stored in checkpoints.
    pub fn describe(&self) -> String {
        let levels: Vec<String> = self.level_sizes.iter().map(|n| format!("{n}")).collect();
        format!(
            "vocab_size={}\nword_dim={}\npos_dim={}\nmax_len={}\nlambda={}\nembed_dim={}\nwindow={}\nfilters={}\nlevel_sizes={}\nnum_relations={}\nlayer_norm_eps={}\ninit_std={}\nfreeze_heuristic={}\n",
            self.vocab_size,
            self.word_dim,
            self.pos_dim,
            self.max_len,
            self.lambda,
            self.embed_dim,
            self.window,
            self.filters,
            levels.join(","),
            self.num_relations,
            self.layer_norm_eps,
            self.init_std,
            self.freeze_heuristic
        )
    }
}

/// Which regularization group a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    /// Word and position tables.
    Embedding,
    /// Weight matrices and relation embeddings.
    Weight,
    /// Biases, normalization gain/shift and the initial heuristic state.
    Other,
    /// Entity-order head weight.
    OrderWeight,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelParams {
    pub relations: ParamId,
    pub mlp_hidden_w: ParamId,
    pub mlp_hidden_b: ParamId,
    pub mlp_out_w: ParamId,
    pub mlp_out_b: ParamId,
    pub norm_gain: ParamId,
    pub norm_shift: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamIds {
    pub word: ParamId,
    pub pos_head: ParamId,
    pub pos_tail: ParamId,
    pub entity_gate_w: ParamId,
    pub entity_gate_b: ParamId,
    pub entity_proj: Option<ParamId>,
    pub position_w: ParamId,
    pub position_b: ParamId,
    pub conv_w: ParamId,
    pub conv_b: ParamId,
    pub h0: ParamId,
    pub gate1_w: ParamId,
    pub gate1_b: ParamId,
    pub gate2_w: ParamId,
    pub gate2_b: ParamId,
    pub gate3_w: ParamId,
    pub gate3_b: ParamId,
    pub levels: Vec<LevelParams>,
    pub pool_w: ParamId,
    pub classifier_w: ParamId,
    pub classifier_b: ParamId,
    pub order_w: ParamId,
    pub order_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Real> {
    config: ModelConfig,
    params: ParamStore<T>,
    ids: ParamIds,
    roles: Vec<ParamRole>,
}

/// Creates parameters in a fixed order. Without an RNG every tensor is left
/// at zero (used when the values come from a checkpoint).
struct Builder<'r, T: Real> {
    store: ParamStore<T>,
    roles: Vec<ParamRole>,
    rng: Option<&'r mut dyn RngCore>,
}

impl<T: Real> Builder<'_, T> {
    fn add(&mut self, name: &str, shape: &[usize], role: ParamRole, values: Vec<T>) -> ParamId {
        self.roles.push(role);
        self.store
            .add(name, Tensor::from_values(shape, values).expect("init shape"))
    }

    fn normal(&mut self, name: &str, shape: &[usize], std: f64, role: ParamRole) -> ParamId {
        let n: usize = shape.iter().product();
        let dist = Normal::new(0.0, std).expect("std > 0");
        let v = match self.rng.as_deref_mut() {
            Some(rng) => (0..n).map(|_| T::lit(dist.sample(rng))).collect(),
            None => vec![T::zero(); n],
        };
        self.add(name, shape, role, v)
    }

    /// Glorot-uniform over a `fan_in × fan_out` matrix.
    fn xavier(&mut self, name: &str, fan_in: usize, fan_out: usize, role: ParamRole) -> ParamId {
        let a = Float::sqrt(6.0 / (fan_in + fan_out) as f64);
        let dist = Uniform::new_inclusive(-a, a).expect("bounds");
        let n = fan_in * fan_out;
        let v = match self.rng.as_deref_mut() {
            Some(rng) => (0..n).map(|_| T::lit(dist.sample(rng))).collect(),
            None => vec![T::zero(); n],
        };
        self.add(name, &[fan_in, fan_out], role, v)
    }

    fn constant(&mut self, name: &str, len: usize, value: f64, role: ParamRole) -> ParamId {
        self.add(name, &[len], role, vec![T::lit(value); len])
    }
}

/// Forward-pass node handles for one batch of bags.
#[derive(Debug, Clone)]
pub struct Forward {
    /// `X`, one row per real token.
    pub embedded: NodeId,
    /// `U`, one row per sentence.
    pub sentences: NodeId,
    pub augmented: Augmented,
    pub pool_weights: NodeId,
    /// `b`, one row per bag (before dropout).
    pub bag_repr: NodeId,
    pub logits: NodeId,
    pub probs: NodeId,
    pub order_logits: NodeId,
    pub order_probs: NodeId,
    /// Sentence rows of each bag.
    pub groups: Vec<Range<usize>>,
}

/// Dropout applied to the bag representation during training.
pub struct Dropout<'a> {
    pub rate: f64,
    pub rng: &'a mut dyn RngCore,
}

impl<T: Real> Model<T> {
    /// Fresh model with randomly initialized parameters.
    pub fn new<R: RngCore>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        Self::build(config, Some(rng))
    }

    fn build(config: ModelConfig, rng: Option<&mut dyn RngCore>) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let (dw, dp, dx, df) = (c.word_dim, c.pos_dim, c.embed_dim, c.sentence_dim());
        let mut b = Builder {
            store: ParamStore::new(),
            roles: Vec::new(),
            rng,
        };
        let word = b.normal("word_embedding", &[c.vocab_size, dw], 1.0 / Float::sqrt(dw as f64), ParamRole::Embedding);
        let pos_std = 1.0 / Float::sqrt(dp as f64);
        let pos_head = b.normal("position_head", &[c.position_rows(), dp], pos_std, ParamRole::Embedding);
        let pos_tail = b.normal("position_tail", &[c.position_rows(), dp], pos_std, ParamRole::Embedding);
        let entity_gate_w = b.xavier("entity_gate.weight", 3 * dw, dx, ParamRole::Weight);
        let entity_gate_b = b.constant("entity_gate.bias", dx, 0.0, ParamRole::Other);
        let entity_proj = c
            .needs_entity_projection()
            .then(|| b.xavier("entity_proj.weight", 3 * dw, dx, ParamRole::Weight));
        let position_w = b.xavier("position.weight", dw + 2 * dp, dx, ParamRole::Weight);
        let position_b = b.constant("position.bias", dx, 0.0, ParamRole::Other);
        let conv_w = b.xavier("pcnn.weight", c.window * dx, c.filters, ParamRole::Weight);
        let conv_b = b.constant("pcnn.bias", c.filters, 0.0, ParamRole::Other);
        let h0 = b.normal("rhia.h0", &[df], c.init_std, ParamRole::Other);
        let gate1_w = b.xavier("rhia.gate1.weight", 2 * df, df, ParamRole::Weight);
        let gate1_b = b.constant("rhia.gate1.bias", df, 0.0, ParamRole::Other);
        let gate2_w = b.xavier("rhia.gate2.weight", 2 * df, df, ParamRole::Weight);
        let gate2_b = b.constant("rhia.gate2.bias", df, 0.0, ParamRole::Other);
        let gate3_w = b.xavier("rhia.gate3.weight", 2 * df, df, ParamRole::Weight);
        let gate3_b = b.constant("rhia.gate3.bias", df, 0.0, ParamRole::Other);
        let levels = c
            .level_sizes
            .iter()
            .enumerate()
            .map(|(i, &n)| LevelParams {
                relations: b.normal(&format!("rhia.relations.{i}"), &[df, n], c.init_std, ParamRole::Weight),
                mlp_hidden_w: b.xavier(&format!("rhia.mlp.{i}.hidden.weight"), df, df, ParamRole::Weight),
                mlp_hidden_b: b.constant(&format!("rhia.mlp.{i}.hidden.bias"), df, 0.0, ParamRole::Other),
                mlp_out_w: b.xavier(&format!("rhia.mlp.{i}.out.weight"), df, df, ParamRole::Weight),
                mlp_out_b: b.constant(&format!("rhia.mlp.{i}.out.bias"), df, 0.0, ParamRole::Other),
                norm_gain: b.constant(&format!("rhia.norm.{i}.gain"), df, 1.0, ParamRole::Other),
                norm_shift: b.constant(&format!("rhia.norm.{i}.shift"), df, 0.0, ParamRole::Other),
            })
            .collect();
        let pool_w = b.xavier("pool.weight", 2 * df, 1, ParamRole::Weight);
        let classifier_w = b.xavier("classifier.weight", c.augmented_dim(), c.num_relations, ParamRole::Weight);
        let classifier_b = b.constant("classifier.bias", c.num_relations, 0.0, ParamRole::Other);
        let order_w = b.xavier("order.weight", c.augmented_dim(), 2, ParamRole::OrderWeight);
        let order_b = b.constant("order.bias", 2, 0.0, ParamRole::Other);
        let ids = ParamIds {
            word,
            pos_head,
            pos_tail,
            entity_gate_w,
            entity_gate_b,
            entity_proj,
            position_w,
            position_b,
            conv_w,
            conv_b,
            h0,
            gate1_w,
            gate1_b,
            gate2_w,
            gate2_b,
            gate3_w,
            gate3_b,
            levels,
            pool_w,
            classifier_w,
            classifier_b,
            order_w,
            order_b,
        };
        let Builder { store, roles, .. } = b;
        Ok(Model {
            config,
            params: store,
            ids,
            roles,
        })
    }

    /// Rebuilds a model around stored parameters. Names and shapes must match
    /// what [`Model::new`] would create for `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        let template = Model::<T>::build(config, None)?;
        if template.params.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameters, found {}",
                template.params.len(),
                params.len()
            )));
        }
        for ((_, n1, t1), (_, n2, t2)) in template.params.iter().zip(params.iter()) {
            if n1 != n2 || t1.shape() != t2.shape() {
                return Err(Error::Config(format!(
                    "parameter mismatch: expected {n1} {:?}, found {n2} {:?}",
                    t1.shape(),
                    t2.shape()
                )));
            }
        }
        Ok(Model {
            params,
            ..template
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn ids(&self) -> &ParamIds {
        &self.ids
    }

    pub fn role(&self, id: ParamId) -> ParamRole {
        self.roles[id.index()]
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
            ids: self.ids.clone(),
            roles: self.roles.clone(),
        }
    }

    /// Runs the whole network over a batch of bags.
    pub fn forward<'p>(
        &'p self,
        tape: &mut Tape<'p, T>,
        bags: &[&[Instance]],
        dropout: Option<Dropout<'_>>,
    ) -> Result<Forward> {
        if bags.iter().any(|b| b.is_empty()) {
            return Err(Error::EmptyBag);
        }
        let sentences: Vec<&Instance> = bags.iter().flat_map(|b| b.iter()).collect();
        let mut groups = Vec::with_capacity(bags.len());
        let mut start = 0;
        for b in bags {
            groups.push(start..start + b.len());
            start += b.len();
        }
        let embedded = embed::entity_aware_embed(tape, self, &sentences)?;
        let u = encoder::pcnn_encode(tape, self, embedded, &sentences)?;
        let order: Vec<usize> = (0..self.config.depth()).collect();
        let augmented = rhia::relation_augment(tape, self, u, &order)?;
        let (bag_repr, pool_weights) =
            rhia::attention_pool(tape, self, augmented.augmented, u, augmented.heuristic, &groups)?;
        let logits = rhia::classifier_logits(tape, self, bag_repr, dropout)?;
        let probs = tape.softmax(logits)?;
        let order_logits = objectives::order_logits(tape, self, augmented.augmented)?;
        let order_probs = tape.softmax(order_logits)?;
        Ok(Forward {
            embedded,
            sentences: u,
            augmented,
            pool_weights,
            bag_repr,
            logits,
            probs,
            order_logits,
            order_probs,
            groups,
        })
    }

    /// Inference over bags without dropout.
    pub fn predict(&self, bags: &[&[Instance]]) -> Result<Vec<BagPrediction>> {
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, bags, None)?;
        let to_f64 = |v: &[T]| v.iter().map(|x| x.to_f64().unwrap_or(f64::NAN)).collect::<Vec<_>>();
        let nr = self.config.num_relations;
        Ok(f.groups
            .iter()
            .enumerate()
            .map(|(b, g)| BagPrediction {
                probs: to_f64(&tape.value(f.probs)[b * nr..(b + 1) * nr]),
                sentence_weights: to_f64(&tape.value(f.pool_weights)[g.clone()]),
                order_probs: g.clone().map(|s| to_f64(tape.row(f.order_probs, s))).collect(),
                attention: g
                    .clone()
                    .map(|s| {
                        f.augmented
                            .levels
                            .iter()
                            .map(|l| to_f64(tape.row(l.alpha, s)))
                            .collect()
                    })
                    .collect(),
            })
            .collect())
    }
}

impl<T: Real> HasParams<T> for Model<T> {
    fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }
}

impl<T: Real> Model<T> {
    /// Total loss and its gradients for one batch, without dropout.
    pub fn loss_and_grads(
        &self,
        bags: &[&[Instance]],
        gold: &[usize],
        hierarchy: &RelationHierarchy,
        weights: &LossWeights,
    ) -> Result<(T, Gradients<T>)> {
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, bags, None)?;
        let loss = objectives::total_loss(&mut tape, self, &f, bags, gold, hierarchy, weights)?;
        let grads = tape.backward(loss.total)?;
        Ok((tape.scalar(loss.total), grads))
    }
}

/// Per-bag inference outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BagPrediction {
    /// `o_b` over all relations.
    pub probs: Vec<f64>,
    /// Attention-pooling weight of each sentence.
    pub sentence_weights: Vec<f64>,
    /// `[P(head first), P(tail first)]` per sentence.
    pub order_probs: Vec<Vec<f64>>,
    /// Sentence-to-relation attention `α⁽ⁱ⁾` per sentence and level.
    pub attention: Vec<Vec<Vec<f64>>>,
}
