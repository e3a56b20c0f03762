//! Mini-batch SGD over bags with dropout, validation-based model selection
//! and early stopping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rhia_core::diff::{ParamStore, Tape};
use rhia_core::hierarchy::RelationHierarchy;
use rhia_core::instance::Instance;
use rhia_core::model::objectives::{nll_of_distributions, total_loss, LossWeights};
use rhia_core::model::{Dropout, Model, ParamRole};
use rhia_core::Real;

use crate::corpus::Bag;
use crate::error::{Result, RunError};
use crate::eval::auc_of;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    /// Learning rate multiplier applied after every epoch; 1 keeps it fixed.
    pub lr_decay: f64,
    pub dropout: f64,
    /// Rescales the gradient when its global L2 norm exceeds this; 0 disables.
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without a validation improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        crate::config::Settings::default().train_config()
    }
}

/// Per-epoch means of the unweighted loss components.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub re: f64,
    pub hier: f64,
    pub ord: f64,
    /// `‖θ‖²` over the regularized set.
    pub reg: f64,
    pub val_auc: Option<f64>,
}

pub const LOG_HEADER: &str = "epoch\tL_re\tL_hier\tL_ord\treg\tval_AUC";

impl EpochLog {
    pub fn total(&self, w: &LossWeights) -> f64 {
        rhia_core::model::objectives::combine(self.re, self.hier, self.ord, self.reg, w)
    }

    pub fn line(&self) -> String {
        let auc = self.val_auc.map_or_else(|| "nan".to_string(), |a| format!("{a:.6}"));
        format!(
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{auc}",
            self.epoch, self.re, self.hier, self.ord, self.reg
        )
    }
}

pub struct EpochEvent<'a, T: Real> {
    pub log: &'a EpochLog,
    pub model: &'a Model<T>,
    /// This epoch produced the best validation score so far.
    pub improved: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub best: Model<T>,
    pub best_epoch: usize,
    pub last: Model<T>,
    pub log: Vec<EpochLog>,
    /// Epoch whose loss became non-finite; training stopped there.
    pub diverged: Option<usize>,
}

/// Splits bag indices into (train, validation) under `seed`.
pub fn split_validation(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7661_6c69_6461_7465);
    idx.shuffle(&mut rng);
    let v = if fraction > 0.0 && n >= 2 {
        ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
    } else {
        0
    };
    let mut val = idx[..v].to_vec();
    let mut train = idx[v..].to_vec();
    val.sort_unstable();
    train.sort_unstable();
    (train, val)
}

fn regularized_sum<T: Real>(model: &Model<T>, w: &LossWeights) -> f64 {
    model
        .params()
        .ids()
        .filter(|&id| match model.role(id) {
            ParamRole::Weight => true,
            ParamRole::Embedding => w.reg_embeddings,
            ParamRole::OrderWeight => w.order != 0.0,
            ParamRole::Other => false,
        })
        .map(|id| model.params().get(id).sum_squares().to_f64().unwrap_or(f64::NAN))
        .sum()
}

/// Global L2 norm of the accumulated gradients.
pub fn grad_norm<T: Real>(params: &ParamStore<T>) -> f64 {
    params
        .iter()
        .flat_map(|(_, _, t)| t.grad().iter())
        .map(|g| {
            let g = g.to_f64().unwrap_or(f64::NAN);
            g * g
        })
        .sum::<f64>()
        .sqrt()
}

struct BatchLoss {
    total: f64,
    re: f64,
    hier: f64,
    ord: f64,
}

fn sgd_batch<T: Real>(
    model: &mut Model<T>,
    bags: &[&Bag],
    hierarchy: &RelationHierarchy,
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BatchLoss> {
    let views: Vec<&[Instance]> = bags.iter().map(|b| b.instances.as_slice()).collect();
    let gold: Vec<usize> = bags.iter().map(|b| b.relation()).collect();
    let (loss, grads) = {
        let mut tape = Tape::new(model.params());
        let dropout = (cfg.dropout > 0.0).then(|| Dropout {
            rate: cfg.dropout,
            rng: &mut *rng,
        });
        let built = model
            .forward(&mut tape, &views, dropout)
            .and_then(|f| total_loss(&mut tape, model, &f, &views, &gold, hierarchy, &cfg.weights).map(|l| (f, l)));
        let (f, l) = match built {
            Ok(x) => x,
            Err(rhia_core::Error::NonFinite(_)) => {
                return Ok(BatchLoss {
                    total: f64::NAN,
                    re: f64::NAN,
                    hier: f64::NAN,
                    ord: f64::NAN,
                })
            }
            Err(e) => return Err(e.into()),
        };
        let value = |n| tape.scalar(n).to_f64().unwrap_or(f64::NAN);
        let hier = match l.hier {
            Some(n) => value(n),
            None => {
                let mut sum = 0.0;
                for cell in &f.augmented.levels {
                    let (rows, cols) = tape.shape(cell.alpha);
                    let a: Vec<f64> = tape.value(cell.alpha).iter().map(|v| v.to_f64().unwrap()).collect();
                    let dists: Vec<&[f64]> = a.chunks(cols).collect();
                    let targets: Vec<usize> = views
                        .iter()
                        .zip(&gold)
                        .flat_map(|(b, &g)| std::iter::repeat(hierarchy.chain(g)[cell.level]).take(b.len()))
                        .collect();
                    debug_assert_eq!(rows, targets.len());
                    sum += nll_of_distributions(&dists, &targets)?;
                }
                sum / f.augmented.levels.len() as f64
            }
        };
        let ord = match l.order {
            Some(n) => value(n),
            None => {
                let p: Vec<f64> = tape.value(f.order_probs).iter().map(|v| v.to_f64().unwrap()).collect();
                let dists: Vec<&[f64]> = p.chunks(2).collect();
                let targets: Vec<usize> = views
                    .iter()
                    .flat_map(|b| b.iter().map(|s| s.entity_order().label()))
                    .collect();
                nll_of_distributions(&dists, &targets)?
            }
        };
        let loss = BatchLoss {
            total: value(l.total),
            re: value(l.re),
            hier,
            ord,
        };
        if !loss.total.is_finite() {
            return Ok(loss);
        }
        (loss, tape.backward(l.total)?)
    };
    let params = model.params_mut();
    params.zero_grad();
    params.accumulate(&grads);
    let mut scale = 1.0;
    if cfg.clip_norm > 0.0 {
        let norm = grad_norm(params);
        if norm > cfg.clip_norm {
            scale = cfg.clip_norm / norm;
        }
    }
    params.sgd_step(T::lit(lr * scale));
    params.zero_grad();
    Ok(loss)
}

/// Trains `model` on `bags` (train-mode bags, one gold relation each).
/// `observe` runs after every epoch.
pub fn train<T: Real>(
    mut model: Model<T>,
    bags: &[Bag],
    hierarchy: &RelationHierarchy,
    cfg: &TrainConfig,
    threads: usize,
    mut observe: impl FnMut(&EpochEvent<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    if bags.is_empty() {
        return Err(RunError::Data("no training bags".into()));
    }
    if cfg.batch_size == 0 {
        return Err(RunError::Usage("batch_size must be >= 1".into()));
    }
    let (train_idx, val_idx) = split_validation(bags.len(), cfg.validation_fraction, cfg.seed);
    let val: Vec<&Bag> = val_idx.iter().map(|&i| &bags[i]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order = train_idx;
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let mut log = Vec::new();
    let mut lr = cfg.lr;
    let mut since_best = 0;
    let mut diverged = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut re, mut hier, mut ord, mut seen) = (0.0, 0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let batch: Vec<&Bag> = batch.iter().map(|&i| &bags[i]).collect();
            let l = sgd_batch(&mut model, &batch, hierarchy, cfg, lr, &mut rng)?;
            if !l.total.is_finite() {
                diverged = Some(epoch);
                break;
            }
            let n = batch.len() as f64;
            re += l.re * n;
            hier += l.hier * n;
            ord += l.ord * n;
            seen += batch.len();
        }
        if diverged.is_some() {
            break;
        }
        let n = seen as f64;
        let val_auc = auc_of(&model, &val, hierarchy.na_id(), threads)?;
        let entry = EpochLog {
            epoch,
            re: re / n,
            hier: hier / n,
            ord: ord / n,
            reg: regularized_sum(&model, &cfg.weights),
            val_auc,
        };
        // without validation bags the latest epoch is the selection
        let score = val_auc.unwrap_or(f64::NEG_INFINITY);
        let improved = match &best {
            None => true,
            Some((b, _, _)) => score > *b || val.is_empty(),
        };
        if improved {
            best = Some((score, epoch, model.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        observe(&EpochEvent {
            log: &entry,
            model: &model,
            improved,
        })?;
        log.push(entry);
        if cfg.patience > 0 && since_best >= cfg.patience {
            break;
        }
        lr *= cfg.lr_decay;
    }
    let (best_model, best_epoch) = match best {
        Some((_, e, m)) => (m, e),
        None => (model.clone(), 0),
    };
    Ok(TrainOutcome {
        best: best_model,
        best_epoch,
        last: model,
        log,
        diverged,
    })
}
