//! Held-out evaluation: PR curve, AUC, Max_F1, P@N, long-tail Hits@K and
//! attention dumps.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rhia_core::hierarchy::RelationHierarchy;
use rhia_core::instance::Instance;
use rhia_core::metrics::{
    count_positive_facts, hits_at_k_macro, long_tail_flags, pr_curve, precision_at_n, rank_predictions, BagScores,
    HitsAtK, PrCurve, PrecisionAtN, DEFAULT_HITS_K, DEFAULT_P_AT_N, LONG_TAIL_THRESHOLDS,
};
use rhia_core::model::{BagPrediction, Model};
use rhia_core::Real;

use crate::corpus::Bag;
use crate::error::{Result, RunError};

/// Bags scored per forward pass.
pub const EVAL_BATCH: usize = 160;

/// Scores `bags` in order, splitting the work over `threads` workers.
pub fn predict_bags<T: Real>(model: &Model<T>, bags: &[&Bag], threads: usize) -> Result<Vec<BagPrediction>> {
    let chunks: Vec<&[&Bag]> = bags.chunks(EVAL_BATCH).collect();
    let run = |chunk: &[&Bag]| -> Result<Vec<BagPrediction>> {
        let views: Vec<&[Instance]> = chunk.iter().map(|b| b.instances.as_slice()).collect();
        Ok(model.predict(&views)?)
    };
    let threads = threads.max(1);
    if threads == 1 || chunks.len() < 2 {
        let mut out = Vec::with_capacity(bags.len());
        for c in chunks {
            out.extend(run(c)?);
        }
        return Ok(out);
    }
    let per = chunks.len().div_ceil(threads);
    let results: Vec<Result<Vec<BagPrediction>>> = std::thread::scope(|s| {
        let handles: Vec<_> = chunks
            .chunks(per)
            .map(|group| {
                s.spawn(move || {
                    let mut out = Vec::new();
                    for c in group {
                        out.extend(run(c)?);
                    }
                    Ok(out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(bags.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

pub fn bag_scores(preds: &[BagPrediction], bags: &[&Bag]) -> Vec<BagScores> {
    preds
        .iter()
        .zip(bags)
        .enumerate()
        .map(|(i, (p, b))| BagScores {
            bag: i,
            probs: p.probs.clone(),
            gold: b.relations.clone(),
        })
        .collect()
}

/// Held-out AUC of `bags`, or `None` when they hold no positive fact.
pub fn auc_of<T: Real>(model: &Model<T>, bags: &[&Bag], na: usize, threads: usize) -> Result<Option<f64>> {
    let preds = predict_bags(model, bags, threads)?;
    let scores = bag_scores(&preds, bags);
    let facts = count_positive_facts(&scores, na);
    if facts == 0 {
        return Ok(None);
    }
    Ok(Some(pr_curve(&rank_predictions(&scores, na), facts)?.auc))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retention {
    One,
    Two,
    All,
}

impl std::str::FromStr for Retention {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "one" => Ok(Retention::One),
            "two" => Ok(Retention::Two),
            "all" => Ok(Retention::All),
            _ => Err(RunError::Usage(format!("bad retention {s:?}; use one, two or all"))),
        }
    }
}

impl Retention {
    pub fn name(self) -> &'static str {
        match self {
            Retention::One => "one",
            Retention::Two => "two",
            Retention::All => "all",
        }
    }
}

/// Drops single-sentence bags, then keeps 1, 2 or all sentences of each
/// remaining bag, sampled uniformly under `seed` (original order kept).
pub fn bag_retention(bags: &[Bag], mode: Retention, seed: u64) -> Vec<Bag> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    bags.iter()
        .filter(|b| b.instances.len() > 1)
        .map(|b| {
            let keep = match mode {
                Retention::One => 1,
                Retention::Two => 2,
                Retention::All => b.instances.len(),
            };
            let mut idx = sample(&mut rng, b.instances.len(), keep).into_vec();
            idx.sort_unstable();
            Bag {
                instances: idx.iter().map(|&i| b.instances[i].clone()).collect(),
                ..b.clone()
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub retention: Option<Retention>,
    pub bags: usize,
    pub facts: usize,
    pub pr: PrCurve,
    pub p_at_n: PrecisionAtN,
    /// Per long-tail threshold; `None` when no test bag has a long-tail gold.
    pub hits: Vec<(usize, Option<HitsAtK>)>,
}

/// Scores `bags` and computes every metric. `train_counts` holds training
/// instances per relation id.
pub fn evaluate<T: Real>(
    model: &Model<T>,
    bags: &[Bag],
    hierarchy: &RelationHierarchy,
    train_counts: &[usize],
    retention: Option<Retention>,
    threads: usize,
) -> Result<MetricsReport> {
    let refs: Vec<&Bag> = bags.iter().collect();
    let preds = predict_bags(model, &refs, threads)?;
    let scores = bag_scores(&preds, &refs);
    report_from_scores(&scores, hierarchy, train_counts, retention)
}

pub fn report_from_scores(
    scores: &[BagScores],
    hierarchy: &RelationHierarchy,
    train_counts: &[usize],
    retention: Option<Retention>,
) -> Result<MetricsReport> {
    let na = hierarchy.na_id();
    let facts = count_positive_facts(scores, na);
    let ranked = rank_predictions(scores, na);
    let pr = pr_curve(&ranked, facts)?;
    let p_at_n = precision_at_n(&ranked, &DEFAULT_P_AT_N);
    let hits = LONG_TAIL_THRESHOLDS
        .iter()
        .map(|&t| {
            let flags = long_tail_flags(train_counts, t, na);
            (t, hits_at_k_macro(scores, &flags, &DEFAULT_HITS_K))
        })
        .collect();
    Ok(MetricsReport {
        retention,
        bags: scores.len(),
        facts,
        pr,
        p_at_n,
        hits,
    })
}

impl MetricsReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[summary]");
        let _ = writeln!(
            s,
            "retention\t{}",
            self.retention.map_or("full", Retention::name)
        );
        let _ = writeln!(s, "bags\t{}", self.bags);
        let _ = writeln!(s, "positive_facts\t{}", self.facts);
        let _ = writeln!(s, "predictions\t{}", self.pr.points.len());
        let _ = writeln!(s, "\n[pr]");
        let _ = writeln!(s, "auc\t{:.6}", self.pr.auc);
        let _ = writeln!(s, "max_f1\t{:.6}", self.pr.max_f1);
        let _ = writeln!(s, "\n[precision_at_n]");
        for (n, p) in &self.p_at_n.values {
            let _ = writeln!(s, "P@{n}\t{p:.2}");
        }
        let _ = writeln!(s, "mean\t{:.2}", self.p_at_n.mean);
        if self.p_at_n.short_list {
            let _ = writeln!(s, "warning\tranked list shorter than some N; those use the full list");
        }
        for (t, h) in &self.hits {
            let _ = writeln!(s, "\n[hits_at_k <{t}]");
            match h {
                Some(h) => {
                    for (k, v) in &h.values {
                        let _ = writeln!(s, "hits@{k}\t{:.2}", 100.0 * v);
                    }
                    let _ = writeln!(s, "relations\t{}", h.relations.len());
                    let _ = writeln!(s, "samples\t{}", h.samples);
                }
                None => {
                    let _ = writeln!(s, "absent\tno test bag has a gold relation with fewer than {t} training instances");
                }
            }
        }
        s
    }
}

/// Two columns, precision then recall, one line per rank.
pub fn write_pr(path: &Path, pr: &PrCurve) -> Result<()> {
    let mut s = String::with_capacity(pr.points.len() * 20);
    for (p, r) in &pr.points {
        let _ = writeln!(s, "{p:.6}\t{r:.6}");
    }
    std::fs::write(path, s).map_err(|e| RunError::io(path, e))
}

/// Per sentence and level, the three relations with the highest
/// sentence-to-relation attention.
pub fn attention_trace(pred: &BagPrediction, bag: &Bag, hierarchy: &RelationHierarchy) -> String {
    let mut s = String::new();
    let gold: Vec<&str> = bag.relations.iter().map(|&r| hierarchy.relation_name(r)).collect();
    let _ = writeln!(s, "bag\t{}\t{}\tgold={}", bag.head, bag.tail, gold.join(","));
    for (i, (levels, w)) in pred.attention.iter().zip(&pred.sentence_weights).enumerate() {
        let _ = writeln!(s, "sentence {i}\tweight={w:.4}");
        for (l, alpha) in levels.iter().enumerate() {
            let mut idx: Vec<usize> = (0..alpha.len()).collect();
            idx.sort_by(|&a, &b| alpha[b].total_cmp(&alpha[a]).then(a.cmp(&b)));
            let top: Vec<String> = idx
                .iter()
                .take(3)
                .map(|&r| format!("{}={:.4}", hierarchy.level_names(l)[r], alpha[r]))
                .collect();
            let _ = writeln!(s, "  level {}\t{}", l + 1, top.join("\t"));
        }
    }
    s
}
