//! Held-out ranking metrics.
//!
//! Every (bag, non-NA relation) pair becomes one scored [`Prediction`]; the
//! pooled list is ranked by score and judged against the bag's gold set.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub bag: usize,
    pub relation: usize,
    pub score: f64,
    pub correct: bool,
}

/// Class probabilities of one bag together with its gold relations.
#[derive(Debug, Clone, PartialEq)]
pub struct BagScores {
    pub bag: usize,
    pub probs: Vec<f64>,
    pub gold: Vec<usize>,
}

fn ranking_order(a: &Prediction, b: &Prediction) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.bag.cmp(&b.bag))
        .then(a.relation.cmp(&b.relation))
}

/// Pools every non-NA relation of every bag and sorts by descending score,
/// ties broken by `(bag, relation)`.
pub fn rank_predictions(bags: &[BagScores], na: usize) -> Vec<Prediction> {
    let mut preds: Vec<Prediction> = bags
        .iter()
        .flat_map(|b| {
            b.probs
                .iter()
                .enumerate()
                .filter(move |&(r, _)| r != na)
                .map(move |(r, &score)| Prediction {
                    bag: b.bag,
                    relation: r,
                    score,
                    correct: b.gold.contains(&r),
                })
        })
        .collect();
    preds.sort_by(ranking_order);
    preds
}

/// Number of distinct (bag, non-NA gold relation) facts.
pub fn count_positive_facts(bags: &[BagScores], na: usize) -> usize {
    bags.iter()
        .map(|b| {
            let mut g: Vec<usize> = b.gold.iter().copied().filter(|&r| r != na).collect();
            g.sort_unstable();
            g.dedup();
            g.len()
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrCurve {
    /// `(precision, recall)` at every rank.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
    pub max_f1: f64,
}

/// Precision/recall at every rank of an already sorted list. AUC is the
/// step-wise sum `Σ (R_i − R_{i−1})·P_i` over the whole list.
pub fn pr_curve(preds: &[Prediction], total_positive_facts: usize) -> Result<PrCurve> {
    if total_positive_facts == 0 {
        return Err(Error::NoPositives);
    }
    let total = total_positive_facts as f64;
    let mut points = Vec::with_capacity(preds.len());
    let (mut hits, mut auc, mut max_f1, mut prev_recall) = (0usize, 0.0, 0.0f64, 0.0);
    for (i, p) in preds.iter().enumerate() {
        if p.correct {
            hits += 1;
        }
        let precision = hits as f64 / (i + 1) as f64;
        let recall = hits as f64 / total;
        auc += (recall - prev_recall) * precision;
        prev_recall = recall;
        if precision + recall > 0.0 {
            max_f1 = max_f1.max(2.0 * precision * recall / (precision + recall));
        }
        points.push((precision, recall));
    }
    Ok(PrCurve {
        points,
        auc,
        max_f1,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrecisionAtN {
    /// `(N, precision in percent)`.
    pub values: Vec<(usize, f64)>,
    pub mean: f64,
    /// True when the list was shorter than some requested `N`; those entries
    /// are computed over the whole list.
    pub short_list: bool,
}

pub const DEFAULT_P_AT_N: [usize; 6] = [100, 200, 300, 500, 1000, 2000];

pub fn precision_at_n(preds: &[Prediction], ns: &[usize]) -> PrecisionAtN {
    let mut short_list = false;
    let values: Vec<(usize, f64)> = ns
        .iter()
        .map(|&n| {
            let take = n.min(preds.len());
            if take < n {
                short_list = true;
            }
            let correct = preds[..take].iter().filter(|p| p.correct).count();
            let p = if take == 0 {
                0.0
            } else {
                100.0 * correct as f64 / take as f64
            };
            (n, p)
        })
        .collect();
    let mean = if values.is_empty() {
        0.0
    } else {
        values.iter().map(|v| v.1).sum::<f64>() / values.len() as f64
    };
    PrecisionAtN {
        values,
        mean,
        short_list,
    }
}

/// 1-based rank of `relation` within `probs`; ties go to the smaller id.
pub fn rank_of(probs: &[f64], relation: usize) -> usize {
    let target = probs[relation];
    1 + probs
        .iter()
        .enumerate()
        .filter(|&(r, &p)| p > target || (p == target && r < relation))
        .count()
}

/// Mean of per-relation hit rates. Relations with no samples are skipped.
pub fn macro_average(per_relation: &BTreeMap<usize, Vec<bool>>) -> Option<f64> {
    let rates: Vec<f64> = per_relation
        .values()
        .filter(|h| !h.is_empty())
        .map(|h| h.iter().filter(|&&x| x).count() as f64 / h.len() as f64)
        .collect();
    if rates.is_empty() {
        None
    } else {
        Some(rates.iter().sum::<f64>() / rates.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HitsAtK {
    /// `(K, macro hit rate in [0, 1])`.
    pub values: Vec<(usize, f64)>,
    /// Relations that contributed samples.
    pub relations: Vec<usize>,
    pub samples: usize,
}

pub const DEFAULT_HITS_K: [usize; 3] = [10, 15, 20];
pub const LONG_TAIL_THRESHOLDS: [usize; 2] = [100, 200];

/// Macro Hits@K over bags whose gold relation is flagged in `long_tail`.
/// A bag with several gold relations contributes one sample per long-tail
/// gold relation. Returns `None` when no long-tail relation occurs.
pub fn hits_at_k_macro(bags: &[BagScores], long_tail: &[bool], ks: &[usize]) -> Option<HitsAtK> {
    let mut ranks: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for b in bags {
        for &g in &b.gold {
            if long_tail.get(g).copied().unwrap_or(false) {
                ranks.entry(g).or_default().push(rank_of(&b.probs, g));
            }
        }
    }
    if ranks.is_empty() {
        return None;
    }
    let values = ks
        .iter()
        .map(|&k| {
            let hits: BTreeMap<usize, Vec<bool>> = ranks
                .iter()
                .map(|(&r, v)| (r, v.iter().map(|&rank| rank <= k).collect()))
                .collect();
            (k, macro_average(&hits).unwrap_or(0.0))
        })
        .collect();
    Some(HitsAtK {
        values,
        samples: ranks.values().map(Vec::len).sum(),
        relations: ranks.keys().copied().collect(),
    })
}

/// Flags relations with fewer than `threshold` training instances. NA is
/// never long-tail.
pub fn long_tail_flags(instance_counts: &[usize], threshold: usize, na: usize) -> Vec<bool> {
    instance_counts
        .iter()
        .enumerate()
        .map(|(r, &c)| r != na && c < threshold)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn ranked(correct: &[bool]) -> Vec<Prediction> {
        correct
            .iter()
            .enumerate()
            .map(|(i, &c)| Prediction {
                bag: i,
                relation: 1,
                score: 1.0 - i as f64 * 0.01,
                correct: c,
            })
            .collect()
    }

    #[test]
    fn hand_pr_curve() {
        let c = pr_curve(&ranked(&[true, false, true]), 2).unwrap();
        assert_eq!(c.points[0], (1.0, 0.5));
        assert_eq!(c.points[1], (0.5, 0.5));
        assert!((c.points[2].0 - 2.0 / 3.0).abs() < 1e-12 && c.points[2].1 == 1.0);
        assert!((c.auc - 5.0 / 6.0).abs() < 1e-12);
        assert!((c.max_f1 - 0.8).abs() < 1e-12);
        assert_eq!(pr_curve(&[], 0), Err(Error::NoPositives));
    }

    #[test]
    fn all_correct() {
        let c = pr_curve(&ranked(&[true; 4]), 4).unwrap();
        assert_eq!(c.auc, 1.0);
        assert_eq!(c.max_f1, 1.0);
    }

    #[test]
    fn p_at_n_toy() {
        let p = precision_at_n(&ranked(&[true, true, false, true]), &[2, 4]);
        assert_eq!(p.values, vec![(2, 100.0), (4, 75.0)]);
        assert_eq!(p.mean, 87.5);
        assert!(!p.short_list);
        assert!(precision_at_n(&ranked(&[true]), &[100]).short_list);
    }

    #[test]
    fn macro_vs_micro() {
        let mut m = BTreeMap::new();
        m.insert(1, vec![true, false]);
        m.insert(2, vec![true, true]);
        assert_eq!(macro_average(&m), Some(0.75));
        let mut skew = BTreeMap::new();
        skew.insert(1, vec![true]);
        skew.insert(2, vec![false, false, false]);
        assert_eq!(macro_average(&skew), Some(0.5));
    }

    #[test]
    fn na_excluded_and_ties_deterministic() {
        let bags = vec![
            BagScores {
                bag: 1,
                probs: vec![0.9, 0.05, 0.05],
                gold: vec![0],
            },
            BagScores {
                bag: 0,
                probs: vec![0.9, 0.05, 0.05],
                gold: vec![2],
            },
        ];
        let preds = rank_predictions(&bags, 0);
        assert_eq!(preds.len(), 4);
        assert!(preds.iter().all(|p| p.relation != 0));
        let order: Vec<(usize, usize)> = preds.iter().map(|p| (p.bag, p.relation)).collect();
        assert_eq!(order, vec![(0, 1), (0, 2), (1, 1), (1, 2)]);
        assert_eq!(count_positive_facts(&bags, 0), 1);
    }

    #[test]
    fn hits_full_k_is_one() {
        let bags = vec![BagScores {
            bag: 0,
            probs: vec![0.5, 0.3, 0.2],
            gold: vec![2],
        }];
        let h = hits_at_k_macro(&bags, &[false, true, true], &[1, 3]).unwrap();
        assert_eq!(h.values, vec![(1, 0.0), (3, 1.0)]);
        assert!(hits_at_k_macro(&bags, &[false, true, false], &[1]).is_none());
    }
}
