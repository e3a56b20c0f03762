//! Seeded synthetic corpora with a relation taxonomy, long-tail skew,
//! label noise and a controlled entity-order ratio.
//!
//! Every non-NA taxonomy node owns a small pool of keyword tokens. A sentence
//! expressing relation `r` carries one keyword from each node on `r`'s chain;
//! the deepest one sits between the two entities. NA sentences carry filler
//! only. A mislabeled instance is drawn from another family but keeps its
//! bag's label.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhia_core::hierarchy::{RelationHierarchy, NA};

use crate::config::KeyValues;
use crate::corpus::RawRecord;
use crate::error::{Result, RunError};

/// The bundled plan: eight relations over three levels.
pub const DEFAULT_PLAN: &str = include_str!("../data/default_plan.txt");

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Skew {
    Uniform,
    /// Relation `i` (in plan order) gets a share proportional to `ratio^i`.
    Geometric(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPlan {
    pub relations: Vec<String>,
    pub depth: usize,
    /// Total bag count, NA included.
    pub bags: usize,
    pub na_fraction: f64,
    pub skew: Skew,
    pub noise: f64,
    /// Fraction of sentences in which the head entity comes first.
    pub head_first: f64,
    pub min_sentences: usize,
    pub max_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub filler_words: usize,
    pub keywords_per_node: usize,
    pub test_fraction: f64,
}

impl Default for SynthPlan {
    fn default() -> Self {
        SynthPlan::parse(DEFAULT_PLAN).expect("bundled plan parses")
    }
}

const PLAN_KEYS: [&str; 14] = [
    "relations",
    "depth",
    "bags",
    "na_fraction",
    "skew",
    "noise",
    "head_first",
    "min_sentences",
    "max_sentences",
    "min_len",
    "max_len",
    "filler_words",
    "keywords_per_node",
    "test_fraction",
];

impl SynthPlan {
    /// Parses `key=value` lines. `relations` is comma-separated; `skew` is
    /// `uniform` or `geometric:<ratio>`.
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text)?;
        kv.check_keys(&PLAN_KEYS)?;
        let relations: Vec<String> = kv
            .require("relations")?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let skew = match kv.require("skew")? {
            "uniform" => Skew::Uniform,
            s => match s.strip_prefix("geometric:") {
                Some(r) => Skew::Geometric(
                    r.parse()
                        .map_err(|_| RunError::Usage(format!("bad skew ratio {r:?}")))?,
                ),
                None => return Err(RunError::Usage(format!("bad skew {s:?}; use uniform or geometric:<ratio>"))),
            },
        };
        let plan = SynthPlan {
            relations,
            depth: kv.value("depth")?,
            bags: kv.value("bags")?,
            na_fraction: kv.value("na_fraction")?,
            skew,
            noise: kv.value("noise")?,
            head_first: kv.value("head_first")?,
            min_sentences: kv.value("min_sentences")?,
            max_sentences: kv.value("max_sentences")?,
            min_len: kv.value("min_len")?,
            max_len: kv.value("max_len")?,
            filler_words: kv.value("filler_words")?,
            keywords_per_node: kv.value("keywords_per_node")?,
            test_fraction: kv.value("test_fraction")?,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn render(&self) -> String {
        let skew = match self.skew {
            Skew::Uniform => "uniform".to_string(),
            Skew::Geometric(r) => format!("geometric:{r}"),
        };
        format!(
            "relations={}\ndepth={}\nbags={}\nna_fraction={}\nskew={skew}\nnoise={}\nhead_first={}\nmin_sentences={}\nmax_sentences={}\nmin_len={}\nmax_len={}\nfiller_words={}\nkeywords_per_node={}\ntest_fraction={}\n",
            self.relations.join(","),
            self.depth,
            self.bags,
            self.na_fraction,
            self.noise,
            self.head_first,
            self.min_sentences,
            self.max_sentences,
            self.min_len,
            self.max_len,
            self.filler_words,
            self.keywords_per_node,
            self.test_fraction
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RunError::Usage(format!("invalid plan: {m}")));
        if self.relations.iter().all(|r| r == NA) {
            return bad("empty taxonomy");
        }
        if let Some(r) = self.relations.iter().find(|r| !r.starts_with('/') || r.ends_with('/') || r.contains("//")) {
            return bad(&format!("relation {r:?} is not a slash path"));
        }
        if !(0.0..1.0).contains(&self.noise) {
            return bad("noise must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.na_fraction) {
            return bad("na_fraction must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.head_first) {
            return bad("head_first must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad("test_fraction must lie in [0, 1)");
        }
        if let Skew::Geometric(r) = self.skew {
            if !(r > 0.0 && r <= 1.0) {
                return bad("geometric ratio must lie in (0, 1]");
            }
        }
        if self.min_sentences == 0 || self.min_sentences > self.max_sentences {
            return bad("sentence range");
        }
        if self.min_len < self.depth + 4 || self.min_len > self.max_len {
            return bad("length range too short for entities and keywords");
        }
        if self.depth == 0 || self.filler_words == 0 || self.keywords_per_node == 0 {
            return bad("depth, filler_words and keywords_per_node must be positive");
        }
        if self.bags < self.relations.len() {
            return bad("fewer bags than relations");
        }
        Ok(())
    }

    pub fn hierarchy(&self) -> Result<RelationHierarchy> {
        Ok(RelationHierarchy::new(self.relations.iter().map(String::as_str), self.depth)?)
    }

    /// Bags per relation in plan order (largest-remainder rounding, at least
    /// one each), followed by the NA bag count.
    pub fn allocation(&self) -> (Vec<usize>, usize) {
        let na = (self.bags as f64 * self.na_fraction).round() as usize;
        let positive = self.bags - na;
        let n = self.relations.len();
        let weights: Vec<f64> = (0..n)
            .map(|i| match self.skew {
                Skew::Uniform => 1.0,
                Skew::Geometric(r) => r.powi(i as i32),
            })
            .collect();
        let total: f64 = weights.iter().sum();
        let exact: Vec<f64> = weights.iter().map(|w| w / total * positive as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let fa = exact[a] - exact[a].floor();
            let fb = exact[b] - exact[b].floor();
            fb.total_cmp(&fa).then(a.cmp(&b))
        });
        let mut left = positive - counts.iter().sum::<usize>();
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        for i in 0..n {
            while counts[i] == 0 {
                let donor = (0..n).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
                counts[donor] -= 1;
                counts[i] += 1;
            }
        }
        (counts, na)
    }
}

/// Bookkeeping for one split.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SplitReport {
    pub bags: BTreeMap<String, usize>,
    pub sentences: usize,
    pub mislabeled: usize,
    pub head_first: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub plan: SynthPlan,
    pub seed: u64,
    pub train: Vec<RawRecord>,
    pub test: Vec<RawRecord>,
    /// Relation whose template produced each record, aligned with `train`
    /// and `test`.
    pub train_families: Vec<String>,
    pub test_families: Vec<String>,
    pub train_report: SplitReport,
    pub test_report: SplitReport,
}

impl SynthCorpus {
    pub fn render_report(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "seed\t{}", self.seed);
        for (name, r) in [("train", &self.train_report), ("test", &self.test_report)] {
            let _ = writeln!(s, "{name}.sentences\t{}", r.sentences);
            let _ = writeln!(s, "{name}.bags\t{}", r.bags.values().sum::<usize>());
            let _ = writeln!(s, "{name}.mislabeled\t{}", r.mislabeled);
            let _ = writeln!(
                s,
                "{name}.mislabeled_rate\t{:.4}",
                r.mislabeled as f64 / r.sentences.max(1) as f64
            );
            let _ = writeln!(s, "{name}.head_first\t{}", r.head_first);
            for (rel, n) in &r.bags {
                let _ = writeln!(s, "{name}.bags[{rel}]\t{n}");
            }
        }
        s
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| RunError::io(dir, e))?;
        crate::corpus::write_records(&dir.join("train.tsv"), &self.train)?;
        crate::corpus::write_records(&dir.join("test.tsv"), &self.test)?;
        let plan = dir.join("plan.txt");
        std::fs::write(&plan, self.plan.render()).map_err(|e| RunError::io(plan, e))?;
        let report = dir.join("synth_report.txt");
        std::fs::write(&report, self.render_report()).map_err(|e| RunError::io(report, e))
    }
}

struct Vocab {
    fillers: Vec<String>,
    /// Keyword pool per level and level-local node id (NA has none).
    keywords: Vec<Vec<Vec<String>>>,
}

impl Vocab {
    fn new(plan: &SynthPlan, h: &RelationHierarchy) -> Self {
        let fillers = (0..plan.filler_words).map(|i| format!("w{i}")).collect();
        let keywords = (0..h.depth())
            .map(|l| {
                (0..h.level_size(l))
                    .map(|n| {
                        if n == 0 {
                            Vec::new()
                        } else {
                            (0..plan.keywords_per_node).map(|j| format!("k{}_{}_{}", l + 1, n, j)).collect()
                        }
                    })
                    .collect()
            })
            .collect();
        Vocab { fillers, keywords }
    }
}

struct Slot {
    bag: usize,
    relation: usize,
}

/// Deterministically builds a corpus from `plan` and `seed`.
pub fn generate_synthetic(plan: &SynthPlan, seed: u64) -> Result<SynthCorpus> {
    plan.validate()?;
    let h = plan.hierarchy()?;
    let vocab = Vocab::new(plan, &h);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (counts, na_bags) = plan.allocation();

    let mut train_bags = Vec::new();
    let mut test_bags = Vec::new();
    let mut next = 0;
    let mut split = |rel: usize, n: usize, train: &mut Vec<Slot>, test: &mut Vec<Slot>| {
        let mut t = (n as f64 * plan.test_fraction).round() as usize;
        if n >= 2 && plan.test_fraction > 0.0 {
            t = t.clamp(1, n - 1);
        } else if n < 2 {
            t = 0;
        }
        for i in 0..n {
            let slot = Slot { bag: next, relation: rel };
            next += 1;
            if i < n - t {
                train.push(slot);
            } else {
                test.push(slot);
            }
        }
    };
    for (i, name) in plan.relations.iter().enumerate() {
        let rel = h.relation_id(name).expect("plan relation in hierarchy");
        split(rel, counts[i], &mut train_bags, &mut test_bags);
    }
    split(h.na_id(), na_bags, &mut train_bags, &mut test_bags);
    train_bags.shuffle(&mut rng);
    test_bags.shuffle(&mut rng);

    let (train, train_families, train_report) = generate_split(plan, &h, &vocab, &train_bags, &mut rng);
    let (test, test_families, test_report) = generate_split(plan, &h, &vocab, &test_bags, &mut rng);
    Ok(SynthCorpus {
        plan: plan.clone(),
        seed,
        train,
        test,
        train_families,
        test_families,
        train_report,
        test_report,
    })
}

fn generate_split(
    plan: &SynthPlan,
    h: &RelationHierarchy,
    vocab: &Vocab,
    bags: &[Slot],
    rng: &mut ChaCha8Rng,
) -> (Vec<RawRecord>, Vec<String>, SplitReport) {
    let sizes: Vec<usize> = bags
        .iter()
        .map(|_| rng.random_range(plan.min_sentences..=plan.max_sentences))
        .collect();
    let total: usize = sizes.iter().sum();
    let noisy_n = (total as f64 * plan.noise).round() as usize;
    let first_n = (total as f64 * plan.head_first).round() as usize;
    let mut noisy = vec![false; total];
    for i in sample(rng, total, noisy_n.min(total)) {
        noisy[i] = true;
    }
    let mut head_first = vec![false; total];
    for i in sample(rng, total, first_n.min(total)) {
        head_first[i] = true;
    }

    let mut records = Vec::with_capacity(total);
    let mut families = Vec::with_capacity(total);
    let mut report = SplitReport::default();
    let mut k = 0;
    for (slot, &m) in bags.iter().zip(&sizes) {
        *report.bags.entry(h.relation_name(slot.relation).to_string()).or_default() += 1;
        let head = format!("ent{}a", slot.bag);
        let tail = format!("ent{}b", slot.bag);
        for _ in 0..m {
            let family = if noisy[k] {
                let mut f = rng.random_range(0..h.num_relations() - 1);
                if f >= slot.relation {
                    f += 1;
                }
                report.mislabeled += 1;
                f
            } else {
                slot.relation
            };
            if head_first[k] {
                report.head_first += 1;
            }
            let sentence = sentence(plan, h, vocab, family, head_first[k], &head, &tail, rng);
            records.push(RawRecord {
                head_id: format!("m.{}a", slot.bag),
                tail_id: format!("m.{}b", slot.bag),
                head_surface: head.clone(),
                tail_surface: tail.clone(),
                relation: h.relation_name(slot.relation).to_string(),
                sentence,
            });
            families.push(h.relation_name(family).to_string());
            k += 1;
        }
    }
    report.sentences = total;
    (records, families, report)
}

#[allow(clippy::too_many_arguments)]
fn sentence(
    plan: &SynthPlan,
    h: &RelationHierarchy,
    vocab: &Vocab,
    family: usize,
    head_first: bool,
    head: &str,
    tail: &str,
    rng: &mut ChaCha8Rng,
) -> Vec<String> {
    let len = rng.random_range(plan.min_len..=plan.max_len);
    let first = rng.random_range(0..=(len - 3) / 2);
    let second = rng.random_range(first + 2..len);
    let mut out: Vec<Option<String>> = vec![None; len];
    let (a, b) = if head_first { (head, tail) } else { (tail, head) };
    out[first] = Some(a.to_string());
    out[second] = Some(b.to_string());
    if !h.is_na(family) {
        let chain = h.chain(family);
        let depth = chain.len();
        for (l, &node) in chain.iter().enumerate().rev() {
            let pool = &vocab.keywords[l][node];
            let word = pool[rng.random_range(0..pool.len())].clone();
            let free: Vec<usize> = if l + 1 == depth {
                (first + 1..second).filter(|&i| out[i].is_none()).collect()
            } else {
                (0..len).filter(|&i| out[i].is_none()).collect()
            };
            if let Some(&pos) = free.get(rng.random_range(0..free.len().max(1))) {
                out[pos] = Some(word);
            }
        }
    }
    out.into_iter()
        .map(|t| t.unwrap_or_else(|| vocab.fillers[rng.random_range(0..vocab.fillers.len())].clone()))
        .collect()
}
