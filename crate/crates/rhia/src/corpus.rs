//! Corpus files, vocabulary, embeddings and bag construction.
//!
//! A corpus file has one record per line with six tab-separated fields:
//! head id, tail id, head surface, tail surface, relation, and the
//! space-tokenized sentence. Files ending in `.gz` (or starting with the gzip
//! magic) are decompressed transparently.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use flate2::read::GzDecoder;
use rhia_core::hierarchy::RelationHierarchy;
use rhia_core::instance::{Instance, Span};

use crate::error::{Result, RunError};

/// Default truncation length.
pub const MAX_LEN: usize = 120;
/// Long-tail thresholds reported in corpus statistics.
pub const STATS_THRESHOLDS: [usize; 3] = [100, 200, 1000];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawRecord {
    pub head_id: String,
    pub tail_id: String,
    pub head_surface: String,
    pub tail_surface: String,
    pub relation: String,
    pub sentence: Vec<String>,
}

impl RawRecord {
    pub fn parse(line: &str, line_no: usize) -> Result<Self> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(RunError::Data(format!(
                "line {line_no}: expected 6 tab-separated fields, found {}",
                fields.len()
            )));
        }
        if fields[4].trim().is_empty() {
            return Err(RunError::Data(format!("line {line_no}: empty relation")));
        }
        Ok(RawRecord {
            head_id: fields[0].to_string(),
            tail_id: fields[1].to_string(),
            head_surface: fields[2].to_string(),
            tail_surface: fields[3].to_string(),
            relation: fields[4].trim().to_string(),
            sentence: fields[5].split_whitespace().map(String::from).collect(),
        })
    }

    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.head_id,
            self.tail_id,
            self.head_surface,
            self.tail_surface,
            self.relation,
            self.sentence.join(" ")
        )
    }
}

fn open(path: &Path) -> Result<Box<dyn BufRead>> {
    let mut file = File::open(path).map_err(|e| RunError::io(path, e))?;
    let mut magic = [0u8; 2];
    let n = file.read(&mut magic).map_err(|e| RunError::io(path, e))?;
    let file = File::open(path).map_err(|e| RunError::io(path, e))?;
    if n == 2 && magic == [0x1f, 0x8b] {
        Ok(Box::new(BufReader::new(GzDecoder::new(file))))
    } else {
        Ok(Box::new(BufReader::new(file)))
    }
}

/// Reads every non-blank line of a corpus file.
pub fn read_records(path: &Path) -> Result<Vec<RawRecord>> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RunError::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        out.push(RawRecord::parse(line, i + 1)?);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[RawRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| RunError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}", r.to_line()).map_err(|e| RunError::io(path, e))?;
    }
    w.flush().map_err(|e| RunError::io(path, e))
}

/// Relation taxonomy over every relation named in `sets`.
pub fn hierarchy_from_records(sets: &[&[RawRecord]], depth: usize) -> Result<RelationHierarchy> {
    let names = sets.iter().flat_map(|s| s.iter().map(|r| r.relation.as_str()));
    Ok(RelationHierarchy::new(names, depth)?)
}

/// Word list plus the two reserved ids `UNK = |V|` and `PAD = |V| + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.clone(), i).is_some() {
                return Err(RunError::Data(format!("duplicate vocabulary entry {w:?}")));
            }
        }
        Ok(Vocabulary { words, index })
    }

    /// Every token and entity surface in `records`, most frequent first and
    /// ties in lexical order.
    pub fn from_records(records: &[RawRecord]) -> Self {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut entities = Vec::new();
        for r in records {
            for t in &r.sentence {
                *counts.entry(t.as_str()).or_default() += 1;
            }
            entities.push(entity_token(&r.head_surface));
            entities.push(entity_token(&r.tail_surface));
        }
        for e in &entities {
            counts.entry(e.as_str()).or_default();
        }
        let mut words: Vec<(&str, usize)> = counts.into_iter().collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let words: Vec<String> = words.into_iter().map(|(w, _)| w.to_string()).collect();
        Vocabulary::from_words(words).expect("counts have unique keys")
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// Number of file words, excluding UNK and PAD.
    pub fn known(&self) -> usize {
        self.words.len()
    }

    /// Rows needed in the word table.
    pub fn size(&self) -> usize {
        self.words.len() + 2
    }

    pub fn unk(&self) -> usize {
        self.words.len()
    }

    pub fn pad(&self) -> usize {
        self.words.len() + 1
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn id(&self, word: &str) -> usize {
        self.get(word).unwrap_or(self.unk())
    }

    pub fn word(&self, id: usize) -> &str {
        match id.cmp(&self.words.len()) {
            std::cmp::Ordering::Less => &self.words[id],
            std::cmp::Ordering::Equal => "<unk>",
            std::cmp::Ordering::Greater => "<pad>",
        }
    }
}

/// Pre-trained vectors with their vocabulary. `table` holds `vocab.size()`
/// rows; the UNK and PAD rows are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct Embeddings {
    pub vocab: Vocabulary,
    pub dim: usize,
    pub table: Vec<f64>,
}

impl Embeddings {
    pub fn row(&self, id: usize) -> &[f64] {
        &self.table[id * self.dim..(id + 1) * self.dim]
    }
}

/// Reads `word v1 … v_d` lines. A leading `count dim` header line, as
/// written by word2vec, is skipped.
pub fn load_embeddings(path: &Path) -> Result<Embeddings> {
    let reader = open(path)?;
    let mut words = Vec::new();
    let mut table = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| RunError::io(path, e))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.is_empty() {
            continue;
        }
        if i == 0 && parts.len() == 2 && parts.iter().all(|p| p.parse::<usize>().is_ok()) {
            continue;
        }
        let values: Vec<f64> = parts[1..]
            .iter()
            .map(|v| v.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| RunError::Data(format!("{}: line {}: {e}", path.display(), i + 1)))?;
        match dim {
            None if values.is_empty() => {
                return Err(RunError::Data(format!("{}: line {}: no values", path.display(), i + 1)))
            }
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(RunError::Data(format!(
                    "{}: line {}: expected {d} values, found {}",
                    path.display(),
                    i + 1,
                    values.len()
                )))
            }
            Some(_) => {}
        }
        words.push(parts[0].to_string());
        table.extend(values);
    }
    let dim = dim.ok_or_else(|| RunError::Data(format!("{}: no vectors", path.display())))?;
    table.resize(table.len() + 2 * dim, 0.0);
    Ok(Embeddings {
        vocab: Vocabulary::from_words(words)?,
        dim,
        table,
    })
}

/// Multi-word entity names become one underscore-joined token.
pub fn entity_token(surface: &str) -> String {
    surface.split_whitespace().collect::<Vec<_>>().join("_")
}

/// First occurrence of the joined entity token, else of its parts as a
/// consecutive run.
pub fn locate_entity(sentence: &[String], surface: &str) -> Option<Span> {
    let joined = entity_token(surface);
    if let Some(i) = sentence.iter().position(|t| *t == joined) {
        return Some(Span::single(i));
    }
    let parts: Vec<&str> = joined.split('_').filter(|p| !p.is_empty()).collect();
    if parts.len() < 2 || parts.len() > sentence.len() {
        return None;
    }
    (0..=sentence.len() - parts.len())
        .find(|&i| parts.iter().enumerate().all(|(k, p)| sentence[i + k] == *p))
        .map(|i| Span::new(i, i + parts.len()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rejection {
    HeadMissing,
    TailMissing,
    /// An entity was cut off by truncation or the spans overlap.
    BadSpan(String),
}

/// Converts a record into model input.
pub fn encode(record: &RawRecord, vocab: &Vocabulary, max_len: usize) -> std::result::Result<Instance, Rejection> {
    let head = locate_entity(&record.sentence, &record.head_surface).ok_or(Rejection::HeadMissing)?;
    let tail = locate_entity(&record.sentence, &record.tail_surface).ok_or(Rejection::TailMissing)?;
    let tokens = record.sentence.iter().map(|t| vocab.id(t)).collect();
    Instance::new(
        tokens,
        head,
        tail,
        vocab.id(&entity_token(&record.head_surface)),
        vocab.id(&entity_token(&record.tail_surface)),
        max_len,
        vocab.pad(),
    )
    .map_err(|e| Rejection::BadSpan(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BagMode {
    /// One bag per (head, tail, relation).
    Train,
    /// One bag per (head, tail) with every annotated relation as gold.
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    pub head: String,
    pub tail: String,
    /// Sorted gold relation ids; exactly one in train mode. NA only appears
    /// when it is the sole label.
    pub relations: Vec<usize>,
    pub instances: Vec<Instance>,
}

impl Bag {
    pub fn relation(&self) -> usize {
        self.relations[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusStats {
    pub sentences: usize,
    pub bags: usize,
    /// Accepted instances per relation id.
    pub relation_counts: Vec<usize>,
    pub rejected: usize,
    pub truncated: usize,
}

impl CorpusStats {
    pub fn recount(bags: &[Bag], relations: usize, rejected: usize) -> Self {
        let mut relation_counts = vec![0; relations];
        let mut sentences = 0;
        let mut truncated = 0;
        for b in bags {
            sentences += b.instances.len();
            truncated += b.instances.iter().filter(|i| i.truncated()).count();
            for &r in &b.relations {
                relation_counts[r] += b.instances.len();
            }
        }
        CorpusStats {
            sentences,
            bags: bags.len(),
            relation_counts,
            rejected,
            truncated,
        }
    }

    pub fn long_tail(&self, threshold: usize, na: usize) -> Vec<bool> {
        rhia_core::metrics::long_tail_flags(&self.relation_counts, threshold, na)
    }

    pub fn render(&self, hierarchy: &RelationHierarchy) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "sentences\t{}", self.sentences);
        let _ = writeln!(s, "bags\t{}", self.bags);
        let _ = writeln!(s, "rejected\t{}", self.rejected);
        let _ = writeln!(s, "truncated\t{}", self.truncated);
        for t in STATS_THRESHOLDS {
            let n = self.long_tail(t, hierarchy.na_id()).iter().filter(|&&f| f).count();
            let _ = writeln!(s, "long_tail<{t}\t{n}");
        }
        let _ = writeln!(s, "\nrelation\tinstances\t<100\t<200\t<1000");
        let flags: Vec<Vec<bool>> = STATS_THRESHOLDS
            .iter()
            .map(|&t| self.long_tail(t, hierarchy.na_id()))
            .collect();
        for (r, &c) in self.relation_counts.iter().enumerate() {
            let _ = writeln!(
                s,
                "{}\t{c}\t{}\t{}\t{}",
                hierarchy.relation_name(r),
                flags[0][r] as u8,
                flags[1][r] as u8,
                flags[2][r] as u8
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub bags: Vec<Bag>,
    pub stats: CorpusStats,
}

/// Groups records into bags in order of first appearance. Records whose
/// entities cannot be located are counted and skipped; an unknown relation
/// is an error.
pub fn build_bags(
    records: &[RawRecord],
    vocab: &Vocabulary,
    hierarchy: &RelationHierarchy,
    mode: BagMode,
    max_len: usize,
) -> Result<Dataset> {
    let mut keys: HashMap<(String, String, Option<usize>), usize> = HashMap::new();
    let mut bags: Vec<Bag> = Vec::new();
    let mut rejected = 0;
    for (line, r) in records.iter().enumerate() {
        let rel = hierarchy
            .relation_id(&r.relation)
            .ok_or_else(|| RunError::Data(format!("record {}: unknown relation {:?}", line + 1, r.relation)))?;
        let inst = match encode(r, vocab, max_len) {
            Ok(i) => i,
            Err(_) => {
                rejected += 1;
                continue;
            }
        };
        let key = (
            r.head_id.clone(),
            r.tail_id.clone(),
            (mode == BagMode::Train).then_some(rel),
        );
        let idx = *keys.entry(key).or_insert_with(|| {
            bags.push(Bag {
                head: r.head_id.clone(),
                tail: r.tail_id.clone(),
                relations: Vec::new(),
                instances: Vec::new(),
            });
            bags.len() - 1
        });
        let bag = &mut bags[idx];
        bag.instances.push(inst);
        if !bag.relations.contains(&rel) {
            bag.relations.push(rel);
        }
    }
    let na = hierarchy.na_id();
    for b in &mut bags {
        b.relations.sort_unstable();
        if b.relations.len() > 1 {
            b.relations.retain(|&r| r != na);
        }
    }
    let stats = CorpusStats::recount(&bags, hierarchy.num_relations(), rejected);
    Ok(Dataset { bags, stats })
}

/// Per-relation instance counts from raw records, before any rejection.
pub fn relation_histogram(records: &[RawRecord]) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for r in records {
        *m.entry(r.relation.clone()).or_default() += 1;
    }
    m
}
