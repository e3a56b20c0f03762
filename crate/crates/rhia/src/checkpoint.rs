//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "RHIACKPT"
//! version    u32
//! precision  u8       bytes per value (4 or 8)
//! digest     32 bytes SHA-256 of the metadata text
//! meta_len   u64
//! metadata   UTF-8    [model] / [state] / [relations] / [vocab] sections
//! count      u32      number of parameter records
//! record*    u32 name length, name, u32 rank, u64 extents, values
//! ```
//!
//! Loading a double-precision file into a single-precision model rounds each
//! value to the nearest `f32` (ties to even).

use std::fmt::Write as _;
use std::path::Path;

use rhia_core::diff::{ParamStore, Tensor};
use rhia_core::hierarchy::RelationHierarchy;
use rhia_core::model::{Model, ModelConfig};
use rhia_core::Real;
use sha2::{Digest, Sha256};

use crate::config::KeyValues;
use crate::corpus::Vocabulary;
use crate::error::{Result, RunError};

pub const MAGIC: &[u8; 8] = b"RHIACKPT";
pub const VERSION: u32 = 1;

/// A model plus everything needed to encode data for it.
#[derive(Debug, Clone)]
pub struct Checkpoint<T: Real> {
    pub model: Model<T>,
    pub hierarchy: RelationHierarchy,
    pub vocab: Vocabulary,
    /// Training instances per relation id, for long-tail selection.
    pub train_counts: Vec<usize>,
    pub epoch: usize,
    pub seed: u64,
}

fn metadata<T: Real>(c: &Checkpoint<T>) -> String {
    let mut s = String::from("[model]\n");
    s.push_str(&c.model.config().describe());
    let _ = write!(
        s,
        "[state]\nepoch={}\nseed={}\ndepth={}\n[relations]\n",
        c.epoch,
        c.seed,
        c.hierarchy.depth()
    );
    for (r, name) in c.hierarchy.relations().iter().enumerate() {
        let _ = writeln!(s, "{name}\t{}", c.train_counts.get(r).copied().unwrap_or(0));
    }
    s.push_str("[vocab]\n");
    for w in c.vocab.words() {
        s.push_str(w);
        s.push('\n');
    }
    s
}

pub fn digest(text: &str) -> [u8; 32] {
    Sha256::digest(text.as_bytes()).into()
}

pub fn to_bytes<T: Real>(c: &Checkpoint<T>) -> Vec<u8> {
    let meta = metadata(c);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::BYTES as u8);
    out.extend_from_slice(&digest(&meta));
    out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
    out.extend_from_slice(meta.as_bytes());
    let params = c.model.params();
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (_, name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u64).to_le_bytes());
        }
        for v in t.values() {
            let v = v.to_f64().unwrap_or(f64::NAN);
            if T::BYTES == 4 {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            } else {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

/// Writes to a sibling temporary file and renames it into place.
pub fn save<T: Real>(c: &Checkpoint<T>, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, to_bytes(c)).map_err(|e| RunError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| RunError::io(path, e))
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.data.len() - self.pos < n {
            return Err(RunError::Data(format!(
                "checkpoint truncated at byte {} (needed {n} more)",
                self.pos
            )));
        }
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| RunError::Data("checkpoint length overflow".into()))
    }
}

fn section<'a>(meta: &'a str, name: &str) -> Result<Vec<&'a str>> {
    let header = format!("[{name}]");
    let mut lines = meta.lines().skip_while(|l| *l != header);
    if lines.next().is_none() {
        return Err(RunError::Data(format!("checkpoint metadata lacks section {header}")));
    }
    Ok(lines.take_while(|l| !l.starts_with('[')).collect())
}

fn model_config(kv: &KeyValues) -> Result<ModelConfig> {
    let level_sizes = kv
        .require("level_sizes")?
        .split(',')
        .map(|v| v.parse::<usize>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|_| RunError::Data("bad level_sizes in checkpoint".into()))?;
    Ok(ModelConfig {
        vocab_size: kv.value("vocab_size")?,
        word_dim: kv.value("word_dim")?,
        pos_dim: kv.value("pos_dim")?,
        max_len: kv.value("max_len")?,
        lambda: kv.value("lambda")?,
        embed_dim: kv.value("embed_dim")?,
        window: kv.value("window")?,
        filters: kv.value("filters")?,
        level_sizes,
        num_relations: kv.value("num_relations")?,
        layer_norm_eps: kv.value("layer_norm_eps")?,
        init_std: kv.value("init_std")?,
        freeze_heuristic: kv.value("freeze_heuristic")?,
    })
}

pub fn from_bytes<T: Real>(data: &[u8]) -> Result<Checkpoint<T>> {
    let mut r = Reader { data, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(RunError::Data("not a checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(RunError::Data(format!("unsupported checkpoint version {version}")));
    }
    let width = r.take(1)?[0] as usize;
    if width != 4 && width != 8 {
        return Err(RunError::Data(format!("bad value width {width}")));
    }
    let stored_digest: [u8; 32] = r.take(32)?.try_into().unwrap();
    let meta_len = r.len()?;
    let meta = std::str::from_utf8(r.take(meta_len)?)
        .map_err(|_| RunError::Data("checkpoint metadata is not UTF-8".into()))?;
    if digest(meta) != stored_digest {
        return Err(RunError::Data("checkpoint digest mismatch".into()));
    }

    let config = model_config(&KeyValues::parse(&section(meta, "model")?.join("\n"))?)?;
    let state = KeyValues::parse(&section(meta, "state")?.join("\n"))?;
    let mut names = Vec::new();
    let mut train_counts = Vec::new();
    for line in section(meta, "relations")? {
        let (name, count) = line
            .split_once('\t')
            .ok_or_else(|| RunError::Data(format!("bad relation line {line:?}")))?;
        names.push(name);
        train_counts.push(
            count
                .parse()
                .map_err(|_| RunError::Data(format!("bad relation count {count:?}")))?,
        );
    }
    let hierarchy = RelationHierarchy::new(names.iter().copied(), state.value("depth")?)?;
    if hierarchy.relations().iter().map(String::as_str).ne(names.iter().copied()) {
        return Err(RunError::Data("checkpoint relation order is inconsistent".into()));
    }
    let words = match meta.split_once("\n[vocab]\n") {
        Some((_, rest)) => rest.lines().map(String::from).collect(),
        None => return Err(RunError::Data("checkpoint metadata lacks section [vocab]".into())),
    };
    let vocab = Vocabulary::from_words(words)?;

    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| RunError::Data("parameter name is not UTF-8".into()))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len.checked_mul(width).ok_or_else(|| RunError::Data("parameter too large".into()))?)?;
        let values: Vec<T> = raw
            .chunks_exact(width)
            .map(|b| {
                let v = if width == 4 {
                    f32::from_le_bytes(b.try_into().unwrap()) as f64
                } else {
                    f64::from_le_bytes(b.try_into().unwrap())
                };
                T::lit(v)
            })
            .collect();
        store.add(&name, Tensor::from_values(&shape, values)?);
    }
    if r.pos != data.len() {
        return Err(RunError::Data(format!("{} trailing bytes after checkpoint", data.len() - r.pos)));
    }
    let model = Model::from_params(config, store)?;
    if vocab.size() != model.config().vocab_size {
        return Err(RunError::Data("checkpoint vocabulary does not match the word table".into()));
    }
    Ok(Checkpoint {
        model,
        hierarchy,
        vocab,
        train_counts,
        epoch: state.value("epoch")?,
        seed: state.value("seed")?,
    })
}

pub fn load<T: Real>(path: &Path) -> Result<Checkpoint<T>> {
    let data = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
    from_bytes(&data)
}

/// Stored precision (bytes per value) of a checkpoint file.
pub fn stored_precision(path: &Path) -> Result<usize> {
    let data = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
    if data.len() < 13 || &data[..8] != MAGIC {
        return Err(RunError::Data("not a checkpoint".into()));
    }
    Ok(data[12] as usize)
}
