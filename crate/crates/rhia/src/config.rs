//! Flat `key=value` configuration with layered overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rhia_core::hierarchy::RelationHierarchy;
use rhia_core::model::objectives::LossWeights;
use rhia_core::model::ModelConfig;

use crate::error::{Result, RunError};
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    /// One `key=value` per line; blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| RunError::Usage(format!("line {}: expected key=value", i + 1)))?;
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(KeyValues { entries })
    }

    pub fn insert(&mut self, key: &str, value: impl Into<String>) {
        self.entries.insert(key.to_string(), value.into());
    }

    /// Entries of `other` replace entries of `self`.
    pub fn overlay(&mut self, other: &KeyValues) {
        for (k, v) in &other.entries {
            self.entries.insert(k.clone(), v.clone());
        }
    }

    pub fn check_keys(&self, valid: &[&str]) -> Result<()> {
        for k in self.entries.keys() {
            if !valid.contains(&k.as_str()) {
                return Err(RunError::Usage(format!(
                    "unknown key {k:?}; valid keys: {}",
                    valid.join(", ")
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| RunError::Usage(format!("missing key {key:?}")))
    }

    pub fn value<T: FromStr>(&self, key: &str) -> Result<T> {
        let v = self.require(key)?;
        v.parse()
            .map_err(|_| RunError::Usage(format!("bad value {v:?} for key {key:?}")))
    }

    pub fn parse_or<T: FromStr>(&self, key: &str, default: T) -> Result<T> {
        match self.get(key) {
            Some(_) => self.value(key),
            None => Ok(default),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    Single,
    Double,
}

impl FromStr for Precision {
    type Err = RunError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" | "single" => Ok(Precision::Single),
            "f64" | "double" => Ok(Precision::Double),
            _ => Err(RunError::Usage(format!("bad precision {s:?}; use f32 or f64"))),
        }
    }
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        }
    }
}

/// Every tunable of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub lr: f64,
    pub lr_decay: f64,
    pub dropout: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub hier_weight: f64,
    pub order_weight: f64,
    pub reg_weight: f64,
    pub reg_embeddings: bool,
    pub precision: Precision,
    pub word_dim: usize,
    pub pos_dim: usize,
    pub max_len: usize,
    pub lambda: f64,
    pub embed_dim: usize,
    pub window: usize,
    pub filters: usize,
    pub depth: usize,
    pub init_std: f64,
    pub freeze_heuristic: bool,
}

pub const SETTING_KEYS: [&str; 24] = [
    "lr",
    "lr_decay",
    "dropout",
    "clip_norm",
    "batch_size",
    "epochs",
    "patience",
    "seed",
    "validation_fraction",
    "hier_weight",
    "order_weight",
    "reg_weight",
    "reg_embeddings",
    "precision",
    "word_dim",
    "pos_dim",
    "max_len",
    "lambda",
    "embed_dim",
    "window",
    "filters",
    "depth",
    "init_std",
    "freeze_heuristic",
];

impl Default for Settings {
    fn default() -> Self {
        let w = LossWeights::default();
        Settings {
            lr: 0.1,
            lr_decay: 1.0,
            dropout: 0.5,
            clip_norm: 5.0,
            batch_size: 160,
            epochs: 15,
            patience: 5,
            seed: 1,
            validation_fraction: 0.05,
            hier_weight: w.hier,
            order_weight: w.order,
            reg_weight: w.reg,
            reg_embeddings: w.reg_embeddings,
            precision: Precision::Single,
            word_dim: 50,
            pos_dim: 5,
            max_len: 120,
            lambda: 0.05,
            embed_dim: 150,
            window: 3,
            filters: 230,
            depth: 3,
            init_std: 0.02,
            freeze_heuristic: false,
        }
    }
}

impl Settings {
    /// Defaults overridden by the keys present in `kv`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        kv.check_keys(&SETTING_KEYS)?;
        let d = Settings::default();
        let s = Settings {
            lr: kv.parse_or("lr", d.lr)?,
            lr_decay: kv.parse_or("lr_decay", d.lr_decay)?,
            dropout: kv.parse_or("dropout", d.dropout)?,
            clip_norm: kv.parse_or("clip_norm", d.clip_norm)?,
            batch_size: kv.parse_or("batch_size", d.batch_size)?,
            epochs: kv.parse_or("epochs", d.epochs)?,
            patience: kv.parse_or("patience", d.patience)?,
            seed: kv.parse_or("seed", d.seed)?,
            validation_fraction: kv.parse_or("validation_fraction", d.validation_fraction)?,
            hier_weight: kv.parse_or("hier_weight", d.hier_weight)?,
            order_weight: kv.parse_or("order_weight", d.order_weight)?,
            reg_weight: kv.parse_or("reg_weight", d.reg_weight)?,
            reg_embeddings: kv.parse_or("reg_embeddings", d.reg_embeddings)?,
            precision: match kv.get("precision") {
                Some(p) => p.parse()?,
                None => d.precision,
            },
            word_dim: kv.parse_or("word_dim", d.word_dim)?,
            pos_dim: kv.parse_or("pos_dim", d.pos_dim)?,
            max_len: kv.parse_or("max_len", d.max_len)?,
            lambda: kv.parse_or("lambda", d.lambda)?,
            embed_dim: kv.parse_or("embed_dim", d.embed_dim)?,
            window: kv.parse_or("window", d.window)?,
            filters: kv.parse_or("filters", d.filters)?,
            depth: kv.parse_or("depth", d.depth)?,
            init_std: kv.parse_or("init_std", d.init_std)?,
            freeze_heuristic: kv.parse_or("freeze_heuristic", d.freeze_heuristic)?,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(RunError::Usage(format!("invalid setting: {m}")));
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("lr must be finite and >= 0");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(self.clip_norm >= 0.0 && self.clip_norm.is_finite()) {
            return bad("clip_norm must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad("validation_fraction must lie in [0, 1)");
        }
        if [self.hier_weight, self.order_weight, self.reg_weight].iter().any(|w| !(*w >= 0.0)) {
            return bad("loss weights must be >= 0");
        }
        if self.depth == 0 {
            return bad("depth must be >= 1");
        }
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "lr={}", self.lr);
        let _ = writeln!(s, "lr_decay={}", self.lr_decay);
        let _ = writeln!(s, "dropout={}", self.dropout);
        let _ = writeln!(s, "clip_norm={}", self.clip_norm);
        let _ = writeln!(s, "batch_size={}", self.batch_size);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "patience={}", self.patience);
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "validation_fraction={}", self.validation_fraction);
        let _ = writeln!(s, "hier_weight={}", self.hier_weight);
        let _ = writeln!(s, "order_weight={}", self.order_weight);
        let _ = writeln!(s, "reg_weight={}", self.reg_weight);
        let _ = writeln!(s, "reg_embeddings={}", self.reg_embeddings);
        let _ = writeln!(s, "precision={}", self.precision.name());
        let _ = writeln!(s, "word_dim={}", self.word_dim);
        let _ = writeln!(s, "pos_dim={}", self.pos_dim);
        let _ = writeln!(s, "max_len={}", self.max_len);
        let _ = writeln!(s, "lambda={}", self.lambda);
        let _ = writeln!(s, "embed_dim={}", self.embed_dim);
        let _ = writeln!(s, "window={}", self.window);
        let _ = writeln!(s, "filters={}", self.filters);
        let _ = writeln!(s, "depth={}", self.depth);
        let _ = writeln!(s, "init_std={}", self.init_std);
        let _ = writeln!(s, "freeze_heuristic={}", self.freeze_heuristic);
        s
    }

    pub fn weights(&self) -> LossWeights {
        LossWeights {
            hier: self.hier_weight,
            order: self.order_weight,
            reg: self.reg_weight,
            reg_embeddings: self.reg_embeddings,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            lr_decay: self.lr_decay,
            dropout: self.dropout,
            clip_norm: self.clip_norm,
            batch_size: self.batch_size,
            epochs: self.epochs,
            patience: self.patience,
            seed: self.seed,
            validation_fraction: self.validation_fraction,
            weights: self.weights(),
        }
    }

    pub fn model_config(&self, vocab_size: usize, hierarchy: &RelationHierarchy) -> ModelConfig {
        ModelConfig {
            word_dim: self.word_dim,
            pos_dim: self.pos_dim,
            max_len: self.max_len,
            lambda: self.lambda,
            embed_dim: self.embed_dim,
            window: self.window,
            filters: self.filters,
            init_std: self.init_std,
            freeze_heuristic: self.freeze_heuristic,
            ..ModelConfig::new(vocab_size, hierarchy)
        }
    }
}
