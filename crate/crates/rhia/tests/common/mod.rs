#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rhia::config::Settings;
use rhia::corpus::{build_bags, BagMode, Dataset, Vocabulary, MAX_LEN};
use rhia::synth::{generate_synthetic, SynthCorpus, SynthPlan};
use rhia_core::hierarchy::RelationHierarchy;
use rhia_core::model::Model;
use rhia_core::Real;

pub const TINY_PLAN: &str = "relations=/a/b/c,/a/b/d,/a/e/f,/g/h/i
depth=3
bags=120
na_fraction=0.1
skew=geometric:0.6
noise=0.1
head_first=0.5
min_sentences=1
max_sentences=3
min_len=8
max_len=14
filler_words=40
keywords_per_node=2
test_fraction=0.25
";

pub fn tiny_plan() -> SynthPlan {
    SynthPlan::parse(TINY_PLAN).unwrap()
}

pub struct Fixture {
    pub corpus: SynthCorpus,
    pub hierarchy: RelationHierarchy,
    pub vocab: Vocabulary,
    pub train: Dataset,
    pub test: Dataset,
}

pub fn fixture(seed: u64) -> Fixture {
    let plan = tiny_plan();
    let corpus = generate_synthetic(&plan, seed).unwrap();
    let hierarchy = plan.hierarchy().unwrap();
    let vocab = Vocabulary::from_records(&corpus.train);
    let train = build_bags(&corpus.train, &vocab, &hierarchy, BagMode::Train, MAX_LEN).unwrap();
    let test = build_bags(&corpus.test, &vocab, &hierarchy, BagMode::Test, MAX_LEN).unwrap();
    Fixture {
        corpus,
        hierarchy,
        vocab,
        train,
        test,
    }
}

/// Small dimensions for fast training.
pub fn small_settings() -> Settings {
    Settings {
        word_dim: 8,
        pos_dim: 3,
        max_len: MAX_LEN,
        embed_dim: 12,
        filters: 10,
        batch_size: 16,
        epochs: 3,
        ..Settings::default()
    }
}

pub fn small_model<T: Real>(f: &Fixture, s: &Settings, seed: u64) -> Model<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Model::new(s.model_config(f.vocab.size(), &f.hierarchy), &mut rng).unwrap()
}
