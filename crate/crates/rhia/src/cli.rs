//! `rhia train | eval | gradcheck | gensynth`.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rhia_core::diff::{grad_check, GradCheckReport, OpKind, Tape};
use rhia_core::hierarchy::RelationHierarchy;
use rhia_core::instance::{Instance, Span};
use rhia_core::model::objectives::{total_loss, LossWeights};
use rhia_core::model::{Model, ModelConfig};
use rhia_core::Real;
use sha2::{Digest, Sha256};

use crate::checkpoint::{self, Checkpoint};
use crate::config::{KeyValues, Precision, Settings};
use crate::corpus::{self, BagMode, Vocabulary};
use crate::error::{Result, RunError};
use crate::eval::{self, Retention};
use crate::synth::{self, SynthPlan};
use crate::trainer::{self, LOG_HEADER};

#[derive(Debug, Parser)]
#[command(name = "rhia", version, about = "Distantly supervised relation extraction with hierarchical relation attention")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a model; writes manifest.txt, metrics.tsv, stats.txt and model.ckpt into --out.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a test corpus.
    Eval(EvalArgs),
    /// Finite-difference check of the full loss gradient.
    Gradcheck(GradcheckArgs),
    /// Generate a synthetic corpus (train.tsv, test.tsv, plan.txt, synth_report.txt, stats.txt).
    Gensynth(GensynthArgs),
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// Training corpus: TSV lines of head-id, tail-id, head, tail, relation, sentence (gzip accepted).
    #[arg(long)]
    data: PathBuf,
    /// Pre-trained vectors, one `word v1 .. vd` per line; sets word_dim.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Flat key=value file; keys are the flags listed under "Settings".
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads for validation scoring.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[command(flatten)]
    settings: SettingFlags,
}

/// Every config key, settable as a flag of the same name.
#[derive(Debug, Args, Default)]
#[command(next_help_heading = "Settings", rename_all = "snake_case")]
struct SettingFlags {
    /// SGD learning rate [0.1]
    #[arg(long)]
    lr: Option<String>,
    /// Per-epoch learning rate multiplier [1]
    #[arg(long)]
    lr_decay: Option<String>,
    /// Dropout rate on the bag representation [0.5]
    #[arg(long)]
    dropout: Option<String>,
    /// Global gradient-norm clipping threshold, 0 disables [5]
    #[arg(long)]
    clip_norm: Option<String>,
    /// Bags per mini-batch [160]
    #[arg(long)]
    batch_size: Option<String>,
    /// Maximum epochs [15]
    #[arg(long)]
    epochs: Option<String>,
    /// Early-stopping patience in epochs, 0 disables [5]
    #[arg(long)]
    patience: Option<String>,
    /// Random seed [1]
    #[arg(long)]
    seed: Option<String>,
    /// Share of training bags held out for model selection [0.05]
    #[arg(long)]
    validation_fraction: Option<String>,
    /// Weight of the hierarchical attention loss [1]
    #[arg(long)]
    hier_weight: Option<String>,
    /// Weight of the entity-order loss [1]
    #[arg(long)]
    order_weight: Option<String>,
    /// L2 coefficient [1e-5]
    #[arg(long)]
    reg_weight: Option<String>,
    /// Also regularize word and position tables [false]
    #[arg(long)]
    reg_embeddings: Option<String>,
    /// f32 or f64 [f32]
    #[arg(long)]
    precision: Option<String>,
    /// Word embedding size [50]
    #[arg(long)]
    word_dim: Option<String>,
    /// Position embedding size [5]
    #[arg(long)]
    pos_dim: Option<String>,
    /// Sentence truncation length [120]
    #[arg(long)]
    max_len: Option<String>,
    /// Entity gate temperature [0.05]
    #[arg(long)]
    lambda: Option<String>,
    /// Token representation size [150]
    #[arg(long)]
    embed_dim: Option<String>,
    /// Convolution window [3]
    #[arg(long)]
    window: Option<String>,
    /// Convolution filters [230]
    #[arg(long)]
    filters: Option<String>,
    /// Hierarchy depth [3]
    #[arg(long)]
    depth: Option<String>,
    /// Standard deviation for relation tables and the initial state [0.02]
    #[arg(long)]
    init_std: Option<String>,
    /// Keep the heuristic state at its initial value (ablation) [false]
    #[arg(long)]
    freeze_heuristic: Option<String>,
}

impl SettingFlags {
    fn key_values(&self) -> KeyValues {
        let mut kv = KeyValues::default();
        let pairs = [
            ("lr", &self.lr),
            ("lr_decay", &self.lr_decay),
            ("dropout", &self.dropout),
            ("clip_norm", &self.clip_norm),
            ("batch_size", &self.batch_size),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("seed", &self.seed),
            ("validation_fraction", &self.validation_fraction),
            ("hier_weight", &self.hier_weight),
            ("order_weight", &self.order_weight),
            ("reg_weight", &self.reg_weight),
            ("reg_embeddings", &self.reg_embeddings),
            ("precision", &self.precision),
            ("word_dim", &self.word_dim),
            ("pos_dim", &self.pos_dim),
            ("max_len", &self.max_len),
            ("lambda", &self.lambda),
            ("embed_dim", &self.embed_dim),
            ("window", &self.window),
            ("filters", &self.filters),
            ("depth", &self.depth),
            ("init_std", &self.init_std),
            ("freeze_heuristic", &self.freeze_heuristic),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                kv.insert(k, v.clone());
            }
        }
        kv
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Test corpus in the training format; bags are grouped by entity pair.
    #[arg(long)]
    data: PathBuf,
    /// Drop single-sentence bags and keep one, two or all sentences per bag.
    #[arg(long)]
    retention: Option<Retention>,
    /// Report file; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Precision/recall points, two tab-separated columns.
    #[arg(long)]
    pr: Option<PathBuf>,
    /// Attention dump (top-3 relations per level) for the first --trace-bags bags.
    #[arg(long)]
    trace: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    trace_bags: usize,
    /// Seed for retention sampling.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    threads: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Dims {
    Toy,
    Default,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Dims::Toy)]
    dims: Dims,
    /// Maximum relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 3e-4)]
    step: f64,
    /// Coordinates sampled per parameter tensor.
    #[arg(long, default_value_t = 8)]
    samples: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Scale the backward pass of one op by 1.5 (testing hook).
    #[arg(long, hide = true)]
    fault: Option<String>,
}

#[derive(Debug, Args)]
struct GensynthArgs {
    /// key=value plan; the bundled eight-relation plan when absent.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit status.
pub fn run<I, A>(args: I) -> i32
where
    I: IntoIterator<Item = A>,
    A: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Gensynth(a) => cmd_gensynth(a),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn file_digest(path: &Path) -> Result<String> {
    let data = std::fs::read(path).map_err(|e| RunError::io(path, e))?;
    Ok(hex(&Sha256::digest(&data)))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| RunError::io(path, e))
}

/// Defaults, then the config file, then flags.
fn resolve_settings(config: Option<&Path>, flags: &SettingFlags) -> Result<Settings> {
    let mut kv = match config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| RunError::io(p, e))?;
            KeyValues::parse(&text)?
        }
        None => KeyValues::default(),
    };
    kv.overlay(&flags.key_values());
    Settings::from_key_values(&kv)
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut settings = resolve_settings(a.config.as_deref(), &a.settings)?;
    let records = corpus::read_records(&a.data)?;
    let embeddings = a.embeddings.as_deref().map(corpus::load_embeddings).transpose()?;
    if let Some(e) = &embeddings {
        settings.word_dim = e.dim;
    }
    let vocab = match &embeddings {
        Some(e) => e.vocab.clone(),
        None => Vocabulary::from_records(&records),
    };
    let hierarchy = corpus::hierarchy_from_records(&[&records], settings.depth)?;
    let data = corpus::build_bags(&records, &vocab, &hierarchy, BagMode::Train, settings.max_len)?;
    if data.bags.is_empty() {
        return Err(RunError::Data("no usable training records".into()));
    }

    std::fs::create_dir_all(&a.out).map_err(|e| RunError::io(&a.out, e))?;
    let mut manifest = String::new();
    let _ = writeln!(manifest, "artifact_version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "seed={}", settings.seed);
    let _ = writeln!(manifest, "data={}", a.data.display());
    let _ = writeln!(manifest, "data_sha256={}", file_digest(&a.data)?);
    if let Some(p) = &a.embeddings {
        let _ = writeln!(manifest, "embeddings={}", p.display());
        let _ = writeln!(manifest, "embeddings_sha256={}", file_digest(p)?);
    }
    let _ = writeln!(manifest, "threads={}", a.threads);
    manifest.push_str("[config]\n");
    manifest.push_str(&settings.render());
    write_file(&a.out.join("manifest.txt"), &manifest)?;
    write_file(&a.out.join("stats.txt"), &data.stats.render(&hierarchy))?;

    let config = settings.model_config(vocab.size(), &hierarchy);
    match settings.precision {
        Precision::Single => train_with::<f32>(&a, &settings, config, vocab, hierarchy, embeddings, data),
        Precision::Double => train_with::<f64>(&a, &settings, config, vocab, hierarchy, embeddings, data),
    }
}

fn train_with<T: Real>(
    a: &TrainArgs,
    settings: &Settings,
    config: ModelConfig,
    vocab: Vocabulary,
    hierarchy: RelationHierarchy,
    embeddings: Option<corpus::Embeddings>,
    data: corpus::Dataset,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut model: Model<T> = Model::new(config, &mut rng)?;
    if let Some(e) = &embeddings {
        let id = model.ids().word;
        let values: Vec<T> = e.table.iter().map(|&v| T::lit(v)).collect();
        model.params_mut().set_values(id, &values)?;
    }
    let log_path = a.out.join("metrics.tsv");
    let ckpt_path = a.out.join("model.ckpt");
    write_file(&log_path, &format!("{LOG_HEADER}\n"))?;
    let mut log = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| RunError::io(&log_path, e))?;
    let cfg = settings.train_config();
    let counts = data.stats.relation_counts.clone();
    let snapshot = |m: &Model<T>, epoch: usize| Checkpoint {
        model: m.clone(),
        hierarchy: hierarchy.clone(),
        vocab: vocab.clone(),
        train_counts: counts.clone(),
        epoch,
        seed: settings.seed,
    };
    let outcome = trainer::train(model, &data.bags, &hierarchy, &cfg, a.threads, |ev| {
        writeln!(log, "{}", ev.log.line()).map_err(|e| RunError::io(&log_path, e))?;
        if ev.improved {
            checkpoint::save(&snapshot(ev.model, ev.log.epoch), &ckpt_path)?;
        }
        Ok(())
    })?;
    if !ckpt_path.exists() {
        checkpoint::save(&snapshot(&outcome.best, outcome.best_epoch), &ckpt_path)?;
    }
    if let Some(epoch) = outcome.diverged {
        return Err(RunError::Numeric(format!(
            "loss became non-finite in epoch {epoch}; kept the checkpoint from epoch {}",
            outcome.best_epoch
        )));
    }
    println!(
        "trained {} epochs; best epoch {} saved to {}",
        outcome.log.len(),
        outcome.best_epoch,
        ckpt_path.display()
    );
    Ok(())
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    match checkpoint::stored_precision(&a.checkpoint)? {
        4 => eval_with::<f32>(&a),
        _ => eval_with::<f64>(&a),
    }
}

fn eval_with<T: Real>(a: &EvalArgs) -> Result<()> {
    let ckpt: Checkpoint<T> = checkpoint::load(&a.checkpoint)?;
    let records = corpus::read_records(&a.data)?;
    for r in &records {
        if ckpt.hierarchy.relation_id(&r.relation).is_none() {
            return Err(RunError::Data(format!(
                "relation {:?} is not in the checkpoint's hierarchy",
                r.relation
            )));
        }
    }
    let data = corpus::build_bags(
        &records,
        &ckpt.vocab,
        &ckpt.hierarchy,
        BagMode::Test,
        ckpt.model.config().max_len,
    )?;
    let bags = match a.retention {
        Some(mode) => eval::bag_retention(&data.bags, mode, a.seed),
        None => data.bags,
    };
    let report = eval::evaluate(&ckpt.model, &bags, &ckpt.hierarchy, &ckpt.train_counts, a.retention, a.threads)?;
    let text = report.render();
    match &a.report {
        Some(p) => write_file(p, &text)?,
        None => print!("{text}"),
    }
    if let Some(p) = &a.pr {
        eval::write_pr(p, &report.pr)?;
    }
    if let Some(p) = &a.trace {
        let take: Vec<&corpus::Bag> = bags.iter().take(a.trace_bags).collect();
        let preds = eval::predict_bags(&ckpt.model, &take, 1)?;
        let mut s = String::new();
        for (p, b) in preds.iter().zip(&take) {
            s.push_str(&eval::attention_trace(p, b, &ckpt.hierarchy));
        }
        write_file(p, &s)?;
    }
    Ok(())
}

/// Relations for the gradient check taxonomy (six plus NA, depth 3).
pub const CHECK_RELATIONS: [&str; 6] = ["/a/b/c", "/a/b/d", "/a/e/f", "/g/h/i", "/g/h/j", "/k/l"];

pub struct CheckProblem {
    pub model: Model<f64>,
    pub hierarchy: RelationHierarchy,
    pub bags: Vec<Vec<Instance>>,
    pub gold: Vec<usize>,
}

fn random_sentence(rng: &mut ChaCha8Rng, vocab: usize, max_len: usize) -> Instance {
    let len = rng.random_range(4..=max_len);
    let tokens: Vec<usize> = (0..len).map(|_| rng.random_range(0..vocab - 2)).collect();
    let a = rng.random_range(0..len);
    let mut b = rng.random_range(0..len - 1);
    if b >= a {
        b += 1;
    }
    let (hw, tw) = (rng.random_range(0..vocab - 2), rng.random_range(0..vocab - 2));
    Instance::new(tokens, Span::single(a), Span::single(b), hw, tw, max_len, vocab - 1).expect("valid spans")
}

/// Two bags of one to three sentences over a random model.
pub fn check_problem(dims: Dims, seed: u64) -> Result<CheckProblem> {
    let hierarchy = RelationHierarchy::new(CHECK_RELATIONS, 3)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = match dims {
        Dims::Toy => ModelConfig {
            word_dim: 4,
            pos_dim: 2,
            max_len: 12,
            embed_dim: 6,
            filters: 5,
            ..ModelConfig::new(20, &hierarchy)
        },
        Dims::Default => ModelConfig {
            max_len: 30,
            ..ModelConfig::new(40, &hierarchy)
        },
    };
    let model = Model::new(config.clone(), &mut rng)?;
    let bags: Vec<Vec<Instance>> = (0..2)
        .map(|_| {
            let m = rng.random_range(1..=3);
            (0..m)
                .map(|_| random_sentence(&mut rng, config.vocab_size, config.max_len.min(12)))
                .collect()
        })
        .collect();
    let gold = (0..2).map(|_| rng.random_range(1..hierarchy.num_relations())).collect();
    Ok(CheckProblem {
        model,
        hierarchy,
        bags,
        gold,
    })
}

/// Runs the finite-difference check on the full composed loss, optionally
/// corrupting one op's backward pass.
pub fn run_gradcheck(
    dims: Dims,
    seed: u64,
    step: f64,
    tol: f64,
    samples: usize,
    fault: Option<OpKind>,
) -> Result<GradCheckReport> {
    let CheckProblem {
        mut model,
        hierarchy,
        bags,
        gold,
    } = check_problem(dims, seed)?;
    let views: Vec<&[Instance]> = bags.iter().map(Vec::as_slice).collect();
    let weights = LossWeights {
        reg_embeddings: true,
        ..LossWeights::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
    Ok(grad_check(
        &mut model,
        |m: &Model<f64>| {
            let mut tape = Tape::new(m.params());
            if let Some(k) = fault {
                tape.inject_fault(k);
            }
            let f = m.forward(&mut tape, &views, None)?;
            let l = total_loss(&mut tape, m, &f, &views, &gold, &hierarchy, &weights)?;
            let g = tape.backward(l.total)?;
            Ok((tape.scalar(l.total), g))
        },
        step,
        tol,
        samples,
        &mut rng,
    )?)
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let fault = match &a.fault {
        Some(name) => Some(OpKind::from_name(name).ok_or_else(|| RunError::Usage(format!("unknown op {name:?}")))?),
        None => None,
    };
    let report = run_gradcheck(a.dims, a.seed, a.step, a.tol, a.samples, fault)?;
    let verdict = if report.passed() { "PASS" } else { "FAIL" };
    println!(
        "{verdict} max_rel_err={:.3e} tol={:.1e} coordinates={}",
        report.max_rel_err, report.tol, report.coordinates
    );
    if let Some(k) = fault {
        println!("fault injected into op {}", k.name());
    }
    for w in &report.worst {
        println!(
            "  {}[{}] analytic={:.6e} numeric={:.6e} rel_err={:.3e}",
            w.param, w.index, w.analytic, w.numeric, w.rel_err
        );
    }
    if report.passed() {
        Ok(())
    } else {
        let blame = fault.map(|k| format!(" (fault in op {})", k.name())).unwrap_or_default();
        Err(RunError::Numeric(format!(
            "gradient check failed: max relative error {:.3e} >= {:.1e}{blame}",
            report.max_rel_err, report.tol
        )))
    }
}

fn cmd_gensynth(a: GensynthArgs) -> Result<()> {
    let plan = match &a.plan {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| RunError::io(p, e))?;
            SynthPlan::parse(&text)?
        }
        None => SynthPlan::default(),
    };
    let corpus = synth::generate_synthetic(&plan, a.seed)?;
    corpus.write(&a.out)?;
    let hierarchy = plan.hierarchy()?;
    let vocab = Vocabulary::from_records(&corpus.train);
    let train = corpus::build_bags(&corpus.train, &vocab, &hierarchy, BagMode::Train, corpus::MAX_LEN)?;
    write_file(&a.out.join("stats.txt"), &train.stats.render(&hierarchy))?;
    print!("{}", corpus.render_report());
    Ok(())
}
