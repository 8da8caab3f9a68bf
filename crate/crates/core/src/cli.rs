//! The `hsm` command-line driver.
//!
//! Every subcommand resolves a [`RunConfig`] from built-in defaults, an
//! optional JSON file (`--config`) and command-line flags, in increasing
//! order of precedence, and writes the resolved config to `<out>/config.json`.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::checkpoint::{self, CheckpointError};
use crate::data::{self, DataError, Dataset, Encoded, SynthConfig};
use crate::encoder::{Dropout, EmbeddingTable, EncoderKind};
use crate::hsoftmax::{self, GradCheckOptions, HierSoftmaxParams, HsError, Stencil};
use crate::metrics::{self, EvalReport, MacroAverage};
use crate::model::{Model, ModelError, ModelSpec};
use crate::optim::{self, CvResult, EpochRecord, OptimError, TrainConfig};
use crate::rng::{SeedStreams, Stream};
use crate::taxonomy::TaxonomyTree;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Optim(#[from] OptimError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Head(#[from] HsError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Flat,
    Hierarchical,
    Both,
}

impl Mode {
    fn variants(self) -> Vec<Variant> {
        match self {
            Mode::Flat => vec![Variant::Flat],
            Mode::Hierarchical => vec![Variant::Hierarchical],
            Mode::Both => vec![Variant::Flat, Variant::Hierarchical],
        }
    }
}

/// One side of a comparison: the same model bound to the flat view or to the
/// full taxonomy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Flat,
    Hierarchical,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Flat => "flat",
            Variant::Hierarchical => "hierarchical",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Variant::Flat => "Flat",
            Variant::Hierarchical => "Hierarchical",
        }
    }

    pub fn tree(self, taxonomy: &TaxonomyTree) -> TaxonomyTree {
        match self {
            Variant::Flat => taxonomy.flat_view(),
            Variant::Hierarchical => taxonomy.clone(),
        }
    }
}

/// Fully resolved settings of one invocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Use the built-in synthetic corpus instead of corpus files.
    pub synthetic: bool,
    pub synthetic_seed: u64,
    pub encoder: EncoderKind,
    /// Hidden sizes tried during cross-validation.
    pub h_dim: Vec<usize>,
    pub bidirectional: bool,
    /// Also try the other direction setting during cross-validation.
    pub search_bidirectional: bool,
    /// Embedding size when no embedding file is given.
    pub emb_dim: usize,
    pub mode: Mode,
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub training: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train: None,
            test: None,
            taxonomy: None,
            embeddings: None,
            synthetic: false,
            synthetic_seed: 1,
            encoder: EncoderKind::Lstm,
            h_dim: vec![150],
            bidirectional: true,
            search_bidirectional: false,
            emb_dim: 50,
            mode: Mode::Both,
            seeds: vec![1],
            out: PathBuf::from("out"),
            training: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    /// Configurations explored by cross-validation.
    pub fn grid(&self) -> Vec<ModelSpec> {
        if self.encoder == EncoderKind::Mean {
            return vec![ModelSpec::mean()];
        }
        let dirs: Vec<bool> = if self.search_bidirectional {
            vec![false, true]
        } else {
            vec![self.bidirectional]
        };
        self.h_dim
            .iter()
            .flat_map(|&h| dirs.iter().map(move |&b| ModelSpec::lstm(h, b)))
            .collect()
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.training.validate()?;
        if self.seeds.is_empty() {
            return Err(CliError::Config("at least one seed is required".into()));
        }
        if self.encoder == EncoderKind::Lstm && (self.h_dim.is_empty() || self.h_dim.contains(&0)) {
            return Err(CliError::Config("--h-dim needs positive sizes".into()));
        }
        if self.embeddings.is_none() && self.emb_dim == 0 {
            return Err(CliError::Config("--emb-dim must be positive".into()));
        }
        if !self.synthetic && (self.train.is_none() || self.taxonomy.is_none()) {
            return Err(CliError::Config("--train and --taxonomy are required unless --synthetic is set".into()));
        }
        Ok(())
    }

    fn synth(&self) -> SynthConfig {
        SynthConfig {
            seed: self.synthetic_seed,
            ..SynthConfig::default()
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "hsm", version, about = "Hierarchical softmax text classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Check analytic gradients against finite differences on random instances.
    Gradcheck(GradcheckArgs),
    /// Cross-validate the configuration grid on the training set.
    Cv(RunArgs),
    /// Select a configuration by cross-validation and retrain on all training data.
    Train(RunArgs),
    /// Score saved checkpoints on a test set.
    Eval(EvalArgs),
    /// Train flat and hierarchical models under identical seeds and report both.
    Compare(RunArgs),
    /// Write the synthetic corpus and its taxonomy to disk.
    Synth(SynthArgs),
}

#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// JSON file with RunConfig fields; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    /// Word vectors in GloVe text format.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Use the built-in synthetic corpus.
    #[arg(long)]
    pub synthetic: bool,
    /// `mean` or `lstm`.
    #[arg(long, value_parser = parse_encoder)]
    pub encoder: Option<EncoderKind>,
    /// Hidden size per direction; a comma-separated list forms a search grid.
    #[arg(long, value_delimiter = ',')]
    pub h_dim: Option<Vec<usize>>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub bidirectional: Option<bool>,
    /// Cross-validate both unidirectional and bidirectional encoders.
    #[arg(long)]
    pub search_bidirectional: bool,
    #[arg(long)]
    pub emb_dim: Option<usize>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// A seed, a comma-separated list, or an inclusive range such as `1..5`.
    #[arg(long, value_parser = parse_seeds)]
    pub seed: Option<SeedList>,
    /// Maximum number of epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub trainable_embeddings: Option<bool>,
    /// Average macro metrics over classes present in the evaluation data only.
    #[arg(long)]
    pub present_classes: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_encoder(s: &str) -> Result<EncoderKind, String> {
    match s {
        "mean" => Ok(EncoderKind::Mean),
        "lstm" => Ok(EncoderKind::Lstm),
        _ => Err(format!("unknown encoder {s:?}; expected mean or lstm")),
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SeedList(pub Vec<u64>);

fn parse_seeds(s: &str) -> Result<SeedList, String> {
    let num = |t: &str| t.trim().parse::<u64>().map_err(|e| format!("bad seed {t:?}: {e}"));
    let seeds = if let Some((a, b)) = s.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(format!("empty seed range {s}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    Ok(SeedList(seeds))
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Number of random head instances.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    /// Number of end-to-end encoder instances.
    #[arg(long, default_value_t = 20)]
    pub encoder_instances: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub encoder_tolerance: f64,
    /// Finite-difference formula: `central2` or `central4`.
    #[arg(long, value_parser = parse_stencil, default_value = "central4")]
    pub stencil: Stencil,
    #[arg(long, default_value_t = 1e-3)]
    pub step: f64,
    #[arg(long, default_value_t = 2e-3)]
    pub encoder_step: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Flip the sign of the analytic gradient (checks the checker).
    #[arg(long, hide = true)]
    pub inject_fault: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        Cli::try_parse_from(["hsm", "gradcheck"])
            .ok()
            .and_then(|c| match c.command {
                Command::Gradcheck(a) => Some(a),
                _ => None,
            })
            .expect("defaults parse")
    }
}

fn parse_stencil(s: &str) -> Result<Stencil, String> {
    match s {
        "central2" => Ok(Stencil::Central2),
        "central4" => Ok(Stencil::Central4),
        _ => Err(format!("unknown stencil {s:?}; expected central2 or central4")),
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoints written by `train`.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long)]
    pub present_classes: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

impl RunArgs {
    /// Defaults, then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(io_err(path))?;
                serde_json::from_str(&text)?
            }
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag { cfg.$($field).+ = v.clone().into(); })*
            };
        }
        set!(
            train => train,
            test => test,
            taxonomy => taxonomy,
            embeddings => embeddings,
            encoder => encoder,
            h_dim => h_dim,
            bidirectional => bidirectional,
            emb_dim => emb_dim,
            mode => mode,
            out => out,
            epochs => training.max_epochs,
            patience => training.patience,
            lr => training.lr,
            batch_size => training.batch_size,
            dropout => training.dropout,
            folds => training.k_folds,
            trainable_embeddings => training.trainable_embeddings,
        );
        if let Some(SeedList(s)) = &self.seed {
            cfg.seeds = s.clone();
        }
        cfg.synthetic |= self.synthetic;
        cfg.search_bidirectional |= self.search_bidirectional;
        if self.present_classes {
            cfg.training.macro_average = MacroAverage::PresentClasses;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses arguments, runs the command and maps the outcome to an exit code:
/// 0 on success, 1 when a gradient check fails, 2 on any error.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

/// Runs one command; `Ok(false)` means a check ran and failed.
pub fn run(command: Command) -> Result<bool, CliError> {
    match command {
        Command::Gradcheck(a) => {
            let summary = cmd_gradcheck(&a)?;
            print!("{}", summary.render());
            if let Some(out) = &a.out {
                write_file(out, "gradcheck.json", &serde_json::to_string_pretty(&summary)?)?;
            }
            Ok(summary.passed)
        }
        Command::Cv(a) => {
            let cfg = a.resolve()?;
            prepare_out(&cfg)?;
            let runs = cmd_cv(&cfg)?;
            let mut text = String::new();
            for r in &runs {
                let _ = writeln!(text, "{} seed {}", r.variant.name(), r.seed);
                for s in &r.cv.scores {
                    let _ = writeln!(text, "  {:<14} macro-F1 {:>8.3}  epochs {:>6.2}", s.spec.label(), s.mean_macro_f1, s.mean_best_epoch);
                }
                let _ = writeln!(text, "  selected {} for {} epochs", r.cv.selected_spec().label(), r.cv.selected_epochs());
            }
            print!("{text}");
            write_file(&cfg.out, "cv.json", &serde_json::to_string_pretty(&runs)?)?;
            Ok(true)
        }
        Command::Train(a) => {
            let cfg = a.resolve()?;
            prepare_out(&cfg)?;
            for run in cmd_train(&cfg)? {
                println!("{}", run.checkpoint.display());
            }
            Ok(true)
        }
        Command::Eval(a) => {
            let average = if a.present_classes {
                MacroAverage::PresentClasses
            } else {
                MacroAverage::AllClasses
            };
            let (table, reports) = cmd_eval(&a.checkpoints, &a.test, average)?;
            print!("{table}");
            if let Some(out) = &a.out {
                write_file(out, "eval.txt", &table)?;
                write_file(out, "eval.json", &serde_json::to_string_pretty(&reports)?)?;
            }
            Ok(true)
        }
        Command::Compare(a) => {
            let cfg = a.resolve()?;
            prepare_out(&cfg)?;
            let report = cmd_compare(&cfg)?;
            print!("{}", report.render());
            Ok(true)
        }
        Command::Synth(a) => {
            let synth = SynthConfig {
                seed: a.seed,
                noise: a.noise.unwrap_or(SynthConfig::default().noise),
                ..SynthConfig::default()
            };
            write_synthetic(&synth, &a.out)?;
            println!("wrote synthetic corpus to {}", a.out.display());
            Ok(true)
        }
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(name);
    fs::write(&path, contents).map_err(io_err(&path))
}

fn prepare_out(cfg: &RunConfig) -> Result<(), CliError> {
    write_file(&cfg.out, "config.json", &serde_json::to_string_pretty(cfg)?)
}

/// Writes `train.tsv`, `test.tsv` and `taxonomy.tsv` into `dir`.
pub fn write_synthetic(synth: &SynthConfig, dir: &Path) -> Result<(), CliError> {
    let ds = data::synth_hierarchical(synth)?;
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for (name, set) in [("train.tsv", &ds.train), ("test.tsv", &ds.test)] {
        let path = dir.join(name);
        data::write_corpus(&path, set).map_err(io_err(&path))?;
    }
    write_file(dir, "taxonomy.tsv", &ds.taxonomy.to_tsv())
}

// ---------------------------------------------------------------------------
// gradcheck

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InstanceResult {
    pub kind: &'static str,
    pub seed: u64,
    pub nodes: usize,
    pub input_dim: usize,
    pub max_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradcheckSummary {
    pub instances: Vec<InstanceResult>,
    pub max_head_error: f64,
    pub max_encoder_error: f64,
    pub passed: bool,
}

impl GradcheckSummary {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in self.instances.iter().filter(|r| !r.passed) {
            let _ = writeln!(s, "FAIL {} instance seed {}: max relative error {:.3e}", r.kind, r.seed, r.max_error);
        }
        let heads = self.instances.iter().filter(|r| r.kind == "head").count();
        let _ = writeln!(s, "head: {heads} instances, max relative error {:.3e}", self.max_head_error);
        let _ = writeln!(
            s,
            "encoder: {} instances, max relative error {:.3e}",
            self.instances.len() - heads,
            self.max_encoder_error
        );
        let _ = writeln!(s, "{}", if self.passed { "PASS" } else { "FAIL" });
        s
    }
}

/// One random head instance: tree of depth ≤ 4 and fan-out ≤ 6, input size
/// ≤ 8, weights from [`HierSoftmaxParams::init_uniform`], hidden state in
/// (-1, 1) like a recurrent encoder's output, and a random target leaf.
pub fn random_head_instance(seed: u64) -> (TaxonomyTree, HierSoftmaxParams, Vec<f64>, crate::taxonomy::NodeId) {
    let mut rng = SeedStreams::new(seed).rng(Stream::Instances);
    let depth = rng.gen_range(1..=4);
    let tree = TaxonomyTree::random(&mut rng, depth, 6, 0.6);
    let d = rng.gen_range(1..=8);
    let params = HierSoftmaxParams::init_uniform(&tree, d, &mut rng);
    let h: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let target = tree.leaves()[rng.gen_range(0..tree.num_classes())];
    (tree, params, h, target)
}

/// A small LSTM or BiLSTM classifier with trainable embeddings and one
/// random example.
pub fn random_model_instance(seed: u64) -> (Model, Encoded) {
    let streams = SeedStreams::new(seed);
    let mut rng = streams.rng(Stream::Instances);
    let tree = TaxonomyTree::random(&mut rng, 3, 3, 0.5);
    let vocab = data::Vocab::from_tokens(&["a", "b", "c", "d"]);
    let d_emb = rng.gen_range(1..=4);
    let mut emb: EmbeddingTable = Model::random_embeddings(vocab, d_emb, &streams);
    emb.trainable = true;
    let spec = ModelSpec::lstm(rng.gen_range(1..=4), rng.gen_bool(0.5));
    let model = Model::new(&spec, emb, tree, &streams);
    let len = rng.gen_range(1..=4);
    let ex = Encoded {
        ids: (0..len).map(|_| rng.gen_range(0..5)).collect(),
        class: rng.gen_range(0..model.num_classes()),
    };
    (model, ex)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<GradcheckSummary, CliError> {
    let mut instances = Vec::new();
    for i in 0..a.instances as u64 {
        let seed = a.seed.wrapping_add(i);
        let (tree, params, h, target) = random_head_instance(seed);
        let opts = GradCheckOptions {
            step: a.step,
            tolerance: a.tolerance,
            stencil: a.stencil,
            inject_fault: a.inject_fault,
        };
        let rep = hsoftmax::gradient_check_with(&params, &tree, &h, target, &opts)?;
        instances.push(InstanceResult {
            kind: "head",
            seed,
            nodes: tree.num_nodes(),
            input_dim: h.len(),
            max_error: rep.max_error,
            passed: rep.passed(),
        });
    }
    for i in 0..a.encoder_instances as u64 {
        let seed = a.seed.wrapping_add(i);
        let (mut model, ex) = random_model_instance(seed);
        let dropout = if i % 2 == 0 { Dropout::OFF } else { Dropout::training(0.5, seed) };
        let mut err = model.max_gradient_error(&ex, dropout, a.stencil, a.encoder_step)?;
        if a.inject_fault && err <= a.encoder_tolerance {
            err = f64::INFINITY;
        }
        instances.push(InstanceResult {
            kind: "encoder",
            seed,
            nodes: model.tree.num_nodes(),
            input_dim: model.encoder.output_dim(),
            max_error: err,
            passed: err <= a.encoder_tolerance,
        });
    }
    let max_of = |kind: &str| {
        instances
            .iter()
            .filter(|r| r.kind == kind)
            .map(|r| r.max_error)
            .fold(0.0, f64::max)
    };
    Ok(GradcheckSummary {
        max_head_error: max_of("head"),
        max_encoder_error: max_of("encoder"),
        passed: instances.iter().all(|r| r.passed),
        instances,
    })
}

// ---------------------------------------------------------------------------
// data and model construction

/// Corpus plus the embedding table every model of a run starts from.
pub struct Prepared {
    pub dataset: Dataset,
    pub train: Vec<Encoded>,
    pub test: Vec<Encoded>,
    pretrained: Option<EmbeddingTable>,
}

impl Prepared {
    pub fn load(cfg: &RunConfig) -> Result<Self, CliError> {
        let dataset = if cfg.synthetic {
            data::synth_hierarchical(&cfg.synth())?
        } else {
            let train = cfg.train.as_ref().expect("validated");
            let taxonomy = cfg.taxonomy.as_ref().expect("validated");
            match &cfg.test {
                Some(test) => data::load_corpus(train, test, taxonomy)?,
                None => {
                    let tree = TaxonomyTree::load(taxonomy).map_err(DataError::from)?;
                    let examples = data::read_corpus_file(train, &tree)?;
                    Dataset::new(examples, Vec::new(), tree)
                }
            }
        };
        let pretrained = match &cfg.embeddings {
            Some(path) => {
                let (table, cov) = data::load_embeddings(path, &dataset.vocab)?;
                log::info!(
                    "embeddings: {} of {} tokens covered, {} lines skipped",
                    cov.covered,
                    cov.vocab_size,
                    cov.skipped_lines
                );
                Some(table)
            }
            None => None,
        };
        log::info!("{} training and {} test examples", dataset.train.len(), dataset.test.len());
        Ok(Self {
            train: dataset.encode(&dataset.train),
            test: dataset.encode(&dataset.test),
            dataset,
            pretrained,
        })
    }

    fn embeddings(&self, cfg: &RunConfig, seed: u64) -> EmbeddingTable {
        match &self.pretrained {
            Some(t) => t.clone(),
            None => Model::random_embeddings(self.dataset.vocab.clone(), cfg.emb_dim, &SeedStreams::new(seed)),
        }
    }

    /// A fresh model; flat and hierarchical variants with the same seed
    /// share embeddings and encoder initialisation.
    pub fn build(&self, cfg: &RunConfig, variant: Variant, spec: &ModelSpec, seed: u64) -> Model {
        let tree = variant.tree(&self.dataset.taxonomy);
        Model::new(spec, self.embeddings(cfg, seed), tree, &SeedStreams::new(seed))
    }
}

fn check_mode(cfg: &RunConfig, taxonomy: &TaxonomyTree) -> Result<(), CliError> {
    if cfg.mode == Mode::Both && taxonomy.num_parents() == 1 {
        return Err(CliError::Config(
            "mode both needs a taxonomy with more than one parent node; this one is flat".into(),
        ));
    }
    Ok(())
}

fn training_for(cfg: &RunConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.training.clone()
    }
}

// ---------------------------------------------------------------------------
// cv / train / eval / compare

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CvRun {
    pub variant: Variant,
    pub seed: u64,
    pub cv: CvResult,
}

pub fn cmd_cv(cfg: &RunConfig) -> Result<Vec<CvRun>, CliError> {
    let prep = Prepared::load(cfg)?;
    check_mode(cfg, &prep.dataset.taxonomy)?;
    let mut runs = Vec::new();
    for &seed in &cfg.seeds {
        for variant in cfg.mode.variants() {
            let cv = optim::cross_validate(&prep.train, &cfg.grid(), &training_for(cfg, seed), |spec| {
                prep.build(cfg, variant, spec, seed)
            })?;
            runs.push(CvRun { variant, seed, cv });
        }
    }
    Ok(runs)
}

/// Result of the full protocol for one variant and seed.
#[derive(Clone, Debug)]
pub struct TrainedRun {
    pub variant: Variant,
    pub seed: u64,
    pub spec: ModelSpec,
    pub epochs: usize,
    pub model: Model,
    pub history: Vec<EpochRecord>,
    pub cv: CvResult,
}

/// Cross-validation picks a configuration and an epoch budget, then the
/// selected model is retrained from scratch on the whole training set.
pub fn train_variant(prep: &Prepared, cfg: &RunConfig, variant: Variant, seed: u64) -> Result<TrainedRun, CliError> {
    let tc = training_for(cfg, seed);
    let cv = optim::cross_validate(&prep.train, &cfg.grid(), &tc, |spec| prep.build(cfg, variant, spec, seed))?;
    let spec = cv.selected_spec();
    let epochs = cv.selected_epochs();
    let final_cfg = TrainConfig {
        max_epochs: epochs,
        ..tc
    };
    let outcome = optim::train(prep.build(cfg, variant, &spec, seed), &prep.train, None, &final_cfg)?;
    Ok(TrainedRun {
        variant,
        seed,
        spec,
        epochs,
        model: outcome.model,
        history: outcome.history,
        cv,
    })
}

fn history_lines(run: &TrainedRun) -> Result<String, CliError> {
    #[derive(Serialize)]
    struct Line<'a> {
        variant: Variant,
        seed: u64,
        #[serde(flatten)]
        record: &'a EpochRecord,
    }
    let mut out = String::new();
    for record in &run.history {
        out.push_str(&serde_json::to_string(&Line {
            variant: run.variant,
            seed: run.seed,
            record,
        })?);
        out.push('\n');
    }
    Ok(out)
}

fn append_history(dir: &Path, run: &TrainedRun) -> Result<(), CliError> {
    let path = dir.join("history.jsonl");
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(io_err(&path))?;
    f.write_all(history_lines(run)?.as_bytes()).map_err(io_err(&path))
}

fn reset_history(dir: &Path) -> Result<(), CliError> {
    write_file(dir, "history.jsonl", "")
}

#[derive(Clone, Debug)]
pub struct SavedRun {
    pub variant: Variant,
    pub seed: u64,
    pub checkpoint: PathBuf,
}

pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<SavedRun>, CliError> {
    let prep = Prepared::load(cfg)?;
    check_mode(cfg, &prep.dataset.taxonomy)?;
    reset_history(&cfg.out)?;
    let mut saved = Vec::new();
    for &seed in &cfg.seeds {
        for variant in cfg.mode.variants() {
            let run = train_variant(&prep, cfg, variant, seed)?;
            append_history(&cfg.out, &run)?;
            let path = cfg.out.join(format!("model-{}-seed{}.ckpt", variant.name(), seed));
            checkpoint::save_model(&path, &run.model)?;
            saved.push(SavedRun {
                variant,
                seed,
                checkpoint: path,
            });
        }
    }
    Ok(saved)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckpointEval {
    pub checkpoint: PathBuf,
    pub report: EvalReport,
}

/// Evaluates each checkpoint on a corpus labelled with its own taxonomy.
pub fn cmd_eval(checkpoints: &[PathBuf], test: &Path, average: MacroAverage) -> Result<(String, Vec<CheckpointEval>), CliError> {
    let mut evals = Vec::new();
    for path in checkpoints {
        let model = checkpoint::load_model(path)?;
        let examples = data::read_corpus_file(test, &model.tree)?;
        let encoded = data::encode_examples(&examples, model.encoder.embeddings.vocab(), &model.tree)?;
        let report = optim::evaluate_model(&model, &encoded, average)?;
        evals.push(CheckpointEval {
            checkpoint: path.clone(),
            report,
        });
    }
    let names: Vec<String> = evals
        .iter()
        .map(|e| e.checkpoint.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned()))
        .collect();
    let cols: Vec<(&str, &[EvalReport])> = names
        .iter()
        .zip(&evals)
        .map(|(n, e)| (n.as_str(), std::slice::from_ref(&e.report)))
        .collect();
    let table = metrics::comparison_table(&format!("Test results on {}", test.display()), &cols);
    Ok((table, evals))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub spec: ModelSpec,
    pub epochs: usize,
    pub head_input_dim: usize,
    pub cv_macro_f1: f64,
    pub test: EvalReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub head_parameters: Vec<usize>,
    pub runs: Vec<SeedResult>,
    pub mean: MetricSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricSummary {
    pub macro_f1: (f64, f64),
    pub macro_precision: (f64, f64),
    pub macro_recall: (f64, f64),
    pub micro_accuracy: (f64, f64),
}

impl MetricSummary {
    fn of(reports: &[EvalReport]) -> Self {
        let ms = |f: fn(&EvalReport) -> f64| metrics::mean_sd(&reports.iter().map(f).collect::<Vec<_>>());
        Self {
            macro_f1: ms(|r| r.macro_f1),
            macro_precision: ms(|r| r.macro_precision),
            macro_recall: ms(|r| r.macro_recall),
            micro_accuracy: ms(|r| r.micro_accuracy),
        }
    }
}

/// Everything `compare` reports; contains no timing so reruns are byte-identical.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CompareReport {
    pub title: String,
    pub seeds: Vec<u64>,
    pub classes: usize,
    pub parent_nodes: usize,
    pub flat: VariantSummary,
    pub hierarchical: VariantSummary,
}

impl CompareReport {
    pub fn render(&self) -> String {
        let tests = |v: &VariantSummary| v.runs.iter().map(|r| r.test.clone()).collect::<Vec<_>>();
        let (f, h) = (tests(&self.flat), tests(&self.hierarchical));
        let mut s = metrics::comparison_table(&self.title, &[(Variant::Flat.title(), &f), (Variant::Hierarchical.title(), &h)]);
        let _ = writeln!(s);
        let _ = writeln!(s, "Selected configurations");
        for (v, sum) in [(Variant::Flat, &self.flat), (Variant::Hierarchical, &self.hierarchical)] {
            for r in &sum.runs {
                let _ = writeln!(
                    s,
                    "  {:<13} seed {:<4} {:<14} epochs {:<4} cv macro-F1 {:.3}",
                    v.title(),
                    r.seed,
                    r.spec.label(),
                    r.epochs,
                    r.cv_macro_f1
                );
            }
        }
        let _ = writeln!(s);
        let _ = writeln!(s, "Output layer weights (C = {}, P = {})", self.classes, self.parent_nodes);
        for (i, seed) in self.seeds.iter().enumerate() {
            let (pf, ph) = (self.flat.head_parameters[i], self.hierarchical.head_parameters[i]);
            let d = self.hierarchical.runs[i].head_input_dim;
            let _ = writeln!(
                s,
                "  seed {seed:<4} flat {pf:<8} hierarchical {ph:<8} difference {:<8} (P-1)(h+1) = {} with h = {d}",
                ph as i64 - pf as i64,
                (self.parent_nodes - 1) * (d + 1)
            );
        }
        s
    }
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<CompareReport, CliError> {
    if cfg.mode != Mode::Both {
        return Err(CliError::Config("compare needs --mode both".into()));
    }
    let prep = Prepared::load(cfg)?;
    check_mode(cfg, &prep.dataset.taxonomy)?;
    if prep.test.is_empty() {
        return Err(CliError::Config("compare needs a test set".into()));
    }
    reset_history(&cfg.out)?;
    let mut summaries = Vec::new();
    for variant in [Variant::Flat, Variant::Hierarchical] {
        let mut runs = Vec::new();
        let mut params = Vec::new();
        for &seed in &cfg.seeds {
            let run = train_variant(&prep, cfg, variant, seed)?;
            append_history(&cfg.out, &run)?;
            let test = optim::evaluate_model(&run.model, &prep.test, cfg.training.macro_average)?;
            params.push(run.model.head_parameters());
            runs.push(SeedResult {
                seed,
                spec: run.spec,
                epochs: run.epochs,
                head_input_dim: run.model.head.input_dim(),
                cv_macro_f1: run.cv.scores[run.cv.selected].mean_macro_f1,
                test,
            });
        }
        let reports: Vec<EvalReport> = runs.iter().map(|r| r.test.clone()).collect();
        summaries.push(VariantSummary {
            variant,
            head_parameters: params,
            mean: MetricSummary::of(&reports),
            runs,
        });
    }
    let hierarchical = summaries.pop().expect("two variants");
    let flat = summaries.pop().expect("two variants");
    let title = match (&cfg.synthetic, &cfg.train) {
        (true, _) => "Test results on the synthetic corpus".to_string(),
        (false, Some(p)) => format!("Test results on {}", p.display()),
        (false, None) => "Test results".to_string(),
    };
    let report = CompareReport {
        title,
        seeds: cfg.seeds.clone(),
        classes: prep.dataset.taxonomy.num_classes(),
        parent_nodes: prep.dataset.taxonomy.num_parents(),
        flat,
        hierarchical,
    };
    write_file(&cfg.out, "report.txt", &report.render())?;
    write_file(&cfg.out, "report.json", &serde_json::to_string_pretty(&report)?)?;
    Ok(report)
}
