//! Corpora, vocabularies and pretrained embeddings.
//!
//! Corpus files hold one example per line as `label<TAB>raw text` (UTF-8).
//! Labels must name taxonomy leaves. The vocabulary is built from the
//! training split only, in first-appearance order, with `<unk>` at row 0.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::encoder::EmbeddingTable;
use crate::matrix::Matrix;
use crate::rng::{SeedStreams, Stream};
use crate::taxonomy::{TaxonomyError, TaxonomyTree};

pub const UNK: &str = "<unk>";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("missing file `{0}`")]
    MissingFile(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: expected `label<TAB>text`")]
    MalformedLine { path: String, line: usize },
    #[error("{path}:{line}: label `{name}` is not a taxonomy leaf")]
    UnknownLabel { path: String, name: String, line: usize },
    #[error("{path}:{line}: document has no tokens")]
    EmptyDocument { path: String, line: usize },
    #[error("{path}:{line}: vector has {found} components, expected {expected}")]
    DimensionMismatch {
        path: String,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("rate must lie in [0, 1), got {0}")]
    InvalidRate(f64),
    #[error("`{0}` must be at least 1")]
    InvalidCount(&'static str),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

/// Lowercases, splits punctuation into standalone tokens, then splits on
/// whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
        } else if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else {
            if !cur.is_empty() {
                tokens.push(std::mem::take(&mut cur));
            }
            tokens.push(ch.to_lowercase().collect());
        }
    }
    if !cur.is_empty() {
        tokens.push(cur);
    }
    tokens
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    pub tokens: Vec<String>,
    pub label: String,
}

/// Token ids plus the class (leaf) index, ready for the encoder.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Encoded {
    pub ids: Vec<usize>,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        v.insert(UNK);
        v
    }

    pub fn from_examples(examples: &[Example]) -> Self {
        let mut v = Self::new();
        for ex in examples {
            for t in &ex.tokens {
                v.insert(t);
            }
        }
        v
    }

    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut v = Self::new();
        for t in tokens {
            v.insert(t.as_ref());
        }
        v
    }

    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        let i = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), i);
        i
    }

    pub fn unk(&self) -> usize {
        0
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(0)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

impl Default for Vocab {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub taxonomy: TaxonomyTree,
    pub vocab: Vocab,
}

impl Dataset {
    pub fn new(train: Vec<Example>, test: Vec<Example>, taxonomy: TaxonomyTree) -> Self {
        let vocab = Vocab::from_examples(&train);
        Self {
            train,
            test,
            taxonomy,
            vocab,
        }
    }

    pub fn encode(&self, examples: &[Example]) -> Vec<Encoded> {
        encode_examples(examples, &self.vocab, &self.taxonomy).expect("labels validated at load")
    }
}

/// Maps tokens through `vocab` (unknown → `<unk>`) and labels to class indices.
pub fn encode_examples(examples: &[Example], vocab: &Vocab, tree: &TaxonomyTree) -> Result<Vec<Encoded>, DataError> {
    examples
        .iter()
        .enumerate()
        .map(|(i, ex)| {
            let class = tree.leaf_by_name(&ex.label).ok_or_else(|| DataError::UnknownLabel {
                path: "<memory>".into(),
                name: ex.label.clone(),
                line: i + 1,
            })?;
            Ok(Encoded {
                ids: ex.tokens.iter().map(|t| vocab.id(t)).collect(),
                class,
            })
        })
        .collect()
}

fn open(path: &Path) -> Result<BufReader<File>, DataError> {
    if !path.exists() {
        return Err(DataError::MissingFile(path.display().to_string()));
    }
    File::open(path).map(BufReader::new).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Reads one corpus file, validating each label against the taxonomy leaves.
pub fn read_corpus_file(path: &Path, tree: &TaxonomyTree) -> Result<Vec<Example>, DataError> {
    let shown = path.display().to_string();
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: shown.clone(),
            source,
        })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 1;
        let (label, text) = line.split_once('\t').ok_or_else(|| DataError::MalformedLine {
            path: shown.clone(),
            line: n,
        })?;
        if tree.leaf_by_name(label).is_none() {
            return Err(DataError::UnknownLabel {
                path: shown.clone(),
                name: label.to_string(),
                line: n,
            });
        }
        let tokens = tokenize(text);
        if tokens.is_empty() {
            return Err(DataError::EmptyDocument {
                path: shown.clone(),
                line: n,
            });
        }
        out.push(Example {
            tokens,
            label: label.to_string(),
        });
    }
    Ok(out)
}

pub fn load_corpus(train: impl AsRef<Path>, test: impl AsRef<Path>, taxonomy: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let taxonomy_path = taxonomy.as_ref();
    if !taxonomy_path.exists() {
        return Err(DataError::MissingFile(taxonomy_path.display().to_string()));
    }
    let tree = TaxonomyTree::load(taxonomy_path)?;
    let train = read_corpus_file(train.as_ref(), &tree)?;
    let test = read_corpus_file(test.as_ref(), &tree)?;
    log::info!(
        "loaded corpus: {} train, {} test, {} classes, {} parents",
        train.len(),
        test.len(),
        tree.num_classes(),
        tree.num_parents()
    );
    Ok(Dataset::new(train, test, tree))
}

/// Writes examples in the corpus format, tokens joined by single spaces.
pub fn write_corpus(path: impl AsRef<Path>, examples: &[Example]) -> std::io::Result<()> {
    let mut f = std::io::BufWriter::new(File::create(path)?);
    for ex in examples {
        writeln!(f, "{}\t{}", ex.label, ex.tokens.join(" "))?;
    }
    f.flush()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingCoverage {
    pub covered: usize,
    pub vocab_size: usize,
    pub skipped_lines: usize,
}

impl EmbeddingCoverage {
    pub fn ratio(&self) -> f64 {
        self.covered as f64 / self.vocab_size as f64
    }
}

/// Loads GloVe-format vectors for the tokens of `vocab`. Rows without a
/// vector (including `<unk>`) start at zero. Lines whose numbers do not parse
/// are skipped and counted; a line with the wrong number of components is an
/// error.
pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocab) -> Result<(EmbeddingTable, EmbeddingCoverage), DataError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut rows: Vec<Option<Vec<f64>>> = vec![None; vocab.len()];
    let mut dim: Option<usize> = None;
    let mut skipped = 0;
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|source| DataError::Io {
            path: shown.clone(),
            source,
        })?;
        let mut fields = line.trim_end().split(' ');
        let Some(token) = fields.next().filter(|t| !t.is_empty()) else {
            skipped += 1;
            continue;
        };
        let values: Result<Vec<f64>, _> = fields.map(str::parse::<f64>).collect();
        let Ok(values) = values else {
            skipped += 1;
            continue;
        };
        if values.is_empty() {
            skipped += 1;
            continue;
        }
        let expected = *dim.get_or_insert(values.len());
        if values.len() != expected {
            return Err(DataError::DimensionMismatch {
                path: shown,
                line: i + 1,
                expected,
                found: values.len(),
            });
        }
        if let Some(id) = vocab.get(token) {
            if id != vocab.unk() && rows[id].is_none() {
                rows[id] = Some(values);
            }
        }
    }
    if skipped > 0 {
        log::warn!("{shown}: skipped {skipped} malformed lines");
    }
    let dim = dim.unwrap_or(0);
    let mut matrix = Matrix::zeros(vocab.len(), dim);
    let mut covered = 0;
    for (id, row) in rows.into_iter().enumerate() {
        if let Some(v) = row {
            matrix.row_mut(id).copy_from_slice(&v);
            covered += 1;
        }
    }
    let coverage = EmbeddingCoverage {
        covered,
        vocab_size: vocab.len(),
        skipped_lines: skipped,
    };
    log::info!("embeddings cover {:.1}% of the vocabulary", 100.0 * coverage.ratio());
    Ok((EmbeddingTable::new(vocab.clone(), matrix), coverage))
}

/// Parameters of the synthetic two-level corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub categories: usize,
    pub classes_per_category: usize,
    pub examples_per_class: usize,
    pub vocab_per_class: usize,
    /// Probability that a token is drawn from the global pool instead of the
    /// document's class pool.
    pub noise: f64,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
    /// Share of each class's documents held out as test examples.
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            categories: 4,
            classes_per_category: 3,
            examples_per_class: 50,
            vocab_per_class: 8,
            noise: 0.1,
            seed: 1,
            min_len: 8,
            max_len: 16,
            test_fraction: 0.2,
        }
    }
}

/// Generates a corpus whose two-level taxonomy is visible in the tokens:
/// every class owns a disjoint pool of tokens, and a category's pool is the
/// union of its classes' pools.
pub fn synth_hierarchical(cfg: &SynthConfig) -> Result<Dataset, DataError> {
    if !(0.0..1.0).contains(&cfg.noise) {
        return Err(DataError::InvalidRate(cfg.noise));
    }
    if !(0.0..1.0).contains(&cfg.test_fraction) {
        return Err(DataError::InvalidRate(cfg.test_fraction));
    }
    for (name, v) in [
        ("categories", cfg.categories),
        ("classes_per_category", cfg.classes_per_category),
        ("examples_per_class", cfg.examples_per_class),
        ("vocab_per_class", cfg.vocab_per_class),
        ("min_len", cfg.min_len),
    ] {
        if v == 0 {
            return Err(DataError::InvalidCount(name));
        }
    }
    let max_len = cfg.max_len.max(cfg.min_len);

    let mut edges = Vec::new();
    let mut pools: Vec<(String, Vec<String>)> = Vec::new();
    for c in 0..cfg.categories {
        let cat = format!("cat{c}");
        edges.push(("synthetic".to_string(), cat.clone()));
        for k in 0..cfg.classes_per_category {
            let class = format!("cat{c}.cls{k}");
            edges.push((cat.clone(), class.clone()));
            let pool = (0..cfg.vocab_per_class).map(|t| format!("w{c}x{k}x{t}")).collect();
            pools.push((class, pool));
        }
    }
    let taxonomy = TaxonomyTree::build_from_edges(&edges)?;
    let global: Vec<&String> = pools.iter().flat_map(|(_, p)| p.iter()).collect();

    let mut rng = SeedStreams::new(cfg.seed).rng(Stream::Data);
    let n_test = ((cfg.examples_per_class as f64) * cfg.test_fraction).round() as usize;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, pool) in &pools {
        for i in 0..cfg.examples_per_class {
            let len = rng.gen_range(cfg.min_len..=max_len);
            let tokens = (0..len)
                .map(|_| {
                    if cfg.noise > 0.0 && rng.gen_bool(cfg.noise) {
                        (*global.choose(&mut rng).unwrap()).clone()
                    } else {
                        pool.choose(&mut rng).unwrap().clone()
                    }
                })
                .collect();
            let ex = Example {
                tokens,
                label: label.clone(),
            };
            if i + n_test >= cfg.examples_per_class {
                test.push(ex);
            } else {
                train.push(ex);
            }
        }
    }
    Ok(Dataset::new(train, test, taxonomy))
}
