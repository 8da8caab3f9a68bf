//! Training: Adam updates over mini-batches, early stopping on validation
//! macro-F1, and k-fold cross-validation for configuration selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Encoded;
use crate::encoder::Dropout;
use crate::metrics::{self, EvalReport, MacroAverage};
use crate::model::{Model, ModelError, ModelSpec};
use crate::rng::{SeedStreams, Stream};

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("tensor {index}: parameter has {params} entries but gradient has {grads}")]
    ShapeMismatch { index: usize, params: usize, grads: usize },
    #[error("expected {expected} tensors, got {found}")]
    TensorCountMismatch { expected: usize, found: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("example {index} has class {class}, but the taxonomy has {classes} leaves")]
    UnknownLabel { index: usize, class: usize, classes: usize },
    #[error("{examples} examples cannot fill {folds} folds")]
    TooFewExamples { examples: usize, folds: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Moment buffers mirror the parameter tensors; they are sized on the first
/// step and every later step must present the same shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn shapes(&self) -> Vec<usize> {
        self.m.iter().map(Vec::len).collect()
    }

    /// One bias-corrected Adam update of every tensor.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<(), OptimError> {
        if params.len() != grads.len() {
            return Err(OptimError::TensorCountMismatch {
                expected: params.len(),
                found: grads.len(),
            });
        }
        for (index, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != g.len() {
                return Err(OptimError::ShapeMismatch {
                    index,
                    params: p.len(),
                    grads: g.len(),
                });
            }
        }
        if self.t == 0 && self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = self.m.clone();
        } else {
            if self.m.len() != grads.len() {
                return Err(OptimError::TensorCountMismatch {
                    expected: self.m.len(),
                    found: grads.len(),
                });
            }
            for (index, (m, g)) in self.m.iter().zip(grads).enumerate() {
                if m.len() != g.len() {
                    return Err(OptimError::ShapeMismatch {
                        index,
                        params: m.len(),
                        grads: g.len(),
                    });
                }
            }
        }

        self.t += 1;
        let AdamConfig { lr, beta1, beta2, epsilon } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            for k in 0..g.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

pub fn adam_step(state: &mut AdamState, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<(), OptimError> {
    state.step(params, grads)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub dropout: f64,
    pub k_folds: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub trainable_embeddings: bool,
    pub macro_average: MacroAverage,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            batch_size: 10,
            dropout: 0.5,
            k_folds: 4,
            max_epochs: 50,
            patience: 3,
            seed: 1,
            trainable_embeddings: false,
            macro_average: MacroAverage::AllClasses,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), OptimError> {
        let bad = |m: &str| Err(OptimError::InvalidConfig(m.into()));
        if self.batch_size < 1 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if self.k_folds < 2 {
            return bad("k_folds must be at least 2");
        }
        if self.patience < 1 {
            return bad("patience must be at least 1");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            ..AdamConfig::default()
        }
    }
}

/// One line of training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_macro_f1: Option<f64>,
    pub val_macro_precision: Option<f64>,
    pub val_macro_recall: Option<f64>,
    pub val_micro_accuracy: Option<f64>,
    pub seconds: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were returned; 0 if none ran.
    pub best_epoch: usize,
}

fn check_labels(data: &[Encoded], classes: usize) -> Result<(), OptimError> {
    if data.is_empty() {
        return Err(OptimError::EmptyDataset);
    }
    match data.iter().position(|e| e.class >= classes) {
        Some(index) => Err(OptimError::UnknownLabel {
            index,
            class: data[index].class,
            classes,
        }),
        None => Ok(()),
    }
}

/// Predicts every example and scores the predictions.
pub fn evaluate_model(model: &Model, data: &[Encoded], average: MacroAverage) -> Result<EvalReport, OptimError> {
    let predictions = data
        .par_iter()
        .map(|e| model.predict(&e.ids))
        .collect::<Result<Vec<_>, _>>()?;
    let truths: Vec<usize> = data.iter().map(|e| e.class).collect();
    metrics::evaluate_with(&truths, &predictions, model.num_classes(), average)
        .map_err(|e| OptimError::InvalidConfig(e.to_string()))
}

/// Mini-batch Adam training.
///
/// With a validation set, training stops once validation macro-F1 has not
/// improved for `patience` epochs and the best epoch's parameters are
/// returned. Without one, all `max_epochs` epochs run and the final
/// parameters are returned.
pub fn train(mut model: Model, data: &[Encoded], validation: Option<&[Encoded]>, cfg: &TrainConfig) -> Result<TrainOutcome, OptimError> {
    cfg.validate()?;
    check_labels(data, model.num_classes())?;
    if let Some(v) = validation {
        check_labels(v, model.num_classes())?;
    }
    model.encoder.embeddings.trainable = cfg.trainable_embeddings;

    let streams = SeedStreams::new(cfg.seed);
    let mut shuffle_rng = streams.rng(Stream::Shuffle);
    let mut dropout_rng = streams.rng(Stream::Dropout);
    let mut adam = AdamState::new(cfg.adam());
    let shapes = model.trainable_shapes();
    let mut buffers: Vec<Vec<f64>> = shapes.iter().map(|&n| vec![0.0; n]).collect();

    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Model)> = None;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let started = Instant::now();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let seeds: Vec<u64> = batch.iter().map(|_| dropout_rng.gen()).collect();
            let results = batch
                .par_iter()
                .zip(seeds.par_iter())
                .map(|(&i, &seed)| model.forward_backward(&data[i], Dropout::training(cfg.dropout, seed)))
                .collect::<Result<Vec<_>, _>>()?;
            buffers.iter_mut().for_each(|b| b.fill(0.0));
            let scale = 1.0 / batch.len() as f64;
            // Sequential reduction in batch order keeps runs bit-identical.
            for (loss, grads) in &results {
                loss_sum += loss;
                model.accumulate(grads, scale, &mut buffers);
            }
            adam.step(&mut model.trainable_tensors_mut(), &buffers)?;
            model.encoder.bump_version();
        }
        let train_loss = loss_sum / data.len() as f64;

        let report = validation
            .map(|v| evaluate_model(&model, v, cfg.macro_average))
            .transpose()?;
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_macro_f1: report.as_ref().map(|r| r.macro_f1),
            val_macro_precision: report.as_ref().map(|r| r.macro_precision),
            val_macro_recall: report.as_ref().map(|r| r.macro_recall),
            val_micro_accuracy: report.as_ref().map(|r| r.micro_accuracy),
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: loss {train_loss:.5}");

        if let Some(r) = report {
            if best.as_ref().map_or(true, |(f1, _, _)| r.macro_f1 > *f1) {
                best = Some((r.macro_f1, epoch, model.clone()));
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    break;
                }
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => {
            let last = history.len();
            (model, last)
        }
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

/// Fold index for every example.
///
/// Classes with at least `k` examples are dealt round-robin so each fold
/// gets its share; examples of rarer classes are shuffled together and dealt
/// afterwards. A single running counter keeps fold sizes within one.
pub fn assign_folds<R: Rng + ?Sized>(classes: &[usize], k: usize, rng: &mut R) -> Vec<usize> {
    let n_classes = classes.iter().copied().max().map_or(0, |m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &c) in classes.iter().enumerate() {
        by_class[c].push(i);
    }
    let mut folds = vec![0; classes.len()];
    let mut next = 0;
    let mut rare = Vec::new();
    for members in &mut by_class {
        if members.len() >= k {
            members.shuffle(rng);
            for &i in members.iter() {
                folds[i] = next % k;
                next += 1;
            }
        } else {
            rare.extend_from_slice(members);
        }
    }
    rare.shuffle(rng);
    for i in rare {
        folds[i] = next % k;
        next += 1;
    }
    folds
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub config: usize,
    pub spec: ModelSpec,
    pub fold: usize,
    pub best_epoch: usize,
    pub val_macro_f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    pub spec: ModelSpec,
    pub mean_macro_f1: f64,
    pub mean_best_epoch: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub folds: Vec<usize>,
    pub log: Vec<FoldRecord>,
    pub scores: Vec<ConfigScore>,
    pub selected: usize,
}

impl CvResult {
    pub fn selected_spec(&self) -> ModelSpec {
        self.scores[self.selected].spec
    }

    /// Epoch budget for retraining on all data: the rounded mean of the
    /// per-fold best epochs of the selected configuration.
    pub fn selected_epochs(&self) -> usize {
        (self.scores[self.selected].mean_best_epoch.round() as usize).max(1)
    }
}

/// Index of the best score: highest mean macro-F1, then smaller `h_dim`,
/// then unidirectional, then grid order.
pub fn select_config(scores: &[ConfigScore]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        let b = &scores[best];
        let better = s.mean_macro_f1 > b.mean_macro_f1
            || (s.mean_macro_f1 == b.mean_macro_f1
                && (s.spec.h_dim < b.spec.h_dim
                    || (s.spec.h_dim == b.spec.h_dim && !s.spec.bidirectional && b.spec.bidirectional)));
        if better {
            best = i;
        }
    }
    best
}

/// k-fold cross-validation of every configuration in `grid`.
///
/// `build` creates a fresh model for a configuration; it is called once per
/// (configuration, fold) pair.
pub fn cross_validate<F>(data: &[Encoded], grid: &[ModelSpec], cfg: &TrainConfig, build: F) -> Result<CvResult, OptimError>
where
    F: Fn(&ModelSpec) -> Model,
{
    cfg.validate()?;
    if grid.is_empty() {
        return Err(OptimError::InvalidConfig("empty configuration grid".into()));
    }
    if data.len() < cfg.k_folds {
        return Err(OptimError::TooFewExamples {
            examples: data.len(),
            folds: cfg.k_folds,
        });
    }
    let classes: Vec<usize> = data.iter().map(|e| e.class).collect();
    let folds = assign_folds(&classes, cfg.k_folds, &mut SeedStreams::new(cfg.seed).rng(Stream::Folds));

    let mut log = Vec::new();
    let mut scores = Vec::new();
    for (ci, spec) in grid.iter().enumerate() {
        let mut f1s = Vec::new();
        let mut epochs = Vec::new();
        for fold in 0..cfg.k_folds {
            let (train_set, valid): (Vec<Encoded>, Vec<Encoded>) = {
                let mut t = Vec::new();
                let mut v = Vec::new();
                for (e, &f) in data.iter().zip(&folds) {
                    if f == fold {
                        v.push(e.clone());
                    } else {
                        t.push(e.clone());
                    }
                }
                (t, v)
            };
            let outcome = train(build(spec), &train_set, Some(&valid), cfg)?;
            let best_f1 = outcome.history[outcome.best_epoch - 1].val_macro_f1.expect("validation ran");
            log::info!("cv {} fold {fold}: best epoch {} macro-F1 {best_f1:.3}", spec.label(), outcome.best_epoch);
            log.push(FoldRecord {
                config: ci,
                spec: *spec,
                fold,
                best_epoch: outcome.best_epoch,
                val_macro_f1: best_f1,
            });
            f1s.push(best_f1);
            epochs.push(outcome.best_epoch as f64);
        }
        scores.push(ConfigScore {
            spec: *spec,
            mean_macro_f1: f1s.iter().sum::<f64>() / f1s.len() as f64,
            mean_best_epoch: epochs.iter().sum::<f64>() / epochs.len() as f64,
        });
    }
    let selected = select_config(&scores);
    Ok(CvResult {
        folds,
        log,
        scores,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Vocab;
    use crate::encoder::{EmbeddingTable, EncoderKind};
    use crate::matrix::Matrix;
    use crate::taxonomy::TaxonomyTree;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut state = AdamState::new(AdamConfig::default());
        let mut p = vec![1.5, -2.0];
        state.step(&mut [&mut p], &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(p, vec![1.5, -2.0]);
        assert_eq!(state.steps(), 1);
    }

    #[test]
    fn single_step_value() {
        // lr · m̂ / (sqrt(v̂) + ε) with m̂ = v̂ = 1: 0.001 / (1 + 1e-8).
        let mut state = AdamState::new(AdamConfig::default());
        let mut p = vec![0.0];
        state.step(&mut [&mut p], &[vec![1.0]]).unwrap();
        assert!((p[0] - -0.000999999990000000099).abs() < 1e-17, "{}", p[0]);
    }

    #[test]
    fn bias_correction_is_not_linear_in_lr() {
        let mut twice = vec![0.0];
        let mut s = AdamState::new(AdamConfig::default());
        s.step(&mut [&mut twice], &[vec![1.0]]).unwrap();
        s.step(&mut [&mut twice], &[vec![1.0]]).unwrap();
        let mut doubled = vec![0.0];
        let mut s = AdamState::new(AdamConfig {
            lr: 0.002,
            ..AdamConfig::default()
        });
        s.step(&mut [&mut doubled], &[vec![1.0]]).unwrap();
        assert_ne!(twice, doubled);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = AdamState::new(AdamConfig::default());
        let mut p = vec![0.0; 2];
        assert!(matches!(
            s.step(&mut [&mut p], &[vec![1.0]]).unwrap_err(),
            OptimError::ShapeMismatch { index: 0, params: 2, grads: 1 }
        ));
        s.step(&mut [&mut p], &[vec![1.0, 1.0]]).unwrap();
        let mut q = vec![0.0; 3];
        assert!(matches!(
            s.step(&mut [&mut q], &[vec![1.0; 3]]).unwrap_err(),
            OptimError::ShapeMismatch { .. }
        ));
        assert_eq!(s.shapes(), vec![2]);
    }

    #[test]
    fn folds_partition_and_balance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let classes = [0, 0, 0, 0, 1, 1, 1, 1];
        let folds = assign_folds(&classes, 4, &mut rng);
        for f in 0..4 {
            let members: Vec<usize> = (0..8).filter(|&i| folds[i] == f).collect();
            assert_eq!(members.len(), 2);
            assert_eq!(members.iter().filter(|&&i| classes[i] == 0).count(), 1);
        }
        // Rare classes still land somewhere and sizes stay within one.
        let classes = [0, 0, 0, 0, 0, 1, 2, 3, 3];
        let folds = assign_folds(&classes, 4, &mut rng);
        let mut sizes = [0; 4];
        folds.iter().for_each(|&f| sizes[f] += 1);
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
    }

    #[test]
    fn selection_tie_breaks() {
        let s = |f1, h, bi| ConfigScore {
            spec: ModelSpec {
                encoder: EncoderKind::Lstm,
                h_dim: h,
                bidirectional: bi,
            },
            mean_macro_f1: f1,
            mean_best_epoch: 1.0,
        };
        assert_eq!(select_config(&[s(50.0, 150, true), s(60.0, 150, false)]), 1);
        assert_eq!(select_config(&[s(60.0, 150, false), s(60.0, 100, true)]), 1);
        assert_eq!(select_config(&[s(60.0, 100, true), s(60.0, 100, false)]), 1);
        assert_eq!(select_config(&[s(60.0, 100, false), s(60.0, 100, true)]), 0);
    }

    pub(crate) fn separable() -> (Model, Vec<Encoded>) {
        let tree = TaxonomyTree::build_from_edges(&[("R", "neg"), ("R", "pos")]).unwrap();
        let vocab = Vocab::from_tokens(&["a", "b", "c", "d"]);
        let emb = Matrix::from_rows(&[
            vec![0.0, 0.0],
            vec![1.0, 0.2],
            vec![0.8, -0.3],
            vec![-1.0, 0.1],
            vec![-0.7, -0.2],
        ]);
        let table = EmbeddingTable::new(vocab, emb);
        let model = Model::new(&ModelSpec::mean(), table, tree, &SeedStreams::new(5));
        let data = vec![
            Encoded { ids: vec![1, 2], class: 1 },
            Encoded { ids: vec![1], class: 1 },
            Encoded { ids: vec![2, 2, 1], class: 1 },
            Encoded { ids: vec![3, 4], class: 0 },
            Encoded { ids: vec![4], class: 0 },
            Encoded { ids: vec![3, 3, 4], class: 0 },
        ];
        (model, data)
    }

    #[test]
    fn zero_epochs_returns_initial_model() {
        let (model, data) = separable();
        let cfg = TrainConfig {
            max_epochs: 0,
            ..TrainConfig::default()
        };
        let out = train(model.clone(), &data, Some(&data), &cfg).unwrap();
        assert!(out.history.is_empty());
        assert_eq!(out.model.head, model.head);
    }

    #[test]
    fn training_errors() {
        let (model, data) = separable();
        let cfg = TrainConfig::default();
        assert_eq!(train(model.clone(), &[], None, &cfg).unwrap_err(), OptimError::EmptyDataset);
        let bad = vec![Encoded { ids: vec![1], class: 9 }];
        assert!(matches!(
            train(model.clone(), &bad, None, &cfg).unwrap_err(),
            OptimError::UnknownLabel { index: 0, class: 9, .. }
        ));
        let cfg_bad = TrainConfig { batch_size: 0, ..cfg.clone() };
        assert!(matches!(train(model.clone(), &data, None, &cfg_bad).unwrap_err(), OptimError::InvalidConfig(_)));
        let few = &data[..3];
        assert!(matches!(
            cross_validate(few, &[ModelSpec::mean()], &cfg, |_| model.clone()).unwrap_err(),
            OptimError::TooFewExamples { examples: 3, folds: 4 }
        ));
    }

    #[test]
    fn separable_toy_problem_is_learned() {
        let (model, data) = separable();
        let cfg = TrainConfig {
            dropout: 0.0,
            lr: 0.05,
            batch_size: 2,
            max_epochs: 30,
            ..TrainConfig::default()
        };
        let out = train(model, &data, None, &cfg).unwrap();
        let losses: Vec<f64> = out.history.iter().map(|r| r.train_loss).collect();
        assert!(losses[..5].windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        let r = evaluate_model(&out.model, &data, MacroAverage::AllClasses).unwrap();
        assert_eq!(r.micro_accuracy, 100.0);
    }

    #[test]
    fn best_epoch_is_restored() {
        let (model, data) = separable();
        let cfg = TrainConfig {
            lr: 0.05,
            batch_size: 2,
            max_epochs: 20,
            patience: 2,
            ..TrainConfig::default()
        };
        let out = train(model, &data, Some(&data), &cfg).unwrap();
        let best = out.history.iter().filter_map(|r| r.val_macro_f1).fold(f64::MIN, f64::max);
        let r = evaluate_model(&out.model, &data, MacroAverage::AllClasses).unwrap();
        assert_eq!(r.macro_f1, best);
        assert_eq!(out.history[out.best_epoch - 1].val_macro_f1, Some(best));
    }

    #[test]
    fn identical_seeds_identical_histories() {
        let (model, data) = separable();
        let cfg = TrainConfig {
            max_epochs: 6,
            ..TrainConfig::default()
        };
        let a = train(model.clone(), &data, Some(&data), &cfg).unwrap();
        let b = train(model, &data, Some(&data), &cfg).unwrap();
        let strip = |h: &[EpochRecord]| h.iter().map(|r| (r.epoch, r.train_loss.to_bits(), r.val_macro_f1.map(f64::to_bits))).collect::<Vec<_>>();
        assert_eq!(strip(&a.history), strip(&b.history));
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn single_config_grid_is_selected() {
        let (model, mut data) = separable();
        data.extend(data.clone());
        let cfg = TrainConfig {
            max_epochs: 3,
            ..TrainConfig::default()
        };
        let cv = cross_validate(&data, &[ModelSpec::mean()], &cfg, |_| model.clone()).unwrap();
        assert_eq!(cv.selected, 0);
        assert_eq!(cv.log.len(), 4);
        let mut seen = vec![0; data.len()];
        cv.folds.iter().enumerate().for_each(|(i, _)| seen[i] += 1);
        assert!(seen.iter().all(|&s| s == 1));
        assert_eq!(cv.folds.iter().filter(|&&f| f == 0).count(), 3);
    }
}
