//! Mini-batch Adam training with early stopping on a held-out slice of the
//! training split, and the multi-seed experiment runner.
//!
//! A run is a pure function of the corpus, the config and the seed. Batch
//! gradients are reduced over fixed-size chunks in index order, so results
//! do not depend on the number of worker threads.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    compute_user_stats, holdout_indices, Comment, Corpus, Label, Split, UserStatsTable, Vocabulary,
    DEFAULT_MAX_TOKENS,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, roc_auc, EvalReport};
use crate::models::{load_pretrained_embeddings, Baseline, Gradients, Model, ModelParameters, SlotMap, Variant};
use crate::nn::{AdamConfig, AdamState};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Word, user and user-type embedding width.
    pub embedding_dim: usize,
    /// GRU hidden width.
    pub hidden_dim: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub holdout_fraction: f64,
    /// Seed of the held-out slice, shared by every repetition.
    pub holdout_seed: u64,
    pub max_tokens: usize,
    pub seeds: Vec<u64>,
    /// Examples per gradient-reduction chunk.
    pub chunk_size: usize,
    pub pretrained_embeddings: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let adam = AdamConfig::default();
        Self {
            embedding_dim: 300,
            hidden_dim: 128,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            batch_size: 128,
            max_epochs: 20,
            patience: 3,
            holdout_fraction: 0.02,
            holdout_seed: 0,
            max_tokens: DEFAULT_MAX_TOKENS,
            seeds: vec![1, 2, 3],
            chunk_size: 16,
            pretrained_embeddings: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embedding_dim", self.embedding_dim),
            ("hidden_dim", self.hidden_dim),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("patience", self.patience),
            ("max_tokens", self.max_tokens),
            ("chunk_size", self.chunk_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::Config("holdout_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: f64,
    /// `None` when the holdout holds a single class.
    pub holdout_auc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EarlyStopped,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

/// Tracks the best holdout loss and keeps a checkpoint of it.
#[derive(Debug, Clone)]
pub struct EarlyStopper<T> {
    patience: usize,
    best: Option<(usize, f64, T)>,
    epochs_since_best: usize,
}

impl<T> EarlyStopper<T> {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: None, epochs_since_best: 0 }
    }

    /// Records an epoch's holdout loss. `checkpoint` is called only when the
    /// loss strictly improves. Returns `true` once the loss has failed to
    /// improve for `patience` consecutive epochs.
    pub fn observe(&mut self, epoch: usize, loss: f64, checkpoint: impl FnOnce() -> T) -> bool {
        let improved = match &self.best {
            None => !loss.is_nan(),
            Some((_, best, _)) => loss < *best,
        };
        if improved {
            self.best = Some((epoch, loss, checkpoint()));
            self.epochs_since_best = 0;
        } else {
            self.epochs_since_best += 1;
        }
        self.epochs_since_best >= self.patience
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.as_ref().map(|(e, _, _)| *e)
    }

    pub fn best_loss(&self) -> Option<f64> {
        self.best.as_ref().map(|(_, l, _)| *l)
    }

    pub fn into_best(self) -> Option<(usize, T)> {
        self.best.map(|(e, _, t)| (e, t))
    }
}

/// Everything derived from the training split once per corpus.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub vocab: Vocabulary,
    pub stats: UserStatsTable,
    pub slots: SlotMap,
    pub fit: Vec<Comment>,
    pub holdout: Vec<Comment>,
}

impl PreparedData {
    /// Vocabulary and user statistics come from the whole training split;
    /// the holdout is then carved out of it.
    pub fn new(corpus: &Corpus, config: &TrainConfig) -> Result<Self> {
        let train: Vec<Comment> = corpus.split(Split::Train).cloned().collect();
        if train.is_empty() {
            return Err(Error::EmptyTrainSplit);
        }
        let vocab = Vocabulary::build(&train);
        let stats = compute_user_stats(corpus);
        let slots = SlotMap::from_stats(&stats);
        let (fit_idx, hold_idx) = holdout_indices(train.len(), config.holdout_fraction, config.holdout_seed)?;
        let fit = fit_idx.into_iter().map(|i| train[i].clone()).collect();
        let holdout = hold_idx.into_iter().map(|i| train[i].clone()).collect();
        Ok(Self { vocab, stats, slots, fit, holdout })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldoutMetrics {
    pub loss: f64,
    pub auc: Option<f64>,
}

/// Mean cross-entropy and AUC of `model` on `comments`.
pub fn holdout_metrics(model: &Model, comments: &[Comment]) -> Result<HoldoutMetrics> {
    if comments.is_empty() {
        return Err(Error::EmptyInput("holdout"));
    }
    let probs = comments.par_iter().map(|c| model.forward(c)).collect::<Result<Vec<f64>>>()?;
    let loss = probs
        .iter()
        .zip(comments)
        .map(|(&p, c)| crate::nn::bce_loss_and_grad(p, c.label.target()).0)
        .sum::<f64>()
        / comments.len() as f64;
    let labels: Vec<bool> = comments.iter().map(|c| c.label == Label::Reject).collect();
    let auc = roc_auc(&probs, &labels).ok();
    Ok(HoldoutMetrics { loss, auc })
}

/// Summed loss and gradients over `batch` (indices into `examples`),
/// reduced chunk by chunk in index order.
pub fn batch_gradients(
    model: &Model,
    examples: &[Comment],
    batch: &[usize],
    chunk_size: usize,
) -> Result<(f64, Gradients)> {
    let partials = batch
        .par_chunks(chunk_size.max(1))
        .map(|chunk| {
            let mut g = Gradients::zeros_for(&model.params);
            let mut loss = 0.0;
            for &i in chunk {
                loss += model.backward_accumulate(&examples[i], &mut g)?.0;
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<(f64, Gradients)>>>()?;
    let mut iter = partials.into_iter();
    let (mut loss, mut total) = iter.next().ok_or(Error::EmptyInput("batch"))?;
    for (l, g) in iter {
        loss += l;
        total.add(&g);
    }
    Ok((loss, total))
}

/// Freshly initialized model for `variant`, including optional pretrained
/// word vectors.
pub fn init_model(data: &PreparedData, variant: Variant, config: &TrainConfig, seed: u64) -> Result<Model> {
    let mut rng = Rng::new(seed);
    let mut params = ModelParameters::init(
        variant,
        data.vocab.size(),
        data.slots.len(),
        config.embedding_dim,
        config.hidden_dim,
        &mut rng,
    )?;
    if let Some(path) = &config.pretrained_embeddings {
        load_pretrained_embeddings(path, &data.vocab, &mut params.embeddings)?;
    }
    Model::new(params, data.vocab.clone(), data.stats.clone(), config.max_tokens)
}

/// Trains with a caller-supplied holdout evaluation, called once per epoch.
pub fn train_with_evaluator<F>(
    data: &PreparedData,
    variant: Variant,
    config: &TrainConfig,
    seed: u64,
    mut evaluate: F,
) -> Result<(Model, TrainHistory)>
where
    F: FnMut(&Model) -> Result<HoldoutMetrics>,
{
    config.validate()?;
    if data.fit.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let mut model = init_model(data, variant, config, seed)?;
    let mut shuffle_rng = Rng::new(seed).fork(0x5348_5546);
    let mut adam = AdamState::new(config.adam(), &model.params);
    let mut dense = model.params.zeros_like();
    let mut stopper: EarlyStopper<ModelParameters> = EarlyStopper::new(config.patience);
    let mut epochs = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;

    let mut order: Vec<usize> = (0..data.fit.len()).collect();
    for epoch in 1..=config.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let (loss, mut grads) = batch_gradients(&model, &data.fit, batch, config.chunk_size)?;
            loss_sum += loss;
            grads.scale(1.0 / batch.len() as f64);
            grads.write_dense(&mut dense);
            adam.step(&mut model.params, &dense)?;
        }
        let metrics = evaluate(&model)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / data.fit.len() as f64,
            holdout_loss: metrics.loss,
            holdout_auc: metrics.auc,
        });
        if stopper.observe(epoch, metrics.loss, || model.params.clone()) {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }

    let best_epoch = match stopper.into_best() {
        Some((epoch, params)) => {
            model.params = params;
            epoch
        }
        // Every holdout loss was NaN; keep the final parameters.
        None => epochs.len(),
    };
    Ok((model, TrainHistory { epochs, best_epoch, stop_reason }))
}

pub fn train_prepared(
    data: &PreparedData,
    variant: Variant,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Model, TrainHistory)> {
    let holdout = data.holdout.clone();
    train_with_evaluator(data, variant, config, seed, |m| holdout_metrics(m, &holdout))
}

pub fn train_model(
    corpus: &Corpus,
    variant: Variant,
    config: &TrainConfig,
    seed: u64,
) -> Result<(Model, TrainHistory)> {
    let data = PreparedData::new(corpus, config)?;
    train_prepared(&data, variant, config, seed)
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub seed: u64,
    pub model: Model,
    pub history: TrainHistory,
    /// Wall-clock training time; not part of any artifact.
    pub elapsed: Duration,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub variant: Variant,
    /// One entry per seed; empty for baselines.
    pub runs: Vec<TrainedRun>,
    pub baseline: Option<Baseline>,
    /// Dev and test rows, for the splits present in the corpus.
    pub reports: Vec<EvalReport>,
}

impl ExperimentResult {
    pub fn report(&self, split: Split) -> Option<&EvalReport> {
        self.reports.iter().find(|r| r.split == split)
    }
}

/// Trains `variant` once per configured seed, repetitions running on up to
/// `jobs` threads. Results are in seed order whatever `jobs` is.
pub fn train_repetitions(
    data: &PreparedData,
    variant: Variant,
    config: &TrainConfig,
    jobs: usize,
) -> Result<Vec<TrainedRun>> {
    if !variant.is_neural() {
        return Err(Error::Config(format!("{variant} has no trainable parameters")));
    }
    if config.seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    let train_one = |&seed: &u64| {
        let start = Instant::now();
        train_prepared(data, variant, config, seed).map(|(model, history)| TrainedRun {
            seed,
            model,
            history,
            elapsed: start.elapsed(),
        })
    };
    if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        pool.install(|| config.seeds.par_iter().map(train_one).collect())
    } else {
        config.seeds.iter().map(train_one).collect()
    }
}

/// Trains `variant` once per seed and evaluates every run on dev and test.
/// Baselines are evaluated once.
pub fn run_experiment(
    data: &PreparedData,
    corpus: &Corpus,
    variant: Variant,
    config: &TrainConfig,
    jobs: usize,
) -> Result<ExperimentResult> {
    let splits: Vec<Split> =
        [Split::Dev, Split::Test].into_iter().filter(|&s| corpus.split_len(s) > 0).collect();

    if !variant.is_neural() {
        let baseline = Baseline::new(variant, data.stats.clone())?;
        let reports = splits
            .iter()
            .map(|&s| evaluate_model(std::slice::from_ref(&baseline), corpus, s))
            .collect::<Result<Vec<_>>>()?;
        return Ok(ExperimentResult { variant, runs: vec![], baseline: Some(baseline), reports });
    }

    let runs = train_repetitions(data, variant, config, jobs)?;
    let models: Vec<&Model> = runs.iter().map(|r| &r.model).collect();
    let reports = splits
        .iter()
        .map(|&s| evaluate_model(&models, corpus, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentResult { variant, runs, baseline: None, reports })
}
