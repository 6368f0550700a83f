//! Training loop with two-phase propagation and early stopping.

use std::borrow::Cow;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{AdamConfig, AdamState, Scalar, Tape};
use crate::checkpoint::Checkpoint;
use crate::data::{Snapshot, Split, TkgDataset};
use crate::decoder::DecoderKind;
use crate::encoder::{AttentionScore, Composition};
use crate::error::{Error, Result};
use crate::eval::{evaluate, query_batches, EvalOptions};
use crate::model::{Ablation, Model, ModelConfig};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl std::str::FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "f32" => Ok(Self::F32),
            "f64" => Ok(Self::F64),
            other => Err(Error::Config(format!(
                "unknown precision {other:?} (f32, f64)"
            ))),
        }
    }
}

/// Every knob of a training run. Missing keys in a config file take these
/// defaults; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub dim: usize,
    pub history_length: usize,
    pub layers: usize,
    pub dropout: f64,
    pub lr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub ablations: Vec<Ablation>,
    pub decoder: DecoderKind,
    pub composition: Composition,
    pub channels: usize,
    pub kernel_size: usize,
    pub decoder_bias: bool,
    pub attention_score: AttentionScore,
    /// Pool query relations over both phases at once. This leaks the answer
    /// through the inverse facts and exists only to measure that leak.
    pub single_phase: bool,
    pub precision: Precision,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            dim: 200,
            history_length: 3,
            layers: 2,
            dropout: 0.2,
            lr: 1e-3,
            epochs: 30,
            patience: 5,
            seed: 0,
            ablations: Vec::new(),
            decoder: DecoderKind::ConvTransE,
            composition: Composition::Sum,
            channels: 50,
            kernel_size: 3,
            decoder_bias: true,
            attention_score: AttentionScore::Vector,
            single_phase: false,
            precision: Precision::F64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers == 0 || self.channels == 0 {
            return Err(Error::Config(
                "dim, layers and channels must be at least 1".into(),
            ));
        }
        if self.kernel_size.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "kernel_size must be odd, got {}",
                self.kernel_size
            )));
        }
        if self.history_length == 0 {
            return Err(Error::Config("history_length must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        Ok(())
    }

    pub fn model_config(&self, dataset: &TkgDataset) -> ModelConfig {
        let mut ablations = self.ablations.clone();
        ablations.sort();
        ablations.dedup();
        ModelConfig {
            dim: self.dim,
            history_length: self.history_length,
            layers: self.layers,
            dropout: self.dropout,
            composition: self.composition,
            decoder: self.decoder,
            channels: self.channels,
            kernel_size: self.kernel_size,
            decoder_bias: self.decoder_bias,
            attention_score: self.attention_score,
            ablations,
            ..ModelConfig::new(
                dataset.num_entities(),
                dataset.num_base_relations(),
                dataset.num_snapshots(),
            )
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            single_phase: self.single_phase,
            parallel: true,
        }
    }
}

/// Adds inverse facts unless they are already present.
pub fn augmented(dataset: &TkgDataset) -> Result<Cow<'_, TkgDataset>> {
    if dataset.is_augmented() {
        Ok(Cow::Borrowed(dataset))
    } else {
        Ok(Cow::Owned(dataset.add_inverses()?))
    }
}

/// One pass over the training timestamps in chronological order, with one
/// optimizer step per (timestamp, phase). Returns the mean batch loss.
pub fn train_epoch<T: Scalar>(
    model: &mut Model<T>,
    optimizer: &mut AdamState<T>,
    dataset: &TkgDataset,
    snapshots: &[Snapshot],
    single_phase: bool,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    if !dataset.is_augmented() {
        return Err(Error::Training(
            "training needs a dataset with inverse facts".into(),
        ));
    }
    let timestamps: Vec<usize> = dataset
        .split_timestamps(Split::Train)
        .into_iter()
        .filter(|&t| t >= 1)
        .collect();
    if timestamps.is_empty() {
        return Err(Error::Training(
            "no history available: training needs at least two timestamps".into(),
        ));
    }
    let mut total = 0.0;
    let mut steps = 0usize;
    for t in timestamps {
        for batch in query_batches(dataset, Split::Train, t, single_phase)? {
            let mut tape = Tape::training(rng.next_u64());
            let bound = model.params().bind(&mut tape);
            let loss = model.loss(&mut tape, &bound, snapshots, &batch)?;
            let value = tape.value(loss).item().as_f64();
            let grads = tape.backward(loss)?;
            let grads: Vec<_> = bound.ids().iter().map(|&id| grads.wrt(id)).collect();
            optimizer.step(&mut model.params_mut().values_mut(), &grads)?;
            total += value;
            steps += 1;
        }
    }
    Ok(total / steps as f64)
}

/// Patience counter on a metric that should increase.
#[derive(Clone, Debug, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: Option<f64>,
    best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: None,
            best_epoch: 0,
            stale: 0,
        }
    }

    /// Records the metric of `epoch`. Returns whether it is a new best.
    pub fn observe(&mut self, epoch: usize, metric: f64) -> bool {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.best_epoch = epoch;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale >= self.patience
    }

    pub fn best(&self) -> Option<f64> {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_mrr: f64,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct FitOutcome<T: Scalar> {
    pub best: Checkpoint<T>,
    pub epochs: Vec<EpochRecord>,
    pub stopped_early: bool,
}

/// Trains until `config.epochs` or until validation MRR has not improved
/// for `config.patience` epochs, and returns the best checkpoint.
pub fn fit<T: Scalar>(
    dataset: &TkgDataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<FitOutcome<T>> {
    config.validate()?;
    let data = augmented(dataset)?;
    if data.split(Split::Valid).is_empty() {
        return Err(Error::Training("validation split is empty".into()));
    }
    let snapshots = data.build_snapshots()?;
    let model_config = config.model_config(&data);
    let mut model = Model::<T>::new(model_config.clone(), config.seed)?;
    let mut optimizer = AdamState::new(AdamConfig::with_lr(config.lr));
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let mut stopper = EarlyStopping::new(config.patience);
    let mut epochs = Vec::new();
    let mut history = Vec::new();
    let mut best: Option<Checkpoint<T>> = None;
    let mut stopped_early = false;
    for epoch in 1..=config.epochs {
        let loss = train_epoch(
            &mut model,
            &mut optimizer,
            &data,
            &snapshots,
            config.single_phase,
            &mut rng,
        )?;
        let val = evaluate(
            &model,
            &data,
            &snapshots,
            Split::Valid,
            config.eval_options(),
        )?;
        history.push(val.mrr);
        let improved = stopper.observe(epoch, val.mrr);
        if improved {
            best = Some(Checkpoint {
                model: model_config.clone(),
                train: config.clone(),
                epoch,
                val_mrr_history: history.clone(),
                params: model.params().clone(),
                optimizer: optimizer.clone(),
            });
        }
        let record = EpochRecord {
            epoch,
            loss,
            val_mrr: val.mrr,
            improved,
        };
        on_epoch(&record);
        epochs.push(record);
        if stopper.should_stop() {
            stopped_early = epoch < config.epochs;
            break;
        }
    }
    let mut best = best.ok_or_else(|| Error::Training("no epoch completed".into()))?;
    best.val_mrr_history = history;
    Ok(FitOutcome {
        best,
        epochs,
        stopped_early,
    })
}
