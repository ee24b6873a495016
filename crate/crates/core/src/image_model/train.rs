use serde::{Deserialize, Serialize};

use super::transform::{augment, AugmentRanges, Augmentation};
use super::{CnnModel, Image, Mode};
use crate::datasets::{stratified_indices, FeedbackRecord, ImageLabel};
use crate::numerics::{OptimizerConfig, SeededRng};
use crate::{Error, Result};

/// Which binary decision a network is trained for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImageTask {
    /// Class 0 = irrelevant, class 1 = relevant.
    Relevance,
    /// Class 0 = not damaged, class 1 = damaged.
    Damage,
}

impl ImageTask {
    pub fn class_names(self) -> [&'static str; 2] {
        match self {
            ImageTask::Relevance => ["irrelevant", "relevant"],
            ImageTask::Damage => ["not_damaged", "damaged"],
        }
    }

    /// Class index for a ground-truth image label, `None` when the label does
    /// not take part in this task.
    pub fn class_of(self, label: ImageLabel) -> Option<usize> {
        match (self, label) {
            (ImageTask::Relevance, ImageLabel::Irrelevant) => Some(0),
            (ImageTask::Relevance, _) => Some(1),
            (ImageTask::Damage, ImageLabel::NotDamaged) => Some(0),
            (ImageTask::Damage, ImageLabel::Damaged) => Some(1),
            (ImageTask::Damage, _) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LabeledImage {
    pub image: Image,
    pub label: usize,
}

/// Pairs loaded images with their task class, skipping records whose image
/// label does not take part in `task`.
pub fn labeled_for_task(records: &[(FeedbackRecord, Image)], task: ImageTask) -> Vec<LabeledImage> {
    records
        .iter()
        .filter_map(|(r, img)| {
            let label = task.class_of(r.image_label?)?;
            Some(LabeledImage {
                image: img.clone(),
                label,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CnnTrainConfig {
    pub epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub val_fraction: f64,
    pub seed: u64,
    /// Leave only the last `k` parameterized layers trainable.
    pub freeze_k: Option<usize>,
    pub augment_probability: f64,
    pub augment_ranges: AugmentRanges,
}

impl Default for CnnTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            patience: 5,
            batch_size: 32,
            optimizer: OptimizerConfig::with_learning_rate(3e-3),
            val_fraction: 0.2,
            seed: 0,
            freeze_k: None,
            augment_probability: 0.5,
            augment_ranges: AugmentRanges::default(),
        }
    }
}

/// Epochs are numbered from 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub stopped_early: bool,
}

/// Stop after `patience` consecutive epochs without a strictly lower
/// validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best_loss: f64,
    best_epoch: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopVerdict {
    Improved,
    Continue,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best_loss: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, validation_loss: f64) -> StopVerdict {
        self.epoch += 1;
        if validation_loss < self.best_loss {
            self.best_loss = validation_loss;
            self.best_epoch = self.epoch;
            return StopVerdict::Improved;
        }
        if self.epoch - self.best_epoch >= self.patience {
            StopVerdict::Stop
        } else {
            StopVerdict::Continue
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best_loss
    }
}

/// Mean cross-entropy and accuracy of `model` in inference mode.
pub fn evaluate_cnn(model: &CnnModel, examples: &[LabeledImage]) -> Result<(f64, f64)> {
    if examples.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for chunk in examples.chunks(64) {
        let images: Vec<&Image> = chunk.iter().map(|e| &e.image).collect();
        let labels: Vec<usize> = chunk.iter().map(|e| e.label).collect();
        let fwd = model.forward(&images, Mode::Eval)?;
        loss += model.loss(&fwd, &labels)? * chunk.len() as f64;
        for (p, &y) in fwd.probabilities().iter().zip(&labels) {
            if argmax(p) == y {
                correct += 1;
            }
        }
    }
    let n = examples.len() as f64;
    Ok((loss / n, correct as f64 / n))
}

pub(crate) fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

/// Stratified validation split plus [`train_cnn_model`] on the default
/// architecture.
pub fn train_cnn(examples: &[LabeledImage], config: &CnnTrainConfig) -> Result<(CnnModel, TrainRun)> {
    let first = examples
        .first()
        .ok_or_else(|| Error::InvalidArgument("no training images".into()))?;
    let (w, h, c) = (first.image.width(), first.image.height(), first.image.channels());
    let model = CnnModel::default_architecture(c, h, w, config.seed)?;
    train_cnn_model(model, examples, config)
}

/// Trains an existing model. Validation data is a stratified
/// `val_fraction` slice of `examples`; the returned model carries the
/// parameters of the epoch with the lowest validation loss.
pub fn train_cnn_model(
    mut model: CnnModel,
    examples: &[LabeledImage],
    config: &CnnTrainConfig,
) -> Result<(CnnModel, TrainRun)> {
    config.optimizer.validate()?;
    if config.epochs == 0 || config.batch_size == 0 || config.patience == 0 {
        return Err(Error::InvalidArgument(
            "epochs, batch_size and patience must be positive".into(),
        ));
    }
    let classes = model.num_classes();
    let mut counts = vec![0usize; classes];
    for e in examples {
        *counts.get_mut(e.label).ok_or(Error::IndexOutOfRange {
            index: e.label,
            len: classes,
        })? += 1;
    }
    if counts.iter().filter(|&&n| n > 0).count() < 2 {
        return Err(Error::InvalidArgument(
            "training data must contain at least two classes".into(),
        ));
    }
    if let Some(c) = counts.iter().position(|&n| n < 2) {
        return Err(Error::InvalidArgument(format!("class {c} needs at least 2 examples")));
    }
    if let Some(k) = config.freeze_k {
        model.freeze_all_but_last(k)?;
    }
    if model.trainable_layers().is_empty() {
        return Err(Error::NoTrainableParameters);
    }

    let labels: Vec<usize> = examples.iter().map(|e| e.label).collect();
    let (train_idx, val_idx, _) = stratified_indices(&labels, config.val_fraction, config.seed)?;
    let validation: Vec<LabeledImage> = val_idx.iter().map(|&i| examples[i].clone()).collect();

    let mut rng = SeededRng::new(config.seed ^ 0x5eed_cafe);
    let mut states = model.new_optimizer_states();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut run = TrainRun {
        train_losses: Vec::new(),
        validation_losses: Vec::new(),
        best_epoch: 0,
        best_validation_loss: f64::INFINITY,
        stopped_early: false,
    };

    for epoch in 1..=config.epochs {
        let mut order = train_idx.clone();
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut images = Vec::with_capacity(batch.len());
            for &i in batch {
                let img = &examples[i].image;
                if rng.bernoulli(config.augment_probability) {
                    let op = Augmentation::random(&mut rng, &config.augment_ranges);
                    images.push(augment(img, op)?);
                } else {
                    images.push(img.clone());
                }
            }
            let refs: Vec<&Image> = images.iter().collect();
            let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let fwd = model.forward(&refs, Mode::Train)?;
            let (loss, grads) = model.backward(&fwd, &batch_labels)?;
            model.absorb_batch_statistics(&fwd);
            model.apply_gradients(&grads, &mut states, &config.optimizer)?;
            epoch_loss += loss * batch.len() as f64;
        }
        run.train_losses.push(epoch_loss / train_idx.len() as f64);

        let (val_loss, val_acc) = evaluate_cnn(&model, &validation)?;
        run.validation_losses.push(val_loss);
        log::info!(
            "epoch {epoch}: train loss {:.4}, val loss {val_loss:.4}, val acc {val_acc:.3}",
            run.train_losses[epoch - 1]
        );
        match stopper.observe(val_loss) {
            StopVerdict::Improved => best = model.clone(),
            StopVerdict::Continue => {}
            StopVerdict::Stop => {
                run.stopped_early = true;
                break;
            }
        }
    }
    run.best_epoch = stopper.best_epoch();
    run.best_validation_loss = stopper.best_loss();
    Ok((best, run))
}
