use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::loss::{symmetric_loss_with_grad, Targets};
use crate::data::{AugmentConfig, DatasetManifest, ImageArray, ImageLoader, Split};
use crate::encoder::{EncoderBundle, Gradients};
use crate::error::{Error, Result};
use crate::registry::Registry;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    Adam,
}

/// Fine-tuning hyperparameters; defaults are the published recipe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Treat same-class pairs in a batch as extra positives.
    pub multi_positive: bool,
    /// Blur/JPEG augmentation of training images.
    pub augment: Option<AugmentConfig>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Adam,
            epochs: 12,
            batch_size: 16,
            learning_rate: 1e-6,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-6,
            weight_decay: 1e-4,
            seed: 0,
            multi_positive: false,
            augment: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("eps", self.eps),
            ("weight_decay", self.weight_decay),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be strictly positive, got {v}")));
            }
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if let Some(a) = &self.augment {
            if !(0.0..=1.0).contains(&a.probability) {
                return Err(Error::Config("augment probability must lie in [0, 1]".into()));
            }
        }
        Ok(())
    }

    fn targets(&self, class_ids: &[usize]) -> Targets {
        if self.multi_positive {
            Targets::SameClass(class_ids.to_vec())
        } else {
            Targets::Diagonal
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRecord {
    pub epoch: usize,
    pub step: usize,
    pub loss: f64,
}

/// Batch loss and parameter gradients, without updating anything.
pub fn loss_and_gradients(
    bundle: &EncoderBundle,
    images: &[ImageArray],
    class_ids: &[usize],
    registry: &Registry,
    targets: &Targets,
) -> Result<(f64, Gradients)> {
    let prompts = class_ids
        .iter()
        .map(|&c| registry.prompt_for(c))
        .collect::<Result<Vec<_>>>()?;
    let forward = bundle.forward_batch(images, &prompts)?;
    let (loss, grad_logits) = symmetric_loss_with_grad(&forward.logits, targets)?;
    let grads = bundle.backward_batch(&forward, &grad_logits)?;
    Ok((loss, grads))
}

/// Batch loss only.
pub fn batch_loss(
    bundle: &EncoderBundle,
    images: &[ImageArray],
    class_ids: &[usize],
    registry: &Registry,
    targets: &Targets,
) -> Result<f64> {
    let prompts = class_ids
        .iter()
        .map(|&c| registry.prompt_for(c))
        .collect::<Result<Vec<_>>>()?;
    let forward = bundle.forward_batch(images, &prompts)?;
    Ok(symmetric_loss_with_grad(&forward.logits, targets)?.0)
}

/// Bundle plus optimizer state and loss history.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub bundle: EncoderBundle,
    pub optimizer: Adam,
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: usize,
    pub history: Vec<LossRecord>,
}

impl TrainState {
    pub fn new(bundle: EncoderBundle, config: TrainConfig) -> Self {
        let optimizer = Adam::new(
            bundle.params(),
            config.learning_rate,
            config.beta1,
            config.beta2,
            config.eps,
            config.weight_decay,
        );
        Self {
            bundle,
            optimizer,
            config,
            epoch: 0,
            step: 0,
            history: Vec::new(),
        }
    }

    /// One optimizer update on a batch; returns the loss before the update.
    /// `sample_ids` only label diagnostics.
    pub fn train_step(
        &mut self,
        images: &[ImageArray],
        class_ids: &[usize],
        sample_ids: &[usize],
        registry: &Registry,
    ) -> Result<f64> {
        if images.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        if images.len() != class_ids.len() {
            return Err(Error::Shape(format!(
                "{} images but {} labels",
                images.len(),
                class_ids.len()
            )));
        }
        let targets = self.config.targets(class_ids);
        let (loss, grads) = loss_and_gradients(&self.bundle, images, class_ids, registry, &targets)?;
        if !loss.is_finite() || !grads.is_finite() {
            return Err(Error::NonFiniteLoss {
                loss,
                epoch: self.epoch,
                step: self.step,
                samples: sample_ids.to_vec(),
            });
        }
        self.optimizer.update(self.bundle.params_mut(), &grads);
        self.bundle.clamp_logit_scale();
        self.history.push(LossRecord {
            epoch: self.epoch,
            step: self.step,
            loss,
        });
        self.step += 1;
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub bundle: EncoderBundle,
    pub history: Vec<LossRecord>,
}

/// Runs `config.epochs` shuffled epochs over the train split. `on_epoch_end`
/// sees the state after each epoch (used for checkpointing).
pub fn fit(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    registry: &Registry,
    bundle: EncoderBundle,
    loader: &ImageLoader,
    mut on_epoch_end: impl FnMut(&TrainState) -> Result<()>,
) -> Result<FitOutcome> {
    config.validate()?;
    if manifest.split_indices(Split::Train).is_empty() {
        return Err(Error::EmptySplit(Split::Train.to_string()));
    }
    let loader = loader.clone().with_augment(config.augment);
    let mut state = TrainState::new(bundle, config.clone());
    for epoch in 0..config.epochs {
        state.epoch = epoch;
        for batch in loader.batches(manifest, Split::Train, config.batch_size, config.seed, epoch)? {
            let batch = batch?;
            state.train_step(&batch.images, &batch.class_ids, &batch.indices, registry)?;
        }
        let losses = state.history.iter().filter(|r| r.epoch == epoch);
        let (sum, n) = losses.fold((0.0, 0usize), |(s, n), r| (s + r.loss, n + 1));
        log::info!("epoch {} mean loss {:.6}", epoch + 1, sum / n.max(1) as f64);
        on_epoch_end(&state)?;
    }
    Ok(FitOutcome {
        bundle: state.bundle,
        history: state.history,
    })
}
