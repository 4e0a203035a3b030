//! Contrastive fine-tuning of an [`EncoderBundle`](crate::encoder::EncoderBundle)
//! on image/caption pairs.

pub mod adam;
pub mod loss;
pub mod train;

pub use self::adam::Adam;
pub use self::loss::{symmetric_loss, symmetric_loss_with_grad, Targets};
pub use self::train::{
    batch_loss, fit, loss_and_gradients, FitOutcome, LossRecord, Optimizer, TrainConfig, TrainState,
};
