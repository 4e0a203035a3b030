//! Detection and attribution of generated images with a caption-contrastive
//! dual encoder, plus a reconstruction-error baseline and evaluation tools.

pub mod classifier;
pub mod data;
pub mod dire;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod fixtures;
pub mod records;
pub mod registry;
pub mod tensor;

pub use classifier::{classify, classify_binary, ClassPrediction};
pub use data::{DatasetManifest, ImageArray, ImageLoader, Normalization, Split};
pub use dire::{compute_dire, dire_score, DiffusionOracle, DireMap};
pub use encoder::{BackboneSpec, EmbeddingVector, EncoderBundle};
pub use error::{Error, Result};
pub use eval::{ConfusionMatrix, EvalReport};
pub use finetune::{fit, TrainConfig};
pub use registry::{builtin_registry, GeneratorClass, Registry, Verdict};
