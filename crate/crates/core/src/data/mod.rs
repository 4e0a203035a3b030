//! Manifests, image preprocessing, augmentation and seeded batching.

pub mod augment;
pub mod batches;
pub mod image;
pub mod manifest;

pub use self::augment::{augment, AugmentConfig, Augmentation};
pub use self::batches::{batch_plan, epoch_order, Batch, Batches, ImageLoader, DECODE_CACHE_ENV};
pub use self::image::{preprocess, preprocess_file, ImageArray, Normalization};
pub use self::manifest::{
    is_image, load_manifest, scan_directory, DatasetManifest, MissingFilePolicy, SampleRecord, Split,
};
