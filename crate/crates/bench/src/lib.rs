//! Seeded inputs shared by the benchmarks.

use aigi_core::data::image::from_rgb8;
use aigi_core::fixtures::{toy_image, toy_registry};
use aigi_core::{BackboneSpec, EmbeddingVector, EncoderBundle, ImageArray, Normalization, Registry};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `count` toy images cycling through the toy classes, with their class ids.
pub fn toy_batch(count: usize, resolution: usize, seed: u64) -> (Vec<ImageArray>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let classes = toy_registry().len();
    let norm = Normalization::default();
    (0..count)
        .map(|i| {
            let class = i % classes;
            (from_rgb8(&toy_image(class, resolution, &mut rng), &norm), class)
        })
        .unzip()
}

/// Random unit vectors.
pub fn unit_vectors(count: usize, dim: usize, seed: u64) -> Vec<EmbeddingVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            EmbeddingVector::from_raw(&raw).expect("nonzero vector")
        })
        .collect()
}

pub fn tiny_bundle(resolution: usize, seed: u64) -> (EncoderBundle, Registry) {
    let registry = toy_registry();
    let spec = BackboneSpec {
        resolution,
        ..Default::default()
    };
    let bundle = EncoderBundle::tiny(spec, &registry, seed).expect("valid spec");
    (bundle, registry)
}
