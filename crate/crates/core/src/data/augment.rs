//! Blur / JPEG post-processing augmentation.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::image::{from_rgb8, to_rgb8, ImageArray, Normalization};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub probability: f64,
    /// Blur sigma is drawn from `(0, max_sigma]`.
    pub max_sigma: f64,
    pub min_quality: u8,
    pub max_quality: u8,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            probability: 0.5,
            max_sigma: 3.0,
            min_quality: 30,
            max_quality: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Augmentation {
    Blur { sigma: f64 },
    Jpeg { quality: u8 },
}

/// With probability `config.probability` applies one of blur or JPEG
/// recompression, picked uniformly. Identical seeds give identical output.
pub fn augment(
    image: &ImageArray,
    config: &AugmentConfig,
    norm: &Normalization,
    seed: u64,
) -> (ImageArray, Option<Augmentation>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = config.probability.clamp(0.0, 1.0);
    if rng.random::<f64>().partial_cmp(&p) != Some(std::cmp::Ordering::Less) {
        return (image.clone(), None);
    }
    if rng.random_bool(0.5) {
        let sigma = config.max_sigma * (1.0 - rng.random::<f64>());
        (gaussian_blur(image, sigma), Some(Augmentation::Blur { sigma }))
    } else {
        let lo = config.min_quality.clamp(1, 100);
        let hi = config.max_quality.clamp(lo, 100);
        let quality = rng.random_range(lo..=hi);
        (
            jpeg_recompress(image, quality, norm),
            Some(Augmentation::Jpeg { quality }),
        )
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur with clamped borders.
pub fn gaussian_blur(image: &ImageArray, sigma: f64) -> ImageArray {
    if sigma <= 0.0 {
        return image.clone();
    }
    let kernel = gaussian_kernel(sigma);
    let radius = (kernel.len() / 2) as isize;
    let (c, h, w) = image.shape();
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let mut tmp = ImageArray::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, weight) in kernel.iter().enumerate() {
                    let xx = clamp(x as isize + k as isize - radius, w);
                    acc += weight * image.at(ch, y, xx);
                }
                tmp.set(ch, y, x, acc);
            }
        }
    }
    let mut out = ImageArray::zeros(c, h, w);
    for ch in 0..c {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, weight) in kernel.iter().enumerate() {
                    let yy = clamp(y as isize + k as isize - radius, h);
                    acc += weight * tmp.at(ch, yy, x);
                }
                out.set(ch, y, x, acc);
            }
        }
    }
    out
}

pub fn jpeg_recompress(image: &ImageArray, quality: u8, norm: &Normalization) -> ImageArray {
    let rgb = to_rgb8(image, norm);
    let mut buf = Cursor::new(Vec::new());
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode_image(&rgb)
        .expect("in-memory jpeg encode");
    let decoded = image::load_from_memory(buf.get_ref())
        .expect("decoding freshly encoded jpeg")
        .to_rgb8();
    from_rgb8(&decoded, norm)
}
