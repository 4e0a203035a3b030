//! Synthetic datasets for smoke runs and tests: two procedural texture
//! "generators" plus a smooth "real" family, and toy-diffusion samples
//! against uniform noise for the reconstruction-error detector.

use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::image::to_rgb8;
use crate::data::{DatasetManifest, ImageArray, Normalization, SampleRecord, Split};
use crate::dire::ToyDiffusion;
use crate::error::Result;
use crate::registry::{ClassSpec, Family, Registry};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const REGISTRY_FILE: &str = "registry.tsv";

/// Checkerboard generator, stripe generator, real.
pub fn toy_registry() -> Registry {
    Registry::new(vec![
        ClassSpec::new("CHK", "Checker", Family::Gan, "a fake image from checker gan"),
        ClassSpec::new("STR", "Stripe", Family::Diffusion, "a fake image from stripe diffusion"),
        ClassSpec::new("Real", "Real", Family::Real, "a real image with no alterations"),
    ])
    .expect("toy registry is valid")
}

/// Reference data for the reconstruction-error detector: toy-process
/// samples are the fakes.
pub fn dire_registry() -> Registry {
    Registry::new(vec![
        ClassSpec::new(
            "TOY",
            "Toy diffusion",
            Family::Diffusion,
            "a fake image from toy diffusion",
        ),
        ClassSpec::new("Real", "Real", Family::Real, "a real image with no alterations"),
    ])
    .expect("dire registry is valid")
}

/// One toy image for `class_id` of [`toy_registry`], values in `[0, 1]`.
pub fn toy_image(class_id: usize, resolution: usize, rng: &mut impl Rng) -> RgbImage {
    let n = resolution as f64;
    let base: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.25..0.75));
    let grad: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.2..0.2));
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let (ca, sa) = (angle.cos(), angle.sin());
    let amp: f64 = rng.random_range(0.15..0.25);
    let period: usize = rng.random_range(2..=4);
    let phase: usize = rng.random_range(0..period);
    let vertical: bool = rng.random();
    let noise = 0.02;
    let mut pattern = |x: usize, y: usize| -> f64 {
        match class_id {
            0 => {
                if ((x + phase) / period + (y + phase) / period).is_multiple_of(2) {
                    amp
                } else {
                    -amp
                }
            }
            1 => {
                let t = if vertical { x } else { y };
                if ((t + phase) / period).is_multiple_of(2) {
                    amp
                } else {
                    -amp
                }
            }
            _ => noise * rng.sample::<f64, _>(StandardNormal),
        }
    };
    let mut img = RgbImage::new(resolution as u32, resolution as u32);
    for y in 0..resolution {
        for x in 0..resolution {
            let u = (x as f64 / n - 0.5) * ca + (y as f64 / n - 0.5) * sa;
            let p = pattern(x, y);
            let px: [u8; 3] = std::array::from_fn(|c| {
                let v = base[c] + grad[c] * u + p;
                (v.clamp(0.0, 1.0) * 255.0).round() as u8
            });
            img.put_pixel(x as u32, y as u32, Rgb(px));
        }
    }
    img
}

fn write_png(path: &Path, img: &RgbImage) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    img.save(path).map_err(|e| crate::Error::Io(std::io::Error::other(e)))
}

/// Paths of a written fixture dataset.
#[derive(Debug, Clone)]
pub struct FixturePaths {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub registry: PathBuf,
}

fn finish(root: &Path, registry: &Registry, records: Vec<SampleRecord>) -> Result<FixturePaths> {
    let manifest = DatasetManifest::new(root, records)?;
    let paths = FixturePaths {
        root: root.to_path_buf(),
        manifest: root.join(MANIFEST_FILE),
        registry: root.join(REGISTRY_FILE),
    };
    manifest.save(&paths.manifest, registry)?;
    registry.save(&paths.registry)?;
    Ok(paths)
}

/// Writes `train_per_class` and `test_per_class` PNGs per class of
/// [`toy_registry`] under `root/<ABBR>/`, plus a manifest and registry.
pub fn write_toy_dataset(
    root: &Path,
    train_per_class: usize,
    test_per_class: usize,
    resolution: usize,
    seed: u64,
) -> Result<FixturePaths> {
    let registry = toy_registry();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for (split, count) in [(Split::Train, train_per_class), (Split::Test, test_per_class)] {
        for i in 0..count {
            for class in registry.classes() {
                let rel = PathBuf::from(&class.abbreviation).join(format!("{split}-{i:04}.png"));
                write_png(&root.join(&rel), &toy_image(class.class_id, resolution, &mut rng))?;
                records.push(SampleRecord {
                    path: rel,
                    class_id: class.class_id,
                    split,
                });
            }
        }
    }
    finish(root, &registry, records)
}

/// Uniform noise in normalized pixel space.
pub fn noise_image(resolution: usize, rng: &mut impl Rng) -> ImageArray {
    let v = (0..3 * resolution * resolution)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    ImageArray::new(3, resolution, resolution, v).expect("shape")
}

/// Toy-process samples (class TOY) and uniform-noise images (class Real)
/// under `root/<ABBR>/`, all in the test split.
pub fn write_dire_dataset(root: &Path, oracle: &ToyDiffusion, count: usize, seed: u64) -> Result<FixturePaths> {
    let registry = dire_registry();
    let norm = Normalization::HALF;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for i in 0..count {
        let sample = oracle.sample(&mut rng);
        let noise = noise_image(oracle.resolution(), &mut rng);
        for (class_id, img) in [(0, sample), (1, noise)] {
            let abbr = &registry.get(class_id)?.abbreviation;
            let rel = PathBuf::from(abbr).join(format!("{i:04}.png"));
            write_png(&root.join(&rel), &to_rgb8(&img, &norm))?;
            records.push(SampleRecord {
                path: rel,
                class_id,
                split: Split::Test,
            });
        }
    }
    finish(root, &registry, records)
}
