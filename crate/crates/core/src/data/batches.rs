use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::augment::{augment, AugmentConfig};
use super::image::{preprocess_file, ImageArray, Normalization};
use super::manifest::{DatasetManifest, Split};
use crate::error::{Error, Result};

/// Environment variable naming a directory for cached decoded images.
pub const DECODE_CACHE_ENV: &str = "AIGI_DECODE_CACHE";

/// Shuffled record indices of `split` for one epoch.
pub fn epoch_order(manifest: &DatasetManifest, split: Split, seed: u64, epoch: usize) -> Result<Vec<usize>> {
    let mut order = manifest.split_indices(split);
    if order.is_empty() {
        return Err(Error::EmptySplit(split.to_string()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    order.shuffle(&mut rng);
    Ok(order)
}

/// Record indices grouped into batches; the last batch may be short.
pub fn batch_plan(
    manifest: &DatasetManifest,
    split: Split,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    Ok(epoch_order(manifest, split, seed, epoch)?
        .chunks(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// Indices into the manifest's records.
    pub indices: Vec<usize>,
    pub images: Vec<ImageArray>,
    pub class_ids: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// Decodes and preprocesses manifest images, optionally through a disk cache.
#[derive(Debug, Clone)]
pub struct ImageLoader {
    pub resolution: usize,
    pub normalization: Normalization,
    pub augment: Option<AugmentConfig>,
    pub cache_dir: Option<PathBuf>,
}

impl ImageLoader {
    pub fn new(resolution: usize, normalization: Normalization) -> Self {
        Self {
            resolution,
            normalization,
            augment: None,
            cache_dir: None,
        }
    }

    pub fn with_augment(mut self, config: Option<AugmentConfig>) -> Self {
        self.augment = config;
        self
    }

    pub fn with_cache_dir(mut self, dir: Option<PathBuf>) -> Self {
        self.cache_dir = dir;
        self
    }

    /// Picks up the cache directory from the environment, if set.
    pub fn with_env_cache(self) -> Self {
        let dir = std::env::var_os(DECODE_CACHE_ENV).map(PathBuf::from);
        self.with_cache_dir(dir)
    }

    fn cache_key(&self, path: &Path) -> Option<String> {
        let meta = std::fs::metadata(path).ok()?;
        let modified = meta
            .modified()
            .ok()
            .and_then(|t| t.duration_since(std::time::UNIX_EPOCH).ok())
            .map(|d| d.as_nanos())
            .unwrap_or(0);
        let mut h = Sha256::new();
        h.update(path.to_string_lossy().as_bytes());
        h.update(meta.len().to_le_bytes());
        h.update(modified.to_le_bytes());
        h.update((self.resolution as u64).to_le_bytes());
        for v in self.normalization.mean.iter().chain(&self.normalization.std) {
            h.update(v.to_le_bytes());
        }
        Some(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
    }

    fn decode(&self, path: &Path) -> Result<ImageArray> {
        let cached = self
            .cache_dir
            .as_ref()
            .and_then(|dir| self.cache_key(path).map(|k| dir.join(format!("{k}.f64"))));
        if let Some(file) = &cached {
            if let Ok(bytes) = std::fs::read(file) {
                let values: Vec<f64> = bytes
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                    .collect();
                if let Ok(img) = ImageArray::new(3, self.resolution, self.resolution, values) {
                    return Ok(img);
                }
            }
        }
        let img = preprocess_file(path, self.resolution, &self.normalization)?;
        if let Some(file) = &cached {
            let bytes: Vec<u8> = img.values().iter().flat_map(|v| v.to_le_bytes()).collect();
            if let Some(dir) = file.parent() {
                let _ = std::fs::create_dir_all(dir);
            }
            if let Err(e) = std::fs::write(file, bytes) {
                log::warn!("decode cache write failed for {}: {e}", file.display());
            }
        }
        Ok(img)
    }

    /// Loads one record; `augment_seed` drives augmentation when enabled.
    pub fn load(&self, manifest: &DatasetManifest, index: usize, augment_seed: u64) -> Result<ImageArray> {
        let record = &manifest.records[index];
        let img = self.decode(&manifest.resolve(record))?;
        Ok(match &self.augment {
            Some(cfg) => augment(&img, cfg, &self.normalization, augment_seed).0,
            None => img,
        })
    }

    /// Decodes a batch concurrently; output order follows `indices`.
    pub fn load_batch(&self, manifest: &DatasetManifest, indices: &[usize], seed: u64) -> Result<Batch> {
        let images = indices
            .par_iter()
            .map(|&i| self.load(manifest, i, sample_seed(seed, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Batch {
            indices: indices.to_vec(),
            class_ids: indices.iter().map(|&i| manifest.records[i].class_id).collect(),
            images,
        })
    }

    pub fn batches<'a>(
        &'a self,
        manifest: &'a DatasetManifest,
        split: Split,
        batch_size: usize,
        seed: u64,
        epoch: usize,
    ) -> Result<Batches<'a>> {
        let plan = batch_plan(manifest, split, batch_size, seed, epoch)?;
        Ok(Batches {
            loader: self,
            manifest,
            plan: plan.into_iter(),
            seed: seed ^ ((epoch as u64) << 32),
        })
    }
}

fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Iterator over the batches of one epoch.
pub struct Batches<'a> {
    loader: &'a ImageLoader,
    manifest: &'a DatasetManifest,
    plan: std::vec::IntoIter<Vec<usize>>,
    seed: u64,
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let indices = self.plan.next()?;
        Some(self.loader.load_batch(self.manifest, &indices, self.seed))
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        self.plan.size_hint()
    }
}

impl ExactSizeIterator for Batches<'_> {}
