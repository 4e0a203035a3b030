//! Closed-form toy diffusion model.
//!
//! Images are Gaussian around a smooth mean, with almost all variance on a
//! handful of low-frequency cosine patterns. For Gaussian data the optimal
//! noise predictor is linear, and along each covariance eigendirection a
//! deterministic DDIM step is a scalar multiplication, so inversion and
//! reconstruction reduce to a projection plus per-direction gains.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{DiffusionOracle, Latent, OracleMetadata};
use crate::data::ImageArray;
use crate::error::{Error, Result};

const CHANNELS: usize = 3;
const COMPONENTS: usize = 12;
const MAX_FREQUENCY: usize = 4;
const RESIDUAL_VARIANCE: f64 = 1e-4;
const THETA_MIN: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyDiffusion {
    resolution: usize,
    step_count: usize,
    mean: Vec<f64>,
    basis: Vec<Vec<f64>>,
    variances: Vec<f64>,
    /// Gains for inversion and reconstruction, one per basis vector.
    invert_gain: Vec<f64>,
    reconstruct_gain: Vec<f64>,
    residual_gains: (f64, f64),
}

/// Default 32×32 toy oracle.
pub fn toy_oracle(step_count: usize, seed: u64) -> Result<ToyDiffusion> {
    ToyDiffusion::new(32, step_count, seed)
}

fn dct(n: usize, k: usize, i: usize) -> f64 {
    let c = if k == 0 {
        (1.0 / n as f64).sqrt()
    } else {
        (2.0 / n as f64).sqrt()
    };
    c * (PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos()
}

/// Product of DDIM gains along a path of `(alpha, sigma)` pairs for a
/// direction of data variance `var`.
fn path_gain(schedule: &[(f64, f64)], var: f64) -> f64 {
    schedule.windows(2).fold(1.0, |g, w| {
        let ((a_t, s_t), (a_s, s_s)) = (w[0], w[1]);
        g * (a_s * a_t * var + s_s * s_t) / (a_t * a_t * var + s_t * s_t)
    })
}

impl ToyDiffusion {
    pub fn new(resolution: usize, step_count: usize, seed: u64) -> Result<Self> {
        if step_count == 0 {
            return Err(Error::Config("toy oracle needs at least one step".into()));
        }
        if resolution < MAX_FREQUENCY {
            return Err(Error::Config(format!(
                "toy oracle resolution {resolution} is too small"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = resolution;
        let plane = n * n;

        let mut modes: Vec<(usize, usize, usize)> = (0..CHANNELS)
            .flat_map(|c| (0..MAX_FREQUENCY).flat_map(move |u| (0..MAX_FREQUENCY).map(move |v| (c, u, v))))
            .collect();
        modes.shuffle(&mut rng);
        modes.truncate(COMPONENTS);
        modes.sort();

        let basis: Vec<Vec<f64>> = modes
            .iter()
            .map(|&(c, u, v)| {
                let mut b = vec![0.0; CHANNELS * plane];
                for y in 0..n {
                    for x in 0..n {
                        b[c * plane + y * n + x] = dct(n, u, y) * dct(n, v, x);
                    }
                }
                b
            })
            .collect();
        let variances: Vec<f64> = (0..COMPONENTS).map(|_| rng.random_range(4.0..8.0)).collect();

        let offsets: Vec<f64> = (0..CHANNELS).map(|_| rng.random_range(-0.3..0.3)).collect();
        let tilt: f64 = rng.random_range(-0.2..0.2);
        let mut mean = vec![0.0; CHANNELS * plane];
        for c in 0..CHANNELS {
            for y in 0..n {
                for x in 0..n {
                    let ramp = (x + y) as f64 / (2 * n - 2).max(1) as f64 - 0.5;
                    mean[c * plane + y * n + x] = offsets[c] + tilt * ramp;
                }
            }
        }

        let theta_max = 0.999 * PI / 2.0;
        let forward: Vec<(f64, f64)> = (0..=step_count)
            .map(|i| {
                let th = THETA_MIN + (theta_max - THETA_MIN) * i as f64 / step_count as f64;
                (th.cos(), th.sin())
            })
            .collect();
        let backward: Vec<(f64, f64)> = forward.iter().rev().copied().collect();

        Ok(Self {
            resolution,
            step_count,
            invert_gain: variances.iter().map(|&v| path_gain(&forward, v)).collect(),
            reconstruct_gain: variances.iter().map(|&v| path_gain(&backward, v)).collect(),
            residual_gains: (
                path_gain(&forward, RESIDUAL_VARIANCE),
                path_gain(&backward, RESIDUAL_VARIANCE),
            ),
            mean,
            basis,
            variances,
        })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    fn check(&self, image: &ImageArray) -> Result<()> {
        let want = (CHANNELS, self.resolution, self.resolution);
        if image.shape() != want {
            return Err(Error::Oracle(format!(
                "toy oracle expects {want:?}, got {:?}",
                image.shape()
            )));
        }
        Ok(())
    }

    /// Splits `y` into basis coefficients and applies `gains` to them and
    /// `residual` to whatever is left.
    fn apply(&self, y: &[f64], gains: &[f64], residual: f64) -> Vec<f64> {
        let coeffs: Vec<f64> = self
            .basis
            .iter()
            .map(|b| b.iter().zip(y).map(|(p, q)| p * q).sum())
            .collect();
        let mut out: Vec<f64> = y.iter().map(|v| residual * v).collect();
        for ((b, c), g) in self.basis.iter().zip(&coeffs).zip(gains) {
            let w = c * (g - residual);
            for (o, p) in out.iter_mut().zip(b) {
                *o += w * p;
            }
        }
        out
    }

    /// One generated image: standard normal noise pushed through
    /// reconstruction.
    pub fn sample(&self, rng: &mut impl Rng) -> ImageArray {
        let n = self.resolution;
        let noise: Vec<f64> = (0..CHANNELS * n * n).map(|_| rng.sample(StandardNormal)).collect();
        let latent = ImageArray::new(CHANNELS, n, n, noise).expect("shape");
        self.reconstruct(&latent).expect("shape")
    }

    pub fn samples(&self, count: usize, seed: u64) -> Vec<ImageArray> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count).map(|_| self.sample(&mut rng)).collect()
    }
}

impl DiffusionOracle for ToyDiffusion {
    fn invert(&self, image: &ImageArray) -> Result<Latent> {
        self.check(image)?;
        let centered: Vec<f64> = image.values().iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        let z = self.apply(&centered, &self.invert_gain, self.residual_gains.0);
        ImageArray::new(CHANNELS, self.resolution, self.resolution, z)
    }

    fn reconstruct(&self, latent: &Latent) -> Result<ImageArray> {
        self.check(latent)?;
        let mut y = self.apply(latent.values(), &self.reconstruct_gain, self.residual_gains.1);
        for (v, m) in y.iter_mut().zip(&self.mean) {
            *v += m;
        }
        ImageArray::new(CHANNELS, self.resolution, self.resolution, y)
    }

    fn metadata(&self) -> OracleMetadata {
        OracleMetadata {
            name: "toy".into(),
            step_count: self.step_count,
            shape: Some((CHANNELS, self.resolution, self.resolution)),
        }
    }
}
