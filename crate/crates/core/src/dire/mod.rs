//! Reconstruction-error detector: an image is pushed through a diffusion
//! model's inversion and reconstruction, and the pixelwise absolute error
//! is scored. Generated images are expected to reconstruct better.

mod toy;

pub use toy::{toy_oracle, ToyDiffusion};

use std::path::Path;

use image::{GrayImage, Luma};

use crate::data::ImageArray;
use crate::error::{Error, Result};
use crate::records::RecordTable;
use crate::registry::Verdict;

/// Method label written into score files.
pub const METHOD: &str = "DIRE";

/// Noise-space representation produced by [`DiffusionOracle::invert`].
pub type Latent = ImageArray;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OracleMetadata {
    pub name: String,
    pub step_count: usize,
    /// Expected `(channels, height, width)`, if fixed.
    pub shape: Option<(usize, usize, usize)>,
}

pub trait DiffusionOracle: Send + Sync {
    fn invert(&self, image: &ImageArray) -> Result<Latent>;
    fn reconstruct(&self, latent: &Latent) -> Result<ImageArray>;
    fn metadata(&self) -> OracleMetadata;
}

/// Round trip that returns its input untouched.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityOracle;

impl DiffusionOracle for IdentityOracle {
    fn invert(&self, image: &ImageArray) -> Result<Latent> {
        Ok(image.clone())
    }

    fn reconstruct(&self, latent: &Latent) -> Result<ImageArray> {
        Ok(latent.clone())
    }

    fn metadata(&self) -> OracleMetadata {
        OracleMetadata {
            name: "identity".into(),
            step_count: 0,
            shape: None,
        }
    }
}

/// Per-pixel reconstruction error, same shape as the input. Entries are
/// nonnegative and finite.
#[derive(Debug, Clone, PartialEq)]
pub struct DireMap {
    inner: ImageArray,
}

impl DireMap {
    pub fn from_image(values: ImageArray) -> Result<Self> {
        if let Some(v) = values.values().iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Oracle(format!("invalid reconstruction error entry {v}")));
        }
        Ok(Self { inner: values })
    }

    pub fn values(&self) -> &[f64] {
        self.inner.values()
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        self.inner.shape()
    }

    pub fn as_image(&self) -> &ImageArray {
        &self.inner
    }

    /// Channel-averaged grayscale rendering; `full_scale` maps to 255.
    pub fn to_gray(&self, full_scale: f64) -> GrayImage {
        let (c, h, w) = self.shape();
        GrayImage::from_fn(w as u32, h as u32, |x, y| {
            let m = (0..c).map(|k| self.inner.at(k, y as usize, x as usize)).sum::<f64>() / c as f64;
            Luma([(m / full_scale * 255.0).round().clamp(0.0, 255.0) as u8])
        })
    }

    pub fn save_png(&self, path: &Path, full_scale: f64) -> Result<()> {
        self.to_gray(full_scale)
            .save(path)
            .map_err(|e| Error::Io(std::io::Error::other(e)))
    }
}

/// `|x - R(I(x))|` elementwise.
pub fn compute_dire(image: &ImageArray, oracle: &dyn DiffusionOracle) -> Result<DireMap> {
    let meta = oracle.metadata();
    if let Some(shape) = meta.shape {
        if shape != image.shape() {
            return Err(Error::Oracle(format!(
                "oracle {} expects {:?}, got {:?}",
                meta.name,
                shape,
                image.shape()
            )));
        }
    }
    let latent = oracle.invert(image)?;
    let recon = oracle.reconstruct(&latent)?;
    if recon.shape() != image.shape() {
        return Err(Error::Oracle(format!(
            "oracle {} reconstructed {:?} from {:?}",
            meta.name,
            recon.shape(),
            image.shape()
        )));
    }
    let diff: Vec<f64> = image
        .values()
        .iter()
        .zip(recon.values())
        .map(|(a, b)| (a - b).abs())
        .collect();
    let (c, h, w) = image.shape();
    DireMap::from_image(ImageArray::new(c, h, w, diff)?)
}

/// Mean over all entries.
pub fn dire_score(map: &DireMap) -> f64 {
    let v = map.values();
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Threshold rule: fake iff `score < threshold`; ties count as real.
pub fn verdict_for_score(score: f64, threshold: f64) -> Verdict {
    if score < threshold {
        Verdict::Fake
    } else {
        Verdict::Real
    }
}

pub fn classify_dire(image: &ImageArray, oracle: &dyn DiffusionOracle, threshold: f64) -> Result<Verdict> {
    classify_dire_with(image, oracle, |s| verdict_for_score(s, threshold))
}

/// Same pipeline with an arbitrary score-to-verdict head.
pub fn classify_dire_with(
    image: &ImageArray,
    oracle: &dyn DiffusionOracle,
    head: impl Fn(f64) -> Verdict,
) -> Result<Verdict> {
    Ok(head(dire_score(&compute_dire(image, oracle)?)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub threshold: f64,
    pub balanced_accuracy: f64,
}

fn balanced_accuracy(scores: &[f64], labels: &[Verdict], threshold: f64) -> f64 {
    let (mut tp, mut nf, mut tn, mut nr) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        let v = verdict_for_score(s, threshold);
        match l {
            Verdict::Fake => {
                nf += 1;
                tp += (v == Verdict::Fake) as usize;
            }
            Verdict::Real => {
                nr += 1;
                tn += (v == Verdict::Real) as usize;
            }
        }
    }
    0.5 * (tp as f64 / nf as f64 + tn as f64 / nr as f64)
}

/// Sweeps midpoints between consecutive distinct scores and keeps the one
/// with the best balanced accuracy (lowest threshold on ties).
pub fn calibrate_threshold(scores: &[f64], labels: &[Verdict]) -> Result<Calibration> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if !labels.contains(&Verdict::Real) || !labels.contains(&Verdict::Fake) {
        return Err(Error::Calibration);
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::Oracle(format!("non-finite score {s}")));
    }
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut candidates = vec![sorted[0]];
    candidates.extend(sorted.windows(2).map(|w| 0.5 * (w[0] + w[1])));

    let mut best = Calibration {
        threshold: candidates[0],
        balanced_accuracy: balanced_accuracy(scores, labels, candidates[0]),
    };
    for &t in &candidates[1..] {
        let ba = balanced_accuracy(scores, labels, t);
        if ba > best.balanced_accuracy {
            best = Calibration {
                threshold: t,
                balanced_accuracy: ba,
            };
        }
    }
    if best.balanced_accuracy <= 0.5 {
        log::warn!(
            "scores do not separate real from fake (balanced accuracy {:.3})",
            best.balanced_accuracy
        );
    }
    Ok(best)
}

/// Probability that a random fake scores below a random real (ties count
/// half), i.e. the area under the threshold-sweep ROC curve.
pub fn roc_auc(scores: &[f64], labels: &[Verdict]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let fakes: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Verdict::Fake)
        .map(|(s, _)| *s)
        .collect();
    let mut reals: Vec<f64> = scores
        .iter()
        .zip(labels)
        .filter(|(_, l)| **l == Verdict::Real)
        .map(|(s, _)| *s)
        .collect();
    if fakes.is_empty() || reals.is_empty() {
        return Err(Error::Calibration);
    }
    reals.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for f in &fakes {
        let below = reals.partition_point(|r| r <= f);
        let strictly_below = reals.partition_point(|r| r < f);
        let ties = below - strictly_below;
        wins += (reals.len() - below) as f64 + 0.5 * ties as f64;
    }
    Ok(wins / (fakes.len() * reals.len()) as f64)
}

/// Score file: `path`, `score`, `verdict`.
pub fn scores_table(paths: &[String], scores: &[f64], threshold: Option<f64>) -> Result<RecordTable> {
    if paths.len() != scores.len() {
        return Err(Error::Shape(format!(
            "{} paths for {} scores",
            paths.len(),
            scores.len()
        )));
    }
    let mut table = RecordTable::new(&["path", "score", "verdict"]).with_directive("method", METHOD);
    if let Some(t) = threshold {
        table = table.with_directive("threshold", t.to_string());
    }
    for (path, &s) in paths.iter().zip(scores) {
        let verdict = threshold.map_or_else(String::new, |t| verdict_for_score(s, t).to_string());
        table.push(vec![path.clone(), s.to_string(), verdict]);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct ShiftOracle(f64);

    impl DiffusionOracle for ShiftOracle {
        fn invert(&self, image: &ImageArray) -> Result<Latent> {
            Ok(image.clone())
        }
        fn reconstruct(&self, latent: &Latent) -> Result<ImageArray> {
            Ok(latent.map(|v| v + self.0))
        }
        fn metadata(&self) -> OracleMetadata {
            OracleMetadata {
                name: "shift".into(),
                step_count: 1,
                shape: None,
            }
        }
    }

    struct CropOracle;

    impl DiffusionOracle for CropOracle {
        fn invert(&self, image: &ImageArray) -> Result<Latent> {
            Ok(image.clone())
        }
        fn reconstruct(&self, _: &Latent) -> Result<ImageArray> {
            Ok(ImageArray::zeros(3, 2, 2))
        }
        fn metadata(&self) -> OracleMetadata {
            OracleMetadata {
                name: "crop".into(),
                step_count: 1,
                shape: None,
            }
        }
    }

    fn random_image(rng: &mut ChaCha8Rng) -> ImageArray {
        let v = (0..3 * 4 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        ImageArray::new(3, 4, 4, v).unwrap()
    }

    #[test]
    fn identity_gives_zero_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = compute_dire(&random_image(&mut rng), &IdentityOracle).unwrap();
        assert!(map.values().iter().all(|&v| v == 0.0));
        assert_eq!(dire_score(&map), 0.0);
    }

    #[test]
    fn constant_shift_gives_constant_map() {
        let map = compute_dire(&ImageArray::filled(3, 4, 4, 0.3), &ShiftOracle(0.1)).unwrap();
        assert!(map.values().iter().all(|&v| (v - 0.1).abs() < 1e-12));
        assert!((dire_score(&map) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_oracle_error() {
        let err = compute_dire(&ImageArray::zeros(3, 4, 4), &CropOracle).unwrap_err();
        assert!(matches!(err, Error::Oracle(_)));
    }

    #[test]
    fn score_is_mean() {
        let map = DireMap::from_image(ImageArray::new(1, 2, 2, vec![0.0, 0.2, 0.4, 0.6]).unwrap()).unwrap();
        assert!((dire_score(&map) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn negative_map_rejected() {
        let img = ImageArray::new(1, 1, 2, vec![0.1, -0.1]).unwrap();
        assert!(DireMap::from_image(img).is_err());
    }

    #[test]
    fn calibration_picks_midpoint() {
        let scores = [0.01, 0.02, 0.5, 0.6];
        let labels = [Verdict::Fake, Verdict::Fake, Verdict::Real, Verdict::Real];
        let c = calibrate_threshold(&scores, &labels).unwrap();
        assert!((c.threshold - 0.26).abs() < 1e-12);
        assert_eq!(c.balanced_accuracy, 1.0);
    }

    #[test]
    fn calibration_without_separation_is_chance() {
        let scores = [0.1, 0.2, 0.3, 0.4];
        let labels = [Verdict::Real, Verdict::Real, Verdict::Fake, Verdict::Fake];
        let c = calibrate_threshold(&scores, &labels).unwrap();
        assert_eq!(c.balanced_accuracy, 0.5);
        assert_eq!(c.threshold, 0.1);
    }

    #[test]
    fn calibration_needs_both_labels() {
        let err = calibrate_threshold(&[0.1, 0.2], &[Verdict::Fake, Verdict::Fake]).unwrap_err();
        assert!(matches!(err, Error::Calibration));
    }

    #[test]
    fn boundary_is_real() {
        assert_eq!(verdict_for_score(0.0, 0.26), Verdict::Fake);
        assert_eq!(verdict_for_score(0.5, 0.26), Verdict::Real);
        assert_eq!(verdict_for_score(0.26, 0.26), Verdict::Real);
    }

    #[test]
    fn classify_uses_threshold() {
        let img = ImageArray::filled(3, 4, 4, 0.0);
        assert_eq!(classify_dire(&img, &IdentityOracle, 0.26).unwrap(), Verdict::Fake);
        assert_eq!(classify_dire(&img, &ShiftOracle(0.5), 0.26).unwrap(), Verdict::Real);
        let v = classify_dire_with(&img, &ShiftOracle(0.5), |_| Verdict::Fake).unwrap();
        assert_eq!(v, Verdict::Fake);
    }

    #[test]
    fn auc_matches_pair_count() {
        let scores = [0.1, 0.4, 0.35, 0.8];
        let labels = [Verdict::Fake, Verdict::Fake, Verdict::Real, Verdict::Real];
        // Pairs (fake, real): (0.1,0.35) (0.1,0.8) (0.4,0.8) win, (0.4,0.35) loses.
        assert!((roc_auc(&scores, &labels).unwrap() - 0.75).abs() < 1e-12);
        let tied = [0.2, 0.2];
        assert_eq!(roc_auc(&tied, &[Verdict::Fake, Verdict::Real]).unwrap(), 0.5);
    }

    #[test]
    fn gray_rendering_scales() {
        let map = DireMap::from_image(ImageArray::filled(3, 2, 2, 1.0)).unwrap();
        assert!(map.to_gray(2.0).pixels().all(|p| p.0[0] == 128));
    }

    proptest::proptest! {
        #[test]
        fn monotone_transform_keeps_decisions(
            scores in proptest::collection::vec(0.0f64..2.0, 1..30),
            threshold in 0.0f64..2.0,
        ) {
            for &s in &scores {
                let plain = verdict_for_score(s, threshold);
                let cubed = verdict_for_score(s.powi(3) + 7.0, threshold.powi(3) + 7.0);
                let logged = verdict_for_score((1.0 + s).ln(), (1.0 + threshold).ln());
                proptest::prop_assert_eq!(plain, cubed);
                proptest::prop_assert_eq!(plain, logged);
            }
        }

        #[test]
        fn score_is_monotone(vals in proptest::collection::vec(0.0f64..1.0, 12), k in 0usize..12, bump in 0.0f64..1.0) {
            let base = DireMap::from_image(ImageArray::new(3, 2, 2, vals.clone()).unwrap()).unwrap();
            let mut raised = vals;
            raised[k] += bump;
            let up = DireMap::from_image(ImageArray::new(3, 2, 2, raised).unwrap()).unwrap();
            proptest::prop_assert!(dire_score(&up) >= dire_score(&base));
        }

        #[test]
        fn map_is_symmetric(seed in 0u64..1000) {
            struct Fixed(ImageArray);
            impl DiffusionOracle for Fixed {
                fn invert(&self, image: &ImageArray) -> Result<Latent> { Ok(image.clone()) }
                fn reconstruct(&self, _: &Latent) -> Result<ImageArray> { Ok(self.0.clone()) }
                fn metadata(&self) -> OracleMetadata {
                    OracleMetadata { name: "fixed".into(), step_count: 1, shape: None }
                }
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (x, y) = (random_image(&mut rng), random_image(&mut rng));
            let a = compute_dire(&x, &Fixed(y.clone())).unwrap();
            let b = compute_dire(&y, &Fixed(x)).unwrap();
            proptest::prop_assert_eq!(a, b);
        }
    }
}
