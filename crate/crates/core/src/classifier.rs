//! Caption-matching classification: each image goes to the class whose
//! caption embedding has the highest cosine similarity.

use crate::data::ImageArray;
use crate::encoder::{EmbeddingVector, EncoderBundle};
use crate::error::{Error, Result};
use crate::records::RecordTable;
use crate::registry::{Registry, Verdict};

/// Method label written into prediction files.
pub const METHOD: &str = "CLIP";

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPrediction {
    pub class_id: usize,
    /// Raw cosine similarity per registry class.
    pub scores: Vec<f64>,
    pub verdict: Verdict,
}

impl ClassPrediction {
    /// Softmax over `exp(logit_scale) · scores`, for reporting only.
    pub fn probabilities(&self, logit_scale: f64) -> Vec<f64> {
        let t = logit_scale.exp();
        let m = self.scores.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let e: Vec<f64> = self.scores.iter().map(|s| (t * (s - m)).exp()).collect();
        let z: f64 = e.iter().sum();
        e.into_iter().map(|v| v / z).collect()
    }
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        match best {
            Some((_, b)) if s.partial_cmp(&b) != Some(std::cmp::Ordering::Greater) => {}
            _ => best = Some((i, s)),
        }
    }
    best.map(|(i, _)| i)
}

/// Classifies precomputed image embeddings against caption embeddings.
pub fn classify_embeddings(
    images: &[EmbeddingVector],
    captions: &[EmbeddingVector],
    registry: &Registry,
) -> Result<Vec<ClassPrediction>> {
    if registry.is_empty() || captions.is_empty() {
        return Err(Error::Config("registry has no classes".into()));
    }
    if captions.len() != registry.len() {
        return Err(Error::Shape(format!(
            "{} caption embeddings for {} classes",
            captions.len(),
            registry.len()
        )));
    }
    images
        .iter()
        .map(|img| {
            if img.dim() != captions[0].dim() {
                return Err(Error::Shape(format!(
                    "image embedding dim {} vs caption dim {}",
                    img.dim(),
                    captions[0].dim()
                )));
            }
            let scores: Vec<f64> = captions.iter().map(|c| img.cosine(c)).collect();
            let class_id = argmax(&scores).expect("non-empty scores");
            Ok(ClassPrediction {
                class_id,
                verdict: registry.verdict(class_id)?,
                scores,
            })
        })
        .collect()
}

/// Caption embeddings are computed once and shared across the batch.
pub fn classify(bundle: &EncoderBundle, registry: &Registry, images: &[ImageArray]) -> Result<Vec<ClassPrediction>> {
    if registry.is_empty() {
        return Err(Error::Config("registry has no classes".into()));
    }
    let captions = bundle.embed_texts(&registry.prompts())?;
    let embeddings = bundle.embed_images(images)?;
    classify_embeddings(&embeddings, &captions, registry)
}

pub fn classify_binary(bundle: &EncoderBundle, registry: &Registry, images: &[ImageArray]) -> Result<Vec<Verdict>> {
    Ok(classify(bundle, registry, images)?
        .into_iter()
        .map(|p| p.verdict)
        .collect())
}

/// Prediction file: `path`, `abbreviation`, `verdict`, then one raw cosine
/// column `score_<ABBR>` per class.
pub fn predictions_table(paths: &[String], preds: &[ClassPrediction], registry: &Registry) -> Result<RecordTable> {
    if paths.len() != preds.len() {
        return Err(Error::Shape(format!(
            "{} paths for {} predictions",
            paths.len(),
            preds.len()
        )));
    }
    let mut header = vec!["path".to_string(), "abbreviation".into(), "verdict".into()];
    header.extend(registry.classes().iter().map(|c| format!("score_{}", c.abbreviation)));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut table = RecordTable::new(&header).with_directive("method", METHOD);
    for (path, p) in paths.iter().zip(preds) {
        let mut row = vec![
            path.clone(),
            registry.get(p.class_id)?.abbreviation.clone(),
            p.verdict.to_string(),
        ];
        row.extend(p.scores.iter().map(f64::to_string));
        table.push(row);
    }
    Ok(table)
}
