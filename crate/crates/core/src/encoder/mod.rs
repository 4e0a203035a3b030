//! Dual encoder: image tower, text tower, linear projections into a shared
//! embedding space, and a learnable logit scale.
//!
//! The bundled backbone is a small reference model (three conv blocks with
//! average pooling for images, a bag of word embeddings for text). Other
//! backbones plug in through [`BackboneAdapter`].

pub mod checkpoint;
pub mod layers;
pub mod params;
pub mod tokenizer;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{ImageArray, Normalization};
use crate::error::{Error, Result};
use crate::registry::Registry;
use crate::tensor::{dot, l2_norm, Matrix};

pub use self::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use self::params::{Gradients, Param, ParamStore};
pub use self::tokenizer::{TokenSequence, WordTokenizer};

/// Upper bound on `exp(logit_scale)`.
pub const MAX_LOGIT_SCALE: f64 = 100.0;

/// `ln(1 / 0.07)`, the customary initial logit scale.
pub fn initial_logit_scale() -> f64 {
    (1.0f64 / 0.07).ln()
}

/// Unit-norm embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingVector(Vec<f64>);

impl EmbeddingVector {
    /// Normalizes `raw`; the zero vector is rejected. Non-finite input
    /// propagates so training can report it as a non-finite loss.
    pub fn from_raw(raw: &[f64]) -> Result<Self> {
        let n = l2_norm(raw);
        if n == 0.0 {
            return Err(Error::Shape(format!("cannot normalize vector with norm {n}")));
        }
        Ok(Self(raw.iter().map(|v| v / n).collect()))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

/// Entry `(i, j)` is `exp(logit_scale) · ⟨images[i], texts[j]⟩`.
pub fn similarity_logits(images: &[EmbeddingVector], texts: &[EmbeddingVector], logit_scale: f64) -> Result<Matrix> {
    let dims = images.iter().chain(texts).map(EmbeddingVector::dim);
    let mut dims = dims.collect::<Vec<_>>();
    dims.dedup();
    if dims.len() > 1 {
        return Err(Error::Shape(format!("embedding dimensions differ: {dims:?}")));
    }
    let scale = logit_scale.exp();
    Ok(Matrix::from_fn(images.len(), texts.len(), |i, j| {
        scale * images[i].cosine(&texts[j])
    }))
}

/// Architecture hyperparameters of the reference backbone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneSpec {
    pub name: String,
    /// Square input resolution; must be divisible by 8.
    pub resolution: usize,
    pub channels: [usize; 3],
    pub text_width: usize,
    pub embed_dim: usize,
    pub context_length: usize,
    pub normalization: Normalization,
}

impl Default for BackboneSpec {
    fn default() -> Self {
        Self {
            name: "tiny".into(),
            resolution: 32,
            channels: [8, 16, 32],
            text_width: 32,
            embed_dim: 64,
            context_length: 16,
            normalization: Normalization::HALF,
        }
    }
}

impl BackboneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || !self.resolution.is_multiple_of(8) {
            return Err(Error::Config(format!(
                "resolution {} must be a positive multiple of 8",
                self.resolution
            )));
        }
        if self.channels.contains(&0) || self.text_width == 0 || self.embed_dim == 0 {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if self.context_length == 0 {
            return Err(Error::Config("context length must be positive".into()));
        }
        Ok(())
    }
}

/// Parameter indices inside the [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    conv_w: [usize; 3],
    conv_b: [usize; 3],
    token_embedding: usize,
    image_projection: usize,
    text_projection: usize,
    logit_scale: usize,
}

impl Layout {
    fn resolve(store: &ParamStore) -> Result<Self> {
        Ok(Self {
            conv_w: [
                store.index_of("image.conv1.weight")?,
                store.index_of("image.conv2.weight")?,
                store.index_of("image.conv3.weight")?,
            ],
            conv_b: [
                store.index_of("image.conv1.bias")?,
                store.index_of("image.conv2.bias")?,
                store.index_of("image.conv3.bias")?,
            ],
            token_embedding: store.index_of("text.token_embedding")?,
            image_projection: store.index_of("image_projection")?,
            text_projection: store.index_of("text_projection")?,
            logit_scale: store.index_of("logit_scale")?,
        })
    }
}

/// The trainable dual encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderBundle {
    spec: BackboneSpec,
    tokenizer: WordTokenizer,
    params: ParamStore,
    layout: Layout,
}

/// Intermediate activations of one image, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ImageTrace {
    /// Inputs to each conv block.
    block_inputs: [Vec<f64>; 3],
    /// Conv outputs before ReLU.
    pre_activations: [Vec<f64>; 3],
    feature: Vec<f64>,
    projected_norm: f64,
    embedding: EmbeddingVector,
}

#[derive(Debug, Clone)]
pub struct TextTrace {
    tokens: Vec<u32>,
    feature: Vec<f64>,
    projected_norm: f64,
    embedding: EmbeddingVector,
}

/// Forward activations of an image/caption batch.
#[derive(Debug, Clone)]
pub struct BatchForward {
    images: Vec<ImageTrace>,
    texts: Vec<TextTrace>,
    pub logits: Matrix,
}

impl BatchForward {
    pub fn image_embeddings(&self) -> Vec<EmbeddingVector> {
        self.images.iter().map(|t| t.embedding.clone()).collect()
    }

    pub fn text_embeddings(&self) -> Vec<EmbeddingVector> {
        self.texts.iter().map(|t| t.embedding.clone()).collect()
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..bound)).collect()
}

impl EncoderBundle {
    /// Freshly initialized reference backbone whose vocabulary covers the
    /// registry's prompts.
    pub fn tiny(spec: BackboneSpec, registry: &Registry, seed: u64) -> Result<Self> {
        spec.validate()?;
        let tokenizer = WordTokenizer::from_texts(&registry.prompts(), spec.context_length);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut in_c = 3;
        for (k, &out_c) in spec.channels.iter().enumerate() {
            let fan_in = (in_c * 9) as f64;
            params.push(Param::new(
                &format!("image.conv{}.weight", k + 1),
                &[out_c, in_c, 3, 3],
                uniform(&mut rng, out_c * in_c * 9, (6.0 / fan_in).sqrt()),
                true,
            ));
            params.push(Param::new(
                &format!("image.conv{}.bias", k + 1),
                &[out_c],
                vec![0.0; out_c],
                false,
            ));
            in_c = out_c;
        }
        let vocab = tokenizer.vocab_size();
        let embedding: Vec<f64> = (0..vocab * spec.text_width)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        params.push(Param::new(
            "text.token_embedding",
            &[vocab, spec.text_width],
            embedding,
            true,
        ));
        let c3 = spec.channels[2];
        params.push(Param::new(
            "image_projection",
            &[spec.embed_dim, c3],
            uniform(&mut rng, spec.embed_dim * c3, (3.0 / c3 as f64).sqrt()),
            true,
        ));
        params.push(Param::new(
            "text_projection",
            &[spec.embed_dim, spec.text_width],
            uniform(
                &mut rng,
                spec.embed_dim * spec.text_width,
                (3.0 / spec.text_width as f64).sqrt(),
            ),
            true,
        ));
        params.push(Param::new("logit_scale", &[1], vec![initial_logit_scale()], false));
        Self::from_parts(spec, tokenizer, ParamStore::new(params))
    }

    pub fn from_parts(spec: BackboneSpec, tokenizer: WordTokenizer, params: ParamStore) -> Result<Self> {
        spec.validate()?;
        let layout = Layout::resolve(&params)?;
        let expect = |idx: usize, shape: &[usize]| -> Result<()> {
            let p = &params.params()[idx];
            if p.shape != shape || p.values.len() != shape.iter().product::<usize>() {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {shape:?}",
                    p.name, p.shape
                )));
            }
            Ok(())
        };
        let mut in_c = 3;
        for k in 0..3 {
            let out_c = spec.channels[k];
            expect(layout.conv_w[k], &[out_c, in_c, 3, 3])?;
            expect(layout.conv_b[k], &[out_c])?;
            in_c = out_c;
        }
        expect(layout.token_embedding, &[tokenizer.vocab_size(), spec.text_width])?;
        expect(layout.image_projection, &[spec.embed_dim, spec.channels[2]])?;
        expect(layout.text_projection, &[spec.embed_dim, spec.text_width])?;
        expect(layout.logit_scale, &[1])?;
        if tokenizer.context_length() != spec.context_length {
            return Err(Error::Checkpoint("tokenizer context length disagrees with spec".into()));
        }
        let s = params.values(layout.logit_scale)[0];
        if !s.is_finite() || s > MAX_LOGIT_SCALE.ln() {
            return Err(Error::Checkpoint(format!("logit scale {s} out of range")));
        }
        Ok(Self {
            spec,
            tokenizer,
            params,
            layout,
        })
    }

    pub fn spec(&self) -> &BackboneSpec {
        &self.spec
    }

    pub fn resolution(&self) -> usize {
        self.spec.resolution
    }

    pub fn embed_dim(&self) -> usize {
        self.spec.embed_dim
    }

    pub fn normalization(&self) -> &Normalization {
        &self.spec.normalization
    }

    pub fn tokenizer(&self) -> &WordTokenizer {
        &self.tokenizer
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Stored (log-space) temperature parameter.
    pub fn logit_scale(&self) -> f64 {
        self.params.values(self.layout.logit_scale)[0]
    }

    pub fn set_logit_scale(&mut self, value: f64) {
        self.params.params_mut()[self.layout.logit_scale].values[0] = value.min(MAX_LOGIT_SCALE.ln());
    }

    /// Index of the logit-scale parameter in [`Self::params`].
    pub fn logit_scale_index(&self) -> usize {
        self.layout.logit_scale
    }

    /// Re-imposes `exp(logit_scale) ≤ 100` after a parameter update.
    pub fn clamp_logit_scale(&mut self) {
        let s = self.logit_scale();
        self.set_logit_scale(s);
    }

    fn check_image(&self, image: &ImageArray) -> Result<()> {
        let r = self.spec.resolution;
        if image.shape() != (3, r, r) {
            return Err(Error::Shape(format!(
                "image is {:?}, encoder expects (3, {r}, {r})",
                image.shape()
            )));
        }
        Ok(())
    }

    fn image_trace(&self, image: &ImageArray) -> Result<ImageTrace> {
        self.check_image(image)?;
        let mut size = self.spec.resolution;
        let mut in_c = 3;
        let mut x = image.values().to_vec();
        let mut block_inputs: [Vec<f64>; 3] = Default::default();
        let mut pre_activations: [Vec<f64>; 3] = Default::default();
        for k in 0..3 {
            let out_c = self.spec.channels[k];
            let z = layers::conv3x3_forward(
                &x,
                in_c,
                size,
                size,
                self.params.values(self.layout.conv_w[k]),
                self.params.values(self.layout.conv_b[k]),
                out_c,
            );
            let mut a = z.clone();
            layers::relu_inplace(&mut a);
            let pooled = layers::avgpool2_forward(&a, out_c, size, size);
            block_inputs[k] = std::mem::replace(&mut x, pooled);
            pre_activations[k] = z;
            size /= 2;
            in_c = out_c;
        }
        let feature = layers::global_mean(&x, in_c, size * size);
        let (embedding, projected_norm) = self.project(self.layout.image_projection, in_c, &feature)?;
        Ok(ImageTrace {
            block_inputs,
            pre_activations,
            feature,
            projected_norm,
            embedding,
        })
    }

    fn project(&self, index: usize, cols: usize, feature: &[f64]) -> Result<(EmbeddingVector, f64)> {
        let u = layers::matvec(self.params.values(index), self.spec.embed_dim, cols, feature);
        let n = l2_norm(&u);
        Ok((EmbeddingVector::from_raw(&u)?, n))
    }

    fn text_trace(&self, text: &str) -> Result<TextTrace> {
        let seq = self.tokenizer.tokenize(text)?;
        let width = self.spec.text_width;
        let table = self.params.values(self.layout.token_embedding);
        let mut feature = vec![0.0; width];
        for &t in seq.tokens() {
            let row = &table[t as usize * width..(t as usize + 1) * width];
            for (f, v) in feature.iter_mut().zip(row) {
                *f += v;
            }
        }
        let n = seq.len() as f64;
        feature.iter_mut().for_each(|f| *f /= n);
        let (embedding, projected_norm) = self.project(self.layout.text_projection, width, &feature)?;
        Ok(TextTrace {
            tokens: seq.tokens().to_vec(),
            feature,
            projected_norm,
            embedding,
        })
    }

    /// Pooled image feature before projection.
    pub fn raw_image_features(&self, image: &ImageArray) -> Result<Vec<f64>> {
        Ok(self.image_trace(image)?.feature)
    }

    /// Projects and normalizes a raw image feature.
    pub fn project_image_features(&self, feature: &[f64]) -> Result<EmbeddingVector> {
        if feature.len() != self.spec.channels[2] {
            return Err(Error::Shape(format!(
                "image feature has {} entries, expected {}",
                feature.len(),
                self.spec.channels[2]
            )));
        }
        Ok(self.project(self.layout.image_projection, feature.len(), feature)?.0)
    }

    pub fn embed_image(&self, image: &ImageArray) -> Result<EmbeddingVector> {
        Ok(self.image_trace(image)?.embedding)
    }

    pub fn embed_images(&self, images: &[ImageArray]) -> Result<Vec<EmbeddingVector>> {
        images.par_iter().map(|img| self.embed_image(img)).collect()
    }

    pub fn embed_texts<S: AsRef<str> + Sync>(&self, captions: &[S]) -> Result<Vec<EmbeddingVector>> {
        captions
            .par_iter()
            .map(|c| Ok(self.text_trace(c.as_ref())?.embedding))
            .collect()
    }

    /// Image and caption embeddings plus the scaled similarity matrix.
    pub fn forward_batch<S: AsRef<str> + Sync>(&self, images: &[ImageArray], captions: &[S]) -> Result<BatchForward> {
        let images = images
            .par_iter()
            .map(|img| self.image_trace(img))
            .collect::<Result<Vec<_>>>()?;
        let texts = captions
            .par_iter()
            .map(|c| self.text_trace(c.as_ref()))
            .collect::<Result<Vec<_>>>()?;
        let ie: Vec<EmbeddingVector> = images.iter().map(|t| t.embedding.clone()).collect();
        let te: Vec<EmbeddingVector> = texts.iter().map(|t| t.embedding.clone()).collect();
        let logits = similarity_logits(&ie, &te, self.logit_scale())?;
        Ok(BatchForward { images, texts, logits })
    }

    /// Gradients of a scalar loss given its gradient with respect to the
    /// logits of `forward`.
    pub fn backward_batch(&self, forward: &BatchForward, grad_logits: &Matrix) -> Result<Gradients> {
        let (n, m) = (forward.images.len(), forward.texts.len());
        if grad_logits.rows() != n || grad_logits.cols() != m {
            return Err(Error::Shape(format!(
                "logit gradient is {}x{}, batch is {n}x{m}",
                grad_logits.rows(),
                grad_logits.cols()
            )));
        }
        let scale = self.logit_scale().exp();
        let d = self.spec.embed_dim;
        let mut grads = self.params.zeros_like();

        let ds: f64 = grad_logits
            .data()
            .iter()
            .zip(forward.logits.data())
            .map(|(g, l)| g * l)
            .sum();
        grads.get_mut(self.layout.logit_scale)[0] = ds;

        let mut grad_img = vec![vec![0.0; d]; n];
        let mut grad_txt = vec![vec![0.0; d]; m];
        for (i, gi) in grad_img.iter_mut().enumerate() {
            let ei = forward.images[i].embedding.values();
            for (j, gj) in grad_txt.iter_mut().enumerate() {
                let g = scale * grad_logits.get(i, j);
                if g == 0.0 {
                    continue;
                }
                let ej = forward.texts[j].embedding.values();
                for k in 0..d {
                    gi[k] += g * ej[k];
                    gj[k] += g * ei[k];
                }
            }
        }

        let per_image: Vec<Gradients> = forward
            .images
            .par_iter()
            .zip(grad_img.par_iter())
            .map(|(trace, ge)| self.image_backward(trace, ge))
            .collect();
        for g in &per_image {
            grads.add_assign(g);
        }

        let width = self.spec.text_width;
        let proj = self.params.values(self.layout.text_projection);
        for (trace, ge) in forward.texts.iter().zip(&grad_txt) {
            let gu = layers::normalize_backward(trace.embedding.values(), trace.projected_norm, ge);
            let gf = layers::matvec_backward(
                proj,
                d,
                width,
                &trace.feature,
                &gu,
                grads.get_mut(self.layout.text_projection),
            );
            let inv = 1.0 / trace.tokens.len() as f64;
            let table = grads.get_mut(self.layout.token_embedding);
            for &t in &trace.tokens {
                let row = &mut table[t as usize * width..(t as usize + 1) * width];
                for (r, g) in row.iter_mut().zip(&gf) {
                    *r += g * inv;
                }
            }
        }
        Ok(grads)
    }

    fn image_backward(&self, trace: &ImageTrace, grad_embedding: &[f64]) -> Gradients {
        let mut grads = self.params.zeros_like();
        let c3 = self.spec.channels[2];
        let gu = layers::normalize_backward(trace.embedding.values(), trace.projected_norm, grad_embedding);
        let gf = layers::matvec_backward(
            self.params.values(self.layout.image_projection),
            self.spec.embed_dim,
            c3,
            &trace.feature,
            &gu,
            grads.get_mut(self.layout.image_projection),
        );
        let mut size = self.spec.resolution >> 3;
        let plane = (size * size) as f64;
        let mut grad: Vec<f64> = gf
            .iter()
            .flat_map(|g| std::iter::repeat_n(g / plane, size * size))
            .collect();
        for k in (0..3).rev() {
            let out_c = self.spec.channels[k];
            let in_c = if k == 0 { 3 } else { self.spec.channels[k - 1] };
            let full = size * 2;
            let mut g_act = layers::avgpool2_backward(&grad, out_c, full, full);
            layers::relu_backward_inplace(&mut g_act, &trace.pre_activations[k]);
            let (g_in, g_w, g_b) = layers::conv3x3_backward(
                &trace.block_inputs[k],
                in_c,
                full,
                full,
                self.params.values(self.layout.conv_w[k]),
                out_c,
                &g_act,
                k > 0,
            );
            grads.get_mut(self.layout.conv_w[k]).copy_from_slice(&g_w);
            grads.get_mut(self.layout.conv_b[k]).copy_from_slice(&g_b);
            grad = g_in;
            size = full;
        }
        grads
    }
}

/// Loads pretrained weights for a named backbone into an [`EncoderBundle`].
pub trait BackboneAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn load(&self, weights: &Path, registry: &Registry) -> Result<EncoderBundle>;
}

/// Adapter for checkpoints written by [`save_checkpoint`].
pub struct CheckpointAdapter;

impl BackboneAdapter for CheckpointAdapter {
    fn name(&self) -> &str {
        "tiny"
    }

    fn load(&self, weights: &Path, _registry: &Registry) -> Result<EncoderBundle> {
        Ok(load_checkpoint(weights)?.0)
    }
}

/// Resolves a backbone by name. Missing weights or an unknown backbone fall
/// back to a freshly initialized reference backbone.
pub fn load_backbone(
    name: &str,
    weights: Option<&Path>,
    adapters: &[&dyn BackboneAdapter],
    spec: BackboneSpec,
    registry: &Registry,
    seed: u64,
) -> Result<EncoderBundle> {
    let adapter = adapters.iter().find(|a| a.name() == name);
    match (adapter, weights) {
        (Some(a), Some(w)) if w.is_file() => a.load(w, registry),
        (Some(_), Some(w)) => {
            log::warn!(
                "weights {} for backbone {name:?} not found; using the tiny reference backbone",
                w.display()
            );
            EncoderBundle::tiny(spec, registry, seed)
        }
        (None, _) if name != "tiny" => {
            log::warn!("no adapter for backbone {name:?}; using the tiny reference backbone");
            EncoderBundle::tiny(spec, registry, seed)
        }
        _ => EncoderBundle::tiny(spec, registry, seed),
    }
}
