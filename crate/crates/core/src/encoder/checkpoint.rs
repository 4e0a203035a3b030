//! Single-file checkpoints: every parameter as an `F64` safetensors tensor,
//! plus a JSON metadata record under the `aigi` header key.

use std::collections::HashMap;
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde::{Deserialize, Serialize};

use super::params::{Param, ParamStore};
use super::tokenizer::WordTokenizer;
use super::{BackboneSpec, EncoderBundle};
use crate::error::{Error, Result};
use crate::registry::{ClassSpec, Registry};

const META_KEY: &str = "aigi";
const FORMAT: &str = "aigi-checkpoint/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format: String,
    pub backbone: String,
    pub embed_dim: usize,
    pub resolution: usize,
    pub registry_fingerprint: String,
    pub logit_scale: f64,
    pub spec: BackboneSpec,
    pub vocab: Vec<String>,
    pub registry: Vec<ClassSpec>,
    pub prompt_prefix: bool,
    /// Parameter names in in-memory order.
    pub parameters: Vec<String>,
    /// Parameter names whose values are weight-decayed.
    pub decayed: Vec<String>,
    /// Optional training provenance (epoch etc.).
    #[serde(default)]
    pub extra: HashMap<String, String>,
}

impl CheckpointMeta {
    pub fn registry(&self) -> Result<Registry> {
        Ok(Registry::new(self.registry.clone())?.with_prompt_prefix(self.prompt_prefix))
    }
}

fn to_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn checkpoint_bytes(
    bundle: &EncoderBundle,
    registry: &Registry,
    extra: HashMap<String, String>,
) -> Result<Vec<u8>> {
    let params = bundle.params().params();
    let meta = CheckpointMeta {
        format: FORMAT.into(),
        backbone: bundle.spec().name.clone(),
        embed_dim: bundle.embed_dim(),
        resolution: bundle.resolution(),
        registry_fingerprint: registry.fingerprint(),
        logit_scale: bundle.logit_scale(),
        spec: bundle.spec().clone(),
        vocab: bundle.tokenizer().vocab().to_vec(),
        registry: registry.specs(),
        prompt_prefix: registry.prompt_prefix(),
        parameters: params.iter().map(|p| p.name.clone()).collect(),
        decayed: params.iter().filter(|p| p.decay).map(|p| p.name.clone()).collect(),
        extra,
    };
    let json = serde_json::to_string(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let header = HashMap::from([(META_KEY.to_string(), json)]);

    let buffers: Vec<(String, Vec<usize>, Vec<u8>)> = params
        .iter()
        .map(|p| (p.name.clone(), p.shape.clone(), to_bytes(&p.values)))
        .collect();
    let views = buffers
        .iter()
        .map(|(name, shape, bytes)| {
            TensorView::new(Dtype::F64, shape.clone(), bytes)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    safetensors::serialize(views, &Some(header)).map_err(|e| Error::Checkpoint(e.to_string()))
}

pub fn save_checkpoint(
    path: &Path,
    bundle: &EncoderBundle,
    registry: &Registry,
    extra: HashMap<String, String>,
) -> Result<()> {
    let bytes = checkpoint_bytes(bundle, registry, extra)?;
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<(EncoderBundle, CheckpointMeta)> {
    let err = |e: safetensors::SafeTensorError| Error::Checkpoint(e.to_string());
    let (_, metadata) = SafeTensors::read_metadata(bytes).map_err(err)?;
    let json = metadata
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint("missing metadata record".into()))?;
    let meta: CheckpointMeta = serde_json::from_str(json).map_err(|e| Error::Checkpoint(e.to_string()))?;
    if meta.format != FORMAT {
        return Err(Error::Checkpoint(format!("unsupported format {:?}", meta.format)));
    }

    let tensors = SafeTensors::deserialize(bytes).map_err(err)?;
    if tensors.len() != meta.parameters.len() {
        return Err(Error::Checkpoint(format!(
            "{} tensors stored, metadata lists {}",
            tensors.len(),
            meta.parameters.len()
        )));
    }
    let mut params = Vec::with_capacity(meta.parameters.len());
    for name in &meta.parameters {
        let view = tensors.tensor(name).map_err(err)?;
        if view.dtype() != Dtype::F64 {
            return Err(Error::Checkpoint(format!(
                "{name}: expected F64, found {:?}",
                view.dtype()
            )));
        }
        let values = view
            .data()
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let decay = meta.decayed.contains(name);
        params.push(Param::new(name, view.shape(), values, decay));
    }
    let tokenizer = WordTokenizer::from_vocab(meta.vocab.clone(), meta.spec.context_length);
    let bundle = EncoderBundle::from_parts(meta.spec.clone(), tokenizer, ParamStore::new(params))?;
    if bundle.logit_scale().to_bits() != meta.logit_scale.to_bits() {
        return Err(Error::Checkpoint("logit scale tensor disagrees with metadata".into()));
    }
    Ok((bundle, meta))
}

pub fn load_checkpoint(path: &Path) -> Result<(EncoderBundle, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("cannot read {}: {e}", path.display())))?;
    checkpoint_from_bytes(&bytes)
}
