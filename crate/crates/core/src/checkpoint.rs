//! Checkpoint archives: every named parameter tensor plus optimizer state
//! in one safetensors file, with a JSON manifest in the header metadata
//! recording the architecture configs and the shared-layer key.

use candle_core::{Device, Tensor};
use serde::{Deserialize, Serialize};
use std::borrow::Cow;
use std::collections::HashMap;
use std::path::Path;

use crate::ccl::SegNetConfig;
use crate::drst::DrstNetConfig;
use crate::error::{Error, Result};

const META_KEY: &str = "dcda_meta";

/// Manifest stored in the archive header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    /// Which stage produced this checkpoint ("drst", "source", "joint").
    pub stage: String,
    /// Epochs fully completed when the archive was written.
    pub completed_epochs: usize,
    pub seed: u64,
    pub drst: Option<DrstNetConfig>,
    pub seg: Option<SegNetConfig>,
    /// Key prefix of the parameter block shared by both content encoders.
    pub shared_layer_key: Option<String>,
}

struct TensorBytes {
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl TensorBytes {
    fn from_tensor(t: &Tensor) -> Result<Self> {
        let values = t.flatten_all()?.to_dtype(candle_core::DType::F32)?.to_vec1::<f32>()?;
        let mut data = Vec::with_capacity(values.len() * 4);
        for v in values {
            data.extend_from_slice(&v.to_le_bytes());
        }
        Ok(Self { shape: t.dims().to_vec(), data })
    }
}

impl safetensors::View for TensorBytes {
    fn dtype(&self) -> safetensors::Dtype {
        safetensors::Dtype::F32
    }
    fn shape(&self) -> &[usize] {
        &self.shape
    }
    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(&self.data)
    }
    fn data_len(&self) -> usize {
        self.data.len()
    }
}

/// Writes one archive with all tensors and the manifest.
pub fn save_checkpoint(
    path: &Path,
    tensors: &[(String, Tensor)],
    meta: &CheckpointMeta,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    let views = tensors
        .iter()
        .map(|(name, t)| Ok((name.clone(), TensorBytes::from_tensor(t)?)))
        .collect::<Result<Vec<_>>>()?;
    let meta_json = serde_json::to_string(meta)
        .map_err(|e| Error::Checkpoint(format!("cannot encode manifest: {e}")))?;
    let header: HashMap<String, String> = [(META_KEY.to_string(), meta_json)].into();
    safetensors::serialize_to_file(views, &Some(header), path)
        .map_err(|e| Error::Checkpoint(format!("cannot write {}: {e}", path.display())))?;
    Ok(())
}

/// Reads tensors and the manifest back.
pub fn load_checkpoint(
    path: &Path,
    device: &Device,
) -> Result<(HashMap<String, Tensor>, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    let (_, header) = safetensors::SafeTensors::read_metadata(&bytes)
        .map_err(|e| Error::Checkpoint(format!("cannot parse {}: {e}", path.display())))?;
    let meta_json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| Error::Checkpoint(format!("{} has no manifest", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(meta_json)
        .map_err(|e| Error::Checkpoint(format!("manifest is invalid: {e}")))?;
    let tensors = candle_core::safetensors::load(path, device)?;
    Ok((tensors, meta))
}
