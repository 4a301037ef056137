//! U-net with a residual downsampling encoder and a two-channel softmax
//! head. One instance per domain expert.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::checkpoint::CheckpointMeta;
use crate::error::{Error, Result};
use crate::nn::{upsample2x, Adam, AdamCfg, Conv2d, Conv2dCfg, InstanceNorm, ParamBank};
use crate::types::{normalize_probs, ImageBatch, Mask, ProbMap, NUM_CLASSES};

/// Which domain a segmentation model specializes in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegRole {
    SourceExpert,
    TargetExpert,
}

impl SegRole {
    /// Checkpoint key prefix for this expert's parameters.
    pub fn key_prefix(self) -> &'static str {
        match self {
            SegRole::SourceExpert => "F^S",
            SegRole::TargetExpert => "F^T",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    /// Number of stride-2 residual encoder stages; the input side must be
    /// divisible by `2^encoder_depth`.
    pub encoder_depth: usize,
}

impl Default for SegNetConfig {
    fn default() -> Self {
        Self { in_channels: 1, base_channels: 16, encoder_depth: 4 }
    }
}

impl SegNetConfig {
    pub fn downsample_factor(&self) -> usize {
        1 << self.encoder_depth
    }

    fn stage_width(&self, i: usize) -> usize {
        self.base_channels * (1 << i.min(3))
    }
}

/// Residual downsampling block: two 3x3 convs with instance norm plus a
/// strided 1x1 projection shortcut.
struct ResDown {
    conv1: Conv2d,
    norm1: InstanceNorm,
    conv2: Conv2d,
    norm2: InstanceNorm,
    proj: Conv2d,
    proj_norm: InstanceNorm,
}

impl ResDown {
    fn new(bank: &mut ParamBank, name: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(bank, &format!("{name}.conv1"), in_c, out_c, Conv2dCfg::k3s2())?,
            norm1: InstanceNorm::new(bank, &format!("{name}.norm1"), out_c)?,
            conv2: Conv2d::new(bank, &format!("{name}.conv2"), out_c, out_c, Conv2dCfg::k3s1())?,
            norm2: InstanceNorm::new(bank, &format!("{name}.norm2"), out_c)?,
            proj: Conv2d::new(
                bank,
                &format!("{name}.proj"),
                in_c,
                out_c,
                Conv2dCfg { kernel: 1, stride: 2, padding: 0 },
            )?,
            proj_norm: InstanceNorm::new(bank, &format!("{name}.proj_norm"), out_c)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = self.norm1.forward(&self.conv1.forward(x)?)?.relu()?;
        let h = self.norm2.forward(&self.conv2.forward(&h)?)?;
        let shortcut = self.proj_norm.forward(&self.proj.forward(x)?)?;
        Ok((h + shortcut)?.relu()?)
    }
}

struct UpBlock {
    up_conv: Conv2d,
    up_norm: InstanceNorm,
    fuse_conv: Conv2d,
    fuse_norm: InstanceNorm,
}

impl UpBlock {
    fn new(bank: &mut ParamBank, name: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(Self {
            up_conv: Conv2d::new(bank, &format!("{name}.up_conv"), in_c, out_c, Conv2dCfg::k3s1())?,
            up_norm: InstanceNorm::new(bank, &format!("{name}.up_norm"), out_c)?,
            fuse_conv: Conv2d::new(
                bank,
                &format!("{name}.fuse_conv"),
                2 * out_c,
                out_c,
                Conv2dCfg::k3s1(),
            )?,
            fuse_norm: InstanceNorm::new(bank, &format!("{name}.fuse_norm"), out_c)?,
        })
    }

    fn forward(&self, x: &Tensor, skip: &Tensor) -> Result<Tensor> {
        let h = self.up_norm.forward(&self.up_conv.forward(&upsample2x(x)?)?)?.relu()?;
        let cat = Tensor::cat(&[&h, skip], 1)?;
        Ok(self.fuse_norm.forward(&self.fuse_conv.forward(&cat)?)?.relu()?)
    }
}

/// Segmentation expert mapping image batches to per-pixel class
/// probabilities of the same spatial size.
pub struct SegModel {
    role: SegRole,
    cfg: SegNetConfig,
    seed: u64,
    bank: ParamBank,
    stem_conv: Conv2d,
    stem_norm: InstanceNorm,
    encoder: Vec<ResDown>,
    decoder: Vec<UpBlock>,
    head: Conv2d,
}

impl SegModel {
    pub fn new(role: SegRole, cfg: SegNetConfig, seed: u64, device: &Device) -> Result<Self> {
        let mut bank = ParamBank::new(seed, DType::F32, device.clone());
        let p = role.key_prefix();
        let stem_conv = Conv2d::new(
            &mut bank,
            &format!("{p}.stem.conv"),
            cfg.in_channels,
            cfg.base_channels,
            Conv2dCfg::k3s1(),
        )?;
        let stem_norm = InstanceNorm::new(&mut bank, &format!("{p}.stem.norm"), cfg.base_channels)?;
        let mut encoder = Vec::new();
        for i in 0..cfg.encoder_depth {
            encoder.push(ResDown::new(
                &mut bank,
                &format!("{p}.enc{i}"),
                cfg.stage_width(i),
                cfg.stage_width(i + 1),
            )?);
        }
        let mut decoder = Vec::new();
        for i in (0..cfg.encoder_depth).rev() {
            decoder.push(UpBlock::new(
                &mut bank,
                &format!("{p}.dec{i}"),
                cfg.stage_width(i + 1),
                cfg.stage_width(i),
            )?);
        }
        let head = Conv2d::new(
            &mut bank,
            &format!("{p}.head"),
            cfg.base_channels,
            NUM_CLASSES,
            Conv2dCfg::k1s1(),
        )?;
        Ok(Self { role, cfg, seed, bank, stem_conv, stem_norm, encoder, decoder, head })
    }

    pub fn role(&self) -> SegRole {
        self.role
    }

    pub fn config(&self) -> &SegNetConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &ParamBank {
        &self.bank
    }

    pub fn forward_pixels(&self, pixels: &Tensor) -> Result<ProbMap> {
        let side = pixels.dims()[2];
        let factor = self.cfg.downsample_factor();
        if side % factor != 0 {
            return Err(Error::shape(format!(
                "image side {side} is not divisible by the encoder factor {factor}"
            )));
        }
        let mut h = self.stem_norm.forward(&self.stem_conv.forward(pixels)?)?.relu()?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        for block in &self.encoder {
            skips.push(h.clone());
            h = block.forward(&h)?;
        }
        for block in &self.decoder {
            let skip = skips.pop().expect("one skip per decoder stage");
            h = block.forward(&h, &skip)?;
        }
        let logits = self.head.forward(&h)?;
        normalize_probs(&logits)
    }

    /// Per-pixel class probabilities, same spatial size as the input.
    pub fn forward(&self, images: &ImageBatch) -> Result<ProbMap> {
        self.forward_pixels(images.pixels())
    }

    /// Hard mask via per-pixel argmax; an exact probability tie goes to
    /// background.
    pub fn predict(&self, images: &ImageBatch) -> Result<Mask> {
        let probs = self.forward(images)?;
        predict_from_probs(&probs)
    }

    pub fn optimizer(&self, cfg: AdamCfg) -> Result<Adam> {
        Adam::new(self.bank.all(), cfg)
    }

    /// Little-endian bytes of every parameter, for bit-identity checks.
    pub fn param_bytes(&self) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        for (_, var) in self.bank.all() {
            for v in var.as_tensor().flatten_all()?.to_vec1::<f32>()? {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(bytes)
    }

    /// Overwrites this model's parameters with another model's values.
    /// Both models must share the same architecture config.
    pub fn copy_params_from(&self, other: &SegModel) -> Result<()> {
        if self.cfg != other.cfg {
            return Err(Error::state("cannot copy parameters across different architectures"));
        }
        for ((_, dst), (_, src)) in self.bank.all().iter().zip(other.bank.all().iter()) {
            dst.set(&src.as_detached_tensor())?;
        }
        Ok(())
    }
}

/// Argmax over the two classes; exact 0.5 ties resolve to background.
pub fn predict_from_probs(probs: &ProbMap) -> Result<Mask> {
    let vessel = probs.vessel()?;
    let hard = vessel.gt(0.5)?.to_dtype(DType::F32)?;
    Mask::new(hard)
}

/// The two experts trained by collaborative consistency learning.
pub struct CclPair {
    pub source_expert: SegModel,
    pub target_expert: SegModel,
}

impl CclPair {
    pub fn new(cfg: SegNetConfig, seed: u64, device: &Device) -> Result<Self> {
        Ok(Self {
            source_expert: SegModel::new(SegRole::SourceExpert, cfg, seed, device)?,
            target_expert: SegModel::new(SegRole::TargetExpert, cfg, seed, device)?,
        })
    }

    /// Saves both experts (and any optimizer state) into one archive.
    pub fn save(
        &self,
        path: &Path,
        stage: &str,
        completed_epochs: usize,
        extra_state: Vec<(String, Tensor)>,
    ) -> Result<()> {
        let mut tensors = self.source_expert.bank.value_tensors()?;
        tensors.extend(self.target_expert.bank.value_tensors()?);
        tensors.extend(extra_state);
        let meta = CheckpointMeta {
            stage: stage.to_string(),
            completed_epochs,
            seed: self.source_expert.seed,
            drst: None,
            seg: Some(self.source_expert.cfg),
            shared_layer_key: None,
        };
        crate::checkpoint::save_checkpoint(path, &tensors, &meta)
    }

    pub fn load(
        path: &Path,
        device: &Device,
    ) -> Result<(Self, std::collections::HashMap<String, Tensor>, CheckpointMeta)> {
        let (tensors, meta) = crate::checkpoint::load_checkpoint(path, device)?;
        let cfg = meta
            .seg
            .ok_or_else(|| Error::Checkpoint("checkpoint has no segmentation config".into()))?;
        let pair = CclPair::new(cfg, meta.seed, device)?;
        pair.source_expert.bank.load_values(&tensors)?;
        pair.target_expert.bank.load_values(&tensors)?;
        Ok((pair, tensors, meta))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DomainTag;

    fn small_cfg() -> SegNetConfig {
        SegNetConfig { base_channels: 4, encoder_depth: 2, ..Default::default() }
    }

    fn batch(value: f32, n: usize, side: usize) -> ImageBatch {
        let t = Tensor::full(value, (n, 1, side, side), &Device::Cpu).unwrap();
        ImageBatch::from_pixels(t, DomainTag::Source).unwrap()
    }

    #[test]
    fn output_matches_input_spatial_size() {
        let model = SegModel::new(SegRole::SourceExpert, small_cfg(), 1, &Device::Cpu).unwrap();
        let probs = model.forward(&batch(0.5, 2, 16)).unwrap();
        assert_eq!(probs.probs().dims(), &[2, 2, 16, 16]);
        probs.validate().unwrap();
    }

    #[test]
    fn indivisible_side_is_shape_error() {
        let model = SegModel::new(SegRole::SourceExpert, small_cfg(), 1, &Device::Cpu).unwrap();
        let t = Tensor::full(0.5f32, (1, 1, 18, 18), &Device::Cpu).unwrap();
        let img = ImageBatch::from_pixels(t, DomainTag::Source).unwrap();
        assert!(model.forward(&img).is_err());
    }

    #[test]
    fn tie_breaks_to_background() {
        let probs = ProbMap::new(Tensor::full(0.5f32, (1, 2, 4, 4), &Device::Cpu).unwrap()).unwrap();
        let mask = predict_from_probs(&probs).unwrap();
        assert!(mask.to_grid(0).unwrap().iter().all(|&v| !v));
    }

    #[test]
    fn confident_vessel_predicts_ones() {
        let bg = Tensor::full(0.1f32, (1, 1, 4, 4), &Device::Cpu).unwrap();
        let v = Tensor::full(0.9f32, (1, 1, 4, 4), &Device::Cpu).unwrap();
        let probs = ProbMap::new(Tensor::cat(&[&bg, &v], 1).unwrap()).unwrap();
        let mask = predict_from_probs(&probs).unwrap();
        assert!(mask.to_grid(0).unwrap().iter().all(|&v| v));
    }

    #[test]
    fn checkerboard_probs_give_checkerboard_mask() {
        let mut vessel = vec![0f32; 16];
        for i in 0..16 {
            let (r, c) = (i / 4, i % 4);
            vessel[i] = if (r + c) % 2 == 0 { 0.6 } else { 0.4 };
        }
        let v = Tensor::from_vec(vessel.clone(), (1, 1, 4, 4), &Device::Cpu).unwrap();
        let bg = v.affine(-1.0, 1.0).unwrap();
        let probs = ProbMap::new(Tensor::cat(&[&bg, &v], 1).unwrap()).unwrap();
        let mask = predict_from_probs(&probs).unwrap();
        let grid = mask.to_grid(0).unwrap();
        for i in 0..16 {
            assert_eq!(grid[i], vessel[i] > 0.5, "pixel {i}");
        }
    }

    #[test]
    fn copy_params_makes_models_identical() {
        let a = SegModel::new(SegRole::SourceExpert, small_cfg(), 1, &Device::Cpu).unwrap();
        let b = SegModel::new(SegRole::TargetExpert, small_cfg(), 2, &Device::Cpu).unwrap();
        assert_ne!(a.param_bytes().unwrap(), b.param_bytes().unwrap());
        b.copy_params_from(&a).unwrap();
        assert_eq!(a.param_bytes().unwrap(), b.param_bytes().unwrap());
        let img = batch(0.3, 1, 16);
        let pa = a.forward(&img).unwrap();
        let pb = b.forward(&img).unwrap();
        let va = pa.probs().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let vb = pb.probs().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(va, vb);
    }
}
