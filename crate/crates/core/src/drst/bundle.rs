//! The full set of translation networks plus their parameter registry.

use candle_core::{DType, Device, Tensor};
use std::path::Path;

use crate::checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamCfg, ParamBank};
use crate::types::{ContentMap, DomainTag, ImageBatch, StyleCode};

use super::nets::{
    ContentDiscriminator, ContentEncoderNet, DrstNetConfig, GeneratorNet, PatchDiscriminator,
    SharedContentBlock, StyleEncoderNet,
};
use super::translate::{ContentEncode, Generate, StyleEncode, Translator};

/// Checkpoint key prefix of the parameter block shared by the last layer of
/// both content encoders.
pub const SHARED_LAYER_KEY: &str = "E_C^shared";

const KEY_CONTENT_ENC_SRC: &str = "E_C^X";
const KEY_CONTENT_ENC_TGT: &str = "E_C^Y";
const KEY_STYLE_ENC_SRC: &str = "E_S^X";
const KEY_STYLE_ENC_TGT: &str = "E_S^Y";
const KEY_GEN_SRC: &str = "G_X";
const KEY_GEN_TGT: &str = "G_Y";
const KEY_DISC_SRC: &str = "D_X";
const KEY_DISC_TGT: &str = "D_Y";
const KEY_CONTENT_DISC: &str = "D_C";

const ENC_GEN_PREFIXES: [&str; 7] = [
    KEY_CONTENT_ENC_SRC,
    KEY_CONTENT_ENC_TGT,
    SHARED_LAYER_KEY,
    KEY_STYLE_ENC_SRC,
    KEY_STYLE_ENC_TGT,
    KEY_GEN_SRC,
    KEY_GEN_TGT,
];
const DISC_PREFIXES: [&str; 3] = [KEY_DISC_SRC, KEY_DISC_TGT, KEY_CONTENT_DISC];

struct DomainGenerator {
    net: GeneratorNet,
    domain: DomainTag,
}

impl Generate for DomainGenerator {
    fn generate(&self, content: &ContentMap, style: &StyleCode) -> Result<ImageBatch> {
        let pixels = self.net.forward(content.features(), style.code())?;
        ImageBatch::from_pixels(pixels, self.domain)
    }
}

impl ContentEncode for ContentEncoderNet {
    fn encode_content(&self, img: &ImageBatch) -> Result<ContentMap> {
        ContentMap::new(self.forward(img.pixels())?, img.domain())
    }
}

impl StyleEncode for StyleEncoderNet {
    fn encode_style(&self, img: &ImageBatch) -> Result<StyleCode> {
        StyleCode::new(self.forward(img.pixels())?, img.domain())
    }
}

/// Optimizers for the two alternating update groups.
pub struct DrstOptimizers {
    pub enc_gen: Adam,
    pub disc: Adam,
}

/// Encoders, generators and discriminators for both domains, with the last
/// content-encoder layer shared between the two domain encoders.
pub struct DrstBundle {
    cfg: DrstNetConfig,
    seed: u64,
    bank: ParamBank,
    content_enc_src: ContentEncoderNet,
    content_enc_tgt: ContentEncoderNet,
    style_enc_src: StyleEncoderNet,
    style_enc_tgt: StyleEncoderNet,
    gen_src: DomainGenerator,
    gen_tgt: DomainGenerator,
    disc_src: PatchDiscriminator,
    disc_tgt: PatchDiscriminator,
    content_disc: ContentDiscriminator,
}

impl DrstBundle {
    pub fn new(cfg: DrstNetConfig, seed: u64, device: &Device) -> Result<Self> {
        let mut bank = ParamBank::new(seed, DType::F32, device.clone());
        let shared_in = cfg.shared_block_in_channels();
        let shared =
            SharedContentBlock::create(&mut bank, SHARED_LAYER_KEY, shared_in, cfg.content_channels)?;
        let content_enc_src = ContentEncoderNet::new(&mut bank, KEY_CONTENT_ENC_SRC, &shared, &cfg)?;
        let content_enc_tgt = ContentEncoderNet::new(&mut bank, KEY_CONTENT_ENC_TGT, &shared, &cfg)?;
        let style_enc_src = StyleEncoderNet::new(&mut bank, KEY_STYLE_ENC_SRC, &cfg)?;
        let style_enc_tgt = StyleEncoderNet::new(&mut bank, KEY_STYLE_ENC_TGT, &cfg)?;
        let gen_src = DomainGenerator {
            net: GeneratorNet::new(&mut bank, KEY_GEN_SRC, &cfg)?,
            domain: DomainTag::Source,
        };
        let gen_tgt = DomainGenerator {
            net: GeneratorNet::new(&mut bank, KEY_GEN_TGT, &cfg)?,
            domain: DomainTag::Target,
        };
        let disc_src = PatchDiscriminator::new(&mut bank, KEY_DISC_SRC, &cfg)?;
        let disc_tgt = PatchDiscriminator::new(&mut bank, KEY_DISC_TGT, &cfg)?;
        let content_disc = ContentDiscriminator::new(&mut bank, KEY_CONTENT_DISC, &cfg)?;
        Ok(Self {
            cfg,
            seed,
            bank,
            content_enc_src,
            content_enc_tgt,
            style_enc_src,
            style_enc_tgt,
            gen_src,
            gen_tgt,
            disc_src,
            disc_tgt,
            content_disc,
        })
    }

    pub fn config(&self) -> &DrstNetConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &ParamBank {
        &self.bank
    }

    pub fn device(&self) -> &Device {
        self.bank.device()
    }

    /// Per-image realness score for images claimed to belong to `domain`.
    pub fn discriminate(&self, domain: DomainTag, img: &ImageBatch) -> Result<Tensor> {
        let d = match domain {
            DomainTag::Source => &self.disc_src,
            DomainTag::Target => &self.disc_tgt,
        };
        d.forward(img.pixels())
    }

    /// Content-discriminator score per image (class 1 = target content).
    pub fn discriminate_content(&self, content: &ContentMap) -> Result<Tensor> {
        self.content_disc.forward(content.features())
    }

    /// Fresh optimizers over the two update groups.
    pub fn optimizers(&self, cfg: AdamCfg) -> Result<DrstOptimizers> {
        Ok(DrstOptimizers {
            enc_gen: Adam::new(self.bank.subset(&ENC_GEN_PREFIXES), cfg)?,
            disc: Adam::new(self.bank.subset(&DISC_PREFIXES), cfg)?,
        })
    }

    /// The parameters reachable through one encoder's last layer; used to
    /// check the weight-sharing invariant.
    pub fn last_layer_params(&self, domain: DomainTag) -> Vec<Tensor> {
        match domain {
            DomainTag::Source => self.content_enc_src.last_layer_params(),
            DomainTag::Target => self.content_enc_tgt.last_layer_params(),
        }
    }

    /// Raw little-endian bytes of the shared block as seen through each
    /// encoder, for bit-identity assertions.
    pub fn last_layer_bytes(&self, domain: DomainTag) -> Result<Vec<u8>> {
        let mut bytes = Vec::new();
        for t in self.last_layer_params(domain) {
            for v in t.flatten_all()?.to_vec1::<f32>()? {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(bytes)
    }

    /// Writes all parameters (and optimizer state when given) to one archive.
    pub fn save(
        &self,
        path: &Path,
        opts: Option<&DrstOptimizers>,
        completed_epochs: usize,
    ) -> Result<()> {
        let mut tensors = self.bank.value_tensors()?;
        if let Some(o) = opts {
            tensors.extend(o.enc_gen.state_tensors("optim.enc_gen")?);
            tensors.extend(o.disc.state_tensors("optim.disc")?);
        }
        let meta = CheckpointMeta {
            stage: "drst".to_string(),
            completed_epochs,
            seed: self.seed,
            drst: Some(self.cfg),
            seg: None,
            shared_layer_key: Some(SHARED_LAYER_KEY.to_string()),
        };
        save_checkpoint(path, &tensors, &meta)
    }

    /// Rebuilds a bundle from [`DrstBundle::save`] output. Returns the
    /// bundle, the raw tensor map (for optimizer state) and the metadata.
    pub fn load(
        path: &Path,
        device: &Device,
    ) -> Result<(Self, std::collections::HashMap<String, Tensor>, CheckpointMeta)> {
        let (tensors, meta) = load_checkpoint(path, device)?;
        let cfg = meta
            .drst
            .ok_or_else(|| Error::Checkpoint("checkpoint has no translation config".into()))?;
        let bundle = DrstBundle::new(cfg, meta.seed, device)?;
        bundle.bank.load_values(&tensors)?;
        Ok((bundle, tensors, meta))
    }
}

impl Translator for DrstBundle {
    fn content_encoder(&self, domain: DomainTag) -> &dyn ContentEncode {
        match domain {
            DomainTag::Source => &self.content_enc_src,
            DomainTag::Target => &self.content_enc_tgt,
        }
    }

    fn style_encoder(&self, domain: DomainTag) -> &dyn StyleEncode {
        match domain {
            DomainTag::Source => &self.style_enc_src,
            DomainTag::Target => &self.style_enc_tgt,
        }
    }

    fn generator(&self, domain: DomainTag) -> &dyn Generate {
        match domain {
            DomainTag::Source => &self.gen_src,
            DomainTag::Target => &self.gen_tgt,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::drst::translate::translate_step1;
    use candle_core::Tensor;

    fn small_cfg() -> DrstNetConfig {
        DrstNetConfig {
            base_channels: 4,
            content_channels: 8,
            disc_base_channels: 4,
            ..Default::default()
        }
    }

    fn batch(value: f32, n: usize, side: usize, domain: DomainTag) -> ImageBatch {
        let t = Tensor::full(value, (n, 1, side, side), &Device::Cpu).unwrap();
        ImageBatch::from_pixels(t, domain).unwrap()
    }

    #[test]
    fn bundle_translation_preserves_shape_and_domain() {
        let bundle = DrstBundle::new(small_cfg(), 7, &Device::Cpu).unwrap();
        let x = batch(0.3, 2, 32, DomainTag::Source);
        let y = batch(0.7, 2, 32, DomainTag::Target);
        let r = translate_step1(&bundle, &x, &y).unwrap();
        let xh = r.x_hat().unwrap();
        assert_eq!(xh.domain(), DomainTag::Source);
        assert_eq!(xh.pixels().dims(), x.pixels().dims());
        assert_eq!(r.y_hat().unwrap().domain(), DomainTag::Target);
    }

    #[test]
    fn fresh_bundles_with_same_seed_are_identical() {
        let a = DrstBundle::new(small_cfg(), 11, &Device::Cpu).unwrap();
        let b = DrstBundle::new(small_cfg(), 11, &Device::Cpu).unwrap();
        assert_eq!(
            a.last_layer_bytes(DomainTag::Source).unwrap(),
            b.last_layer_bytes(DomainTag::Source).unwrap()
        );
    }

    #[test]
    fn shared_layer_is_same_storage_across_encoders() {
        let bundle = DrstBundle::new(small_cfg(), 5, &Device::Cpu).unwrap();
        assert_eq!(
            bundle.last_layer_bytes(DomainTag::Source).unwrap(),
            bundle.last_layer_bytes(DomainTag::Target).unwrap()
        );
        // Mutating the canonical variable is visible through both.
        let var = bundle.bank().get(&format!("{SHARED_LAYER_KEY}.conv.weight")).unwrap();
        var.set(&var.as_tensor().affine(0.0, 1.0).unwrap()).unwrap();
        assert_eq!(
            bundle.last_layer_bytes(DomainTag::Source).unwrap(),
            bundle.last_layer_bytes(DomainTag::Target).unwrap()
        );
    }

    #[test]
    fn optimizer_groups_partition_the_bank() {
        let bundle = DrstBundle::new(small_cfg(), 5, &Device::Cpu).unwrap();
        let opts = bundle.optimizers(AdamCfg::default()).unwrap();
        let n_enc_gen = opts.enc_gen.param_names().len();
        let n_disc = opts.disc.param_names().len();
        assert_eq!(n_enc_gen + n_disc, bundle.bank().len());
        assert!(opts.enc_gen.param_names().iter().any(|n| n.starts_with(SHARED_LAYER_KEY)));
        assert!(!opts.disc.param_names().iter().any(|n| n.starts_with(SHARED_LAYER_KEY)));
    }
}
