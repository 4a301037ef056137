//! Network architectures for the style-transfer stage: content/style
//! encoders, style-conditioned generators and the three discriminators.

use candle_core::Tensor;
use candle_nn::ops::{leaky_relu, sigmoid};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{adain, upsample2x, Conv2d, Conv2dCfg, InstanceNorm, Linear, ParamBank};

/// Architecture knobs. Defaults target the desk-scale phantom task; widths
/// scale up for full-resolution runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DrstNetConfig {
    pub in_channels: usize,
    pub base_channels: usize,
    pub content_channels: usize,
    /// Number of stride-2 stages in the content encoder (downsampling
    /// factor is `2^downsample_stages`).
    pub downsample_stages: usize,
    pub style_dim: usize,
    pub gen_res_blocks: usize,
    pub disc_base_channels: usize,
}

impl Default for DrstNetConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            base_channels: 16,
            content_channels: 64,
            downsample_stages: 3,
            style_dim: 8,
            gen_res_blocks: 2,
            disc_base_channels: 16,
        }
    }
}

impl DrstNetConfig {
    /// Spatial downsampling factor between input images and content maps.
    pub fn content_factor(&self) -> usize {
        1 << self.downsample_stages
    }

    /// Input width of the shared final content-encoder block.
    pub fn shared_block_in_channels(&self) -> usize {
        self.stage_channels().last().expect("at least one stage").0
    }

    fn stage_channels(&self) -> Vec<(usize, usize)> {
        // (in, out) for each stride-2 stage after the stem; the final pair
        // is the shared block.
        let mut chans = Vec::new();
        let mut c = self.base_channels;
        for _ in 1..self.downsample_stages {
            let next = (c * 2).min(self.content_channels);
            chans.push((c, next));
            c = next;
        }
        chans.push((c, self.content_channels));
        chans
    }
}

struct ConvInBlock {
    conv: Conv2d,
    norm: InstanceNorm,
}

impl ConvInBlock {
    fn new(bank: &mut ParamBank, name: &str, in_c: usize, out_c: usize, cfg: Conv2dCfg) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(bank, &format!("{name}.conv"), in_c, out_c, cfg)?,
            norm: InstanceNorm::new(bank, &format!("{name}.norm"), out_c)?,
        })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.relu()?)
    }
}

/// The final content-encoder block; its parameters are created once and the
/// same variables are handed to both domain encoders so the two last layers
/// are the same storage at all times.
pub struct SharedContentBlock {
    conv: Conv2d,
    norm: InstanceNorm,
}

impl SharedContentBlock {
    pub fn create(bank: &mut ParamBank, key: &str, in_c: usize, out_c: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(bank, &format!("{key}.conv"), in_c, out_c, Conv2dCfg::k3s2())?,
            norm: InstanceNorm::new(bank, &format!("{key}.norm"), out_c)?,
        })
    }

    fn alias(&self) -> Self {
        let (w, b) = self.conv.vars();
        let (g, be) = self.norm.vars();
        Self {
            conv: Conv2d::from_vars(w, b, Conv2dCfg::k3s2()),
            norm: InstanceNorm::from_vars(g, be),
        }
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.norm.forward(&self.conv.forward(x)?)?.relu()?)
    }

    /// The shared parameter tensors (conv weight/bias, norm gamma/beta).
    pub fn param_tensors(&self) -> Vec<Tensor> {
        let (w, b) = self.conv.vars();
        let (g, be) = self.norm.vars();
        vec![
            w.as_detached_tensor(),
            b.as_detached_tensor(),
            g.as_detached_tensor(),
            be.as_detached_tensor(),
        ]
    }
}

/// Content encoder: stem + stride-2 blocks ending in the shared block.
pub struct ContentEncoderNet {
    stem: ConvInBlock,
    stages: Vec<ConvInBlock>,
    shared: SharedContentBlock,
    factor: usize,
}

impl ContentEncoderNet {
    pub fn new(
        bank: &mut ParamBank,
        prefix: &str,
        shared: &SharedContentBlock,
        cfg: &DrstNetConfig,
    ) -> Result<Self> {
        let stem = ConvInBlock::new(
            bank,
            &format!("{prefix}.block1"),
            cfg.in_channels,
            cfg.base_channels,
            Conv2dCfg::k3s1(),
        )?;
        let chans = cfg.stage_channels();
        let mut stages = Vec::new();
        for (i, &(ci, co)) in chans.iter().take(chans.len() - 1).enumerate() {
            stages.push(ConvInBlock::new(
                bank,
                &format!("{prefix}.block{}", i + 2),
                ci,
                co,
                Conv2dCfg::k3s2(),
            )?);
        }
        Ok(Self { stem, stages, shared: shared.alias(), factor: cfg.content_factor() })
    }

    pub fn forward(&self, img: &Tensor) -> Result<Tensor> {
        let side = img.dims()[2];
        if side % self.factor != 0 {
            return Err(Error::shape(format!(
                "image side {side} is not divisible by the content factor {}",
                self.factor
            )));
        }
        let mut h = self.stem.forward(img)?;
        for stage in &self.stages {
            h = stage.forward(&h)?;
        }
        self.shared.forward(&h)
    }

    /// Parameters reachable through this encoder's last layer.
    pub fn last_layer_params(&self) -> Vec<Tensor> {
        self.shared.param_tensors()
    }
}

/// Style encoder: plain conv stack (no normalization, so image statistics
/// survive) plus global average pooling into a flat code.
pub struct StyleEncoderNet {
    convs: Vec<Conv2d>,
    fc: Linear,
}

impl StyleEncoderNet {
    pub fn new(bank: &mut ParamBank, prefix: &str, cfg: &DrstNetConfig) -> Result<Self> {
        let b = cfg.base_channels;
        let plan = [(cfg.in_channels, b), (b, 2 * b), (2 * b, 4 * b)];
        let mut convs = Vec::new();
        for (i, &(ci, co)) in plan.iter().enumerate() {
            convs.push(Conv2d::new(
                bank,
                &format!("{prefix}.conv{}", i + 1),
                ci,
                co,
                Conv2dCfg::k3s2(),
            )?);
        }
        let fc = Linear::new(bank, &format!("{prefix}.fc"), 4 * b, cfg.style_dim)?;
        Ok(Self { convs, fc })
    }

    pub fn forward(&self, img: &Tensor) -> Result<Tensor> {
        let mut h = img.clone();
        for conv in &self.convs {
            h = conv.forward(&h)?.relu()?;
        }
        let pooled = h.mean(3)?.mean(2)?; // [N, C]
        self.fc.forward(&pooled)
    }
}

struct AdainResBlock {
    conv1: Conv2d,
    conv2: Conv2d,
}

impl AdainResBlock {
    fn new(bank: &mut ParamBank, name: &str, channels: usize) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(bank, &format!("{name}.conv1"), channels, channels, Conv2dCfg::k3s1())?,
            conv2: Conv2d::new(bank, &format!("{name}.conv2"), channels, channels, Conv2dCfg::k3s1())?,
        })
    }

    fn forward(&self, x: &Tensor, params: &[(Tensor, Tensor)]) -> Result<Tensor> {
        let h = adain(&self.conv1.forward(x)?, &params[0].0, &params[0].1)?.relu()?;
        let h = adain(&self.conv2.forward(&h)?, &params[1].0, &params[1].1)?;
        Ok((x + h)?)
    }
}

/// Style-conditioned generator: residual blocks modulated by adaptive
/// instance normalization, then nearest-upsample + conv stages back to the
/// input resolution, with a sigmoid head keeping pixels in `(0, 1)`.
pub struct GeneratorNet {
    mlp_fc1: Linear,
    mlp_fc2: Linear,
    res_blocks: Vec<AdainResBlock>,
    up_blocks: Vec<ConvInBlock>,
    out_conv: Conv2d,
    content_channels: usize,
}

impl GeneratorNet {
    pub fn new(bank: &mut ParamBank, prefix: &str, cfg: &DrstNetConfig) -> Result<Self> {
        let c = cfg.content_channels;
        let n_adain = cfg.gen_res_blocks * 2;
        let mlp_fc1 = Linear::new(bank, &format!("{prefix}.mlp.fc1"), cfg.style_dim, c)?;
        let mlp_fc2 = Linear::new(bank, &format!("{prefix}.mlp.fc2"), c, n_adain * 2 * c)?;
        let mut res_blocks = Vec::new();
        for r in 0..cfg.gen_res_blocks {
            res_blocks.push(AdainResBlock::new(bank, &format!("{prefix}.res{r}"), c)?);
        }
        let mut up_blocks = Vec::new();
        let mut cur = c;
        for u in 0..cfg.downsample_stages {
            let next = (cur / 2).max(cfg.base_channels.min(cur));
            up_blocks.push(ConvInBlock::new(
                bank,
                &format!("{prefix}.up{u}"),
                cur,
                next,
                Conv2dCfg::k3s1(),
            )?);
            cur = next;
        }
        let out_conv =
            Conv2d::new(bank, &format!("{prefix}.out.conv"), cur, cfg.in_channels, Conv2dCfg::k3s1())?;
        Ok(Self { mlp_fc1, mlp_fc2, res_blocks, up_blocks, out_conv, content_channels: c })
    }

    fn adain_params(&self, style: &Tensor) -> Result<Vec<(Tensor, Tensor)>> {
        let h = self.mlp_fc1.forward(style)?.relu()?;
        let all = self.mlp_fc2.forward(&h)?; // [N, n_adain * 2 * C]
        let c = self.content_channels;
        let n_adain = all.dims()[1] / (2 * c);
        let mut out = Vec::with_capacity(n_adain);
        for i in 0..n_adain {
            let scale = all.narrow(1, i * 2 * c, c)?;
            let shift = all.narrow(1, i * 2 * c + c, c)?;
            out.push((scale, shift));
        }
        Ok(out)
    }

    pub fn forward(&self, content: &Tensor, style: &Tensor) -> Result<Tensor> {
        if content.dims()[0] != style.dims()[0] {
            return Err(Error::shape(format!(
                "content batch {} does not match style batch {}",
                content.dims()[0],
                style.dims()[0]
            )));
        }
        let params = self.adain_params(style)?;
        let mut h = content.clone();
        for (r, block) in self.res_blocks.iter().enumerate() {
            h = block.forward(&h, &params[r * 2..r * 2 + 2])?;
        }
        for up in &self.up_blocks {
            h = up.forward(&upsample2x(&h)?)?;
        }
        let logits = self.out_conv.forward(&h)?;
        Ok(sigmoid(&logits)?)
    }
}

/// Patch discriminator; per-patch probabilities are averaged into one score
/// per image.
pub struct PatchDiscriminator {
    convs: Vec<Conv2d>,
    norms: Vec<Option<InstanceNorm>>,
    head: Conv2d,
}

impl PatchDiscriminator {
    pub fn new(bank: &mut ParamBank, prefix: &str, cfg: &DrstNetConfig) -> Result<Self> {
        let b = cfg.disc_base_channels;
        // 70x70 receptive field: three stride-2 conv4 layers, one stride-1
        // conv4 layer, then the conv4 head.
        let plan = [
            (cfg.in_channels, b, Conv2dCfg::k4s2(), false),
            (b, 2 * b, Conv2dCfg::k4s2(), true),
            (2 * b, 4 * b, Conv2dCfg::k4s2(), true),
            (4 * b, 4 * b, Conv2dCfg::k4s1(), true),
        ];
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for (i, &(ci, co, cc, normed)) in plan.iter().enumerate() {
            convs.push(Conv2d::new(bank, &format!("{prefix}.conv{}", i + 1), ci, co, cc)?);
            norms.push(if normed {
                Some(InstanceNorm::new(bank, &format!("{prefix}.norm{}", i + 1), co)?)
            } else {
                None
            });
        }
        let head = Conv2d::new(bank, &format!("{prefix}.head"), 4 * b, 1, Conv2dCfg::k4s1())?;
        Ok(Self { convs, norms, head })
    }

    /// Per-image scores in `(0, 1)`, shape `[N]`.
    pub fn forward(&self, img: &Tensor) -> Result<Tensor> {
        let mut h = img.clone();
        for (conv, norm) in self.convs.iter().zip(self.norms.iter()) {
            h = conv.forward(&h)?;
            if let Some(n) = norm {
                h = n.forward(&h)?;
            }
            h = leaky_relu(&h, 0.2)?;
        }
        let patches = sigmoid(&self.head.forward(&h)?)?;
        Ok(patches.mean(3)?.mean(2)?.mean(1)?)
    }
}

/// Small classifier over content maps; one score per image in `(0, 1)`.
pub struct ContentDiscriminator {
    conv1: Conv2d,
    conv2: Conv2d,
    fc: Linear,
}

impl ContentDiscriminator {
    pub fn new(bank: &mut ParamBank, prefix: &str, cfg: &DrstNetConfig) -> Result<Self> {
        let c = cfg.content_channels;
        Ok(Self {
            conv1: Conv2d::new(bank, &format!("{prefix}.conv1"), c, c, Conv2dCfg::k3s2())?,
            conv2: Conv2d::new(bank, &format!("{prefix}.conv2"), c, c, Conv2dCfg::k3s2())?,
            fc: Linear::new(bank, &format!("{prefix}.fc"), c, 1)?,
        })
    }

    pub fn forward(&self, content: &Tensor) -> Result<Tensor> {
        let h = leaky_relu(&self.conv1.forward(content)?, 0.2)?;
        let h = leaky_relu(&self.conv2.forward(&h)?, 0.2)?;
        let pooled = h.mean(3)?.mean(2)?;
        let logit = self.fc.forward(&pooled)?;
        Ok(sigmoid(&logit)?.squeeze(1)?)
    }
}
