use candle_core::{Tensor, Var};

use crate::error::Result;
use crate::nn::{Init, ParamBank};

#[derive(Clone, Copy, Debug)]
pub struct Conv2dCfg {
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
}

impl Conv2dCfg {
    pub fn k3s1() -> Self {
        Self { kernel: 3, stride: 1, padding: 1 }
    }
    pub fn k3s2() -> Self {
        Self { kernel: 3, stride: 2, padding: 1 }
    }
    pub fn k4s2() -> Self {
        Self { kernel: 4, stride: 2, padding: 1 }
    }
    pub fn k4s1() -> Self {
        Self { kernel: 4, stride: 1, padding: 1 }
    }
    pub fn k1s1() -> Self {
        Self { kernel: 1, stride: 1, padding: 0 }
    }
}

/// 2-D convolution with bias.
pub struct Conv2d {
    weight: Var,
    bias: Var,
    cfg: Conv2dCfg,
    out_channels: usize,
}

impl Conv2d {
    pub fn new(
        bank: &mut ParamBank,
        name: &str,
        in_c: usize,
        out_c: usize,
        cfg: Conv2dCfg,
    ) -> Result<Self> {
        let fan_in = in_c * cfg.kernel * cfg.kernel;
        let weight = bank.var(
            &format!("{name}.weight"),
            (out_c, in_c, cfg.kernel, cfg.kernel),
            Init::KaimingNormal { fan_in },
        )?;
        let bias = bank.var(&format!("{name}.bias"), (out_c,), Init::Zeros)?;
        Ok(Self { weight, bias, cfg, out_channels: out_c })
    }

    /// Builds the layer around pre-existing variables; used for the block
    /// whose parameters both content encoders share.
    pub fn from_vars(weight: Var, bias: Var, cfg: Conv2dCfg) -> Self {
        let out_channels = weight.dims()[0];
        Self { weight, bias, cfg, out_channels }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.conv2d(self.weight.as_tensor(), self.cfg.padding, self.cfg.stride, 1, 1)?;
        let b = self.bias.as_tensor().reshape((1, self.out_channels, 1, 1))?;
        Ok(y.broadcast_add(&b)?)
    }

    pub fn vars(&self) -> (Var, Var) {
        (self.weight.clone(), self.bias.clone())
    }
}

/// Fully connected layer, weight shape `[out, in]`.
pub struct Linear {
    weight: Var,
    bias: Var,
}

impl Linear {
    pub fn new(bank: &mut ParamBank, name: &str, in_d: usize, out_d: usize) -> Result<Self> {
        let weight = bank.var(
            &format!("{name}.weight"),
            (out_d, in_d),
            Init::KaimingNormal { fan_in: in_d },
        )?;
        let bias = bank.var(&format!("{name}.bias"), (out_d,), Init::Zeros)?;
        Ok(Self { weight, bias })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let y = x.matmul(&self.weight.as_tensor().t()?)?;
        Ok(y.broadcast_add(self.bias.as_tensor())?)
    }
}

pub(crate) const NORM_EPS: f64 = 1e-5;

/// Per-channel spatial mean and std over `[H, W]`, shapes `[N, C, 1, 1]`.
pub fn instance_stats(x: &Tensor) -> Result<(Tensor, Tensor)> {
    let mean = x.mean_keepdim(3)?.mean_keepdim(2)?;
    let centered = x.broadcast_sub(&mean)?;
    let var = centered.sqr()?.mean_keepdim(3)?.mean_keepdim(2)?;
    let std = (var + NORM_EPS)?.sqrt()?;
    Ok((mean, std))
}

/// Instance normalization with learned per-channel affine parameters.
pub struct InstanceNorm {
    gamma: Var,
    beta: Var,
    channels: usize,
}

impl InstanceNorm {
    pub fn new(bank: &mut ParamBank, name: &str, channels: usize) -> Result<Self> {
        let gamma = bank.var(&format!("{name}.gamma"), (channels,), Init::Ones)?;
        let beta = bank.var(&format!("{name}.beta"), (channels,), Init::Zeros)?;
        Ok(Self { gamma, beta, channels })
    }

    pub fn from_vars(gamma: Var, beta: Var) -> Self {
        let channels = gamma.dims()[0];
        Self { gamma, beta, channels }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (mean, std) = instance_stats(x)?;
        let xn = x.broadcast_sub(&mean)?.broadcast_div(&std)?;
        let g = self.gamma.as_tensor().reshape((1, self.channels, 1, 1))?;
        let b = self.beta.as_tensor().reshape((1, self.channels, 1, 1))?;
        Ok(xn.broadcast_mul(&g)?.broadcast_add(&b)?)
    }

    pub fn vars(&self) -> (Var, Var) {
        (self.gamma.clone(), self.beta.clone())
    }
}

/// Adaptive instance normalization: normalizes per channel, then applies a
/// style-conditioned affine transform. `scale` and `shift` have shape `[N, C]`.
pub fn adain(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
    let (n, c) = (x.dims()[0], x.dims()[1]);
    let (mean, std) = instance_stats(x)?;
    let xn = x.broadcast_sub(&mean)?.broadcast_div(&std)?;
    let scale = (scale.reshape((n, c, 1, 1))? + 1.0)?;
    let shift = shift.reshape((n, c, 1, 1))?;
    Ok(xn.broadcast_mul(&scale)?.broadcast_add(&shift)?)
}

/// Nearest-neighbor 2x upsampling.
pub fn upsample2x(x: &Tensor) -> Result<Tensor> {
    let (h, w) = (x.dims()[2], x.dims()[3]);
    Ok(x.upsample_nearest2d(2 * h, 2 * w)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    #[test]
    fn conv_output_shape() {
        let mut bank = ParamBank::new(1, DType::F32, Device::Cpu);
        let conv = Conv2d::new(&mut bank, "c", 1, 8, Conv2dCfg::k3s2()).unwrap();
        let x = Tensor::zeros((2, 1, 16, 16), DType::F32, &Device::Cpu).unwrap();
        let y = conv.forward(&x).unwrap();
        assert_eq!(y.dims(), &[2, 8, 8, 8]);
    }

    #[test]
    fn instance_norm_zero_mean_unit_std() {
        let mut bank = ParamBank::new(1, DType::F32, Device::Cpu);
        let norm = InstanceNorm::new(&mut bank, "n", 2).unwrap();
        let x = Tensor::rand(0f32, 4f32, (1, 2, 8, 8), &Device::Cpu).unwrap();
        let y = norm.forward(&x).unwrap();
        let (mean, std) = instance_stats(&y).unwrap();
        let m = mean.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let s = std.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for v in m {
            assert!(v.abs() < 1e-5, "mean {v}");
        }
        for v in s {
            assert!((v - 1.0).abs() < 1e-3, "std {v}");
        }
    }

    #[test]
    fn adain_applies_style_affine() {
        let x = Tensor::rand(0f32, 1f32, (1, 1, 4, 4), &Device::Cpu).unwrap();
        let scale = Tensor::full(0.5f32, (1, 1), &Device::Cpu).unwrap();
        let shift = Tensor::full(2.0f32, (1, 1), &Device::Cpu).unwrap();
        let y = adain(&x, &scale, &shift).unwrap();
        let (mean, std) = instance_stats(&y).unwrap();
        let m = mean.flatten_all().unwrap().to_vec1::<f32>().unwrap()[0];
        let s = std.flatten_all().unwrap().to_vec1::<f32>().unwrap()[0];
        assert!((m - 2.0).abs() < 1e-4, "mean {m}");
        assert!((s - 1.5).abs() < 1e-2, "std {s}");
    }

    #[test]
    fn upsample_doubles_spatial_size() {
        let x = Tensor::from_vec(vec![1f32, 2., 3., 4.], (1, 1, 2, 2), &Device::Cpu).unwrap();
        let y = upsample2x(&x).unwrap();
        assert_eq!(y.dims(), &[1, 1, 4, 4]);
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[1], 1.0);
        assert_eq!(v[4], 1.0);
    }
}
