//! Shared helpers for integration tests: finite-difference gradient
//! checking and small phantom fixtures.

#![allow(dead_code)]

use candle_core::{Device, Tensor, Var};
use dcda_core::config::RunConfig;
use dcda_core::data::{generate_phantoms, PhantomSpec};
use dcda_core::{ccl, drst};
use std::path::Path;

/// Central finite-difference step for f64 checks. Small enough to keep
/// probability maps inside their sum-to-one tolerance.
pub const FD_STEP: f64 = 4e-6;
/// Maximum relative error between analytic and numeric gradients.
pub const GRAD_RTOL: f64 = 1e-3;
/// Absolute floor below which both gradients count as zero.
pub const GRAD_ATOL: f64 = 1e-7;

/// Checks `loss`'s analytic gradient w.r.t. a single f64 input against
/// central finite differences, element by element.
pub fn grad_check(
    name: &str,
    x0: &[f64],
    shape: &[usize],
    loss: impl Fn(&Tensor) -> dcda_core::Result<Tensor>,
) {
    let dev = Device::Cpu;
    let var = Var::from_vec(x0.to_vec(), shape, &dev).unwrap();
    let out = loss(var.as_tensor()).unwrap();
    let grads = out.backward().unwrap();
    let analytic = grads
        .get(var.as_tensor())
        .unwrap_or_else(|| panic!("{name}: no gradient reached the input"))
        .flatten_all()
        .unwrap()
        .to_vec1::<f64>()
        .unwrap();

    let eval = |xs: &[f64]| -> f64 {
        let t = Tensor::from_vec(xs.to_vec(), shape, &dev).unwrap();
        loss(&t)
            .unwrap()
            .to_dtype(candle_core::DType::F64)
            .unwrap()
            .to_scalar::<f64>()
            .unwrap()
    };

    for i in 0..x0.len() {
        let mut plus = x0.to_vec();
        plus[i] += FD_STEP;
        let mut minus = x0.to_vec();
        minus[i] -= FD_STEP;
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
        let a = analytic[i];
        let denom = a.abs().max(fd.abs());
        if denom < GRAD_ATOL {
            continue;
        }
        let rel = (a - fd).abs() / denom;
        assert!(
            rel <= GRAD_RTOL,
            "{name}[{i}]: analytic {a} vs numeric {fd} (rel {rel:.3e})"
        );
    }
}

/// Builds a two-class f64 probability map from vessel probabilities.
pub fn prob_map_f64(vessel: &[f64], n: usize, side: usize) -> dcda_core::ProbMap {
    let v = Tensor::from_vec(vessel.to_vec(), (n, 1, side, side), &Device::Cpu).unwrap();
    let bg = v.affine(-1.0, 1.0).unwrap();
    dcda_core::ProbMap::new(Tensor::cat(&[&bg, &v], 1).unwrap()).unwrap()
}

/// Small deterministic phantom tree for stage tests.
pub fn small_phantoms(dir: &Path, seed: u64, n: usize, size: usize, test: usize) {
    let spec = PhantomSpec {
        seed,
        image_size: size,
        n_per_domain: n,
        test_count: test,
        ..Default::default()
    };
    generate_phantoms(&spec, dir).unwrap();
}

/// Tiny-network run config against a phantom tree.
pub fn tiny_config(data_root: &Path, work: &Path, seed: u64, size: usize, test: usize) -> RunConfig {
    RunConfig {
        seed,
        image_size: size,
        batch_size: 4,
        split_seed: seed,
        test_count: test,
        data_root: data_root.to_path_buf(),
        checkpoint_dir: work.join("ckpt"),
        output_dir: work.join("out"),
        drst_net: drst::DrstNetConfig {
            base_channels: 4,
            content_channels: 8,
            disc_base_channels: 4,
            ..Default::default()
        },
        seg_net: ccl::SegNetConfig { base_channels: 4, encoder_depth: 2, ..Default::default() },
        ..Default::default()
    }
}
