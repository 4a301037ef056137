//! Shared domain types and tensor-shape contracts.
//!
//! Everything here is an immutable value object; operations are pure and the
//! types are safe to share between threads.

use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which of the two domains a batch belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DomainTag {
    Source,
    Target,
}

impl DomainTag {
    pub fn other(self) -> Self {
        match self {
            DomainTag::Source => DomainTag::Target,
            DomainTag::Target => DomainTag::Source,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DomainTag::Source => "source",
            DomainTag::Target => "target",
        }
    }
}

impl std::fmt::Display for DomainTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A batch of single-channel square images with values in `[0, 1]`.
///
/// Shape is `[N, 1, H, W]` with `H == W` and `N >= 1`. Construction
/// validates all invariants; see [`validate_batch`].
#[derive(Clone, Debug)]
pub struct ImageBatch {
    pixels: Tensor,
    domain: DomainTag,
    ids: Vec<String>,
}

/// Tolerance for the `[0, 1]` pixel-range check.
pub const PIXEL_RANGE_TOL: f64 = 1e-6;

fn check_pixels(pixels: &Tensor) -> Result<()> {
    let dims = pixels.dims();
    if dims.len() != 4 {
        return Err(Error::shape(format!(
            "image batch must have rank 4 [N, 1, H, W], got {dims:?}"
        )));
    }
    let (n, c, h, w) = (dims[0], dims[1], dims[2], dims[3]);
    if n < 1 {
        return Err(Error::shape("image batch must contain at least one image"));
    }
    if c != 1 {
        return Err(Error::shape(format!("expected 1 channel, got {c}")));
    }
    if h != w {
        return Err(Error::shape(format!("images must be square, got {h}x{w}")));
    }
    let values = pixels.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
    for &v in &values {
        if !v.is_finite() {
            return Err(Error::non_finite("image batch contains a non-finite pixel"));
        }
    }
    for &v in &values {
        if v < -PIXEL_RANGE_TOL || v > 1.0 + PIXEL_RANGE_TOL {
            return Err(Error::range(format!(
                "pixel value {v} outside [0, 1] beyond {PIXEL_RANGE_TOL}"
            )));
        }
    }
    Ok(())
}

impl ImageBatch {
    /// Wraps a `[N, 1, H, W]` tensor, validating every batch invariant.
    pub fn new(pixels: Tensor, domain: DomainTag, ids: Vec<String>) -> Result<Self> {
        check_pixels(&pixels)?;
        let n = pixels.dim(0)?;
        if ids.len() != n {
            return Err(Error::shape(format!(
                "expected {n} sample ids, got {}",
                ids.len()
            )));
        }
        Ok(Self { pixels, domain, ids })
    }

    /// Like [`ImageBatch::new`] but with synthetic ids `0..N`.
    pub fn from_pixels(pixels: Tensor, domain: DomainTag) -> Result<Self> {
        let n = if pixels.dims().len() == 4 { pixels.dim(0)? } else { 0 };
        let ids = (0..n).map(|i| i.to_string()).collect();
        Self::new(pixels, domain, ids)
    }

    pub fn pixels(&self) -> &Tensor {
        &self.pixels
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Side length (images are square).
    pub fn side(&self) -> usize {
        self.pixels.dims()[2]
    }

    /// Same pixels, different domain tag. Used when a generator emits
    /// images belonging to the other domain.
    pub fn retagged(&self, domain: DomainTag) -> Self {
        Self { pixels: self.pixels.clone(), domain, ids: self.ids.clone() }
    }

    /// Same pixels with new sample ids.
    pub fn with_ids(&self, ids: Vec<String>) -> Result<Self> {
        if ids.len() != self.len() {
            return Err(Error::shape(format!(
                "expected {} ids, got {}",
                self.len(),
                ids.len()
            )));
        }
        Ok(Self { pixels: self.pixels.clone(), domain: self.domain, ids })
    }

    /// Detached copy: gradients stop at the pixels.
    pub fn detach(&self) -> Self {
        Self { pixels: self.pixels.detach(), domain: self.domain, ids: self.ids.clone() }
    }

    /// Concatenates batches along N. All batches must share domain and size.
    pub fn concat(batches: &[ImageBatch]) -> Result<ImageBatch> {
        if batches.is_empty() {
            return Err(Error::shape("cannot concat zero batches"));
        }
        let domain = batches[0].domain;
        for b in batches {
            if b.domain != domain {
                return Err(Error::shape("cannot concat batches from different domains"));
            }
        }
        let tensors: Vec<&Tensor> = batches.iter().map(|b| &b.pixels).collect();
        let pixels = Tensor::cat(&tensors, 0)?;
        let ids = batches.iter().flat_map(|b| b.ids.iter().cloned()).collect();
        Ok(ImageBatch { pixels, domain, ids })
    }
}

/// Returns the batch unchanged if every invariant holds.
pub fn validate_batch(batch: ImageBatch) -> Result<ImageBatch> {
    check_pixels(batch.pixels())?;
    if batch.ids().len() != batch.pixels().dim(0)? {
        return Err(Error::shape("id count does not match batch size"));
    }
    Ok(batch)
}

/// Spatial content features extracted by a content encoder.
///
/// Shape `[N, C, H_c, W_c]` where the spatial dims divide the input size by
/// the encoder's fixed downsampling factor.
#[derive(Clone, Debug)]
pub struct ContentMap {
    features: Tensor,
    source_domain: DomainTag,
}

impl ContentMap {
    pub fn new(features: Tensor, source_domain: DomainTag) -> Result<Self> {
        if features.dims().len() != 4 {
            return Err(Error::shape(format!(
                "content map must have rank 4, got {:?}",
                features.dims()
            )));
        }
        Ok(Self { features, source_domain })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn source_domain(&self) -> DomainTag {
        self.source_domain
    }

    /// Detached copy: gradients stop at the features.
    pub fn detach(&self) -> Self {
        Self { features: self.features.detach(), source_domain: self.source_domain }
    }
}

/// Flat per-image style vector, shape `[N, d_s]`.
#[derive(Clone, Debug)]
pub struct StyleCode {
    code: Tensor,
    source_domain: DomainTag,
}

impl StyleCode {
    pub fn new(code: Tensor, source_domain: DomainTag) -> Result<Self> {
        if code.dims().len() != 2 {
            return Err(Error::shape(format!(
                "style code must have rank 2 [N, d_s], got {:?}",
                code.dims()
            )));
        }
        let vals = code.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("style code contains a non-finite value"));
        }
        Ok(Self { code, source_domain })
    }

    pub fn code(&self) -> &Tensor {
        &self.code
    }

    pub fn source_domain(&self) -> DomainTag {
        self.source_domain
    }

    pub fn dim(&self) -> usize {
        self.code.dims()[1]
    }
}

/// Binary ground-truth masks, shape `[N, H, W]`, stored as 0.0/1.0 floats.
#[derive(Clone, Debug)]
pub struct Mask {
    labels: Tensor,
}

impl Mask {
    pub fn new(labels: Tensor) -> Result<Self> {
        if labels.dims().len() != 3 {
            return Err(Error::shape(format!(
                "mask must have rank 3 [N, H, W], got {:?}",
                labels.dims()
            )));
        }
        let vals = labels.flatten_all()?.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
        if vals.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::range("mask values must be exactly 0 or 1"));
        }
        Ok(Self { labels })
    }

    /// Builds a single-image mask from a row-major boolean grid.
    pub fn from_grid(grid: &[bool], h: usize, w: usize, device: &candle_core::Device) -> Result<Self> {
        if grid.len() != h * w {
            return Err(Error::shape("grid length does not match dimensions"));
        }
        let data: Vec<f32> = grid.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        let labels = Tensor::from_vec(data, (1, h, w), device)?;
        Mask::new(labels)
    }

    pub fn labels(&self) -> &Tensor {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> (usize, usize) {
        let d = self.labels.dims();
        (d[1], d[2])
    }

    /// Row-major boolean view of image `i`.
    pub fn to_grid(&self, i: usize) -> Result<Vec<bool>> {
        let img = self.labels.get(i)?.flatten_all()?.to_dtype(candle_core::DType::F32)?;
        Ok(img.to_vec1::<f32>()?.into_iter().map(|v| v != 0.0).collect())
    }

    /// Fraction of positive pixels over the whole batch.
    pub fn positive_fraction(&self) -> Result<f64> {
        let total = self.labels.elem_count() as f64;
        let sum = self.labels.to_dtype(candle_core::DType::F64)?.sum_all()?.to_scalar::<f64>()?;
        Ok(sum / total)
    }
}

/// Number of segmentation classes: background and vessel.
pub const NUM_CLASSES: usize = 2;
/// Index of the vessel class inside a [`ProbMap`].
pub const VESSEL_CLASS: usize = 1;
/// Per-pixel probability vectors must sum to one within this tolerance.
pub const PROB_SUM_TOL: f64 = 1e-5;

/// Per-pixel class probabilities, shape `[N, K, H, W]` with `K == 2`.
///
/// Every pixel's probability vector sums to one. The sum-to-one check runs
/// on every construction in test builds (`debug_assertions`) and is always
/// available through [`ProbMap::validate`].
#[derive(Clone, Debug)]
pub struct ProbMap {
    probs: Tensor,
}

impl ProbMap {
    pub fn new(probs: Tensor) -> Result<Self> {
        let dims = probs.dims();
        if dims.len() != 4 || dims[1] != NUM_CLASSES {
            return Err(Error::shape(format!(
                "prob map must have shape [N, {NUM_CLASSES}, H, W], got {dims:?}"
            )));
        }
        let map = Self { probs };
        if cfg!(debug_assertions) {
            map.validate()?;
        }
        Ok(map)
    }

    /// Checks the sum-to-one and `[0, 1]` range invariants.
    pub fn validate(&self) -> Result<()> {
        let sums = self
            .probs
            .to_dtype(candle_core::DType::F64)?
            .sum(1)?
            .flatten_all()?
            .to_vec1::<f64>()?;
        for &s in &sums {
            if !s.is_finite() {
                return Err(Error::non_finite("prob map contains non-finite values"));
            }
            if (s - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::range(format!(
                    "per-pixel probabilities sum to {s}, expected 1 within {PROB_SUM_TOL}"
                )));
            }
        }
        let vals = self.probs.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
        for &v in &vals {
            if v < -PROB_SUM_TOL || v > 1.0 + PROB_SUM_TOL {
                return Err(Error::range(format!("probability {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    /// The vessel-class channel, shape `[N, H, W]`.
    pub fn vessel(&self) -> Result<Tensor> {
        Ok(self.probs.narrow(1, VESSEL_CLASS, 1)?.squeeze(1)?)
    }

    pub fn len(&self) -> usize {
        self.probs.dims()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spatial(&self) -> (usize, usize) {
        let d = self.probs.dims();
        (d[2], d[3])
    }

    /// Detached copy: gradients stop here. Used for teacher outputs.
    pub fn detach(&self) -> Self {
        Self { probs: self.probs.detach() }
    }
}

/// Softmax over the class axis so the [`ProbMap`] invariant holds.
///
/// Order-preserving per pixel: the argmax of the logits equals the argmax of
/// the probabilities.
pub fn normalize_probs(logits: &Tensor) -> Result<ProbMap> {
    let dims = logits.dims();
    if dims.len() != 4 {
        return Err(Error::shape(format!(
            "logits must have rank 4 [N, K, H, W], got {dims:?}"
        )));
    }
    let sum = logits.to_dtype(candle_core::DType::F64)?.sum_all()?.to_scalar::<f64>()?;
    if !sum.is_finite() {
        // A finite sum can mask paired infinities, so double-check elementwise.
        return Err(Error::non_finite("logits contain a non-finite value"));
    }
    let vals = logits.to_dtype(candle_core::DType::F64)?.flatten_all()?.to_vec1::<f64>()?;
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("logits contain a non-finite value"));
    }
    let probs = candle_nn::ops::softmax(logits, 1)?;
    ProbMap::new(probs)
}

/// Which stage of the three-stage schedule is active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stage {
    DrstPretrain,
    SourcePretrain,
    Joint,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::DrstPretrain => "drst",
            Stage::SourcePretrain => "source",
            Stage::Joint => "joint",
        }
    }

    fn rank(self) -> u8 {
        match self {
            Stage::DrstPretrain => 0,
            Stage::SourcePretrain => 1,
            Stage::Joint => 2,
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Active stage plus the 1-based epoch counter within it and the fixed
/// consistency starting flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainPhase {
    pub stage: Stage,
    pub epoch: usize,
    pub tau: usize,
}

impl TrainPhase {
    pub fn new(stage: Stage, epoch: usize, tau: usize) -> Self {
        Self { stage, epoch, tau }
    }

    /// Moves to a later stage, resetting the epoch counter. Stage
    /// transitions are monotone; going backwards is a state error.
    pub fn advance_to(&self, stage: Stage) -> Result<Self> {
        if stage.rank() < self.stage.rank() {
            return Err(Error::state(format!(
                "stage transition {} -> {} is not monotone",
                self.stage, stage
            )));
        }
        Ok(Self { stage, epoch: 1, tau: self.tau })
    }

    /// True once the consistency terms activate (joint stage, epoch past tau).
    pub fn consistency_active(&self) -> bool {
        self.stage == Stage::Joint && self.epoch > self.tau
    }
}

/// Named per-term loss scalars for one step or one epoch.
///
/// During the style-transfer stage `joint` is the weighted
/// encoder/generator objective; during the segmentation stages it is the
/// schedule-selected combination of segmentation and consistency terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub adv_x: f64,
    pub adv_y: f64,
    pub content_adv: f64,
    pub cyc: f64,
    pub seg_source: f64,
    pub seg_target: f64,
    pub ccl: f64,
    pub joint: f64,
    pub epoch: usize,
    pub phase: TrainPhase,
}

impl LossReport {
    pub fn zeroed(phase: TrainPhase) -> Self {
        Self {
            adv_x: 0.0,
            adv_y: 0.0,
            content_adv: 0.0,
            cyc: 0.0,
            seg_source: 0.0,
            seg_target: 0.0,
            ccl: 0.0,
            joint: 0.0,
            epoch: phase.epoch,
            phase,
        }
    }

    pub fn terms(&self) -> [(&'static str, f64); 8] {
        [
            ("adv_x", self.adv_x),
            ("adv_y", self.adv_y),
            ("content_adv", self.content_adv),
            ("cyc", self.cyc),
            ("seg_source", self.seg_source),
            ("seg_target", self.seg_target),
            ("ccl", self.ccl),
            ("joint", self.joint),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.terms() {
            if !v.is_finite() {
                return Err(Error::non_finite(format!("loss term {name} is {v}")));
            }
        }
        Ok(())
    }

    /// One machine-parseable log line.
    pub fn log_line(&self) -> String {
        let mut line = format!("stage={} epoch={}", self.phase.stage, self.epoch);
        for (name, v) in self.terms() {
            line.push_str(&format!(" {name}={v:.9}"));
        }
        line
    }

    /// Bitwise equality of all scalar terms; used by determinism checks.
    pub fn bits_eq(&self, other: &Self) -> bool {
        self.epoch == other.epoch
            && self.phase == other.phase
            && self
                .terms()
                .iter()
                .zip(other.terms().iter())
                .all(|((_, a), (_, b))| a.to_bits() == b.to_bits())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{DType, Device};

    fn dev() -> Device {
        Device::Cpu
    }

    #[test]
    fn valid_batch_passes_through() {
        let t = Tensor::full(0.5f32, (2, 1, 64, 64), &dev()).unwrap();
        let b = ImageBatch::from_pixels(t, DomainTag::Source).unwrap();
        let b = validate_batch(b).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.side(), 64);
    }

    #[test]
    fn nan_pixel_is_non_finite_error() {
        let mut data = vec![0.5f32; 64 * 64];
        data[17] = f32::NAN;
        let t = Tensor::from_vec(data, (1, 1, 64, 64), &dev()).unwrap();
        match ImageBatch::from_pixels(t, DomainTag::Source) {
            Err(Error::NonFinite(_)) => {}
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn non_square_batch_is_shape_error() {
        let t = Tensor::full(0.5f32, (1, 1, 64, 48), &dev()).unwrap();
        match ImageBatch::from_pixels(t, DomainTag::Source) {
            Err(Error::Shape(_)) => {}
            other => panic!("expected Shape, got {other:?}"),
        }
    }

    #[test]
    fn out_of_range_pixel_is_range_error() {
        let t = Tensor::full(1.5f32, (1, 1, 8, 8), &dev()).unwrap();
        match ImageBatch::from_pixels(t, DomainTag::Source) {
            Err(Error::Range(_)) => {}
            other => panic!("expected Range, got {other:?}"),
        }
    }

    #[test]
    fn rank_three_is_shape_error() {
        let t = Tensor::full(0.5f32, (1, 8, 8), &dev()).unwrap();
        assert!(matches!(
            ImageBatch::from_pixels(t, DomainTag::Source),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn zero_logits_normalize_to_half() {
        let logits = Tensor::zeros((1, 2, 4, 4), DType::F32, &dev()).unwrap();
        let pm = normalize_probs(&logits).unwrap();
        let v = pm.vessel().unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for p in v {
            assert!((p - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_matches_analytic_two_class_case() {
        // per-pixel logits (ln 9, 0) -> (0.9, 0.1)
        let ln9 = 9f32.ln();
        let data = vec![ln9, ln9, ln9, ln9, 0.0, 0.0, 0.0, 0.0];
        let logits = Tensor::from_vec(data, (1, 2, 2, 2), &dev()).unwrap();
        let pm = normalize_probs(&logits).unwrap();
        let flat = pm.probs().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for &p in &flat[0..4] {
            assert!((p - 0.9).abs() < 1e-6, "background prob {p}");
        }
        for &p in &flat[4..8] {
            assert!((p - 0.1).abs() < 1e-6, "vessel prob {p}");
        }
    }

    #[test]
    fn infinite_logits_rejected() {
        let data = vec![f32::INFINITY, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let logits = Tensor::from_vec(data, (1, 2, 2, 2), &dev()).unwrap();
        assert!(matches!(normalize_probs(&logits), Err(Error::NonFinite(_))));
    }

    #[test]
    fn softmax_invariant_to_per_pixel_logit_shift() {
        let logits = Tensor::from_vec(
            vec![0.3f32, -1.2, 0.8, 2.0, -0.5, 0.1, 0.0, 1.0],
            (1, 2, 2, 2),
            &dev(),
        )
        .unwrap();
        let shift = Tensor::from_vec(vec![5.0f32, -3.0, 100.0, 0.25], (1, 1, 2, 2), &dev()).unwrap();
        let shifted = logits.broadcast_add(&shift).unwrap();
        let a = normalize_probs(&logits).unwrap();
        let b = normalize_probs(&shifted).unwrap();
        let av = a.probs().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let bv = b.probs().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        for (x, y) in av.iter().zip(bv.iter()) {
            assert!((x - y).abs() <= 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn prob_map_rejects_unnormalized() {
        let t = Tensor::full(0.4f32, (1, 2, 2, 2), &dev()).unwrap();
        let r = ProbMap::new(t).and_then(|m| m.validate().map(|_| m));
        assert!(r.is_err());
    }

    #[test]
    fn stage_transitions_are_monotone() {
        let p = TrainPhase::new(Stage::SourcePretrain, 3, 0);
        assert!(p.advance_to(Stage::Joint).is_ok());
        assert!(matches!(p.advance_to(Stage::DrstPretrain), Err(Error::State(_))));
    }

    #[test]
    fn consistency_flag_respects_tau() {
        let mut p = TrainPhase::new(Stage::Joint, 5, 5);
        assert!(!p.consistency_active());
        p.epoch = 6;
        assert!(p.consistency_active());
        let sp = TrainPhase::new(Stage::SourcePretrain, 99, 0);
        assert!(!sp.consistency_active());
    }

    #[test]
    fn loss_report_log_line_is_parseable() {
        let phase = TrainPhase::new(Stage::DrstPretrain, 1, 0);
        let mut r = LossReport::zeroed(phase);
        r.cyc = 0.125;
        let line = r.log_line();
        assert!(line.starts_with("stage=drst epoch=1"));
        assert!(line.contains("cyc=0.125000000"));
    }
}
