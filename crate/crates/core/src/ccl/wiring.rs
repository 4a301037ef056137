//! Batch wiring and the staged joint objective for the two experts.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::types::{DomainTag, ImageBatch, LossReport, Mask, ProbMap, Stage, TrainPhase};
use crate::util::scalar_f64;

use super::losses::{ccl_loss, seg_loss};
use super::unet::SegModel;

/// The four expert outputs on one unpaired batch plus the source labels.
///
/// Lineage: `y_hat` was generated from `x`'s content, so `f_t_yhat` shares
/// `f_s_x`'s lineage, and `x_hat` from `y`'s content pairs `f_s_xhat` with
/// `f_t_y`.
pub struct CclBatchWiring {
    pub f_s_x: ProbMap,
    pub f_s_xhat: ProbMap,
    pub f_t_y: ProbMap,
    pub f_t_yhat: ProbMap,
    pub gt_x: Mask,
}

/// Runs both experts on their domain-styled inputs.
///
/// `x` and `x_hat` go through the source expert; `y` and `y_hat` through the
/// target expert. The translated batches must descend from this same
/// `(x, y)` pair, which is checked through the content-lineage ids.
pub fn wire_batch(
    f_s: &SegModel,
    f_t: &SegModel,
    x: &ImageBatch,
    y: &ImageBatch,
    x_hat: &ImageBatch,
    y_hat: &ImageBatch,
    gt_x: &Mask,
) -> Result<CclBatchWiring> {
    let n = x.len();
    for (name, b) in [("y", y), ("x_hat", x_hat), ("y_hat", y_hat)] {
        if b.len() != n {
            return Err(Error::shape(format!(
                "batch size mismatch: x has {n}, {name} has {}",
                b.len()
            )));
        }
        if b.side() != x.side() {
            return Err(Error::shape(format!(
                "spatial size mismatch: x has {}, {name} has {}",
                x.side(),
                b.side()
            )));
        }
    }
    if gt_x.len() != n || gt_x.spatial() != (x.side(), x.side()) {
        return Err(Error::shape("ground truth does not match the source batch"));
    }
    if x_hat.domain() != DomainTag::Source || y_hat.domain() != DomainTag::Target {
        return Err(Error::state("translated batches carry wrong domain tags"));
    }
    if y_hat.ids() != x.ids() || x_hat.ids() != y.ids() {
        return Err(Error::state(
            "translated batches do not descend from this (x, y) pair",
        ));
    }

    Ok(CclBatchWiring {
        f_s_x: f_s.forward(x)?,
        f_s_xhat: f_s.forward(x_hat)?,
        f_t_y: f_t.forward(y)?,
        f_t_yhat: f_t.forward(y_hat)?,
        gt_x: gt_x.clone(),
    })
}

/// Which loss terms the joint objective keeps; the full objective enables
/// everything. Ablation switches drop individual terms.
#[derive(Clone, Copy, Debug)]
pub struct JointTerms {
    /// Keep the ground-truth Dice terms after the starting flag.
    pub seg_after_tau: bool,
    /// Keep the two consistency cross-entropy terms.
    pub consistency: bool,
}

impl Default for JointTerms {
    fn default() -> Self {
        Self { seg_after_tau: true, consistency: true }
    }
}

/// The staged joint objective.
///
/// Up to and including epoch `tau` (and during the whole source-pretrain
/// stage) only the source expert's Dice term is active, so the target
/// expert receives no gradient. Past `tau` the objective is the unweighted
/// sum of both Dice terms and both consistency terms, with the source
/// expert's outputs acting as detached teachers.
pub fn joint_loss(wiring: &CclBatchWiring, phase: TrainPhase) -> Result<(Tensor, LossReport)> {
    joint_loss_with_terms(wiring, phase, JointTerms::default())
}

/// [`joint_loss`] with ablation switches.
pub fn joint_loss_with_terms(
    wiring: &CclBatchWiring,
    phase: TrainPhase,
    terms: JointTerms,
) -> Result<(Tensor, LossReport)> {
    if phase.stage == Stage::DrstPretrain {
        return Err(Error::state(
            "the joint objective is undefined during style-transfer pretraining",
        ));
    }
    let mut report = LossReport::zeroed(phase);
    let seg_src = seg_loss(&wiring.f_s_x, &wiring.gt_x)?;
    report.seg_source = scalar_f64(&seg_src)?;

    if !phase.consistency_active() {
        report.joint = report.seg_source;
        return Ok((seg_src, report));
    }

    let mut total: Option<Tensor> = None;
    let add = |t: Tensor, acc: &mut Option<Tensor>| -> Result<()> {
        *acc = Some(match acc.take() {
            Some(a) => (a + t)?,
            None => t,
        });
        Ok(())
    };

    if terms.seg_after_tau {
        let seg_tgt = seg_loss(&wiring.f_t_yhat, &wiring.gt_x)?;
        report.seg_target = scalar_f64(&seg_tgt)?;
        add(seg_src, &mut total)?;
        add(seg_tgt, &mut total)?;
    }
    if terms.consistency {
        let ccl_hat = ccl_loss(&wiring.f_t_yhat, &wiring.f_s_x.detach())?;
        let ccl_real = ccl_loss(&wiring.f_t_y, &wiring.f_s_xhat.detach())?;
        report.ccl = scalar_f64(&ccl_hat)? + scalar_f64(&ccl_real)?;
        add(ccl_hat, &mut total)?;
        add(ccl_real, &mut total)?;
    }

    let total = match total {
        Some(t) => t,
        // Both ablation switches off and past tau: a zero objective.
        None => Tensor::zeros((), wiring.f_s_x.probs().dtype(), wiring.f_s_x.probs().device())?,
    };
    report.joint = scalar_f64(&total)?;
    report.validate()?;
    Ok((total, report))
}

/// Hard prediction for a batch; ties go to background.
pub fn predict(model: &SegModel, images: &ImageBatch) -> Result<Mask> {
    model.predict(images)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ccl::unet::{SegNetConfig, SegRole};
    use candle_core::Device;

    fn dev() -> Device {
        Device::Cpu
    }

    fn small_cfg() -> SegNetConfig {
        SegNetConfig { base_channels: 4, encoder_depth: 2, ..Default::default() }
    }

    fn models() -> (SegModel, SegModel) {
        let f_s = SegModel::new(SegRole::SourceExpert, small_cfg(), 1, &dev()).unwrap();
        let f_t = SegModel::new(SegRole::TargetExpert, small_cfg(), 2, &dev()).unwrap();
        (f_s, f_t)
    }

    fn batch(value: f32, n: usize, side: usize, domain: DomainTag) -> ImageBatch {
        let t = Tensor::full(value, (n, 1, side, side), &dev()).unwrap();
        ImageBatch::from_pixels(t, domain).unwrap()
    }

    fn stub_translation(x: &ImageBatch, y: &ImageBatch) -> (ImageBatch, ImageBatch) {
        // x_hat mirrors y's pixels in source style, y_hat mirrors x's.
        let x_hat = y.retagged(DomainTag::Source);
        let y_hat = x.retagged(DomainTag::Target);
        (x_hat, y_hat)
    }

    fn full_mask(n: usize, side: usize) -> Mask {
        let bits: Vec<f32> = (0..n * side * side).map(|i| (i % 2) as f32).collect();
        Mask::new(Tensor::from_vec(bits, (n, side, side), &dev()).unwrap()).unwrap()
    }

    #[test]
    fn wiring_produces_four_prob_maps() {
        let (f_s, f_t) = models();
        let x = batch(0.2, 2, 16, DomainTag::Source);
        let y = batch(0.8, 2, 16, DomainTag::Target);
        let (x_hat, y_hat) = stub_translation(&x, &y);
        let gt = full_mask(2, 16);
        let w = wire_batch(&f_s, &f_t, &x, &y, &x_hat, &y_hat, &gt).unwrap();
        for pm in [&w.f_s_x, &w.f_s_xhat, &w.f_t_y, &w.f_t_yhat] {
            assert_eq!(pm.probs().dims(), &[2, 2, 16, 16]);
        }
    }

    #[test]
    fn identical_models_agree_on_lineage_pairs() {
        let (f_s, f_t) = models();
        f_t.copy_params_from(&f_s).unwrap();
        let x = batch(0.3, 1, 16, DomainTag::Source);
        let y = batch(0.7, 1, 16, DomainTag::Target);
        // Stub translation: x_hat == y (as source), y_hat == x (as target).
        let (x_hat, y_hat) = stub_translation(&x, &y);
        let gt = full_mask(1, 16);
        let w = wire_batch(&f_s, &f_t, &x, &y, &x_hat, &y_hat, &gt).unwrap();
        let a = w.f_t_yhat.probs().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        let b = w.f_s_x.probs().flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mismatched_batch_is_shape_error() {
        let (f_s, f_t) = models();
        let x = batch(0.2, 2, 16, DomainTag::Source);
        let y = batch(0.8, 3, 16, DomainTag::Target);
        let (x_hat, y_hat) = stub_translation(&x, &y);
        let gt = full_mask(2, 16);
        assert!(matches!(
            wire_batch(&f_s, &f_t, &x, &y, &x_hat, &y_hat, &gt),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn foreign_translation_is_rejected() {
        let (f_s, f_t) = models();
        let x = batch(0.2, 2, 16, DomainTag::Source);
        let y = batch(0.8, 2, 16, DomainTag::Target);
        let other = batch(0.5, 2, 16, DomainTag::Target).with_ids(vec!["a".into(), "b".into()]).unwrap();
        let (x_hat, _) = stub_translation(&x, &y);
        let (_, y_hat_foreign) = stub_translation(&other.retagged(DomainTag::Source), &y);
        let gt = full_mask(2, 16);
        assert!(matches!(
            wire_batch(&f_s, &f_t, &x, &y, &x_hat, &y_hat_foreign, &gt),
            Err(Error::State(_))
        ));
    }

    fn wiring_for_phase() -> CclBatchWiring {
        let (f_s, f_t) = models();
        let x = batch(0.2, 1, 16, DomainTag::Source);
        let y = batch(0.8, 1, 16, DomainTag::Target);
        let (x_hat, y_hat) = stub_translation(&x, &y);
        let gt = full_mask(1, 16);
        wire_batch(&f_s, &f_t, &x, &y, &x_hat, &y_hat, &gt).unwrap()
    }

    #[test]
    fn drst_stage_is_state_error() {
        let w = wiring_for_phase();
        let phase = TrainPhase::new(Stage::DrstPretrain, 1, 0);
        assert!(matches!(joint_loss(&w, phase), Err(Error::State(_))));
    }

    #[test]
    fn before_tau_only_source_seg_counts() {
        let w = wiring_for_phase();
        let phase = TrainPhase::new(Stage::Joint, 3, 5);
        let (_, report) = joint_loss(&w, phase).unwrap();
        assert_eq!(report.joint, report.seg_source);
        assert_eq!(report.seg_target, 0.0);
        assert_eq!(report.ccl, 0.0);
    }

    #[test]
    fn after_tau_all_terms_sum() {
        let w = wiring_for_phase();
        let phase = TrainPhase::new(Stage::Joint, 6, 5);
        let (total, report) = joint_loss(&w, phase).unwrap();
        let v = total.to_dtype(candle_core::DType::F64).unwrap().to_scalar::<f64>().unwrap();
        let sum = report.seg_source + report.seg_target + report.ccl;
        assert!((v - sum).abs() < 1e-6, "{v} vs {sum}");
        assert_eq!(report.joint, v);
    }

    #[test]
    fn consistency_terms_send_no_gradient_to_the_source_expert() {
        let (f_s, f_t) = models();
        let x = batch(0.2, 1, 16, DomainTag::Source);
        let y = batch(0.8, 1, 16, DomainTag::Target);
        let (x_hat, y_hat) = stub_translation(&x, &y);
        let gt = full_mask(1, 16);
        let w = wire_batch(&f_s, &f_t, &x, &y, &x_hat, &y_hat, &gt).unwrap();
        // Consistency-only objective.
        let phase = TrainPhase::new(Stage::Joint, 1, 0);
        let (total, _) = joint_loss_with_terms(
            &w,
            phase,
            JointTerms { seg_after_tau: false, consistency: true },
        )
        .unwrap();
        let grads = total.backward().unwrap();
        for (name, var) in f_s.bank().all() {
            assert!(
                grads.get(var.as_tensor()).is_none(),
                "consistency gradient leaked into {name}"
            );
        }
        // Sanity: the same objective does reach the target expert.
        let touched = f_t
            .bank()
            .all()
            .iter()
            .any(|(_, var)| grads.get(var.as_tensor()).is_some());
        assert!(touched);
    }

    #[test]
    fn perfect_agreement_costs_at_most_two_milli() {
        // All four outputs one-hot correct and teachers equal students.
        let side = 16;
        let bits: Vec<f32> = (0..side * side).map(|i| (i % 2) as f32).collect();
        let gt = Mask::new(Tensor::from_vec(bits.clone(), (1, side, side), &dev()).unwrap()).unwrap();
        let v = Tensor::from_vec(bits, (1, 1, side, side), &dev()).unwrap();
        let bg = v.affine(-1.0, 1.0).unwrap();
        let one_hot = ProbMap::new(Tensor::cat(&[&bg, &v], 1).unwrap()).unwrap();
        let w = CclBatchWiring {
            f_s_x: one_hot.clone(),
            f_s_xhat: one_hot.clone(),
            f_t_y: one_hot.clone(),
            f_t_yhat: one_hot.clone(),
            gt_x: gt,
        };
        let phase = TrainPhase::new(Stage::Joint, 1, 0);
        let (_, report) = joint_loss(&w, phase).unwrap();
        assert!(report.joint <= 2e-3, "joint {}", report.joint);
    }

    #[test]
    fn uniform_predictions_match_composed_oracles() {
        // Uniform probabilities everywhere, half-positive ground truth.
        let side = 4;
        let bits: Vec<f32> = (0..side * side).map(|i| (i % 2) as f32).collect();
        let gt = Mask::new(Tensor::from_vec(bits, (1, side, side), &dev()).unwrap()).unwrap();
        let uniform = ProbMap::new(
            Tensor::full(0.5f32, (1, 2, side, side), &dev()).unwrap(),
        )
        .unwrap();
        let w = CclBatchWiring {
            f_s_x: uniform.clone(),
            f_s_xhat: uniform.clone(),
            f_t_y: uniform.clone(),
            f_t_yhat: uniform.clone(),
            gt_x: gt,
        };
        let phase = TrainPhase::new(Stage::Joint, 1, 0);
        let (_, report) = joint_loss(&w, phase).unwrap();
        // Dice oracle: p sums to 8, g sums to 8, inter 4:
        // 1 - (2*4 + 1) / (8 + 8 + 1) = 1 - 9/17, twice.
        let dice_term = 1.0 - 9.0 / 17.0;
        let expect = 2.0 * dice_term + 2.0 * std::f64::consts::LN_2;
        assert!((report.joint - expect).abs() < 1e-6, "{} vs {expect}", report.joint);
    }
}
