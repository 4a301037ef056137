//! Segmentation and consistency objectives for the dual-expert stage.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::types::{Mask, ProbMap};

/// Student probabilities are clamped to `[EPS, 1]` inside the log.
pub const EPS: f64 = 1e-7;
/// Dice smoothing term, applied to numerator and denominator so empty masks
/// are well defined.
pub const DICE_SMOOTH: f64 = 1.0;

fn check_spatial(pred: &ProbMap, gt: &Mask) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::shape(format!(
            "batch sizes differ: {} predictions vs {} masks",
            pred.len(),
            gt.len()
        )));
    }
    if pred.spatial() != gt.spatial() {
        return Err(Error::shape(format!(
            "spatial sizes differ: {:?} vs {:?}",
            pred.spatial(),
            gt.spatial()
        )));
    }
    Ok(())
}

/// Smoothed soft Dice loss on the vessel channel:
/// `1 - (2 * sum(p * g) + s) / (sum(p) + sum(g) + s)`, sums taken over all
/// pixels of the batch. Always in `[0, 1]`.
pub fn seg_loss(pred: &ProbMap, gt: &Mask) -> Result<Tensor> {
    check_spatial(pred, gt)?;
    let p = pred.vessel()?;
    let g = gt.labels().to_dtype(p.dtype())?;
    let intersection = (&p * &g)?.sum_all()?;
    let denom = (p.sum_all()? + g.sum_all()?)?;
    let dice = ((intersection * 2.0)? + DICE_SMOOTH)?.div(&(denom + DICE_SMOOTH)?)?;
    Ok(dice.neg()?.affine(1.0, 1.0)?)
}

/// Soft-target cross-entropy between a student and a (constant) teacher
/// distribution: mean over pixels of `-sum_k t_k * log(clamp(s_k, EPS, 1))`.
///
/// The teacher is detached inside, so no gradient ever flows into it.
pub fn ccl_loss(student: &ProbMap, teacher: &ProbMap) -> Result<Tensor> {
    if student.probs().dims() != teacher.probs().dims() {
        return Err(Error::shape(format!(
            "student and teacher shapes differ: {:?} vs {:?}",
            student.probs().dims(),
            teacher.probs().dims()
        )));
    }
    let t = teacher.probs().detach();
    let log_s = student.probs().clamp(EPS, 1.0)?.log()?;
    let ce = (t * log_s)?.sum(1)?.neg()?;
    Ok(ce.mean_all()?)
}
