//! Adversarial, cycle-consistency and content-adversarial objectives for the
//! style-transfer stage.

use candle_core::Tensor;

use crate::error::{Error, Result};
use crate::types::ImageBatch;

/// Discriminator outputs are clamped to `[EPS, 1 - EPS]` before any log.
pub const EPS: f64 = 1e-7;

fn check_scores(name: &str, t: &Tensor) -> Result<()> {
    if t.dims().len() != 1 {
        return Err(Error::shape(format!("{name} must be a rank-1 [N] tensor, got {:?}", t.dims())));
    }
    let vals = t.to_dtype(candle_core::DType::F64)?.to_vec1::<f64>()?;
    for &v in &vals {
        if !v.is_finite() {
            return Err(Error::non_finite(format!("{name} contains a non-finite score")));
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::range(format!("{name} score {v} outside [0, 1]")));
        }
    }
    Ok(())
}

fn clamped(t: &Tensor) -> Result<Tensor> {
    Ok(t.clamp(EPS, 1.0 - EPS)?)
}

/// Vanilla GAN value for one translation direction:
/// `mean(log d_real) + mean(log(1 - d_fake))`, expectations taken as batch
/// means. The discriminator maximizes this; the generator side uses the
/// non-saturating surrogate [`gen_adv_loss`].
///
/// Always `<= 0`; zero only when `d_real = 1` and `d_fake = 0` (pre-clamp).
pub fn adv_loss(d_real: &Tensor, d_fake: &Tensor) -> Result<Tensor> {
    check_scores("d_real", d_real)?;
    check_scores("d_fake", d_fake)?;
    let real_term = clamped(d_real)?.log()?.mean_all()?;
    let fake_term = clamped(d_fake)?.affine(-1.0, 1.0)?.log()?.mean_all()?;
    Ok((real_term + fake_term)?)
}

/// Non-saturating generator objective: `-mean(log d_fake)`, minimized by the
/// generator. Shares fixed points with minimizing the fake term of
/// [`adv_loss`].
pub fn gen_adv_loss(d_fake: &Tensor) -> Result<Tensor> {
    check_scores("d_fake", d_fake)?;
    Ok(clamped(d_fake)?.log()?.mean_all()?.neg()?)
}

/// Cycle-consistency loss: per-pixel mean L1 between each original and its
/// two-step reconstruction, summed over both directions.
pub fn cycle_loss(
    x: &ImageBatch,
    x_rec: &ImageBatch,
    y: &ImageBatch,
    y_rec: &ImageBatch,
) -> Result<Tensor> {
    if x.pixels().dims() != x_rec.pixels().dims() {
        return Err(Error::shape(format!(
            "x and x_rec shapes differ: {:?} vs {:?}",
            x.pixels().dims(),
            x_rec.pixels().dims()
        )));
    }
    if y.pixels().dims() != y_rec.pixels().dims() {
        return Err(Error::shape(format!(
            "y and y_rec shapes differ: {:?} vs {:?}",
            y.pixels().dims(),
            y_rec.pixels().dims()
        )));
    }
    let dx = (x_rec.pixels() - x.pixels())?.abs()?.mean_all()?;
    let dy = (y_rec.pixels() - y.pixels())?.abs()?.mean_all()?;
    Ok((dx + dy)?)
}

/// Content-discriminator objectives over per-image scores on the two
/// domains' content maps.
///
/// Returns `(disc_loss, encoder_loss)`:
/// * `disc_loss` — binary cross-entropy classifying source content as
///   class 0 and target content as class 1; minimized by the content
///   discriminator. At chance scores (0.5, 0.5) each side contributes ln 2.
/// * `encoder_loss` — the same cross-entropy against uniform 0.5 targets;
///   minimized by the content encoders, pushing the discriminator to
///   chance. Its per-side minimum is ln 2, attained at score 0.5.
///
/// The two losses are used in alternating updates: the discriminator sees
/// detached content maps, the encoders see the live ones.
pub fn content_adv_loss(dc_on_cx: &Tensor, dc_on_cy: &Tensor) -> Result<(Tensor, Tensor)> {
    check_scores("dc_on_cx", dc_on_cx)?;
    check_scores("dc_on_cy", dc_on_cy)?;
    let cx = clamped(dc_on_cx)?;
    let cy = clamped(dc_on_cy)?;

    let disc_x = cx.affine(-1.0, 1.0)?.log()?.mean_all()?.neg()?;
    let disc_y = cy.log()?.mean_all()?.neg()?;
    let disc_loss = (disc_x + disc_y)?;

    let half_target = |s: &Tensor| -> Result<Tensor> {
        let pos = s.log()?;
        let neg = s.affine(-1.0, 1.0)?.log()?;
        Ok(((pos + neg)? * -0.5)?.mean_all()?)
    };
    let enc_loss = (half_target(&cx)? + half_target(&cy)?)?;
    Ok((disc_loss, enc_loss))
}
