//! One alternating optimization step over the translation networks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{DomainTag, ImageBatch, LossReport, TrainPhase};
use crate::util::scalar_f64;

use super::bundle::{DrstBundle, DrstOptimizers};
use super::losses::{adv_loss, content_adv_loss, cycle_loss, gen_adv_loss};
use super::translate::{translate_step1, translate_step2};

/// Weights of the encoder/generator objective terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub adv: f64,
    pub cyc: f64,
    pub content: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self { adv: 1.0, cyc: 10.0, content: 1.0 }
    }
}

/// Runs one training step on an unpaired batch pair.
///
/// Both update groups' losses are evaluated against the pre-step parameters,
/// then the discriminator group is applied first and the encoder/generator
/// group second. Discriminators see generator and encoder outputs detached;
/// the encoder/generator objective is
/// `adv * (non-saturating adv both directions) + cyc * cycle + content * encoder-side content loss`.
///
/// If any loss term is non-finite the step errors out before touching the
/// parameters, so a failed step never corrupts the networks.
pub fn drst_train_step(
    bundle: &DrstBundle,
    x: &ImageBatch,
    y: &ImageBatch,
    opts: &mut DrstOptimizers,
    weights: &LossWeights,
    phase: TrainPhase,
) -> Result<LossReport> {
    let step1 = translate_step1(bundle, x, y)?;
    let full = translate_step2(bundle, &step1)?;
    let x_hat = full.x_hat()?;
    let y_hat = full.y_hat()?;
    let latents = full.latents()?;

    // Discriminator objectives on detached fakes and content maps.
    let adv_x = adv_loss(
        &bundle.discriminate(DomainTag::Source, x)?,
        &bundle.discriminate(DomainTag::Source, &x_hat.detach())?,
    )?;
    let adv_y = adv_loss(
        &bundle.discriminate(DomainTag::Target, y)?,
        &bundle.discriminate(DomainTag::Target, &y_hat.detach())?,
    )?;
    let (content_disc_loss, _) = content_adv_loss(
        &bundle.discriminate_content(&latents.content_src.detach())?,
        &bundle.discriminate_content(&latents.content_tgt.detach())?,
    )?;
    // Discriminators maximize the adversarial value and minimize their
    // content cross-entropy.
    let disc_obj = (adv_x.neg()? + adv_y.neg()?)?.add(&content_disc_loss)?;

    // Encoder/generator objective on live outputs.
    let gen_adv = (gen_adv_loss(&bundle.discriminate(DomainTag::Source, x_hat)?)?
        + gen_adv_loss(&bundle.discriminate(DomainTag::Target, y_hat)?)?)?;
    let cyc = cycle_loss(x, full.x_rec()?, y, full.y_rec()?)?;
    let (_, enc_content_loss) = content_adv_loss(
        &bundle.discriminate_content(&latents.content_src)?,
        &bundle.discriminate_content(&latents.content_tgt)?,
    )?;
    let gen_obj = (((&gen_adv * weights.adv)? + (&cyc * weights.cyc)?)?
        + (&enc_content_loss * weights.content)?)?;

    let report = LossReport {
        adv_x: scalar_f64(&adv_x)?,
        adv_y: scalar_f64(&adv_y)?,
        content_adv: scalar_f64(&content_disc_loss)?,
        cyc: scalar_f64(&cyc)?,
        seg_source: 0.0,
        seg_target: 0.0,
        ccl: 0.0,
        joint: scalar_f64(&gen_obj)?,
        epoch: phase.epoch,
        phase,
    };
    let disc_val = scalar_f64(&disc_obj)?;
    if !disc_val.is_finite() {
        return Err(Error::non_finite(format!("discriminator objective is {disc_val}")));
    }
    report.validate()?;

    let disc_grads = disc_obj.backward()?;
    let gen_grads = gen_obj.backward()?;
    opts.disc.step(&disc_grads)?;
    opts.enc_gen.step(&gen_grads)?;
    Ok(report)
}
