//! The three-stage schedule: translation pretraining, source-expert
//! pretraining, then joint training with consistency.
//!
//! Every stage writes one checkpoint per epoch (so a non-finite abort always
//! leaves the last good epoch on disk) and appends one machine-parseable
//! loss record per epoch to `<output_dir>/<stage>_log.txt`. Per-epoch
//! sampling randomness is derived from `(seed, stage, epoch)`, which makes
//! an interrupted-and-resumed run reproduce the uninterrupted one exactly.

use candle_core::Device;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};

use rand::SeedableRng;

use crate::ccl::{
    joint_loss_with_terms, seg_loss, wire_batch, CclPair, JointTerms, SegModel,
};
use crate::checkpoint::load_checkpoint;
use crate::config::RunConfig;
use crate::data::{
    load_manifest, sample_unpaired, DatasetManifest, EpochSampler, LoadedDataset,
};
use crate::drst::{drst_train_step, translate_step1, DrstBundle, DrstOptimizers};
use crate::error::{Error, Result};
use crate::nn::{fnv1a64, Adam};
use crate::types::{LossReport, Stage, TrainPhase};
use crate::util::scalar_f64;

/// What a finished (or resumed-and-finished) stage leaves behind.
pub struct StageOutcome {
    pub checkpoint: PathBuf,
    /// One aggregated record per epoch run in this call.
    pub reports: Vec<LossReport>,
}

/// Sampling RNG for one epoch, independent of how the process got there.
pub fn epoch_rng(seed: u64, stage: Stage, epoch: usize) -> ChaCha8Rng {
    let mut bytes = seed.to_le_bytes().to_vec();
    bytes.extend_from_slice(stage.as_str().as_bytes());
    bytes.extend_from_slice(&(epoch as u64).to_le_bytes());
    ChaCha8Rng::seed_from_u64(fnv1a64(&bytes))
}

fn append_log(output_dir: &Path, stage: Stage, line: &str) -> Result<()> {
    use std::io::Write;
    std::fs::create_dir_all(output_dir)?;
    let path = output_dir.join(format!("{stage}_log.txt"));
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    writeln!(f, "{line}")?;
    Ok(())
}

fn mean_report(steps: &[LossReport], phase: TrainPhase) -> LossReport {
    let mut acc = LossReport::zeroed(phase);
    let n = steps.len().max(1) as f64;
    for s in steps {
        acc.adv_x += s.adv_x;
        acc.adv_y += s.adv_y;
        acc.content_adv += s.content_adv;
        acc.cyc += s.cyc;
        acc.seg_source += s.seg_source;
        acc.seg_target += s.seg_target;
        acc.ccl += s.ccl;
        acc.joint += s.joint;
    }
    acc.adv_x /= n;
    acc.adv_y /= n;
    acc.content_adv /= n;
    acc.cyc /= n;
    acc.seg_source /= n;
    acc.seg_target /= n;
    acc.ccl /= n;
    acc.joint /= n;
    acc
}

fn load_stage_manifest(cfg: &RunConfig) -> Result<DatasetManifest> {
    load_manifest(&cfg.data_root, cfg.split_seed, cfg.test_count)
}

/// Translation pretraining.
pub fn run_stage_drst(cfg: &RunConfig, resume: Option<&Path>) -> Result<StageOutcome> {
    cfg.validate()?;
    let device = cfg.resolve_device()?;
    let manifest = load_stage_manifest(cfg)?;
    let data = LoadedDataset::load_train(&manifest, cfg.image_size, cfg.invert_target)?;

    let (bundle, mut opts, start_epoch) = match resume {
        Some(path) => {
            let (bundle, tensors, meta) = DrstBundle::load(path, &device)?;
            if meta.stage != "drst" {
                return Err(Error::Checkpoint(format!(
                    "expected a drst checkpoint, found stage {}",
                    meta.stage
                )));
            }
            let mut opts = bundle.optimizers(cfg.optimizer.to_adam())?;
            opts.enc_gen.load_state("optim.enc_gen", &tensors)?;
            opts.disc.load_state("optim.disc", &tensors)?;
            (bundle, opts, meta.completed_epochs)
        }
        None => {
            let bundle = DrstBundle::new(cfg.drst_net, cfg.seed, &device)?;
            let opts = bundle.optimizers(cfg.optimizer.to_adam())?;
            (bundle, opts, 0)
        }
    };

    let ckpt = cfg.checkpoint_dir.join("drst.safetensors");
    let mut reports = Vec::new();
    for epoch in (start_epoch + 1)..=cfg.epochs.drst {
        let phase = TrainPhase::new(Stage::DrstPretrain, epoch, cfg.tau);
        let mut rng = epoch_rng(cfg.seed, Stage::DrstPretrain, epoch);
        let mut sampler =
            EpochSampler::new(data.src_images.len(), data.tgt_images.len(), cfg.batch_size, &mut rng)?;
        let mut step_reports = Vec::with_capacity(sampler.batches_per_epoch());
        for _ in 0..sampler.batches_per_epoch() {
            let (x, _gt, y) = sample_unpaired(&mut sampler, &data, &device)?;
            step_reports.push(drst_train_step(
                &bundle,
                &x,
                &y,
                &mut opts,
                &cfg.loss_weights,
                phase,
            )?);
        }
        let report = mean_report(&step_reports, phase);
        append_log(&cfg.output_dir, Stage::DrstPretrain, &report.log_line())?;
        bundle.save(&ckpt, Some(&opts), epoch)?;
        reports.push(report);
    }
    Ok(StageOutcome { checkpoint: ckpt, reports })
}

/// Plain Dice-supervised training of one expert on labeled batches. Used by
/// the source-pretraining stage and by reference baselines (source-only and
/// target-trained oracle).
#[allow(clippy::too_many_arguments)]
pub fn train_supervised(
    model: &SegModel,
    opt: &mut Adam,
    data: &LoadedDataset,
    batch_size: usize,
    epoch_range: (usize, usize),
    seed: u64,
    stage: Stage,
    device: &Device,
    mut on_epoch: impl FnMut(usize, &LossReport, &Adam) -> Result<()>,
) -> Result<Vec<LossReport>> {
    let n = data.src_images.len();
    if n < batch_size {
        return Err(Error::Exhausted);
    }
    let mut reports = Vec::new();
    for epoch in epoch_range.0..=epoch_range.1 {
        let phase = TrainPhase::new(stage, epoch, 0);
        let mut rng = epoch_rng(seed, stage, epoch);
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut step_reports = Vec::new();
        for chunk in order.chunks_exact(batch_size) {
            let (x, gt) = data.source_batch(chunk, device)?;
            let probs = model.forward(&x)?;
            let loss = seg_loss(&probs, &gt)?;
            let value = scalar_f64(&loss)?;
            if !value.is_finite() {
                return Err(Error::non_finite(format!("segmentation loss is {value}")));
            }
            opt.step(&loss.backward()?)?;
            let mut r = LossReport::zeroed(phase);
            r.seg_source = value;
            r.joint = value;
            step_reports.push(r);
        }
        let report = mean_report(&step_reports, phase);
        on_epoch(epoch, &report, opt)?;
        reports.push(report);
    }
    Ok(reports)
}

/// Source-expert pretraining; the target expert stays at its recorded
/// random initialization.
pub fn run_stage_source(
    cfg: &RunConfig,
    drst_ckpt: Option<&Path>,
    resume: Option<&Path>,
) -> Result<StageOutcome> {
    cfg.validate()?;
    let device = cfg.resolve_device()?;
    if let Some(path) = drst_ckpt {
        let (_, meta) = load_checkpoint(path, &device)?;
        if meta.stage != "drst" {
            return Err(Error::Checkpoint(format!(
                "expected a drst checkpoint, found stage {}",
                meta.stage
            )));
        }
    }
    let manifest = load_stage_manifest(cfg)?;
    let entries = manifest.train_entries(crate::types::DomainTag::Source);
    if entries.iter().any(|e| e.label_path.is_none()) {
        return Err(Error::Label("source pretraining requires labels".into()));
    }
    let data = LoadedDataset::load_supervised(&entries, cfg.image_size, false)?;

    let (pair, mut opt_fs, start_epoch) = match resume {
        Some(path) => {
            let (pair, tensors, meta) = CclPair::load(path, &device)?;
            if meta.stage != "source" {
                return Err(Error::Checkpoint(format!(
                    "expected a source checkpoint, found stage {}",
                    meta.stage
                )));
            }
            let mut opt = pair.source_expert.optimizer(cfg.seg_optimizer.to_adam())?;
            opt.load_state("optim.f_s", &tensors)?;
            (pair, opt, meta.completed_epochs)
        }
        None => {
            let pair = CclPair::new(cfg.seg_net, cfg.seed, &device)?;
            let opt = pair.source_expert.optimizer(cfg.seg_optimizer.to_adam())?;
            (pair, opt, 0)
        }
    };

    let ckpt = cfg.checkpoint_dir.join("fs.safetensors");
    let reports = if start_epoch < cfg.epochs.source {
        train_supervised(
            &pair.source_expert,
            &mut opt_fs,
            &data,
            cfg.batch_size,
            (start_epoch + 1, cfg.epochs.source),
            cfg.seed,
            Stage::SourcePretrain,
            &device,
            |epoch, report, opt| {
                append_log(&cfg.output_dir, Stage::SourcePretrain, &report.log_line())?;
                pair.save(&ckpt, "source", epoch, opt.state_tensors("optim.f_s")?)?;
                Ok(())
            },
        )?
    } else {
        Vec::new()
    };
    Ok(StageOutcome { checkpoint: ckpt, reports })
}

/// Joint training: frozen translation (unless co-training is on), both
/// experts optimized under the staged objective with ablation switches.
pub fn run_stage_joint(
    cfg: &RunConfig,
    drst_ckpt: &Path,
    fs_ckpt: Option<&Path>,
    resume: Option<&Path>,
) -> Result<StageOutcome> {
    cfg.validate()?;
    let device = cfg.resolve_device()?;
    let manifest = load_stage_manifest(cfg)?;
    let data = LoadedDataset::load_train(&manifest, cfg.image_size, cfg.invert_target)?;

    let (bundle, drst_tensors, drst_meta) = DrstBundle::load(drst_ckpt, &device)?;
    if drst_meta.stage != "drst" {
        return Err(Error::Checkpoint(format!(
            "expected a drst checkpoint, found stage {}",
            drst_meta.stage
        )));
    }
    let mut drst_opts: Option<DrstOptimizers> = if cfg.cotrain_drst {
        let mut opts = bundle.optimizers(cfg.optimizer.to_adam())?;
        // Continue from the pretraining optimizer state when present.
        let restored = opts
            .enc_gen
            .load_state("optim.enc_gen", &drst_tensors)
            .and_then(|_| opts.disc.load_state("optim.disc", &drst_tensors));
        if restored.is_err() {
            opts = bundle.optimizers(cfg.optimizer.to_adam())?;
        }
        Some(opts)
    } else {
        None
    };

    let (pair, mut opt_fs, mut opt_ft, start_epoch) = match resume {
        Some(path) => {
            let (pair, tensors, meta) = CclPair::load(path, &device)?;
            if meta.stage != "joint" {
                return Err(Error::Checkpoint(format!(
                    "expected a joint checkpoint, found stage {}",
                    meta.stage
                )));
            }
            let mut fs = pair.source_expert.optimizer(cfg.seg_optimizer.to_adam())?;
            let mut ft = pair.target_expert.optimizer(cfg.seg_optimizer.to_adam())?;
            fs.load_state("optim.f_s", &tensors)?;
            ft.load_state("optim.f_t", &tensors)?;
            (pair, fs, ft, meta.completed_epochs)
        }
        None => {
            let pair = match (cfg.ablations.no_fs, fs_ckpt) {
                (true, _) | (false, None) => {
                    if !cfg.ablations.no_fs {
                        return Err(Error::state(
                            "joint training needs a source checkpoint unless no_fs is set",
                        ));
                    }
                    CclPair::new(cfg.seg_net, cfg.seed, &device)?
                }
                (false, Some(path)) => {
                    let (pair, _, meta) = CclPair::load(path, &device)?;
                    if meta.stage != "source" {
                        return Err(Error::Checkpoint(format!(
                            "expected a source checkpoint, found stage {}",
                            meta.stage
                        )));
                    }
                    pair
                }
            };
            let fs = pair.source_expert.optimizer(cfg.seg_optimizer.to_adam())?;
            let ft = pair.target_expert.optimizer(cfg.seg_optimizer.to_adam())?;
            (pair, fs, ft, 0)
        }
    };

    let terms = JointTerms {
        seg_after_tau: !cfg.ablations.no_seg_after_tau,
        consistency: !cfg.ablations.no_ccl,
    };
    let ckpt = cfg.checkpoint_dir.join("joint.safetensors");
    let cotrain_ckpt = cfg.checkpoint_dir.join("drst_cotrained.safetensors");
    let mut reports = Vec::new();
    for epoch in (start_epoch + 1)..=cfg.epochs.joint {
        let phase = TrainPhase::new(Stage::Joint, epoch, cfg.tau);
        let mut rng = epoch_rng(cfg.seed, Stage::Joint, epoch);
        let mut sampler =
            EpochSampler::new(data.src_images.len(), data.tgt_images.len(), cfg.batch_size, &mut rng)?;
        let mut step_reports = Vec::with_capacity(sampler.batches_per_epoch());
        for _ in 0..sampler.batches_per_epoch() {
            let (x, gt, y) = sample_unpaired(&mut sampler, &data, &device)?;
            let mut drst_report = None;
            if let Some(opts) = drst_opts.as_mut() {
                drst_report =
                    Some(drst_train_step(&bundle, &x, &y, opts, &cfg.loss_weights, phase)?);
            }
            let trans = translate_step1(&bundle, &x, &y)?;
            let x_hat = trans.x_hat()?.detach();
            let y_hat = trans.y_hat()?.detach();

            let (loss, mut report) = if cfg.ablations.no_fs {
                let probs = pair.target_expert.forward(&y_hat)?;
                let l = seg_loss(&probs, &gt)?;
                let v = scalar_f64(&l)?;
                if !v.is_finite() {
                    return Err(Error::non_finite(format!("target segmentation loss is {v}")));
                }
                let mut r = LossReport::zeroed(phase);
                r.seg_target = v;
                r.joint = v;
                (l, r)
            } else {
                let wiring = wire_batch(
                    &pair.source_expert,
                    &pair.target_expert,
                    &x,
                    &y,
                    &x_hat,
                    &y_hat,
                    &gt,
                )?;
                joint_loss_with_terms(&wiring, phase, terms)?
            };
            if let Some(d) = drst_report {
                report.adv_x = d.adv_x;
                report.adv_y = d.adv_y;
                report.content_adv = d.content_adv;
                report.cyc = d.cyc;
            }
            let grads = loss.backward()?;
            opt_fs.step(&grads)?;
            opt_ft.step(&grads)?;
            step_reports.push(report);
        }
        let report = mean_report(&step_reports, phase);
        append_log(&cfg.output_dir, Stage::Joint, &report.log_line())?;
        let mut extra = opt_fs.state_tensors("optim.f_s")?;
        extra.extend(opt_ft.state_tensors("optim.f_t")?);
        pair.save(&ckpt, "joint", epoch, extra)?;
        if let Some(opts) = drst_opts.as_ref() {
            bundle.save(&cotrain_ckpt, Some(opts), epoch)?;
        }
        reports.push(report);
    }
    Ok(StageOutcome { checkpoint: ckpt, reports })
}

/// Loads a joint (or source) checkpoint and returns the expert pair for
/// inference.
pub fn load_experts(path: &Path, device: &Device) -> Result<CclPair> {
    let (pair, _, _) = CclPair::load(path, device)?;
    Ok(pair)
}
