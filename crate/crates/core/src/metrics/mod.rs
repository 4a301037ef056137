//! Evaluation metrics: Dice overlap in percent, 95th-percentile Hausdorff
//! distance in pixels, per-dataset aggregation and the paired two-tailed
//! t-test.

mod edt;

pub use edt::squared_edt;

use candle_core::Device;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::ccl::SegModel;
use crate::data::{load_gray, preprocess_image, preprocess_mask, DatasetManifest};
use crate::error::{Error, Result};
use crate::types::{DomainTag, ImageBatch, Mask};

fn single_grid(name: &str, mask: &Mask) -> Result<(Vec<bool>, usize, usize)> {
    if mask.len() != 1 {
        return Err(Error::shape(format!(
            "{name} must hold a single mask, got a batch of {}",
            mask.len()
        )));
    }
    let (h, w) = mask.spatial();
    Ok((mask.to_grid(0)?, h, w))
}

fn check_same_shape(pred: &Mask, gt: &Mask) -> Result<()> {
    if pred.spatial() != gt.spatial() {
        return Err(Error::shape(format!(
            "mask shapes differ: {:?} vs {:?}",
            pred.spatial(),
            gt.spatial()
        )));
    }
    Ok(())
}

/// Dice overlap in percent: `100 * 2|P∩G| / (|P| + |G|)`.
/// Both masks empty scores 100 by convention; exactly one empty scores 0.
pub fn dice_score(pred: &Mask, gt: &Mask) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let (p, _, _) = single_grid("pred", pred)?;
    let (g, _, _) = single_grid("gt", gt)?;
    Ok(dice_from_grids(&p, &g))
}

pub(crate) fn dice_from_grids(p: &[bool], g: &[bool]) -> f64 {
    let inter = p.iter().zip(g.iter()).filter(|&(&a, &b)| a && b).count();
    let p_count = p.iter().filter(|&&v| v).count();
    let g_count = g.iter().filter(|&&v| v).count();
    if p_count + g_count == 0 {
        return 100.0;
    }
    100.0 * 2.0 * inter as f64 / (p_count + g_count) as f64
}

/// Percentile with linear interpolation between order statistics.
/// `values` must be sorted ascending and non-empty; `q` in `[0, 1]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Symmetric 95th-percentile Hausdorff distance in pixels.
///
/// Pools the two directed distance multisets `{d(p, G)}` and `{d(g, P)}`
/// (Euclidean, pixel centers, full mask point sets) and takes the 95th
/// percentile with linear interpolation. `None` when either mask is empty.
pub fn hd95(pred: &Mask, gt: &Mask) -> Result<Option<f64>> {
    check_same_shape(pred, gt)?;
    let (p, h, w) = single_grid("pred", pred)?;
    let (g, _, _) = single_grid("gt", gt)?;
    Ok(hd95_from_grids(&p, &g, h, w))
}

pub(crate) fn hd95_from_grids(p: &[bool], g: &[bool], h: usize, w: usize) -> Option<f64> {
    if !p.iter().any(|&v| v) || !g.iter().any(|&v| v) {
        return None;
    }
    let dist_to_g = squared_edt(g, h, w);
    let dist_to_p = squared_edt(p, h, w);
    let mut pooled: Vec<f64> = Vec::new();
    for i in 0..h * w {
        if p[i] {
            pooled.push(dist_to_g[i].sqrt());
        }
        if g[i] {
            pooled.push(dist_to_p[i].sqrt());
        }
    }
    pooled.sort_by(|a, b| a.partial_cmp(b).expect("finite distances"));
    Some(percentile(&pooled, 0.95))
}

/// Two-tailed p-value of the paired t statistic with `n - 1` degrees of
/// freedom. Errors when the paired differences have zero variance.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!(
            "paired samples must have equal length, got {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Degenerate("need at least two pairs".into()));
    }
    let diffs: Vec<f64> = a.iter().zip(b.iter()).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);
    if var == 0.0 {
        return Err(Error::Degenerate(
            "all paired differences are equal; the t statistic is undefined".into(),
        ));
    }
    let t = mean / (var.sqrt() / (n as f64).sqrt());
    if t == 0.0 {
        return Ok(1.0);
    }
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map_err(|e| Error::Degenerate(format!("invalid t distribution: {e}")))?;
    Ok(2.0 * (1.0 - dist.cdf(t.abs())))
}

/// Per-image metric pair.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageEval {
    pub id: String,
    pub dice: f64,
    /// `None` when either mask was empty.
    pub hd95: Option<f64>,
}

/// Per-image metrics plus mean ± std aggregates. Hausdorff aggregates are
/// computed only over images where the metric is defined and are `None`
/// when no image defines it.
#[derive(Clone, Debug)]
pub struct EvalResult {
    pub per_image: Vec<ImageEval>,
    pub mean_dice: f64,
    pub std_dice: f64,
    pub mean_hd95: Option<f64>,
    pub std_hd95: Option<f64>,
    /// Number of images whose Hausdorff distance was undefined.
    pub undefined_hd95: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, std)
}

impl EvalResult {
    /// Aggregates per-image results; rows are sorted by id so the outcome
    /// does not depend on evaluation order.
    pub fn from_per_image(mut per_image: Vec<ImageEval>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(Error::state("cannot aggregate an empty evaluation"));
        }
        per_image.sort_by(|a, b| a.id.cmp(&b.id));
        let dices: Vec<f64> = per_image.iter().map(|e| e.dice).collect();
        let (mean_dice, std_dice) = mean_std(&dices);
        let hds: Vec<f64> = per_image.iter().filter_map(|e| e.hd95).collect();
        let undefined_hd95 = per_image.len() - hds.len();
        let (mean_hd95, std_hd95) = if hds.is_empty() {
            (None, None)
        } else {
            let (m, s) = mean_std(&hds);
            (Some(m), Some(s))
        };
        Ok(Self { per_image, mean_dice, std_dice, mean_hd95, std_hd95, undefined_hd95 })
    }

    /// `mean±std` in the table style used for reporting.
    pub fn dice_summary(&self) -> String {
        format!("{:.2}±{:.2}", self.mean_dice, self.std_dice)
    }

    pub fn hd95_summary(&self) -> String {
        match (self.mean_hd95, self.std_hd95) {
            (Some(m), Some(s)) => format!("{m:.2}±{s:.2}"),
            _ => "undefined".to_string(),
        }
    }

    /// Comma-separated table: per-image rows plus mean and std summary rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,dice,hd95\n");
        for e in &self.per_image {
            let hd = e.hd95.map(|v| format!("{v:.6}")).unwrap_or_else(|| "undefined".into());
            out.push_str(&format!("{},{:.6},{}\n", e.id, e.dice, hd));
        }
        let hd_mean = self.mean_hd95.map(|v| format!("{v:.6}")).unwrap_or_else(|| "undefined".into());
        let hd_std = self.std_hd95.map(|v| format!("{v:.6}")).unwrap_or_else(|| "undefined".into());
        out.push_str(&format!("mean,{:.6},{}\n", self.mean_dice, hd_mean));
        out.push_str(&format!("std,{:.6},{}\n", self.std_dice, hd_std));
        out
    }

    /// Parses per-image rows written by [`EvalResult::to_csv`], skipping the
    /// summary rows.
    pub fn parse_csv(text: &str) -> Result<Vec<ImageEval>> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split(',').collect();
            if parts.len() != 3 {
                return Err(Error::state(format!("bad csv row: {line}")));
            }
            if parts[0] == "mean" || parts[0] == "std" {
                continue;
            }
            let dice: f64 = parts[1]
                .parse()
                .map_err(|e| Error::state(format!("bad dice in row {line}: {e}")))?;
            let hd = if parts[2] == "undefined" {
                None
            } else {
                Some(
                    parts[2]
                        .parse()
                        .map_err(|e| Error::state(format!("bad hd95 in row {line}: {e}")))?,
                )
            };
            rows.push(ImageEval { id: parts[0].to_string(), dice, hd95: hd });
        }
        Ok(rows)
    }
}

/// Anything that can turn an image batch into a hard mask.
pub trait MaskPredictor {
    fn predict_mask(&self, images: &ImageBatch) -> Result<Mask>;
}

impl MaskPredictor for SegModel {
    fn predict_mask(&self, images: &ImageBatch) -> Result<Mask> {
        self.predict(images)
    }
}

/// Serves pre-rendered prediction masks from `<dir>/<id>.png`; pixels over
/// 127 count as vessel. Lets external prediction sets be scored with the
/// same pipeline.
pub struct PngMaskPredictor {
    dir: std::path::PathBuf,
}

impl PngMaskPredictor {
    pub fn new(dir: impl Into<std::path::PathBuf>) -> Self {
        Self { dir: dir.into() }
    }
}

impl MaskPredictor for PngMaskPredictor {
    fn predict_mask(&self, images: &ImageBatch) -> Result<Mask> {
        let side = images.side();
        let mut grids = Vec::new();
        for id in images.ids() {
            let path = self.dir.join(format!("{id}.png"));
            let img = load_gray(&path)?;
            let mask = preprocess_mask(&img, side)?;
            grids.extend(mask.data.iter().map(|&v| if v > 0.5 { 1.0f32 } else { 0.0 }));
        }
        let t = candle_core::Tensor::from_vec(grids, (images.len(), side, side), &Device::Cpu)?;
        Mask::new(t)
    }
}

/// Scores a predictor on one domain's test split.
///
/// Images are preprocessed to `image_size` (optionally inverted), labels are
/// read through the manifest's evaluation accessor and resized with
/// nearest-neighbor. Aggregation is order-independent.
pub fn evaluate(
    predictor: &dyn MaskPredictor,
    manifest: &DatasetManifest,
    domain: DomainTag,
    invert: bool,
    image_size: usize,
    device: &Device,
) -> Result<EvalResult> {
    let mut entries = manifest.test_entries(domain);
    if entries.is_empty() {
        return Err(Error::state(format!("no test entries for domain {domain}")));
    }
    entries.sort_by(|a, b| a.id.cmp(&b.id));
    let mut per_image = Vec::with_capacity(entries.len());
    for entry in entries {
        let raw = load_gray(&entry.image_path)?;
        let img = preprocess_image(&raw, image_size, invert)?;
        let batch = img.into_batch(domain, entry.id.clone(), device)?;
        let label_path = manifest.eval_label_path(&entry.id)?;
        let raw_label = load_gray(&label_path)?;
        let gt_img = preprocess_mask(&raw_label, image_size)?;
        let gt = gt_img.into_mask(device)?;
        let pred = predictor.predict_mask(&batch)?;
        let dice = dice_score(&pred, &gt)?;
        let hd = hd95(&pred, &gt)?;
        per_image.push(ImageEval { id: entry.id, dice, hd95: hd });
    }
    EvalResult::from_per_image(per_image)
}
