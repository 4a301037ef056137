//! In-memory training set and the per-epoch unpaired sampler.

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::types::{DomainTag, ImageBatch, Mask};

use super::manifest::DatasetManifest;
use super::preprocess::{load_gray, preprocess_image, preprocess_mask, GrayImageF32};

/// All training images preloaded and preprocessed once per stage. Desk-scale
/// datasets fit comfortably in memory.
pub struct LoadedDataset {
    pub image_size: usize,
    pub src_ids: Vec<String>,
    pub src_images: Vec<GrayImageF32>,
    pub src_masks: Vec<GrayImageF32>,
    pub tgt_ids: Vec<String>,
    pub tgt_images: Vec<GrayImageF32>,
}

impl LoadedDataset {
    /// Loads both domains' train splits. Source labels come along; target
    /// labels are not reachable from here.
    pub fn load_train(
        manifest: &DatasetManifest,
        image_size: usize,
        invert_target: bool,
    ) -> Result<Self> {
        let mut src_ids = Vec::new();
        let mut src_images = Vec::new();
        let mut src_masks = Vec::new();
        for s in manifest.train_entries(DomainTag::Source) {
            let img = preprocess_image(&load_gray(&s.image_path)?, image_size, false)?;
            let label_path = s
                .label_path
                .ok_or_else(|| Error::Label(format!("source sample {} has no label", s.id)))?;
            let mask = preprocess_mask(&load_gray(&label_path)?, image_size)?;
            src_ids.push(s.id);
            src_images.push(img);
            src_masks.push(mask);
        }
        let mut tgt_ids = Vec::new();
        let mut tgt_images = Vec::new();
        for s in manifest.train_entries(DomainTag::Target) {
            let img = preprocess_image(&load_gray(&s.image_path)?, image_size, invert_target)?;
            tgt_ids.push(s.id);
            tgt_images.push(img);
        }
        Ok(Self { image_size, src_ids, src_images, src_masks, tgt_ids, tgt_images })
    }

    /// A labeled dataset for plain supervised training (evaluation baselines
    /// use this with the manifest's oracle accessor).
    pub fn load_supervised(
        entries: &[super::manifest::TrainSample],
        image_size: usize,
        invert: bool,
    ) -> Result<Self> {
        let mut ids = Vec::new();
        let mut images = Vec::new();
        let mut masks = Vec::new();
        for s in entries {
            let img = preprocess_image(&load_gray(&s.image_path)?, image_size, invert)?;
            let label_path = s
                .label_path
                .clone()
                .ok_or_else(|| Error::Label(format!("sample {} has no label", s.id)))?;
            let mask = preprocess_mask(&load_gray(&label_path)?, image_size)?;
            ids.push(s.id.clone());
            images.push(img);
            masks.push(mask);
        }
        Ok(Self {
            image_size,
            src_ids: ids,
            src_images: images,
            src_masks: masks,
            tgt_ids: Vec::new(),
            tgt_images: Vec::new(),
        })
    }

    fn batch_images(
        &self,
        images: &[GrayImageF32],
        ids: &[String],
        indices: &[usize],
        domain: DomainTag,
        device: &Device,
    ) -> Result<ImageBatch> {
        let s = self.image_size;
        let mut data = Vec::with_capacity(indices.len() * s * s);
        let mut batch_ids = Vec::with_capacity(indices.len());
        for &i in indices {
            data.extend_from_slice(&images[i].data);
            batch_ids.push(ids[i].clone());
        }
        let t = Tensor::from_vec(data, (indices.len(), 1, s, s), device)?;
        ImageBatch::new(t, domain, batch_ids)
    }

    pub fn source_batch(&self, indices: &[usize], device: &Device) -> Result<(ImageBatch, Mask)> {
        let imgs = self.batch_images(&self.src_images, &self.src_ids, indices, DomainTag::Source, device)?;
        let s = self.image_size;
        let mut bits = Vec::with_capacity(indices.len() * s * s);
        for &i in indices {
            bits.extend(self.src_masks[i].data.iter().map(|&v| if v > 0.5 { 1.0f32 } else { 0.0 }));
        }
        let mask = Mask::new(Tensor::from_vec(bits, (indices.len(), s, s), device)?)?;
        Ok((imgs, mask))
    }

    pub fn target_batch(&self, indices: &[usize], device: &Device) -> Result<ImageBatch> {
        self.batch_images(&self.tgt_images, &self.tgt_ids, indices, DomainTag::Target, device)
    }
}

/// Draws unpaired batches without replacement within one epoch; each domain
/// is shuffled independently so pairing is incidental, never aligned by id.
pub struct EpochSampler {
    src_order: Vec<usize>,
    tgt_order: Vec<usize>,
    batch_size: usize,
    cursor: usize,
}

impl EpochSampler {
    pub fn new(n_src: usize, n_tgt: usize, batch_size: usize, rng: &mut impl Rng) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::state("batch size must be positive"));
        }
        if n_src < batch_size || n_tgt < batch_size {
            return Err(Error::Exhausted);
        }
        let mut src_order: Vec<usize> = (0..n_src).collect();
        let mut tgt_order: Vec<usize> = (0..n_tgt).collect();
        src_order.shuffle(rng);
        tgt_order.shuffle(rng);
        Ok(Self { src_order, tgt_order, batch_size, cursor: 0 })
    }

    /// Batches per epoch: one pass over the smaller domain's train set.
    pub fn batches_per_epoch(&self) -> usize {
        self.src_order.len().min(self.tgt_order.len()) / self.batch_size
    }

    /// Index pairs for the next batch, or `Exhausted` at epoch end.
    pub fn next_indices(&mut self) -> Result<(Vec<usize>, Vec<usize>)> {
        let start = self.cursor * self.batch_size;
        let end = start + self.batch_size;
        if end > self.src_order.len() || end > self.tgt_order.len() {
            return Err(Error::Exhausted);
        }
        self.cursor += 1;
        Ok((
            self.src_order[start..end].to_vec(),
            self.tgt_order[start..end].to_vec(),
        ))
    }
}

/// Draws one unpaired batch: labeled source images and unlabeled target
/// images.
pub fn sample_unpaired(
    sampler: &mut EpochSampler,
    data: &LoadedDataset,
    device: &Device,
) -> Result<(ImageBatch, Mask, ImageBatch)> {
    let (src_idx, tgt_idx) = sampler.next_indices()?;
    let (x, gt) = data.source_batch(&src_idx, device)?;
    let y = data.target_batch(&tgt_idx, device)?;
    Ok((x, gt, y))
}
