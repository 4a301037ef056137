//! Dataset ingestion, preprocessing, unpaired sampling and the synthetic
//! phantom generator.
//!
//! Folder layout: `root/{source,target}/{images,labels}/<id>.png`, 8-bit
//! grayscale, labels 0/255. Target labels are only ever read by evaluation.

mod manifest;
mod phantom;
mod preprocess;
mod sampler;

pub use manifest::{load_manifest, DatasetManifest, Fov, Split, TestEntry, TrainSample};
pub use phantom::{
    generate_phantoms, PhantomSpec, MAX_VESSEL_FRACTION, MIN_VESSEL_FRACTION,
};
pub use preprocess::{
    load_gray, preprocess, preprocess_image, preprocess_mask, resize_bilinear, resize_nearest,
    save_gray, GrayImageF32,
};
pub use sampler::{sample_unpaired, EpochSampler, LoadedDataset};
