//! Cross-modality unsupervised domain adaptation for vessel segmentation.
//!
//! The pipeline has two halves. A disentangling style-transfer stage
//! ([`drst`]) decomposes unpaired images from a labeled source domain and an
//! unlabeled target domain into shared content features and domain-specific
//! style codes, and learns to translate images across domains with
//! adversarial and cycle-consistency training. A collaborative consistency
//! stage ([`ccl`]) then trains one segmentation expert per domain: the
//! source expert learns from ground truth, the target expert learns from
//! translated images carrying source labels plus soft-target consistency
//! with the source expert's outputs.
//!
//! [`data`] provides dataset ingestion, preprocessing and a deterministic
//! synthetic vessel-phantom generator for desk-scale verification;
//! [`metrics`] implements Dice, 95th-percentile Hausdorff distance and the
//! paired t-test; [`train`] orchestrates the three-stage schedule.

pub mod ccl;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod drst;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod train;
pub mod types;
pub(crate) mod util;

pub use error::{Error, Result};
pub use types::{
    normalize_probs, validate_batch, DomainTag, ImageBatch, LossReport, Mask, ProbMap, Stage,
    TrainPhase,
};
