//! Small neural-network toolkit on top of candle: a named parameter bank
//! with seeded deterministic initialization, the layers the translation and
//! segmentation networks are built from, and an Adam optimizer whose state
//! can be checkpointed.

mod adam;
mod bank;
mod layers;

pub use adam::{Adam, AdamCfg};
pub use bank::{fnv1a64, Init, ParamBank};
pub use layers::{adain, instance_stats, upsample2x, Conv2d, Conv2dCfg, InstanceNorm, Linear};
