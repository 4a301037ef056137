//! Collaborative consistency learning: a source-expert and a target-expert
//! segmentation model, Dice supervision, soft-target consistency and the
//! staged joint objective that switches on past the starting flag.

mod losses;
mod unet;
mod wiring;

pub use losses::{ccl_loss, seg_loss, DICE_SMOOTH, EPS};
pub use unet::{predict_from_probs, CclPair, SegModel, SegNetConfig, SegRole};
pub use wiring::{
    joint_loss, joint_loss_with_terms, predict, wire_batch, CclBatchWiring, JointTerms,
};
