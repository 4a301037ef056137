//! Disentangling representation style transfer: content/style encoders with
//! a shared last content layer, style-swapping generators, domain and
//! content discriminators, and the adversarial / cycle-consistency /
//! content-adversarial objectives tying them together.

mod bundle;
mod losses;
mod nets;
mod step;
mod translate;

pub use bundle::{DrstBundle, DrstOptimizers, SHARED_LAYER_KEY};
pub use losses::{adv_loss, content_adv_loss, cycle_loss, gen_adv_loss, EPS};
pub use nets::DrstNetConfig;
pub use step::{drst_train_step, LossWeights};
pub use translate::{
    translate_step1, translate_step2, ContentEncode, Generate, StyleEncode, TranslationLatents,
    TranslationResult, Translator,
};
