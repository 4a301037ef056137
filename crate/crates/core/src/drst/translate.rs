//! The two-step translation procedure: swap style codes to translate, swap
//! them again on the translated images to reconstruct the originals.

use crate::error::{Error, Result};
use crate::types::{ContentMap, DomainTag, ImageBatch, StyleCode};

/// Extracts domain-invariant spatial features.
pub trait ContentEncode {
    fn encode_content(&self, img: &ImageBatch) -> Result<ContentMap>;
}

/// Extracts the domain-specific flat style code.
pub trait StyleEncode {
    fn encode_style(&self, img: &ImageBatch) -> Result<StyleCode>;
}

/// Renders an image in one domain's style from content features and a style
/// code.
pub trait Generate {
    fn generate(&self, content: &ContentMap, style: &StyleCode) -> Result<ImageBatch>;
}

/// Access to the per-domain encoder/generator parts used by translation.
/// `generator(d)` produces images styled like domain `d`.
pub trait Translator {
    fn content_encoder(&self, domain: DomainTag) -> &dyn ContentEncode;
    fn style_encoder(&self, domain: DomainTag) -> &dyn StyleEncode;
    fn generator(&self, domain: DomainTag) -> &dyn Generate;
}

/// Latent codes captured during the first translation step.
#[derive(Clone, Debug)]
pub struct TranslationLatents {
    pub content_src: ContentMap,
    pub content_tgt: ContentMap,
    pub style_src: StyleCode,
    pub style_tgt: StyleCode,
}

/// Output of the translation procedure. After step 1 only the translated
/// images and latents are populated; step 2 fills in the reconstructions.
#[derive(Clone, Debug, Default)]
pub struct TranslationResult {
    x_hat: Option<ImageBatch>,
    y_hat: Option<ImageBatch>,
    x_rec: Option<ImageBatch>,
    y_rec: Option<ImageBatch>,
    latents: Option<TranslationLatents>,
}

impl TranslationResult {
    /// Source-style image carrying the target batch's content.
    pub fn x_hat(&self) -> Result<&ImageBatch> {
        self.x_hat.as_ref().ok_or_else(|| Error::state("translation step 1 has not run"))
    }

    /// Target-style image carrying the source batch's content.
    pub fn y_hat(&self) -> Result<&ImageBatch> {
        self.y_hat.as_ref().ok_or_else(|| Error::state("translation step 1 has not run"))
    }

    pub fn x_rec(&self) -> Result<&ImageBatch> {
        self.x_rec.as_ref().ok_or_else(|| Error::state("translation step 2 has not run"))
    }

    pub fn y_rec(&self) -> Result<&ImageBatch> {
        self.y_rec.as_ref().ok_or_else(|| Error::state("translation step 2 has not run"))
    }

    pub fn latents(&self) -> Result<&TranslationLatents> {
        self.latents.as_ref().ok_or_else(|| Error::state("translation step 1 has not run"))
    }

    pub fn has_reconstructions(&self) -> bool {
        self.x_rec.is_some() && self.y_rec.is_some()
    }
}

fn check_pair(x: &ImageBatch, y: &ImageBatch) -> Result<()> {
    if x.domain() != DomainTag::Source {
        return Err(Error::state(format!("x must be tagged source, got {}", x.domain())));
    }
    if y.domain() != DomainTag::Target {
        return Err(Error::state(format!("y must be tagged target, got {}", y.domain())));
    }
    if x.len() != y.len() {
        return Err(Error::shape(format!(
            "unpaired batches must have equal size, got {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.side() != y.side() {
        return Err(Error::shape(format!(
            "spatial sizes differ: {} vs {}",
            x.side(),
            y.side()
        )));
    }
    Ok(())
}

/// First translation step: encode both batches, swap style codes, generate
/// the cross-domain images.
///
/// `x_hat` is generated by the source-style generator from `x`'s style and
/// `y`'s content; `y_hat` by the target-style generator from `y`'s style and
/// `x`'s content. Translated images inherit the id of the image providing
/// the content.
pub fn translate_step1(
    t: &dyn Translator,
    x: &ImageBatch,
    y: &ImageBatch,
) -> Result<TranslationResult> {
    check_pair(x, y)?;
    let content_src = t.content_encoder(DomainTag::Source).encode_content(x)?;
    let content_tgt = t.content_encoder(DomainTag::Target).encode_content(y)?;
    let style_src = t.style_encoder(DomainTag::Source).encode_style(x)?;
    let style_tgt = t.style_encoder(DomainTag::Target).encode_style(y)?;

    let x_hat = t
        .generator(DomainTag::Source)
        .generate(&content_tgt, &style_src)?
        .with_ids(y.ids().to_vec())?;
    let y_hat = t
        .generator(DomainTag::Target)
        .generate(&content_src, &style_tgt)?
        .with_ids(x.ids().to_vec())?;
    debug_assert_eq!(x_hat.domain(), DomainTag::Source);
    debug_assert_eq!(y_hat.domain(), DomainTag::Target);

    Ok(TranslationResult {
        x_hat: Some(x_hat),
        y_hat: Some(y_hat),
        x_rec: None,
        y_rec: None,
        latents: Some(TranslationLatents { content_src, content_tgt, style_src, style_tgt }),
    })
}

/// Second translation step: re-encode the translated images, swap styles
/// again and reconstruct both originals.
pub fn translate_step2(t: &dyn Translator, partial: &TranslationResult) -> Result<TranslationResult> {
    let x_hat = partial.x_hat()?;
    let y_hat = partial.y_hat()?;

    let style_from_x_hat = t.style_encoder(DomainTag::Source).encode_style(x_hat)?;
    let content_from_y_hat = t.content_encoder(DomainTag::Target).encode_content(y_hat)?;
    let x_rec = t
        .generator(DomainTag::Source)
        .generate(&content_from_y_hat, &style_from_x_hat)?
        .with_ids(y_hat.ids().to_vec())?;

    let style_from_y_hat = t.style_encoder(DomainTag::Target).encode_style(y_hat)?;
    let content_from_x_hat = t.content_encoder(DomainTag::Source).encode_content(x_hat)?;
    let y_rec = t
        .generator(DomainTag::Target)
        .generate(&content_from_x_hat, &style_from_y_hat)?
        .with_ids(x_hat.ids().to_vec())?;

    Ok(TranslationResult {
        x_hat: Some(x_hat.clone()),
        y_hat: Some(y_hat.clone()),
        x_rec: Some(x_rec),
        y_rec: Some(y_rec),
        latents: partial.latents.clone(),
    })
}
