//! Deterministic two-domain vessel phantom generator.
//!
//! Vessels are random quadratic Bezier polylines with optional branching,
//! rasterized with soft edges. The two domains share the generative process
//! but never the geometry (unpaired by construction) and differ in
//! appearance: domain A renders bright vessels on a dark background with
//! mild noise, domain B inverts the contrast, applies a gamma, blurs and
//! adds stronger noise — the same kind of polarity/texture gap seen between
//! the two retinal modalities this pipeline targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::DomainTag;

use super::manifest::{load_manifest, DatasetManifest};
use super::preprocess::{save_gray, GrayImageF32};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub image_size: usize,
    pub n_per_domain: usize,
    /// Inclusive range of curve count per image.
    pub branches: (usize, usize),
    /// Inclusive range of vessel width in pixels.
    pub width_px: (f64, f64),
    /// Control-point offset as a fraction of the image side.
    pub curvature: f64,
    /// Test ids per domain in the generated manifest.
    pub test_count: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 7,
            image_size: 64,
            n_per_domain: 200,
            branches: (2, 5),
            width_px: (1.0, 3.0),
            curvature: 0.35,
            test_count: 40,
        }
    }
}

/// Acceptable positive-pixel fraction; geometry is redrawn otherwise.
pub const MIN_VESSEL_FRACTION: f64 = 0.02;
pub const MAX_VESSEL_FRACTION: f64 = 0.30;

const STYLE_A_NOISE: f64 = 0.02;
const STYLE_B_NOISE: f64 = 0.05;
const STYLE_B_GAMMA: f64 = 1.5;
const STYLE_B_BLUR_SIGMA: f64 = 0.7;
const BACKGROUND_LEVEL: f32 = 0.12;
const VESSEL_GAIN: f32 = 0.75;

fn sample_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen::<f64>().max(1e-12);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Clone, Copy)]
struct Curve {
    p0: (f64, f64),
    p1: (f64, f64),
    p2: (f64, f64),
    width: f64,
}

impl Curve {
    fn point(&self, t: f64) -> (f64, f64) {
        let u = 1.0 - t;
        (
            u * u * self.p0.0 + 2.0 * u * t * self.p1.0 + t * t * self.p2.0,
            u * u * self.p0.1 + 2.0 * u * t * self.p1.1 + t * t * self.p2.1,
        )
    }
}

fn random_point(rng: &mut ChaCha8Rng, s: f64) -> (f64, f64) {
    (rng.gen::<f64>() * s, rng.gen::<f64>() * s)
}

fn make_curve(rng: &mut ChaCha8Rng, spec: &PhantomSpec, start: Option<(f64, f64)>) -> Curve {
    let s = spec.image_size as f64;
    let p0 = start.unwrap_or_else(|| random_point(rng, s));
    let mut p2 = random_point(rng, s);
    // Avoid degenerate short strokes.
    for _ in 0..16 {
        let d2 = (p2.0 - p0.0).powi(2) + (p2.1 - p0.1).powi(2);
        if d2 >= (s * 0.35).powi(2) {
            break;
        }
        p2 = random_point(rng, s);
    }
    let mid = ((p0.0 + p2.0) / 2.0, (p0.1 + p2.1) / 2.0);
    let dir = (p2.0 - p0.0, p2.1 - p0.1);
    let len = (dir.0 * dir.0 + dir.1 * dir.1).sqrt().max(1e-6);
    let normal = (-dir.1 / len, dir.0 / len);
    let offset = (rng.gen::<f64>() * 2.0 - 1.0) * spec.curvature * s;
    let p1 = (mid.0 + normal.0 * offset, mid.1 + normal.1 * offset);
    let width = spec.width_px.0 + rng.gen::<f64>() * (spec.width_px.1 - spec.width_px.0);
    Curve { p0, p1, p2, width }
}

/// Stamps soft disks along the curve into the coverage map.
fn rasterize(curve: &Curve, size: usize, coverage: &mut [f32]) {
    let steps = size * 3;
    let radius = curve.width / 2.0;
    let reach = (radius + 1.0).ceil() as i64;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (cx, cy) = curve.point(t);
        let (icx, icy) = (cx.round() as i64, cy.round() as i64);
        for dy in -reach..=reach {
            for dx in -reach..=reach {
                let (px, py) = (icx + dx, icy + dy);
                if px < 0 || py < 0 || px >= size as i64 || py >= size as i64 {
                    continue;
                }
                let d = (((px as f64 - cx).powi(2) + (py as f64 - cy).powi(2)) as f64).sqrt();
                // 1 inside radius - 0.5, linear falloff to radius + 0.5.
                let c = (radius + 0.5 - d).clamp(0.0, 1.0) as f32;
                let idx = (py as usize) * size + px as usize;
                if c > coverage[idx] {
                    coverage[idx] = c;
                }
            }
        }
    }
}

/// Draws one vessel tree and returns its soft coverage map, retrying until
/// the positive fraction lands inside the accepted band.
fn draw_geometry(rng: &mut ChaCha8Rng, spec: &PhantomSpec) -> Result<Vec<f32>> {
    let size = spec.image_size;
    for _ in 0..1000 {
        let mut coverage = vec![0f32; size * size];
        let n_curves = rng.gen_range(spec.branches.0..=spec.branches.1);
        let mut curves: Vec<Curve> = Vec::with_capacity(n_curves);
        for c in 0..n_curves {
            let start = if c > 0 && rng.gen_bool(0.5) {
                // Branch off a point on an earlier curve.
                let parent = curves[rng.gen_range(0..curves.len())];
                let t = 0.3 + rng.gen::<f64>() * 0.4;
                Some(parent.point(t))
            } else {
                None
            };
            let curve = make_curve(rng, spec, start);
            rasterize(&curve, size, &mut coverage);
            curves.push(curve);
        }
        let positive = coverage.iter().filter(|&&v| v >= 0.5).count();
        let frac = positive as f64 / (size * size) as f64;
        if (MIN_VESSEL_FRACTION..=MAX_VESSEL_FRACTION).contains(&frac) {
            return Ok(coverage);
        }
    }
    Err(Error::state(
        "phantom geometry never reached the accepted vessel fraction",
    ))
}

fn gaussian_blur(img: &GrayImageF32, sigma: f64) -> GrayImageF32 {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut kernel = Vec::with_capacity((2 * radius + 1) as usize);
    for i in -radius..=radius {
        kernel.push((-(i as f64).powi(2) / (2.0 * sigma * sigma)).exp());
    }
    let sum: f64 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.into_iter().map(|v| (v / sum) as f32).collect();

    let (w, h) = (img.w as i64, img.h as i64);
    let clamp_x = |x: i64| x.clamp(0, w - 1) as usize;
    let clamp_y = |y: i64| y.clamp(0, h - 1) as usize;
    let mut tmp = vec![0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (k, kv) in kernel.iter().enumerate() {
                let sx = clamp_x(x + k as i64 - radius);
                acc += kv * img.data[y as usize * img.w + sx];
            }
            tmp[y as usize * img.w + x as usize] = acc;
        }
    }
    let mut out = vec![0f32; img.data.len()];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0f32;
            for (k, kv) in kernel.iter().enumerate() {
                let sy = clamp_y(y + k as i64 - radius);
                acc += kv * tmp[sy * img.w + x as usize];
            }
            out[y as usize * img.w + x as usize] = acc;
        }
    }
    GrayImageF32 { w: img.w, h: img.h, data: out }
}

fn render(coverage: &[f32], size: usize, domain: DomainTag, rng: &mut ChaCha8Rng) -> GrayImageF32 {
    let base: Vec<f32> = coverage.iter().map(|&c| BACKGROUND_LEVEL + VESSEL_GAIN * c).collect();
    let mut img = GrayImageF32 { w: size, h: size, data: base };
    let noise_sigma = match domain {
        DomainTag::Source => STYLE_A_NOISE,
        DomainTag::Target => STYLE_B_NOISE,
    };
    if domain == DomainTag::Target {
        for v in &mut img.data {
            let inverted = 1.0 - *v;
            *v = inverted.max(0.0).powf(STYLE_B_GAMMA as f32);
        }
        img = gaussian_blur(&img, STYLE_B_BLUR_SIGMA);
    }
    for v in &mut img.data {
        *v = (*v + (sample_normal(rng) * noise_sigma) as f32).clamp(0.0, 1.0);
    }
    img
}

/// Writes `n_per_domain` images plus masks per domain under
/// `out_dir/{source,target}/{images,labels}` and returns the split manifest.
/// Target masks land in the labels folder that only evaluation reads.
/// The same seed produces bit-identical trees.
pub fn generate_phantoms(spec: &PhantomSpec, out_dir: &Path) -> Result<DatasetManifest> {
    if spec.n_per_domain == 0 {
        return Err(Error::state("need at least one phantom per domain"));
    }
    if spec.test_count >= spec.n_per_domain {
        return Err(Error::state(
            "test_count must be smaller than the per-domain image count",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for domain in [DomainTag::Source, DomainTag::Target] {
        let prefix = match domain {
            DomainTag::Source => "src",
            DomainTag::Target => "tgt",
        };
        for i in 0..spec.n_per_domain {
            let coverage = draw_geometry(&mut rng, spec)?;
            let img = render(&coverage, spec.image_size, domain, &mut rng);
            let mask_data: Vec<f32> =
                coverage.iter().map(|&c| if c >= 0.5 { 1.0 } else { 0.0 }).collect();
            let mask = GrayImageF32 { w: spec.image_size, h: spec.image_size, data: mask_data };
            let id = format!("{prefix}_{i:04}");
            save_gray(&out_dir.join(domain.as_str()).join("images").join(format!("{id}.png")), &img)?;
            save_gray(&out_dir.join(domain.as_str()).join("labels").join(format!("{id}.png")), &mask)?;
        }
    }
    let manifest = load_manifest(out_dir, spec.seed, spec.test_count)?;
    manifest.write_table(&out_dir.join("manifest.txt"))?;
    Ok(manifest)
}
