//! Joint geometric and photometric augmentation.
//!
//! The random stream of each call is derived only from `(cfg.seed, step_seed,
//! sample.id)`, so samples can be prepared in any order or on any worker and
//! still reproduce. Draws happen in a fixed order (mirror, scale, rotation,
//! jitter, crop) whether or not a transform ends up being applied.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{derive_edges, Image, LabelMap, Sample};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// When false, training uses the samples exactly as loaded.
    pub enabled: bool,
    /// Probability of a horizontal flip.
    pub mirror_prob: f64,
    /// Uniform range of the isotropic scale factor.
    pub scale_range: [f64; 2],
    /// Uniform range of the rotation angle, in degrees.
    pub rotation_range_deg: [f64; 2],
    /// Probability of applying brightness/contrast/saturation jitter.
    pub color_jitter_prob: f64,
    /// Jitter factors are drawn uniformly from this range.
    pub jitter_range: [f64; 2],
    /// Side of the square output crop.
    pub crop_size: usize,
    /// Kernel used to re-derive edges from the transformed mask; runs take it from the data section.
    #[serde(skip)]
    pub edge_kernel: usize,
    /// Runs set this from their global seed.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            mirror_prob: 0.5,
            scale_range: [0.5, 2.0],
            rotation_range_deg: [-10.0, 10.0],
            color_jitter_prob: 0.5,
            jitter_range: [0.8, 1.2],
            crop_size: 128,
            edge_kernel: 3,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// A configuration that returns every sample of side `crop_size` unchanged.
    pub fn identity(crop_size: usize) -> Self {
        Self {
            mirror_prob: 0.0,
            scale_range: [1.0, 1.0],
            rotation_range_deg: [0.0, 0.0],
            color_jitter_prob: 0.0,
            crop_size,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(0.0..=1.0).contains(&self.mirror_prob) || !(0.0..=1.0).contains(&self.color_jitter_prob) {
            return bad("augmentation probabilities must lie in [0, 1]".into());
        }
        let [lo, hi] = self.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return bad(format!("scale range {:?} must be positive and ordered", self.scale_range));
        }
        if self.rotation_range_deg[0] > self.rotation_range_deg[1] {
            return bad(format!("rotation range {:?} is not ordered", self.rotation_range_deg));
        }
        if !(self.jitter_range[0] > 0.0 && self.jitter_range[0] <= self.jitter_range[1]) {
            return bad(format!("jitter range {:?} must be positive and ordered", self.jitter_range));
        }
        if self.crop_size == 0 || !self.crop_size.is_multiple_of(16) {
            return bad(format!("crop size {} must be a positive multiple of 16", self.crop_size));
        }
        if self.edge_kernel < 3 || self.edge_kernel.is_multiple_of(2) {
            return bad(format!("edge kernel {} must be odd and at least 3", self.edge_kernel));
        }
        Ok(())
    }
}

fn sample_rng(seed: u64, step_seed: u64, id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(step_seed.to_le_bytes());
    h.update(id.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha8Rng::from_seed(digest)
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    let u: f64 = rng.random();
    lo + u * (hi - lo)
}

/// Mirror-without-repeat reflection of an out-of-range index into `0..n`.
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

fn mirror(image: &Image, mask: &LabelMap) -> (Image, LabelMap) {
    let (h, w) = (image.height(), image.width());
    let mut img = Image::zeros(h, w);
    let mut m = LabelMap::filled(h, w, 0);
    for y in 0..h {
        for x in 0..w {
            img.set_pixel(y, x, image.pixel(y, w - 1 - x));
            m.set(y, x, mask.get(y, w - 1 - x));
        }
    }
    (img, m)
}

/// Scales by `scale` and rotates by `angle` (radians) about the centre; the output
/// canvas is the scaled size. Image samples bilinearly, mask by nearest neighbour,
/// both with reflected borders.
fn warp(image: &Image, mask: &LabelMap, scale: f64, angle: f64) -> (Image, LabelMap) {
    let (h, w) = (image.height(), image.width());
    let oh = ((h as f64 * scale).round() as usize).max(1);
    let ow = ((w as f64 * scale).round() as usize).max(1);
    let (sy, sx) = (h as f64 / oh as f64, w as f64 / ow as f64);
    let (cy_in, cx_in) = (h as f64 / 2.0, w as f64 / 2.0);
    let (cy_out, cx_out) = (oh as f64 / 2.0, ow as f64 / 2.0);
    let (sin, cos) = angle.sin_cos();
    let mut img = Image::zeros(oh, ow);
    let mut m = LabelMap::filled(oh, ow, 0);
    for y in 0..oh {
        for x in 0..ow {
            // Output pixel centre, un-rotated, then mapped back onto the input grid.
            let (dy, dx) = (y as f64 + 0.5 - cy_out, x as f64 + 0.5 - cx_out);
            let ry = -sin * dx + cos * dy;
            let rx = cos * dx + sin * dy;
            let src_y = ry * sy + cy_in - 0.5;
            let src_x = rx * sx + cx_in - 0.5;

            let ny = reflect(src_y.round() as isize, h);
            let nx = reflect(src_x.round() as isize, w);
            m.set(y, x, mask.get(ny, nx));

            let (y0, x0) = (src_y.floor(), src_x.floor());
            let (fy, fx) = ((src_y - y0) as f32, (src_x - x0) as f32);
            let (y0, x0) = (y0 as isize, x0 as isize);
            let (ya, yb) = (reflect(y0, h), reflect(y0 + 1, h));
            let (xa, xb) = (reflect(x0, w), reflect(x0 + 1, w));
            let mut rgb = [0f32; 3];
            let (p00, p01, p10, p11) = (
                image.pixel(ya, xa),
                image.pixel(ya, xb),
                image.pixel(yb, xa),
                image.pixel(yb, xb),
            );
            for c in 0..3 {
                let top = p00[c] + fx * (p01[c] - p00[c]);
                let bottom = p10[c] + fx * (p11[c] - p10[c]);
                rgb[c] = top + fy * (bottom - top);
            }
            img.set_pixel(y, x, rgb);
        }
    }
    (img, m)
}

fn jitter(image: &mut Image, brightness: f32, contrast: f32, saturation: f32) {
    let gray = |p: &[f32]| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    for p in image.data_mut().chunks_mut(3) {
        p.iter_mut().for_each(|v| *v = (*v * brightness).clamp(0.0, 1.0));
    }
    let mean = image.data().chunks(3).map(|p| gray(p) as f64).sum::<f64>() as f32
        / (image.height() * image.width()).max(1) as f32;
    for p in image.data_mut().chunks_mut(3) {
        p.iter_mut()
            .for_each(|v| *v = ((*v - mean) * contrast + mean).clamp(0.0, 1.0));
    }
    for p in image.data_mut().chunks_mut(3) {
        let g = gray(p);
        p.iter_mut()
            .for_each(|v| *v = ((*v - g) * saturation + g).clamp(0.0, 1.0));
    }
}

/// Reflect-pads to at least `size × size`, then cuts a `size × size` window at `(top, left)`.
fn crop(image: &Image, mask: &LabelMap, size: usize, top: usize, left: usize) -> (Image, LabelMap) {
    let (h, w) = (image.height(), image.width());
    let mut img = Image::zeros(size, size);
    let mut m = LabelMap::filled(size, size, 0);
    for y in 0..size {
        let sy = reflect((top + y) as isize, h);
        for x in 0..size {
            let sx = reflect((left + x) as isize, w);
            img.set_pixel(y, x, image.pixel(sy, sx));
            m.set(y, x, mask.get(sy, sx));
        }
    }
    (img, m)
}

/// Extends `image` to `height × width` (each at least the current size) by reflecting about
/// the last row and column.
pub fn pad_reflect(image: &Image, height: usize, width: usize) -> Image {
    let mut out = Image::zeros(height, width);
    for y in 0..height {
        let sy = reflect(y as isize, image.height());
        for x in 0..width {
            out.set_pixel(y, x, image.pixel(sy, reflect(x as isize, image.width())));
        }
    }
    out
}

pub fn augment(sample: &Sample, cfg: &AugmentConfig, step_seed: u64) -> Result<Sample> {
    cfg.validate()?;
    let mut rng = sample_rng(cfg.seed, step_seed, &sample.id);

    let do_mirror = rng.random::<f64>() < cfg.mirror_prob;
    let scale = uniform(&mut rng, cfg.scale_range);
    let angle = uniform(&mut rng, cfg.rotation_range_deg).to_radians();
    let do_jitter = rng.random::<f64>() < cfg.color_jitter_prob;
    let factors = [
        uniform(&mut rng, cfg.jitter_range) as f32,
        uniform(&mut rng, cfg.jitter_range) as f32,
        uniform(&mut rng, cfg.jitter_range) as f32,
    ];

    let (mut image, mut mask) = if do_mirror {
        mirror(&sample.image, &sample.mask)
    } else {
        (sample.image.clone(), sample.mask.clone())
    };
    if scale != 1.0 || angle != 0.0 {
        (image, mask) = warp(&image, &mask, scale, angle);
    }
    if do_jitter {
        jitter(&mut image, factors[0], factors[1], factors[2]);
    }

    let size = cfg.crop_size;
    let top = rng.random_range(0..=image.height().saturating_sub(size));
    let left = rng.random_range(0..=image.width().saturating_sub(size));
    if (image.height(), image.width(), top, left) != (size, size, 0, 0) {
        (image, mask) = crop(&image, &mask, size, top, left);
    }

    let edge = derive_edges(&mask, cfg.edge_kernel)?;
    Ok(Sample {
        id: sample.id.clone(),
        image,
        mask,
        edge,
    })
}
