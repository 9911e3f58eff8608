//! Nested-ellipse images resembling fundus disc/cup crops.
//!
//! Each image has a background, a rotated ellipse (class 1) and, for three
//! classes, a concentric ellipse with the same orientation scaled by a factor
//! below one (class 2). Because the inner ellipse is a scaled copy of the outer
//! one around the same centre, every class-2 pixel lies inside the class-1
//! ellipse.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{Image, LabelMap, Sample};
use crate::{Error, Result};

/// Generator parameters; recorded in the dataset manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub n: usize,
    pub size: usize,
    pub classes: usize,
    pub seed: u64,
    /// Outer semi-axes as fractions of the image side.
    pub outer_axis_range: [f64; 2],
    /// Inner/outer axis ratio.
    pub inner_ratio_range: [f64; 2],
    pub noise_std: f64,
    pub edge_kernel: usize,
}

impl SyntheticSpec {
    pub fn new(n: usize, size: usize, classes: usize, seed: u64) -> Self {
        Self {
            n,
            size,
            classes,
            seed,
            outer_axis_range: [0.18, 0.35],
            inner_ratio_range: [0.4, 0.65],
            noise_std: 0.04,
            edge_kernel: 3,
        }
    }
}

const BACKGROUND: [f32; 3] = [0.45, 0.16, 0.10];
const DISC: [f32; 3] = [0.85, 0.48, 0.22];
const CUP: [f32; 3] = [0.96, 0.86, 0.62];

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    /// Whether `(y, x)` (pixel centre) falls within the ellipse scaled by `k`.
    fn contains(&self, y: f64, x: f64, k: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.theta.sin_cos();
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / (self.a * k)).powi(2) + (v / (self.b * k)).powi(2) <= 1.0
    }
}

fn one(spec: &SyntheticSpec, index: usize) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index as u64);
    let size = spec.size as f64;
    let [lo, hi] = spec.outer_axis_range;
    let a = rng.random_range(lo..=hi) * size;
    let b = rng.random_range(lo..=hi) * size;
    let theta = rng.random_range(0.0..std::f64::consts::PI);
    let margin = a.max(b) + 1.0;
    let cy = rng.random_range(margin..=(size - margin).max(margin));
    let cx = rng.random_range(margin..=(size - margin).max(margin));
    let [rlo, rhi] = spec.inner_ratio_range;
    let ratio = rng.random_range(rlo..=rhi);

    let mut palette = [BACKGROUND, DISC, CUP];
    for colour in palette.iter_mut() {
        for v in colour.iter_mut() {
            *v = (*v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0);
        }
    }
    let noise = Normal::new(0.0, spec.noise_std).expect("noise std is finite and non-negative");
    // Low-frequency illumination ramp across the image.
    let (gy, gx) = (rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08));

    let shape = Ellipse { cy, cx, a, b, theta };
    let mut mask = LabelMap::filled(spec.size, spec.size, 0);
    let mut image = Image::zeros(spec.size, spec.size);
    for y in 0..spec.size {
        for x in 0..spec.size {
            let (py, px) = (y as f64 + 0.5, x as f64 + 0.5);
            let mut label = 0u8;
            if shape.contains(py, px, 1.0) {
                label = 1;
                if spec.classes == 3 && shape.contains(py, px, ratio) {
                    label = 2;
                }
            }
            mask.set(y, x, label);
            let shade = (gy * (py / size - 0.5) + gx * (px / size - 0.5)) as f32;
            let mut rgb = palette[label as usize];
            for v in rgb.iter_mut() {
                *v = (*v + shade + noise.sample(&mut rng) as f32).clamp(0.0, 1.0);
            }
            image.set_pixel(y, x, rgb);
        }
    }
    Sample::new(format!("synth_{index:05}"), image, mask, spec.edge_kernel)
}

pub fn generate(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    if !(2..=3).contains(&spec.classes) {
        return Err(Error::InvalidArgument(format!(
            "synthetic data supports 2 or 3 classes, got {}",
            spec.classes
        )));
    }
    if spec.size == 0 || !spec.size.is_multiple_of(16) {
        return Err(Error::InvalidArgument(format!(
            "synthetic image size {} must be a positive multiple of 16",
            spec.size
        )));
    }
    (0..spec.n).map(|i| one(spec, i)).collect()
}

/// `n` nested-ellipse samples of side `size` with the default generator ranges.
pub fn generate_synthetic(n: usize, size: usize, classes: usize, seed: u64) -> Result<Vec<Sample>> {
    generate(&SyntheticSpec::new(n, size, classes, seed))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inner_class_is_nested() {
        for s in generate_synthetic(12, 64, 3, 9).unwrap() {
            assert!(s.mask.count(2) > 0);
            // A ring of class 1 separates class 2 from the background everywhere.
            for y in 1..63 {
                for x in 1..63 {
                    if s.mask.get(y, x) == 2 {
                        for (dy, dx) in [(0, 1), (2, 1), (1, 0), (1, 2)] {
                            assert_ne!(s.mask.get(y + dy - 1, x + dx - 1), 0);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        assert_eq!(generate_synthetic(8, 32, 3, 3).unwrap(), generate_synthetic(8, 32, 3, 3).unwrap());
        assert_ne!(generate_synthetic(2, 32, 3, 3).unwrap(), generate_synthetic(2, 32, 3, 4).unwrap());
    }

    #[test]
    fn foreground_fraction_within_bounds() {
        for classes in [2, 3] {
            for s in generate_synthetic(40, 96, classes, 21).unwrap() {
                let total = (96 * 96) as f64;
                let disc = s.mask.count(1) as f64 / total;
                let whole = (s.mask.count(1) + s.mask.count(2)) as f64 / total;
                assert!((0.05..=0.5).contains(&disc), "class-1 fraction {disc}");
                assert!((0.05..=0.5).contains(&whole), "ellipse fraction {whole}");
            }
        }
    }

    #[test]
    fn two_class_data_has_no_inner_label() {
        for s in generate_synthetic(4, 32, 2, 1).unwrap() {
            assert_eq!(s.mask.count(2), 0);
        }
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(generate_synthetic(1, 64, 4, 0).is_err());
        assert!(generate_synthetic(1, 60, 3, 0).is_err());
    }
}
