//! Images, label maps, edge supervision, augmentation and datasets.

mod augment;
mod edges;
mod io;
mod synthetic;

pub use augment::{augment, pad_reflect, AugmentConfig};
pub use edges::derive_edges;
pub use io::{load_dataset, load_dataset_with_kernel, read_image, read_mask, save_dataset, write_image, write_mask, Manifest};
pub use synthetic::{generate, generate_synthetic, SyntheticSpec};

use etnet_tensor::{Shape, Tensor};

use crate::{Error, Result};

/// RGB image with intensities in `[0, 1]`, stored row-major as `H × W × 3`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {height}x{width} RGB image",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// `1 × 3 × H × W` network input.
    pub fn to_tensor(&self) -> Tensor {
        let plane = self.height * self.width;
        Tensor::from_fn(Shape::new(1, 3, self.height, self.width), |i| {
            self.data[(i % plane) * 3 + i / plane]
        })
    }
}

/// Class index per pixel, row-major `H × W`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

/// Binary boundary map (`0` or `1` per pixel) sharing the [`LabelMap`] layout.
pub type EdgeMap = LabelMap;

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for a {height}x{width} map",
                labels.len()
            )));
        }
        Ok(Self { height, width, labels })
    }

    pub fn filled(height: usize, width: usize, label: u8) -> Self {
        Self {
            height,
            width,
            labels: vec![label; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, label: u8) {
        self.labels[y * self.width + x] = label;
    }

    pub fn max_label(&self) -> Option<u8> {
        self.labels.iter().copied().max()
    }

    pub fn count(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }
}

/// One training or evaluation example.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: Image,
    pub mask: LabelMap,
    pub edge: EdgeMap,
}

impl Sample {
    /// Builds a sample whose edge map is derived from `mask`.
    pub fn new(id: impl Into<String>, image: Image, mask: LabelMap, edge_kernel: usize) -> Result<Self> {
        if (image.height, image.width) != (mask.height, mask.width) {
            return Err(Error::ShapeMismatch(format!(
                "image is {}x{} but mask is {}x{}",
                image.height, image.width, mask.height, mask.width
            )));
        }
        let edge = derive_edges(&mask, edge_kernel)?;
        Ok(Self {
            id: id.into(),
            image,
            mask,
            edge,
        })
    }

    pub fn height(&self) -> usize {
        self.image.height
    }

    pub fn width(&self) -> usize {
        self.image.width
    }
}
