//! On-disk dataset layout: `<root>/images/<stem>.png` (8-bit RGB) paired with
//! `<root>/masks/<stem>.png` (8-bit grayscale, pixel value = class index).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Image, LabelMap, Sample, SyntheticSpec};
use crate::{Error, Result};

/// Written alongside generated datasets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub generator: String,
    pub samples: usize,
    pub params: SyntheticSpec,
}

fn img_err(path: &Path) -> impl FnOnce(image::ImageError) -> Error + '_ {
    move |source| Error::Image {
        path: path.to_path_buf(),
        source,
    }
}

pub fn read_image(path: &Path) -> Result<Image> {
    let rgb = image::open(path).map_err(img_err(path))?.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(|v| v as f32 / 255.0).collect();
    Image::new(h as usize, w as usize, data)
}

pub fn write_image(path: &Path, image: &Image) -> Result<()> {
    let raw = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = RgbImage::from_raw(image.width() as u32, image.height() as u32, raw)
        .expect("buffer length matches image dimensions");
    buf.save(path).map_err(img_err(path))
}

pub fn read_mask(path: &Path) -> Result<LabelMap> {
    let gray = image::open(path).map_err(img_err(path))?.to_luma8();
    let (w, h) = gray.dimensions();
    LabelMap::new(h as usize, w as usize, gray.into_raw())
}

pub fn write_mask(path: &Path, mask: &LabelMap) -> Result<()> {
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, mask.labels().to_vec())
        .expect("buffer length matches mask dimensions");
    buf.save(path).map_err(img_err(path))
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if let (true, Some(stem)) = (is_png, path.file_stem().and_then(|s| s.to_str())) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

/// Loads every image under `root/images` with its mask, in stem order, deriving
/// edges with kernel 3.
pub fn load_dataset(root: &Path, classes: usize) -> Result<Vec<Sample>> {
    load_dataset_with_kernel(root, classes, 3)
}

pub fn load_dataset_with_kernel(root: &Path, classes: usize, edge_kernel: usize) -> Result<Vec<Sample>> {
    let images = png_stems(&root.join("images"))?;
    let masks = png_stems(&root.join("masks"))?;
    let missing: Vec<String> = images.keys().filter(|s| !masks.contains_key(*s)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingMask { stems: missing });
    }
    images
        .iter()
        .map(|(stem, image_path)| {
            let mask_path = &masks[stem];
            let image = read_image(image_path)?;
            let mask = read_mask(mask_path)?;
            if let Some(value) = mask.max_label().filter(|&v| v as usize >= classes) {
                return Err(Error::LabelOutOfRange {
                    value,
                    classes,
                    path: mask_path.clone(),
                });
            }
            Sample::new(stem.clone(), image, mask, edge_kernel)
        })
        .collect()
}

/// Writes samples in the dataset layout (plus `manifest.json` when given).
pub fn save_dataset(samples: &[Sample], root: &Path, manifest: Option<&Manifest>) -> Result<()> {
    let (images, masks) = (root.join("images"), root.join("masks"));
    for dir in [&images, &masks] {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    for s in samples {
        write_image(&images.join(format!("{}.png", s.id)), &s.image)?;
        write_mask(&masks.join(format!("{}.png", s.id)), &s.mask)?;
    }
    if let Some(m) = manifest {
        let path = root.join("manifest.json");
        let text = serde_json::to_string_pretty(m)?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}
