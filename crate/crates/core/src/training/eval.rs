use std::fs;
use std::path::Path;

use crate::data::{pad_reflect, write_image, write_mask, EdgeMap, Image, LabelMap, Sample};
use crate::metrics::{ConfusionMatrix, MetricReport};
use crate::network::{argmax_channels, Network};
use crate::{Error, Result};

/// Network output for one image, cropped back to the image size.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub id: String,
    pub mask: LabelMap,
    pub edge: Option<EdgeMap>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: MetricReport,
    pub predictions: Vec<Prediction>,
}

fn crop_labels(labels: &[u8], padded_width: usize, height: usize, width: usize) -> LabelMap {
    let mut out = Vec::with_capacity(height * width);
    for y in 0..height {
        out.extend_from_slice(&labels[y * padded_width..y * padded_width + width]);
    }
    LabelMap::new(height, width, out).expect("cropped size matches")
}

/// Inference on a single image. Sizes that are not multiples of 16 are reflect-padded
/// and the padding is removed from the prediction.
pub fn predict_image(net: &Network, image: &Image) -> Result<(LabelMap, Option<EdgeMap>)> {
    let (h, w) = (image.height(), image.width());
    if h == 0 || w == 0 {
        return Err(Error::InvalidArgument("cannot predict on an empty image".into()));
    }
    let (ph, pw) = (h.div_ceil(16) * 16, w.div_ceil(16) * 16);
    let input = if (ph, pw) == (h, w) {
        image.to_tensor()
    } else {
        pad_reflect(image, ph, pw).to_tensor()
    };
    let out = net.forward(&input)?;
    let mask = crop_labels(&argmax_channels(&out.seg_logits)[0], pw, h, w);
    let edge = out
        .edge_logits
        .map(|e| crop_labels(&argmax_channels(&e)[0], pw, h, w));
    Ok((mask, edge))
}

/// Inference over `samples` and a pooled (or per-image averaged) metric report.
pub fn evaluate(net: &Network, samples: &[Sample], per_image: bool, config_hash: &str) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("evaluation dataset is empty".into()));
    }
    let classes = net.config().num_classes;
    for s in samples {
        if let Some(v) = s.mask.max_label().filter(|&v| v as usize >= classes) {
            return Err(Error::InvalidArgument(format!(
                "sample {} has label {v} but the network predicts {classes} classes",
                s.id
            )));
        }
    }
    let mut seg = Vec::with_capacity(samples.len());
    let mut edge = Vec::new();
    let mut predictions = Vec::with_capacity(samples.len());
    for s in samples {
        let (mask, edge_pred) = predict_image(net, &s.image)?;
        seg.push(ConfusionMatrix::new(classes).accumulate(&mask, &s.mask)?);
        if let Some(e) = &edge_pred {
            edge.push(ConfusionMatrix::new(2).accumulate(e, &s.edge)?);
        }
        predictions.push(Prediction {
            id: s.id.clone(),
            mask,
            edge: edge_pred,
        });
    }
    let report = if per_image {
        MetricReport::per_image(&seg, &edge, config_hash)?
    } else {
        let merge = |ms: &[ConfusionMatrix]| -> Result<Option<ConfusionMatrix>> {
            let mut it = ms.iter();
            let Some(first) = it.next() else { return Ok(None) };
            it.try_fold(first.clone(), |acc, m| acc.merge(m)).map(Some)
        };
        let pooled = merge(&seg)?.expect("at least one sample");
        MetricReport::from_matrix(&pooled, merge(&edge)?.as_ref(), samples.len(), config_hash)?
    };
    Ok(Evaluation { report, predictions })
}

const CLASS_TINTS: [[f32; 3]; 4] = [
    [0.0, 0.0, 0.0],
    [1.0, 0.85, 0.1],
    [0.1, 0.45, 1.0],
    [0.9, 0.2, 0.9],
];

/// Image blended with a tint per predicted class, with predicted edge pixels drawn in green.
pub fn overlay(image: &Image, mask: &LabelMap, edge: Option<&EdgeMap>) -> Image {
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            let label = mask.get(y, x) as usize;
            let mut rgb = image.pixel(y, x);
            if label > 0 {
                let tint = CLASS_TINTS[label.min(CLASS_TINTS.len() - 1)];
                for (v, t) in rgb.iter_mut().zip(tint) {
                    *v = 0.55 * *v + 0.45 * t;
                }
            }
            if edge.is_some_and(|e| e.get(y, x) == 1) {
                rgb = [0.1, 1.0, 0.2];
            }
            out.set_pixel(y, x, rgb);
        }
    }
    out
}

/// Writes `<id>_mask.png` (class indices) and `<id>_overlay.png` for each prediction.
pub fn write_predictions(dir: &Path, samples: &[Sample], predictions: &[Prediction]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (s, p) in samples.iter().zip(predictions) {
        write_mask(&dir.join(format!("{}_mask.png", p.id)), &p.mask)?;
        write_image(
            &dir.join(format!("{}_overlay.png", p.id)),
            &overlay(&s.image, &p.mask, p.edge.as_ref()),
        )?;
    }
    Ok(())
}
