//! Lovász-Softmax loss and the joint segmentation/edge objective.
//!
//! All quantities are `f64` and laid out as `N × C` row-major matrices, one row per
//! pixel. For every class `c` the per-pixel errors `m(c)` are sorted in decreasing
//! order and dotted with the increments of the cumulative Jaccard loss along that
//! order ([`lovasz_grad`]); this is the Lovász extension of the Jaccard loss
//! evaluated at `m(c)`. The sorting permutation is treated as constant, so the
//! loss is piecewise linear in the probabilities and its gradient is exact away
//! from ties.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Probability tolerance for row sums.
const ROW_SUM_TOL: f64 = 1e-5;

/// Per-pixel class probabilities, `pixels × classes`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbMap {
    pixels: usize,
    classes: usize,
    values: Vec<f64>,
}

impl ProbMap {
    /// Wraps probabilities after checking range and row normalization.
    pub fn new(classes: usize, values: Vec<f64>) -> Result<Self> {
        if classes == 0 || !values.len().is_multiple_of(classes) {
            return Err(Error::ShapeMismatch(format!(
                "{} probabilities do not form rows of {classes} classes",
                values.len()
            )));
        }
        for (i, row) in values.chunks(classes).enumerate() {
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidArgument(format!(
                    "pixel {i}: probabilities {row:?} outside [0, 1]"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidArgument(format!(
                    "pixel {i}: probabilities sum to {sum}"
                )));
            }
        }
        Ok(Self {
            pixels: values.len() / classes,
            classes,
            values,
        })
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, pixel: usize) -> &[f64] {
        &self.values[pixel * self.classes..(pixel + 1) * self.classes]
    }

    pub fn get(&self, pixel: usize, class: usize) -> f64 {
        self.values[pixel * self.classes + class]
    }
}

/// Ground-truth class index per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GroundTruth {
    labels: Vec<usize>,
}

impl GroundTruth {
    pub fn new(labels: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::InvalidArgument(format!(
                "pixel {i}: label {l} is not below class count {classes}"
            )));
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Per-pixel errors `m(c)` for one class, each in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorVector(Vec<f64>);

impl ErrorVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Which classes enter the class average.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassAveraging {
    /// Mean over all `C` classes; a class without foreground pixels contributes 0.
    #[default]
    AllClasses,
    /// Mean over classes that have at least one foreground pixel.
    PresentOnly,
}

/// Row-wise softmax of an `N × C` logit matrix, shifted by the row maximum.
pub fn softmax(logits: &[f64], classes: usize) -> Result<ProbMap> {
    if classes == 0 || !logits.len().is_multiple_of(classes) {
        return Err(Error::ShapeMismatch(format!(
            "{} logits do not form rows of {classes} classes",
            logits.len()
        )));
    }
    if let Some(i) = logits.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "logit {} of pixel {} is {}",
            i % classes,
            i / classes,
            logits[i]
        )));
    }
    let mut values = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let start = values.len();
        let mut sum = 0.0;
        for &z in row {
            let e = (z - max).exp();
            sum += e;
            values.push(e);
        }
        values[start..].iter_mut().for_each(|v| *v /= sum);
    }
    Ok(ProbMap {
        pixels: logits.len() / classes,
        classes,
        values,
    })
}

/// Pulls a gradient with respect to probabilities back through [`softmax`].
pub fn softmax_backward(probs: &ProbMap, dprobs: &[f64]) -> Vec<f64> {
    let c = probs.classes;
    let mut out = Vec::with_capacity(dprobs.len());
    for (p, d) in probs.values.chunks(c).zip(dprobs.chunks(c)) {
        let dot: f64 = p.iter().zip(d).map(|(a, b)| a * b).sum();
        out.extend(p.iter().zip(d).map(|(pj, dj)| pj * (dj - dot)));
    }
    out
}

fn check_pair(probs: &ProbMap, gt: &GroundTruth) -> Result<()> {
    if probs.pixels != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} probability rows vs {} labels",
            probs.pixels,
            gt.len()
        )));
    }
    if let Some(&l) = gt.labels.iter().find(|&&l| l >= probs.classes) {
        return Err(Error::InvalidArgument(format!(
            "label {l} is not below class count {}",
            probs.classes
        )));
    }
    Ok(())
}

/// `m_i(c) = 1 − p_i(c)` where pixel `i` belongs to `c`, else `p_i(c)`.
pub fn pixel_errors(probs: &ProbMap, gt: &GroundTruth, class: usize) -> Result<ErrorVector> {
    check_pair(probs, gt)?;
    if class >= probs.classes {
        return Err(Error::InvalidArgument(format!(
            "class {class} is not below class count {}",
            probs.classes
        )));
    }
    Ok(ErrorVector(
        gt.labels
            .iter()
            .enumerate()
            .map(|(i, &label)| {
                let p = probs.get(i, class);
                if label == class {
                    1.0 - p
                } else {
                    p
                }
            })
            .collect(),
    ))
}

/// Increments of the Jaccard loss along a ranking of pixels.
///
/// `sorted_gt[k]` says whether the `k`-th ranked pixel is foreground. With `P`
/// foreground pixels, `J_k = 1 − (P − fg_k) / (P + bg_k)` where `fg_k` and `bg_k`
/// count foreground and background pixels among the first `k`. The output is
/// `J_1, J_2 − J_1, …`; it is all zeros when `P = 0`.
pub fn lovasz_grad(sorted_gt: &[bool]) -> Vec<f64> {
    let positives = sorted_gt.iter().filter(|&&g| g).count() as f64;
    if positives == 0.0 {
        return vec![0.0; sorted_gt.len()];
    }
    let mut grad = Vec::with_capacity(sorted_gt.len());
    let (mut fg, mut bg) = (0.0, 0.0);
    let mut prev = 0.0;
    for &g in sorted_gt {
        if g {
            fg += 1.0;
        } else {
            bg += 1.0;
        }
        let jaccard = 1.0 - (positives - fg) / (positives + bg);
        grad.push(jaccard - prev);
        prev = jaccard;
    }
    grad
}

/// Pixel indices ordered by decreasing error; ties keep ascending index order.
fn descending_order(errors: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]));
    order
}

/// Lovász-Softmax loss and its gradient with respect to the probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct LovaszOutput {
    pub loss: f64,
    /// `N × C`, row-major, same layout as the probabilities.
    pub dprobs: Vec<f64>,
    /// Per-class Lovász-extension values before averaging.
    pub per_class: Vec<f64>,
}

pub fn lovasz_softmax(probs: &ProbMap, gt: &GroundTruth, averaging: ClassAveraging) -> Result<LovaszOutput> {
    check_pair(probs, gt)?;
    if probs.pixels == 0 {
        return Err(Error::InvalidArgument("Lovász loss of an empty prediction".into()));
    }
    let c = probs.classes;
    let mut per_class = vec![0.0; c];
    let mut class_grads: Vec<Vec<(usize, f64)>> = Vec::with_capacity(c);
    let mut present = 0usize;
    for (class, slot) in per_class.iter_mut().enumerate() {
        let errors = pixel_errors(probs, gt, class)?.into_vec();
        let order = descending_order(&errors);
        let sorted_fg: Vec<bool> = order.iter().map(|&i| gt.labels[i] == class).collect();
        if sorted_fg.iter().any(|&g| g) {
            present += 1;
        }
        let weights = lovasz_grad(&sorted_fg);
        *slot = order.iter().zip(&weights).map(|(&i, w)| errors[i] * w).sum();
        class_grads.push(order.into_iter().zip(weights).collect());
    }
    let denom = match averaging {
        ClassAveraging::AllClasses => c,
        ClassAveraging::PresentOnly => present,
    };
    let mut dprobs = vec![0.0; probs.values.len()];
    if denom == 0 {
        return Ok(LovaszOutput {
            loss: 0.0,
            dprobs,
            per_class,
        });
    }
    let scale = 1.0 / denom as f64;
    for (class, grads) in class_grads.iter().enumerate() {
        for &(i, w) in grads {
            let sign = if gt.labels[i] == class { -1.0 } else { 1.0 };
            dprobs[i * c + class] += scale * sign * w;
        }
    }
    Ok(LovaszOutput {
        loss: per_class.iter().sum::<f64>() * scale,
        dprobs,
        per_class,
    })
}

/// Mean over all classes of the per-class Lovász extension of the Jaccard loss.
pub fn lovasz_softmax_loss(probs: &ProbMap, gt: &GroundTruth) -> Result<f64> {
    Ok(lovasz_softmax(probs, gt, ClassAveraging::AllClasses)?.loss)
}

/// Weight of the segmentation term in the joint objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub averaging: ClassAveraging,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.3,
            averaging: ClassAveraging::AllClasses,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64) -> Result<Self> {
        let w = Self {
            alpha,
            ..Self::default()
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidArgument(format!(
                "loss weight alpha = {} is outside [0, 1]",
                self.alpha
            )));
        }
        Ok(())
    }

    /// `alpha · seg + (1 − alpha) · edge`.
    pub fn combine(&self, seg: f64, edge: f64) -> f64 {
        self.alpha * seg + (1.0 - self.alpha) * edge
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TotalLoss {
    pub total: f64,
    pub seg: f64,
    pub edge: f64,
}

pub fn total_loss(
    seg_probs: &ProbMap,
    edge_probs: &ProbMap,
    seg_gt: &GroundTruth,
    edge_gt: &GroundTruth,
    weights: &LossWeights,
) -> Result<TotalLoss> {
    weights.validate()?;
    if edge_probs.classes != 2 {
        return Err(Error::ShapeMismatch(format!(
            "edge stream has {} classes, expected 2",
            edge_probs.classes
        )));
    }
    let seg = lovasz_softmax(seg_probs, seg_gt, weights.averaging)?.loss;
    let edge = lovasz_softmax(edge_probs, edge_gt, weights.averaging)?.loss;
    Ok(TotalLoss {
        total: weights.combine(seg, edge),
        seg,
        edge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(classes: usize, v: &[f64]) -> ProbMap {
        ProbMap::new(classes, v.to_vec()).unwrap()
    }

    fn gt(labels: &[usize], classes: usize) -> GroundTruth {
        GroundTruth::new(labels.to_vec(), classes).unwrap()
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0], 2).unwrap().values(), &[0.5, 0.5]);
        for x in [-1e6, -3.5, 0.0, 42.0, 1e300] {
            let p = softmax(&[x, x, x], 3).unwrap();
            for &v in p.values() {
                assert!((v - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        let e = std::f64::consts::E;
        let p = softmax(&[1.0, 0.0], 2).unwrap();
        assert!((p.get(0, 0) - e / (e + 1.0)).abs() < 1e-15);
        assert!((p.get(0, 0) - 0.7311).abs() < 1e-4);
        assert!((p.get(0, 1) - 0.2689).abs() < 1e-4);
    }

    #[test]
    fn softmax_is_stable_and_order_preserving() {
        let p = softmax(&[1000.0, 999.0, -1000.0], 3).unwrap();
        assert!(p.values().iter().all(|v| v.is_finite()));
        assert!(p.get(0, 0) > p.get(0, 1) && p.get(0, 1) > p.get(0, 2));
        assert!((p.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax(&[0.0, f64::NAN], 2), Err(Error::NonFinite(_))));
        assert!(matches!(softmax(&[f64::INFINITY, 0.0], 2), Err(Error::NonFinite(_))));
    }

    #[test]
    fn pixel_error_branches() {
        let p = probs(2, &[0.9, 0.1]);
        assert!((pixel_errors(&p, &gt(&[0], 2), 0).unwrap().as_slice()[0] - 0.1).abs() < 1e-15);
        assert!((pixel_errors(&p, &gt(&[1], 2), 0).unwrap().as_slice()[0] - 0.9).abs() < 1e-15);
        let perfect = probs(3, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        for c in 0..3 {
            let m = pixel_errors(&perfect, &gt(&[0, 2], 3), c).unwrap();
            assert!(m.as_slice().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn pixel_errors_reject_mismatched_lengths() {
        let p = probs(2, &[0.5, 0.5]);
        assert!(matches!(pixel_errors(&p, &gt(&[0, 1], 2), 0), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn lovasz_grad_examples() {
        assert_eq!(lovasz_grad(&[true]), vec![1.0]);
        assert_eq!(lovasz_grad(&[true, false]), vec![1.0, 0.0]);
        assert_eq!(lovasz_grad(&[false, true]), vec![0.5, 0.5]);
        assert_eq!(lovasz_grad(&[false, false]), vec![0.0, 0.0]);
    }

    #[test]
    fn loss_examples() {
        let perfect = probs(2, &[0.0, 1.0, 1.0, 0.0]);
        assert_eq!(lovasz_softmax_loss(&perfect, &gt(&[1, 0], 2)).unwrap(), 0.0);

        let mixed = probs(2, &[0.4, 0.6, 0.6, 0.4]);
        let l = lovasz_softmax_loss(&mixed, &gt(&[1, 0], 2)).unwrap();
        assert!((l - 0.4).abs() < 1e-12, "{l}");
    }

    #[test]
    fn single_wrong_pixel_depends_on_absent_class_convention() {
        // Class 0 has no foreground pixel: it contributes 0 under the all-classes
        // mean and is skipped by the present-only mean.
        let p = probs(2, &[1.0, 0.0]);
        let g = gt(&[1], 2);
        let all = lovasz_softmax(&p, &g, ClassAveraging::AllClasses).unwrap();
        assert_eq!(all.per_class, vec![0.0, 1.0]);
        assert_eq!(all.loss, 0.5);
        let present = lovasz_softmax(&p, &g, ClassAveraging::PresentOnly).unwrap();
        assert_eq!(present.loss, 1.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        let p = ProbMap::new(2, vec![]).unwrap();
        let g = gt(&[], 2);
        assert!(lovasz_softmax_loss(&p, &g).is_err());
    }

    #[test]
    fn total_loss_is_convex_combination() {
        let perfect_seg = probs(2, &[1.0, 0.0]);
        let g = gt(&[0], 2);
        let w = LossWeights::default();
        let t = total_loss(&perfect_seg, &perfect_seg, &g, &g, &w).unwrap();
        assert_eq!((t.total, t.seg, t.edge), (0.0, 0.0, 0.0));

        // Seg loss 1, edge loss 0 (both classes present in each stream).
        let seg = probs(2, &[0.0, 1.0, 1.0, 0.0]);
        let edge = probs(2, &[1.0, 0.0, 0.0, 1.0]);
        let g2 = gt(&[0, 1], 2);
        let t = total_loss(&seg, &edge, &g2, &g2, &w).unwrap();
        assert_eq!(t.seg, 1.0);
        assert_eq!(t.edge, 0.0);
        assert_eq!(t.total, 0.3);
        let t = total_loss(&edge, &seg, &g2, &g2, &w).unwrap();
        assert!((t.total - 0.7).abs() < 1e-15);

        for alpha in [0.0, 0.3, 0.77, 1.0] {
            assert_eq!(LossWeights::new(alpha).unwrap().combine(0.5, 0.5), 0.5);
        }
    }

    #[test]
    fn alpha_out_of_range_is_rejected() {
        assert!(LossWeights::new(-0.1).is_err());
        assert!(LossWeights::new(1.5).is_err());
        let p = probs(2, &[1.0, 0.0]);
        let g = gt(&[0], 2);
        let w = LossWeights {
            alpha: 2.0,
            ..LossWeights::default()
        };
        assert!(total_loss(&p, &p, &g, &g, &w).is_err());
    }

    #[test]
    fn edge_stream_must_be_binary() {
        let p3 = probs(3, &[1.0, 0.0, 0.0]);
        let g = gt(&[0], 3);
        assert!(total_loss(&p3, &p3, &g, &g, &LossWeights::default()).is_err());
    }
}
