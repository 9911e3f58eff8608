//! Confusion-matrix metrics: per-class Dice and IoU, mean IoU and pixel accuracy.

use serde::{Deserialize, Serialize};

use crate::data::LabelMap;
use crate::{Error, Result};

/// `counts[t * C + p]` = pixels of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Returns `self` plus the counts of one prediction/ground-truth pair.
    pub fn accumulate(&self, pred: &LabelMap, gt: &LabelMap) -> Result<Self> {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let mut out = self.clone();
        for (&p, &t) in pred.labels().iter().zip(gt.labels()) {
            let (p, t) = (p as usize, t as usize);
            if p >= self.classes || t >= self.classes {
                return Err(Error::InvalidArgument(format!(
                    "label {} is not below class count {}",
                    p.max(t),
                    self.classes
                )));
            }
            out.counts[t * self.classes + p] += 1;
        }
        Ok(out)
    }

    /// Elementwise sum; associative and commutative.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.classes != other.classes {
            return Err(Error::ShapeMismatch(format!(
                "merging {}-class and {}-class matrices",
                self.classes, other.classes
            )));
        }
        Ok(Self {
            classes: self.classes,
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
        })
    }

    fn tp_fp_fn(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let predicted: u64 = (0..self.classes).map(|t| self.get(t, c)).sum();
        let actual: u64 = (0..self.classes).map(|p| self.get(c, p)).sum();
        (tp, predicted - tp, actual - tp)
    }

    /// `2·TP / (2·TP + FP + FN)`, or 1 when the class is absent from both maps.
    pub fn dice(&self, c: usize) -> f64 {
        let (tp, fp, fn_) = self.tp_fp_fn(c);
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            1.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    /// `TP / (TP + FP + FN)`; `None` when the class is absent from both maps.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let (tp, fp, fn_) = self.tp_fp_fn(c);
        let denom = tp + fp + fn_;
        (denom > 0).then(|| tp as f64 / denom as f64)
    }

    /// Mean IoU over classes that occur in the prediction or the ground truth.
    ///
    /// The mean is formed as an exact fraction and rounded once when the counts allow it.
    pub fn miou(&self) -> Result<f64> {
        let fractions: Vec<(u64, u64)> = (0..self.classes)
            .map(|c| self.tp_fp_fn(c))
            .filter(|&(tp, fp, fn_)| tp + fp + fn_ > 0)
            .map(|(tp, fp, fn_)| (tp, tp + fp + fn_))
            .collect();
        if fractions.is_empty() {
            return Err(Error::InvalidArgument("mean IoU of an empty confusion matrix".into()));
        }
        if let Some(v) = exact_mean(&fractions) {
            return Ok(v);
        }
        let sum: f64 = fractions.iter().map(|&(n, d)| n as f64 / d as f64).sum();
        Ok(sum / fractions.len() as f64)
    }

    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::InvalidArgument("accuracy of an empty confusion matrix".into()));
        }
        let trace: u64 = (0..self.classes).map(|c| self.get(c, c)).sum();
        Ok(trace as f64 / total as f64)
    }
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Correctly rounded mean of fractions, or `None` if the reduced result does not fit in 53 bits.
fn exact_mean(fractions: &[(u64, u64)]) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for &(n, d) in fractions {
        let (n, d) = (n as u128, d as u128);
        let g = gcd(den, d);
        let lcm = den.checked_mul(d / g)?;
        num = num.checked_mul(lcm / den)?.checked_add(n.checked_mul(lcm / d)?)?;
        den = lcm;
        let r = gcd(num, den).max(1);
        (num, den) = (num / r, den / r);
    }
    den = den.checked_mul(fractions.len() as u128)?;
    let r = gcd(num, den).max(1);
    (num, den) = (num / r, den / r);
    const LIMIT: u128 = 1 << 53;
    (num <= LIMIT && den <= LIMIT).then(|| num as f64 / den as f64)
}

pub fn dice(cm: &ConfusionMatrix, c: usize) -> f64 {
    cm.dice(c)
}

pub fn miou(cm: &ConfusionMatrix) -> Result<f64> {
    cm.miou()
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    cm.accuracy()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub dice: f64,
    pub iou: Option<f64>,
}

/// Summary of one evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub samples: usize,
    pub per_class: Vec<ClassMetrics>,
    pub miou: f64,
    pub accuracy: f64,
    /// Foreground Dice of the edge prediction, when the network predicts edges.
    pub edge_dice: Option<f64>,
    /// `pooled` (one matrix over all pixels) or `per_image` (metrics averaged over images).
    pub aggregation: String,
    pub config_hash: String,
}

impl MetricReport {
    /// Report over pooled pixels.
    pub fn from_matrix(cm: &ConfusionMatrix, edge: Option<&ConfusionMatrix>, samples: usize, config_hash: &str) -> Result<Self> {
        Ok(Self {
            samples,
            per_class: (0..cm.classes())
                .map(|c| ClassMetrics {
                    class: c,
                    dice: cm.dice(c),
                    iou: cm.iou(c),
                })
                .collect(),
            miou: cm.miou()?,
            accuracy: cm.accuracy()?,
            edge_dice: edge.map(|e| e.dice(1)),
            aggregation: "pooled".into(),
            config_hash: config_hash.into(),
        })
    }

    /// Report averaging per-image metrics; IoU of a class is averaged over images where it occurs.
    pub fn per_image(seg: &[ConfusionMatrix], edge: &[ConfusionMatrix], config_hash: &str) -> Result<Self> {
        let first = seg
            .first()
            .ok_or_else(|| Error::InvalidArgument("per-image report of zero images".into()))?;
        let n = seg.len() as f64;
        let classes = first.classes();
        let mean = |f: &dyn Fn(&ConfusionMatrix) -> f64| seg.iter().map(f).sum::<f64>() / n;
        let mut per_class = Vec::with_capacity(classes);
        for c in 0..classes {
            let ious: Vec<f64> = seg.iter().filter_map(|m| m.iou(c)).collect();
            per_class.push(ClassMetrics {
                class: c,
                dice: mean(&|m| m.dice(c)),
                iou: (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64),
            });
        }
        let mut miou_sum = 0.0;
        let mut acc_sum = 0.0;
        for m in seg {
            miou_sum += m.miou()?;
            acc_sum += m.accuracy()?;
        }
        Ok(Self {
            samples: seg.len(),
            per_class,
            miou: miou_sum / n,
            accuracy: acc_sum / n,
            edge_dice: (!edge.is_empty()).then(|| edge.iter().map(|m| m.dice(1)).sum::<f64>() / edge.len() as f64),
            aggregation: "per_image".into(),
            config_hash: config_hash.into(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(h: usize, w: usize, v: &[u8]) -> LabelMap {
        LabelMap::new(h, w, v.to_vec()).unwrap()
    }

    fn worked_example() -> ConfusionMatrix {
        ConfusionMatrix::new(2)
            .accumulate(&map(2, 2, &[0, 1, 1, 1]), &map(2, 2, &[0, 0, 1, 1]))
            .unwrap()
    }

    #[test]
    fn perfect_prediction_counts_on_diagonal() {
        let m = map(3, 3, &[0; 9]);
        let cm = ConfusionMatrix::new(2).accumulate(&m, &m).unwrap();
        assert_eq!(cm.get(0, 0), 9);
        assert_eq!(cm.total(), 9);
        assert_eq!(cm.dice(0), 1.0);
        assert_eq!(cm.dice(1), 1.0);
        assert_eq!(cm.miou().unwrap(), 1.0);
        assert_eq!(cm.accuracy().unwrap(), 1.0);
    }

    #[test]
    fn accumulate_leaves_the_original_untouched() {
        let zero = ConfusionMatrix::new(2);
        let m = map(1, 2, &[0, 1]);
        let one = zero.accumulate(&m, &m).unwrap();
        assert_eq!(zero.total(), 0);
        assert_eq!(one.total(), 2);
    }

    #[test]
    fn worked_two_by_two_example() {
        let cm = worked_example();
        assert_eq!((cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)), (1, 1, 0, 2));
        assert_eq!(cm.iou(0), Some(0.5));
        assert_eq!(cm.iou(1), Some(2.0 / 3.0));
        assert_eq!(cm.miou().unwrap(), 7.0 / 12.0);
        assert_eq!(cm.accuracy().unwrap(), 0.75);
    }

    #[test]
    fn order_of_accumulation_is_irrelevant() {
        let (a_pred, a_gt) = (map(1, 3, &[0, 1, 2]), map(1, 3, &[2, 1, 0]));
        let (b_pred, b_gt) = (map(2, 1, &[1, 1]), map(2, 1, &[0, 1]));
        let zero = ConfusionMatrix::new(3);
        let ab = zero.accumulate(&a_pred, &a_gt).unwrap().accumulate(&b_pred, &b_gt).unwrap();
        let ba = zero.accumulate(&b_pred, &b_gt).unwrap().accumulate(&a_pred, &a_gt).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn dice_examples() {
        // |gt| = 2, |pred| = 4, overlap 1 → 2·1 / (2 + 4).
        let pred = map(1, 6, &[1, 1, 1, 1, 0, 0]);
        let gt = map(1, 6, &[1, 0, 0, 0, 1, 0]);
        let cm = ConfusionMatrix::new(2).accumulate(&pred, &gt).unwrap();
        assert!((cm.dice(1) - 1.0 / 3.0).abs() < 1e-15);

        let disjoint = ConfusionMatrix::new(2)
            .accumulate(&map(1, 2, &[1, 0]), &map(1, 2, &[0, 1]))
            .unwrap();
        assert_eq!(disjoint.dice(1), 0.0);
    }

    #[test]
    fn miou_is_the_mean_of_present_ious() {
        // Class 0: tp 3, fn 3 → 1/2. Class 1: tp 1, fp 3 → 1/4.
        let pred = map(1, 7, &[0, 0, 0, 1, 1, 1, 1]);
        let gt = map(1, 7, &[0, 0, 0, 0, 0, 0, 1]);
        let cm = ConfusionMatrix::new(2).accumulate(&pred, &gt).unwrap();
        assert_eq!(cm.iou(0), Some(0.5));
        assert_eq!(cm.iou(1), Some(0.25));
        assert_eq!(cm.miou().unwrap(), 0.375);
    }

    #[test]
    fn accuracy_examples() {
        let cm = ConfusionMatrix::new(2)
            .accumulate(&map(1, 4, &[0, 1, 1, 0]), &map(1, 4, &[0, 1, 1, 1]))
            .unwrap();
        assert_eq!(cm.accuracy().unwrap(), 0.75);
        assert!(ConfusionMatrix::new(2).accuracy().is_err());
        assert!(ConfusionMatrix::new(2).miou().is_err());
    }

    #[test]
    fn out_of_range_labels_are_rejected() {
        let cm = ConfusionMatrix::new(2);
        assert!(cm.accumulate(&map(1, 1, &[2]), &map(1, 1, &[0])).is_err());
        assert!(cm.accumulate(&map(1, 2, &[0, 0]), &map(2, 1, &[0, 0])).is_err());
    }

    #[test]
    fn absent_class_conventions() {
        let m = map(1, 2, &[0, 0]);
        let cm = ConfusionMatrix::new(3).accumulate(&m, &m).unwrap();
        assert_eq!(cm.dice(2), 1.0);
        assert_eq!(cm.iou(2), None);
        assert_eq!(cm.miou().unwrap(), 1.0);
    }
}
