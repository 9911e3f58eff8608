//! Reference implementations shared by the integration and acceptance tests.
//!
//! Nothing here calls into the code paths it is used to check.

#![allow(dead_code)]

/// Jaccard loss of a mispredicted set `S` against foreground `F`: `|S| / |F ∪ S|`.
fn jaccard_set_loss(selected: &[bool], foreground: &[bool]) -> f64 {
    let s = selected.iter().filter(|&&b| b).count();
    let union = selected
        .iter()
        .zip(foreground)
        .filter(|(&a, &b)| a || b)
        .count();
    if union == 0 {
        0.0
    } else {
        s as f64 / union as f64
    }
}

/// Lovász extension as the integral of the set function over level sets:
/// `f(m) = ∫₀¹ Δ({i : m_i ≥ t}) dt`, evaluated exactly between distinct levels.
fn lovasz_extension_by_levels(errors: &[f64], foreground: &[bool]) -> f64 {
    let mut levels: Vec<f64> = errors.to_vec();
    levels.sort_by(|a, b| b.partial_cmp(a).unwrap());
    levels.dedup();
    let mut total = 0.0;
    for (k, &level) in levels.iter().enumerate() {
        let next = levels.get(k + 1).copied().unwrap_or(0.0);
        let selected: Vec<bool> = errors.iter().map(|&m| m >= level).collect();
        total += (level - next) * jaccard_set_loss(&selected, foreground);
    }
    total
}

/// Brute-force Lovász-Softmax loss. `probs` is `N × C` row-major. Classes with no
/// foreground pixel contribute 0; the mean runs over all classes, or over present
/// classes when `present_only`.
pub fn lovasz_softmax_oracle(probs: &[f64], labels: &[usize], classes: usize, present_only: bool) -> f64 {
    let n = labels.len();
    let mut sum = 0.0;
    let mut present = 0;
    for c in 0..classes {
        let foreground: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        if !foreground.contains(&true) {
            continue;
        }
        present += 1;
        let errors: Vec<f64> = (0..n)
            .map(|i| {
                let p = probs[i * classes + c];
                if foreground[i] {
                    1.0 - p
                } else {
                    p
                }
            })
            .collect();
        sum += lovasz_extension_by_levels(&errors, &foreground);
    }
    let denom = if present_only { present } else { classes };
    if denom == 0 {
        0.0
    } else {
        sum / denom as f64
    }
}

/// Row-wise softmax, written out directly.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let denom: f64 = row.iter().map(|z| z.exp()).sum();
        out.extend(row.iter().map(|z| z.exp() / denom));
    }
    out
}

/// Per-class confusion quantities counted pixel by pixel.
#[derive(Clone, Copy, Debug, Default)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

pub fn count_pixels(pred: &[u8], gt: &[u8], class: u8) -> Counts {
    let mut c = Counts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p == class, g == class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            _ => {}
        }
    }
    c
}

pub fn dice_oracle(pred: &[u8], gt: &[u8], class: u8) -> f64 {
    let c = count_pixels(pred, gt, class);
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        1.0
    } else {
        2.0 * c.tp as f64 / denom as f64
    }
}

pub fn miou_oracle(pred: &[u8], gt: &[u8], classes: u8) -> Option<f64> {
    let ious: Vec<f64> = (0..classes)
        .filter_map(|k| {
            let c = count_pixels(pred, gt, k);
            let denom = c.tp + c.fp + c.fn_;
            (denom > 0).then(|| c.tp as f64 / denom as f64)
        })
        .collect();
    (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
}

pub fn accuracy_oracle(pred: &[u8], gt: &[u8]) -> f64 {
    let correct = pred.iter().zip(gt).filter(|(a, b)| a == b).count();
    correct as f64 / pred.len() as f64
}

/// Relative error with a floor so that two near-zero values compare as equal.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}
