use etnet_tensor::{BatchStats, Graph, ParamGrads, Shape, Tensor};
use serde::{Deserialize, Serialize};

use super::{poly_lr, Adam, OptimizerConfig, ScheduleConfig};
use crate::data::{LabelMap, Sample};
use crate::losses::{lovasz_softmax, softmax, softmax_backward, GroundTruth, LossWeights, ProbMap};
use crate::network::Network;
use crate::{Error, Result};

/// Momentum of the batch-norm running estimates.
pub const BN_MOMENTUM: f32 = 0.1;

/// Network, optimizer moments and iteration counter.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub net: Network,
    pub adam: Adam,
    pub iteration: u64,
}

impl TrainState {
    pub fn new(net: Network) -> Self {
        let adam = Adam::new(net.params());
        Self {
            net,
            adam,
            iteration: 0,
        }
    }
}

/// Losses of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub lr: f64,
    pub total: f64,
    pub seg: f64,
    /// Absent for variants without the edge branch.
    pub edge: Option<f64>,
}

/// Stacks the images of `batch` into an `N × 3 × H × W` tensor.
pub fn batch_tensor(batch: &[Sample]) -> Result<Tensor> {
    let parts: Vec<Tensor> = batch.iter().map(|s| s.image.to_tensor()).collect();
    Ok(Tensor::stack(&parts)?)
}

/// `N × C × H × W` → pixel-major rows of `C` values, pixels ordered by image then raster position.
pub fn nchw_to_rows(t: &Tensor) -> Vec<f64> {
    let s = t.shape();
    let plane = s.plane();
    let mut rows = vec![0.0; t.numel()];
    for n in 0..s.n {
        for c in 0..s.c {
            for (i, &v) in t.plane(n, c).iter().enumerate() {
                rows[(n * plane + i) * s.c + c] = v as f64;
            }
        }
    }
    rows
}

pub fn rows_to_nchw(rows: &[f64], shape: Shape) -> Tensor {
    let plane = shape.plane();
    Tensor::from_fn(shape, |j| {
        let (nc, i) = (j / plane, j % plane);
        let (n, c) = (nc / shape.c, nc % shape.c);
        rows[(n * plane + i) * shape.c + c] as f32
    })
}

fn labels<'a>(maps: impl Iterator<Item = &'a LabelMap>, classes: usize) -> Result<GroundTruth> {
    let flat = maps.flat_map(|m| m.labels().iter().map(|&l| l as usize)).collect();
    GroundTruth::new(flat, classes)
}

struct Head {
    probs: ProbMap,
    loss: f64,
    dprobs: Vec<f64>,
}

fn head(logits: &Tensor, gt: &GroundTruth, weights: &LossWeights) -> Result<Head> {
    let probs = softmax(&nchw_to_rows(logits), logits.shape().c)?;
    let out = lovasz_softmax(&probs, gt, weights.averaging)?;
    Ok(Head {
        probs,
        loss: out.loss,
        dprobs: out.dprobs,
    })
}

fn seed(h: &Head, scale: f64, shape: Shape) -> Tensor {
    let scaled: Vec<f64> = h.dprobs.iter().map(|d| d * scale).collect();
    rows_to_nchw(&softmax_backward(&h.probs, &scaled), shape)
}

/// Batch losses and parameter gradients from one training-mode pass.
#[derive(Debug)]
pub struct Gradients {
    pub total: f64,
    pub seg: f64,
    pub edge: Option<f64>,
    pub grads: ParamGrads,
    pub bn_stats: Vec<(String, BatchStats)>,
}

/// Forward in training mode, joint loss and backward, without touching `net`.
///
/// The Lovász loss of each stream is computed over all pixels of the batch at once.
/// Variants without the edge branch use the segmentation loss alone.
pub fn compute_gradients(net: &Network, batch: &[Sample], weights: &LossWeights) -> Result<Gradients> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty training batch".into()))?;
    if batch.iter().any(|s| (s.height(), s.width()) != (first.height(), first.width())) {
        return Err(Error::ShapeMismatch("training batch mixes image sizes".into()));
    }
    weights.validate()?;
    let classes = net.config().num_classes;

    let mut g = Graph::new(true);
    let input = g.input(batch_tensor(batch)?);
    let traced = net.trace(&mut g, input)?;

    let seg_logits = g.value(traced.seg_logits);
    let seg_gt = labels(batch.iter().map(|s| &s.mask), classes)?;
    let seg = head(seg_logits, &seg_gt, weights)?;
    let edge = match traced.edge_logits {
        Some(v) => {
            let edge_gt = labels(batch.iter().map(|s| &s.edge), 2)?;
            Some((v, head(g.value(v), &edge_gt, weights)?))
        }
        None => None,
    };

    let (total, seg_scale) = match &edge {
        Some((_, e)) => (weights.combine(seg.loss, e.loss), weights.alpha),
        None => (seg.loss, 1.0),
    };
    let mut seeds = vec![(traced.seg_logits, seed(&seg, seg_scale, seg_logits.shape()))];
    if let Some((v, e)) = &edge {
        seeds.push((*v, seed(e, 1.0 - weights.alpha, g.value(*v).shape())));
    }
    let grads = g.backward(&seeds)?;
    Ok(Gradients {
        total,
        seg: seg.loss,
        edge: edge.map(|(_, e)| e.loss),
        grads,
        bn_stats: traced.bn_stats,
    })
}

/// Gradients, then one Adam update at `poly_lr(state.iteration)` and a running-stats update.
pub fn train_step(
    state: &mut TrainState,
    batch: &[Sample],
    weights: &LossWeights,
    sched: &ScheduleConfig,
    opt: &OptimizerConfig,
) -> Result<LossRecord> {
    let lr = poly_lr(state.iteration, sched);
    let out = compute_gradients(&state.net, batch, weights)?;
    if !out.total.is_finite() || out.grads.iter().any(|(_, t)| !t.is_finite()) {
        return Err(Error::Diverged {
            iteration: state.iteration,
            total: out.total,
            seg: out.seg,
            edge: out.edge,
        });
    }
    state.adam.update(state.net.params_mut(), &out.grads, lr, opt);
    state.net.update_running_stats(&out.bn_stats, BN_MOMENTUM)?;

    let record = LossRecord {
        iteration: state.iteration,
        lr,
        total: out.total,
        seg: out.seg,
        edge: out.edge,
    };
    state.iteration += 1;
    Ok(record)
}
