use etnet_tensor::{BatchStats, Conv2dGeom, Graph, Var};

use super::params::stage_stride;
use super::{FusionMode, Network, BN_EPS};
use crate::{Error, Result};

/// Handles to the outputs of one recorded forward pass.
#[derive(Debug)]
pub struct Traced {
    /// `N × C × H × W` logits at input resolution.
    pub seg_logits: Var,
    pub edge_logits: Option<Var>,
    /// Batch statistics per normalization layer; empty outside training mode.
    pub bn_stats: Vec<(String, BatchStats)>,
}

type Feature = (Var, usize);

pub(super) struct Builder<'a> {
    net: &'a Network,
    g: &'a mut Graph,
    stats: Vec<(String, BatchStats)>,
}

fn pointwise() -> Conv2dGeom {
    Conv2dGeom::default()
}

impl<'a> Builder<'a> {
    pub(super) fn new(net: &'a Network, g: &'a mut Graph) -> Self {
        Self {
            net,
            g,
            stats: Vec::new(),
        }
    }

    fn param(&mut self, name: &str) -> Result<Var> {
        let store = &self.net.params;
        let id = store
            .id(name)
            .ok_or_else(|| Error::InvalidArgument(format!("network has no parameter {name}")))?;
        Ok(self.g.param(id, store.value(id)))
    }

    fn conv(&mut self, x: Var, name: &str, geom: Conv2dGeom) -> Result<Var> {
        let w = self.param(&format!("{name}.weight"))?;
        let bias_name = format!("{name}.bias");
        let bias = if self.net.params.contains(&bias_name) {
            Some(self.param(&bias_name)?)
        } else {
            None
        };
        Ok(self.g.conv2d(x, w, bias, geom)?)
    }

    fn bn(&mut self, x: Var, name: &str) -> Result<Var> {
        let gamma = self.param(&format!("{name}.gamma"))?;
        let beta = self.param(&format!("{name}.beta"))?;
        if self.g.is_training() {
            let (y, stats) = self.g.batch_norm_train(x, gamma, beta, BN_EPS)?;
            self.stats.push((name.to_string(), stats));
            Ok(y)
        } else {
            let r = &self.net.bn[name];
            Ok(self.g.batch_norm_eval(x, gamma, beta, &r.mean, &r.var, BN_EPS)?)
        }
    }

    pub(super) fn conv_bn(&mut self, x: Var, conv: &str, bn: &str, geom: Conv2dGeom, relu: bool) -> Result<Var> {
        let y = self.conv(x, conv, geom)?;
        let y = self.bn(y, bn)?;
        Ok(if relu { self.g.relu(y) } else { y })
    }

    pub(super) fn bottleneck(&mut self, x: Var, p: &str, stride: usize, dilation: usize) -> Result<Var> {
        let h = self.conv_bn(x, &format!("{p}.conv1"), &format!("{p}.bn1"), pointwise(), true)?;
        let geom = Conv2dGeom::same(3, dilation).with_stride(stride);
        let h = self.conv_bn(h, &format!("{p}.conv2"), &format!("{p}.bn2"), geom, true)?;
        let h = self.conv_bn(h, &format!("{p}.conv3"), &format!("{p}.bn3"), pointwise(), false)?;
        let shortcut = if self.net.params.contains(&format!("{p}.proj.weight")) {
            let geom = pointwise().with_stride(stride);
            self.conv_bn(x, &format!("{p}.proj"), &format!("{p}.proj_bn"), geom, false)?
        } else {
            x
        };
        let sum = self.g.add(h, shortcut)?;
        Ok(self.g.relu(sum))
    }

    pub(super) fn encode(&mut self, x: Var) -> Result<[Feature; 4]> {
        let cfg = &self.net.cfg;
        let stem = Conv2dGeom {
            stride: 2,
            padding: 3,
            ..Conv2dGeom::default()
        };
        let h = self.conv_bn(x, "stem.conv", "stem.bn", stem, true)?;
        let mut h = self.g.max_pool(h, 3, 2, 1)?;
        let mut out = Vec::with_capacity(4);
        let mut stride = 4;
        for s in 0..4 {
            let dilation = if s == 3 { cfg.dilation_stage4 } else { 1 };
            for b in 0..cfg.blocks_per_stage[s] {
                let step = if b == 0 { stage_stride(s) } else { 1 };
                h = self.bottleneck(h, &format!("enc{}.{b}", s + 1), step, dilation)?;
            }
            stride *= stage_stride(s);
            out.push((h, stride));
        }
        Ok([out[0], out[1], out[2], out[3]])
    }

    pub(super) fn dblock(&mut self, index: usize, high: Feature, skip: Feature) -> Result<Feature> {
        if !(1..=3).contains(&index) {
            return Err(Error::InvalidArgument(format!("D-Block index {index} is not 1, 2 or 3")));
        }
        if high.1 < skip.1 {
            return Err(Error::InvalidArgument(format!(
                "D-Block input stride {} is finer than its skip stride {}",
                high.1, skip.1
            )));
        }
        let p = format!("dec{index}");
        let s = self.g.shape(skip.0);
        let up = self.g.resize(high.0, s.h, s.w)?;
        let fused = match self.net.cfg.fusion {
            FusionMode::Concat => self.g.concat(&[up, skip.0])?,
            FusionMode::Add => {
                let proj = self.conv_bn(skip.0, &format!("{p}.skip"), &format!("{p}.skip_bn"), pointwise(), false)?;
                self.g.add(up, proj)?
            }
        };
        let channels = self.g.shape(fused).c;
        let dw = Conv2dGeom::same(3, 1).with_groups(channels);
        let h = self.conv_bn(fused, &format!("{p}.dw"), &format!("{p}.dw_bn"), dw, true)?;
        let h = self.conv_bn(h, &format!("{p}.pw"), &format!("{p}.pw_bn"), pointwise(), true)?;
        Ok((h, skip.1))
    }

    pub(super) fn edge_guidance(&mut self, f1: Feature, f2: Feature) -> Result<(Var, Var)> {
        if f1.1 != 4 || f2.1 != 8 {
            return Err(Error::InvalidArgument(format!(
                "edge guidance expects strides 4 and 8, got {} and {}",
                f1.1, f2.1
            )));
        }
        let s = self.g.shape(f1.0);
        let up = self.g.resize(f2.0, s.h, s.w)?;
        let mut paths = Vec::with_capacity(2);
        for (name, x) in [("low", f1.0), ("high", up)] {
            let h = self.conv_bn(x, &format!("egm.{name}.conv1"), &format!("egm.{name}.bn1"), pointwise(), true)?;
            let h = self.conv_bn(
                h,
                &format!("egm.{name}.conv2"),
                &format!("egm.{name}.bn2"),
                Conv2dGeom::same(3, 1),
                true,
            )?;
            paths.push(h);
        }
        let cat = self.g.concat(&paths)?;
        let guide = self.conv_bn(cat, "egm.guide", "egm.guide_bn", pointwise(), true)?;
        let edge = self.conv(cat, "egm.edge", pointwise())?;
        Ok((guide, edge))
    }

    pub(super) fn weighted_block(&mut self, index: usize, x: Var) -> Result<Var> {
        let ch = self.g.shape(x).c;
        let r = self.net.cfg.attention_reduction;
        if ch < r {
            return Err(Error::InvalidArgument(format!(
                "weighted block over {ch} channels with reduction {r}"
            )));
        }
        let p = format!("wam{index}");
        let pooled = self.g.global_avg_pool(x);
        let h = self.conv(pooled, &format!("{p}.fc1"), pointwise())?;
        let h = self.g.relu(h);
        let h = self.conv(h, &format!("{p}.fc2"), pointwise())?;
        let w = self.g.sigmoid(h);
        Ok(self.g.scale_channels(x, w)?)
    }

    pub(super) fn aggregate(&mut self, d: [Feature; 3], guidance: Option<Feature>) -> Result<Var> {
        let cfg = &self.net.cfg;
        for (i, (&(v, stride), want)) in d.iter().zip([16, 8, 4]).enumerate() {
            if stride != want {
                return Err(Error::InvalidArgument(format!(
                    "decoder map {} has stride {stride}, expected {want}",
                    i + 1
                )));
            }
            let c = self.g.shape(v).c;
            if c != cfg.decoder_channels {
                return Err(Error::ShapeMismatch(format!(
                    "decoder map {} has {c} channels, expected {}",
                    i + 1,
                    cfg.decoder_channels
                )));
            }
        }
        let use_wam = cfg.use_wam;
        let mut w = [d[0].0, d[1].0, d[2].0];
        if use_wam {
            for (i, v) in w.iter_mut().enumerate() {
                *v = self.weighted_block(i + 1, *v)?;
            }
        }
        let mut acc = w[0];
        for &next in &w[1..] {
            let s = self.g.shape(next);
            let up = self.g.resize(acc, s.h, s.w)?;
            acc = self.g.add(up, next)?;
        }
        let logits = self.conv(acc, "head.features", pointwise())?;
        match guidance {
            None => Ok(logits),
            Some((gv, stride)) => {
                if stride != 4 {
                    return Err(Error::InvalidArgument(format!("guidance stride {stride}, expected 4")));
                }
                if !self.net.params.contains("head.guidance.weight") {
                    return Err(Error::InvalidArgument("network was built without the EGM".into()));
                }
                let extra = self.conv(gv, "head.guidance", pointwise())?;
                Ok(self.g.add(logits, extra)?)
            }
        }
    }

    pub(super) fn forward(mut self, input: Var) -> Result<Traced> {
        let s = self.g.shape(input);
        let [f1, f2, f3, f4] = self.encode(input)?;
        let egm = if self.net.cfg.use_egm {
            Some(self.edge_guidance(f1, f2)?)
        } else {
            None
        };
        let d1 = self.dblock(1, f4, f3)?;
        let d2 = self.dblock(2, d1, f2)?;
        let d3 = self.dblock(3, d2, f1)?;
        let seg = self.aggregate([d1, d2, d3], egm.map(|(g, _)| (g, 4)))?;
        let seg_logits = self.g.resize(seg, s.h, s.w)?;
        let edge_logits = match egm {
            Some((_, e)) => Some(self.g.resize(e, s.h, s.w)?),
            None => None,
        };
        Ok(Traced {
            seg_logits,
            edge_logits,
            bn_stats: self.stats,
        })
    }
}
