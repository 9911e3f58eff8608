//! ET-Net: bottleneck-residual encoder, D-Block decoder, Edge Guidance Module (EGM)
//! and Weighted Aggregation Module (WAM).

mod forward;
mod params;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use etnet_tensor::{BatchStats, Graph, Tensor, Var};
use serde::{Deserialize, Serialize};

pub use forward::Traced;
pub use params::{encoder_specs, param_specs, Init, ParamSpec, ParamStore};

use crate::{Error, Result};

pub const BN_EPS: f32 = 1e-5;

/// How a D-Block merges the upsampled high-level map with its skip connection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    #[default]
    Concat,
    /// Elementwise sum after a 1×1 projection of the skip to the high-level width.
    Add,
}

/// Module selection for the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Base,
    Egm,
    Wam,
    #[default]
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Base, Variant::Egm, Variant::Wam, Variant::Full];

    pub fn use_egm(self) -> bool {
        matches!(self, Variant::Egm | Variant::Full)
    }

    pub fn use_wam(self) -> bool {
        matches!(self, Variant::Wam | Variant::Full)
    }

    pub fn apply(self, cfg: &NetworkConfig) -> NetworkConfig {
        NetworkConfig {
            use_egm: self.use_egm(),
            use_wam: self.use_wam(),
            ..cfg.clone()
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Egm => "egm",
            Variant::Wam => "wam",
            Variant::Full => "full",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "egm" | "+egm" => Ok(Variant::Egm),
            "wam" | "+wam" => Ok(Variant::Wam),
            "full" => Ok(Variant::Full),
            other => Err(Error::InvalidArgument(format!(
                "unknown variant {other:?} (expected base, egm, wam or full)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub num_classes: usize,
    pub stem_width: usize,
    pub block_widths: [usize; 4],
    pub blocks_per_stage: [usize; 4],
    pub decoder_channels: usize,
    pub edge_channels: usize,
    pub attention_reduction: usize,
    pub use_egm: bool,
    pub use_wam: bool,
    pub dilation_stage4: usize,
    pub fusion: FusionMode,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::toy(3)
    }
}

impl NetworkConfig {
    /// Small configuration for CPU experiments.
    pub fn toy(num_classes: usize) -> Self {
        Self {
            input_channels: 3,
            num_classes,
            stem_width: 8,
            block_widths: [32, 64, 128, 256],
            blocks_per_stage: [2, 2, 2, 2],
            decoder_channels: 16,
            edge_channels: 16,
            attention_reduction: 4,
            use_egm: true,
            use_wam: true,
            dilation_stage4: 2,
            fusion: FusionMode::Concat,
        }
    }

    /// 50-layer residual encoder widths.
    pub fn full_scale(num_classes: usize) -> Self {
        Self {
            stem_width: 64,
            block_widths: [256, 512, 1024, 2048],
            blocks_per_stage: [3, 4, 6, 3],
            decoder_channels: 256,
            edge_channels: 128,
            attention_reduction: 16,
            ..Self::toy(num_classes)
        }
    }

    pub fn variant(&self) -> Variant {
        match (self.use_egm, self.use_wam) {
            (false, false) => Variant::Base,
            (true, false) => Variant::Egm,
            (false, true) => Variant::Wam,
            (true, true) => Variant::Full,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        let widths = [
            ("input_channels", self.input_channels),
            ("stem_width", self.stem_width),
            ("decoder_channels", self.decoder_channels),
            ("edge_channels", self.edge_channels),
            ("attention_reduction", self.attention_reduction),
            ("dilation_stage4", self.dilation_stage4),
        ];
        for (name, v) in widths {
            if v == 0 {
                return bad(format!("{name} must be at least 1"));
            }
        }
        if self.block_widths.contains(&0) || self.blocks_per_stage.contains(&0) {
            return bad(format!(
                "block widths {:?} and blocks per stage {:?} must all be at least 1",
                self.block_widths, self.blocks_per_stage
            ));
        }
        if self.num_classes < 2 || self.num_classes > 256 {
            return bad(format!("num_classes {} must lie in 2..=256", self.num_classes));
        }
        if !self.decoder_channels.is_multiple_of(self.attention_reduction) {
            return bad(format!(
                "attention_reduction {} does not divide decoder_channels {}",
                self.attention_reduction, self.decoder_channels
            ));
        }
        Ok(())
    }

    /// Number of scalar parameters; depends on the config alone.
    pub fn param_count(&self) -> usize {
        param_specs(self).iter().map(|s| s.shape.numel()).sum()
    }
}

/// Activation map of a batch (`N × C × H × W`) together with its stride relative to the input.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    pub values: Tensor,
    pub stride: usize,
}

impl FeatureMap {
    pub fn new(values: Tensor, stride: usize) -> Self {
        Self { values, stride }
    }

    pub fn channels(&self) -> usize {
        self.values.shape().c
    }

    pub fn height(&self) -> usize {
        self.values.shape().h
    }

    pub fn width(&self) -> usize {
        self.values.shape().w
    }
}

/// Full-resolution logits.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkOutput {
    /// `N × num_classes × H × W`.
    pub seg_logits: Tensor,
    /// `N × 2 × H × W`; present only with the EGM.
    pub edge_logits: Option<Tensor>,
}

/// Batch-norm running estimates for one normalization layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn update(&mut self, batch: &BatchStats, momentum: f32) {
        for (r, &b) in self.mean.iter_mut().zip(&batch.mean) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&batch.var) {
            *r = (1.0 - momentum) * *r + momentum * b;
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    cfg: NetworkConfig,
    params: ParamStore,
    bn: BTreeMap<String, RunningStats>,
}

/// Builds a network whose initial parameters are a deterministic function of `cfg` and `seed`.
pub fn build_network(cfg: &NetworkConfig, seed: u64) -> Result<Network> {
    cfg.validate()?;
    let specs = param_specs(cfg);
    let params = ParamStore::initialize(&specs, seed);
    Network::from_parts(cfg.clone(), params, None)
}

impl Network {
    /// Assembles a network from stored parameters; missing running statistics start at (0, 1).
    pub fn from_parts(
        cfg: NetworkConfig,
        params: ParamStore,
        bn: Option<BTreeMap<String, RunningStats>>,
    ) -> Result<Self> {
        cfg.validate()?;
        let specs = param_specs(&cfg);
        if specs.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "config expects {} parameter tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        let mut defaults = BTreeMap::new();
        for spec in &specs {
            match params.get(&spec.name) {
                Some(t) if t.shape() == spec.shape => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "parameter {} has shape {}, expected {}",
                        spec.name,
                        t.shape(),
                        spec.shape
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing parameter {}", spec.name))),
            }
            if let Some(layer) = spec.name.strip_suffix(".gamma") {
                defaults.insert(layer.to_string(), RunningStats::new(spec.shape.c));
            }
        }
        let bn = match bn {
            None => defaults,
            Some(given) => {
                for (layer, d) in &defaults {
                    match given.get(layer) {
                        Some(s) if s.mean.len() == d.mean.len() && s.var.len() == d.var.len() => {}
                        _ => {
                            return Err(Error::Checkpoint(format!(
                                "missing or malformed running statistics for {layer}"
                            )))
                        }
                    }
                }
                if given.len() != defaults.len() {
                    return Err(Error::Checkpoint("unexpected running statistics".into()));
                }
                given
            }
        };
        Ok(Self { cfg, params, bn })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn running_stats(&self) -> &BTreeMap<String, RunningStats> {
        &self.bn
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Folds batch statistics observed in a training pass into the running estimates.
    pub fn update_running_stats(&mut self, observed: &[(String, BatchStats)], momentum: f32) -> Result<()> {
        for (layer, stats) in observed {
            let r = self
                .bn
                .get_mut(layer)
                .ok_or_else(|| Error::InvalidArgument(format!("no batch-norm layer {layer}")))?;
            r.update(stats, momentum);
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let s = x.shape();
        if s.c != self.cfg.input_channels {
            return Err(Error::ShapeMismatch(format!(
                "input has {} channels, network expects {}",
                s.c, self.cfg.input_channels
            )));
        }
        if s.h == 0 || s.w == 0 || !s.h.is_multiple_of(16) || !s.w.is_multiple_of(16) {
            return Err(Error::InvalidArgument(format!(
                "input size {}x{} is not a positive multiple of 16",
                s.h, s.w
            )));
        }
        Ok(())
    }

    /// Records a forward pass on `graph`. Batch norm uses batch statistics when the graph is
    /// in training mode and running statistics otherwise.
    pub fn trace(&self, graph: &mut Graph, input: Var) -> Result<Traced> {
        self.check_input(graph.value(input))?;
        forward::Builder::new(self, graph).forward(input)
    }

    /// Inference-mode forward pass.
    pub fn forward(&self, x: &Tensor) -> Result<NetworkOutput> {
        let mut g = Graph::new(false);
        let input = g.input(x.clone());
        let t = self.trace(&mut g, input)?;
        Ok(NetworkOutput {
            seg_logits: g.value(t.seg_logits).clone(),
            edge_logits: t.edge_logits.map(|v| g.value(v).clone()),
        })
    }

    /// Encoder features `[f1, f2, f3, f4]` at strides 4, 8, 16, 16 (inference mode).
    pub fn encode(&self, x: &Tensor) -> Result<[FeatureMap; 4]> {
        self.check_input(x)?;
        let mut g = Graph::new(false);
        let input = g.input(x.clone());
        let mut b = forward::Builder::new(self, &mut g);
        let f = b.encode(input)?;
        Ok(f.map(|(v, stride)| FeatureMap::new(g.value(v).clone(), stride)))
    }

    /// D-Block `index` (1, 2 or 3) applied to `high` and `skip` (inference mode).
    pub fn dblock(&self, index: usize, high: &FeatureMap, skip: &FeatureMap) -> Result<FeatureMap> {
        let mut g = Graph::new(false);
        let h = g.input(high.values.clone());
        let s = g.input(skip.values.clone());
        let out = forward::Builder::new(self, &mut g).dblock(index, (h, high.stride), (s, skip.stride))?;
        Ok(FeatureMap::new(g.value(out.0).clone(), out.1))
    }

    /// Edge Guidance Module: `(guidance, edge_logits)` at stride 4 (inference mode).
    pub fn edge_guidance(&self, f1: &FeatureMap, f2: &FeatureMap) -> Result<(FeatureMap, FeatureMap)> {
        let mut g = Graph::new(false);
        let a = g.input(f1.values.clone());
        let b = g.input(f2.values.clone());
        let (guide, edge) = forward::Builder::new(self, &mut g).edge_guidance((a, f1.stride), (b, f2.stride))?;
        Ok((
            FeatureMap::new(g.value(guide).clone(), 4),
            FeatureMap::new(g.value(edge).clone(), 4),
        ))
    }

    /// Weighted block `index` (1, 2 or 3) of the WAM.
    pub fn weighted_block(&self, index: usize, x: &FeatureMap) -> Result<FeatureMap> {
        let mut g = Graph::new(false);
        let v = g.input(x.values.clone());
        let out = forward::Builder::new(self, &mut g).weighted_block(index, v)?;
        Ok(FeatureMap::new(g.value(out).clone(), x.stride))
    }

    /// Bottom-up aggregation of the three decoder maps into stride-4 segmentation logits.
    pub fn aggregate(&self, d: [&FeatureMap; 3], guidance: Option<&FeatureMap>) -> Result<FeatureMap> {
        let mut g = Graph::new(false);
        let vars = d.map(|f| (g.input(f.values.clone()), f.stride));
        let guide = guidance.map(|f| (g.input(f.values.clone()), f.stride));
        let out = forward::Builder::new(self, &mut g).aggregate(vars, guide)?;
        Ok(FeatureMap::new(g.value(out).clone(), 4))
    }

    /// Per-pixel argmax of the segmentation logits for each image of the batch.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<Vec<u8>>> {
        let out = self.forward(x)?;
        Ok(argmax_channels(&out.seg_logits))
    }
}

/// Channel argmax of an `N × C × H × W` tensor (first maximum wins); one row-major map per image.
pub fn argmax_channels(t: &Tensor) -> Vec<Vec<u8>> {
    let s = t.shape();
    let plane = s.plane();
    (0..s.n)
        .map(|n| {
            (0..plane)
                .map(|i| {
                    let mut best = 0;
                    let mut best_v = f32::NEG_INFINITY;
                    for c in 0..s.c {
                        let v = t.data()[(n * s.c + c) * plane + i];
                        if v > best_v {
                            best_v = v;
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests;
