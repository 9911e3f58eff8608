//! Named parameter tensors, their layout for a given config, and seeded initialization.

use std::collections::HashMap;

use etnet_tensor::{Shape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::{FusionMode, NetworkConfig};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Zero-mean normal with standard deviation `sqrt(2 / fan_in)`.
    He { fan_in: usize },
    Ones,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

/// Builds the list of parameters of a network in a fixed order.
#[derive(Default)]
struct Layout {
    specs: Vec<ParamSpec>,
}

impl Layout {
    fn push(&mut self, name: String, shape: Shape, init: Init) {
        self.specs.push(ParamSpec { name, shape, init });
    }

    fn conv(&mut self, name: &str, cout: usize, cin_per_group: usize, k: usize, bias: bool) {
        let fan_in = cin_per_group * k * k;
        self.push(
            format!("{name}.weight"),
            Shape::new(cout, cin_per_group, k, k),
            Init::He { fan_in },
        );
        if bias {
            self.push(format!("{name}.bias"), Shape::channels(cout), Init::Zeros);
        }
    }

    fn bn(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.gamma"), Shape::channels(c), Init::Ones);
        self.push(format!("{name}.beta"), Shape::channels(c), Init::Zeros);
    }

    fn conv_bn(&mut self, conv: &str, bn: &str, cout: usize, cin: usize, k: usize) {
        self.conv(conv, cout, cin, k, false);
        self.bn(bn, cout);
    }
}

pub(crate) fn bottleneck_mid(width: usize) -> usize {
    width.div_ceil(4)
}

pub(crate) fn stage_stride(stage: usize) -> usize {
    [1, 2, 2, 1][stage]
}

/// Parameter layout of the encoder only.
pub fn encoder_specs(cfg: &NetworkConfig) -> Vec<ParamSpec> {
    let mut l = Layout::default();
    encoder(&mut l, cfg);
    l.specs
}

fn encoder(l: &mut Layout, cfg: &NetworkConfig) {
    l.conv_bn("stem.conv", "stem.bn", cfg.stem_width, cfg.input_channels, 7);
    let mut cin = cfg.stem_width;
    for s in 0..4 {
        let width = cfg.block_widths[s];
        let mid = bottleneck_mid(width);
        for b in 0..cfg.blocks_per_stage[s] {
            let p = format!("enc{}.{b}", s + 1);
            l.conv_bn(&format!("{p}.conv1"), &format!("{p}.bn1"), mid, cin, 1);
            l.conv_bn(&format!("{p}.conv2"), &format!("{p}.bn2"), mid, mid, 3);
            l.conv_bn(&format!("{p}.conv3"), &format!("{p}.bn3"), width, mid, 1);
            let stride = if b == 0 { stage_stride(s) } else { 1 };
            if cin != width || stride != 1 {
                l.conv_bn(&format!("{p}.proj"), &format!("{p}.proj_bn"), width, cin, 1);
            }
            cin = width;
        }
    }
}

/// Parameter layout for `cfg`, in construction order.
pub fn param_specs(cfg: &NetworkConfig) -> Vec<ParamSpec> {
    let mut l = Layout::default();
    encoder(&mut l, cfg);
    let [w1, w2, w3, w4] = cfg.block_widths;
    let d = cfg.decoder_channels;
    let e = cfg.edge_channels;

    if cfg.use_egm {
        for (path, cin) in [("low", w1), ("high", w2)] {
            l.conv_bn(&format!("egm.{path}.conv1"), &format!("egm.{path}.bn1"), e, cin, 1);
            l.conv_bn(&format!("egm.{path}.conv2"), &format!("egm.{path}.bn2"), e, e, 3);
        }
        l.conv_bn("egm.guide", "egm.guide_bn", e, 2 * e, 1);
        l.conv("egm.edge", 2, 2 * e, 1, true);
    }

    for (i, (high, skip)) in [(w4, w3), (d, w2), (d, w1)].into_iter().enumerate() {
        let p = format!("dec{}", i + 1);
        let fused = match cfg.fusion {
            FusionMode::Concat => high + skip,
            FusionMode::Add => {
                l.conv_bn(&format!("{p}.skip"), &format!("{p}.skip_bn"), high, skip, 1);
                high
            }
        };
        l.conv_bn(&format!("{p}.dw"), &format!("{p}.dw_bn"), fused, 1, 3);
        l.conv_bn(&format!("{p}.pw"), &format!("{p}.pw_bn"), d, fused, 1);
    }

    if cfg.use_wam {
        let hidden = d / cfg.attention_reduction;
        for i in 1..=3 {
            l.conv(&format!("wam{i}.fc1"), hidden, d, 1, true);
            l.conv(&format!("wam{i}.fc2"), d, hidden, 1, true);
        }
    }

    l.conv("head.features", cfg.num_classes, d, 1, true);
    if cfg.use_egm {
        l.conv("head.guidance", cfg.num_classes, e, 1, false);
    }
    l.specs
}

fn seeded_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn initialize(spec: &ParamSpec, seed: u64) -> Tensor {
    match spec.init {
        Init::Ones => Tensor::full(spec.shape, 1.0),
        Init::Zeros => Tensor::zeros(spec.shape),
        Init::He { fan_in } => {
            let std = (2.0 / fan_in as f64).sqrt();
            let mut rng = seeded_rng(seed, &spec.name);
            Tensor::from_fn(spec.shape, |_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * std) as f32
            })
        }
    }
}

/// Parameters addressed by name or by dense integer id (construction order).
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new(entries: Vec<(String, Tensor)>) -> Result<Self> {
        let mut store = Self {
            names: Vec::with_capacity(entries.len()),
            values: Vec::with_capacity(entries.len()),
            index: HashMap::with_capacity(entries.len()),
        };
        for (name, value) in entries {
            if store.index.insert(name.clone(), store.names.len()).is_some() {
                return Err(Error::InvalidArgument(format!("duplicate parameter {name}")));
            }
            store.names.push(name);
            store.values.push(value);
        }
        Ok(store)
    }

    /// Initializes every parameter of `specs`; each tensor's draws depend only on `seed` and its name.
    pub fn initialize(specs: &[ParamSpec], seed: u64) -> Self {
        Self::new(specs.iter().map(|s| (s.name.clone(), initialize(s, seed))).collect())
            .expect("parameter layouts have unique names")
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn name(&self, id: usize) -> &str {
        &self.names[id]
    }

    pub fn value(&self, id: usize) -> &Tensor {
        &self.values[id]
    }

    pub fn value_mut(&mut self, id: usize) -> &mut Tensor {
        &mut self.values[id]
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.id(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.id(name).map(|i| &mut self.values[i])
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn numel(&self) -> usize {
        self.values.iter().map(Tensor::numel).sum()
    }
}
