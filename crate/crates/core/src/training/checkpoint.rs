//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `ETNETCKP`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header, then every tensor as raw
//! little-endian `f32` in header order. Values round-trip bit-exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use etnet_tensor::{Shape, Tensor};
use serde::{Deserialize, Serialize};

use super::{Adam, TrainState};
use crate::network::{Network, NetworkConfig, ParamStore, RunningStats};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"ETNETCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    network: NetworkConfig,
    iteration: u64,
    adam_step: u64,
    seed: u64,
    config_hash: String,
    params: Vec<(String, [usize; 4])>,
    running_stats: Vec<(String, usize)>,
}

/// Training state together with the run metadata needed to reproduce reports.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub state: TrainState,
    pub seed: u64,
    pub config_hash: String,
}

fn write_f32s(out: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        if self.bytes.len() < n {
            return Err(Error::Checkpoint("file is truncated".into()));
        }
        let (head, rest) = self.bytes.split_at(n);
        self.bytes = rest;
        Ok(head)
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n * 4)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let net = &self.state.net;
        let header = Header {
            network: net.config().clone(),
            iteration: self.state.iteration,
            adam_step: self.state.adam.step,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            params: net.params().iter().map(|(n, t)| (n.to_string(), t.shape().dims())).collect(),
            running_stats: net.running_stats().iter().map(|(n, r)| (n.clone(), r.mean.len())).collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (id, (_, t)) in net.params().iter().enumerate() {
            write_f32s(&mut out, t.data());
            write_f32s(&mut out, self.state.adam.m[id].data());
            write_f32s(&mut out, self.state.adam.v[id].data());
        }
        for r in net.running_stats().values() {
            write_f32s(&mut out, &r.mean);
            write_f32s(&mut out, &r.var);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = Cursor { bytes };
        if cur.take(8)? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().expect("four bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let len = u64::from_le_bytes(cur.take(8)?.try_into().expect("eight bytes")) as usize;
        let header: Header = serde_json::from_slice(cur.take(len)?)?;

        let mut params = Vec::with_capacity(header.params.len());
        let mut m = Vec::with_capacity(header.params.len());
        let mut v = Vec::with_capacity(header.params.len());
        for (name, [n, c, h, w]) in &header.params {
            let shape = Shape::new(*n, *c, *h, *w);
            let numel = shape.numel();
            params.push((name.clone(), Tensor::from_vec(shape, cur.f32s(numel)?)?));
            m.push(Tensor::from_vec(shape, cur.f32s(numel)?)?);
            v.push(Tensor::from_vec(shape, cur.f32s(numel)?)?);
        }
        let mut stats = BTreeMap::new();
        for (name, c) in &header.running_stats {
            let mean = cur.f32s(*c)?;
            let var = cur.f32s(*c)?;
            stats.insert(name.clone(), RunningStats { mean, var });
        }
        if !cur.bytes.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", cur.bytes.len())));
        }
        let net = Network::from_parts(header.network, ParamStore::new(params)?, Some(stats))?;
        let state = TrainState {
            net,
            adam: Adam {
                step: header.adam_step,
                m,
                v,
            },
            iteration: header.iteration,
        };
        Ok(Self {
            state,
            seed: header.seed,
            config_hash: header.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
