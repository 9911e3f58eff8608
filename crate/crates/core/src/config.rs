//! Run configuration: one TOML file per run, with `section.key=value` overrides.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::AugmentConfig;
use crate::losses::LossWeights;
use crate::network::{NetworkConfig, Variant};
use crate::training::{OptimizerConfig, ScheduleConfig};
use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Dataset root holding `images/` and `masks/`.
    pub train_dir: Option<PathBuf>,
    /// Evaluated periodically and at the end of training when set.
    pub val_dir: Option<PathBuf>,
    /// Window of the morphological gradient that defines edge labels.
    pub edge_kernel: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            train_dir: None,
            val_dir: None,
            edge_kernel: 3,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Evaluate every this many iterations; 0 evaluates only at the end.
    pub every: u64,
    /// Average metrics over images instead of pooling pixels.
    pub per_image: bool,
    /// Write predicted masks and overlays of the final evaluation.
    pub write_predictions: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub config_version: u32,
    pub seed: u64,
    /// Overrides `network.use_egm` / `network.use_wam` when set.
    pub variant: Option<Variant>,
    pub output_dir: PathBuf,
    pub network: NetworkConfig,
    pub augment: AugmentConfig,
    pub schedule: ScheduleConfig,
    pub optimizer: OptimizerConfig,
    pub loss: LossWeights,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            config_version: CONFIG_VERSION,
            seed: 0,
            variant: None,
            output_dir: PathBuf::from("runs/etnet"),
            network: NetworkConfig::default(),
            augment: AugmentConfig::default(),
            schedule: ScheduleConfig::default(),
            optimizer: OptimizerConfig::default(),
            loss: LossWeights::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn unknown_key(message: &str) -> Option<String> {
    let start = message.find("unknown field `")? + "unknown field `".len();
    let end = message[start..].find('`')?;
    Some(message[start..start + end].to_string())
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

impl RunConfig {
    /// Parses TOML text, applies `section.key=value` overrides, and validates the result.
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut overridden = Vec::new();
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override {item:?} is not of the form section.key=value")))?;
            let key = key.trim();
            let path: Vec<&str> = key.split('.').collect();
            if path.iter().any(|p| p.is_empty()) {
                return Err(Error::UnknownConfigKey(key.to_string()));
            }
            let mut node = &mut table;
            for part in &path[..path.len() - 1] {
                let entry = node
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()));
                node = entry
                    .as_table_mut()
                    .ok_or_else(|| Error::UnknownConfigKey(key.to_string()))?;
            }
            node.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
            overridden.push(key.to_string());
        }
        let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| {
            let message = e.to_string();
            match unknown_key(&message) {
                Some(field) => {
                    let full = overridden
                        .iter()
                        .find(|k| k.rsplit('.').next() == Some(field.as_str()))
                        .cloned()
                        .unwrap_or(field);
                    Error::UnknownConfigKey(full)
                }
                None => Error::Config(message),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn validate(&self) -> Result<()> {
        if self.config_version != CONFIG_VERSION {
            return Err(Error::Config(format!(
                "config_version {} is not supported (expected {CONFIG_VERSION})",
                self.config_version
            )));
        }
        let wrap = |r: Result<()>| r.map_err(|e| Error::Config(e.to_string()));
        wrap(self.resolved_network().validate())?;
        wrap(self.resolved_augment().validate())?;
        wrap(self.schedule.validate())?;
        wrap(self.optimizer.validate())?;
        wrap(self.loss.validate())?;
        Ok(())
    }

    /// Network config with the ablation variant applied.
    pub fn resolved_network(&self) -> NetworkConfig {
        match self.variant {
            Some(v) => v.apply(&self.network),
            None => self.network.clone(),
        }
    }

    /// Augmentation config carrying the run seed and edge kernel.
    pub fn resolved_augment(&self) -> AugmentConfig {
        AugmentConfig {
            seed: self.seed,
            edge_kernel: self.data.edge_kernel,
            ..self.augment.clone()
        }
    }

    /// Fully resolved configuration as TOML.
    pub fn to_toml(&self) -> Result<String> {
        let resolved = RunConfig {
            variant: Some(self.resolved_network().variant()),
            network: self.resolved_network(),
            ..self.clone()
        };
        toml::to_string(&resolved).map_err(|e| Error::Config(e.to_string()))
    }

    /// Hex SHA-256 of the resolved TOML.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::FusionMode;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::from_toml_str("", &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.schedule.base_lr, 0.005);
        assert_eq!(cfg.loss.alpha, 0.3);
        assert_eq!(cfg.optimizer.beta1, 0.9);
    }

    #[test]
    fn sections_and_overrides() {
        let text = "seed = 4\nvariant = \"wam\"\n[network]\nfusion = \"add\"\n[schedule]\nepochs = 2\n";
        let cfg = RunConfig::from_toml_str(
            text,
            &["schedule.batch_size=2".into(), "output_dir=out/x".into(), "eval.per_image=true".into()],
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.network.fusion, FusionMode::Add);
        assert_eq!((cfg.schedule.epochs, cfg.schedule.batch_size), (2, 2));
        assert_eq!(cfg.output_dir, PathBuf::from("out/x"));
        assert!(cfg.eval.per_image);
        assert!(!cfg.resolved_network().use_egm && cfg.resolved_network().use_wam);
    }

    #[test]
    fn unknown_keys_are_reported() {
        match RunConfig::from_toml_str("[network]\nwidth = 3\n", &[]) {
            Err(Error::UnknownConfigKey(k)) => assert_eq!(k, "width"),
            other => panic!("{other:?}"),
        }
        match RunConfig::from_toml_str("", &["schedule.epoch=3".into()]) {
            Err(Error::UnknownConfigKey(k)) => assert_eq!(k, "schedule.epoch"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            RunConfig::from_toml_str("", &["augment.seed=3".into()]),
            Err(Error::UnknownConfigKey(_))
        ));
        assert!(matches!(
            RunConfig::from_toml_str("", &["seed.x=3".into()]),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(
            RunConfig::from_toml_str("[loss]\nalpha = 2.0\n", &[]),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::from_toml_str("[schedule]\nepochs = -1\n", &[]), Err(Error::Config(_))));
        assert!(RunConfig::from_toml_str("", &["novalue".into()]).is_err());
    }

    #[test]
    fn snapshot_round_trips() {
        let cfg = RunConfig::from_toml_str("seed = 9\nvariant = \"egm\"\n", &["data.train_dir=d".into()]).unwrap();
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml_str(&text, &[]).unwrap();
        assert_eq!(back.resolved_network(), cfg.resolved_network());
        assert_eq!(back.to_toml().unwrap(), text);
        assert_eq!(back.hash().unwrap(), cfg.hash().unwrap());
        assert_eq!(cfg.hash().unwrap().len(), 64);
    }
}
