//! Run configuration: TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semfield::eval::{BenchConfig, EvalConfig, QueryConfig};
use semfield::field::FieldConfig;
use semfield::gsplat::{OptimizeConfig, TransferConfig};
use semfield::io::short_hash;
use semfield::scene::{RigConfig, SceneConfig};
use semfield::train::TrainConfig;
use semfield::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Scene, initialization and sampling seed of the single-scene commands.
    pub seed: u64,
    /// Output directory.
    pub out: PathBuf,
    pub scene: SceneConfig,
    pub rig: RigConfig,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub transfer: TransferConfig,
    pub splat_opt: OptimizeConfig,
    pub query: QueryConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("out"),
            scene: SceneConfig::default(),
            rig: RigConfig::default(),
            field: FieldConfig::default(),
            train: TrainConfig::default(),
            transfer: TransferConfig::default(),
            splat_opt: OptimizeConfig::default(),
            query: QueryConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads `path` (defaults when `None`) and applies `key=value` overrides
    /// with dotted keys, e.g. `train.iterations=300`.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse::<toml::Table>()
                    .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene
            .validate()
            .and_then(|_| self.bench().validate())
            .map_err(|e| match e {
                Error::Config(_) => e,
                other => Error::Config(other.to_string()),
            })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Hash of everything but the output directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = PathBuf::new();
        short_hash(c.to_toml().as_bytes())
    }

    pub fn bench(&self) -> BenchConfig {
        BenchConfig {
            scene: self.scene.clone(),
            rig: self.rig.clone(),
            field: self.field.clone(),
            train: self.train.clone(),
            transfer: self.transfer.clone(),
            splat_opt: self.splat_opt.clone(),
            query: self.query.clone(),
            eval: self.eval.clone(),
        }
    }
}

/// Sets a dotted key; the value is parsed as TOML and taken as a bare
/// string when that fails.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<()> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {item:?} is not key=value")))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("bad override key {key:?}")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut t = table;
    for p in &parts[..parts.len() - 1] {
        let entry = t
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("{key}: {p} is not a table")))?;
    }
    t.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
