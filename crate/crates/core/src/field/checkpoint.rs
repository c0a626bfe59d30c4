//! `field.ckpt`: framed JSON header plus the flat parameter vector as f32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Field, FieldConfig, FieldLayout};
use crate::error::{Error, Result};
use crate::geom::Aabb;
use crate::io;
use crate::scalar::Real;

pub const FIELD_CKPT_VERSION: &str = "semfield-ckpt/1";

#[derive(Serialize, Deserialize)]
struct Header {
    version: String,
    config_hash: String,
    bounds: Aabb,
    resolutions: Vec<usize>,
    channels: usize,
    embedding_dim: usize,
    config: FieldConfig,
    param_count: usize,
}

impl<T: Real> Field<T> {
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let h = Header {
            version: FIELD_CKPT_VERSION.into(),
            config_hash: config_hash.into(),
            bounds: self.bounds,
            resolutions: self.config.resolutions.clone(),
            channels: self.config.channels,
            embedding_dim: self.embedding_dim(),
            config: self.config.clone(),
            param_count: self.params.len(),
        };
        let data: Vec<f32> = self.params.iter().map(|v| v.as_f32()).collect();
        io::write_framed(path, &h, &io::f32_payload(&data))
    }

    /// Loads a checkpoint; returns the field and the config hash it carries.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (h, data): (Header, Vec<f32>) = io::read_framed(path, FIELD_CKPT_VERSION)?;
        if h.config.resolutions != h.resolutions || h.config.channels != h.channels {
            return Err(Error::consistency(path, "header fields disagree"));
        }
        let layout = FieldLayout::new(&h.config, h.embedding_dim);
        if layout.len() != h.param_count || data.len() != h.param_count {
            return Err(Error::consistency(
                path,
                format!(
                    "expected {} parameters, header says {}, payload has {}",
                    layout.len(),
                    h.param_count,
                    data.len()
                ),
            ));
        }
        let mut f = Field::zeros(h.bounds, &h.config, h.embedding_dim)
            .map_err(|e| Error::consistency(path, e.to_string()))?;
        for (p, v) in f.params.iter_mut().zip(data) {
            *p = T::of(v as f64);
        }
        Ok((f, h.config_hash))
    }
}
