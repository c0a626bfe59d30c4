//! Gaussian splats carrying language embeddings, transferred from a field.

mod optimize;
mod project;
mod raster;
mod transfer;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use optimize::{cloud_psnr, optimize_gaussians, photometric_grad, OptimizeConfig, OptimizeReport, SplatGrad};
pub use project::{project_gaussian, quat_to_matrix, Projected, NEAR_PLANE, SIGMA2D_REGULARIZER};
pub use raster::{
    brute_force_rasterize, rasterize, RasterOptions, SplatImage, MAHALANOBIS_CUTOFF, TILE_SIZE,
};
pub use transfer::{attach_embeddings, transfer_from_field, TransferConfig};

use crate::error::{Error, Result};
use crate::io;
use crate::query::{relevancy_raw, score_rendered, QuerySpec, RelevancyResult, Segmentation};
use crate::scalar::{norm, sigmoid, Real};
use crate::scene::Camera;

pub const CLOUD_CKPT_VERSION: &str = "semfield-gs/1";

/// One splat in natural parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian<T> {
    pub position: [T; 3],
    /// Unit quaternion `(w, x, y, z)`.
    pub rotation: [T; 4],
    pub log_scale: [T; 3],
    pub opacity_logit: T,
    pub color: [T; 3],
    pub embedding: Vec<T>,
}

/// Where a cloud came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Hash of the source field parameters.
    pub source_hash: String,
    /// Lowest density among the kept sample points.
    pub density_threshold: f64,
    pub requested: usize,
}

/// Splats stored attribute by attribute.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianCloud<T> {
    pub dim: usize,
    pub positions: Vec<[T; 3]>,
    pub rotations: Vec<[T; 4]>,
    pub log_scales: Vec<[T; 3]>,
    pub opacity_logits: Vec<T>,
    pub colors: Vec<[T; 3]>,
    /// `len() * dim`, unit rows.
    pub embeddings: Vec<T>,
    pub provenance: Provenance,
}

impl<T: Real> GaussianCloud<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            positions: Vec::new(),
            rotations: Vec::new(),
            log_scales: Vec::new(),
            opacity_logits: Vec::new(),
            colors: Vec::new(),
            embeddings: Vec::new(),
            provenance: Provenance::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, g: Gaussian<T>) -> Result<()> {
        if g.embedding.len() != self.dim {
            return Err(Error::Input(format!(
                "embedding has dimension {}, cloud has {}",
                g.embedding.len(),
                self.dim
            )));
        }
        self.positions.push(g.position);
        self.rotations.push(g.rotation);
        self.log_scales.push(g.log_scale);
        self.opacity_logits.push(g.opacity_logit);
        self.colors.push(g.color);
        self.embeddings.extend_from_slice(&g.embedding);
        Ok(())
    }

    pub fn get(&self, i: usize) -> Gaussian<T> {
        Gaussian {
            position: self.positions[i],
            rotation: self.rotations[i],
            log_scale: self.log_scales[i],
            opacity_logit: self.opacity_logits[i],
            color: self.colors[i],
            embedding: self.embedding(i).to_vec(),
        }
    }

    pub fn embedding(&self, i: usize) -> &[T] {
        &self.embeddings[i * self.dim..(i + 1) * self.dim]
    }

    pub fn opacity(&self, i: usize) -> T {
        sigmoid(self.opacity_logits[i])
    }

    /// Reorders the splats; `perm[k]` is the old index of new splat `k`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::new(self.dim);
        out.provenance = self.provenance.clone();
        for &i in perm {
            out.push(self.get(i)).expect("same dimension");
        }
        out
    }

    pub fn check_invariants(&self) -> Result<()> {
        let n = self.len();
        if self.rotations.len() != n
            || self.log_scales.len() != n
            || self.opacity_logits.len() != n
            || self.colors.len() != n
            || self.embeddings.len() != n * self.dim
        {
            return Err(Error::Contract("attribute arrays differ in length".into()));
        }
        for i in 0..n {
            let q = norm(&self.rotations[i]);
            if (q - T::one()).abs() > T::of(1e-6).max(T::epsilon() * T::of(8.0)) {
                return Err(Error::Contract(format!("splat {i}: quaternion norm {q}")));
            }
            let e = norm(self.embedding(i));
            if (e - T::one()).abs() > T::unit_tolerance() {
                return Err(Error::Contract(format!("splat {i}: embedding norm {e}")));
            }
            if !self.log_scales[i].iter().all(|s| s.is_finite())
                || !self.opacity_logits[i].is_finite()
                || !self.positions[i].iter().all(|s| s.is_finite())
            {
                return Err(Error::Contract(format!("splat {i}: non-finite attribute")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> GaussianCloud<U> {
        let c = |v: T| U::of(v.as_f64());
        GaussianCloud {
            dim: self.dim,
            positions: self.positions.iter().map(|p| p.map(c)).collect(),
            rotations: self.rotations.iter().map(|p| p.map(c)).collect(),
            log_scales: self.log_scales.iter().map(|p| p.map(c)).collect(),
            opacity_logits: self.opacity_logits.iter().map(|v| c(*v)).collect(),
            colors: self.colors.iter().map(|p| p.map(c)).collect(),
            embeddings: self.embeddings.iter().map(|v| c(*v)).collect(),
            provenance: self.provenance.clone(),
        }
    }

    /// Center positions in double precision.
    pub fn centers(&self) -> Vec<[f64; 3]> {
        self.positions.iter().map(|p| p.map(|v| v.as_f64())).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct CloudHeader {
    version: String,
    config_hash: String,
    count: usize,
    dim: usize,
    provenance: Provenance,
    /// Attribute blocks in payload order.
    layout: Vec<String>,
}

const LAYOUT: [&str; 6] = ["pos", "quat", "log_scale", "logit_opacity", "rgb", "embedding"];

impl GaussianCloud<f32> {
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<()> {
        let h = CloudHeader {
            version: CLOUD_CKPT_VERSION.into(),
            config_hash: config_hash.into(),
            count: self.len(),
            dim: self.dim,
            provenance: self.provenance.clone(),
            layout: LAYOUT.iter().map(|s| s.to_string()).collect(),
        };
        let mut data: Vec<f32> = Vec::with_capacity(self.len() * (14 + self.dim));
        data.extend(self.positions.iter().flatten());
        data.extend(self.rotations.iter().flatten());
        data.extend(self.log_scales.iter().flatten());
        data.extend(&self.opacity_logits);
        data.extend(self.colors.iter().flatten());
        data.extend(&self.embeddings);
        io::write_framed(path, &h, &io::f32_payload(&data))
    }

    /// Loads a cloud and the config hash it carries.
    pub fn load(path: &Path) -> Result<(Self, String)> {
        let (h, data): (CloudHeader, Vec<f32>) = io::read_framed(path, CLOUD_CKPT_VERSION)?;
        if h.layout != LAYOUT {
            return Err(Error::format(path, "unknown attribute layout"));
        }
        let n = h.count;
        let expected = n * (3 + 4 + 3 + 1 + 3 + h.dim);
        if data.len() != expected {
            return Err(Error::consistency(
                path,
                format!("expected {expected} values for {n} splats, found {}", data.len()),
            ));
        }
        let mut rest = &data[..];
        let mut take = |k: usize| {
            let (a, b) = rest.split_at(k);
            rest = b;
            a
        };
        let pos = take(3 * n);
        let quat = take(4 * n);
        let scale = take(3 * n);
        let opac = take(n);
        let rgb = take(3 * n);
        let emb = take(h.dim * n);
        let cloud = GaussianCloud {
            dim: h.dim,
            positions: pos.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            rotations: quat.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
            log_scales: scale.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            opacity_logits: opac.to_vec(),
            colors: rgb.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            embeddings: emb.to_vec(),
            provenance: h.provenance,
        };
        Ok((cloud, h.config_hash))
    }
}

/// Centers whose stored embedding scores above the query threshold.
pub fn segment_3d_gaussians<T: Real>(cloud: &GaussianCloud<T>, spec: &QuerySpec) -> Result<Segmentation> {
    let r = relevancy_gaussians(cloud, spec)?;
    let mut seg = Segmentation::default();
    for (i, keep) in r.mask.iter().enumerate() {
        if *keep {
            seg.points.push(cloud.positions[i].map(|v| v.as_f64()));
            seg.scores.push(r.scores[i]);
        }
    }
    Ok(seg)
}

/// Relevancy of every stored embedding.
pub fn relevancy_gaussians<T: Real>(cloud: &GaussianCloud<T>, spec: &QuerySpec) -> Result<RelevancyResult> {
    spec.validate()?;
    if cloud.dim != spec.dim() {
        return Err(Error::Input("cloud and query embedding dimensions differ".into()));
    }
    let mut scores = Vec::with_capacity(cloud.len());
    for i in 0..cloud.len() {
        let e = cloud.embedding(i);
        let n = norm(e);
        if (n - T::one()).abs() > T::unit_tolerance() {
            return Err(Error::Contract(format!("splat {i}: embedding norm {n}")));
        }
        let e: Vec<f64> = e.iter().map(|v| v.as_f64()).collect();
        scores.push(relevancy_raw(&e, spec));
    }
    let mask = scores.iter().map(|s| *s > spec.threshold).collect();
    Ok(RelevancyResult {
        scores,
        mask,
        degenerate: vec![false; cloud.len()],
    })
}

/// Per-pixel relevancy of the rasterized embedding.
pub fn relevancy_2d_gaussians<T: Real>(
    cloud: &GaussianCloud<T>,
    camera: &Camera,
    spec: &QuerySpec,
    opts: &RasterOptions,
    normalize: bool,
) -> Result<RelevancyResult> {
    spec.validate()?;
    if cloud.dim != spec.dim() {
        return Err(Error::Input("cloud and query embedding dimensions differ".into()));
    }
    let img = rasterize(cloud, camera, opts)?;
    let d = cloud.dim;
    let (scores, degenerate): (Vec<f64>, Vec<bool>) = (0..camera.num_pixels())
        .map(|p| {
            let raw: Vec<f64> = img.embedding[p * d..(p + 1) * d].iter().map(|v| v.as_f64()).collect();
            score_rendered(&raw, spec, normalize)
        })
        .unzip();
    let mask = scores.iter().map(|s| *s > spec.threshold).collect();
    Ok(RelevancyResult {
        scores,
        mask,
        degenerate,
    })
}
