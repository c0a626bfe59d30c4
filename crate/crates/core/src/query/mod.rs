//! Relevancy scoring against canonical embeddings, in 3D and on rendered views.

mod mesh;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use mesh::{extract_isosurface, extract_mesh, Mesh};

use crate::error::{Error, Result};
use crate::field::{Field, DEGENERATE_NORM};
use crate::geom::Aabb;
use crate::render::{bounded_samples, evaluate_samples, render_embedding, RenderOptions};
use crate::scalar::Real;
use crate::scene::Camera;

/// Default threshold for scores computed on the radiance field.
pub const TAU_FIELD: f64 = 0.55;
/// Default threshold for scores computed on Gaussian splats.
pub const TAU_SPLAT: f64 = 0.60;

/// A text query: its embedding, the canonical phrases and the mask threshold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub text: Vec<f64>,
    pub canonicals: Vec<Vec<f64>>,
    pub threshold: f64,
}

fn is_unit(v: &[f64]) -> bool {
    (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-6
}

impl QuerySpec {
    pub fn new(text: Vec<f64>, canonicals: Vec<Vec<f64>>, threshold: f64) -> Result<Self> {
        let s = Self {
            text,
            canonicals,
            threshold,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Input(format!(
                "threshold must lie in (0, 1), got {}",
                self.threshold
            )));
        }
        if self.canonicals.is_empty() {
            return Err(Error::Input("at least one canonical embedding is required".into()));
        }
        if !is_unit(&self.text) {
            return Err(Error::Input("query embedding is not unit length".into()));
        }
        for c in &self.canonicals {
            if c.len() != self.text.len() {
                return Err(Error::Input("canonical dimension differs from query".into()));
            }
            if !is_unit(c) {
                return Err(Error::Input("canonical embedding is not unit length".into()));
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.text.len()
    }
}

/// `min_i exp(e.text) / (exp(e.text) + exp(e.canon_i))` for any vector `e`.
pub fn relevancy_raw(e: &[f64], spec: &QuerySpec) -> f64 {
    let et: f64 = e.iter().zip(&spec.text).map(|(a, b)| a * b).sum();
    spec.canonicals
        .iter()
        .map(|c| {
            let ec: f64 = e.iter().zip(c).map(|(a, b)| a * b).sum();
            1.0 / (1.0 + (ec - et).exp())
        })
        .fold(f64::INFINITY, f64::min)
}

/// Relevancy of a unit embedding.
pub fn relevancy_of_embedding(e: &[f64], spec: &QuerySpec) -> Result<f64> {
    if e.len() != spec.dim() {
        return Err(Error::Contract(format!(
            "embedding dimension {} differs from query dimension {}",
            e.len(),
            spec.dim()
        )));
    }
    if !is_unit(e) {
        return Err(Error::Contract("embedding is not unit length".into()));
    }
    Ok(relevancy_raw(e, spec))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelevancyResult {
    pub scores: Vec<f64>,
    /// `score > threshold`.
    pub mask: Vec<bool>,
    /// Entries scored with the fallback embedding.
    pub degenerate: Vec<bool>,
}

impl RelevancyResult {
    fn from_scores(scores: Vec<f64>, degenerate: Vec<bool>, threshold: f64) -> Self {
        let mask = scores.iter().map(|s| *s > threshold).collect();
        Self {
            scores,
            mask,
            degenerate,
        }
    }

    pub fn rethreshold(&mut self, threshold: f64) {
        self.mask = self.scores.iter().map(|s| *s > threshold).collect();
    }
}

/// Scores of the field's language embedding at each point.
///
/// No camera enters the computation.
pub fn relevancy_3d<T: Real>(
    points: &[[f64; 3]],
    field: &Field<T>,
    spec: &QuerySpec,
) -> Result<RelevancyResult> {
    spec.validate()?;
    if field.embedding_dim() != spec.dim() {
        return Err(Error::Input("field and query embedding dimensions differ".into()));
    }
    let out: Vec<(f64, bool)> = points
        .par_iter()
        .map(|p| {
            let x = [T::of(p[0]), T::of(p[1]), T::of(p[2])];
            let (e, degenerate) = field.query_language(x)?;
            let e: Vec<f64> = e.iter().map(|v| v.as_f64()).collect();
            Ok((relevancy_raw(&e, spec), degenerate))
        })
        .collect::<Result<_>>()?;
    let (scores, degenerate) = out.into_iter().unzip();
    Ok(RelevancyResult::from_scores(scores, degenerate, spec.threshold))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Query2dOptions {
    pub render: RenderOptions,
    /// Score the normalized rendered embedding instead of the raw one.
    pub normalize: bool,
}

impl Default for Query2dOptions {
    fn default() -> Self {
        Self {
            render: RenderOptions::default(),
            normalize: false,
        }
    }
}

/// Per-pixel scores of the rendered embedding seen from `camera`.
///
/// Pixels whose rendered embedding vanishes are flagged and scored with the
/// fallback axis.
pub fn relevancy_2d<T: Real>(
    camera: &Camera,
    field: &Field<T>,
    spec: &QuerySpec,
    opts: &Query2dOptions,
) -> Result<RelevancyResult> {
    camera.validate()?;
    spec.validate()?;
    if field.embedding_dim() != spec.dim() {
        return Err(Error::Input("field and query embedding dimensions differ".into()));
    }
    let d = spec.dim();
    let n = opts.render.samples_per_ray;
    if n < 2 {
        return Err(Error::Input("need at least 2 samples per ray".into()));
    }
    let out: Vec<(f64, bool)> = (0..camera.num_pixels())
        .into_par_iter()
        .map(|idx| {
            let ray = camera.pixel_ray(idx % camera.width, idx / camera.width);
            let raw: Vec<f64> =
                match bounded_samples::<T, rand_chacha::ChaCha8Rng>(&ray, &field.bounds, n, None) {
                    Some(s) => {
                        let set = evaluate_samples(field, s, opts.render.early_stop_transmittance);
                        render_embedding(&set, field)
                            .embedding_raw
                            .iter()
                            .map(|v| v.as_f64())
                            .collect()
                    }
                    None => vec![0.0; d],
                };
            score_rendered(&raw, spec, opts.normalize)
        })
        .collect();
    let (scores, degenerate) = out.into_iter().unzip();
    Ok(RelevancyResult::from_scores(scores, degenerate, spec.threshold))
}

/// Score of one rendered embedding and whether it vanished. A vanishing
/// embedding is scored with the fallback axis.
pub fn score_rendered(raw: &[f64], spec: &QuerySpec, normalize: bool) -> (f64, bool) {
    let len = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    if len <= DEGENERATE_NORM {
        let mut e = vec![0.0; raw.len()];
        e[0] = 1.0;
        (relevancy_raw(&e, spec), true)
    } else if normalize {
        let e: Vec<f64> = raw.iter().map(|v| v / len).collect();
        (relevancy_raw(&e, spec), false)
    } else {
        (relevancy_raw(raw, spec), false)
    }
}

/// Opacity of a single sample at the default density floor.
pub const FLOOR_OPACITY: f64 = 0.5;

/// Density at which one sample of spacing `mean_delta` reaches opacity 0.5.
pub fn density_floor(mean_delta: f64) -> f64 {
    density_floor_at(mean_delta, FLOOR_OPACITY)
}

/// Density at which one sample of spacing `mean_delta` reaches `opacity`.
pub fn density_floor_at(mean_delta: f64, opacity: f64) -> f64 {
    -(1.0 - opacity).ln() / mean_delta
}

/// Mean sample spacing of midpoint sampling over all pixels of `cameras`
/// whose rays cross `bounds`.
pub fn mean_sample_spacing(cameras: &[Camera], bounds: &Aabb, samples_per_ray: usize) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for cam in cameras {
        for idx in 0..cam.num_pixels() {
            let ray = cam.pixel_ray(idx % cam.width, idx / cam.width);
            let o = [ray.origin.x, ray.origin.y, ray.origin.z];
            let d = [ray.dir.x, ray.dir.y, ray.dir.z];
            if let Some((t0, t1)) = bounds.clip_ray(&o, &d) {
                let near = t0.max(0.0);
                if t1 > near {
                    total += (t1 - near) / samples_per_ray as f64;
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        // No ray crosses the box; fall back to the edge length.
        bounds.size().iter().sum::<f64>() / 3.0 / samples_per_ray as f64
    } else {
        total / count as f64
    }
}

/// Cell centers of a `res^3` grid filling `bounds`, x fastest.
pub fn grid_points(bounds: &Aabb, res: usize) -> Vec<[f64; 3]> {
    let size = bounds.size();
    let mut out = Vec::with_capacity(res * res * res);
    for k in 0..res {
        for j in 0..res {
            for i in 0..res {
                out.push([
                    bounds.min[0] + (i as f64 + 0.5) / res as f64 * size[0],
                    bounds.min[1] + (j as f64 + 0.5) / res as f64 * size[1],
                    bounds.min[2] + (k as f64 + 0.5) / res as f64 * size[2],
                ]);
            }
        }
    }
    out
}

/// Points selected by a 3D query, with their scores.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Segmentation {
    pub points: Vec<[f64; 3]>,
    pub scores: Vec<f64>,
}

impl Segmentation {
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<[f64; 3]> {
        if self.points.is_empty() {
            return None;
        }
        let mut c = [0.0; 3];
        for p in &self.points {
            for k in 0..3 {
                c[k] += p[k];
            }
        }
        Some(c.map(|v| v / self.points.len() as f64))
    }
}

/// Grid points with density above `density_floor` and relevancy above the
/// query threshold.
pub fn segment_3d<T: Real>(
    field: &Field<T>,
    spec: &QuerySpec,
    grid_res: usize,
    density_floor: f64,
) -> Result<Segmentation> {
    if grid_res < 16 {
        return Err(Error::Input(format!("grid resolution must be >= 16, got {grid_res}")));
    }
    spec.validate()?;
    if field.embedding_dim() != spec.dim() {
        return Err(Error::Input("field and query embedding dimensions differ".into()));
    }
    let pts = grid_points(&field.bounds, grid_res);
    let kept: Vec<Option<([f64; 3], f64)>> = pts
        .par_iter()
        .map(|p| {
            let x = [T::of(p[0]), T::of(p[1]), T::of(p[2])];
            if field.eval_density(x).as_f64() <= density_floor {
                return None;
            }
            let mut e = vec![T::zero(); field.embedding_dim()];
            field.eval_language(x, &mut e);
            let e: Vec<f64> = e.iter().map(|v| v.as_f64()).collect();
            let s = relevancy_raw(&e, spec);
            (s > spec.threshold).then_some((*p, s))
        })
        .collect();
    let mut seg = Segmentation::default();
    for (p, s) in kept.into_iter().flatten() {
        seg.points.push(p);
        seg.scores.push(s);
    }
    if seg.is_empty() {
        log::info!("segmentation is empty");
    }
    Ok(seg)
}

/// Vertices of `mesh` whose field embedding scores above the query threshold.
pub fn segment_mesh<T: Real>(field: &Field<T>, mesh: &Mesh, spec: &QuerySpec) -> Result<Segmentation> {
    spec.validate()?;
    if field.embedding_dim() != spec.dim() {
        return Err(Error::Input("field and query embedding dimensions differ".into()));
    }
    let scored: Vec<f64> = mesh
        .vertices
        .par_iter()
        .map(|p| {
            let mut e = vec![T::zero(); field.embedding_dim()];
            field.eval_language([T::of(p[0]), T::of(p[1]), T::of(p[2])], &mut e);
            let e: Vec<f64> = e.iter().map(|v| v.as_f64()).collect();
            relevancy_raw(&e, spec)
        })
        .collect();
    let mut seg = Segmentation::default();
    for (p, s) in mesh.vertices.iter().zip(scored) {
        if s > spec.threshold {
            seg.points.push(*p);
            seg.scores.push(s);
        }
    }
    Ok(seg)
}
