//! Field-to-splat transfer: sample points from training rays, keep the
//! densest, and attach the field's embedding at each center.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{GaussianCloud, Provenance};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::io::short_hash;
use crate::render::{bounded_samples, evaluate_samples};
use crate::scalar::{logit, Real};
use crate::scene::Camera;
use crate::spatial::PointGrid;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub top_n: usize,
    pub samples_per_ray: usize,
    pub early_stop_transmittance: f64,
    /// Samples with a smaller blending weight are never candidates.
    pub min_weight: f64,
    /// Initial scale as a multiple of the mean neighbor spacing.
    pub scale_factor: f64,
    pub neighbors: usize,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            top_n: 50_000,
            samples_per_ray: 64,
            early_stop_transmittance: 1e-4,
            min_weight: 1e-3,
            scale_factor: 0.5,
            neighbors: 8,
        }
    }
}

struct Candidate {
    sigma: f64,
    order: u64,
    position: [f64; 3],
}

/// Builds a splat cloud from the densest visible sample points of `views`.
///
/// Returns fewer than `top_n` splats (with a warning) when fewer candidates
/// exist; an empty field gives an empty cloud.
pub fn transfer_from_field<T: Real>(
    field: &Field<T>,
    views: &[Camera],
    cfg: &TransferConfig,
    seed: u64,
) -> Result<GaussianCloud<T>> {
    if cfg.top_n < 1 {
        return Err(Error::Input("top_n must be >= 1".into()));
    }
    if cfg.samples_per_ray < 2 {
        return Err(Error::Input("samples_per_ray must be >= 2".into()));
    }
    let mut candidates: Vec<Candidate> = Vec::new();
    for (vi, cam) in views.iter().enumerate() {
        cam.validate()?;
        let per_pixel: Vec<Vec<Candidate>> = (0..cam.num_pixels())
            .into_par_iter()
            .map(|px| {
                let ray = cam.pixel_ray(px % cam.width, px / cam.width);
                let ray_id = ((vi as u64) << 32) | px as u64;
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ray_id.wrapping_mul(0x9E37_79B9_7F4A_7C15));
                let Some(s) = bounded_samples::<T, _>(&ray, &field.bounds, cfg.samples_per_ray, Some(&mut rng))
                else {
                    return Vec::new();
                };
                let set = evaluate_samples(field, s, cfg.early_stop_transmittance);
                let mut out = Vec::new();
                for (i, w) in set.weights.weights.iter().enumerate() {
                    let sigma = set.sigma[i].as_f64();
                    if w.as_f64() > cfg.min_weight && sigma > 0.0 {
                        out.push(Candidate {
                            sigma,
                            order: (ray_id << 8) | i as u64,
                            position: set.samples.point(i).map(|v| v.as_f64()),
                        });
                    }
                }
                out
            })
            .collect();
        candidates.extend(per_pixel.into_iter().flatten());
    }
    let by_density = |a: &Candidate, b: &Candidate| b.sigma.total_cmp(&a.sigma).then(a.order.cmp(&b.order));
    if candidates.len() > cfg.top_n {
        candidates.select_nth_unstable_by(cfg.top_n - 1, by_density);
        candidates.truncate(cfg.top_n);
    } else {
        log::warn!(
            "transfer: {} candidate points, fewer than the requested {}",
            candidates.len(),
            cfg.top_n
        );
    }
    candidates.sort_by(by_density);

    let d = field.embedding_dim();
    let mut cloud = GaussianCloud::new(d);
    cloud.provenance = Provenance {
        source_hash: field_hash(field),
        density_threshold: candidates.last().map(|c| c.sigma).unwrap_or(0.0),
        requested: cfg.top_n,
    };
    let points: Vec<[f64; 3]> = candidates.iter().map(|c| c.position).collect();
    let scales = neighbor_scales(&points, cfg.neighbors, field.finest_cell());
    for (i, p) in points.iter().enumerate() {
        let x = p.map(T::of);
        let g = field.eval_geometry(x);
        cloud.positions.push(x);
        cloud.rotations.push([T::one(), T::zero(), T::zero(), T::zero()]);
        cloud.log_scales.push([T::of((cfg.scale_factor * scales[i]).ln()); 3]);
        cloud.opacity_logits.push(logit(T::of(0.5)));
        cloud.colors.push(g.rgb);
    }
    cloud.embeddings = vec![T::zero(); cloud.len() * d];
    attach_embeddings(&mut cloud, field)?;
    Ok(cloud)
}

/// Hash of the field parameters as stored in a checkpoint.
pub(crate) fn field_hash<T: Real>(field: &Field<T>) -> String {
    let data: Vec<f32> = field.params.iter().map(|v| v.as_f32()).collect();
    short_hash(&crate::io::f32_payload(&data))
}

/// Mean distance of each point to its `k` nearest neighbors; `fallback` for
/// isolated points.
fn neighbor_scales(points: &[[f64; 3]], k: usize, fallback: f64) -> Vec<f64> {
    if points.len() < 2 {
        return vec![fallback; points.len()];
    }
    let (mut lo, mut hi) = ([f64::INFINITY; 3], [f64::NEG_INFINITY; 3]);
    for p in points {
        for a in 0..3 {
            lo[a] = lo[a].min(p[a]);
            hi[a] = hi[a].max(p[a]);
        }
    }
    let extent = (0..3).map(|a| hi[a] - lo[a]).fold(0.0, f64::max).max(1e-9);
    // Surface samples: roughly k points per cell on a 2D sheet.
    let cell = (extent / (points.len() as f64).sqrt() * (k as f64).sqrt()).max(extent / 4096.0);
    let grid = PointGrid::new(points, cell);
    (0..points.len())
        .into_par_iter()
        .map(|i| {
            let nn = grid.nearest_k(&points[i], k, Some(i as u32));
            if nn.is_empty() {
                return fallback;
            }
            let mean = nn.iter().map(|(d2, _)| d2.sqrt()).sum::<f64>() / nn.len() as f64;
            mean.max(1e-6)
        })
        .collect()
}

/// Sets every splat's embedding to the field's unit embedding at its center.
/// Nothing else changes; no optimization is involved.
pub fn attach_embeddings<T: Real>(cloud: &mut GaussianCloud<T>, field: &Field<T>) -> Result<()> {
    if cloud.dim != field.embedding_dim() {
        return Err(Error::Input("cloud and field embedding dimensions differ".into()));
    }
    let d = cloud.dim;
    cloud.embeddings.resize(cloud.len() * d, T::zero());
    let positions = &cloud.positions;
    cloud
        .embeddings
        .par_chunks_mut(d.max(1))
        .zip(positions.par_iter())
        .for_each(|(e, p)| {
            field.eval_language(*p, e);
        });
    Ok(())
}
