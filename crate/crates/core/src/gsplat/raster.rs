//! Depth-ordered alpha blending of projected splats.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::project::{project_with, CameraT, Projected, Projection};
use super::GaussianCloud;
use crate::error::Result;
use crate::render::Background;
use crate::scalar::Real;
use crate::scene::Camera;

pub const TILE_SIZE: usize = 16;
/// Squared Mahalanobis distance beyond which a splat contributes nothing.
pub const MAHALANOBIS_CUTOFF: f64 = 9.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RasterOptions {
    /// Stop blending a pixel once its transmittance drops below this.
    pub early_stop_transmittance: f64,
    pub background: Background,
}

impl Default for RasterOptions {
    fn default() -> Self {
        Self {
            early_stop_transmittance: 1e-6,
            background: Background::Black,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SplatImage<T> {
    pub width: usize,
    pub height: usize,
    pub dim: usize,
    pub rgb: Vec<T>,
    /// Raw blended embeddings, `H * W * D`.
    pub embedding: Vec<T>,
    pub opacity: Vec<T>,
    /// Splats dropped for a singular projected covariance.
    pub singular: usize,
}

/// Projected splats of a cloud, in cloud order.
pub(crate) struct Prepared<T> {
    pub proj: Vec<Option<Projected<T>>>,
    pub opacity: Vec<T>,
    pub singular: usize,
}

pub(crate) fn prepare<T: Real>(cloud: &GaussianCloud<T>, cam: &CameraT<T>) -> Prepared<T> {
    let res: Vec<Projection<T>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| project_with(&cloud.positions[i], &cloud.rotations[i], &cloud.log_scales[i], cam))
        .collect();
    let singular = res.iter().filter(|p| matches!(p, Projection::Singular)).count();
    Prepared {
        proj: res
            .into_iter()
            .map(|p| match p {
                Projection::Visible(v) => Some(v),
                _ => None,
            })
            .collect(),
        opacity: (0..cloud.len()).map(|i| cloud.opacity(i)).collect(),
        singular,
    }
}

/// Opacity-weighted kernel of splat `p` at pixel center `(px, py)`, or `None`
/// past the cutoff. Also returns the offset from the mean.
#[inline]
pub(crate) fn kernel<T: Real>(p: &Projected<T>, opacity: T, px: T, py: T) -> Option<(T, [T; 2])> {
    let d = [px - p.mean[0], py - p.mean[1]];
    let m2 = p.conic[0] * d[0] * d[0] + T::of(2.0) * p.conic[1] * d[0] * d[1] + p.conic[2] * d[1] * d[1];
    if m2 > T::of(MAHALANOBIS_CUTOFF) {
        return None;
    }
    Some((opacity * (T::of(-0.5) * m2).exp(), d))
}

/// Per-tile splat lists sorted by (depth, index).
pub(crate) struct Bins {
    pub tiles_x: usize,
    pub lists: Vec<Vec<u32>>,
}

pub(crate) fn bin<T: Real>(prep: &Prepared<T>, width: usize, height: usize) -> Bins {
    let tiles_x = width.div_ceil(TILE_SIZE);
    let tiles_y = height.div_ceil(TILE_SIZE);
    let mut lists = vec![Vec::new(); tiles_x * tiles_y];
    for (i, p) in prep.proj.iter().enumerate() {
        let Some(p) = p else { continue };
        let Some((x0, x1)) = pixel_span(p.mean[0].as_f64(), p.radius.as_f64(), width) else {
            continue;
        };
        let Some((y0, y1)) = pixel_span(p.mean[1].as_f64(), p.radius.as_f64(), height) else {
            continue;
        };
        for ty in y0 / TILE_SIZE..=y1 / TILE_SIZE {
            for tx in x0 / TILE_SIZE..=x1 / TILE_SIZE {
                lists[ty * tiles_x + tx].push(i as u32);
            }
        }
    }
    lists.par_iter_mut().for_each(|l| {
        // Stable: equal depths keep index order.
        l.sort_by(|a, b| {
            let da = prep.proj[*a as usize].as_ref().unwrap().depth;
            let db = prep.proj[*b as usize].as_ref().unwrap().depth;
            da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    Bins { tiles_x, lists }
}

/// Pixels whose centers lie within `r` of `m` along one axis.
fn pixel_span(m: f64, r: f64, size: usize) -> Option<(usize, usize)> {
    // A small margin keeps rounding from dropping a boundary pixel.
    let r = r * (1.0 + 1e-6) + 1e-3;
    let lo = (m - r - 0.5).ceil().max(0.0);
    let hi = (m + r - 0.5).floor().min(size as f64 - 1.0);
    if !(lo <= hi) {
        return None;
    }
    Some((lo as usize, hi as usize))
}

/// Blends the splats of `order` at one pixel into `rgb`, `emb`; returns the
/// final transmittance.
#[inline]
fn blend_pixel<T: Real>(
    cloud: &GaussianCloud<T>,
    prep: &Prepared<T>,
    order: &[u32],
    px: T,
    py: T,
    stop: T,
    rgb: &mut [T],
    emb: &mut [T],
) -> T {
    let d = cloud.dim;
    let mut t = T::one();
    for &i in order {
        let i = i as usize;
        let p = prep.proj[i].as_ref().expect("binned splats are visible");
        let Some((alpha, _)) = kernel(p, prep.opacity[i], px, py) else {
            continue;
        };
        let w = t * alpha;
        for k in 0..3 {
            rgb[k] += w * cloud.colors[i][k];
        }
        let e = &cloud.embeddings[i * d..(i + 1) * d];
        for k in 0..d {
            emb[k] += w * e[k];
        }
        t *= T::one() - alpha;
        if t < stop {
            break;
        }
    }
    t
}

fn empty_image<T: Real>(width: usize, height: usize, dim: usize, singular: usize) -> SplatImage<T> {
    SplatImage {
        width,
        height,
        dim,
        rgb: vec![T::zero(); width * height * 3],
        embedding: vec![T::zero(); width * height * dim],
        opacity: vec![T::zero(); width * height],
        singular,
    }
}

fn finish_pixel<T: Real>(img: &mut SplatImage<T>, idx: usize, t: T, bg: Background) {
    img.opacity[idx] = T::one() - t;
    if bg == Background::White {
        for k in 0..3 {
            img.rgb[idx * 3 + k] += t;
        }
    }
}

/// Tile-based rasterization of color, raw embedding and opacity.
pub fn rasterize<T: Real>(cloud: &GaussianCloud<T>, camera: &Camera, opts: &RasterOptions) -> Result<SplatImage<T>> {
    camera.validate()?;
    let (w, h, d) = (camera.width, camera.height, cloud.dim);
    let cam = CameraT::new(camera);
    let prep = prepare(cloud, &cam);
    let bins = bin(&prep, w, h);
    let stop = T::of(opts.early_stop_transmittance);
    // (rgb, emb, transmittance) for each pixel of each tile.
    let tiles: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let (tx, ty) = (tile % bins.tiles_x, tile / bins.tiles_x);
            let mut rgb = vec![T::zero(); TILE_SIZE * TILE_SIZE * 3];
            let mut emb = vec![T::zero(); TILE_SIZE * TILE_SIZE * d];
            let mut trans = vec![T::one(); TILE_SIZE * TILE_SIZE];
            for ly in 0..TILE_SIZE {
                for lx in 0..TILE_SIZE {
                    let (x, y) = (tx * TILE_SIZE + lx, ty * TILE_SIZE + ly);
                    if x >= w || y >= h {
                        continue;
                    }
                    let l = ly * TILE_SIZE + lx;
                    trans[l] = blend_pixel(
                        cloud,
                        &prep,
                        &bins.lists[tile],
                        T::of(x as f64 + 0.5),
                        T::of(y as f64 + 0.5),
                        stop,
                        &mut rgb[l * 3..l * 3 + 3],
                        &mut emb[l * d..(l + 1) * d],
                    );
                }
            }
            (rgb, emb, trans)
        })
        .collect();
    let mut img = empty_image(w, h, d, prep.singular);
    for (tile, (rgb, emb, trans)) in tiles.into_iter().enumerate() {
        let (tx, ty) = (tile % bins.tiles_x, tile / bins.tiles_x);
        for ly in 0..TILE_SIZE {
            for lx in 0..TILE_SIZE {
                let (x, y) = (tx * TILE_SIZE + lx, ty * TILE_SIZE + ly);
                if x >= w || y >= h {
                    continue;
                }
                let (l, idx) = (ly * TILE_SIZE + lx, y * w + x);
                img.rgb[idx * 3..idx * 3 + 3].copy_from_slice(&rgb[l * 3..l * 3 + 3]);
                img.embedding[idx * d..(idx + 1) * d].copy_from_slice(&emb[l * d..(l + 1) * d]);
                finish_pixel(&mut img, idx, trans[l], opts.background);
            }
        }
    }
    Ok(img)
}

/// Reference rasterizer: every splat at every pixel, one global depth sort,
/// no tiles and no early termination.
pub fn brute_force_rasterize<T: Real>(
    cloud: &GaussianCloud<T>,
    camera: &Camera,
    background: Background,
) -> Result<SplatImage<T>> {
    camera.validate()?;
    let (w, h, d) = (camera.width, camera.height, cloud.dim);
    let prep = prepare(cloud, &CameraT::new(camera));
    let mut order: Vec<u32> = (0..cloud.len() as u32)
        .filter(|i| prep.proj[*i as usize].is_some())
        .collect();
    order.sort_by(|a, b| {
        let da = prep.proj[*a as usize].unwrap().depth;
        let db = prep.proj[*b as usize].unwrap().depth;
        da.partial_cmp(&db).unwrap().then(a.cmp(b))
    });
    let mut img = empty_image(w, h, d, prep.singular);
    for y in 0..h {
        for x in 0..w {
            let idx = y * w + x;
            let t = blend_pixel(
                cloud,
                &prep,
                &order,
                T::of(x as f64 + 0.5),
                T::of(y as f64 + 0.5),
                T::zero(),
                &mut img.rgb[idx * 3..idx * 3 + 3],
                &mut img.embedding[idx * d..(idx + 1) * d],
            );
            finish_pixel(&mut img, idx, t, background);
        }
    }
    Ok(img)
}
