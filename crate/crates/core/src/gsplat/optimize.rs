//! Photometric optimization of splat attributes with frozen centers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::project::{scale_rotation, CameraT};
use super::raster::{bin, kernel, prepare, RasterOptions, TILE_SIZE};
use super::{rasterize, GaussianCloud};
use crate::error::{Error, Result};
use crate::render::psnr;
use crate::scalar::{dot, norm, Real};
use crate::scene::{Camera, Dataset};
use crate::train::Adam;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizeConfig {
    pub iterations: usize,
    pub lr_color: f64,
    pub lr_opacity: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    /// Weight of a rendered-embedding loss; 0 keeps embeddings frozen.
    pub lambda_lang: f64,
    pub lr_embedding: f64,
    pub raster: RasterOptions,
    /// Report PSNR over all views before and after.
    pub measure_psnr: bool,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self {
            iterations: 2000,
            lr_color: 2.5e-3,
            lr_opacity: 5e-2,
            lr_scale: 5e-3,
            lr_rotation: 1e-4,
            lambda_lang: 0.0,
            lr_embedding: 1e-3,
            raster: RasterOptions::default(),
            measure_psnr: true,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizeReport {
    pub losses: Vec<f64>,
    pub psnr_before: Option<f64>,
    pub psnr_after: Option<f64>,
}

/// Gradients of a loss with respect to the trainable splat attributes.
#[derive(Clone, Debug, PartialEq)]
pub struct SplatGrad<T> {
    pub rotation: Vec<[T; 4]>,
    pub log_scale: Vec<[T; 3]>,
    pub opacity_logit: Vec<T>,
    pub color: Vec<[T; 3]>,
    /// Empty unless a language target was given.
    pub embedding: Vec<T>,
}

impl<T: Real> SplatGrad<T> {
    fn zeros(n: usize, dim: usize, lang: bool) -> Self {
        Self {
            rotation: vec![[T::zero(); 4]; n],
            log_scale: vec![[T::zero(); 3]; n],
            opacity_logit: vec![T::zero(); n],
            color: vec![[T::zero(); 3]; n],
            embedding: if lang { vec![T::zero(); n * dim] } else { Vec::new() },
        }
    }
}

/// Gradient of the packed inverse covariance, opacity logit, color and
/// embedding of one splat.
#[derive(Clone, Copy)]
struct Partial<T> {
    conic: [T; 3],
    logit: T,
    color: [T; 3],
}

/// Mean over pixels of the per-channel squared color error, plus
/// `lambda_lang` times the mean of `-phi . gt` over pixels, and its gradient.
///
/// `target_lang` holds a unit embedding per pixel; without it embeddings get
/// no gradient.
pub fn photometric_grad<T: Real>(
    cloud: &GaussianCloud<T>,
    camera: &Camera,
    target_rgb: &[f32],
    target_lang: Option<(&[T], T)>,
    opts: &RasterOptions,
) -> Result<(T, SplatGrad<T>)> {
    camera.validate()?;
    let (w, h, d) = (camera.width, camera.height, cloud.dim);
    if target_rgb.len() != w * h * 3 {
        return Err(Error::Input("target image size mismatch".into()));
    }
    let cam = CameraT::new(camera);
    let prep = prepare(cloud, &cam);
    let bins = bin(&prep, w, h);
    let stop = T::of(opts.early_stop_transmittance);
    let inv_pixels = T::one() / T::of((w * h) as f64);
    let three = T::of(3.0);
    let lang_target = target_lang.map(|(t, l)| (t, l));

    // Per tile: loss and partials aligned with the tile's list.
    let tiles: Vec<(T, Vec<Partial<T>>, Vec<T>)> = (0..bins.lists.len())
        .into_par_iter()
        .map(|tile| {
            let list = &bins.lists[tile];
            let (tx, ty) = (tile % bins.tiles_x, tile / bins.tiles_x);
            let mut partial = vec![
                Partial {
                    conic: [T::zero(); 3],
                    logit: T::zero(),
                    color: [T::zero(); 3],
                };
                list.len()
            ];
            let mut d_emb = if lang_target.is_some() { vec![T::zero(); list.len() * d] } else { Vec::new() };
            let mut loss = T::zero();
            // (slot in list, alpha, offset, transmittance before)
            let mut hits: Vec<(usize, T, [T; 2], T)> = Vec::new();
            for ly in 0..TILE_SIZE {
                for lx in 0..TILE_SIZE {
                    let (x, y) = (tx * TILE_SIZE + lx, ty * TILE_SIZE + ly);
                    if x >= w || y >= h {
                        continue;
                    }
                    let idx = y * w + x;
                    let (px, py) = (T::of(x as f64 + 0.5), T::of(y as f64 + 0.5));
                    hits.clear();
                    let mut t = T::one();
                    let mut c = [T::zero(); 3];
                    let mut raw = vec![T::zero(); if lang_target.is_some() { d } else { 0 }];
                    for (slot, &i) in list.iter().enumerate() {
                        let i = i as usize;
                        let p = prep.proj[i].as_ref().unwrap();
                        let Some((alpha, off)) = kernel(p, prep.opacity[i], px, py) else {
                            continue;
                        };
                        hits.push((slot, alpha, off, t));
                        for k in 0..3 {
                            c[k] += t * alpha * cloud.colors[i][k];
                        }
                        if !raw.is_empty() {
                            let e = cloud.embedding(i);
                            for k in 0..d {
                                raw[k] += t * alpha * e[k];
                            }
                        }
                        t *= T::one() - alpha;
                        if t < stop {
                            break;
                        }
                    }
                    let mut g_c = [T::zero(); 3];
                    for k in 0..3 {
                        let r = c[k] - T::of(target_rgb[idx * 3 + k] as f64);
                        loss += r * r / three * inv_pixels;
                        g_c[k] = T::of(2.0) * r / three * inv_pixels;
                    }
                    // Rendered-embedding loss; only embeddings receive it.
                    if let Some((tl, lambda)) = lang_target {
                        let gt = &tl[idx * d..(idx + 1) * d];
                        let n = norm(&raw);
                        if n > T::of(crate::field::DEGENERATE_NORM) {
                            let s = dot(&raw, gt) / n;
                            loss -= lambda * s * inv_pixels;
                            for &(slot, alpha, _, tb) in &hits {
                                for k in 0..d {
                                    let phi = raw[k] / n;
                                    d_emb[slot * d + k] -= lambda * inv_pixels * (gt[k] - phi * s) / n * tb * alpha;
                                }
                            }
                        }
                    }
                    // Suffix color behind each hit.
                    let mut rear = [T::zero(); 3];
                    for &(slot, alpha, off, tb) in hits.iter().rev() {
                        let i = list[slot] as usize;
                        let ci = cloud.colors[i];
                        let mut g_alpha = T::zero();
                        for k in 0..3 {
                            partial[slot].color[k] += g_c[k] * alpha * tb;
                            g_alpha += g_c[k] * tb * (ci[k] - rear[k]);
                            rear[k] = ci[k] * alpha + (T::one() - alpha) * rear[k];
                        }
                        let o = prep.opacity[i];
                        partial[slot].logit += g_alpha * alpha * (T::one() - o);
                        // alpha = o exp(-m2 / 2)
                        let g_m2 = -T::of(0.5) * alpha * g_alpha;
                        partial[slot].conic[0] += g_m2 * off[0] * off[0];
                        partial[slot].conic[1] += g_m2 * T::of(2.0) * off[0] * off[1];
                        partial[slot].conic[2] += g_m2 * off[1] * off[1];
                    }
                }
            }
            (loss, partial, d_emb)
        })
        .collect();

    let n = cloud.len();
    let mut loss = T::zero();
    let mut conic = vec![[T::zero(); 3]; n];
    let mut grad = SplatGrad::zeros(n, d, lang_target.is_some());
    for (tile, (l, partial, d_emb)) in tiles.into_iter().enumerate() {
        loss += l;
        for (slot, p) in partial.iter().enumerate() {
            let i = bins.lists[tile][slot] as usize;
            for k in 0..3 {
                conic[i][k] += p.conic[k];
                grad.color[i][k] += p.color[k];
            }
            grad.opacity_logit[i] += p.logit;
            if !d_emb.is_empty() {
                for k in 0..d {
                    grad.embedding[i * d + k] += d_emb[slot * d + k];
                }
            }
        }
    }

    // Chain the inverse covariance back to scale and rotation.
    let chained: Vec<([T; 4], [T; 3])> = (0..n)
        .into_par_iter()
        .map(|i| match &prep.proj[i] {
            Some(p) if conic[i].iter().any(|v| *v != T::zero()) => {
                covariance_backward(&cloud.rotations[i], &cloud.log_scales[i], p.jw, p.conic, conic[i])
            }
            _ => ([T::zero(); 4], [T::zero(); 3]),
        })
        .collect();
    for (i, (r, s)) in chained.into_iter().enumerate() {
        grad.rotation[i] = r;
        grad.log_scale[i] = s;
    }
    Ok((loss, grad))
}

/// Gradient through `A = (M L L^T M^T + reg I)^-1` with `L = R(q) diag(e^s)`.
fn covariance_backward<T: Real>(
    q: &[T; 4],
    log_scale: &[T; 3],
    m: [[T; 3]; 2],
    a: [T; 3],
    g_packed: [T; 3],
) -> ([T; 4], [T; 3]) {
    let two = T::of(2.0);
    // Full symmetric gradient of A; the packed off-diagonal counts twice.
    let ga = [[g_packed[0], g_packed[1] / two], [g_packed[1] / two, g_packed[2]]];
    let af = [[a[0], a[1]], [a[1], a[2]]];
    // dL/dSigma = -A G A
    let mut gs = [[T::zero(); 2]; 2];
    for r in 0..2 {
        for c in 0..2 {
            let mut s = T::zero();
            for i in 0..2 {
                for j in 0..2 {
                    s += af[r][i] * ga[i][j] * af[j][c];
                }
            }
            gs[r][c] = -s;
        }
    }
    let l = scale_rotation(q, log_scale);
    let ml: [[T; 3]; 2] =
        std::array::from_fn(|r| std::array::from_fn(|c| m[r][0] * l[0][c] + m[r][1] * l[1][c] + m[r][2] * l[2][c]));
    // Sigma = ML ML^T: dL/dML = (G + G^T) ML = 2 G ML.
    let g_ml: [[T; 3]; 2] =
        std::array::from_fn(|r| std::array::from_fn(|c| two * (gs[r][0] * ml[0][c] + gs[r][1] * ml[1][c])));
    let g_l: [[T; 3]; 3] =
        std::array::from_fn(|i| std::array::from_fn(|k| m[0][i] * g_ml[0][k] + m[1][i] * g_ml[1][k]));
    let s = log_scale.map(|v| v.exp());
    let qn = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / qn, q[1] / qn, q[2] / qn, q[3] / qn);
    let r = super::quat_to_matrix(q);
    let mut g_logs = [T::zero(); 3];
    let mut g_r = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for k in 0..3 {
            g_logs[k] += g_l[i][k] * r[i][k] * s[k];
            g_r[i][k] = g_l[i][k] * s[k];
        }
    }
    let g = g_r;
    let gq = [
        two * (-z * g[0][1] + y * g[0][2] + z * g[1][0] - x * g[1][2] - y * g[2][0] + x * g[2][1]),
        two * (y * g[0][1] + z * g[0][2] + y * g[1][0] - two * x * g[1][1] - w * g[1][2] + z * g[2][0] + w * g[2][1]
            - two * x * g[2][2]),
        two * (-two * y * g[0][0] + x * g[0][1] + w * g[0][2] + x * g[1][0] + z * g[1][2] - w * g[2][0] + z * g[2][1]
            - two * y * g[2][2]),
        two * (-two * z * g[0][0] - w * g[0][1] + x * g[0][2] + w * g[1][0] - two * z * g[1][1] + y * g[1][2]
            + x * g[2][0]
            + y * g[2][1]),
    ];
    // Through q / |q|.
    let qh = [w, x, y, z];
    let proj = dot(&qh, &gq);
    let g_q = std::array::from_fn(|k| (gq[k] - qh[k] * proj) / qn);
    (g_q, g_logs)
}

fn flatten<T: Copy, const N: usize>(v: &[[T; N]]) -> Vec<T> {
    v.iter().flatten().copied().collect()
}

fn unflatten<T: Copy + Default, const N: usize>(v: &[T], out: &mut [[T; N]]) {
    for (o, c) in out.iter_mut().zip(v.chunks_exact(N)) {
        o.copy_from_slice(c);
    }
}

/// PSNR of the rasterized cloud against every view of the dataset.
pub fn cloud_psnr<T: Real>(cloud: &GaussianCloud<T>, dataset: &Dataset, opts: &RasterOptions) -> Result<f64> {
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for v in &dataset.views {
        let img = rasterize(cloud, &v.camera, opts)?;
        pred.extend(img.rgb.iter().map(|x| x.as_f32()));
        target.extend_from_slice(&v.rgb);
    }
    Ok(psnr(&pred, &target))
}

/// Adam on rotation, scale, opacity and color against randomly drawn training
/// views. Positions are never written; embeddings only when `lambda_lang > 0`.
pub fn optimize_gaussians<T: Real>(
    cloud: &mut GaussianCloud<T>,
    dataset: &Dataset,
    cfg: &OptimizeConfig,
    seed: u64,
) -> Result<OptimizeReport> {
    let mut report = OptimizeReport::default();
    if cloud.is_empty() || dataset.views.is_empty() {
        return Ok(report);
    }
    if cfg.measure_psnr {
        report.psnr_before = Some(cloud_psnr(cloud, dataset, &cfg.raster)?);
    }
    let n = cloud.len();
    let d = cloud.dim;
    let lang = cfg.lambda_lang > 0.0;
    let table: Vec<Vec<T>> = if lang { crate::train::embedding_table(dataset) } else { Vec::new() };
    let mut opt_rot = Adam::<T>::new(4 * n, 0.9, 0.999, 1e-15);
    let mut opt_scale = Adam::<T>::new(3 * n, 0.9, 0.999, 1e-15);
    let mut opt_opacity = Adam::<T>::new(n, 0.9, 0.999, 1e-15);
    let mut opt_color = Adam::<T>::new(3 * n, 0.9, 0.999, 1e-15);
    let mut opt_emb = Adam::<T>::new(if lang { n * d } else { 0 }, 0.9, 0.999, 1e-15);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for step in 0..cfg.iterations {
        let view = &dataset.views[rng.gen_range(0..dataset.views.len())];
        let lang_target: Option<Vec<T>> = lang.then(|| {
            view.labels
                .iter()
                .flat_map(|l| table[(*l + 1) as usize].iter().copied())
                .collect()
        });
        let (loss, g) = photometric_grad(
            cloud,
            &view.camera,
            &view.rgb,
            lang_target.as_deref().map(|t| (t, T::of(cfg.lambda_lang))),
            &cfg.raster,
        )?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: "splat optimization loss".into(),
            });
        }
        report.losses.push(loss.as_f64());

        let mut rot = flatten(&cloud.rotations);
        opt_rot.step(&mut rot, &flatten(&g.rotation), |_| cfg.lr_rotation);
        unflatten(&rot, &mut cloud.rotations);
        for q in &mut cloud.rotations {
            let qn = norm(q);
            *q = q.map(|v| v / qn);
        }
        let mut sc = flatten(&cloud.log_scales);
        opt_scale.step(&mut sc, &flatten(&g.log_scale), |_| cfg.lr_scale);
        unflatten(&sc, &mut cloud.log_scales);
        opt_opacity.step(&mut cloud.opacity_logits, &g.opacity_logit, |_| cfg.lr_opacity);
        let mut col = flatten(&cloud.colors);
        opt_color.step(&mut col, &flatten(&g.color), |_| cfg.lr_color);
        for v in &mut col {
            *v = v.max(T::zero()).min(T::one());
        }
        unflatten(&col, &mut cloud.colors);
        if lang {
            opt_emb.step(&mut cloud.embeddings, &g.embedding, |_| cfg.lr_embedding);
            for e in cloud.embeddings.chunks_exact_mut(d) {
                let (u, _) = crate::render::normalize_or_fallback(e);
                e.copy_from_slice(&u);
            }
        }
    }
    if cfg.measure_psnr {
        report.psnr_after = Some(cloud_psnr(cloud, dataset, &cfg.raster)?);
    }
    Ok(report)
}
