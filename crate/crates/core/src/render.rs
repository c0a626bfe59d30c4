//! Ray sampling and volume rendering of color and language embeddings.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{Field, DEGENERATE_NORM};
use crate::geom::Aabb;
use crate::scalar::{norm, Real};
use crate::scene::{Camera, Ray};

/// Upper clamp on `sigma * delta` before exponentiation.
pub const MAX_OPTICAL_DEPTH: f64 = 80.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    #[default]
    Black,
    White,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderOptions {
    pub samples_per_ray: usize,
    /// Stop marching once transmittance drops below this (0 disables).
    pub early_stop_transmittance: f64,
    pub background: Background,
}

impl Default for RenderOptions {
    fn default() -> Self {
        Self {
            samples_per_ray: 64,
            early_stop_transmittance: 1e-4,
            background: Background::Black,
        }
    }
}

/// Positions along one ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySamples<T> {
    pub origin: [T; 3],
    pub dir: [T; 3],
    /// Strictly increasing depths.
    pub t: Vec<T>,
    /// Spacing to the next sample; the last uses the bin width.
    pub delta: Vec<T>,
}

impl<T: Real> RaySamples<T> {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn point(&self, i: usize) -> [T; 3] {
        let t = self.t[i];
        [
            self.origin[0] + self.dir[0] * t,
            self.origin[1] + self.dir[1] * t,
            self.origin[2] + self.dir[2] * t,
        ]
    }
}

/// Depths for `n` stratified bins over `[near, far)`. Without an RNG each bin
/// contributes its midpoint.
pub fn stratified_depths<T: Real, R: Rng + ?Sized>(
    n: usize,
    near: f64,
    far: f64,
    rng: Option<&mut R>,
    t: &mut Vec<T>,
    delta: &mut Vec<T>,
) {
    t.clear();
    delta.clear();
    let bin = (far - near) / n as f64;
    match rng {
        Some(rng) => {
            for k in 0..n {
                let u: f64 = rng.gen();
                t.push(T::of(near + (k as f64 + u) * bin));
            }
        }
        None => {
            for k in 0..n {
                t.push(T::of(near + (k as f64 + 0.5) * bin));
            }
        }
    }
    for k in 0..n {
        delta.push(if k + 1 < n { t[k + 1] - t[k] } else { T::of(bin) });
    }
}

/// Stratified samples through pixel `(col, row)`.
pub fn sample_ray<T: Real>(
    camera: &Camera,
    pixel: (usize, usize),
    n: usize,
    near: f64,
    far: f64,
    jitter_seed: Option<u64>,
) -> Result<RaySamples<T>> {
    camera.validate()?;
    if n < 2 {
        return Err(Error::Input(format!("need at least 2 samples per ray, got {n}")));
    }
    if !(near < far) || !near.is_finite() || !far.is_finite() {
        return Err(Error::Input(format!("invalid depth range [{near}, {far}]")));
    }
    let ray = camera.pixel_ray(pixel.0, pixel.1);
    let mut s = RaySamples {
        origin: ray_origin(&ray),
        dir: ray_dir(&ray),
        t: Vec::with_capacity(n),
        delta: Vec::with_capacity(n),
    };
    match jitter_seed {
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            stratified_depths(n, near, far, Some(&mut rng), &mut s.t, &mut s.delta)
        }
        None => stratified_depths::<T, ChaCha8Rng>(n, near, far, None, &mut s.t, &mut s.delta),
    }
    Ok(s)
}

pub(crate) fn ray_origin<T: Real>(r: &Ray) -> [T; 3] {
    [T::of(r.origin.x), T::of(r.origin.y), T::of(r.origin.z)]
}

pub(crate) fn ray_dir<T: Real>(r: &Ray) -> [T; 3] {
    [T::of(r.dir.x), T::of(r.dir.y), T::of(r.dir.z)]
}

/// Transmittances `T_1..T_{N+1}` and weights `w_1..w_N`.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights<T> {
    pub transmittance: Vec<T>,
    pub weights: Vec<T>,
}

impl<T: Real> Weights<T> {
    pub fn final_transmittance(&self) -> T {
        *self.transmittance.last().unwrap()
    }

    pub fn opacity(&self) -> T {
        self.weights.iter().fold(T::zero(), |a, b| a + *b)
    }
}

/// `T_1 = 1`, `T_{i+1} = T_i exp(-sigma_i delta_i)`, `w_i = T_i (1 - exp(-sigma_i delta_i))`.
pub fn compute_weights<T: Real>(sigma: &[T], delta: &[T]) -> Result<Weights<T>> {
    if sigma.len() != delta.len() {
        return Err(Error::Contract(format!(
            "sigma has {} entries, delta {}",
            sigma.len(),
            delta.len()
        )));
    }
    if let Some(s) = sigma.iter().find(|s| !(**s >= T::zero())) {
        return Err(Error::Contract(format!("negative or NaN density {s}")));
    }
    if let Some(d) = delta.iter().find(|d| !(**d > T::zero())) {
        return Err(Error::Contract(format!("non-positive spacing {d}")));
    }
    let mut transmittance = Vec::with_capacity(sigma.len() + 1);
    let mut weights = Vec::with_capacity(sigma.len());
    let n = weights_into(sigma, delta, 0.0, &mut transmittance, &mut weights);
    debug_assert_eq!(n, sigma.len());
    Ok(Weights {
        transmittance,
        weights,
    })
}

/// Unchecked weight computation; returns how many samples were processed
/// before early termination (all when `stop_below` is 0).
#[inline]
pub fn weights_into<T: Real>(
    sigma: &[T],
    delta: &[T],
    stop_below: f64,
    trans: &mut Vec<T>,
    w: &mut Vec<T>,
) -> usize {
    trans.clear();
    w.clear();
    let cap = T::of(MAX_OPTICAL_DEPTH);
    let stop = T::of(stop_below);
    let mut t = T::one();
    trans.push(t);
    for i in 0..sigma.len() {
        let a = (sigma[i] * delta[i]).min(cap);
        let survive = (-a).exp();
        w.push(t * (T::one() - survive));
        t *= survive;
        trans.push(t);
        if t < stop {
            return i + 1;
        }
    }
    sigma.len()
}

/// Densities, colors and weights evaluated along a ray.
#[derive(Clone, Debug, PartialEq)]
pub struct RaySampleSet<T> {
    pub samples: RaySamples<T>,
    pub sigma: Vec<T>,
    pub rgb: Vec<[T; 3]>,
    pub weights: Weights<T>,
}

impl<T: Real> RaySampleSet<T> {
    /// Number of samples that carry weight (early termination may cut the ray).
    pub fn active(&self) -> usize {
        self.weights.weights.len()
    }
}

pub fn evaluate_samples<T: Real>(
    field: &Field<T>,
    samples: RaySamples<T>,
    early_stop: f64,
) -> RaySampleSet<T> {
    let n = samples.len();
    let mut sigma = Vec::with_capacity(n);
    let mut rgb = Vec::with_capacity(n);
    let mut trans = Vec::with_capacity(n + 1);
    let mut w = Vec::with_capacity(n);
    // Evaluate lazily so early termination also skips field queries.
    let cap = T::of(MAX_OPTICAL_DEPTH);
    let stop = T::of(early_stop);
    let mut t = T::one();
    trans.push(t);
    for i in 0..n {
        let g = field.eval_geometry(samples.point(i));
        sigma.push(g.sigma);
        rgb.push(g.rgb);
        let a = (g.sigma * samples.delta[i]).min(cap);
        let survive = (-a).exp();
        w.push(t * (T::one() - survive));
        t *= survive;
        trans.push(t);
        if t < stop {
            break;
        }
    }
    RaySampleSet {
        samples,
        sigma,
        rgb,
        weights: Weights {
            transmittance: trans,
            weights: w,
        },
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedPixel<T> {
    pub rgb: [T; 3],
    pub embedding_raw: Vec<T>,
    pub embedding_unit: Vec<T>,
    pub opacity: T,
    /// `embedding_raw` was (near) zero and `embedding_unit` is the fallback axis.
    pub degenerate: bool,
}

/// Unit version of a raw embedding; the fallback axis when its norm is at most
/// [`DEGENERATE_NORM`].
pub fn normalize_or_fallback<T: Real>(raw: &[T]) -> (Vec<T>, bool) {
    let n = norm(raw);
    if n > T::of(DEGENERATE_NORM) {
        (raw.iter().map(|v| *v / n).collect(), false)
    } else {
        let mut e = vec![T::zero(); raw.len()];
        e[0] = T::one();
        (e, true)
    }
}

/// `sum_i w_i F_lang(x_i)` and its normalization.
pub fn render_embedding<T: Real>(set: &RaySampleSet<T>, field: &Field<T>) -> RenderedPixel<T> {
    let d = field.embedding_dim();
    let mut raw = vec![T::zero(); d];
    let mut e = vec![T::zero(); d];
    for (i, w) in set.weights.weights.iter().enumerate() {
        field.eval_language(set.samples.point(i), &mut e);
        for k in 0..d {
            raw[k] += *w * e[k];
        }
    }
    let (unit, degenerate) = normalize_or_fallback(&raw);
    RenderedPixel {
        rgb: render_rgb(set, Background::Black),
        embedding_raw: raw,
        embedding_unit: unit,
        opacity: set.weights.opacity(),
        degenerate,
    }
}

/// `sum_i w_i c_i`, plus `T_{N+1}` times white in white-background mode.
pub fn render_rgb<T: Real>(set: &RaySampleSet<T>, background: Background) -> [T; 3] {
    let mut c = [T::zero(); 3];
    for (w, rgb) in set.weights.weights.iter().zip(&set.rgb) {
        for k in 0..3 {
            c[k] += *w * rgb[k];
        }
    }
    if background == Background::White {
        let t = set.weights.final_transmittance();
        for v in &mut c {
            *v += t;
        }
    }
    c
}

/// Samples for a pixel, restricted to where its ray crosses the field bounds.
pub fn bounded_samples<T: Real, R: Rng + ?Sized>(
    ray: &Ray,
    bounds: &Aabb,
    n: usize,
    rng: Option<&mut R>,
) -> Option<RaySamples<T>> {
    let o = [ray.origin.x, ray.origin.y, ray.origin.z];
    let d = [ray.dir.x, ray.dir.y, ray.dir.z];
    let (t0, t1) = bounds.clip_ray(&o, &d)?;
    let near = t0.max(0.0);
    if near >= t1 {
        return None;
    }
    let mut s = RaySamples {
        origin: ray_origin(ray),
        dir: ray_dir(ray),
        t: Vec::with_capacity(n),
        delta: Vec::with_capacity(n),
    };
    stratified_depths(n, near, t1, rng, &mut s.t, &mut s.delta);
    Some(s)
}

/// A rendered image of the field.
#[derive(Clone, Debug, PartialEq)]
pub struct RenderedImage<T> {
    pub width: usize,
    pub height: usize,
    pub rgb: Vec<T>,
    /// H * W * D raw (unnormalized) embeddings.
    pub embedding_raw: Vec<T>,
    pub opacity: Vec<T>,
    pub embedding_dim: usize,
    pub degenerate_pixels: usize,
}

impl<T: Real> RenderedImage<T> {
    pub fn embedding(&self, idx: usize) -> &[T] {
        &self.embedding_raw[idx * self.embedding_dim..(idx + 1) * self.embedding_dim]
    }
}

/// Renders every pixel with midpoint sampling (no jitter).
pub fn render_image<T: Real>(
    field: &Field<T>,
    camera: &Camera,
    opts: &RenderOptions,
    with_embedding: bool,
) -> Result<RenderedImage<T>> {
    camera.validate()?;
    let d = field.embedding_dim();
    let n = opts.samples_per_ray;
    if n < 2 {
        return Err(Error::Input("need at least 2 samples per ray".into()));
    }
    let pixels: Vec<RenderedPixel<T>> = (0..camera.num_pixels())
        .into_par_iter()
        .map(|idx| {
            let ray = camera.pixel_ray(idx % camera.width, idx / camera.width);
            let samples = bounded_samples::<T, ChaCha8Rng>(&ray, &field.bounds, n, None);
            match samples {
                Some(s) => {
                    let set = evaluate_samples(field, s, opts.early_stop_transmittance);
                    if with_embedding {
                        let mut px = render_embedding(&set, field);
                        px.rgb = render_rgb(&set, opts.background);
                        px
                    } else {
                        RenderedPixel {
                            rgb: render_rgb(&set, opts.background),
                            embedding_raw: Vec::new(),
                            embedding_unit: Vec::new(),
                            opacity: set.weights.opacity(),
                            degenerate: false,
                        }
                    }
                }
                None => {
                    let bg = if opts.background == Background::White {
                        T::one()
                    } else {
                        T::zero()
                    };
                    let mut unit = vec![T::zero(); if with_embedding { d } else { 0 }];
                    if with_embedding {
                        unit[0] = T::one();
                    }
                    RenderedPixel {
                        rgb: [bg; 3],
                        embedding_raw: vec![T::zero(); if with_embedding { d } else { 0 }],
                        embedding_unit: unit,
                        opacity: T::zero(),
                        degenerate: with_embedding,
                    }
                }
            }
        })
        .collect();
    let mut img = RenderedImage {
        width: camera.width,
        height: camera.height,
        rgb: Vec::with_capacity(3 * pixels.len()),
        embedding_raw: Vec::with_capacity(if with_embedding { d * pixels.len() } else { 0 }),
        opacity: Vec::with_capacity(pixels.len()),
        embedding_dim: if with_embedding { d } else { 0 },
        degenerate_pixels: 0,
    };
    for p in pixels {
        img.rgb.extend_from_slice(&p.rgb);
        img.embedding_raw.extend_from_slice(&p.embedding_raw);
        img.opacity.push(p.opacity);
        img.degenerate_pixels += p.degenerate as usize;
    }
    Ok(img)
}

/// Peak signal-to-noise ratio for signals in `[0, 1]`.
pub fn psnr(pred: &[f32], target: &[f32]) -> f64 {
    let mse = pred
        .iter()
        .zip(target)
        .map(|(a, b)| {
            let d = *a as f64 - *b as f64;
            d * d
        })
        .sum::<f64>()
        / pred.len().max(1) as f64;
    if mse <= 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}
