//! The trainable scene representation.
//!
//! Two independent grid pyramids feed three affine heads:
//!
//! * geometry pyramid -> density head (softplus) and color head (sigmoid),
//! * language pyramid -> language head, projected onto the unit sphere.
//!
//! All parameters live in one flat vector so the optimizer, checkpointing
//! and finite-difference checks can treat them uniformly; [`FieldLayout`]
//! names the blocks.

mod checkpoint;
mod grid;

pub use checkpoint::FIELD_CKPT_VERSION;
pub use grid::{inside, to_unit, GridPyramid, Stencil};

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Aabb;
use crate::scalar::{sigmoid, softplus, Real};

/// Below this pre-normalization norm an embedding is replaced by the fallback axis.
pub const DEGENERATE_NORM: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldConfig {
    /// Cells per axis of each level, strictly increasing.
    pub resolutions: Vec<usize>,
    pub channels: usize,
    pub density_bias_init: f64,
    pub density_weight_init: f64,
    pub geometry_init_scale: f64,
    pub language_init_scale: f64,
    /// Unit-normalize point embeddings at query time.
    pub normalize_points: bool,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self {
            resolutions: vec![16, 32, 64],
            channels: 4,
            density_bias_init: -10.0,
            density_weight_init: 5.0,
            geometry_init_scale: 1e-4,
            language_init_scale: 0.1,
            normalize_points: true,
        }
    }
}

impl FieldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolutions.is_empty() || self.resolutions[0] == 0 {
            return Err(Error::Config("field needs at least one level".into()));
        }
        if self.resolutions.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(
                "field resolutions must be strictly increasing".into(),
            ));
        }
        if self.channels == 0 {
            return Err(Error::Config("field channels must be >= 1".into()));
        }
        Ok(())
    }
}

/// Offsets of every parameter block in the flat vector.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldLayout {
    pub geometry: GridPyramid,
    pub language: GridPyramid,
    pub embedding_dim: usize,
    geo_grid: usize,
    lang_grid: usize,
    density_w: usize,
    density_b: usize,
    color_w: usize,
    color_b: usize,
    lang_w: usize,
    lang_b: usize,
    total: usize,
}

impl FieldLayout {
    pub fn new(cfg: &FieldConfig, embedding_dim: usize) -> Self {
        let geometry = GridPyramid::new(&cfg.resolutions, cfg.channels);
        let language = GridPyramid::new(&cfg.resolutions, cfg.channels);
        let f = geometry.feature_width();
        let geo_grid = 0;
        let lang_grid = geo_grid + geometry.len;
        let density_w = lang_grid + language.len;
        let density_b = density_w + f;
        let color_w = density_b + 1;
        let color_b = color_w + 3 * f;
        let lang_w = color_b + 3;
        let lang_b = lang_w + embedding_dim * f;
        let total = lang_b + embedding_dim;
        Self {
            geometry,
            language,
            embedding_dim,
            geo_grid,
            lang_grid,
            density_w,
            density_b,
            color_w,
            color_b,
            lang_w,
            lang_b,
            total,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn feature_width(&self) -> usize {
        self.geometry.feature_width()
    }

    pub fn geometry_grid(&self) -> Range<usize> {
        self.geo_grid..self.lang_grid
    }

    pub fn language_grid(&self) -> Range<usize> {
        self.lang_grid..self.density_w
    }

    /// Density and color head weights and biases.
    pub fn geometry_heads(&self) -> Range<usize> {
        self.density_w..self.lang_w
    }

    pub fn density_head(&self) -> Range<usize> {
        self.density_w..self.color_w
    }

    pub fn language_head(&self) -> Range<usize> {
        self.lang_w..self.total
    }

    /// Everything that influences density or color.
    pub fn is_geometry(&self, i: usize) -> bool {
        self.geometry_grid().contains(&i) || self.geometry_heads().contains(&i)
    }

    pub fn is_language(&self, i: usize) -> bool {
        self.language_grid().contains(&i) || self.language_head().contains(&i)
    }

    pub fn is_grid(&self, i: usize) -> bool {
        i < self.density_w
    }
}

/// Geometry outputs at a point, with the pre-activations kept for backward.
#[derive(Clone, Copy, Debug, Default)]
pub struct GeometrySample<T> {
    pub sigma: T,
    pub rgb: [T; 3],
}

/// Language output written into a caller buffer.
#[derive(Clone, Copy, Debug, Default)]
pub struct LanguageSample<T> {
    /// Norm of the head output before normalization.
    pub pre_norm: T,
    pub degenerate: bool,
}

/// Radiance and language field over an axis-aligned box.
#[derive(Debug)]
pub struct Field<T> {
    pub bounds: Aabb,
    pub layout: FieldLayout,
    pub config: FieldConfig,
    pub params: Vec<T>,
    degenerate: AtomicUsize,
}

impl<T: Real> Clone for Field<T> {
    fn clone(&self) -> Self {
        Self {
            bounds: self.bounds,
            layout: self.layout.clone(),
            config: self.config.clone(),
            params: self.params.clone(),
            degenerate: AtomicUsize::new(self.degenerate.load(Ordering::Relaxed)),
        }
    }
}

impl<T: Real> PartialEq for Field<T> {
    fn eq(&self, other: &Self) -> bool {
        self.bounds == other.bounds
            && self.layout == other.layout
            && self.config == other.config
            && self.params == other.params
    }
}

/// Scratch buffer large enough for any feature vector.
const MAX_FEATURES: usize = 64;

impl<T: Real> Field<T> {
    /// Field with all parameters zero.
    pub fn zeros(bounds: Aabb, config: &FieldConfig, embedding_dim: usize) -> Result<Self> {
        config.validate()?;
        if !bounds.is_valid() {
            return Err(Error::Config("field bounds are degenerate".into()));
        }
        if embedding_dim == 0 {
            return Err(Error::Config("embedding_dim must be >= 1".into()));
        }
        let layout = FieldLayout::new(config, embedding_dim);
        if layout.feature_width() > MAX_FEATURES {
            return Err(Error::Config(format!(
                "levels * channels must be <= {MAX_FEATURES}"
            )));
        }
        Ok(Self {
            bounds,
            params: vec![T::zero(); layout.len()],
            layout,
            config: config.clone(),
            degenerate: AtomicUsize::new(0),
        })
    }

    /// Seeded initialization: near-empty density, noisy language directions.
    pub fn init(bounds: Aabb, config: &FieldConfig, embedding_dim: usize, seed: u64) -> Result<Self> {
        let mut f = Self::zeros(bounds, config, embedding_dim)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let l = f.layout.clone();
        let fw = l.feature_width();
        let gs = config.geometry_init_scale;
        for v in &mut f.params[l.geometry_grid()] {
            *v = T::of(rng.gen_range(-gs..=gs));
        }
        let ls = config.language_init_scale;
        for v in &mut f.params[l.language_grid()] {
            *v = T::of(rng.gen_range(-ls..=ls));
        }
        for i in 0..fw {
            f.params[l.density_w + i] = T::of(config.density_weight_init);
        }
        f.params[l.density_b] = T::of(config.density_bias_init);
        for i in 0..3 * fw {
            f.params[l.color_w + i] = T::of(rng.sample::<f64, _>(StandardNormal));
        }
        let scale = 1.0 / (fw as f64).sqrt();
        for i in 0..embedding_dim * fw {
            f.params[l.lang_w + i] = T::of(scale * rng.sample::<f64, _>(StandardNormal));
        }
        Ok(f)
    }

    pub fn embedding_dim(&self) -> usize {
        self.layout.embedding_dim
    }

    pub fn degenerate_count(&self) -> usize {
        self.degenerate.load(Ordering::Relaxed)
    }

    pub fn reset_degenerate_count(&self) {
        self.degenerate.store(0, Ordering::Relaxed);
    }

    fn check_point(x: [T; 3]) -> Result<()> {
        if x.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::Input(format!("non-finite query point {x:?}")))
        }
    }

    /// Geometry at a point known to be finite. Outside the bounds the field is
    /// empty (density 0, black).
    #[inline]
    pub fn eval_geometry(&self, x: [T; 3]) -> GeometrySample<T> {
        if !inside(&self.bounds, x) {
            return GeometrySample::default();
        }
        let l = &self.layout;
        let fw = l.feature_width();
        let mut feat = [T::zero(); MAX_FEATURES];
        let u = to_unit(&self.bounds, x);
        l.geometry
            .features(&self.params[l.geometry_grid()], u, &mut feat[..fw]);
        let p = &self.params;
        let mut z = p[l.density_b];
        for i in 0..fw {
            z += p[l.density_w + i] * feat[i];
        }
        let mut rgb = [T::zero(); 3];
        for (j, c) in rgb.iter_mut().enumerate() {
            let mut s = p[l.color_b + j];
            let w = &p[l.color_w + j * fw..l.color_w + (j + 1) * fw];
            for i in 0..fw {
                s += w[i] * feat[i];
            }
            *c = sigmoid(s);
        }
        GeometrySample {
            sigma: softplus(z),
            rgb,
        }
    }

    /// Density only; skips the color head.
    #[inline]
    pub fn eval_density(&self, x: [T; 3]) -> T {
        if !inside(&self.bounds, x) {
            return T::zero();
        }
        let l = &self.layout;
        let fw = l.feature_width();
        let mut feat = [T::zero(); MAX_FEATURES];
        l.geometry.features(
            &self.params[l.geometry_grid()],
            to_unit(&self.bounds, x),
            &mut feat[..fw],
        );
        let mut z = self.params[l.density_b];
        for i in 0..fw {
            z += self.params[l.density_w + i] * feat[i];
        }
        softplus(z)
    }

    /// Writes the point embedding into `out` (length D).
    #[inline]
    pub fn eval_language(&self, x: [T; 3], out: &mut [T]) -> LanguageSample<T> {
        let l = &self.layout;
        let fw = l.feature_width();
        let d = l.embedding_dim;
        let mut feat = [T::zero(); MAX_FEATURES];
        if inside(&self.bounds, x) {
            l.language.features(
                &self.params[l.language_grid()],
                to_unit(&self.bounds, x),
                &mut feat[..fw],
            );
        }
        let p = &self.params;
        for (k, o) in out.iter_mut().enumerate().take(d) {
            let w = &p[l.lang_w + k * fw..l.lang_w + (k + 1) * fw];
            let mut s = p[l.lang_b + k];
            for i in 0..fw {
                s += w[i] * feat[i];
            }
            *o = s;
        }
        let n = crate::scalar::norm(&out[..d]);
        if !self.config.normalize_points {
            return LanguageSample {
                pre_norm: n,
                degenerate: false,
            };
        }
        if n > T::of(DEGENERATE_NORM) {
            let inv = T::one() / n;
            out[..d].iter_mut().for_each(|v| *v *= inv);
            LanguageSample {
                pre_norm: n,
                degenerate: false,
            }
        } else {
            out[..d].iter_mut().for_each(|v| *v = T::zero());
            out[0] = T::one();
            self.degenerate.fetch_add(1, Ordering::Relaxed);
            LanguageSample {
                pre_norm: n,
                degenerate: true,
            }
        }
    }

    pub fn query_density(&self, x: [T; 3]) -> Result<T> {
        Self::check_point(x)?;
        Ok(self.eval_density(x))
    }

    pub fn query_color(&self, x: [T; 3]) -> Result<[T; 3]> {
        Self::check_point(x)?;
        Ok(self.eval_geometry(x).rgb)
    }

    /// Unit embedding at `x`; the degenerate flag marks the fallback axis.
    pub fn query_language(&self, x: [T; 3]) -> Result<(Vec<T>, bool)> {
        Self::check_point(x)?;
        let mut out = vec![T::zero(); self.embedding_dim()];
        let s = self.eval_language(x, &mut out);
        Ok((out, s.degenerate))
    }

    /// Accumulates parameter gradients of a geometry query given upstream
    /// gradients with respect to `sigma` and `rgb`.
    #[inline]
    pub fn backward_geometry(&self, x: [T; 3], d_sigma: T, d_rgb: [T; 3], grad: &mut [T]) {
        if !inside(&self.bounds, x) {
            return;
        }
        if d_sigma == T::zero() && d_rgb.iter().all(|v| *v == T::zero()) {
            return;
        }
        let l = &self.layout;
        let fw = l.feature_width();
        let u = to_unit(&self.bounds, x);
        let mut feat = [T::zero(); MAX_FEATURES];
        l.geometry
            .features(&self.params[l.geometry_grid()], u, &mut feat[..fw]);
        let p = &self.params;
        let mut d_feat = [T::zero(); MAX_FEATURES];

        let mut z = p[l.density_b];
        for i in 0..fw {
            z += p[l.density_w + i] * feat[i];
        }
        let dz = d_sigma * sigmoid(z);
        if dz != T::zero() {
            grad[l.density_b] += dz;
            for i in 0..fw {
                grad[l.density_w + i] += dz * feat[i];
                d_feat[i] += dz * p[l.density_w + i];
            }
        }
        for j in 0..3 {
            if d_rgb[j] == T::zero() {
                continue;
            }
            let row = l.color_w + j * fw;
            let mut s = p[l.color_b + j];
            for i in 0..fw {
                s += p[row + i] * feat[i];
            }
            let c = sigmoid(s);
            let ds = d_rgb[j] * c * (T::one() - c);
            grad[l.color_b + j] += ds;
            for i in 0..fw {
                grad[row + i] += ds * feat[i];
                d_feat[i] += ds * p[row + i];
            }
        }
        let range = l.geometry_grid();
        l.geometry
            .scatter(&mut grad[range], u, &d_feat[..fw]);
    }

    /// Accumulates parameter gradients of a language query given the upstream
    /// gradient with respect to the returned embedding.
    ///
    /// For the normalized output `y = p / |p|` the Jacobian is
    /// `(I - y y^T) / |p|`. Degenerate points contribute nothing.
    #[inline]
    pub fn backward_language(&self, x: [T; 3], d_out: &[T], grad: &mut [T]) {
        let l = &self.layout;
        let fw = l.feature_width();
        let d = l.embedding_dim;
        if d_out.iter().all(|v| *v == T::zero()) {
            return;
        }
        let is_inside = inside(&self.bounds, x);
        let u = to_unit(&self.bounds, x);
        let mut feat = [T::zero(); MAX_FEATURES];
        if is_inside {
            l.language
                .features(&self.params[l.language_grid()], u, &mut feat[..fw]);
        }
        let p = &self.params;
        let mut pre = vec![T::zero(); d];
        for (k, o) in pre.iter_mut().enumerate() {
            let w = &p[l.lang_w + k * fw..l.lang_w + (k + 1) * fw];
            let mut s = p[l.lang_b + k];
            for i in 0..fw {
                s += w[i] * feat[i];
            }
            *o = s;
        }
        let mut g_pre = d_out[..d].to_vec();
        if self.config.normalize_points {
            let n = crate::scalar::norm(&pre);
            if n <= T::of(DEGENERATE_NORM) {
                return;
            }
            let inv = T::one() / n;
            let mut yg = T::zero();
            for k in 0..d {
                yg += pre[k] * inv * d_out[k];
            }
            for k in 0..d {
                g_pre[k] = (d_out[k] - pre[k] * inv * yg) * inv;
            }
        }
        let mut d_feat = [T::zero(); MAX_FEATURES];
        for k in 0..d {
            let g = g_pre[k];
            if g == T::zero() {
                continue;
            }
            grad[l.lang_b + k] += g;
            let row = l.lang_w + k * fw;
            for i in 0..fw {
                grad[row + i] += g * feat[i];
                d_feat[i] += g * p[row + i];
            }
        }
        if is_inside {
            let range = l.language_grid();
            l.language.scatter(&mut grad[range], u, &d_feat[..fw]);
        }
    }

    /// Converts to another scalar type (lossy when narrowing).
    pub fn cast<U: Real>(&self) -> Field<U> {
        Field {
            bounds: self.bounds,
            layout: self.layout.clone(),
            config: self.config.clone(),
            params: self.params.iter().map(|v| U::of(v.as_f64())).collect(),
            degenerate: AtomicUsize::new(0),
        }
    }

    /// Smallest cell edge of the finest level, in world units.
    pub fn finest_cell(&self) -> f64 {
        let r = *self.config.resolutions.last().unwrap() as f64;
        let s = self.bounds.size();
        s.iter().cloned().fold(f64::INFINITY, f64::min) / r
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> FieldConfig {
        FieldConfig {
            resolutions: vec![2, 4],
            channels: 2,
            ..Default::default()
        }
    }

    #[test]
    fn outside_bounds_is_empty() {
        let f = Field::<f64>::init(Aabb::cube(1.0), &small_cfg(), 4, 0).unwrap();
        assert_eq!(f.query_density([2.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(matches!(
            f.query_density([f64::NAN, 0.0, 0.0]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn zero_parameters_give_softplus_of_bias() {
        let mut f = Field::<f64>::zeros(Aabb::cube(1.0), &small_cfg(), 4).unwrap();
        let b = f.layout.density_b;
        f.params[b] = -10.0;
        let s = f.query_density([0.1, 0.2, -0.3]).unwrap();
        assert!((s - (1.0f64 + (-10.0f64).exp()).ln()).abs() < 1e-15);
        assert!((s - 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn constant_grid_gives_constant_density() {
        let mut f = Field::<f64>::init(Aabb::cube(1.0), &small_cfg(), 4, 0).unwrap();
        let r = f.layout.geometry_grid();
        f.params[r].iter_mut().for_each(|v| *v = 0.3);
        let a = f.query_density([0.1, 0.2, -0.3]).unwrap();
        let b = f.query_density([-0.7, 0.9, 0.5]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn language_head_output_is_normalized() {
        let mut f = Field::<f64>::zeros(Aabb::cube(1.0), &small_cfg(), 4).unwrap();
        let b = f.layout.lang_b;
        f.params[b] = 3.0;
        f.params[b + 1] = 4.0;
        let (e, deg) = f.query_language([0.0, 0.0, 0.0]).unwrap();
        assert!(!deg);
        assert!((e[0] - 0.6).abs() < 1e-15 && (e[1] - 0.8).abs() < 1e-15);
        assert_eq!(&e[2..], &[0.0, 0.0]);
        // Outside the bounds the bias direction is returned.
        let (e2, _) = f.query_language([5.0, 0.0, 0.0]).unwrap();
        assert_eq!(e, e2);
    }

    #[test]
    fn zero_language_is_degenerate() {
        let f = Field::<f64>::zeros(Aabb::cube(1.0), &small_cfg(), 4).unwrap();
        let (e, deg) = f.query_language([0.0, 0.1, 0.0]).unwrap();
        assert!(deg);
        assert_eq!(e, vec![1.0, 0.0, 0.0, 0.0]);
        assert_eq!(f.degenerate_count(), 1);
    }

    #[test]
    fn two_corner_blend() {
        // Only two corners of the finest single-level cell carry features.
        let cfg = FieldConfig {
            resolutions: vec![1],
            channels: 2,
            ..Default::default()
        };
        let mut f = Field::<f64>::zeros(Aabb::cube(1.0), &cfg, 4).unwrap();
        let l = f.layout.clone();
        // Head: output k reads feature k (identity on the first two dims).
        f.params[l.lang_w] = 1.0; // out0 <- feat0
        f.params[l.lang_w + 2 + 1] = 1.0; // out1 <- feat1
        let g = l.language_grid().start;
        // Vertex 0 = (-1,-1,-1) -> (1, 0); vertex 1 = (+1,-1,-1) -> (0, 1).
        f.params[g] = 1.0;
        f.params[g + 3] = 1.0;
        for t in [0.25f64, 0.6] {
            let x = [-1.0 + 2.0 * t, -1.0, -1.0];
            let (e, _) = f.query_language(x).unwrap();
            let (a, b) = (1.0 - t, t);
            let n = (a * a + b * b).sqrt();
            assert!((e[0] - a / n).abs() < 1e-12 && (e[1] - b / n).abs() < 1e-12);
        }
    }

    #[test]
    fn density_and_color_ranges() {
        let f = Field::<f64>::init(Aabb::cube(1.0), &small_cfg(), 4, 3).unwrap();
        for i in 0..50 {
            let x = [-0.9 + 0.035 * i as f64, 0.1, 0.3];
            let g = f.eval_geometry(x);
            assert!(g.sigma >= 0.0);
            assert!(g.rgb.iter().all(|c| (0.0..=1.0).contains(c)));
        }
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let f = Field::<f64>::init(Aabb::cube(1.0), &small_cfg(), 4, 3).unwrap();
        let mut g = vec![0.0; f.layout.len()];
        f.backward_geometry([0.1, 0.2, 0.3], 0.0, [0.0; 3], &mut g);
        f.backward_language([0.1, 0.2, 0.3], &[0.0; 4], &mut g);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_touches_only_stencil() {
        let f = Field::<f64>::init(Aabb::cube(1.0), &small_cfg(), 4, 3).unwrap();
        let x = [0.13, -0.41, 0.77];
        let mut g = vec![0.0; f.layout.len()];
        f.backward_geometry(x, 1.0, [0.5, -0.2, 0.1], &mut g);
        f.backward_language(x, &[0.3, -0.1, 0.2, 0.9], &mut g);
        let u = to_unit(&f.bounds, x);
        let mut allowed: Vec<usize> = f.layout.geometry.touched(u);
        allowed.extend(
            f.layout
                .language
                .touched(u)
                .into_iter()
                .map(|i| i + f.layout.language_grid().start),
        );
        for (i, v) in g.iter().enumerate() {
            if f.layout.is_grid(i) && *v != 0.0 {
                assert!(allowed.contains(&i), "param {i} written");
            }
        }
    }

    #[test]
    fn normalization_jacobian_matches_projection() {
        // Single bias-only language head: y = b/|b|, dL/db = (I - yy^T) g / |b|.
        let mut f = Field::<f64>::zeros(Aabb::cube(1.0), &small_cfg(), 4).unwrap();
        let b = f.layout.lang_b;
        let bias = [0.3, -1.2, 0.5, 2.0];
        f.params[b..b + 4].copy_from_slice(&bias);
        let g = [0.7, 0.1, -0.4, 0.25];
        let mut grad = vec![0.0; f.layout.len()];
        f.backward_language([0.0; 3], &g, &mut grad);
        let n = bias.iter().map(|v| v * v).sum::<f64>().sqrt();
        let y: Vec<f64> = bias.iter().map(|v| v / n).collect();
        let yg: f64 = y.iter().zip(&g).map(|(a, b)| a * b).sum();
        for k in 0..4 {
            let expect = (g[k] - y[k] * yg) / n;
            assert!((grad[b + k] - expect).abs() < 1e-14);
        }
        // Numerically: central differences of L = g . y(b).
        let h = 1e-6;
        for k in 0..4 {
            let mut fp = f.clone();
            fp.params[b + k] += h;
            let mut fm = f.clone();
            fm.params[b + k] -= h;
            let lp: f64 = fp.query_language([0.0; 3]).unwrap().0.iter().zip(&g).map(|(a, b)| a * b).sum();
            let lm: f64 = fm.query_language([0.0; 3]).unwrap().0.iter().zip(&g).map(|(a, b)| a * b).sum();
            assert!(((lp - lm) / (2.0 * h) - grad[b + k]).abs() < 1e-8);
        }
    }
}
