//! Photometric and language losses on a single ray, with their gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::render::{RaySampleSet, RenderedPixel, MAX_OPTICAL_DEPTH};
use crate::scalar::{dot, norm, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossMode {
    /// Cosine similarity of the normalized rendered embedding.
    Rendered,
    /// Weighted similarity of every sample embedding.
    Pointwise,
}

impl LossMode {
    pub fn name(self) -> &'static str {
        match self {
            LossMode::Rendered => "rendered",
            LossMode::Pointwise => "pointwise",
        }
    }
}

fn check_unit<T: Real>(gt: &[T]) -> Result<()> {
    let n = norm(gt);
    if (n - T::one()).abs() > T::unit_tolerance() {
        return Err(Error::Contract(format!(
            "ground-truth embedding has norm {n}, expected 1"
        )));
    }
    Ok(())
}

/// `-lambda * (phi . gt)` for the normalized rendered embedding `phi`.
pub fn loss_rendered<T: Real>(pixel: &RenderedPixel<T>, gt: &[T], lambda: T) -> Result<T> {
    check_unit(gt)?;
    if gt.len() != pixel.embedding_unit.len() {
        return Err(Error::Contract("embedding dimensions differ".into()));
    }
    Ok(-lambda * dot(&pixel.embedding_unit, gt))
}

/// `-lambda * sum_i w_i (F(x_i) . gt)` over the samples of a ray.
pub fn loss_pointwise<T: Real>(
    set: &RaySampleSet<T>,
    field: &Field<T>,
    gt: &[T],
    lambda: T,
) -> Result<T> {
    check_unit(gt)?;
    if gt.len() != field.embedding_dim() {
        return Err(Error::Contract("embedding dimensions differ".into()));
    }
    let mut e = vec![T::zero(); gt.len()];
    let mut s = T::zero();
    for (i, w) in set.weights.weights.iter().enumerate() {
        field.eval_language(set.samples.point(i), &mut e);
        s += *w * dot(&e, gt);
    }
    Ok(-lambda * s)
}

/// Weights of the individual loss terms of one ray.
#[derive(Clone, Copy, Debug)]
pub struct RayLossWeights<T> {
    /// Multiplies the mean squared color error of the ray.
    pub rgb: T,
    /// Multiplies the language loss of the ray.
    pub lang: T,
    pub mode: LossMode,
    /// Language losses do not reach the density through `w_i`.
    pub detach_weights: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RayLoss<T> {
    /// Unweighted mean squared color error over the 3 channels.
    pub rgb_mse: T,
    /// Unweighted language loss (`-similarity`).
    pub lang: T,
}

/// Upstream gradients for one ray, ready to be pushed into the field.
#[derive(Clone, Debug, Default)]
pub struct RayGrad<T> {
    pub points: Vec<[T; 3]>,
    pub d_sigma: Vec<T>,
    pub d_rgb: Vec<[T; 3]>,
    /// `points.len() * D`, empty when no language gradient is needed.
    pub d_lang: Vec<T>,
}

impl<T: Real> RayGrad<T> {
    pub fn apply(&self, field: &Field<T>, grad: &mut [T]) {
        let d = field.embedding_dim();
        for (i, x) in self.points.iter().enumerate() {
            field.backward_geometry(*x, self.d_sigma[i], self.d_rgb[i], grad);
            if !self.d_lang.is_empty() {
                field.backward_language(*x, &self.d_lang[i * d..(i + 1) * d], grad);
            }
        }
    }
}

/// Forward pass and upstream gradients of the combined loss on one ray.
///
/// The language embeddings are evaluated only when `weights.lang != 0`.
pub fn ray_loss_grad<T: Real>(
    field: &Field<T>,
    set: &RaySampleSet<T>,
    gt_rgb: [T; 3],
    gt_lang: &[T],
    weights: &RayLossWeights<T>,
) -> (RayLoss<T>, RayGrad<T>) {
    let n = set.active();
    let d = field.embedding_dim();
    let w = &set.weights.weights;
    let trans = &set.weights.transmittance;
    let three = T::of(3.0);

    // Photometric.
    let mut c = [T::zero(); 3];
    for i in 0..n {
        for k in 0..3 {
            c[k] += w[i] * set.rgb[i][k];
        }
    }
    let mut mse = T::zero();
    let mut d_c = [T::zero(); 3];
    for k in 0..3 {
        let r = c[k] - gt_rgb[k];
        mse += r * r;
        d_c[k] = weights.rgb * T::of(2.0) * r / three;
    }
    mse /= three;

    let mut g = RayGrad {
        points: (0..n).map(|i| set.samples.point(i)).collect(),
        d_sigma: vec![T::zero(); n],
        d_rgb: (0..n).map(|i| [d_c[0] * w[i], d_c[1] * w[i], d_c[2] * w[i]]).collect(),
        d_lang: Vec::new(),
    };
    // dL/dw_i split into the part that may reach the density and the part that may not.
    let mut dw_geo: Vec<T> = (0..n).map(|i| dot(&d_c, &set.rgb[i])).collect();
    let mut dw_lang = vec![T::zero(); n];

    let mut lang_loss = T::zero();
    if weights.lang != T::zero() && n > 0 {
        let mut emb = vec![T::zero(); n * d];
        for i in 0..n {
            field.eval_language(g.points[i], &mut emb[i * d..(i + 1) * d]);
        }
        g.d_lang = vec![T::zero(); n * d];
        match weights.mode {
            LossMode::Pointwise => {
                for i in 0..n {
                    let e = &emb[i * d..(i + 1) * d];
                    let s = dot(e, gt_lang);
                    lang_loss -= w[i] * s;
                    dw_lang[i] = -weights.lang * s;
                    for k in 0..d {
                        g.d_lang[i * d + k] = -weights.lang * w[i] * gt_lang[k];
                    }
                }
            }
            LossMode::Rendered => {
                let mut raw = vec![T::zero(); d];
                for i in 0..n {
                    for k in 0..d {
                        raw[k] += w[i] * emb[i * d + k];
                    }
                }
                let rn = norm(&raw);
                if rn > T::of(crate::field::DEGENERATE_NORM) {
                    let phi: Vec<T> = raw.iter().map(|v| *v / rn).collect();
                    let s = dot(&phi, gt_lang);
                    lang_loss = -s;
                    // d(-lambda phi.gt)/d raw = -lambda (gt - phi (phi.gt)) / |raw|
                    let g_raw: Vec<T> = (0..d)
                        .map(|k| -weights.lang * (gt_lang[k] - phi[k] * s) / rn)
                        .collect();
                    for i in 0..n {
                        let e = &emb[i * d..(i + 1) * d];
                        dw_lang[i] = dot(&g_raw, e);
                        for k in 0..d {
                            g.d_lang[i * d + k] = w[i] * g_raw[k];
                        }
                    }
                } else {
                    // Fallback axis carries no gradient.
                    lang_loss = -gt_lang[0];
                }
            }
        }
        if !weights.detach_weights {
            for i in 0..n {
                dw_geo[i] += dw_lang[i];
            }
        }
    }

    // dL/dsigma_i = delta_i (T_{i+1} v_i - sum_{j>i} w_j v_j), v = dL/dw.
    let cap = T::of(MAX_OPTICAL_DEPTH);
    let mut suffix = T::zero();
    for i in (0..n).rev() {
        let delta = set.samples.delta[i];
        if set.sigma[i] * delta < cap {
            g.d_sigma[i] = delta * (trans[i + 1] * dw_geo[i] - suffix);
        }
        suffix += w[i] * dw_geo[i];
    }
    dw_geo.clear();

    (
        RayLoss {
            rgb_mse: mse,
            lang: lang_loss,
        },
        g,
    )
}
