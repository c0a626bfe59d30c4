//! Optimization of a [`Field`] against a [`Dataset`].

mod adam;
mod loss;

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use loss::{
    loss_pointwise, loss_rendered, ray_loss_grad, LossMode, RayGrad, RayLoss, RayLossWeights,
};

use crate::error::{Error, Result};
use crate::field::Field;
use crate::render::{bounded_samples, evaluate_samples, psnr, render_image, RenderOptions};
use crate::scalar::Real;
use crate::scene::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda_rgb: f64,
    pub lambda_lang: f64,
    pub loss_mode: LossMode,
    /// Language losses leave the density untouched.
    pub detach_weights: bool,
    pub lr_grid: f64,
    pub lr_head: f64,
    pub iterations: usize,
    pub batch_rays: usize,
    pub samples_per_ray: usize,
    pub early_stop_transmittance: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Render every training view after the last step and report its PSNR.
    pub final_psnr: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_rgb: 1.0,
            lambda_lang: 1.0,
            loss_mode: LossMode::Pointwise,
            detach_weights: true,
            lr_grid: 1e-2,
            lr_head: 1e-3,
            iterations: 2000,
            batch_rays: 4096,
            samples_per_ray: 64,
            early_stop_transmittance: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            final_psnr: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let nonneg = |name: &str, v: f64| {
            if v.is_finite() && v >= 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be finite and >= 0, got {v}")))
            }
        };
        nonneg("lambda_rgb", self.lambda_rgb)?;
        nonneg("lambda_lang", self.lambda_lang)?;
        nonneg("lr_grid", self.lr_grid)?;
        nonneg("lr_head", self.lr_head)?;
        nonneg("early_stop_transmittance", self.early_stop_transmittance)?;
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if self.batch_rays < 1 {
            return Err(Error::Config("batch_rays must be >= 1".into()));
        }
        if self.samples_per_ray < 2 {
            return Err(Error::Config("samples_per_ray must be >= 2".into()));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss_rgb: f64,
    pub loss_lang: f64,
    /// PSNR of the batch.
    pub psnr: f64,
}

pub const TRACE_VERSION: &str = "semfield-trace/1";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub trace: Vec<TraceRow>,
    /// PSNR over every pixel of every training view, if requested.
    pub final_psnr: Option<f64>,
    pub seconds: f64,
}

impl TrainReport {
    pub fn write_trace_csv(&self, path: &Path, config_hash: &str) -> Result<()> {
        let mut out = crate::io::csv_preamble(TRACE_VERSION, config_hash).into_bytes();
        writeln!(out, "step,loss_rgb,loss_lang,psnr").unwrap();
        for r in &self.trace {
            writeln!(out, "{},{},{},{}", r.step, r.loss_rgb, r.loss_lang, r.psnr).unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    /// Moving average of `loss_rgb + loss_lang` with the given window.
    pub fn smoothed_total(&self, window: usize) -> Vec<f64> {
        let total: Vec<f64> = self.trace.iter().map(|r| r.loss_rgb + r.loss_lang).collect();
        total.windows(window.max(1)).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect()
    }
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Ground truth of one training pixel.
struct PixelRef {
    view: u32,
    pixel: u32,
}

/// Loss and upstream gradients of one pixel.
///
/// `jitter` selects stratified jitter (training) over bin midpoints.
pub fn pixel_loss_grad<T: Real>(
    field: &Field<T>,
    dataset: &Dataset,
    gt_embeddings: &[Vec<T>],
    view: usize,
    pixel: usize,
    cfg: &TrainConfig,
    jitter: Option<u64>,
) -> Option<(RayLoss<T>, RayGrad<T>)> {
    let v = &dataset.views[view];
    let cam = &v.camera;
    let ray = cam.pixel_ray(pixel % cam.width, pixel / cam.width);
    let samples = match jitter {
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            bounded_samples::<T, _>(&ray, &field.bounds, cfg.samples_per_ray, Some(&mut rng))
        }
        None => bounded_samples::<T, ChaCha8Rng>(&ray, &field.bounds, cfg.samples_per_ray, None),
    }?;
    let set = evaluate_samples(field, samples, cfg.early_stop_transmittance);
    let rgb = v.pixel_rgb(pixel);
    let label = v.labels[pixel];
    let weights = RayLossWeights {
        rgb: T::of(cfg.lambda_rgb),
        lang: T::of(cfg.lambda_lang),
        mode: cfg.loss_mode,
        detach_weights: cfg.detach_weights,
    };
    Some(ray_loss_grad(
        field,
        &set,
        [T::of(rgb[0] as f64), T::of(rgb[1] as f64), T::of(rgb[2] as f64)],
        &gt_embeddings[(label + 1) as usize],
        &weights,
    ))
}

/// Ground-truth embedding table indexed by `label + 1` (background first).
pub fn embedding_table<T: Real>(dataset: &Dataset) -> Vec<Vec<T>> {
    let n = dataset.scene.objects.len() as i32;
    (-1..n)
        .map(|l| dataset.scene.embedding_for_label(l).iter().map(|v| T::of(*v)).collect())
        .collect()
}

/// Per-parameter learning rates: grids use `lr_grid`, heads `lr_head`.
fn lr_blocks<T: Real>(field: &Field<T>, cfg: &TrainConfig) -> Vec<(std::ops::Range<usize>, f64)> {
    let l = &field.layout;
    vec![
        (l.geometry_grid(), cfg.lr_grid),
        (l.language_grid(), cfg.lr_grid),
        (l.geometry_heads(), cfg.lr_head),
        (l.language_head(), cfg.lr_head),
    ]
}

/// Runs `cfg.iterations` Adam steps over batches of training pixels.
///
/// The result depends only on the inputs and `seed`, not on the thread count.
pub fn train<T: Real>(
    dataset: &Dataset,
    field: &mut Field<T>,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.views.is_empty() {
        return Err(Error::Input("dataset has no views".into()));
    }
    if field.embedding_dim() != dataset.scene.embedding_dim() {
        return Err(Error::Input(format!(
            "field embedding dimension {} differs from dataset {}",
            field.embedding_dim(),
            dataset.scene.embedding_dim()
        )));
    }
    let start = Instant::now();
    let table = embedding_table::<T>(dataset);
    let mut pool: Vec<PixelRef> = Vec::new();
    for (vi, v) in dataset.views.iter().enumerate() {
        for p in 0..v.camera.num_pixels() {
            pool.push(PixelRef {
                view: vi as u32,
                pixel: p as u32,
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    pool.shuffle(&mut rng);
    let mut cursor = 0usize;

    let blocks = lr_blocks(field, cfg);
    let mut adam = Adam::<T>::new(field.layout.len(), cfg.beta1, cfg.beta2, cfg.eps);
    let mut grad = vec![T::zero(); field.layout.len()];
    let mut trace = Vec::with_capacity(cfg.iterations);
    let batch = cfg.batch_rays.min(pool.len());

    for step in 0..cfg.iterations {
        if cursor + batch > pool.len() {
            pool.shuffle(&mut rng);
            cursor = 0;
        }
        let refs = &pool[cursor..cursor + batch];
        cursor += batch;

        let field_ref: &Field<T> = field;
        let results: Vec<Option<(RayLoss<T>, RayGrad<T>)>> = refs
            .par_iter()
            .enumerate()
            .map(|(j, r)| {
                pixel_loss_grad(
                    field_ref,
                    dataset,
                    &table,
                    r.view as usize,
                    r.pixel as usize,
                    cfg,
                    Some(mix(seed, step as u64, j as u64)),
                )
            })
            .collect();

        grad.iter_mut().for_each(|g| *g = T::zero());
        let inv_b = T::one() / T::of(batch as f64);
        let mut mse = 0.0f64;
        let mut lang = 0.0f64;
        for (r, res) in refs.iter().zip(&results) {
            match res {
                Some((l, g)) => {
                    mse += l.rgb_mse.as_f64();
                    lang += l.lang.as_f64();
                    g.apply(field_ref, &mut grad);
                }
                None => {
                    // Ray misses the bounds: black, no gradient.
                    let v = &dataset.views[r.view as usize];
                    let c = v.pixel_rgb(r.pixel as usize);
                    mse += c.iter().map(|x| (*x as f64).powi(2)).sum::<f64>() / 3.0;
                }
            }
        }
        mse /= batch as f64;
        lang /= batch as f64;
        let loss_rgb = cfg.lambda_rgb * mse;
        let loss_lang = cfg.lambda_lang * lang;
        if !loss_rgb.is_finite() || !loss_lang.is_finite() {
            return Err(Error::NonFinite {
                step,
                detail: format!("loss_rgb={loss_rgb} loss_lang={loss_lang}"),
            });
        }
        grad.iter_mut().for_each(|g| *g *= inv_b);
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFinite {
                step,
                detail: format!("gradient of parameter {i}"),
            });
        }
        adam.step_blocks(&mut field.params, &grad, &blocks);
        trace.push(TraceRow {
            step,
            loss_rgb,
            loss_lang,
            psnr: -10.0 * mse.max(1e-12).log10(),
        });
        if step % 100 == 0 {
            log::debug!("step {step}: rgb {loss_rgb:.5} lang {loss_lang:.5}");
        }
    }

    let final_psnr = if cfg.final_psnr {
        Some(training_psnr(field, dataset, cfg)?)
    } else {
        None
    };
    Ok(TrainReport {
        trace,
        final_psnr,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// PSNR of midpoint renders against every training view.
pub fn training_psnr<T: Real>(field: &Field<T>, dataset: &Dataset, cfg: &TrainConfig) -> Result<f64> {
    let opts = RenderOptions {
        samples_per_ray: cfg.samples_per_ray,
        early_stop_transmittance: cfg.early_stop_transmittance,
        ..Default::default()
    };
    let mut pred = Vec::new();
    let mut target = Vec::new();
    for v in &dataset.views {
        let img = render_image(field, &v.camera, &opts, false)?;
        pred.extend(img.rgb.iter().map(|x| x.as_f32()));
        target.extend_from_slice(&v.rgb);
    }
    Ok(psnr(&pred, &target))
}

/// Total loss over fixed pixels with midpoint sampling, for gradient checks.
pub fn fixed_batch_loss<T: Real>(
    field: &Field<T>,
    dataset: &Dataset,
    pixels: &[(usize, usize)],
    cfg: &TrainConfig,
    grad: Option<&mut [T]>,
) -> T {
    let table = embedding_table::<T>(dataset);
    let mut total = T::zero();
    let mut grad = grad;
    for (v, p) in pixels {
        if let Some((l, g)) = pixel_loss_grad(field, dataset, &table, *v, *p, cfg, None) {
            total += T::of(cfg.lambda_rgb) * l.rgb_mse + T::of(cfg.lambda_lang) * l.lang;
            if let Some(gr) = grad.as_deref_mut() {
                g.apply(field, gr);
            }
        }
    }
    total
}
