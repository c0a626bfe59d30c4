//! Full pipeline over several scene seeds: train with both loss modes,
//! transfer to splats, query every object and score the results.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{average_precision, default_radius, f1_3d, iou, F1Report};
use crate::error::{Error, Result};
use crate::io::csv_preamble;
use crate::field::{Field, FieldConfig};
use crate::gsplat::{
    optimize_gaussians, rasterize, segment_3d_gaussians, transfer_from_field, GaussianCloud, OptimizeConfig,
    TransferConfig,
};
use crate::query::{
    density_floor_at, mean_sample_spacing, score_rendered, extract_mesh, segment_3d, segment_mesh, QuerySpec, FLOOR_OPACITY, TAU_FIELD, TAU_SPLAT,
};
use crate::render::{render_image, RenderOptions};
use crate::scalar::Real;
use crate::scene::{
    orbit_rig, render_gt_view, sample_object_surface, synthesize, Camera, Dataset, RigConfig, SceneConfig,
};
use crate::train::{train, LossMode, TrainConfig};

/// Query settings of the benchmark and of the command-line `query` step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QueryConfig {
    /// Cells per axis of the 3D query grid.
    pub grid_res: usize,
    /// Score the density isosurface vertices instead of grid points.
    pub mesh: bool,
    /// Single-sample opacity at the density floor of 3D segmentation.
    pub floor_opacity: f64,
    pub tau_field: f64,
    pub tau_splat: f64,
    /// Score normalized rendered embeddings in 2D.
    pub normalize_2d: bool,
}

impl Default for QueryConfig {
    fn default() -> Self {
        Self {
            grid_res: 96,
            mesh: false,
            floor_opacity: FLOOR_OPACITY,
            tau_field: TAU_FIELD,
            tau_splat: TAU_SPLAT,
            normalize_2d: false,
        }
    }
}

impl QueryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid_res < 16 {
            return Err(Error::Config("query.grid_res must be >= 16".into()));
        }
        if !(self.floor_opacity > 0.0 && self.floor_opacity < 1.0) {
            return Err(Error::Config(format!(
                "query.floor_opacity must lie in (0, 1), got {}",
                self.floor_opacity
            )));
        }
        for (name, t) in [("tau_field", self.tau_field), ("tau_splat", self.tau_splat)] {
            if !(0.0..1.0).contains(&t) {
                return Err(Error::Config(format!("query.{name} must lie in [0, 1), got {t}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    /// Each seed gets between `min_objects` and `max_objects` objects.
    pub min_objects: usize,
    pub max_objects: usize,
    /// Ground-truth surface samples per object.
    pub gt_points: usize,
    /// Matching radius; twice the ground-truth sampling spacing when absent.
    pub radius: Option<f64>,
    /// Held-out views for the 2D metrics.
    pub views: usize,
    /// Azimuth of the held-out rig relative to the training rig.
    pub azimuth_offset_deg: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2, 3, 4],
            min_objects: 2,
            max_objects: 4,
            gt_points: 10_000,
            radius: None,
            views: 8,
            azimuth_offset_deg: 7.5,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("eval.seeds is empty".into()));
        }
        if self.min_objects < 1 || self.min_objects > self.max_objects {
            return Err(Error::Config("need 1 <= eval.min_objects <= eval.max_objects".into()));
        }
        if let Some(r) = self.radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::Config(format!("eval.radius must be positive, got {r}")));
            }
        }
        if self.gt_points < 1 {
            return Err(Error::Config("eval.gt_points must be >= 1".into()));
        }
        Ok(())
    }

    /// Object count used for `seed`.
    pub fn objects_for(&self, seed: u64) -> usize {
        let span = (self.max_objects - self.min_objects + 1) as u64;
        self.min_objects + (splitmix(seed) % span) as usize
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub scene: SceneConfig,
    pub rig: RigConfig,
    pub field: FieldConfig,
    pub train: TrainConfig,
    pub transfer: TransferConfig,
    pub splat_opt: OptimizeConfig,
    pub query: QueryConfig,
    pub eval: EvalConfig,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.query.validate()?;
        self.eval.validate()?;
        self.field.validate()?;
        self.train.validate()?;
        let mut scene = self.scene.clone();
        scene.num_objects = self.eval.max_objects;
        scene.validate()
    }
}

fn splitmix(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One line of `report.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub scene_seed: u64,
    /// `nerf` or `gs`.
    pub method: String,
    pub loss: String,
    pub query: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// IoU of this query averaged over the held-out views.
    pub miou: f64,
    /// Average precision of this query over the held-out views.
    pub map: f64,
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub scene_seed: u64,
    pub loss: String,
    pub stage: String,
    pub value: f64,
    pub unit: String,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<ReportRow>,
    pub timing: Vec<TimingRow>,
    /// IoU per held-out view, parallel to `rows`; `None` for an empty union.
    pub view_iou: Vec<Vec<Option<f64>>>,
}

pub const REPORT_VERSION: &str = "semfield-report/1";
pub const TIMING_VERSION: &str = "semfield-timing/1";
pub const SUMMARY_VERSION: &str = "semfield-summary/1";
pub const REPORT_HEADER: &str = "scene_seed,method,loss,query,precision,recall,f1,miou,map,radius";

impl BenchReport {
    pub fn push_timing(&mut self, scene_seed: u64, loss: &str, stage: &str, value: f64, unit: &str) {
        self.timing.push(TimingRow {
            scene_seed,
            loss: loss.into(),
            stage: stage.into(),
            value,
            unit: unit.into(),
        });
    }

    /// Orders rows by seed, method (`nerf` first), loss (`pointwise` first)
    /// and query.
    pub fn sort_rows(&mut self) {
        let key = |r: &ReportRow| (r.scene_seed, r.method == "gs", r.loss != "pointwise", r.query.clone());
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by_key(|i| key(&self.rows[*i]));
        self.rows = order.iter().map(|i| self.rows[*i].clone()).collect();
        self.view_iou = order.iter().map(|i| self.view_iou[*i].clone()).collect();
    }

    pub fn report_csv(&self) -> String {
        let mut s = String::from(REPORT_HEADER);
        s.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.scene_seed, r.method, r.loss, r.query, r.precision, r.recall, r.f1, r.miou, r.map, r.radius
            );
        }
        s
    }

    pub fn timing_csv(&self) -> String {
        let mut s = String::from("scene_seed,loss,stage,value,unit\n");
        for t in &self.timing {
            let _ = writeln!(s, "{},{},{},{:.3},{}", t.scene_seed, t.loss, t.stage, t.value, t.unit);
        }
        s
    }

    /// Rows for one method and loss mode.
    pub fn select(&self, method: &str, loss: &str) -> Vec<&ReportRow> {
        self.rows.iter().filter(|r| r.method == method && r.loss == loss).collect()
    }

    /// Median F1 over the rows of one method and loss mode.
    pub fn median_f1(&self, method: &str, loss: &str) -> f64 {
        median(self.select(method, loss).iter().map(|r| r.f1).collect())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<6} {:<10} {:>5} {:>9} {:>9} {:>9} {:>9} {:>9}", "method", "loss", "rows", "med F1", "mean P", "mean R", "mIoU", "mAP");
        for method in ["nerf", "gs"] {
            for loss in ["pointwise", "rendered"] {
                let rows = self.select(method, loss);
                if rows.is_empty() {
                    continue;
                }
                let mean = |f: fn(&ReportRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64;
                let _ = writeln!(
                    s,
                    "{:<6} {:<10} {:>5} {:>9.4} {:>9.4} {:>9.4} {:>9.4} {:>9.4}",
                    method,
                    loss,
                    rows.len(),
                    self.median_f1(method, loss),
                    mean(|r| r.precision),
                    mean(|r| r.recall),
                    mean(|r| r.miou),
                    mean(|r| r.map)
                );
            }
        }
        for stage in ["train", "transfer", "render_nerf", "render_gs"] {
            let v: Vec<f64> = self.timing.iter().filter(|t| t.stage == stage).map(|t| t.value).collect();
            if let Some(t) = self.timing.iter().find(|t| t.stage == stage) {
                let _ = writeln!(s, "{stage}: mean {:.1} {}", v.iter().sum::<f64>() / v.len() as f64, t.unit);
            }
        }
        s
    }

    /// Writes `report.csv`, `timing.csv` and `summary.txt` into `dir`, each
    /// starting with a version and config hash line.
    pub fn write(&self, dir: &Path, config_hash: &str) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, version, body) in [
            ("report.csv", REPORT_VERSION, self.report_csv()),
            ("timing.csv", TIMING_VERSION, self.timing_csv()),
            ("summary.txt", SUMMARY_VERSION, self.summary()),
        ] {
            let body = csv_preamble(version, config_hash) + &body;
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

pub(crate) fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Per-query metrics shared by both methods.
struct QueryScores {
    f1: F1Report,
    iou: f64,
    view_iou: Vec<Option<f64>>,
    ap: f64,
}

/// Ground truth and held-out views of one dataset, shared by every
/// method and loss mode evaluated on it.
pub struct EvalContext {
    pub dataset: Dataset,
    /// Surface samples per object.
    pub gt_points: Vec<Vec<[f64; 3]>>,
    /// Matching radius per object.
    pub radii: Vec<f64>,
    pub eval_cams: Vec<Camera>,
    /// `[object][view]` ground-truth masks.
    pub gt_masks: Vec<Vec<Vec<bool>>>,
    /// Density floor of 3D segmentation.
    pub floor: f64,
}

impl EvalContext {
    pub fn new(dataset: Dataset, cfg: &BenchConfig) -> Result<Self> {
        let seed = dataset.scene.seed;
        let n_obj = dataset.scene.objects.len();
        let gt_points: Vec<Vec<[f64; 3]>> = (0..n_obj)
            .map(|l| sample_object_surface(&dataset.scene, l, cfg.eval.gt_points, seed))
            .collect::<Result<_>>()?;
        let radii = dataset
            .scene
            .objects
            .iter()
            .map(|o| cfg.eval.radius.map_or_else(|| default_radius(o.surface_area(), cfg.eval.gt_points), Ok))
            .collect::<Result<Vec<f64>>>()?;
        let eval_rig = RigConfig {
            num_views: cfg.eval.views,
            azimuth_offset_deg: cfg.rig.azimuth_offset_deg + cfg.eval.azimuth_offset_deg,
            ..cfg.rig.clone()
        };
        let eval_cams = if cfg.eval.views == 0 {
            Vec::new()
        } else {
            orbit_rig(&eval_rig, [0.0; 3])?
        };
        let gt_views = eval_cams
            .iter()
            .map(|c| render_gt_view(&dataset.scene, c))
            .collect::<Result<Vec<_>>>()?;
        let gt_masks = (0..n_obj)
            .map(|l| gt_views.iter().map(|v| v.mask(l as i32)).collect())
            .collect();
        let floor = density_floor_at(
            mean_sample_spacing(&train_cameras(&dataset), &dataset.scene.bounds, cfg.train.samples_per_ray),
            cfg.query.floor_opacity,
        );
        Ok(Self {
            dataset,
            gt_points,
            radii,
            eval_cams,
            gt_masks,
            floor,
        })
    }

    /// Scores every object query on a trained field and appends the rows
    /// (method `nerf`) and the render timing to `report`.
    pub fn evaluate_field<T: Real>(
        &self,
        cfg: &BenchConfig,
        field: &Field<T>,
        loss: &str,
        report: &mut BenchReport,
    ) -> Result<()> {
        let mut ms = Vec::new();
        let scores = nerf_scores(self, cfg, field, &mut ms)?;
        report.push_timing(self.dataset.scene.seed, loss, "render_nerf", mean(&ms), "ms/frame");
        push_rows(report, self.dataset.scene.seed, "nerf", loss, scores);
        Ok(())
    }

    /// Same as [`evaluate_field`](Self::evaluate_field) for a splat cloud (method `gs`).
    pub fn evaluate_cloud<T: Real>(
        &self,
        cfg: &BenchConfig,
        cloud: &GaussianCloud<T>,
        loss: &str,
        report: &mut BenchReport,
    ) -> Result<()> {
        let mut ms = Vec::new();
        let scores = gs_scores(self, cfg, cloud, &mut ms)?;
        report.push_timing(self.dataset.scene.seed, loss, "render_gs", mean(&ms), "ms/frame");
        push_rows(report, self.dataset.scene.seed, "gs", loss, scores);
        Ok(())
    }
}

/// Cameras of the training views.
pub fn train_cameras(dataset: &Dataset) -> Vec<Camera> {
    dataset.views.iter().map(|v| v.camera.clone()).collect()
}

fn query_for(ctx: &EvalContext, label: usize, threshold: f64) -> Result<QuerySpec> {
    let scene = &ctx.dataset.scene;
    QuerySpec::new(scene.objects[label].embedding.clone(), scene.canonical_embeddings.clone(), threshold)
}

/// 2D IoU and AP of one query from per-view raw embedding images.
fn score_views(
    ctx: &EvalContext,
    label: usize,
    spec: &QuerySpec,
    images: &[Vec<f64>],
    normalize: bool,
) -> Result<(Vec<Option<f64>>, f64)> {
    let d = spec.dim();
    let mut ious = Vec::new();
    let mut all_scores = Vec::new();
    let mut all_gt = Vec::new();
    for (img, gt) in images.iter().zip(&ctx.gt_masks[label]) {
        let scores: Vec<f64> = img.chunks_exact(d).map(|e| score_rendered(e, spec, normalize).0).collect();
        let mask: Vec<bool> = scores.iter().map(|s| *s > spec.threshold).collect();
        ious.push(iou(&mask, gt)?);
        all_scores.extend(scores);
        all_gt.extend_from_slice(gt);
    }
    let ap = average_precision(&all_scores, &all_gt)?.unwrap_or(0.0);
    Ok((ious, ap))
}

fn nerf_scores<T: Real>(
    ctx: &EvalContext,
    cfg: &BenchConfig,
    field: &Field<T>,
    timing: &mut Vec<f64>,
) -> Result<Vec<QueryScores>> {
    let opts = RenderOptions {
        samples_per_ray: cfg.train.samples_per_ray,
        early_stop_transmittance: cfg.train.early_stop_transmittance,
        ..Default::default()
    };
    let mut images = Vec::new();
    for cam in &ctx.eval_cams {
        let t = Instant::now();
        let img = render_image(field, cam, &opts, true)?;
        timing.push(t.elapsed().as_secs_f64() * 1e3);
        images.push(img.embedding_raw.iter().map(|v| v.as_f64()).collect::<Vec<f64>>());
    }
    let mesh = if cfg.query.mesh {
        Some(extract_mesh(field, ctx.floor, cfg.query.grid_res)?)
    } else {
        None
    };
    let mut out = Vec::new();
    for label in 0..ctx.gt_points.len() {
        let spec = query_for(ctx, label, cfg.query.tau_field)?;
        let seg = match &mesh {
            Some(m) => segment_mesh(field, m, &spec)?,
            None => segment_3d(field, &spec, cfg.query.grid_res, ctx.floor)?,
        };
        let f1 = f1_3d(&seg.points, &ctx.gt_points[label], ctx.radii[label])?;
        let (view_iou, ap) = score_views(ctx, label, &spec, &images, cfg.query.normalize_2d)?;
        out.push(QueryScores {
            f1,
            iou: mean(&view_iou.iter().flatten().copied().collect::<Vec<_>>()),
            view_iou,
            ap,
        });
    }
    Ok(out)
}

fn gs_scores<T: Real>(
    ctx: &EvalContext,
    cfg: &BenchConfig,
    cloud: &GaussianCloud<T>,
    timing: &mut Vec<f64>,
) -> Result<Vec<QueryScores>> {
    let mut images = Vec::new();
    for cam in &ctx.eval_cams {
        let t = Instant::now();
        let img = rasterize(cloud, cam, &cfg.splat_opt.raster)?;
        timing.push(t.elapsed().as_secs_f64() * 1e3);
        images.push(img.embedding.iter().map(|v| v.as_f64()).collect::<Vec<f64>>());
    }
    let mut out = Vec::new();
    for label in 0..ctx.gt_points.len() {
        let spec = query_for(ctx, label, cfg.query.tau_splat)?;
        let seg = segment_3d_gaussians(cloud, &spec)?;
        let f1 = f1_3d(&seg.points, &ctx.gt_points[label], ctx.radii[label])?;
        let (view_iou, ap) = score_views(ctx, label, &spec, &images, cfg.query.normalize_2d)?;
        out.push(QueryScores {
            f1,
            iou: mean(&view_iou.iter().flatten().copied().collect::<Vec<_>>()),
            view_iou,
            ap,
        });
    }
    Ok(out)
}

fn push_rows(report: &mut BenchReport, seed: u64, method: &str, loss: &str, scores: Vec<QueryScores>) {
    for (label, q) in scores.into_iter().enumerate() {
        report.view_iou.push(q.view_iou);
        report.rows.push(ReportRow {
            scene_seed: seed,
            method: method.into(),
            loss: loss.into(),
            query: format!("object_{label}"),
            precision: q.f1.precision,
            recall: q.f1.recall,
            f1: q.f1.f1,
            miou: q.iou,
            map: q.ap,
            radius: q.f1.radius,
        });
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Runs the full pipeline for every seed and both loss modes.
///
/// Metrics depend only on the configuration; timings do not.
pub fn benchmark_run<T: Real>(cfg: &BenchConfig, config_hash: &str) -> Result<BenchReport> {
    cfg.validate()?;
    let mut report = BenchReport::default();
    for &seed in &cfg.eval.seeds {
        let mut scene_cfg = cfg.scene.clone();
        scene_cfg.num_objects = cfg.eval.objects_for(seed);
        let dataset = synthesize(seed, &scene_cfg, &cfg.rig, config_hash).map_err(|e| e.in_stage("synth"))?;
        let ctx = EvalContext::new(dataset, cfg).map_err(|e| e.in_stage("eval"))?;
        let cams = train_cameras(&ctx.dataset);
        for mode in [LossMode::Pointwise, LossMode::Rendered] {
            let loss = mode.name();
            let tcfg = TrainConfig {
                loss_mode: mode,
                ..cfg.train.clone()
            };
            let mut field = Field::<T>::init(ctx.dataset.scene.bounds, &cfg.field, ctx.dataset.scene.embedding_dim(), seed)
                .map_err(|e| e.in_stage("train"))?;
            let tr = train(&ctx.dataset, &mut field, &tcfg, seed).map_err(|e| e.in_stage("train"))?;
            report.push_timing(seed, loss, "train", tr.seconds, "s");
            log::info!("seed {seed} {loss}: trained in {:.1}s, psnr {:?}", tr.seconds, tr.final_psnr);
            ctx.evaluate_field(cfg, &field, loss, &mut report).map_err(|e| e.in_stage("query"))?;

            let t = Instant::now();
            let mut cloud = transfer_from_field(&field, &cams, &cfg.transfer, seed).map_err(|e| e.in_stage("transfer"))?;
            report.push_timing(seed, loss, "transfer", t.elapsed().as_secs_f64() * 1e3, "ms");
            let t = Instant::now();
            optimize_gaussians(&mut cloud, &ctx.dataset, &cfg.splat_opt, seed).map_err(|e| e.in_stage("transfer"))?;
            report.push_timing(seed, loss, "splat_opt", t.elapsed().as_secs_f64(), "s");
            ctx.evaluate_cloud(cfg, &cloud, loss, &mut report).map_err(|e| e.in_stage("query"))?;
        }
    }
    report.sort_rows();
    Ok(report)
}
