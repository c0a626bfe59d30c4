//! Command implementations behind the `semfield` binary.

pub mod config;

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use semfield::eval::{benchmark_run, train_cameras, BenchReport, EvalContext};
use semfield::gsplat::{optimize_gaussians, relevancy_2d_gaussians, segment_3d_gaussians, transfer_from_field};
use semfield::heatmap::{mask_to_gray, to_gray, write_gray_png};
use semfield::io::{csv_preamble, f32_payload, write_framed};
use semfield::ply::{write_ply, PlyData};
use semfield::query::{
    density_floor_at, extract_mesh, mean_sample_spacing, relevancy_2d, segment_3d, segment_mesh, Query2dOptions,
    QuerySpec, RelevancyResult, Segmentation,
};
use semfield::render::RenderOptions;
use semfield::scene::{export_dataset, import_dataset, orbit_rig, synthesize, Camera, Dataset, RigConfig};
use semfield::train::train;
use semfield::{Cloud32, Error, Field32, Result};

pub use config::RunConfig;

pub const QUERY_VERSION: &str = "semfield-query/1";
pub const RUN_CONFIG_VERSION: &str = "semfield-run/1";

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) => 3,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 4,
        Error::Version { .. } => 5,
        Error::Format { .. } | Error::Consistency { .. } => 6,
        Error::Input(_) | Error::Contract(_) | Error::Lookup(_) => 7,
        Error::NonFinite { .. } => 8,
        Error::Generation(_) => 9,
        Error::Io { .. } => 10,
        Error::Stage { .. } => 1,
    }
}

/// A resolved configuration and its hash.
pub struct Run {
    pub cfg: RunConfig,
    pub hash: String,
}

impl Run {
    pub fn new(cfg: RunConfig) -> Self {
        let hash = cfg.hash();
        Self { cfg, hash }
    }

    fn out_dir(&self) -> Result<&Path> {
        let out = self.cfg.out.as_path();
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let p = out.join("run.toml");
        let body = csv_preamble(RUN_CONFIG_VERSION, &self.hash) + &self.cfg.to_toml();
        std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        Ok(out)
    }

    fn check_hash(&self, what: &Path, hash: &str) {
        if hash != self.hash {
            log::warn!("{} was written under config {hash}, running with {}", what.display(), self.hash);
        }
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    import_dataset(path).map_err(|e| e.in_stage("load"))
}

fn load_field(run: &Run, path: &Path) -> Result<Field32> {
    let (f, h) = Field32::load(path).map_err(|e| e.in_stage("load"))?;
    run.check_hash(path, &h);
    Ok(f)
}

fn load_cloud(run: &Run, path: &Path) -> Result<Cloud32> {
    let (c, h) = Cloud32::load(path).map_err(|e| e.in_stage("load"))?;
    run.check_hash(path, &h);
    Ok(c)
}

/// Synthesizes a scene and writes its dataset directory to `out`.
pub fn cmd_synth(run: &Run) -> Result<PathBuf> {
    let out = run.out_dir()?;
    let ds = synthesize(run.cfg.seed, &run.cfg.scene, &run.cfg.rig, &run.hash).map_err(|e| e.in_stage("synth"))?;
    export_dataset(&ds, out).map_err(|e| e.in_stage("synth"))?;
    log::info!("synth: {} objects, {} views -> {}", ds.scene.objects.len(), ds.views.len(), out.display());
    Ok(out.to_path_buf())
}

/// Trains a field; writes `field.ckpt` and `trace.csv`.
pub fn cmd_train(run: &Run, dataset: &Path) -> Result<PathBuf> {
    let ds = load_dataset(dataset)?;
    let out = run.out_dir()?;
    let mut field = Field32::init(ds.scene.bounds, &run.cfg.field, ds.scene.embedding_dim(), run.cfg.seed)
        .map_err(|e| e.in_stage("train"))?;
    let report = train(&ds, &mut field, &run.cfg.train, run.cfg.seed).map_err(|e| e.in_stage("train"))?;
    log::info!("train: {:.1}s, final psnr {:?}", report.seconds, report.final_psnr);
    report
        .write_trace_csv(&out.join("trace.csv"), &run.hash)
        .map_err(|e| e.in_stage("train"))?;
    let ckpt = out.join("field.ckpt");
    field.save(&ckpt, &run.hash).map_err(|e| e.in_stage("train"))?;
    Ok(ckpt)
}

/// Converts a field to splats and optimizes them; writes `cloud.ckpt`.
pub fn cmd_transfer(run: &Run, field: &Path, dataset: &Path) -> Result<PathBuf> {
    let ds = load_dataset(dataset)?;
    let field = load_field(run, field)?;
    let out = run.out_dir()?;
    let mut cloud = transfer_from_field(&field, &train_cameras(&ds), &run.cfg.transfer, run.cfg.seed)
        .map_err(|e| e.in_stage("transfer"))?;
    let r = optimize_gaussians(&mut cloud, &ds, &run.cfg.splat_opt, run.cfg.seed).map_err(|e| e.in_stage("transfer"))?;
    log::info!(
        "transfer: {} splats, psnr {:?} -> {:?}",
        cloud.len(),
        r.psnr_before,
        r.psnr_after
    );
    let ckpt = out.join("cloud.ckpt");
    cloud.save(&ckpt, &run.hash).map_err(|e| e.in_stage("transfer"))?;
    Ok(ckpt)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Mode {
    /// Field points (or isosurface vertices) above threshold.
    #[value(name = "3d")]
    ThreeD,
    /// Per-pixel relevancy of the rendered field.
    #[value(name = "2d")]
    TwoD,
    /// Splat centers above threshold, and a splatted relevancy image when a
    /// camera is given.
    #[value(name = "gs")]
    Gs,
}

/// Query embedding: an object's embedding or explicit values.
#[derive(Clone, Debug, PartialEq)]
pub enum QueryText {
    Object(usize),
    Values(Vec<f64>),
}

impl QueryText {
    fn name(&self) -> String {
        match self {
            QueryText::Object(l) => format!("object_{l}"),
            QueryText::Values(_) => "text".into(),
        }
    }
}

impl FromStr for QueryText {
    type Err = String;

    /// `object:<label>` or comma-separated values.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if let Some(l) = s.strip_prefix("object:") {
            return l.parse().map(QueryText::Object).map_err(|_| format!("bad object label {l:?}"));
        }
        s.split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| format!("bad embedding value {v:?}")))
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(QueryText::Values)
    }
}

/// A training view, or a held-out view of the evaluation rig.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CameraRef {
    Train(usize),
    Eval(usize),
}

impl FromStr for CameraRef {
    type Err = String;

    /// `<index>` or `eval:<index>`.
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = |_| format!("bad camera {s:?}; expected <index> or eval:<index>");
        match s.strip_prefix("eval:") {
            Some(i) => i.parse().map(CameraRef::Eval).map_err(bad),
            None => s.parse().map(CameraRef::Train).map_err(bad),
        }
    }
}

impl std::fmt::Display for CameraRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CameraRef::Train(i) => write!(f, "train{i}"),
            CameraRef::Eval(i) => write!(f, "eval{i}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct QueryArgs {
    pub mode: Mode,
    pub dataset: PathBuf,
    pub field: Option<PathBuf>,
    pub cloud: Option<PathBuf>,
    pub text: QueryText,
    pub camera: Option<CameraRef>,
}

#[derive(Serialize)]
struct ScoreHeader<'a> {
    version: &'a str,
    config_hash: &'a str,
    query: &'a str,
    camera: String,
    width: usize,
    height: usize,
    threshold: f64,
}

fn resolve_camera(run: &Run, ds: &Dataset, c: CameraRef) -> Result<Camera> {
    let missing = |n: usize| Error::Input(format!("camera {c} out of range ({n} available)"));
    match c {
        CameraRef::Train(i) => ds.views.get(i).map(|v| v.camera.clone()).ok_or_else(|| missing(ds.views.len())),
        CameraRef::Eval(i) => {
            let rig = RigConfig {
                num_views: run.cfg.eval.views,
                azimuth_offset_deg: run.cfg.rig.azimuth_offset_deg + run.cfg.eval.azimuth_offset_deg,
                ..run.cfg.rig.clone()
            };
            if i >= rig.num_views {
                return Err(missing(rig.num_views));
            }
            Ok(orbit_rig(&rig, [0.0; 3])?.swap_remove(i))
        }
    }
}

fn query_spec(ds: &Dataset, text: &QueryText, threshold: f64) -> Result<QuerySpec> {
    let scene = &ds.scene;
    let t = match text {
        QueryText::Object(l) => scene
            .objects
            .get(*l)
            .ok_or_else(|| Error::Lookup(format!("no object with label {l}")))?
            .embedding
            .clone(),
        QueryText::Values(v) => {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(n > 0.0 && n.is_finite()) {
                return Err(Error::Input("query embedding has zero or non-finite norm".into()));
            }
            v.iter().map(|x| x / n).collect()
        }
    };
    QuerySpec::new(t, scene.canonical_embeddings.clone(), threshold)
}

fn write_segmentation(run: &Run, path: &Path, seg: &Segmentation, name: &str, mode: &str, threshold: f64) -> Result<()> {
    let data = PlyData {
        vertices: seg.points.clone(),
        scalars: vec![("relevancy".into(), seg.scores.clone())],
        faces: Vec::new(),
        comments: vec![
            format!("version {QUERY_VERSION}"),
            format!("config_hash {}", run.hash),
            format!("query {name}"),
            format!("mode {mode}"),
            format!("threshold {threshold}"),
        ],
    };
    write_ply(path, &data)
}

fn write_relevancy_image(
    run: &Run,
    out: &Path,
    stem: &str,
    cam: &Camera,
    camera: CameraRef,
    r: &RelevancyResult,
    threshold: f64,
) -> Result<Vec<PathBuf>> {
    let cam_s = camera.to_string();
    let text = [
        ("version", QUERY_VERSION),
        ("config_hash", run.hash.as_str()),
        ("camera", cam_s.as_str()),
    ];
    let heat = out.join(format!("{stem}_{cam_s}.png"));
    write_gray_png(&heat, cam.width, cam.height, &to_gray(&r.scores), &text)?;
    let mask = out.join(format!("{stem}_{cam_s}_mask.png"));
    write_gray_png(&mask, cam.width, cam.height, &mask_to_gray(&r.mask), &text)?;
    let blob = out.join(format!("{stem}_{cam_s}.scores"));
    let header = ScoreHeader {
        version: QUERY_VERSION,
        config_hash: &run.hash,
        query: stem,
        camera: cam_s.clone(),
        width: cam.width,
        height: cam.height,
        threshold,
    };
    let scores: Vec<f32> = r.scores.iter().map(|v| *v as f32).collect();
    write_framed(&blob, &header, &f32_payload(&scores))?;
    Ok(vec![heat, mask, blob])
}

/// Runs one query and returns the files written.
pub fn cmd_query(run: &Run, args: &QueryArgs) -> Result<Vec<PathBuf>> {
    let ds = load_dataset(&args.dataset)?;
    let q = &run.cfg.query;
    let name = args.text.name();
    let mut written = Vec::new();
    let need = |p: &Option<PathBuf>, flag: &str| {
        p.clone()
            .ok_or_else(|| Error::Config(format!("--mode {:?} needs {flag}", args.mode)))
    };
    match args.mode {
        Mode::ThreeD => {
            let field = load_field(run, &need(&args.field, "--field")?)?;
            if args.camera.is_some() {
                log::warn!("--camera is ignored by 3d queries");
            }
            let out = run.out_dir()?;
            let spec = query_spec(&ds, &args.text, q.tau_field).map_err(|e| e.in_stage("query"))?;
            let floor = density_floor_at(
                mean_sample_spacing(&train_cameras(&ds), &ds.scene.bounds, run.cfg.train.samples_per_ray),
                q.floor_opacity,
            );
            let seg = if q.mesh {
                extract_mesh(&field, floor, q.grid_res).and_then(|m| segment_mesh(&field, &m, &spec))
            } else {
                segment_3d(&field, &spec, q.grid_res, floor)
            }
            .map_err(|e| e.in_stage("query"))?;
            log::info!("query {name}: {} points", seg.points.len());
            let p = out.join(format!("{name}_3d.ply"));
            write_segmentation(run, &p, &seg, &name, "3d", q.tau_field).map_err(|e| e.in_stage("query"))?;
            written.push(p);
        }
        Mode::TwoD => {
            let field = load_field(run, &need(&args.field, "--field")?)?;
            let camera = args
                .camera
                .ok_or_else(|| Error::Config("--mode 2d needs --camera".into()))?;
            let out = run.out_dir()?;
            let cam = resolve_camera(run, &ds, camera).map_err(|e| e.in_stage("query"))?;
            let spec = query_spec(&ds, &args.text, q.tau_field).map_err(|e| e.in_stage("query"))?;
            let opts = Query2dOptions {
                render: RenderOptions {
                    samples_per_ray: run.cfg.train.samples_per_ray,
                    early_stop_transmittance: run.cfg.train.early_stop_transmittance,
                    ..Default::default()
                },
                normalize: q.normalize_2d,
            };
            let r = relevancy_2d(&cam, &field, &spec, &opts).map_err(|e| e.in_stage("query"))?;
            written.extend(
                write_relevancy_image(run, out, &format!("{name}_2d"), &cam, camera, &r, q.tau_field)
                    .map_err(|e| e.in_stage("query"))?,
            );
        }
        Mode::Gs => {
            let cloud = load_cloud(run, &need(&args.cloud, "--cloud")?)?;
            let out = run.out_dir()?;
            let spec = query_spec(&ds, &args.text, q.tau_splat).map_err(|e| e.in_stage("query"))?;
            let seg = segment_3d_gaussians(&cloud, &spec).map_err(|e| e.in_stage("query"))?;
            log::info!("query {name}: {} splats", seg.points.len());
            let p = out.join(format!("{name}_gs.ply"));
            write_segmentation(run, &p, &seg, &name, "gs", q.tau_splat).map_err(|e| e.in_stage("query"))?;
            written.push(p);
            if let Some(camera) = args.camera {
                let cam = resolve_camera(run, &ds, camera).map_err(|e| e.in_stage("query"))?;
                let r = relevancy_2d_gaussians(&cloud, &cam, &spec, &run.cfg.splat_opt.raster, q.normalize_2d)
                    .map_err(|e| e.in_stage("query"))?;
                written.extend(
                    write_relevancy_image(run, out, &format!("{name}_gs"), &cam, camera, &r, q.tau_splat)
                        .map_err(|e| e.in_stage("query"))?,
                );
            }
        }
    }
    Ok(written)
}

/// Scores a trained field and/or splat cloud against the dataset's ground
/// truth; writes `report.csv`, `timing.csv` and `summary.txt`.
pub fn cmd_eval(run: &Run, dataset: &Path, field: Option<&Path>, cloud: Option<&Path>) -> Result<BenchReport> {
    if field.is_none() && cloud.is_none() {
        return Err(Error::Config("eval needs --field and/or --cloud".into()));
    }
    let ds = load_dataset(dataset)?;
    let field = field.map(|p| load_field(run, p)).transpose()?;
    let cloud = cloud.map(|p| load_cloud(run, p)).transpose()?;
    let out = run.out_dir()?;
    let cfg = run.cfg.bench();
    let loss = run.cfg.train.loss_mode.name();
    let ctx = EvalContext::new(ds, &cfg).map_err(|e| e.in_stage("eval"))?;
    let mut report = BenchReport::default();
    if let Some(f) = &field {
        ctx.evaluate_field(&cfg, f, loss, &mut report).map_err(|e| e.in_stage("eval"))?;
    }
    if let Some(c) = &cloud {
        ctx.evaluate_cloud(&cfg, c, loss, &mut report).map_err(|e| e.in_stage("eval"))?;
    }
    report.sort_rows();
    report.write(out, &run.hash).map_err(|e| e.in_stage("eval"))?;
    Ok(report)
}

/// Full benchmark over `eval.seeds` with both loss modes.
pub fn cmd_bench(run: &Run) -> Result<BenchReport> {
    let out = run.out_dir()?;
    let report = benchmark_run::<f32>(&run.cfg.bench(), &run.hash)?;
    report.write(out, &run.hash).map_err(|e| e.in_stage("bench"))?;
    Ok(report)
}
