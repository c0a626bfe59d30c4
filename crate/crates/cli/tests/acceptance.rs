//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs the full reference benchmark (configs/reference.toml), which takes
//! most of the runtime. Set `SEMFIELD_ACCEPT_STRICT=1` to exit non-zero
//! when any criterion fails; by default failures are only reported.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semfield::eval::{f1_3d, f1_3d_brute_force, BenchReport};
use semfield::field::{Field, FieldConfig};
use semfield::geom::Aabb;
use semfield::gsplat::{
    attach_embeddings, brute_force_rasterize, optimize_gaussians, rasterize, Gaussian, GaussianCloud,
    OptimizeConfig, RasterOptions,
};
use semfield::query::{
    density_floor, grid_points, relevancy_3d, relevancy_of_embedding, relevancy_raw, segment_3d, QuerySpec,
};
use semfield::render::{compute_weights, render_image, Background, RenderOptions};
use semfield::scene::{synthesize, Camera, Dataset, Intrinsics, RigConfig, SceneConfig};
use semfield::train::{fixed_batch_loss, LossMode, TrainConfig};
use semfield::{Cloud32, Field32};
use semfield_cli::{cmd_bench, cmd_query, cmd_synth, cmd_train, CameraRef, Mode, QueryArgs, QueryText, Run, RunConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn axis(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn reference_config(out: &Path, overrides: &[String]) -> RunConfig {
    let mut cfg = RunConfig::load(Some(&repo_root().join("configs/reference.toml")), overrides).unwrap();
    cfg.out = out.to_path_buf();
    cfg
}

// 1

fn conservation() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    let n = 100_000;
    for _ in 0..n {
        let k = rng.gen_range(1..=128);
        let sigma: Vec<f64> = (0..k)
            .map(|_| if rng.gen_bool(0.2) { 0.0 } else { 10f64.powf(rng.gen_range(-3.0..3.0)) })
            .collect();
        let delta: Vec<f64> = (0..k).map(|_| rng.gen_range(1e-4..0.5)).collect();
        let w = compute_weights(&sigma, &delta).unwrap();
        worst = worst.max((w.weights.iter().sum::<f64>() + w.final_transmittance() - 1.0).abs());
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-6 && secs < 10.0,
        format!("max |sum w + T - 1| = {worst:.2e} over {n} configurations, {secs:.1} s"),
    )
}

// 2 and 3

fn grad_dataset() -> Dataset {
    let scene = SceneConfig {
        num_objects: 2,
        embedding_dim: 8,
        ..Default::default()
    };
    let rig = RigConfig {
        num_views: 3,
        width: 12,
        height: 12,
        ..Default::default()
    };
    synthesize(5, &scene, &rig, "acceptance").unwrap()
}

fn grad_field(ds: &Dataset) -> Field<f64> {
    let cfg = FieldConfig {
        resolutions: vec![3, 5],
        channels: 2,
        density_bias_init: 0.5,
        density_weight_init: 1.0,
        geometry_init_scale: 0.5,
        language_init_scale: 0.5,
        ..Default::default()
    };
    Field::init(ds.scene.bounds, &cfg, ds.scene.embedding_dim(), 11).unwrap()
}

fn grad_pixels(ds: &Dataset) -> Vec<(usize, usize)> {
    (0..ds.views.len())
        .flat_map(|v| (0..ds.views[v].camera.num_pixels()).step_by(7).map(move |p| (v, p)))
        .collect()
}

fn grad_config(rgb: f64, lang: f64, mode: LossMode, detach: bool) -> TrainConfig {
    TrainConfig {
        lambda_rgb: rgb,
        lambda_lang: lang,
        loss_mode: mode,
        detach_weights: detach,
        samples_per_ray: 12,
        early_stop_transmittance: 0.0,
        final_psnr: false,
        ..Default::default()
    }
}

/// Max relative error of the analytic gradient on `count` random parameters.
fn max_grad_error(ds: &Dataset, cfg: &TrainConfig, count: usize) -> f64 {
    const H: f64 = 1e-4;
    let mut f = grad_field(ds);
    let px = grad_pixels(ds);
    let mut grad = vec![0.0; f.layout.len()];
    fixed_batch_loss(&f, ds, &px, cfg, Some(&mut grad));
    // Parameters the batch does not touch have exactly zero gradient on both sides.
    let live: Vec<usize> = (0..grad.len()).filter(|i| grad[*i].abs() > 1e-6).collect();
    if live.len() < count {
        return f64::INFINITY;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for k in sample(&mut rng, live.len(), count) {
        let i = live[k];
        let p0 = f.params[i];
        f.params[i] = p0 + H;
        let up = fixed_batch_loss(&f, ds, &px, cfg, None);
        f.params[i] = p0 - H;
        let down = fixed_batch_loss(&f, ds, &px, cfg, None);
        f.params[i] = p0;
        let numeric = (up - down) / (2.0 * H);
        worst = worst.max((grad[i] - numeric).abs() / grad[i].abs().max(numeric.abs()));
    }
    worst
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let ds = grad_dataset();
    let cases = [
        ("L_rgb", grad_config(1.0, 0.0, LossMode::Pointwise, true)),
        ("rendered", grad_config(0.0, 1.0, LossMode::Rendered, false)),
        ("pointwise", grad_config(0.0, 1.0, LossMode::Pointwise, false)),
    ];
    let errs: Vec<(&str, f64)> = cases.iter().map(|(n, c)| (*n, max_grad_error(&ds, c, 120))).collect();
    let secs = t.elapsed().as_secs_f64();
    let worst = errs.iter().map(|e| e.1).fold(0.0, f64::max);
    let parts: Vec<String> = errs.iter().map(|(n, e)| format!("{n} {e:.1e}")).collect();
    outcome(
        worst <= 1e-4 && secs < 60.0,
        format!("max relative error on 120 parameters each: {}, {secs:.1} s", parts.join(", ")),
    )
}

fn detachment() -> Outcome {
    let ds = grad_dataset();
    let f = grad_field(&ds);
    let px = grad_pixels(&ds);
    let mut nonzero_geometry = 0;
    let mut language_live = true;
    for mode in [LossMode::Rendered, LossMode::Pointwise] {
        let mut grad = vec![0.0; f.layout.len()];
        fixed_batch_loss(&f, &ds, &px, &grad_config(0.0, 1.0, mode, true), Some(&mut grad));
        nonzero_geometry += (0..grad.len()).filter(|i| f.layout.is_geometry(*i) && grad[*i] != 0.0).count();
        language_live &= grad.iter().any(|g| *g != 0.0);
    }
    outcome(
        nonzero_geometry == 0 && language_live,
        format!("{nonzero_geometry} non-zero geometry gradients over both language losses"),
    )
}

// 4

fn raster_camera() -> Camera {
    let k = Intrinsics {
        fx: 35.2,
        fy: 35.2,
        cx: 16.0,
        cy: 16.0,
    };
    Camera::look_at([0.3, -2.8, 1.2], [0.0; 3], [0.0, 0.0, 1.0], k, 32, 32).unwrap()
}

fn random_cloud(seed: u64, n: usize, d: usize) -> GaussianCloud<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = GaussianCloud::new(d);
    for _ in 0..n {
        let q = unit(&mut rng, 4);
        c.push(Gaussian {
            position: [0; 3].map(|_| rng.gen_range(-0.7..0.7)),
            rotation: [q[0], q[1], q[2], q[3]],
            log_scale: [0; 3].map(|_| rng.gen_range(0.01f64..0.25).ln()),
            opacity_logit: rng.gen_range(-2.0..4.0),
            color: [rng.gen(), rng.gen(), rng.gen()],
            embedding: unit(&mut rng, d),
        })
        .unwrap();
    }
    c
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn rasterizer() -> Outcome {
    let t = Instant::now();
    let cam = raster_camera();
    let mut clouds: Vec<GaussianCloud<f64>> = (0..49).map(|s| random_cloud(s, 1 + (s as usize * 37) % 200, 8)).collect();
    // One splat centered on the corner shared by four tiles.
    let mut straddle = GaussianCloud::new(8);
    straddle
        .push(Gaussian {
            position: [0.0; 3],
            rotation: [1.0, 0.0, 0.0, 0.0],
            log_scale: [0.15f64.ln(); 3],
            opacity_logit: 2.0,
            color: [0.2, 0.5, 0.9],
            embedding: axis(8, 3),
        })
        .unwrap();
    clouds.push(straddle);
    let mut worst = 0.0f64;
    for c in &clouds {
        let a = rasterize(c, &cam, &RasterOptions::default()).unwrap();
        let b = brute_force_rasterize(c, &cam, Background::Black).unwrap();
        worst = worst
            .max(max_diff(&a.rgb, &b.rgb))
            .max(max_diff(&a.embedding, &b.embedding))
            .max(max_diff(&a.opacity, &b.opacity));
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-5 && secs < 60.0,
        format!("max deviation {worst:.2e} on {} scenes, {secs:.1} s", clouds.len()),
    )
}

// 5, 6 and 8

fn ablation(report: &BenchReport, secs: f64) -> Outcome {
    let p = report.median_f1("nerf", "pointwise");
    let r = report.median_f1("nerf", "rendered");
    let gain = if r > 0.0 { p / r - 1.0 } else { f64::INFINITY };
    outcome(
        gain >= 0.2 && secs < 1200.0,
        format!(
            "median 3D F1 pointwise {p:.4} vs rendered {r:.4} (gain {:+.1}%), benchmark {:.1} min",
            100.0 * gain,
            secs / 60.0
        ),
    )
}

fn transfer_fidelity(report: &BenchReport) -> Outcome {
    let gs = report.median_f1("gs", "pointwise");
    let nerf = report.median_f1("nerf", "pointwise");
    let ratio = if nerf > 0.0 { gs / nerf } else { 0.0 };
    outcome(
        ratio >= 0.75,
        format!("median 3D F1 splats {gs:.4} vs field {nerf:.4} ({:.1}%)", 100.0 * ratio),
    )
}

/// Standard deviation over held-out views of the per-view mean IoU, for the
/// first seed, field method, point-wise loss.
fn view_iou_std(report: &BenchReport) -> (f64, usize) {
    let seed = report.rows[0].scene_seed;
    let per_query: Vec<&Vec<Option<f64>>> = report
        .rows
        .iter()
        .zip(&report.view_iou)
        .filter(|(r, _)| r.scene_seed == seed && r.method == "nerf" && r.loss == "pointwise")
        .map(|(_, v)| v)
        .collect();
    let views = per_query.first().map_or(0, |v| v.len());
    let per_view: Vec<f64> = (0..views)
        .filter_map(|v| {
            let ious: Vec<f64> = per_query.iter().filter_map(|q| q[v]).collect();
            (!ious.is_empty()).then(|| ious.iter().sum::<f64>() / ious.len() as f64)
        })
        .collect();
    let m = per_view.iter().sum::<f64>() / per_view.len() as f64;
    let var = per_view.iter().map(|x| (x - m).powi(2)).sum::<f64>() / per_view.len() as f64;
    (var.sqrt(), per_view.len())
}

fn same_bits(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn camera_independence(report: &BenchReport, scratch: &Path) -> Outcome {
    let cfg = reference_config(
        &scratch.join("cam/data"),
        &["rig.num_views=8".into(), "rig.width=32".into(), "rig.height=32".into(), "train.iterations=60".into()],
    );
    let data = cmd_synth(&Run::new(cfg.clone())).unwrap();
    let train_run = Run::new(RunConfig {
        out: scratch.join("cam/run"),
        ..cfg.clone()
    });
    let ckpt = cmd_train(&train_run, &data).unwrap();

    // Through the command layer: the PLY written with and without a camera.
    let mut plys = Vec::new();
    for (i, camera) in [None, Some("0"), Some("eval:5")].into_iter().enumerate() {
        let run = Run::new(RunConfig {
            out: scratch.join(format!("cam/q{i}")),
            ..cfg.clone()
        });
        let args = QueryArgs {
            mode: Mode::ThreeD,
            dataset: data.clone(),
            field: Some(ckpt.clone()),
            cloud: None,
            text: QueryText::from_str("object:0").unwrap(),
            camera: camera.map(|c| CameraRef::from_str(c).unwrap()),
        };
        let written = cmd_query(&run, &args).unwrap();
        plys.push(std::fs::read(&written[0]).unwrap());
    }
    let cli_same = plys.windows(2).all(|w| w[0] == w[1]);

    // Directly: 3D scores before and after rendering from several cameras.
    let (field, _) = Field32::load(&ckpt).unwrap();
    let ds = semfield::scene::import_dataset(&data).unwrap();
    let spec = QuerySpec::new(
        ds.scene.objects[0].embedding.clone(),
        ds.scene.canonical_embeddings.clone(),
        0.55,
    )
    .unwrap();
    let pts = grid_points(&field.bounds, 32);
    let r0 = relevancy_3d(&pts, &field, &spec).unwrap();
    let s0 = segment_3d(&field, &spec, 32, density_floor(0.02)).unwrap();
    for v in &ds.views {
        render_image(&field, &v.camera, &RenderOptions::default(), true).unwrap();
    }
    let r1 = relevancy_3d(&pts, &field, &spec).unwrap();
    let s1 = segment_3d(&field, &spec, 32, density_floor(0.02)).unwrap();
    let flat = |s: &semfield::query::Segmentation| s.points.iter().flatten().copied().collect::<Vec<f64>>();
    let direct_same = same_bits(&r0.scores, &r1.scores)
        && r0.mask == r1.mask
        && same_bits(&flat(&s0), &flat(&s1))
        && same_bits(&s0.scores, &s1.scores);

    let (std, views) = view_iou_std(report);
    outcome(
        cli_same && direct_same && std <= 0.1,
        format!(
            "3D outputs identical across cameras: {}; per-view IoU std {std:.4} over {views} views",
            cli_same && direct_same
        ),
    )
}

// 7

fn fast_transfer(scratch: &Path) -> Outcome {
    let path = scratch.join("attach.ckpt");
    Field32::init(Aabb::cube(1.0), &FieldConfig::default(), 32, 3)
        .unwrap()
        .save(&path, "acceptance")
        .unwrap();
    let (field, _) = Field32::load(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cloud = Cloud32::new(32);
    for _ in 0..100_000 {
        cloud
            .push(Gaussian {
                position: [0; 3].map(|_| rng.gen_range(-1.0f32..1.0)),
                rotation: [1.0, 0.0, 0.0, 0.0],
                log_scale: [-4.0; 3],
                opacity_logit: 0.0,
                color: [0.5; 3],
                embedding: vec![0.0; 32],
            })
            .unwrap();
    }
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let t = Instant::now();
    pool.install(|| attach_embeddings(&mut cloud, &field)).unwrap();
    let secs = t.elapsed().as_secs_f64();

    let ds = grad_dataset();
    let mut small = random_cloud(9, 500, 8).cast::<f32>();
    let before = small.clone();
    let cfg = OptimizeConfig {
        iterations: 20,
        measure_psnr: false,
        ..Default::default()
    };
    optimize_gaussians(&mut small, &ds, &cfg, 0).unwrap();
    let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    let frozen = bits(small.positions.as_flattened()) == bits(before.positions.as_flattened())
        && bits(&small.embeddings) == bits(&before.embeddings)
        && small.colors != before.colors;
    outcome(
        secs < 2.0 && frozen,
        format!("attach 100k points in {:.0} ms on one thread; positions and embeddings frozen: {frozen}", secs * 1e3),
    )
}

// 9

fn metrics() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cloud = |rng: &mut ChaCha8Rng, n: usize, c: f64, s: f64| -> Vec<[f64; 3]> {
        (0..n).map(|_| [0; 3].map(|_| c + rng.gen_range(-s..s))).collect()
    };
    let gt = cloud(&mut rng, 400, 0.0, 0.5);
    let same = f1_3d(&gt, &gt, 0.01).unwrap();
    let far = cloud(&mut rng, 400, 10.0, 0.5);
    let disjoint = f1_3d(&far, &gt, 0.2).unwrap();
    let mut half = gt.clone();
    half.extend(cloud(&mut rng, 400, 20.0, 0.5));
    let h = f1_3d(&half, &gt, 0.05).unwrap();
    let constructed = (same.precision, same.recall, same.f1) == (1.0, 1.0, 1.0)
        && (disjoint.precision, disjoint.recall, disjoint.f1) == (0.0, 0.0, 0.0)
        && (h.precision, h.recall, h.f1) == (0.5, 1.0, 2.0 / 3.0);
    let mut mismatches = 0;
    for _ in 0..100 {
        let spread = rng.gen_range(0.1..3.0);
        let n = rng.gen_range(0..300);
        let m = rng.gen_range(0..300);
        let pred = cloud(&mut rng, n, 0.0, spread);
        let gt = cloud(&mut rng, m, 0.1, spread);
        let r = rng.gen_range(0.01..0.5);
        if f1_3d(&pred, &gt, r).unwrap() != f1_3d_brute_force(&pred, &gt, r).unwrap() {
            mismatches += 1;
        }
    }
    outcome(
        constructed && mismatches == 0,
        format!("constructed cases exact: {constructed}; {mismatches}/100 grid vs brute-force mismatches"),
    )
}

// 10

fn relevancy() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut symmetric = true;
    for _ in 0..100 {
        let t = unit(&mut rng, 16);
        let spec = QuerySpec::new(t.clone(), vec![t], 0.5).unwrap();
        symmetric &= relevancy_of_embedding(&unit(&mut rng, 16), &spec).unwrap() == 0.5;
    }
    let t = axis(4, 2);
    let neg: Vec<f64> = t.iter().map(|v| -v).collect();
    let spec = QuerySpec::new(t.clone(), vec![neg], 0.5).unwrap();
    let analytic = (relevancy_of_embedding(&t, &spec).unwrap() - 1.0 / (1.0 + (-2.0f64).exp())).abs();
    let mut violations = 0;
    for _ in 0..10_000 {
        let d = rng.gen_range(2..12);
        let t = unit(&mut rng, d);
        let k = rng.gen_range(1..5);
        let canon: Vec<Vec<f64>> = (0..k).map(|_| unit(&mut rng, d)).collect();
        let e = unit(&mut rng, d);
        let small = QuerySpec::new(t.clone(), canon.clone(), 0.5).unwrap();
        let mut more = canon;
        more.push(unit(&mut rng, d));
        let big = QuerySpec::new(t, more, 0.5).unwrap();
        if relevancy_raw(&e, &big) > relevancy_raw(&e, &small) {
            violations += 1;
        }
    }
    outcome(
        symmetric && analytic <= 1e-9 && violations == 0,
        format!("symmetric exact: {symmetric}; analytic error {analytic:.1e}; {violations} monotonicity violations in 10000"),
    )
}

// 11

fn determinism(scratch: &Path) -> Outcome {
    let overrides: Vec<String> = ["eval.seeds=[0]", "train.iterations=60", "splat_opt.iterations=5", "eval.gt_points=2000"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut csv = Vec::new();
    for k in 0..2 {
        let dir = scratch.join(format!("det{k}"));
        cmd_bench(&Run::new(reference_config(&dir, &overrides))).unwrap();
        csv.push(std::fs::read(dir.join("report.csv")).unwrap());
    }
    let same = csv[0] == csv[1];
    outcome(same, format!("report.csv byte-identical across two runs: {same} ({} bytes)", csv[0].len()))
}

fn main() {
    let strict = std::env::var("SEMFIELD_ACCEPT_STRICT").is_ok_and(|v| v == "1");
    let scratch = tempfile::tempdir().unwrap();
    let s = scratch.path();
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |id: u32, name: &'static str, o: Outcome| {
        println!("{} {id:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    record(1, "volume-rendering conservation", conservation());
    record(2, "gradient correctness", gradients());
    record(3, "detachment", detachment());
    record(4, "rasterizer oracle", rasterizer());

    let t = Instant::now();
    let bench = cmd_bench(&Run::new(reference_config(&s.join("reference"), &[]))).unwrap();
    let secs = t.elapsed().as_secs_f64();
    record(5, "ablation direction", ablation(&bench, secs));
    record(6, "transfer fidelity", transfer_fidelity(&bench));
    record(7, "fast frozen transfer", fast_transfer(s));
    record(8, "camera-independent 3D queries", camera_independence(&bench, s));
    record(9, "metric correctness", metrics());
    record(10, "relevancy math", relevancy());
    record(11, "end-to-end determinism", determinism(s));

    let passed = results.iter().filter(|r| r.2.pass).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if strict && passed < results.len() {
        std::process::exit(1);
    }
}
