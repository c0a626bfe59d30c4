//! Behavior of a field trained once on a small two-object scene.

use std::sync::OnceLock;

use nalgebra::Point3;

use semfield::eval::train_cameras;
use semfield::field::{Field, FieldConfig};
use semfield::gsplat::{segment_3d_gaussians, transfer_from_field, TransferConfig};
use semfield::query::{density_floor_at, mean_sample_spacing, relevancy_of_embedding, segment_3d, QuerySpec};
use semfield::scene::{sample_object_surface, synthesize, Dataset, RigConfig, SceneConfig};
use semfield::train::{train, TrainConfig};

struct Trained {
    ds: Dataset,
    field: Field<f32>,
    cfg: TrainConfig,
}

fn trained() -> &'static Trained {
    static CELL: OnceLock<Trained> = OnceLock::new();
    CELL.get_or_init(|| {
        let scene = SceneConfig {
            num_objects: 2,
            ..Default::default()
        };
        let rig = RigConfig {
            num_views: 16,
            width: 32,
            height: 32,
            ..Default::default()
        };
        let ds = synthesize(1, &scene, &rig, "golden").unwrap();
        let fcfg = FieldConfig {
            resolutions: vec![8, 16, 32],
            ..Default::default()
        };
        let mut field = Field::init(ds.scene.bounds, &fcfg, ds.scene.embedding_dim(), 1).unwrap();
        let cfg = TrainConfig {
            iterations: 300,
            batch_rays: 512,
            lr_grid: 3e-2,
            final_psnr: false,
            ..Default::default()
        };
        let r = train(&ds, &mut field, &cfg, 1).unwrap();
        eprintln!("golden field trained in {:.1}s", r.seconds);
        Trained { ds, field, cfg }
    })
}

fn spec(t: &Trained, label: usize, threshold: f64) -> QuerySpec {
    let s = &t.ds.scene;
    QuerySpec::new(s.objects[label].embedding.clone(), s.canonical_embeddings.clone(), threshold).unwrap()
}

fn floor(t: &Trained) -> f64 {
    density_floor_at(
        mean_sample_spacing(&train_cameras(&t.ds), &t.ds.scene.bounds, t.cfg.samples_per_ray),
        0.1,
    )
}

#[test]
fn object_query_selects_that_object() {
    let t = trained();
    for label in 0..2 {
        let seg = segment_3d(&t.field, &spec(t, label, 0.55), 48, floor(t)).unwrap();
        let obj = &t.ds.scene.objects[label];
        let sdf = |p: &[f64; 3]| obj.signed_distance(&Point3::from(*p));
        let on = seg.points.iter().filter(|p| sdf(p) < 0.05).count();
        let precision = on as f64 / seg.points.len() as f64;
        let c = seg.centroid().expect("empty segmentation");
        eprintln!("object {label}: {} points, precision {precision:.3}, centroid sdf {:.3}", seg.points.len(), sdf(&c));
        assert!(seg.points.len() >= 50);
        assert!(precision >= 0.95);
        assert!(sdf(&c) < 0.05);
    }
}

#[test]
fn on_object_scores_exceed_off_object_scores() {
    let t = trained();
    let s = &t.ds.scene;
    for label in 0..2 {
        let q = spec(t, label, 0.55);
        let score = |p: &[f64; 3]| {
            let (e, _) = t.field.query_language(p.map(|v| v as f32)).unwrap();
            let e: Vec<f64> = e.iter().map(|v| *v as f64).collect();
            relevancy_of_embedding(&e, &q).unwrap()
        };
        let mean = |pts: &[[f64; 3]]| pts.iter().map(score).sum::<f64>() / pts.len() as f64;
        let on = mean(&sample_object_surface(s, label, 500, 2).unwrap());
        let off = mean(&sample_object_surface(s, 1 - label, 500, 2).unwrap());
        eprintln!("object {label}: on {on:.3}, off {off:.3}");
        assert!(on > off + 0.1);
        assert!(on > 0.55);
    }
}

#[test]
fn transferred_centers_lie_on_or_inside_the_surface() {
    let t = trained();
    let cfg = TransferConfig {
        top_n: 5000,
        min_weight: 0.1,
        ..Default::default()
    };
    let cloud = transfer_from_field(&t.field, &train_cameras(&t.ds), &cfg, 1).unwrap();
    assert!(!cloud.is_empty());
    let cell = t.field.finest_cell();
    let near = cloud
        .centers()
        .iter()
        .filter(|p| t.ds.scene.signed_distance(p) < 3.0 * cell)
        .count();
    let frac = near as f64 / cloud.len() as f64;
    eprintln!("{} centers, {:.3} within 3 cells", cloud.len(), frac);
    assert!(frac >= 0.95);

    for label in 0..2 {
        let seg = segment_3d_gaussians(&cloud, &spec(t, label, 0.6)).unwrap();
        let c = seg.centroid().expect("empty splat segmentation");
        let obj = &t.ds.scene.objects[label];
        let on = seg.points.iter().filter(|p| obj.signed_distance(&Point3::from(**p)) < 3.0 * cell).count();
        let precision = on as f64 / seg.points.len() as f64;
        let d = obj.signed_distance(&Point3::from(c));
        eprintln!("splats, object {label}: {} kept, precision {precision:.3}, centroid sdf {d:.3}", seg.points.len());
        assert!(precision >= 0.95);
        assert!(d < 0.05);
    }
}
