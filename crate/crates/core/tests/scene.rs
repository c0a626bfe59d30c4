use nalgebra::Point3;

use semfield::geom::Aabb;
use semfield::scene::{
    generate_scene, render_gt_view, sample_object_surface, synthesize, Camera, Intrinsics, Primitive, RigConfig,
    RigidPose, SceneConfig, SemanticScene, Shape,
};

fn sphere(center: [f64; 3], r: f64, dim: usize, axis: usize) -> Primitive {
    let mut embedding = vec![0.0; dim];
    embedding[axis] = 1.0;
    Primitive {
        shape: Shape::Sphere,
        pose: RigidPose {
            translation: center,
            ..RigidPose::identity()
        },
        extent: [r; 3],
        albedo: [0.5; 3],
        embedding,
        label: format!("sphere_{axis}"),
    }
}

fn scene(objects: Vec<Primitive>) -> SemanticScene {
    let d = objects[0].embedding.len();
    let mut bg = vec![0.0; d];
    bg[d - 1] = 1.0;
    SemanticScene {
        objects,
        background_embedding: bg.clone(),
        canonical_embeddings: vec![bg],
        bounds: Aabb::cube(1.0),
        seed: 0,
        config: SceneConfig::default(),
    }
}

fn camera(size: usize, f: f64) -> Camera {
    let k = Intrinsics {
        fx: f,
        fy: f,
        cx: size as f64 / 2.0,
        cy: size as f64 / 2.0,
    };
    Camera::look_at([0.0, -3.0, 0.0], [0.0; 3], [0.0, 0.0, 1.0], k, size, size).unwrap()
}

#[test]
fn centered_sphere_projects_to_analytic_disc() {
    let (size, f, r, z) = (64, 60.0, 0.5, 3.0);
    let s = scene(vec![sphere([0.0; 3], r, 4, 0)]);
    let view = render_gt_view(&s, &camera(size, f)).unwrap();
    // Silhouette of a sphere seen on axis: angular radius asin(r / z).
    let radius = f * r / (z * z - r * r).sqrt();
    let c = size as f64 / 2.0;
    for row in 0..size {
        for col in 0..size {
            let d = ((col as f64 + 0.5 - c).powi(2) + (row as f64 + 0.5 - c).powi(2)).sqrt();
            let label = view.labels[row * size + col];
            if d < radius - 1.0 {
                assert_eq!(label, 0, "pixel ({col}, {row}) inside the disc");
            }
            if d > radius + 1.0 {
                assert_eq!(label, -1, "pixel ({col}, {row}) outside the disc");
            }
        }
    }
    let area = view.labels.iter().filter(|l| **l == 0).count() as f64;
    assert!(((area / std::f64::consts::PI).sqrt() - radius).abs() < 1.0);
}

fn ray_sphere(o: &[f64; 3], d: &[f64; 3], c: &[f64; 3], r: f64) -> Option<f64> {
    let oc = [o[0] - c[0], o[1] - c[1], o[2] - c[2]];
    let b = oc.iter().zip(d).map(|(a, b)| a * b).sum::<f64>();
    let cc = oc.iter().map(|v| v * v).sum::<f64>() - r * r;
    let disc = b * b - cc;
    (disc >= 0.0).then(|| -b - disc.sqrt()).filter(|t| *t > 0.0)
}

#[test]
fn nearer_sphere_wins_where_they_overlap() {
    let a = ([0.15, -0.3, 0.0], 0.35);
    let b = ([-0.15, 0.4, 0.05], 0.5);
    let s = scene(vec![sphere(a.0, a.1, 4, 0), sphere(b.0, b.1, 4, 1)]);
    let size = 48;
    let cam = camera(size, 45.0);
    let view = render_gt_view(&s, &cam).unwrap();
    let mut overlap = 0;
    for row in 0..size {
        for col in 0..size {
            let ray = cam.pixel_ray(col, row);
            let o = [ray.origin.x, ray.origin.y, ray.origin.z];
            let d = [ray.dir.x, ray.dir.y, ray.dir.z];
            let ta = ray_sphere(&o, &d, &a.0, a.1);
            let tb = ray_sphere(&o, &d, &b.0, b.1);
            let expect = match (ta, tb) {
                (Some(x), Some(y)) => {
                    overlap += 1;
                    if x < y {
                        0
                    } else {
                        1
                    }
                }
                (Some(_), None) => 0,
                (None, Some(_)) => 1,
                (None, None) => -1,
            };
            let idx = row * size + col;
            assert_eq!(view.labels[idx], expect, "pixel ({col}, {row})");
            if expect >= 0 {
                let t = ta.into_iter().chain(tb).fold(f64::INFINITY, f64::min);
                assert!((view.depth[idx] as f64 - t).abs() < 1e-4);
            }
        }
    }
    assert!(overlap > 50);
}

#[test]
fn rendered_views_are_finite_and_labels_match_embeddings() {
    let ds = synthesize(
        3,
        &SceneConfig {
            num_objects: 4,
            ..Default::default()
        },
        &RigConfig {
            num_views: 6,
            width: 24,
            height: 24,
            ..Default::default()
        },
        "t",
    )
    .unwrap();
    ds.scene.check_invariants().unwrap();
    for v in &ds.views {
        assert!(v.rgb.iter().all(|c| c.is_finite() && (0.0..=1.0).contains(c)));
        assert!(v.labels.iter().all(|l| *l >= -1 && *l < 4));
    }
    let dots = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    for (i, o) in ds.scene.objects.iter().enumerate() {
        assert!((dots(&o.embedding, &o.embedding) - 1.0).abs() < 1e-12);
        assert_eq!(ds.scene.embedding_for_label(i as i32), o.embedding.as_slice());
    }
    assert_eq!(ds.scene.embedding_for_label(-1), ds.scene.background_embedding.as_slice());
}

#[test]
fn scenes_and_surface_samples_are_seeded() {
    let cfg = SceneConfig::default();
    assert_eq!(generate_scene(9, &cfg).unwrap(), generate_scene(9, &cfg).unwrap());
    assert_ne!(generate_scene(9, &cfg).unwrap(), generate_scene(10, &cfg).unwrap());
    let s = generate_scene(9, &cfg).unwrap();
    let a = sample_object_surface(&s, 1, 500, 4).unwrap();
    assert_eq!(a, sample_object_surface(&s, 1, 500, 4).unwrap());
    for p in &a {
        assert!(s.objects[1].signed_distance(&Point3::from(*p)).abs() < 1e-9);
    }
}
