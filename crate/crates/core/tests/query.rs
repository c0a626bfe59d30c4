use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use semfield::field::{Field, FieldConfig};
use semfield::geom::Aabb;
use semfield::query::{
    density_floor, extract_mesh, grid_points, relevancy_3d, relevancy_of_embedding, relevancy_raw, segment_3d,
    segment_mesh, QuerySpec,
};

fn unit(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn axis(d: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; d];
    v[i] = 1.0;
    v
}

#[test]
fn symmetric_case_is_exactly_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let t = unit(&mut rng, 16);
        let spec = QuerySpec::new(t.clone(), vec![t.clone()], 0.5).unwrap();
        let e = unit(&mut rng, 16);
        assert_eq!(relevancy_of_embedding(&e, &spec).unwrap(), 0.5);
    }
}

#[test]
fn analytic_case() {
    // e = text and every canonical is -text: e.text = 1, e.canon = -1.
    let t = axis(4, 2);
    let neg: Vec<f64> = t.iter().map(|v| -v).collect();
    let spec = QuerySpec::new(t.clone(), vec![neg.clone(), neg], 0.5).unwrap();
    let s = relevancy_of_embedding(&t, &spec).unwrap();
    assert!((s - 1.0 / (1.0 + (-2.0f64).exp())).abs() < 1e-9);
    assert!((s - 0.8808).abs() < 1e-4);
}

#[test]
fn orthogonal_query_scores_below_one_half() {
    // The query is orthogonal to every embedding in the scene while the
    // canonicals describe that content.
    let d = 8;
    let spec = QuerySpec::new(axis(d, 7), vec![axis(d, 0), axis(d, 1)], 0.5).unwrap();
    for i in 0..2 {
        assert!(relevancy_of_embedding(&axis(d, i), &spec).unwrap() < 0.5);
    }
}

#[test]
fn canonical_set_monotonicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let d = rng.gen_range(2..12);
        let t = unit(&mut rng, d);
        let k = rng.gen_range(1..5);
        let canon: Vec<Vec<f64>> = (0..k).map(|_| unit(&mut rng, d)).collect();
        let extra = unit(&mut rng, d);
        let e = unit(&mut rng, d);
        let small = QuerySpec::new(t.clone(), canon.clone(), 0.5).unwrap();
        let mut more = canon;
        more.push(extra);
        let big = QuerySpec::new(t, more, 0.5).unwrap();
        assert!(relevancy_raw(&e, &big) <= relevancy_raw(&e, &small));
    }
}

#[test]
fn invalid_specs_are_rejected() {
    assert!(QuerySpec::new(vec![0.5, 0.5], vec![axis(2, 0)], 0.5).is_err());
    assert!(QuerySpec::new(axis(2, 0), vec![], 0.5).is_err());
    assert!(QuerySpec::new(axis(2, 0), vec![axis(3, 0)], 0.5).is_err());
    assert!(QuerySpec::new(axis(2, 0), vec![axis(2, 1)], 1.0).is_err());
    let spec = QuerySpec::new(axis(2, 0), vec![axis(2, 1)], 0.5).unwrap();
    assert!(relevancy_of_embedding(&[1.0, 1.0], &spec).is_err());
    assert!(relevancy_of_embedding(&[1.0], &spec).is_err());
}

proptest! {
    #[test]
    fn scores_are_strictly_inside_unit_interval(seed in any::<u64>(), d in 2usize..10, k in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = QuerySpec::new(unit(&mut rng, d), (0..k).map(|_| unit(&mut rng, d)).collect(), 0.5).unwrap();
        let s = relevancy_of_embedding(&unit(&mut rng, d), &spec).unwrap();
        prop_assert!(s > 0.0 && s < 1.0);
    }
}

fn random_field(seed: u64) -> Field<f64> {
    let cfg = FieldConfig {
        density_bias_init: 1.0,
        language_init_scale: 1.0,
        geometry_init_scale: 1.0,
        ..Default::default()
    };
    Field::init(Aabb::cube(1.0), &cfg, 6, seed).unwrap()
}

#[test]
fn relevancy_3d_matches_pointwise_scores_and_is_repeatable() {
    let field = random_field(4);
    let spec = QuerySpec::new(axis(6, 0), vec![axis(6, 1), axis(6, 2)], 0.55).unwrap();
    let pts = grid_points(&field.bounds, 16);
    let a = relevancy_3d(&pts, &field, &spec).unwrap();
    let b = relevancy_3d(&pts, &field, &spec).unwrap();
    assert_eq!(a, b);
    for (p, s) in pts.iter().zip(&a.scores).step_by(97) {
        let (e, _) = field.query_language(*p).unwrap();
        assert_eq!(*s, relevancy_raw(&e, &spec));
    }
    assert!(a.mask.iter().zip(&a.scores).all(|(m, s)| *m == (*s > 0.55)));
}

#[test]
fn segmentation_respects_floor_and_threshold() {
    let field = random_field(5);
    let spec = QuerySpec::new(axis(6, 3), vec![axis(6, 4)], 0.55).unwrap();
    let floor = density_floor(0.05);
    let seg = segment_3d(&field, &spec, 24, floor).unwrap();
    assert!(!seg.is_empty());
    for (p, s) in seg.points.iter().zip(&seg.scores) {
        assert!(field.eval_density(*p) > floor);
        assert!(*s > 0.55);
    }
    // A floor above every density empties the result.
    assert!(segment_3d(&field, &spec, 24, 1e12).unwrap().is_empty());
    assert!(segment_3d(&field, &spec, 8, floor).is_err());
}

#[test]
fn mesh_segmentation_scores_mesh_vertices() {
    let field = random_field(6);
    let spec = QuerySpec::new(axis(6, 0), vec![axis(6, 5)], 0.55).unwrap();
    let mesh = extract_mesh(&field, density_floor(0.05), 20).unwrap();
    assert!(!mesh.vertices.is_empty());
    let seg = segment_mesh(&field, &mesh, &spec).unwrap();
    assert!(!seg.is_empty());
    assert!(seg.points.len() <= mesh.vertices.len());
    let r = relevancy_3d(&mesh.vertices, &field, &spec).unwrap();
    let expect: Vec<[f64; 3]> = mesh.vertices.iter().zip(&r.mask).filter(|(_, m)| **m).map(|(p, _)| *p).collect();
    assert_eq!(seg.points, expect);
}
