use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semfield::field::{Field, FieldConfig};
use semfield::geom::Aabb;
use semfield::render::{
    bounded_samples, compute_weights, evaluate_samples, render_embedding, render_rgb, Background, MAX_OPTICAL_DEPTH,
};
use semfield::scene::{Camera, Intrinsics};

fn cam(eye: [f64; 3], target: [f64; 3]) -> Camera {
    let k = Intrinsics {
        fx: 8.8,
        fy: 8.8,
        cx: 4.0,
        cy: 4.0,
    };
    Camera::look_at(eye, target, [0.0, 0.0, 1.0], k, 8, 8).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn weights_and_transmittance_conserve(
        sigma in prop::collection::vec(0.0f64..200.0, 1..96),
        delta_scale in 1e-4f64..0.5,
    ) {
        let delta: Vec<f64> = (0..sigma.len()).map(|i| delta_scale * (1.0 + (i % 3) as f64 * 0.25)).collect();
        let w = compute_weights(&sigma, &delta).unwrap();
        prop_assert_eq!(w.transmittance[0], 1.0);
        prop_assert!(w.weights.iter().all(|v| *v >= 0.0 && v.is_finite()));
        let total = w.opacity() + w.final_transmittance();
        prop_assert!((total - 1.0).abs() <= 1e-6, "sum {}", total);
        for i in 0..sigma.len() {
            let a = (sigma[i] * delta[i]).min(MAX_OPTICAL_DEPTH);
            prop_assert!((w.transmittance[i + 1] - w.transmittance[i] * (-a).exp()).abs() <= 1e-15);
        }
    }

    #[test]
    fn transmittance_is_nonincreasing(sigma in prop::collection::vec(0.0f64..1e4, 1..64)) {
        let w = compute_weights(&sigma, &vec![0.01; sigma.len()]).unwrap();
        prop_assert!(w.transmittance.windows(2).all(|p| p[1] <= p[0]));
    }

    #[test]
    fn single_precision_conserves(sigma in prop::collection::vec(0.0f32..100.0, 1..64)) {
        let w = compute_weights(&sigma, &vec![0.03f32; sigma.len()]).unwrap();
        prop_assert!((w.opacity() + w.final_transmittance() - 1.0).abs() <= 1e-5);
    }
}

#[test]
fn opaque_slab_renders_its_albedo() {
    // 64 samples over [0, 2]; the back half is an opaque slab of one color.
    let n = 64;
    let delta = vec![2.0 / n as f64; n];
    let sigma: Vec<f64> = (0..n).map(|i| if i >= n / 2 { 50.0 } else { 0.0 }).collect();
    let albedo = [0.8, 0.3, 0.55];
    let w = compute_weights(&sigma, &delta).unwrap();
    let c: Vec<f64> = (0..3)
        .map(|k| w.weights.iter().map(|wi| wi * albedo[k]).sum())
        .collect();
    for k in 0..3 {
        assert!((c[k] - albedo[k]).abs() < 1e-2);
    }
}

fn random_field(seed: u64) -> Field<f64> {
    let cfg = FieldConfig {
        density_bias_init: -1.0,
        language_init_scale: 1.0,
        geometry_init_scale: 1.0,
        ..Default::default()
    };
    Field::init(Aabb::cube(1.0), &cfg, 8, seed).unwrap()
}

#[test]
fn rendered_embedding_norm_is_bounded_by_total_weight() {
    let field = random_field(3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    for _ in 0..10_000 {
        let eye = [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0), 2.5];
        let target = [rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5)];
        let cam = cam(eye, target);
        let ray = cam.pixel_ray(rng.gen_range(0..8), rng.gen_range(0..8));
        let Some(s) = bounded_samples::<f64, _>(&ray, &field.bounds, 32, Some(&mut rng)) else {
            continue;
        };
        let set = evaluate_samples(&field, s, 0.0);
        let px = render_embedding(&set, &field);
        let n = px.embedding_raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(n <= px.opacity + 1e-12, "norm {n} > weight {}", px.opacity);
        checked += 1;
    }
    assert!(checked > 5000);
}

#[test]
fn white_background_adds_final_transmittance() {
    let field = random_field(5);
    let cam = cam([0.0, -3.0, 0.5], [0.0; 3]);
    let s = bounded_samples::<f64, ChaCha8Rng>(&cam.pixel_ray(4, 4), &field.bounds, 48, None).unwrap();
    let set = evaluate_samples(&field, s, 0.0);
    let black = render_rgb(&set, Background::Black);
    let white = render_rgb(&set, Background::White);
    let t = set.weights.final_transmittance();
    for k in 0..3 {
        assert!((white[k] - black[k] - t).abs() < 1e-12);
    }
}
