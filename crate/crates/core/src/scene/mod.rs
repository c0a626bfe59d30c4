//! Synthetic scenes with a known semantic oracle.
//!
//! Every object carries one fixed unit embedding; the ground-truth embedding
//! of a pixel is the embedding of the front-most object along its ray, or the
//! scene's background embedding when the ray misses everything.

mod camera;
mod dataset;
mod primitive;

pub use camera::{orbit_rig, Camera, Intrinsics, Ray, RigConfig, RigidPose};
pub use dataset::{export_dataset, import_dataset, synthesize, Dataset, DATASET_VERSION};
pub use primitive::{Hit, Primitive, Shape};

use nalgebra::{Point3, Rotation3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Aabb;

/// Fixed directional light (world space, pointing toward the light).
pub const LIGHT_DIR: [f64; 3] = [0.267_261_241_912_424_4, -0.534_522_483_824_848_8, 0.801_783_725_737_273_2];
pub const AMBIENT: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub num_objects: usize,
    pub embedding_dim: usize,
    pub num_canonicals: usize,
    /// Scene bounds are the cube `[-bounds_half, bounds_half]^3`.
    pub bounds_half: f64,
    /// Range of the largest half-size of each object.
    pub min_size: f64,
    pub max_size: f64,
    pub shapes: Vec<Shape>,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            num_objects: 3,
            embedding_dim: 32,
            num_canonicals: 4,
            bounds_half: 1.0,
            min_size: 0.25,
            max_size: 0.4,
            shapes: vec![Shape::Sphere, Shape::Box, Shape::Capsule],
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(1..=32).contains(&self.num_objects) {
            return Err(Error::Config(format!(
                "num_objects must be in 1..=32, got {}",
                self.num_objects
            )));
        }
        if !(4..=512).contains(&self.embedding_dim) {
            return Err(Error::Config(format!(
                "embedding_dim must be in 4..=512, got {}",
                self.embedding_dim
            )));
        }
        if self.num_canonicals == 0 {
            return Err(Error::Config("num_canonicals must be >= 1".into()));
        }
        if self.shapes.is_empty() {
            return Err(Error::Config("shapes must not be empty".into()));
        }
        if !(self.min_size > 0.0 && self.min_size <= self.max_size && self.max_size < self.bounds_half) {
            return Err(Error::Config(
                "sizes must satisfy 0 < min_size <= max_size < bounds_half".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SemanticScene {
    pub objects: Vec<Primitive>,
    pub background_embedding: Vec<f64>,
    pub canonical_embeddings: Vec<Vec<f64>>,
    pub bounds: Aabb,
    pub seed: u64,
    pub config: SceneConfig,
}

/// Object embeddings (and the background) are redrawn until every pairwise
/// dot product is below this.
pub const MAX_EMBEDDING_DOT: f64 = 0.9;
const MAX_DRAWS: usize = 1000;
const MAX_LAYOUTS: usize = 50;

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Draws `count` unit vectors with pairwise dot products below `max_dot`.
/// On failure returns the index that could not be placed.
fn draw_separated(
    rng: &mut ChaCha8Rng,
    count: usize,
    dim: usize,
    max_dot: f64,
    max_draws: usize,
) -> std::result::Result<Vec<Vec<f64>>, usize> {
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(count);
    for i in 0..count {
        let e = (0..max_draws)
            .map(|_| random_unit(rng, dim))
            .find(|e| accepted.iter().all(|a| crate::scalar::dot(a, e) < max_dot))
            .ok_or(i)?;
        accepted.push(e);
    }
    Ok(accepted)
}

/// One random arrangement of primitives, or `None` if some object found no
/// free spot.
fn draw_layout(rng: &mut ChaCha8Rng, config: &SceneConfig) -> Result<Option<Vec<Primitive>>> {
    let gap = 0.05;
    let mut objects: Vec<Primitive> = Vec::with_capacity(config.num_objects);
    for i in 0..config.num_objects {
        let shape = config.shapes[rng.gen_range(0..config.shapes.len())];
        let s = rng.gen_range(config.min_size..=config.max_size);
        let extent = match shape {
            Shape::Sphere => [s; 3],
            Shape::Box => [
                s * rng.gen_range(0.6..=1.0),
                s * rng.gen_range(0.6..=1.0),
                s * rng.gen_range(0.6..=1.0),
            ],
            Shape::Capsule => {
                let r = s * rng.gen_range(0.45..=0.6);
                [r, r, s]
            }
        };
        let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ));
        let rot = Rotation3::from(q);
        let albedo = [
            rng.gen_range(0.25..=1.0),
            rng.gen_range(0.25..=1.0),
            rng.gen_range(0.25..=1.0),
        ];
        let mut prim = Primitive {
            shape,
            pose: RigidPose::identity(),
            extent,
            albedo,
            embedding: Vec::new(),
            label: format!("obj{i}"),
        };
        let br = prim.bounding_radius();
        let room = config.bounds_half - br - gap;
        if room <= 0.0 {
            return Err(Error::Generation(format!(
                "object {i} does not fit inside bounds"
            )));
        }
        let mut placed = false;
        for _ in 0..MAX_DRAWS {
            let c = Vector3::new(
                rng.gen_range(-room..=room),
                rng.gen_range(-room..=room),
                rng.gen_range(-room..=room),
            );
            let clear = objects.iter().all(|o| {
                (o.center().coords - c).norm() > o.bounding_radius() + br + gap
            });
            if clear {
                prim.pose = RigidPose::from_parts(rot.matrix(), &c);
                placed = true;
                break;
            }
        }
        if !placed {
            return Ok(None);
        }
        objects.push(prim);
    }
    Ok(Some(objects))

}

pub fn generate_scene(seed: u64, config: &SceneConfig) -> Result<SemanticScene> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bounds = Aabb::cube(config.bounds_half);

    // Whole layouts are redrawn when an object finds no free spot.
    let mut objects = None;
    for _ in 0..MAX_LAYOUTS {
        if let Some(o) = draw_layout(&mut rng, config)? {
            objects = Some(o);
            break;
        }
    }
    let mut objects = objects.ok_or_else(|| {
        Error::Generation(format!(
            "could not place {} objects without overlap in {MAX_LAYOUTS} layouts",
            config.num_objects
        ))
    })?;

    // Object embeddings first, then the background, all mutually separated.
    let mut accepted = draw_separated(
        &mut rng,
        config.num_objects + 1,
        config.embedding_dim,
        MAX_EMBEDDING_DOT,
        MAX_DRAWS,
    )
    .map_err(|i| {
        Error::Generation(format!(
            "embedding {i}: no draw with pairwise dot < {MAX_EMBEDDING_DOT} after {MAX_DRAWS} \
             draws (dimension {} too small for {} objects?)",
            config.embedding_dim, config.num_objects
        ))
    })?;
    let background_embedding = accepted.pop().expect("background drawn");
    for (o, e) in objects.iter_mut().zip(accepted) {
        o.embedding = e;
    }
    let canonical_embeddings = (0..config.num_canonicals)
        .map(|_| random_unit(&mut rng, config.embedding_dim))
        .collect();

    Ok(SemanticScene {
        objects,
        background_embedding,
        canonical_embeddings,
        bounds,
        seed,
        config: config.clone(),
    })
}

impl SemanticScene {
    pub fn embedding_dim(&self) -> usize {
        self.background_embedding.len()
    }

    /// Closest primitive hit along a ray.
    pub fn trace(&self, ray: &Ray) -> Option<(usize, Hit)> {
        let mut best: Option<(usize, Hit)> = None;
        for (i, o) in self.objects.iter().enumerate() {
            if let Some(h) = o.intersect(ray) {
                if best.map_or(true, |(_, b)| h.t < b.t) {
                    best = Some((i, h));
                }
            }
        }
        best
    }

    /// Ground-truth supervision embedding for a label (`-1` = background).
    pub fn embedding_for_label(&self, label: i32) -> &[f64] {
        if label < 0 {
            &self.background_embedding
        } else {
            &self.objects[label as usize].embedding
        }
    }

    pub fn object(&self, label: usize) -> Result<&Primitive> {
        self.objects
            .get(label)
            .ok_or_else(|| Error::Lookup(format!("no object with label {label}")))
    }

    /// Minimum signed distance to any object.
    pub fn signed_distance(&self, p: &[f64; 3]) -> f64 {
        let p = Point3::from(*p);
        self.objects
            .iter()
            .map(|o| o.signed_distance(&p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Checks the documented invariants; used by tests and dataset import.
    pub fn check_invariants(&self) -> Result<()> {
        let unit = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>().sqrt() - 1.0).abs() <= 1e-9;
        let dim = self.embedding_dim();
        let all = self
            .objects
            .iter()
            .map(|o| o.embedding.as_slice())
            .chain(std::iter::once(self.background_embedding.as_slice()))
            .chain(self.canonical_embeddings.iter().map(|c| c.as_slice()));
        for e in all {
            if e.len() != dim || !unit(e) {
                return Err(Error::Contract("embedding is not unit length".into()));
            }
        }
        for (i, a) in self.objects.iter().enumerate() {
            for b in &self.objects[i + 1..] {
                if crate::scalar::dot(&a.embedding, &b.embedding) >= MAX_EMBEDDING_DOT {
                    return Err(Error::Contract("object embeddings too similar".into()));
                }
            }
            if a.extent.iter().any(|e| *e <= 0.0) || !a.pose.is_orthonormal(1e-9) {
                return Err(Error::Contract(format!("object {i} is degenerate")));
            }
            let c = a.center();
            let r = a.bounding_radius();
            for k in 0..3 {
                if c[k] - r < self.bounds.min[k] || c[k] + r > self.bounds.max[k] {
                    return Err(Error::Contract(format!("object {i} leaves the bounds")));
                }
            }
        }
        Ok(())
    }
}

/// A rendered ground-truth view.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainView {
    pub camera: Camera,
    /// Row-major H x W x 3.
    pub rgb: Vec<f32>,
    /// Row-major H x W object labels, `-1` for background.
    pub labels: Vec<i32>,
    /// Hit distance along the (unit) pixel ray; `inf` on a miss.
    pub depth: Vec<f32>,
}

impl TrainView {
    pub fn pixel_rgb(&self, idx: usize) -> [f32; 3] {
        [self.rgb[3 * idx], self.rgb[3 * idx + 1], self.rgb[3 * idx + 2]]
    }

    /// Boolean mask of pixels showing `label`.
    pub fn mask(&self, label: i32) -> Vec<bool> {
        self.labels.iter().map(|&l| l == label).collect()
    }
}

pub fn shade(albedo: &[f64; 3], normal: &Vector3<f64>) -> [f64; 3] {
    let l = Vector3::from(LIGHT_DIR);
    let s = AMBIENT + (1.0 - AMBIENT) * normal.dot(&l).max(0.0);
    [albedo[0] * s, albedo[1] * s, albedo[2] * s]
}

pub fn render_gt_view(scene: &SemanticScene, camera: &Camera) -> Result<TrainView> {
    camera.validate()?;
    if camera.width < 8 || camera.height < 8 {
        return Err(Error::Input(format!(
            "camera resolution must be at least 8x8, got {}x{}",
            camera.width, camera.height
        )));
    }
    let px: Vec<([f32; 3], i32, f32)> = (0..camera.num_pixels())
        .into_par_iter()
        .map(|idx| {
            let ray = camera.pixel_ray(idx % camera.width, idx / camera.width);
            match scene.trace(&ray) {
                Some((i, hit)) => {
                    let c = shade(&scene.objects[i].albedo, &hit.normal);
                    ([c[0] as f32, c[1] as f32, c[2] as f32], i as i32, hit.t as f32)
                }
                None => ([0.0; 3], -1, f32::INFINITY),
            }
        })
        .collect();
    let mut view = TrainView {
        camera: camera.clone(),
        rgb: Vec::with_capacity(px.len() * 3),
        labels: Vec::with_capacity(px.len()),
        depth: Vec::with_capacity(px.len()),
    };
    for (c, l, d) in px {
        view.rgb.extend_from_slice(&c);
        view.labels.push(l);
        view.depth.push(d);
    }
    Ok(view)
}

pub fn render_views(scene: &SemanticScene, cameras: &[Camera]) -> Result<Vec<TrainView>> {
    cameras.iter().map(|c| render_gt_view(scene, c)).collect()
}

/// `n` area-uniform samples on the surface of object `label`.
pub fn sample_object_surface(
    scene: &SemanticScene,
    label: usize,
    n: usize,
    seed: u64,
) -> Result<Vec<[f64; 3]>> {
    let obj = scene.object(label)?;
    if n == 0 {
        return Err(Error::Input("surface sample count must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (label as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    Ok(obj
        .sample_surface(&mut rng, n)
        .into_iter()
        .map(|p| [p.x, p.y, p.z])
        .collect())
}
