use nalgebra::{Point3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::camera::{Ray, RigidPose};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Sphere,
    Box,
    /// Segment along local z capped by hemispheres.
    Capsule,
}

/// A solid object in the synthetic scene.
///
/// `extent` holds the per-axis half-sizes of the local bounding box. A sphere
/// uses `extent[0]` as radius (all three equal); a capsule has radius
/// `extent[0] == extent[1]` and reaches `extent[2]` along its axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    /// World-from-local.
    pub pose: RigidPose,
    pub extent: [f64; 3],
    pub albedo: [f64; 3],
    pub embedding: Vec<f64>,
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    /// Outward unit normal in world space.
    pub normal: Vector3<f64>,
}

const T_MIN: f64 = 1e-9;

impl Primitive {
    fn capsule_dims(&self) -> (f64, f64) {
        let r = self.extent[0];
        (r, (self.extent[2] - r).max(0.0))
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation)
    }

    /// Radius of a sphere around the center enclosing the primitive.
    pub fn bounding_radius(&self) -> f64 {
        match self.shape {
            Shape::Sphere => self.extent[0],
            Shape::Box => Vector3::from(self.extent).norm(),
            Shape::Capsule => self.extent[2],
        }
    }

    pub fn surface_area(&self) -> f64 {
        use std::f64::consts::PI;
        let e = self.extent;
        match self.shape {
            Shape::Sphere => 4.0 * PI * e[0] * e[0],
            Shape::Box => 8.0 * (e[0] * e[1] + e[1] * e[2] + e[0] * e[2]),
            Shape::Capsule => {
                let (r, h) = self.capsule_dims();
                4.0 * PI * r * r + 4.0 * PI * r * h
            }
        }
    }

    /// Signed distance in world units; negative inside.
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.local_sdf(&self.pose.apply_inverse(p))
    }

    fn local_sdf(&self, p: &Point3<f64>) -> f64 {
        let e = self.extent;
        match self.shape {
            Shape::Sphere => p.coords.norm() - e[0],
            Shape::Box => {
                let q = Vector3::new(p.x.abs() - e[0], p.y.abs() - e[1], p.z.abs() - e[2]);
                let outside = q.map(|v| v.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            Shape::Capsule => {
                let (r, h) = self.capsule_dims();
                let z = p.z.clamp(-h, h);
                (p.coords - Vector3::new(0.0, 0.0, z)).norm() - r
            }
        }
    }

    /// Closest intersection with `t > 0`.
    pub fn intersect(&self, ray: &Ray) -> Option<Hit> {
        let rot = self.pose.rotation_matrix();
        let o = self.pose.apply_inverse(&ray.origin);
        let d = rot.transpose() * ray.dir;
        let local = match self.shape {
            Shape::Sphere => hit_sphere(&o.coords, &d, &Vector3::zeros(), self.extent[0]),
            Shape::Box => hit_box(&o.coords, &d, &self.extent),
            Shape::Capsule => {
                let (r, h) = self.capsule_dims();
                hit_capsule(&o.coords, &d, r, h)
            }
        }?;
        Some(Hit {
            t: local.0,
            normal: rot * local.1,
        })
    }

    /// `n` area-uniform samples on the surface, in world space.
    pub fn sample_surface<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Vec<Point3<f64>> {
        (0..n)
            .map(|_| self.pose.apply(&self.sample_local(rng)))
            .collect()
    }

    fn sample_local<R: Rng + ?Sized>(&self, rng: &mut R) -> Point3<f64> {
        let e = self.extent;
        match self.shape {
            Shape::Sphere => Point3::from(unit_vector(rng) * e[0]),
            Shape::Box => {
                // Face pairs weighted by area; axis i fixed to +-e[i].
                let areas = [e[1] * e[2], e[0] * e[2], e[0] * e[1]];
                let total: f64 = areas.iter().sum();
                let mut pick = rng.gen::<f64>() * total;
                let mut axis = 2;
                for (i, a) in areas.iter().enumerate() {
                    if pick < *a {
                        axis = i;
                        break;
                    }
                    pick -= a;
                }
                let mut p = [0.0; 3];
                for (i, v) in p.iter_mut().enumerate() {
                    *v = if i == axis {
                        if rng.gen::<bool>() {
                            e[i]
                        } else {
                            -e[i]
                        }
                    } else {
                        rng.gen_range(-e[i]..=e[i])
                    };
                }
                Point3::from(p)
            }
            Shape::Capsule => {
                let (r, h) = self.capsule_dims();
                let cyl = 4.0 * std::f64::consts::PI * r * h;
                let caps = 4.0 * std::f64::consts::PI * r * r;
                if rng.gen::<f64>() * (cyl + caps) < cyl {
                    let a = rng.gen::<f64>() * std::f64::consts::TAU;
                    let z = rng.gen_range(-h..=h);
                    Point3::new(r * a.cos(), r * a.sin(), z)
                } else {
                    let u = unit_vector(rng) * r;
                    let shift = if u.z >= 0.0 { h } else { -h };
                    Point3::new(u.x, u.y, u.z + shift)
                }
            }
        }
    }

    /// True when a local-frame surface sample lies on a hemispherical cap.
    pub fn is_on_cap(&self, p: &Point3<f64>) -> bool {
        if self.shape != Shape::Capsule {
            return false;
        }
        let (_, h) = self.capsule_dims();
        self.pose.apply_inverse(p).z.abs() > h
    }
}

pub(crate) fn unit_vector<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        if let Some(u) = v.try_normalize(1e-12) {
            return u;
        }
    }
}

fn hit_sphere(
    o: &Vector3<f64>,
    d: &Vector3<f64>,
    c: &Vector3<f64>,
    r: f64,
) -> Option<(f64, Vector3<f64>)> {
    let oc = o - c;
    let b = oc.dot(d);
    let cc = oc.norm_squared() - r * r;
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let t = if -b - s > T_MIN { -b - s } else { -b + s };
    if t <= T_MIN {
        return None;
    }
    Some((t, (o + d * t - c) / r))
}

fn hit_box(o: &Vector3<f64>, d: &Vector3<f64>, e: &[f64; 3]) -> Option<(f64, Vector3<f64>)> {
    let mut t0 = f64::NEG_INFINITY;
    let mut t1 = f64::INFINITY;
    let mut n0 = Vector3::zeros();
    for i in 0..3 {
        if d[i].abs() < 1e-300 {
            if o[i].abs() > e[i] {
                return None;
            }
            continue;
        }
        let inv = 1.0 / d[i];
        let (mut a, mut b) = ((-e[i] - o[i]) * inv, (e[i] - o[i]) * inv);
        let mut sign = -1.0;
        if a > b {
            std::mem::swap(&mut a, &mut b);
            sign = 1.0;
        }
        if a > t0 {
            t0 = a;
            n0 = Vector3::zeros();
            n0[i] = sign;
        }
        t1 = t1.min(b);
    }
    if t0 > t1 || t1 <= T_MIN {
        return None;
    }
    if t0 > T_MIN {
        Some((t0, n0))
    } else {
        // Origin inside the box; report the exit face.
        let p = o + d * t1;
        let mut n = Vector3::zeros();
        let i = (0..3)
            .max_by(|&a, &b| {
                (p[a].abs() / e[a])
                    .partial_cmp(&(p[b].abs() / e[b]))
                    .unwrap()
            })
            .unwrap();
        n[i] = p[i].signum();
        Some((t1, n))
    }
}

fn hit_capsule(o: &Vector3<f64>, d: &Vector3<f64>, r: f64, h: f64) -> Option<(f64, Vector3<f64>)> {
    let mut best: Option<(f64, Vector3<f64>)> = None;
    let mut consider = |cand: Option<(f64, Vector3<f64>)>| {
        if let Some((t, n)) = cand {
            if best.map_or(true, |(bt, _)| t < bt) {
                best = Some((t, n));
            }
        }
    };
    // Side wall.
    let a = d.x * d.x + d.y * d.y;
    if a > 1e-300 {
        let b = o.x * d.x + o.y * d.y;
        let c = o.x * o.x + o.y * o.y - r * r;
        let disc = b * b - a * c;
        if disc >= 0.0 {
            let s = disc.sqrt();
            for t in [(-b - s) / a, (-b + s) / a] {
                if t > T_MIN {
                    let p = o + d * t;
                    if p.z.abs() <= h {
                        consider(Some((t, Vector3::new(p.x / r, p.y / r, 0.0))));
                    }
                }
            }
        }
    }
    for zc in [h, -h] {
        let c = Vector3::new(0.0, 0.0, zc);
        if let Some((t, n)) = hit_sphere(o, d, &c, r) {
            let p = o + d * t;
            if (zc > 0.0 && p.z >= h) || (zc < 0.0 && p.z <= -h) || h == 0.0 {
                consider(Some((t, n)));
            }
        }
        // The far root of a cap sphere can also be the entry point of the cap.
        let oc = o - c;
        let b = oc.dot(d);
        let disc = b * b - (oc.norm_squared() - r * r);
        if disc >= 0.0 {
            let t = -b + disc.sqrt();
            let p = o + d * t;
            if t > T_MIN && ((zc > 0.0 && p.z >= h) || (zc < 0.0 && p.z <= -h)) {
                consider(Some((t, (p - c) / r)));
            }
        }
    }
    best
}
