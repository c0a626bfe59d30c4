//! Pinhole cameras and orbit rigs.
//!
//! Camera frame follows the computer-vision convention: +x right, +y down,
//! +z forward. Pixel `(col, row)` has its center at `(col + 0.5, row + 0.5)`.

use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

/// Rigid transform stored as a row-major rotation plus translation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RigidPose {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl RigidPose {
    pub fn identity() -> Self {
        Self {
            rotation: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            translation: [0.0; 3],
        }
    }

    pub fn from_parts(rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> Self {
        let mut r = [[0.0; 3]; 3];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = rotation[(i, j)];
            }
        }
        Self {
            rotation: r,
            translation: [translation.x, translation.y, translation.z],
        }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        Matrix3::new(
            r[0][0], r[0][1], r[0][2], r[1][0], r[1][1], r[1][2], r[2][0], r[2][1], r[2][2],
        )
    }

    pub fn translation_vector(&self) -> Vector3<f64> {
        Vector3::from(self.translation)
    }

    /// Maps a local point into the parent frame.
    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation_matrix() * p.coords + self.translation_vector())
    }

    pub fn apply_inverse(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation_matrix().transpose() * (p.coords - self.translation_vector()))
    }

    /// True when the rotation block is orthonormal with determinant +1.
    pub fn is_orthonormal(&self, tol: f64) -> bool {
        let r = self.rotation_matrix();
        let e = r.transpose() * r - Matrix3::identity();
        e.iter().all(|v| v.abs() <= tol) && (r.determinant() - 1.0).abs() <= tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Point3<f64>,
    /// Unit length.
    pub dir: Vector3<f64>,
}

impl Ray {
    pub fn at(&self, t: f64) -> Point3<f64> {
        self.origin + self.dir * t
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    /// World-from-camera transform.
    pub pose: RigidPose,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    /// Camera at `eye` looking at `target`; `up` is the approximate world up.
    pub fn look_at(
        eye: [f64; 3],
        target: [f64; 3],
        up: [f64; 3],
        intrinsics: Intrinsics,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let eye = Vector3::from(eye);
        let forward = Vector3::from(target) - eye;
        let forward = forward
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Input("camera eye coincides with target".into()))?;
        let right = forward
            .cross(&Vector3::from(up))
            .try_normalize(1e-12)
            .ok_or_else(|| Error::Input("camera up is parallel to view direction".into()))?;
        // +y points down in image space.
        let down = forward.cross(&right);
        let rot = Matrix3::from_columns(&[right, down, forward]);
        let cam = Self {
            intrinsics,
            pose: RigidPose::from_parts(&rot, &eye),
            width,
            height,
        };
        cam.validate()?;
        Ok(cam)
    }

    pub fn validate(&self) -> Result<()> {
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0 && k.fx.is_finite() && k.fy.is_finite()) {
            return Err(Error::Input(format!(
                "focal lengths must be positive, got ({}, {})",
                k.fx, k.fy
            )));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::Input("camera resolution must be nonzero".into()));
        }
        if !self.pose.is_orthonormal(1e-9) {
            return Err(Error::Input("camera rotation is not orthonormal".into()));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn center(&self) -> Point3<f64> {
        Point3::from(self.pose.translation)
    }

    /// Ray through continuous image coordinates `(u, v)`.
    pub fn ray_through(&self, u: f64, v: f64) -> Ray {
        let k = &self.intrinsics;
        let d_cam = Vector3::new((u - k.cx) / k.fx, (v - k.cy) / k.fy, 1.0);
        let dir = (self.pose.rotation_matrix() * d_cam).normalize();
        Ray {
            origin: self.center(),
            dir,
        }
    }

    /// Ray through the center of pixel `(col, row)`.
    pub fn pixel_ray(&self, col: usize, row: usize) -> Ray {
        self.ray_through(col as f64 + 0.5, row as f64 + 0.5)
    }

    /// Camera-frame coordinates of a world point.
    pub fn to_camera(&self, p: &Point3<f64>) -> Point3<f64> {
        self.pose.apply_inverse(p)
    }

    /// Image coordinates and depth of a world point in front of the camera.
    pub fn project(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        if c.z <= 1e-9 {
            return None;
        }
        let k = &self.intrinsics;
        Some((k.fx * c.x / c.z + k.cx, k.fy * c.y / c.z + k.cy, c.z))
    }
}

/// Cameras on a sphere around a target, all looking inward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RigConfig {
    pub num_views: usize,
    pub width: usize,
    pub height: usize,
    pub distance: f64,
    pub fov_deg: f64,
    pub elevation_min_deg: f64,
    pub elevation_max_deg: f64,
    /// Rotates the whole rig about the world z axis.
    pub azimuth_offset_deg: f64,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            num_views: 24,
            width: 64,
            height: 64,
            distance: 3.2,
            fov_deg: 50.0,
            elevation_min_deg: -20.0,
            elevation_max_deg: 70.0,
            azimuth_offset_deg: 0.0,
        }
    }
}

pub fn orbit_rig(cfg: &RigConfig, target: [f64; 3]) -> Result<Vec<Camera>> {
    if cfg.num_views == 0 {
        return Err(Error::Input("rig needs at least one view".into()));
    }
    let f = 0.5 * cfg.width as f64 / (0.5 * cfg.fov_deg.to_radians()).tan();
    let intr = Intrinsics {
        fx: f,
        fy: f,
        cx: 0.5 * cfg.width as f64,
        cy: 0.5 * cfg.height as f64,
    };
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let (lo, hi) = (
        cfg.elevation_min_deg.to_radians().sin(),
        cfg.elevation_max_deg.to_radians().sin(),
    );
    (0..cfg.num_views)
        .map(|i| {
            // Fibonacci spiral restricted to an elevation band.
            let s = lo + (hi - lo) * (i as f64 + 0.5) / cfg.num_views as f64;
            let elev = s.asin();
            let az = golden * i as f64 + cfg.azimuth_offset_deg.to_radians();
            let eye = [
                target[0] + cfg.distance * elev.cos() * az.cos(),
                target[1] + cfg.distance * elev.cos() * az.sin(),
                target[2] + cfg.distance * elev.sin(),
            ];
            Camera::look_at(eye, target, [0.0, 0.0, 1.0], intr, cfg.width, cfg.height)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cam() -> Camera {
        Camera::look_at(
            [0.0, -3.0, 0.0],
            [0.0; 3],
            [0.0, 0.0, 1.0],
            Intrinsics {
                fx: 50.0,
                fy: 50.0,
                cx: 16.0,
                cy: 16.0,
            },
            32,
            32,
        )
        .unwrap()
    }

    #[test]
    fn center_ray_hits_target() {
        let c = cam();
        let r = c.ray_through(16.0, 16.0);
        let p = r.at(3.0);
        assert!(p.coords.norm() < 1e-12);
    }

    #[test]
    fn project_inverts_ray() {
        let c = cam();
        let r = c.ray_through(3.25, 27.5);
        let (u, v, _) = c.project(&r.at(2.0)).unwrap();
        assert!((u - 3.25).abs() < 1e-9 && (v - 27.5).abs() < 1e-9);
    }

    #[test]
    fn image_up_is_world_up() {
        let c = cam();
        // A point above the target projects to a smaller row.
        let (_, v, _) = c.project(&Point3::new(0.0, 0.0, 0.5)).unwrap();
        assert!(v < 16.0);
    }

    #[test]
    fn invalid_focal_rejected() {
        let mut c = cam();
        c.intrinsics.fx = 0.0;
        assert!(matches!(c.validate(), Err(Error::Input(_))));
    }

    #[test]
    fn rig_poses_are_orthonormal() {
        let rig = orbit_rig(&RigConfig::default(), [0.0; 3]).unwrap();
        assert_eq!(rig.len(), 24);
        for c in rig {
            assert!(c.pose.is_orthonormal(1e-12));
            assert!((c.center().coords.norm() - 3.2).abs() < 1e-12);
        }
    }
}
