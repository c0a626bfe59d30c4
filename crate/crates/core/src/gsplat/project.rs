use crate::scalar::Real;
use crate::scene::Camera;

/// Splats closer than this (camera-frame z) are culled.
pub const NEAR_PLANE: f64 = 0.01;
/// Added to both diagonal entries of every projected covariance, in px^2.
pub const SIGMA2D_REGULARIZER: f64 = 0.3;

/// Camera in the splat scalar type.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CameraT<T> {
    /// World-to-camera rotation.
    pub w: [[T; 3]; 3],
    pub center: [T; 3],
    pub fx: T,
    pub fy: T,
    pub cx: T,
    pub cy: T,
}

impl<T: Real> CameraT<T> {
    pub fn new(cam: &Camera) -> Self {
        let r = cam.pose.rotation;
        Self {
            w: std::array::from_fn(|i| std::array::from_fn(|j| T::of(r[j][i]))),
            center: cam.pose.translation.map(T::of),
            fx: T::of(cam.intrinsics.fx),
            fy: T::of(cam.intrinsics.fy),
            cx: T::of(cam.intrinsics.cx),
            cy: T::of(cam.intrinsics.cy),
        }
    }

    pub fn to_camera(&self, p: &[T; 3]) -> [T; 3] {
        let d = [p[0] - self.center[0], p[1] - self.center[1], p[2] - self.center[2]];
        std::array::from_fn(|i| self.w[i][0] * d[0] + self.w[i][1] * d[1] + self.w[i][2] * d[2])
    }
}

/// Rotation matrix of `q / |q|`, `q = (w, x, y, z)`.
pub fn quat_to_matrix<T: Real>(q: &[T; 4]) -> [[T; 3]; 3] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    let one = T::one();
    let two = T::of(2.0);
    [
        [one - two * (y * y + z * z), two * (x * y - w * z), two * (x * z + w * y)],
        [two * (x * y + w * z), one - two * (x * x + z * z), two * (y * z - w * x)],
        [two * (x * z - w * y), two * (y * z + w * x), one - two * (x * x + y * y)],
    ]
}

/// A splat on the image plane.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected<T> {
    pub mean: [T; 2],
    /// Covariance `[a, b, c]` of `[[a, b], [b, c]]`, regularized.
    pub cov: [T; 3],
    /// Inverse covariance in the same packing.
    pub conic: [T; 3],
    /// Camera-frame z.
    pub depth: T,
    /// Three standard deviations along the major axis, in px.
    pub radius: T,
    /// `J W`, the linear map from world offsets to image offsets.
    pub jw: [[T; 3]; 2],
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection<T> {
    Visible(Projected<T>),
    /// Behind or too close to the camera.
    Culled,
    /// Covariance not invertible after regularization.
    Singular,
}

/// `R diag(s)`; the world covariance is its outer product.
pub(crate) fn scale_rotation<T: Real>(rotation: &[T; 4], log_scale: &[T; 3]) -> [[T; 3]; 3] {
    let r = quat_to_matrix(rotation);
    let s = log_scale.map(|v| v.exp());
    std::array::from_fn(|i| std::array::from_fn(|k| r[i][k] * s[k]))
}

/// Local affine projection of a 3D Gaussian.
pub fn project_gaussian<T: Real>(
    position: &[T; 3],
    rotation: &[T; 4],
    log_scale: &[T; 3],
    camera: &Camera,
) -> Projection<T> {
    project_with(position, rotation, log_scale, &CameraT::new(camera))
}

pub(crate) fn project_with<T: Real>(
    position: &[T; 3],
    rotation: &[T; 4],
    log_scale: &[T; 3],
    cam: &CameraT<T>,
) -> Projection<T> {
    let pc = cam.to_camera(position);
    let z = pc[2];
    if !(z > T::of(NEAR_PLANE)) {
        return Projection::Culled;
    }
    let iz = T::one() / z;
    let j = [
        [cam.fx * iz, T::zero(), -cam.fx * pc[0] * iz * iz],
        [T::zero(), cam.fy * iz, -cam.fy * pc[1] * iz * iz],
    ];
    let jw: [[T; 3]; 2] = std::array::from_fn(|r| {
        std::array::from_fn(|c| j[r][0] * cam.w[0][c] + j[r][1] * cam.w[1][c] + j[r][2] * cam.w[2][c])
    });
    let l = scale_rotation(rotation, log_scale);
    // (JW L)(JW L)^T
    let ml: [[T; 3]; 2] = std::array::from_fn(|r| {
        std::array::from_fn(|c| jw[r][0] * l[0][c] + jw[r][1] * l[1][c] + jw[r][2] * l[2][c])
    });
    let reg = T::of(SIGMA2D_REGULARIZER);
    let a = ml[0][0] * ml[0][0] + ml[0][1] * ml[0][1] + ml[0][2] * ml[0][2] + reg;
    let b = ml[0][0] * ml[1][0] + ml[0][1] * ml[1][1] + ml[0][2] * ml[1][2];
    let c = ml[1][0] * ml[1][0] + ml[1][1] * ml[1][1] + ml[1][2] * ml[1][2] + reg;
    let det = a * c - b * b;
    if !(det > T::zero()) || !det.is_finite() {
        return Projection::Singular;
    }
    let mid = T::of(0.5) * (a + c);
    let lambda = mid + (mid * mid - det).max(T::zero()).sqrt();
    Projection::Visible(Projected {
        mean: [cam.fx * pc[0] * iz + cam.cx, cam.fy * pc[1] * iz + cam.cy],
        cov: [a, b, c],
        conic: [c / det, -b / det, a / det],
        depth: z,
        radius: T::of(3.0) * lambda.sqrt(),
        jw,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Intrinsics;

    fn camera() -> Camera {
        Camera::look_at(
            [0.0, 0.0, -4.0],
            [0.0; 3],
            [0.0, -1.0, 0.0],
            Intrinsics {
                fx: 100.0,
                fy: 100.0,
                cx: 32.0,
                cy: 32.0,
            },
            64,
            64,
        )
        .unwrap()
    }

    fn visible(p: Projection<f64>) -> Projected<f64> {
        match p {
            Projection::Visible(v) => v,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn on_axis_isotropic() {
        let s: f64 = 0.1;
        let p = visible(project_gaussian(&[0.0; 3], &[1.0, 0.0, 0.0, 0.0], &[s.ln(); 3], &camera()));
        let expect = (100.0 * s / 4.0).powi(2) + SIGMA2D_REGULARIZER;
        assert!((p.cov[0] - expect).abs() < 1e-9);
        assert!((p.cov[2] - expect).abs() < 1e-9);
        assert!(p.cov[1].abs() < 1e-12);
        assert!((p.mean[0] - 32.0).abs() < 1e-12 && (p.mean[1] - 32.0).abs() < 1e-12);
    }

    #[test]
    fn rotation_does_not_change_isotropic() {
        let ls = [0.2f64.ln(); 3];
        let a = visible(project_gaussian(&[0.1, 0.2, 0.3], &[1.0, 0.0, 0.0, 0.0], &ls, &camera()));
        let b = visible(project_gaussian(&[0.1, 0.2, 0.3], &[0.3, -0.5, 0.7, 0.2], &ls, &camera()));
        for k in 0..3 {
            assert!((a.cov[k] - b.cov[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn doubling_depth_halves_sigma() {
        let ls = [0.05f64.ln(); 3];
        let cam = camera();
        let near = visible(project_gaussian(&[0.0, 0.0, 0.0], &[1.0, 0.0, 0.0, 0.0], &ls, &cam));
        let far = visible(project_gaussian(&[0.0, 0.0, 4.0], &[1.0, 0.0, 0.0, 0.0], &ls, &cam));
        let sd = |p: &Projected<f64>| (p.cov[0] - SIGMA2D_REGULARIZER).sqrt();
        assert!((sd(&near) / sd(&far) - 2.0).abs() < 0.02);
    }

    #[test]
    fn behind_camera_is_culled() {
        let p = project_gaussian::<f64>(&[0.0, 0.0, -5.0], &[1.0, 0.0, 0.0, 0.0], &[0.0; 3], &camera());
        assert_eq!(p, Projection::Culled);
    }

    #[test]
    fn covariance_is_positive_definite() {
        let p = visible(project_gaussian(
            &[0.3, -0.2, 0.5],
            &[0.9, 0.1, -0.3, 0.2],
            &[-3.0, -1.0, -5.0],
            &camera(),
        ));
        assert!(p.cov[0] > 0.0 && p.cov[0] * p.cov[2] - p.cov[1] * p.cov[1] > 0.0);
    }
}
