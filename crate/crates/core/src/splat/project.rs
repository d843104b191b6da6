//! EWA-style projection of 3D Gaussians into image space, and its adjoint.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};

use super::camera::{Camera, Projection, NEAR_PLANE};
use super::gaussian::{quat_matrix_backward, quat_to_matrix, unit, Gaussian3D};

/// Anti-aliasing floor added to every projected covariance, in px².
pub const DEFAULT_BLUR: f64 = 0.3;

#[derive(Clone, Debug, PartialEq)]
pub struct Projected {
    pub mean2d: Vector2<f64>,
    pub cov2d: Matrix2<f64>,
    pub conic: Matrix2<f64>,
    pub depth: f64,
    /// Center in camera coordinates.
    pub(crate) cam_point: Vector3<f64>,
    /// Projection Jacobian at `cam_point`.
    pub(crate) jacobian: Matrix2x3<f64>,
    /// Covariance in camera coordinates, `W Σ Wᵀ`.
    pub(crate) cam_cov: Matrix3<f64>,
}

impl Projected {
    /// Radius in pixels beyond which `exp(-½ dᵀ Σ⁻¹ d) < exp(-cutoff)`.
    pub fn radius(&self, cutoff: f64) -> f64 {
        let (a, b, c) = (self.cov2d[(0, 0)], self.cov2d[(0, 1)], self.cov2d[(1, 1)]);
        let mid = 0.5 * (a + c);
        let lambda_max = mid + (0.25 * (a - c) * (a - c) + b * b).sqrt();
        (2.0 * cutoff * lambda_max).sqrt()
    }
}

pub(crate) fn project_point(cam: &Camera, t: &Vector3<f64>) -> (Vector2<f64>, Matrix2x3<f64>) {
    let (cx, cy) = cam.principal_point();
    match cam.projection {
        Projection::Perspective { focal } => {
            let iz = 1.0 / t.z;
            let mean = Vector2::new(focal * t.x * iz + cx, focal * t.y * iz + cy);
            let j = Matrix2x3::new(
                focal * iz,
                0.0,
                -focal * t.x * iz * iz,
                0.0,
                focal * iz,
                -focal * t.y * iz * iz,
            );
            (mean, j)
        }
        Projection::Orthographic { pixels_per_unit: k } => {
            let mean = Vector2::new(k * t.x + cx, k * t.y + cy);
            (mean, Matrix2x3::new(k, 0.0, 0.0, 0.0, k, 0.0))
        }
    }
}

/// Projects one Gaussian. `None` means it was culled (behind the near plane or
/// numerically degenerate); culling is not an error.
pub fn project_gaussian(g: &Gaussian3D, cam: &Camera, blur: f64) -> Option<Projected> {
    let w = cam.world_to_camera();
    project_with(g, cam, &w, blur)
}

/// Image position of a camera-space point, `None` behind the near plane.
pub fn project_camera_point(cam: &Camera, t: &Vector3<f64>) -> Option<Vector2<f64>> {
    (t.z > NEAR_PLANE).then(|| project_point(cam, t).0)
}

/// Image position of a world-space point.
pub fn project_world_point(cam: &Camera, p: &Vector3<f64>) -> Option<Vector2<f64>> {
    project_camera_point(cam, &(cam.world_to_camera() * (p - cam.position())))
}

pub(crate) fn project_with(
    g: &Gaussian3D,
    cam: &Camera,
    w: &Matrix3<f64>,
    blur: f64,
) -> Option<Projected> {
    let t = w * (g.center - cam.position());
    if !(t.z > NEAR_PLANE) {
        return None;
    }
    let (mean2d, jacobian) = project_point(cam, &t);
    let cam_cov = w * g.covariance() * w.transpose();
    let cov2d = jacobian * cam_cov * jacobian.transpose() + Matrix2::identity() * blur;
    let det = cov2d.determinant();
    if !(det > 0.0) || !det.is_finite() {
        return None;
    }
    let conic = Matrix2::new(cov2d[(1, 1)], -cov2d[(0, 1)], -cov2d[(1, 0)], cov2d[(0, 0)]) / det;
    Some(Projected {
        mean2d,
        cov2d,
        conic,
        depth: t.z,
        cam_point: t,
        jacobian,
        cam_cov,
    })
}

/// Gradients of one Gaussian's geometric parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub(crate) struct GeometryGrad {
    pub center: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: Vector4<f64>,
}

/// Adjoint of [`project_with`]: maps gradients on the 2D mean and the 2D conic
/// back onto center, log-scale and raw quaternion.
pub(crate) fn project_backward(
    g: &Gaussian3D,
    cam: &Camera,
    w: &Matrix3<f64>,
    p: &Projected,
    d_mean: &Vector2<f64>,
    d_conic: &Matrix2<f64>,
) -> GeometryGrad {
    // conic = cov2d⁻¹  ⇒  dL/dcov2d = -conicᵀ · dL/dconic · conicᵀ
    let d_cov2d = -p.conic.transpose() * d_conic * p.conic.transpose();
    let d_cov2d = 0.5 * (d_cov2d + d_cov2d.transpose());

    let j = &p.jacobian;
    let d_jac: Matrix2x3<f64> = 2.0 * d_cov2d * j * p.cam_cov;
    let d_cam_cov = j.transpose() * d_cov2d * j;

    let t = &p.cam_point;
    let mut d_t = j.transpose() * d_mean;
    if let Projection::Perspective { focal } = cam.projection {
        let iz = 1.0 / t.z;
        let iz2 = iz * iz;
        let iz3 = iz2 * iz;
        // J = [[f/z, 0, -f x/z²], [0, f/z, -f y/z²]]
        d_t.x += d_jac[(0, 2)] * (-focal * iz2);
        d_t.y += d_jac[(1, 2)] * (-focal * iz2);
        d_t.z += d_jac[(0, 0)] * (-focal * iz2)
            + d_jac[(1, 1)] * (-focal * iz2)
            + d_jac[(0, 2)] * (2.0 * focal * t.x * iz3)
            + d_jac[(1, 2)] * (2.0 * focal * t.y * iz3);
    }
    let center = w.transpose() * d_t;

    let d_sigma = w.transpose() * d_cam_cov * w;
    let d_sigma = 0.5 * (d_sigma + d_sigma.transpose());
    let rot = quat_to_matrix(&unit(&g.rotation));
    let scale = g.scale();
    let l = rot * Matrix3::from_diagonal(&scale);
    let d_l = 2.0 * d_sigma * l;
    let d_rot = d_l * Matrix3::from_diagonal(&scale);
    let log_scale = Vector3::from_fn(|k, _| {
        let ds = (0..3).map(|i| d_l[(i, k)] * rot[(i, k)]).sum::<f64>();
        ds * scale[k]
    });
    let rotation = quat_matrix_backward(&g.rotation, &d_rot);
    GeometryGrad {
        center,
        log_scale,
        rotation,
    }
}
