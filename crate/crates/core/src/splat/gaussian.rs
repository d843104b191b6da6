use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::{Error, Result};

/// Logits are kept inside this band so `sigmoid` stays invertible and finite.
const LOGIT_LIMIT: f64 = 40.0;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[inline]
pub fn inverse_sigmoid(p: f64) -> f64 {
    if p <= 0.0 {
        -LOGIT_LIMIT
    } else if p >= 1.0 {
        LOGIT_LIMIT
    } else {
        (p / (1.0 - p)).ln().clamp(-LOGIT_LIMIT, LOGIT_LIMIT)
    }
}

/// One anisotropic splat in its optimizer parameterization.
///
/// Scale is stored as a log, opacity as a logit and rotation as a `(w, x, y, z)`
/// quaternion that is renormalized after every update, so the reconstructed
/// covariance `R diag(scale²) Rᵀ` is positive definite by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Gaussian3D {
    pub center: Vector3<f64>,
    pub log_scale: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub opacity_logit: f64,
    pub color: Vector3<f64>,
}

impl Gaussian3D {
    pub fn new(center: Vector3<f64>, scale: Vector3<f64>, opacity: f64, color: Vector3<f64>) -> Self {
        Self {
            center,
            log_scale: scale.map(f64::ln),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity_logit: inverse_sigmoid(opacity),
            color,
        }
    }

    pub fn isotropic(center: Vector3<f64>, scale: f64, opacity: f64, color: Vector3<f64>) -> Self {
        Self::new(center, Vector3::repeat(scale), opacity, color)
    }

    pub fn with_rotation(mut self, q: Vector4<f64>) -> Self {
        self.rotation = q;
        self.normalize_rotation();
        self
    }

    pub fn scale(&self) -> Vector3<f64> {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn set_opacity(&mut self, opacity: f64) {
        self.opacity_logit = inverse_sigmoid(opacity);
    }

    pub fn max_scale(&self) -> f64 {
        self.scale().max()
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        quat_to_matrix(&unit(&self.rotation))
    }

    /// `Σ = R diag(s²) Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let l = self.rotation_matrix() * Matrix3::from_diagonal(&self.scale());
        l * l.transpose()
    }

    pub fn normalize_rotation(&mut self) {
        let n = self.rotation.norm();
        if n > 0.0 && n.is_finite() {
            self.rotation /= n;
        } else {
            self.rotation = Vector4::new(1.0, 0.0, 0.0, 0.0);
        }
    }

    /// Re-projects every attribute onto its valid domain after a raw update.
    pub fn project_constraints(&mut self) {
        self.normalize_rotation();
        self.opacity_logit = self.opacity_logit.clamp(-LOGIT_LIMIT, LOGIT_LIMIT);
        self.color = self.color.map(|c| c.clamp(0.0, 1.0));
    }

    pub fn is_finite(&self) -> bool {
        self.center.iter().all(|v| v.is_finite())
            && self.log_scale.iter().all(|v| v.is_finite())
            && self.rotation.iter().all(|v| v.is_finite())
            && self.opacity_logit.is_finite()
            && self.color.iter().all(|v| v.is_finite())
    }
}

pub(crate) fn unit(q: &Vector4<f64>) -> Vector4<f64> {
    let n = q.norm();
    if n > 0.0 {
        q / n
    } else {
        Vector4::new(1.0, 0.0, 0.0, 0.0)
    }
}

/// Rotation matrix of a unit quaternion `(w, x, y, z)`.
pub(crate) fn quat_to_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Pulls a gradient on the rotation matrix back to the raw (unnormalized)
/// quaternion, including the normalization step.
pub(crate) fn quat_matrix_backward(q_raw: &Vector4<f64>, d_rot: &Matrix3<f64>) -> Vector4<f64> {
    let q = unit(q_raw);
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let dw = Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0) * 2.0;
    let dx = Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x) * 2.0;
    let dy = Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y) * 2.0;
    let dz = Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0) * 2.0;
    let g_unit = Vector4::new(
        d_rot.component_mul(&dw).sum(),
        d_rot.component_mul(&dx).sum(),
        d_rot.component_mul(&dy).sum(),
        d_rot.component_mul(&dz).sum(),
    );
    let n = q_raw.norm();
    (g_unit - q * q.dot(&g_unit)) / n
}

/// Ordered splats plus the per-splat bookkeeping that densification reads.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GaussianCloud {
    gaussians: Vec<Gaussian3D>,
    created_at: Vec<u64>,
    grad_accum: Vec<f64>,
    grad_count: Vec<u32>,
}

impl GaussianCloud {
    pub fn new(gaussians: Vec<Gaussian3D>) -> Result<Self> {
        if gaussians.is_empty() {
            return Err(Error::Init("a cloud needs at least one gaussian".into()));
        }
        Ok(Self::with_step(gaussians, 0))
    }

    pub(crate) fn with_step(gaussians: Vec<Gaussian3D>, step: u64) -> Self {
        let n = gaussians.len();
        Self {
            gaussians,
            created_at: vec![step; n],
            grad_accum: vec![0.0; n],
            grad_count: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.gaussians.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gaussians.is_empty()
    }

    pub fn gaussians(&self) -> &[Gaussian3D] {
        &self.gaussians
    }

    pub fn gaussians_mut(&mut self) -> &mut [Gaussian3D] {
        &mut self.gaussians
    }

    pub fn get(&self, i: usize) -> &Gaussian3D {
        &self.gaussians[i]
    }

    pub fn created_at(&self) -> &[u64] {
        &self.created_at
    }

    /// Mean screen-space positional gradient magnitude since the last reset.
    pub fn mean_position_grad(&self) -> Vec<f64> {
        self.grad_accum
            .iter()
            .zip(&self.grad_count)
            .map(|(&a, &c)| if c == 0 { 0.0 } else { a / c as f64 })
            .collect()
    }

    pub fn has_grad_stats(&self) -> bool {
        self.grad_count.iter().any(|&c| c > 0)
    }

    pub(crate) fn accumulate_position_grad(&mut self, magnitudes: &[Option<f64>]) {
        for (i, m) in magnitudes.iter().enumerate() {
            if let Some(m) = m {
                self.grad_accum[i] += m;
                self.grad_count[i] += 1;
            }
        }
    }

    /// Overwrites the accumulated statistics; used by tests and tools that build
    /// synthetic densification fixtures.
    pub fn set_position_grad_stats(&mut self, mean: &[f64]) -> Result<()> {
        if mean.len() != self.len() {
            return Err(Error::Shape(format!(
                "{} gradient stats for {} gaussians",
                mean.len(),
                self.len()
            )));
        }
        self.grad_accum.copy_from_slice(mean);
        self.grad_count.iter_mut().for_each(|c| *c = 1);
        Ok(())
    }

    pub fn reset_grad_stats(&mut self) {
        self.grad_accum.iter_mut().for_each(|v| *v = 0.0);
        self.grad_count.iter_mut().for_each(|v| *v = 0);
    }

    pub(crate) fn replace(&mut self, gaussians: Vec<Gaussian3D>, created_at: Vec<u64>) {
        debug_assert_eq!(gaussians.len(), created_at.len());
        let n = gaussians.len();
        self.gaussians = gaussians;
        self.created_at = created_at;
        self.grad_accum = vec![0.0; n];
        self.grad_count = vec![0; n];
    }

    pub fn is_finite(&self) -> bool {
        self.gaussians.iter().all(Gaussian3D::is_finite)
    }

    pub fn project_constraints(&mut self) {
        self.gaussians.iter_mut().for_each(Gaussian3D::project_constraints);
    }

    /// Axis-aligned bounds of the centers.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for g in &self.gaussians {
            lo = lo.inf(&g.center);
            hi = hi.sup(&g.center);
        }
        (lo, hi)
    }
}
