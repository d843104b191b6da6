use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Projection {
    /// Pinhole camera with focal length in pixels.
    Perspective { focal: f64 },
    /// Parallel projection; `pixels_per_unit` maps world units to pixels.
    Orthographic { pixels_per_unit: f64 },
}

/// Orbit camera looking at `target`.
///
/// Azimuth 0 faces the subject's front (the subject looks down +z with +y up);
/// increasing azimuth swings the camera toward the subject's right side, so at
/// 90° the camera sits on -x.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Camera {
    pub azimuth: f64,
    pub elevation: f64,
    pub radius: f64,
    pub width: usize,
    pub height: usize,
    pub projection: Projection,
    #[serde(default)]
    pub target: [f64; 3],
}

pub const NEAR_PLANE: f64 = 0.01;

impl Camera {
    pub fn perspective(azimuth: f64, elevation: f64, radius: f64, size: usize, focal: f64) -> Self {
        Self {
            azimuth: normalize_azimuth(azimuth),
            elevation,
            radius,
            width: size,
            height: size,
            projection: Projection::Perspective { focal },
            target: [0.0; 3],
        }
    }

    pub fn orthographic(azimuth: f64, elevation: f64, radius: f64, size: usize, pixels_per_unit: f64) -> Self {
        Self {
            projection: Projection::Orthographic { pixels_per_unit },
            ..Self::perspective(azimuth, elevation, radius, size, 1.0)
        }
    }

    pub fn looking_at(mut self, target: Vector3<f64>) -> Self {
        self.target = [target.x, target.y, target.z];
        self
    }

    pub fn with_resolution(mut self, width: usize, height: usize) -> Self {
        self.width = width;
        self.height = height;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Param(format!(
                "camera resolution {}x{}",
                self.width, self.height
            )));
        }
        if !(self.radius > 0.0) {
            return Err(Error::Param(format!("camera radius {}", self.radius)));
        }
        match self.projection {
            Projection::Perspective { focal } if !(focal > 0.0) => {
                Err(Error::Param(format!("focal length {focal}")))
            }
            Projection::Orthographic { pixels_per_unit } if !(pixels_per_unit > 0.0) => {
                Err(Error::Param(format!("pixel scale {pixels_per_unit}")))
            }
            _ => Ok(()),
        }
    }

    pub fn target(&self) -> Vector3<f64> {
        Vector3::from(self.target)
    }

    pub fn position(&self) -> Vector3<f64> {
        let (az, el) = (self.azimuth.to_radians(), self.elevation.to_radians());
        self.target()
            + self.radius * Vector3::new(-el.cos() * az.sin(), el.sin(), el.cos() * az.cos())
    }

    /// World→camera rotation. Rows are image-right, image-down and viewing direction.
    pub fn world_to_camera(&self) -> Matrix3<f64> {
        let forward = (self.target() - self.position()).normalize();
        let mut right = forward.cross(&Vector3::y());
        if right.norm() < 1e-9 {
            // Looking straight up or down: fall back to the orbit's tangent.
            let az = self.azimuth.to_radians();
            right = Vector3::new(az.cos(), 0.0, az.sin());
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        Matrix3::from_rows(&[right.transpose(), down.transpose(), forward.transpose()])
    }

    pub fn principal_point(&self) -> (f64, f64) {
        (self.width as f64 / 2.0, self.height as f64 / 2.0)
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }
}

pub fn normalize_azimuth(az: f64) -> f64 {
    let a = az.rem_euclid(360.0);
    if a >= 360.0 {
        0.0
    } else {
        a
    }
}
