//! A colored reference avatar and the oracle target bank rendered from it.

use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::guidance::{ConditionRole, MockOracle, NoiseSchedule, Prompts, ViewConditions};
use crate::image::Image;
use crate::posecond::TrimRules;
use crate::splat::{init_from_surface, render, Camera, CapsuleHumanoid, GaussianCloud, RenderOptions, SurfaceSource};

pub fn part_color(part: &str) -> [f64; 3] {
    if part == "head" || part == "neck" || part.ends_with("forearm") {
        [0.87, 0.66, 0.54]
    } else if part == "torso" || part.ends_with("upper_arm") {
        [0.20, 0.36, 0.72]
    } else if part.ends_with("thigh") {
        [0.28, 0.22, 0.16]
    } else {
        [0.12, 0.12, 0.14]
    }
}

/// Surface-sampled avatar with per-part colors and high opacity.
pub fn reference_avatar<R: Rng>(body: &CapsuleHumanoid, count: usize, opacity: f64, rng: &mut R) -> Result<GaussianCloud> {
    let mut cloud = init_from_surface(&SurfaceSource::Humanoid(body.clone()), count, rng)?;
    let head = body.head_center();
    for g in cloud.gaussians_mut() {
        let part = body.nearest_part(&g.center);
        let mut c = Vector3::from(part_color(part));
        // Dark hair on the back and top of the head.
        if part == "head" && (g.center.z < 0.02 || g.center.y > head.y + 0.06) {
            c = Vector3::new(0.18, 0.10, 0.06);
        }
        g.color = c;
        g.set_opacity(opacity);
        // Slightly larger splats close the gaps between samples.
        g.log_scale = g.log_scale.map(|l| l + 1.5f64.ln());
    }
    Ok(cloud)
}

/// Camera framing shared by targets and the optimized cloud.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Framing {
    pub size: usize,
    pub radius: f64,
    /// Focal length as a multiple of the image size.
    pub focal_ratio: f64,
    pub target: [f64; 3],
}

impl Default for Framing {
    fn default() -> Self {
        Self {
            size: 64,
            radius: 3.0,
            focal_ratio: 1.25,
            target: [0.0, -0.045, 0.0],
        }
    }
}

impl Framing {
    pub fn camera(&self, azimuth: f64, elevation: f64) -> Camera {
        Camera::perspective(azimuth, elevation, self.radius, self.size, self.focal_ratio * self.size as f64)
            .looking_at(Vector3::from(self.target))
    }

    /// Close-up on the head from the same direction.
    pub fn head_camera(&self, azimuth: f64, elevation: f64, body: &CapsuleHumanoid) -> Camera {
        let mut cam = self.camera(azimuth, elevation).looking_at(body.head_center());
        cam.radius = self.radius * 0.35;
        cam
    }

    /// `n` views evenly spaced in azimuth from 0.
    pub fn orbit(&self, n: usize, elevation: f64) -> Vec<Camera> {
        (0..n).map(|k| self.camera(360.0 * k as f64 / n as f64, elevation)).collect()
    }
}

/// Renders the reference from every camera and registers the result as the
/// target of every condition role of that view.
pub fn build_oracle(
    reference: &GaussianCloud,
    cameras: &[Camera],
    prompts: &Prompts,
    body: Option<&CapsuleHumanoid>,
    rules: &TrimRules,
    background: [f64; 3],
    opts: &RenderOptions,
    noise: NoiseSchedule,
) -> Result<(MockOracle, Vec<ViewConditions>, Vec<BTreeMap<ConditionRole, Image>>)> {
    let mut oracle = MockOracle::new(noise);
    let mut conds = Vec::with_capacity(cameras.len());
    let mut banks = Vec::with_capacity(cameras.len());
    for cam in cameras {
        let target = render(reference, cam, background, opts)?.color;
        let c = ViewConditions::for_camera(prompts, body, rules, cam)?;
        let mut bank = BTreeMap::new();
        for role in ConditionRole::ALL {
            oracle.insert(c.get(role), target.clone());
            bank.insert(role, target.clone());
        }
        conds.push(c);
        banks.push(bank);
    }
    Ok((oracle, conds, banks))
}
