//! View-dependent pose skeletons: facial keypoints are masked according to
//! how far the camera has orbited away from the front, and the result is
//! rasterized into a pose map.
//!
//! Pose maps sample pixel `(i, j)` at the point `(i, j)`, so a skeleton of
//! width `w` mirrors through `x ↦ (w − 1) − x`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::splat::{normalize_azimuth, Camera, CapsuleHumanoid, JOINT_NAMES};

pub const FACE_KEYPOINTS: [&str; 5] = ["nose", "left_eye", "right_eye", "left_ear", "right_ear"];

pub const DISC_RADIUS: f64 = 3.0;
/// Limb pixels lie within this distance of the segment (a 2 px stroke).
pub const LIMB_HALF_WIDTH: f64 = 1.0;

/// Image position and visibility; serialized as `[x, y, visible]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "(f64, f64, bool)", into = "(f64, f64, bool)")]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub visible: bool,
}

impl From<(f64, f64, bool)> for Keypoint {
    fn from((x, y, visible): (f64, f64, bool)) -> Self {
        Self { x, y, visible }
    }
}

impl From<Keypoint> for (f64, f64, bool) {
    fn from(k: Keypoint) -> Self {
        (k.x, k.y, k.visible)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PoseSkeleton {
    pub keypoints: BTreeMap<String, Keypoint>,
}

fn mirror_name(name: &str) -> String {
    if let Some(rest) = name.strip_prefix("left_") {
        format!("right_{rest}")
    } else if let Some(rest) = name.strip_prefix("right_") {
        format!("left_{rest}")
    } else {
        name.to_string()
    }
}

impl PoseSkeleton {
    pub fn validate(&self) -> Result<()> {
        for name in self.keypoints.keys() {
            if !JOINT_NAMES.contains(&name.as_str()) {
                return Err(Error::Schema(format!("unknown keypoint {name:?}")));
            }
        }
        Ok(())
    }

    /// Checks that visible keypoints fall inside a `w × h` pose map.
    pub fn validate_bounds(&self, w: usize, h: usize) -> Result<()> {
        for (name, k) in &self.keypoints {
            if k.visible && !(k.x >= 0.0 && k.y >= 0.0 && k.x <= (w - 1) as f64 && k.y <= (h - 1) as f64) {
                return Err(Error::Schema(format!("{name} at ({}, {}) lies outside {w}×{h}", k.x, k.y)));
            }
        }
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Keypoint> {
        self.keypoints.get(name)
    }

    pub fn visible_count(&self) -> usize {
        self.keypoints.values().filter(|k| k.visible).count()
    }

    /// Projects the humanoid's joints through `cam`. Joints behind the camera
    /// or off the image are marked invisible.
    pub fn from_humanoid(body: &CapsuleHumanoid, cam: &Camera) -> Self {
        let w2c = cam.world_to_camera();
        let eye = cam.position();
        let mut keypoints = BTreeMap::new();
        for name in JOINT_NAMES {
            let Some(p) = body.joints.get(name) else {
                continue;
            };
            let c = w2c * (p - eye);
            let (x, y, ok) = match crate::splat::project::project_camera_point(cam, &c) {
                Some(m) => (m.x - 0.5, m.y - 0.5, true),
                None => (0.0, 0.0, false),
            };
            let inside = ok && x >= 0.0 && y >= 0.0 && x <= (cam.width - 1) as f64 && y <= (cam.height - 1) as f64;
            keypoints.insert(name.to_string(), Keypoint { x, y, visible: inside });
        }
        Self { keypoints }
    }

    /// Left/right swap plus horizontal reflection within a map of width `w`.
    pub fn mirror(&self, w: usize) -> Self {
        let keypoints = self
            .keypoints
            .iter()
            .map(|(n, k)| {
                (
                    mirror_name(n),
                    Keypoint {
                        x: (w - 1) as f64 - k.x,
                        ..*k
                    },
                )
            })
            .collect();
        Self { keypoints }
    }

    fn swap_sides(&self) -> Self {
        let keypoints = self.keypoints.iter().map(|(n, k)| (mirror_name(n), *k)).collect();
        Self { keypoints }
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: PoseSkeleton = serde_json::from_str(&text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Azimuth thresholds (degrees) for masking facial keypoints on the first half
/// of the orbit; the second half mirrors them with left and right swapped.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrimRules {
    pub left_ear: f64,
    pub left_eye: f64,
    pub right_eye: f64,
    pub nose: f64,
    /// Inside `[back_start, 360 − back_start]` only the ears stay visible.
    pub back_start: f64,
}

impl Default for TrimRules {
    fn default() -> Self {
        Self {
            left_ear: 60.0,
            left_eye: 90.0,
            right_eye: 120.0,
            nose: 135.0,
            back_start: 135.0,
        }
    }
}

impl TrimRules {
    /// Facial keypoints masked at azimuth `a ∈ [0, 180]`.
    fn masked_first_half(&self, a: f64) -> Vec<&'static str> {
        if a >= self.back_start {
            return vec!["nose", "left_eye", "right_eye"];
        }
        let mut out = Vec::new();
        if a > self.left_ear {
            out.push("left_ear");
        }
        if a > self.left_eye {
            out.push("left_eye");
        }
        if a > self.right_eye {
            out.push("right_eye");
        }
        if a > self.nose {
            out.push("nose");
        }
        out
    }

    /// Names of the facial keypoints hidden at `azimuth`.
    pub fn masked(&self, azimuth: f64) -> Vec<String> {
        let a = normalize_azimuth(azimuth);
        if a <= 180.0 {
            self.masked_first_half(a).into_iter().map(String::from).collect()
        } else {
            self.masked_first_half(360.0 - a).into_iter().map(mirror_name).collect()
        }
    }
}

/// Masks facial keypoints for the view at `azimuth`; body joints and already
/// hidden keypoints are left as they are.
pub fn trim_skeleton(skeleton: &PoseSkeleton, azimuth: f64, rules: &TrimRules) -> Result<PoseSkeleton> {
    skeleton.validate()?;
    let mut out = skeleton.clone();
    for name in rules.masked(azimuth) {
        if let Some(k) = out.keypoints.get_mut(&name) {
            k.visible = false;
        }
    }
    Ok(out)
}

/// Trimming at `360 − a` equals trimming at `a` with sides swapped; exposed
/// for tests and callers that build mirrored training pairs.
pub fn trim_mirrored(skeleton: &PoseSkeleton, azimuth: f64, rules: &TrimRules) -> Result<PoseSkeleton> {
    Ok(trim_skeleton(&skeleton.swap_sides(), 360.0 - normalize_azimuth(azimuth), rules)?.swap_sides())
}

const LIMBS: [(&str, &str); 17] = [
    ("neck", "nose"),
    ("nose", "left_eye"),
    ("nose", "right_eye"),
    ("left_eye", "left_ear"),
    ("right_eye", "right_ear"),
    ("neck", "left_shoulder"),
    ("neck", "right_shoulder"),
    ("left_shoulder", "left_elbow"),
    ("right_shoulder", "right_elbow"),
    ("left_elbow", "left_wrist"),
    ("right_elbow", "right_wrist"),
    ("neck", "left_hip"),
    ("neck", "right_hip"),
    ("left_hip", "left_knee"),
    ("right_hip", "right_knee"),
    ("left_knee", "left_ankle"),
    ("right_knee", "right_ankle"),
];

/// Color by joint type; mirrored joints share a color.
fn joint_color(name: &str) -> [f64; 3] {
    let base = name.trim_start_matches("left_").trim_start_matches("right_");
    match base {
        "nose" => [1.0, 0.0, 0.0],
        "eye" => [1.0, 0.0, 1.0],
        "ear" => [0.6, 0.0, 1.0],
        "neck" => [1.0, 0.5, 0.0],
        "shoulder" => [1.0, 1.0, 0.0],
        "elbow" => [0.5, 1.0, 0.0],
        "wrist" => [0.0, 1.0, 0.0],
        "hip" => [0.0, 1.0, 1.0],
        "knee" => [0.0, 0.5, 1.0],
        "ankle" => [0.0, 0.0, 1.0],
        _ => [1.0, 1.0, 1.0],
    }
}

fn limb_color(a: &str, b: &str) -> [f64; 3] {
    let (ca, cb) = (joint_color(a), joint_color(b));
    [0.6 * (ca[0] + cb[0]) / 2.0, 0.6 * (ca[1] + cb[1]) / 2.0, 0.6 * (ca[2] + cb[2]) / 2.0]
}

fn point_segment_distance(px: f64, py: f64, a: &Keypoint, b: &Keypoint) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - a.x) * dx + (py - a.y) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    ((px - a.x - t * dx).powi(2) + (py - a.y - t * dy).powi(2)).sqrt()
}

fn stamp(img: &mut Image, color: [f64; 3], x0: f64, x1: f64, y0: f64, y1: f64, inside: impl Fn(f64, f64) -> bool) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let xs = (x0.floor() as i64).max(0)..=(x1.ceil() as i64).min(w - 1);
    for y in (y0.floor() as i64).max(0)..=(y1.ceil() as i64).min(h - 1) {
        for x in xs.clone() {
            if inside(x as f64, y as f64) {
                img.pixel_mut(x as usize, y as usize).copy_from_slice(&color);
            }
        }
    }
}

/// Draws limbs between visible endpoints, then keypoint discs on top.
pub fn rasterize_pose(skeleton: &PoseSkeleton, w: usize, h: usize) -> Result<Image> {
    skeleton.validate()?;
    if w == 0 || h == 0 {
        return Err(Error::Shape(format!("pose map {w}×{h}")));
    }
    let mut img = Image::new(w, h, 3);
    let visible = |n: &str| skeleton.get(n).filter(|k| k.visible);
    for (a, b) in LIMBS {
        let (Some(ka), Some(kb)) = (visible(a), visible(b)) else {
            continue;
        };
        let r = LIMB_HALF_WIDTH;
        stamp(
            &mut img,
            limb_color(a, b),
            ka.x.min(kb.x) - r,
            ka.x.max(kb.x) + r,
            ka.y.min(kb.y) - r,
            ka.y.max(kb.y) + r,
            |x, y| point_segment_distance(x, y, ka, kb) <= r,
        );
    }
    for name in JOINT_NAMES {
        let Some(k) = visible(name) else {
            continue;
        };
        let r = DISC_RADIUS;
        stamp(&mut img, joint_color(name), k.x - r, k.x + r, k.y - r, k.y + r, |x, y| {
            (x - k.x).powi(2) + (y - k.y).powi(2) <= r * r
        });
    }
    Ok(img)
}
