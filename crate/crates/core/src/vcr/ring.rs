//! Ring of refinement views around the subject and its neighbour structure.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splat::Camera;

pub const MAIN_AZIMUTHS: [f64; 4] = [0.0, 90.0, 180.0, 270.0];
pub const DEFAULT_RING_SIZE: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRole {
    Main,
    Key,
    Intermediate,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingView {
    pub azimuth: f64,
    pub role: ViewRole,
}

/// Shortest angular distance between two azimuths, in degrees.
pub fn arc(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// `(η_l, η_r)` for a view at `phi` between guides at `phi_l` and `phi_r`,
/// with `η_l = 1 − arc(φ, φ_l) / arc(φ_l, φ_r)`. Coincident guides give `(1, 0)`.
pub fn relative_distance(phi: f64, phi_l: f64, phi_r: f64) -> (f64, f64) {
    let span = arc(phi_l, phi_r);
    if span == 0.0 {
        return (1.0, 0.0);
    }
    let dist = (arc(phi, phi_l) / span).clamp(0.0, 1.0);
    (1.0 - dist, dist)
}

/// How a view is refined: against all main views, one main view, or two guides.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Guidance {
    Main,
    Key { main: usize },
    Intermediate { left: usize, right: usize, eta_left: f64, eta_right: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ViewRing {
    pub views: Vec<RingView>,
}

impl Default for ViewRing {
    fn default() -> Self {
        Self::standard(DEFAULT_RING_SIZE).expect("default ring is valid")
    }
}

impl ViewRing {
    pub fn new(views: Vec<RingView>) -> Result<Self> {
        let ring = Self { views };
        ring.validate()?;
        Ok(ring)
    }

    /// `n` evenly spaced views; multiples of 90° are main views, the other
    /// multiples of 45° are key views. `n` must be a multiple of 8.
    pub fn standard(n: usize) -> Result<Self> {
        if n == 0 || n % 8 != 0 {
            return Err(Error::Topology(format!("{n} views cannot hold the main and key azimuths")));
        }
        let views = (0..n)
            .map(|k| {
                let role = if (k * 4) % n == 0 {
                    ViewRole::Main
                } else if (k * 8) % n == 0 {
                    ViewRole::Key
                } else {
                    ViewRole::Intermediate
                };
                RingView {
                    azimuth: 360.0 * k as f64 / n as f64,
                    role,
                }
            })
            .collect();
        Self::new(views)
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn azimuths(&self) -> Vec<f64> {
        self.views.iter().map(|v| v.azimuth).collect()
    }

    pub fn indices(&self, role: ViewRole) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.views[i].role == role).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, v) in self.views.iter().enumerate() {
            if !(0.0..360.0).contains(&v.azimuth) {
                return Err(Error::Topology(format!("azimuth {} outside [0, 360)", v.azimuth)));
            }
            if i > 0 && v.azimuth <= self.views[i - 1].azimuth {
                return Err(Error::Topology(format!("azimuths not strictly increasing at view {i}")));
            }
        }
        let mains: Vec<f64> = self
            .views
            .iter()
            .filter(|v| v.role == ViewRole::Main)
            .map(|v| v.azimuth)
            .collect();
        if mains != MAIN_AZIMUTHS {
            return Err(Error::Topology(format!("main views at {mains:?}, expected {MAIN_AZIMUTHS:?}")));
        }
        for i in 0..self.len() {
            self.guidance(i)?;
        }
        Ok(())
    }

    fn guide_from(&self, i: usize, forward: bool) -> Option<usize> {
        let n = self.len();
        (1..n)
            .map(|s| if forward { (i + s) % n } else { (i + n - s) % n })
            .find(|&j| self.views[j].role != ViewRole::Intermediate)
    }

    /// Nearest main view by arc, ties toward the smaller azimuth.
    fn nearest_main(&self, i: usize) -> Option<usize> {
        let phi = self.views[i].azimuth;
        self.indices(ViewRole::Main).into_iter().min_by(|&a, &b| {
            let (va, vb) = (&self.views[a], &self.views[b]);
            arc(phi, va.azimuth)
                .total_cmp(&arc(phi, vb.azimuth))
                .then(va.azimuth.total_cmp(&vb.azimuth))
        })
    }

    pub fn guidance(&self, i: usize) -> Result<Guidance> {
        let v = self
            .views
            .get(i)
            .ok_or_else(|| Error::Topology(format!("view {i} of {}", self.len())))?;
        match v.role {
            ViewRole::Main => Ok(Guidance::Main),
            ViewRole::Key => self
                .nearest_main(i)
                .map(|main| Guidance::Key { main })
                .ok_or_else(|| Error::Topology("key view without a main view".into())),
            ViewRole::Intermediate => {
                let (left, right) = match (self.guide_from(i, false), self.guide_from(i, true)) {
                    (Some(l), Some(r)) if l != r => (l, r),
                    _ => return Err(Error::Topology(format!("view {i} lacks a guide on each side"))),
                };
                let (eta_left, eta_right) =
                    relative_distance(v.azimuth, self.views[left].azimuth, self.views[right].azimuth);
                Ok(Guidance::Intermediate { left, right, eta_left, eta_right })
            }
        }
    }

    /// Index pairs of ring neighbours, including the wrap-around pair.
    pub fn adjacent_pairs(&self) -> Vec<(usize, usize)> {
        let n = self.len();
        match n {
            0 | 1 => Vec::new(),
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        }
    }
}

/// One view of an on-disk ring: its azimuth, role and image file, plus the
/// optional coverage map and camera a reconstruction needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RingEntry {
    pub azimuth: f64,
    pub role: ViewRole,
    pub image: String,
    /// Coverage map (PGM) of the subject, used to crop reconstruction targets.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub camera: Option<Camera>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RingManifest {
    pub views: Vec<RingEntry>,
}

impl RingManifest {
    pub fn ring(&self) -> Result<ViewRing> {
        ViewRing::new(
            self.views
                .iter()
                .map(|e| RingView {
                    azimuth: e.azimuth,
                    role: e.role,
                })
                .collect(),
        )
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(path, e))
    }
}
