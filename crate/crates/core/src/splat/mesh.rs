//! Triangle meshes, the built-in capsule humanoid, and surface-sampled
//! initialization of a Gaussian cloud.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::Path;

use nalgebra::Vector3;
use rand::Rng;

use super::gaussian::{Gaussian3D, GaussianCloud};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<Vector3<f64>>,
    pub triangles: Vec<[usize; 3]>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, i: usize) -> [Vector3<f64>; 3] {
        let [a, b, c] = self.triangles[i];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, i: usize) -> f64 {
        let [a, b, c] = self.triangle(i);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|i| self.triangle_area(i)).sum()
    }

    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &self.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        (lo, hi)
    }

    pub fn append(&mut self, other: &TriMesh) {
        let base = self.vertices.len();
        self.vertices.extend_from_slice(&other.vertices);
        self.triangles
            .extend(other.triangles.iter().map(|t| [t[0] + base, t[1] + base, t[2] + base]));
    }

    /// Parses `v` and `f` records; other records are ignored. Polygons are fan
    /// triangulated, `v/vt/vn` index forms and negative indices are accepted.
    pub fn parse_obj(text: &str) -> Result<TriMesh> {
        let mut mesh = TriMesh::default();
        for (lineno, line) in text.lines().enumerate() {
            let mut fields = line.split_whitespace();
            match fields.next() {
                Some("v") => {
                    let coords: Vec<f64> = fields
                        .take(3)
                        .map(|f| f.parse::<f64>())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|e| Error::format("obj", format!("line {}: {e}", lineno + 1)))?;
                    if coords.len() != 3 {
                        return Err(Error::format("obj", format!("line {}: short vertex", lineno + 1)));
                    }
                    mesh.vertices.push(Vector3::new(coords[0], coords[1], coords[2]));
                }
                Some("f") => {
                    let n = mesh.vertices.len() as i64;
                    let idx: Vec<usize> = fields
                        .map(|f| {
                            let raw: i64 = f
                                .split('/')
                                .next()
                                .unwrap_or_default()
                                .parse()
                                .map_err(|_| Error::format("obj", format!("line {}: bad index {f:?}", lineno + 1)))?;
                            let i = if raw < 0 { n + raw } else { raw - 1 };
                            if i < 0 || i >= n {
                                return Err(Error::format(
                                    "obj",
                                    format!("line {}: index {raw} out of range", lineno + 1),
                                ));
                            }
                            Ok(i as usize)
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() < 3 {
                        return Err(Error::format("obj", format!("line {}: face with < 3 vertices", lineno + 1)));
                    }
                    for k in 1..idx.len() - 1 {
                        mesh.triangles.push([idx[0], idx[k], idx[k + 1]]);
                    }
                }
                _ => {}
            }
        }
        Ok(mesh)
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_obj(&text)
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            s.push_str(&format!("v {} {} {}\n", v.x, v.y, v.z));
        }
        for t in &self.triangles {
            s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
        }
        s
    }

    /// Area-uniform samples on the surface. Zero-area triangles are never chosen.
    pub fn sample_surface<R: Rng>(&self, count: usize, rng: &mut R) -> Result<Vec<Vector3<f64>>> {
        let mut cdf = Vec::with_capacity(self.triangles.len());
        let mut total = 0.0;
        for i in 0..self.triangles.len() {
            total += self.triangle_area(i);
            cdf.push(total);
        }
        if !(total > 0.0) {
            return Err(Error::Init("mesh has no surface area".into()));
        }
        Ok((0..count)
            .map(|_| {
                let u = rng.random::<f64>() * total;
                let tri = cdf.partition_point(|&c| c <= u).min(cdf.len() - 1);
                let [a, b, c] = self.triangle(tri);
                let r1 = rng.random::<f64>().sqrt();
                let r2 = rng.random::<f64>();
                a * (1.0 - r1) + b * (r1 * (1.0 - r2)) + c * (r1 * r2)
            })
            .collect())
    }
}

/// A capsule: all points within `radius` of the segment `a`–`b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Capsule {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
}

impl Capsule {
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        Self {
            a: center,
            b: center,
            radius,
        }
    }

    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let r = Vector3::repeat(self.radius);
        (self.a.inf(&self.b) - r, self.a.sup(&self.b) + r)
    }

    /// Closed triangulation: two hemispherical caps joined by a cylinder.
    pub fn tessellate(&self, segments: usize, cap_rings: usize) -> TriMesh {
        let axis = self.b - self.a;
        let u = if axis.norm() > 1e-12 {
            axis.normalize()
        } else {
            Vector3::y()
        };
        let helper = if u.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
        let v = u.cross(&helper).normalize();
        let w = u.cross(&v);

        // Rings from the bottom pole to the top pole: (axis point, polar angle).
        let mut rings: Vec<(Vector3<f64>, f64)> = Vec::new();
        for i in 1..=cap_rings {
            rings.push((self.a, PI - 0.5 * PI * i as f64 / cap_rings as f64));
        }
        for i in 0..cap_rings {
            rings.push((self.b, 0.5 * PI - 0.5 * PI * i as f64 / cap_rings as f64));
        }

        let mut mesh = TriMesh::default();
        mesh.vertices.push(self.a - u * self.radius);
        for (center, theta) in &rings {
            for s in 0..segments {
                let phi = 2.0 * PI * s as f64 / segments as f64;
                let dir = u * theta.cos() + (v * phi.cos() + w * phi.sin()) * theta.sin();
                mesh.vertices.push(center + dir * self.radius);
            }
        }
        mesh.vertices.push(self.b + u * self.radius);

        let ring_start = |r: usize| 1 + r * segments;
        for s in 0..segments {
            let s1 = (s + 1) % segments;
            mesh.triangles.push([0, ring_start(0) + s1, ring_start(0) + s]);
        }
        for r in 0..rings.len() - 1 {
            for s in 0..segments {
                let s1 = (s + 1) % segments;
                let (p0, p1) = (ring_start(r) + s, ring_start(r) + s1);
                let (q0, q1) = (ring_start(r + 1) + s, ring_start(r + 1) + s1);
                // The cylinder band collapses for spheres; skip its zero-area faces.
                if (mesh.vertices[p0] - mesh.vertices[q0]).norm() > 1e-12 {
                    mesh.triangles.push([p0, p1, q1]);
                    mesh.triangles.push([p0, q1, q0]);
                }
            }
        }
        let top = mesh.vertices.len() - 1;
        let last = ring_start(rings.len() - 1);
        for s in 0..segments {
            let s1 = (s + 1) % segments;
            mesh.triangles.push([last + s, last + s1, top]);
        }
        mesh
    }
}

/// Names of the skeleton joints the humanoid exposes, in canonical order.
pub const JOINT_NAMES: [&str; 18] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "neck",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Procedural A-pose humanoid built from capsules. Faces +z with +y up; the
/// subject's left side is +x. Pelvis at the origin, roughly 1.8 units tall.
#[derive(Clone, Debug, PartialEq)]
pub struct CapsuleHumanoid {
    pub parts: Vec<(String, Capsule)>,
    pub joints: HashMap<String, Vector3<f64>>,
}

impl Default for CapsuleHumanoid {
    fn default() -> Self {
        let p = Vector3::new;
        let mut joints = HashMap::new();
        let mut add = |name: &str, v: Vector3<f64>| {
            joints.insert(name.to_string(), v);
        };
        let head = p(0.0, 0.72, 0.0);
        let head_r = 0.11;
        add("nose", p(0.0, 0.70, head_r));
        add("left_eye", p(0.04, 0.745, 0.095));
        add("right_eye", p(-0.04, 0.745, 0.095));
        add("left_ear", p(head_r, 0.72, 0.0));
        add("right_ear", p(-head_r, 0.72, 0.0));
        add("neck", p(0.0, 0.55, 0.0));
        for (side, sx) in [("left", 1.0), ("right", -1.0)] {
            add(&format!("{side}_shoulder"), p(0.19 * sx, 0.47, 0.0));
            add(&format!("{side}_elbow"), p(0.30 * sx, 0.22, 0.0));
            add(&format!("{side}_wrist"), p(0.37 * sx, -0.02, 0.02));
            add(&format!("{side}_hip"), p(0.10 * sx, -0.02, 0.0));
            add(&format!("{side}_knee"), p(0.11 * sx, -0.45, 0.01));
            add(&format!("{side}_ankle"), p(0.11 * sx, -0.86, 0.0));
        }

        let j = |n: &str| joints[n];
        let mut parts = vec![
            ("head".to_string(), Capsule::sphere(head, head_r)),
            (
                "neck".to_string(),
                Capsule {
                    a: p(0.0, 0.45, 0.0),
                    b: p(0.0, 0.62, 0.0),
                    radius: 0.05,
                },
            ),
            (
                "torso".to_string(),
                Capsule {
                    a: p(0.0, 0.04, 0.0),
                    b: p(0.0, 0.40, 0.0),
                    radius: 0.16,
                },
            ),
        ];
        for side in ["left", "right"] {
            let seg = |a: &str, b: &str, r: f64| Capsule {
                a: j(&format!("{side}_{a}")),
                b: j(&format!("{side}_{b}")),
                radius: r,
            };
            parts.push((format!("{side}_upper_arm"), seg("shoulder", "elbow", 0.045)));
            parts.push((format!("{side}_forearm"), seg("elbow", "wrist", 0.038)));
            parts.push((format!("{side}_thigh"), seg("hip", "knee", 0.07)));
            parts.push((format!("{side}_shin"), seg("knee", "ankle", 0.052)));
        }
        Self { parts, joints }
    }
}

impl CapsuleHumanoid {
    pub fn to_mesh(&self) -> TriMesh {
        let mut mesh = TriMesh::default();
        for (_, c) in &self.parts {
            mesh.append(&c.tessellate(32, 8));
        }
        mesh
    }

    /// Analytic bounding box of the capsule union.
    pub fn bounds(&self) -> (Vector3<f64>, Vector3<f64>) {
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for (_, c) in &self.parts {
            let (l, h) = c.bounds();
            lo = lo.inf(&l);
            hi = hi.sup(&h);
        }
        (lo, hi)
    }

    pub fn head_center(&self) -> Vector3<f64> {
        self.parts
            .iter()
            .find(|(n, _)| n == "head")
            .map(|(_, c)| c.a)
            .unwrap_or_else(Vector3::zeros)
    }

    /// Name of the body part whose surface is closest to `p`.
    pub fn nearest_part(&self, p: &Vector3<f64>) -> &str {
        self.parts
            .iter()
            .map(|(n, c)| (n, segment_distance(p, &c.a, &c.b) - c.radius))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(n, _)| n.as_str())
            .unwrap_or("torso")
    }
}

fn segment_distance(p: &Vector3<f64>, a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let ab = b - a;
    let len2 = ab.norm_squared();
    let t = if len2 > 0.0 {
        ((p - a).dot(&ab) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - (a + ab * t)).norm()
}

/// Surface the initial splats are sampled from.
#[derive(Clone, Debug)]
pub enum SurfaceSource {
    Mesh(TriMesh),
    Humanoid(CapsuleHumanoid),
}

impl SurfaceSource {
    fn mesh(&self) -> TriMesh {
        match self {
            SurfaceSource::Mesh(m) => m.clone(),
            SurfaceSource::Humanoid(h) => h.to_mesh(),
        }
    }
}

pub const INIT_OPACITY: f64 = 0.1;
pub const INIT_COLOR: f64 = 0.5;

/// Samples `count` splat centers area-uniformly on the surface. Every splat
/// starts isotropic with scale half the mean nearest-neighbor spacing, identity
/// rotation, opacity 0.1 and mid-gray color.
pub fn init_from_surface<R: Rng>(
    surface: &SurfaceSource,
    count: usize,
    rng: &mut R,
) -> Result<GaussianCloud> {
    if count == 0 {
        return Err(Error::Init("requested zero gaussians".into()));
    }
    let mesh = surface.mesh();
    if mesh.is_empty() {
        return Err(Error::Init("surface mesh has no triangles".into()));
    }
    let centers = mesh.sample_surface(count, rng)?;
    let spacing = mean_nearest_neighbor_distance(&centers);
    // A single splat has no neighbor; fall back to a scale tied to the mesh size.
    let scale = if spacing > 0.0 {
        0.5 * spacing
    } else {
        let (lo, hi) = mesh.bounds();
        0.01 * (hi - lo).norm().max(1e-3)
    };
    let gaussians = centers
        .into_iter()
        .map(|c| Gaussian3D::isotropic(c, scale, INIT_OPACITY, Vector3::repeat(INIT_COLOR)))
        .collect();
    GaussianCloud::new(gaussians)
}

/// Mean distance from each point to its nearest other point, via a uniform grid.
pub fn mean_nearest_neighbor_distance(points: &[Vector3<f64>]) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let extent = (hi - lo).max().max(1e-9);
    let cell = extent / (points.len() as f64).cbrt().max(1.0);
    let key = |p: &Vector3<f64>| {
        let k = (p - lo) / cell;
        (k.x.floor() as i64, k.y.floor() as i64, k.z.floor() as i64)
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(key(p)).or_default().push(i);
    }
    let max_ring = (extent / cell).ceil() as i64 + 1;
    let total: f64 = points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let (kx, ky, kz) = key(p);
            let mut best = f64::INFINITY;
            let mut ring = 0i64;
            loop {
                for dx in -ring..=ring {
                    for dy in -ring..=ring {
                        for dz in -ring..=ring {
                            if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                                continue;
                            }
                            if let Some(list) = grid.get(&(kx + dx, ky + dy, kz + dz)) {
                                for &j in list {
                                    if j != i {
                                        best = best.min((points[j] - p).norm());
                                    }
                                }
                            }
                        }
                    }
                }
                // Points outside the searched shell are at least `ring * cell` away.
                if best <= ring as f64 * cell || ring > max_ring {
                    break;
                }
                ring += 1;
            }
            best
        })
        .sum();
    total / points.len() as f64
}
