use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::gaussian::{Gaussian3D, GaussianCloud};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensifyMode {
    Both,
    PruneOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifyConfig {
    /// Mean screen-space positional gradient above which a splat is densified.
    pub grad_threshold: f64,
    pub opacity_floor: f64,
    /// Splats whose largest axis exceeds this are pruned.
    pub scale_ceiling: f64,
    /// Splats larger than this are split, smaller ones cloned.
    pub split_scale: f64,
}

impl Default for DensifyConfig {
    fn default() -> Self {
        Self {
            grad_threshold: 2e-4,
            opacity_floor: 0.005,
            scale_ceiling: 0.5,
            split_scale: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DensifyReport {
    pub n_cloned: usize,
    pub n_split: usize,
    pub n_pruned: usize,
}

/// Provenance of each splat after a densify/prune pass: `Some(i)` for splats
/// that kept the identity of old splat `i`, `None` for newly created ones.
pub type Lineage = Vec<Option<usize>>;

const SPLIT_SHRINK: f64 = 1.6;

/// Clones or splits high-gradient splats, then prunes transparent or oversized
/// ones. Statistics are reset afterwards. Refuses (and leaves the cloud
/// untouched) if the prune would remove every splat.
pub fn densify_and_prune(
    cloud: &mut GaussianCloud,
    cfg: &DensifyConfig,
    mode: DensifyMode,
    step: u64,
) -> Result<(DensifyReport, Lineage)> {
    let grads = cloud.mean_position_grad();
    let mut report = DensifyReport::default();
    let mut next: Vec<Gaussian3D> = Vec::with_capacity(cloud.len());
    let mut created: Vec<u64> = Vec::with_capacity(cloud.len());
    let mut lineage: Lineage = Vec::with_capacity(cloud.len());

    for (i, g) in cloud.gaussians().iter().enumerate() {
        let hot = mode == DensifyMode::Both && grads[i] > cfg.grad_threshold;
        if hot && g.max_scale() > cfg.split_scale {
            report.n_split += 1;
            let scale = g.scale();
            let major = scale.imax();
            let axis: Vector3<f64> = g.rotation_matrix().column(major).into();
            let offset = axis * (0.5 * scale[major]);
            for sign in [1.0, -1.0] {
                let mut child = g.clone();
                child.center = g.center + offset * sign;
                child.log_scale = g.log_scale.map(|l| l - SPLIT_SHRINK.ln());
                next.push(child);
                created.push(step);
                lineage.push(None);
            }
        } else {
            next.push(g.clone());
            created.push(cloud.created_at()[i]);
            lineage.push(Some(i));
            if hot {
                report.n_cloned += 1;
                next.push(g.clone());
                created.push(step);
                lineage.push(None);
            }
        }
    }

    let keep: Vec<bool> = next
        .iter()
        .map(|g| g.opacity() >= cfg.opacity_floor && g.max_scale() <= cfg.scale_ceiling)
        .collect();
    let survivors = keep.iter().filter(|&&k| k).count();
    if survivors == 0 {
        return Err(Error::DegenerateCloud(next.len()));
    }
    report.n_pruned = next.len() - survivors;

    let mut it = keep.iter();
    next.retain(|_| *it.next().unwrap());
    let mut it = keep.iter();
    created.retain(|_| *it.next().unwrap());
    let mut it = keep.iter();
    lineage.retain(|_| *it.next().unwrap());

    cloud.replace(next, created);
    Ok((report, lineage))
}
