//! Full run: stage one, stage two, and a manifest of everything written.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{RunConfig, Seeds};
use super::stage1::{build_pool, run_stage1, write_ply_atomic, write_stage1_csv, DensifyEvent};
use super::stage2::run_stage2;
use crate::error::{Error, Result};
use crate::guidance::Fingerprint;
use crate::recon::write_loss_csv;
use crate::schedule::ScheduleParams;
use crate::splat::write_ply;
use crate::vcr::{RingEntry, RingManifest};

pub const RUN_MANIFEST: &str = "manifest.json";
pub const RING_MANIFEST: &str = "ring.json";
pub const STAGE1_PLY: &str = "stage1.ply";
pub const FINAL_PLY: &str = "final.ply";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory, with `/` separators.
    pub path: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub stage1_secs: f64,
    pub stage2_secs: f64,
    pub total_secs: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Summary {
    pub steps: u32,
    pub initial_gaussians: usize,
    pub final_gaussians: usize,
    pub schedule: Option<ScheduleParams>,
    pub densify: Vec<DensifyEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Summary {
    pub steps: u32,
    pub vcr_enabled: bool,
    pub consistency_before: Option<f64>,
    pub consistency_after: Option<f64>,
    pub initial_loss: Option<f64>,
    pub final_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_sha256: String,
    pub seeds: Seeds,
    pub timings: Timings,
    pub stage1: Stage1Summary,
    pub stage2: Stage2Summary,
    pub outputs: Vec<Artifact>,
}

impl RunManifest {
    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Tracks every file a run writes.
struct Outputs {
    root: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn path(&mut self, rel: &str) -> Result<PathBuf> {
        let p = self.root.join(rel);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        if !self.written.iter().any(|w| w == rel) {
            self.written.push(rel.to_string());
        }
        Ok(p)
    }

    fn inventory(&self) -> Result<Vec<Artifact>> {
        self.written
            .iter()
            .map(|rel| {
                let p = self.root.join(rel);
                let bytes = std::fs::read(&p).map_err(|e| Error::io(&p, e))?;
                Ok(Artifact {
                    path: rel.clone(),
                    bytes: bytes.len() as u64,
                    sha256: Fingerprint(Sha256::digest(&bytes).into()).to_string(),
                })
            })
            .collect()
    }
}

/// Runs both stages into `cfg.output`. The stage-one cloud is on disk before
/// stage two starts.
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let start = Instant::now();
    let mut out = Outputs {
        root: cfg.output.clone(),
        written: Vec::new(),
    };
    let p = out.path("config.json")?;
    std::fs::write(&p, cfg.to_json()?).map_err(|e| Error::io(&p, e))?;

    let pool = build_pool(cfg)?;
    let ckpt = out.path(STAGE1_PLY)?;
    let s1 = run_stage1(cfg, &pool, Some(&ckpt))?;
    write_ply_atomic(&s1.cloud, &ckpt)?;
    write_stage1_csv(out.path("stage1_log.csv")?, &s1.log)?;
    if let Some(s) = &s1.schedule {
        let p = out.path("schedule.json")?;
        let doc = serde_json::json!({ "params": s.params, "table": s.table, "curve": s.curve });
        std::fs::write(&p, serde_json::to_string_pretty(&doc)?).map_err(|e| Error::io(&p, e))?;
    }
    let stage1_secs = start.elapsed().as_secs_f64();

    let s2 = run_stage2(cfg, s1.cloud.clone())?;
    let mut entries = Vec::with_capacity(s2.ring.len());
    for (k, view) in s2.ring.views.iter().enumerate() {
        let before = format!("view{k:02}_before.ppm");
        let after = format!("view{k:02}.ppm");
        let alpha = format!("view{k:02}_alpha.pgm");
        s2.before[k].write_ppm(out.path(&format!("stage2/{before}"))?)?;
        s2.after[k].write_ppm(out.path(&format!("stage2/{after}"))?)?;
        s2.alphas[k].write_ppm(out.path(&format!("stage2/{alpha}"))?)?;
        entries.push(RingEntry {
            azimuth: view.azimuth,
            role: view.role,
            image: after,
            alpha: Some(alpha),
            camera: Some(s2.cameras[k]),
        });
    }
    RingManifest { views: entries }.write_json(out.path(&format!("stage2/{RING_MANIFEST}"))?)?;
    write_loss_csv(out.path("stage2_loss.csv")?, &s2.log)?;
    write_ply(&s2.cloud, out.path(FINAL_PLY)?)?;
    let total_secs = start.elapsed().as_secs_f64();

    let manifest = RunManifest {
        config_sha256: cfg.digest()?,
        seeds: cfg.seeds,
        timings: Timings {
            stage1_secs,
            stage2_secs: total_secs - stage1_secs,
            total_secs,
        },
        stage1: Stage1Summary {
            steps: cfg.stage1.steps,
            initial_gaussians: s1.init.len(),
            final_gaussians: s1.cloud.len(),
            schedule: s1.schedule.as_ref().map(|s| s.params),
            densify: s1.events,
        },
        stage2: Stage2Summary {
            steps: cfg.stage2.recon.steps,
            vcr_enabled: cfg.stage2.vcr_enabled,
            consistency_before: s2.consistency.map(|c| c.0),
            consistency_after: s2.consistency.map(|c| c.1),
            initial_loss: s2.log.first().map(|l| l.loss),
            final_loss: s2.log.last().map(|l| l.loss),
        },
        outputs: out.inventory()?,
    };
    let p = cfg.output.join(RUN_MANIFEST);
    std::fs::write(&p, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}
