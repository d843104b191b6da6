//! Run configuration: one JSON document with a section per stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::reference::Framing;
use crate::error::{Error, Result};
use crate::guidance::{Fingerprint, GuidanceConfig, Prompts};
use crate::posecond::TrimRules;
use crate::recon::{AdamHyper, LearningRates, ReconConfig};
use crate::schedule::{PhaseTable, ScheduleParams, SearchGrid};
use crate::splat::{DensifyConfig, RenderOptions};
use crate::vcr::{ViewRing, VcrConfig};

/// Step count of the reference stage-one schedule.
pub const REFERENCE_STAGE1_STEPS: u32 = 2400;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub init: u64,
    pub oracle: u64,
    pub stage1: u64,
    pub stage2: u64,
}

impl Seeds {
    /// Independent sub-seeds derived from one number.
    pub fn from_master(master: u64) -> Self {
        let derive = |label: &str| {
            let d = Sha256::new().chain_update(master.to_le_bytes()).chain_update(label.as_bytes()).finalize();
            u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
        };
        Self {
            init: derive("init"),
            oracle: derive("oracle"),
            stage1: derive("stage1"),
            stage2: derive("stage2"),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_master(0)
    }
}

/// Where the epsilon-predictor targets come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleConfig {
    /// Target bank directory. Without one, a reference avatar is rendered
    /// from `views` sampled cameras.
    pub bank: Option<PathBuf>,
    pub reference_gaussians: usize,
    pub reference_opacity: f64,
    pub views: usize,
    pub use_pose: bool,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            bank: None,
            reference_gaussians: 2000,
            reference_opacity: 0.85,
            views: 32,
            use_pose: true,
        }
    }
}

/// Stage-one camera distribution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraSampling {
    /// Degrees, sampled uniformly.
    pub elevation: [f64; 2],
    /// Probability of a head close-up instead of a full-body view.
    pub head_zoom: f64,
}

impl Default for CameraSampling {
    fn default() -> Self {
        Self {
            elevation: [-10.0, 20.0],
            head_zoom: 0.2,
        }
    }
}

/// Densify/prune steps: `both` at `start`, `start + interval`, … up to
/// `stop`, and prune-only once at `prune_only`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DensifySchedule {
    pub start: u32,
    pub interval: u32,
    pub stop: u32,
    pub prune_only: Option<u32>,
}

impl Default for DensifySchedule {
    fn default() -> Self {
        Self {
            start: 200,
            interval: 800,
            stop: 1700,
            prune_only: Some(1800),
        }
    }
}

impl DensifySchedule {
    pub fn validate(&self) -> Result<()> {
        if self.interval == 0 {
            return Err(Error::Param("densify interval must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Densify-and-prune steps within a run of `total` steps.
    pub fn densify_steps(&self, total: u32) -> Vec<u32> {
        if self.start == 0 || self.interval == 0 {
            return Vec::new();
        }
        (0..)
            .map(|k| self.start + k * self.interval)
            .take_while(|&s| s <= self.stop.min(total))
            .collect()
    }

    pub fn prune_step(&self, total: u32) -> Option<u32> {
        self.prune_only.filter(|&s| s >= 1 && s <= total)
    }

    /// The same schedule stretched from a `from`-step run to a `to`-step run.
    pub fn scaled(&self, from: u32, to: u32) -> Self {
        let k = to as f64 / from.max(1) as f64;
        let s = |v: u32| ((v as f64 * k).round() as u32).max(1);
        Self {
            start: s(self.start),
            interval: s(self.interval),
            stop: s(self.stop),
            prune_only: self.prune_only.map(s),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub table: PhaseTable,
    pub grid: SearchGrid,
    pub offset: i32,
    /// Pre-fitted parameters; fitted at run time when absent.
    pub params: Option<ScheduleParams>,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            table: PhaseTable::default(),
            grid: SearchGrid::default(),
            offset: 0,
            params: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage1Config {
    pub steps: u32,
    pub gaussians: usize,
    pub rates: LearningRates,
    pub adam: AdamHyper,
    pub densify: DensifySchedule,
    pub densify_rules: DensifyConfig,
    pub cameras: CameraSampling,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            steps: REFERENCE_STAGE1_STEPS,
            gaussians: 2000,
            rates: LearningRates {
                color: 1e-2,
                ..LearningRates::default()
            },
            adam: AdamHyper::default(),
            densify: DensifySchedule::default(),
            densify_rules: DensifyConfig {
                grad_threshold: 5e-5,
                ..DensifyConfig::default()
            },
            cameras: CameraSampling::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Stage2Config {
    pub ring_size: usize,
    /// Elevation of every ring camera, in degrees.
    pub elevation: f64,
    /// Without refinement the ring renders themselves become the targets.
    pub vcr_enabled: bool,
    pub vcr: VcrConfig,
    pub recon: ReconConfig,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            ring_size: crate::vcr::DEFAULT_RING_SIZE,
            elevation: 0.0,
            vcr_enabled: true,
            vcr: VcrConfig::default(),
            recon: ReconConfig::default(),
        }
    }
}

impl Stage2Config {
    pub fn ring(&self) -> Result<ViewRing> {
        ViewRing::standard(self.ring_size)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub output: PathBuf,
    pub seeds: Seeds,
    pub framing: Framing,
    pub background: [f64; 3],
    pub render: RenderOptions,
    pub prompts: Prompts,
    pub pose_rules: TrimRules,
    pub oracle: OracleConfig,
    pub schedule: ScheduleConfig,
    pub guidance: GuidanceConfig,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("run"),
            seeds: Seeds::default(),
            framing: Framing::default(),
            background: [1.0; 3],
            render: RenderOptions::default(),
            prompts: Prompts::default(),
            pose_rules: TrimRules::default(),
            oracle: OracleConfig::default(),
            schedule: ScheduleConfig::default(),
            guidance: GuidanceConfig::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
        }
    }
}

impl RunConfig {
    /// Small run: 500 splats at 64×64, 300 stage-one and 100 stage-two steps,
    /// with the densify schedule shrunk to match.
    pub fn smoke() -> Self {
        let mut cfg = Self::default();
        cfg.oracle.reference_gaussians = 500;
        cfg.oracle.views = 16;
        cfg.stage1.gaussians = 500;
        cfg.stage1.steps = 300;
        cfg.stage1.densify = DensifySchedule::default().scaled(REFERENCE_STAGE1_STEPS, 300);
        cfg.stage2.recon.steps = 100;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.framing.size == 0 {
            return Err(Error::Param("image size must be ≥ 1".into()));
        }
        self.schedule.table.validate()?;
        self.stage1.rates.validate()?;
        self.stage1.densify.validate()?;
        if self.stage1.gaussians == 0 {
            return Err(Error::Param("stage one needs at least one gaussian".into()));
        }
        let [lo, hi] = self.stage1.cameras.elevation;
        if !(lo <= hi) || !(0.0..=1.0).contains(&self.stage1.cameras.head_zoom) {
            return Err(Error::Param(format!("camera sampling {:?}", self.stage1.cameras)));
        }
        if self.oracle.bank.is_none() && (self.oracle.views == 0 || self.oracle.reference_gaussians == 0) {
            return Err(Error::Param("reference oracle needs views and gaussians".into()));
        }
        let ring = self.stage2.ring()?;
        self.stage2.vcr.validate()?;
        self.stage2.recon.validate()?;
        if self.stage2.recon.batch > ring.len() {
            return Err(Error::Param(format!(
                "batch of {} from a ring of {}",
                self.stage2.recon.batch,
                ring.len()
            )));
        }
        Ok(())
    }

    pub fn read_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// SHA-256 of the serialized configuration.
    pub fn digest(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(Fingerprint(Sha256::digest(&bytes).into()).to_string())
    }

    /// The phase table stretched to the configured stage-one length.
    pub fn stage1_table(&self) -> Result<PhaseTable> {
        if self.stage1.steps == self.schedule.table.total_steps() {
            Ok(self.schedule.table.clone())
        } else {
            self.schedule.table.scaled_to(self.stage1.steps)
        }
    }
}
