//! Stage one: AHDS distillation over sampled cameras with scheduled
//! densification.

use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{CameraSampling, RunConfig};
use super::reference::{build_oracle, reference_avatar, Framing};
use crate::error::{Error, Result};
use crate::guidance::{distill_step, load_bank, AdaptiveSchedule, Distiller, GuidanceConfig, MockOracle, NoiseSchedule, ViewConditions};
use crate::recon::CloudOptimizer;
use crate::splat::{
    densify_and_prune, init_from_surface, write_ply, Camera, CapsuleHumanoid, DensifyMode, DensifyReport, GaussianCloud,
    SurfaceSource,
};

/// Cameras the oracle has targets for, with their conditions.
pub struct CameraPool {
    pub oracle: MockOracle,
    pub cameras: Vec<Camera>,
    pub conds: Vec<ViewConditions>,
}

impl CameraPool {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }
}

/// `n` cameras: azimuth uniform on [0, 360), elevation uniform on the
/// configured range, and a head close-up with probability `head_zoom`.
pub fn sample_cameras<R: Rng>(
    framing: &Framing,
    body: &CapsuleHumanoid,
    sampling: &CameraSampling,
    n: usize,
    rng: &mut R,
) -> Vec<Camera> {
    let [lo, hi] = sampling.elevation;
    (0..n)
        .map(|_| {
            let az = rng.random_range(0.0..360.0);
            let el = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            if rng.random::<f64>() < sampling.head_zoom {
                framing.head_camera(az, el, body)
            } else {
                framing.camera(az, el)
            }
        })
        .collect()
}

/// Loads the configured target bank, or renders the reference avatar from
/// freshly sampled cameras.
pub fn build_pool(cfg: &RunConfig) -> Result<CameraPool> {
    let noise = NoiseSchedule::default();
    if let Some(dir) = &cfg.oracle.bank {
        let (oracle, manifest) = load_bank(dir, noise)?;
        let cameras: Vec<Camera> = manifest.views.iter().map(|v| v.camera).collect();
        if cameras.is_empty() {
            return Err(Error::Param(format!("target bank {} has no views", dir.display())));
        }
        let conds = cameras.iter().map(|c| manifest.conditions(c)).collect::<Result<_>>()?;
        return Ok(CameraPool { oracle, cameras, conds });
    }
    let body = CapsuleHumanoid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.oracle);
    let reference = reference_avatar(&body, cfg.oracle.reference_gaussians, cfg.oracle.reference_opacity, &mut rng)?;
    let cameras = sample_cameras(&cfg.framing, &body, &cfg.stage1.cameras, cfg.oracle.views, &mut rng);
    let (oracle, conds, _) = build_oracle(
        &reference,
        &cameras,
        &cfg.prompts,
        cfg.oracle.use_pose.then_some(&body),
        &cfg.pose_rules,
        cfg.background,
        &cfg.render,
        noise,
    )?;
    Ok(CameraPool { oracle, cameras, conds })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage1Row {
    pub step: u32,
    pub azimuth: f64,
    pub elevation: f64,
    pub t: u32,
    pub mean_abs_delta: f64,
    pub loss_proxy: f64,
    /// Splat count after this step, including any densification it ran.
    pub gaussians: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensifyEvent {
    pub step: u32,
    pub mode: DensifyMode,
    pub report: DensifyReport,
    pub gaussians: usize,
}

pub struct Stage1Output {
    pub init: GaussianCloud,
    pub cloud: GaussianCloud,
    pub schedule: Option<AdaptiveSchedule>,
    pub log: Vec<Stage1Row>,
    pub events: Vec<DensifyEvent>,
}

/// Writes through a temporary file so a reader never sees a partial cloud.
pub fn write_ply_atomic(cloud: &GaussianCloud, path: &Path) -> Result<()> {
    let tmp = path.with_extension("ply.partial");
    write_ply(cloud, &tmp)?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Runs stage one. When `checkpoint` is given and a step fails, the cloud as
/// it stood before that step is written there before the error is returned.
pub fn run_stage1(cfg: &RunConfig, pool: &CameraPool, checkpoint: Option<&Path>) -> Result<Stage1Output> {
    if pool.is_empty() {
        return Err(Error::Param("empty camera pool".into()));
    }
    let body = CapsuleHumanoid::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.init);
    let init = init_from_surface(&SurfaceSource::Humanoid(body), cfg.stage1.gaussians, &mut rng)?;
    let steps = cfg.stage1.steps;
    if steps == 0 {
        return Ok(Stage1Output {
            cloud: init.clone(),
            init,
            schedule: None,
            log: Vec::new(),
            events: Vec::new(),
        });
    }

    let table = cfg.stage1_table()?;
    let schedule = match cfg.schedule.params {
        Some(p) => AdaptiveSchedule::from_params(&table, p, cfg.schedule.offset),
        None => AdaptiveSchedule::fit(&table, &cfg.schedule.grid, cfg.schedule.offset)?,
    };
    let guidance = GuidanceConfig {
        background: cfg.background,
        ..cfg.guidance.clone()
    };
    let ctx = Distiller {
        predictor: &pool.oracle,
        noise: pool.oracle.noise(),
        schedule: Some(&schedule),
        cfg: &guidance,
        render: cfg.render,
    };
    let densify = cfg.stage1.densify.densify_steps(steps);
    let prune = cfg.stage1.densify.prune_step(steps);

    let mut cloud = init.clone();
    let mut opt = CloudOptimizer::new(cloud.len(), cfg.stage1.rates, cfg.stage1.adam, steps as u64)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.stage1);
    let mut log = Vec::with_capacity(steps as usize);
    let mut events = Vec::new();
    for i in 1..=steps {
        let last_good = checkpoint.map(|_| cloud.clone());
        let step = (|| -> Result<Stage1Row> {
            let v = rng.random_range(0..pool.len());
            let cam = &pool.cameras[v];
            let report = distill_step(&mut cloud, &mut opt, cam, &pool.conds[v], &ctx, i, &mut rng)?;
            let mut modes = Vec::new();
            if densify.contains(&i) {
                modes.push(DensifyMode::Both);
            }
            if prune == Some(i) {
                modes.push(DensifyMode::PruneOnly);
            }
            for mode in modes {
                let (report, lineage) = densify_and_prune(&mut cloud, &cfg.stage1.densify_rules, mode, i as u64)?;
                opt.remap(&lineage);
                log::info!("step {i}: {mode:?} {report:?} -> {} gaussians", cloud.len());
                events.push(DensifyEvent {
                    step: i,
                    mode,
                    report,
                    gaussians: cloud.len(),
                });
            }
            Ok(Stage1Row {
                step: i,
                azimuth: cam.azimuth,
                elevation: cam.elevation,
                t: report.t,
                mean_abs_delta: report.mean_abs_delta,
                loss_proxy: report.loss_proxy,
                gaussians: cloud.len(),
            })
        })();
        match step {
            Ok(row) => log.push(row),
            Err(e) => {
                if let (Some(path), Some(good)) = (checkpoint, last_good) {
                    write_ply_atomic(&good, path)?;
                }
                return Err(e);
            }
        }
    }
    Ok(Stage1Output {
        init,
        cloud,
        schedule: Some(schedule),
        log,
        events,
    })
}

pub fn write_stage1_csv(path: impl AsRef<Path>, log: &[Stage1Row]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "step,azimuth,elevation,t,mean_abs_delta,loss_proxy,gaussians").map_err(io)?;
    for r in log {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.step, r.azimuth, r.elevation, r.t, r.mean_abs_delta, r.loss_proxy, r.gaussians
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampled_cameras_respect_ranges() {
        let f = Framing::default();
        let s = CameraSampling::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cams = sample_cameras(&f, &CapsuleHumanoid::default(), &s, 400, &mut rng);
        assert!(cams.iter().all(|c| (0.0..360.0).contains(&c.azimuth)));
        assert!(cams.iter().all(|c| (-10.0..=20.0).contains(&c.elevation)));
        let close = cams.iter().filter(|c| c.radius < f.radius).count();
        assert!((40..=120).contains(&close), "{close} close-ups");
    }
}
