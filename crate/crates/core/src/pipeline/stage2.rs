//! Stage two: render the ring, refine it, and fit the cloud to the result.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::RunConfig;
use crate::error::Result;
use crate::guidance::NoiseSchedule;
use crate::image::Image;
use crate::recon::{optimize_stage2, ReconConfig, StepLog, TargetView};
use crate::splat::{render, Camera, GaussianCloud};
use crate::vcr::{consistency, refine_ring, ToyDenoiser, ViewRing};

pub struct Stage2Output {
    pub cloud: GaussianCloud,
    pub ring: ViewRing,
    pub cameras: Vec<Camera>,
    /// Ring renders of the stage-one cloud.
    pub before: Vec<Image>,
    pub alphas: Vec<Image>,
    /// Reconstruction targets: refined renders, or the renders themselves
    /// when refinement is off.
    pub after: Vec<Image>,
    /// Neighbour feature distance before and after refinement.
    pub consistency: Option<(f64, f64)>,
    pub log: Vec<StepLog>,
}

/// Ring cameras at the configured elevation.
pub fn ring_cameras(cfg: &RunConfig, ring: &ViewRing) -> Vec<Camera> {
    ring.azimuths()
        .iter()
        .map(|&az| cfg.framing.camera(az, cfg.stage2.elevation))
        .collect()
}

pub fn run_stage2(cfg: &RunConfig, mut cloud: GaussianCloud) -> Result<Stage2Output> {
    let ring = cfg.stage2.ring()?;
    let cameras = ring_cameras(cfg, &ring);
    let renders = cameras
        .par_iter()
        .map(|cam| render(&cloud, cam, cfg.background, &cfg.render))
        .collect::<Result<Vec<_>>>()?;
    let (before, alphas): (Vec<Image>, Vec<Image>) = renders.into_iter().map(|o| (o.color, o.alpha)).unzip();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds.stage2);
    let (after, consistency) = if cfg.stage2.vcr_enabled {
        let den = ToyDenoiser::new(
            cfg.framing.size,
            cfg.framing.size,
            cfg.stage2.vcr.denoiser_seed,
            NoiseSchedule::default(),
        )?;
        let after = refine_ring(&before, &ring, &den, &cfg.stage2.vcr, &mut rng)?;
        let c = (consistency(&before, &ring, &den)?, consistency(&after, &ring, &den)?);
        (after, Some(c))
    } else {
        (before.clone(), None)
    };

    let recon = ReconConfig {
        background: cfg.background,
        ..cfg.stage2.recon.clone()
    };
    let targets = cameras
        .iter()
        .zip(&after)
        .zip(&alphas)
        .map(|((cam, img), alpha)| TargetView::new(*cam, img.clone(), alpha, recon.margin, recon.factor))
        .collect::<Result<Vec<_>>>()?;
    let log = optimize_stage2(&mut cloud, &targets, &recon, &cfg.render, &mut rng)?;
    Ok(Stage2Output {
        cloud,
        ring,
        cameras,
        before,
        alphas,
        after,
        consistency,
        log,
    })
}
