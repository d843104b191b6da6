//! Stage-two fitting of a cloud to a fixed set of target views.

use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::{AdamHyper, CloudOptimizer, LearningRates};
use super::loss::{recon_loss, DEFAULT_LAMBDA_L1, DEFAULT_LAMBDA_PERC};
use super::preprocess::{CropBox, Preprocess};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::splat::render::backward_with_trace;
use crate::splat::{render, Camera, CloudGradients, GaussianCloud, RenderOptions};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReconConfig {
    pub lambda_l1: f64,
    pub lambda_perc: f64,
    pub batch: usize,
    pub steps: u32,
    pub rates: LearningRates,
    pub adam: AdamHyper,
    /// Pixels added around the subject box before downsampling.
    pub margin: usize,
    pub factor: usize,
    pub background: [f64; 3],
}

impl Default for ReconConfig {
    fn default() -> Self {
        Self {
            lambda_l1: DEFAULT_LAMBDA_L1,
            lambda_perc: DEFAULT_LAMBDA_PERC,
            batch: 8,
            steps: 800,
            rates: LearningRates::default(),
            adam: AdamHyper::default(),
            margin: 2,
            factor: 2,
            background: [1.0; 3],
        }
    }
}

impl ReconConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_l1 >= 0.0 && self.lambda_perc >= 0.0) {
            return Err(Error::Param(format!("loss weights {}, {}", self.lambda_l1, self.lambda_perc)));
        }
        if self.batch == 0 || self.factor == 0 {
            return Err(Error::Param(format!("batch {} and factor {} must be ≥ 1", self.batch, self.factor)));
        }
        self.rates.validate()
    }
}

/// A target image with its camera and the fixed preprocessing applied to both
/// the target and every render of that view.
#[derive(Clone, Debug)]
pub struct TargetView {
    pub camera: Camera,
    pub image: Image,
    pub preprocess: Preprocess,
    processed: Image,
}

impl TargetView {
    /// The crop box comes from `alpha`, the coverage of the subject in this view.
    pub fn new(camera: Camera, image: Image, alpha: &Image, margin: usize, factor: usize) -> Result<Self> {
        if image.width() != camera.width || image.height() != camera.height || alpha.width() != image.width() || alpha.height() != image.height() {
            return Err(Error::Shape(format!(
                "target {}x{} and alpha {}x{} for a {}x{} camera",
                image.width(),
                image.height(),
                alpha.width(),
                alpha.height(),
                camera.width,
                camera.height
            )));
        }
        let preprocess = Preprocess::new(CropBox::from_alpha(alpha, margin)?, factor)?;
        let processed = preprocess.apply(&image)?;
        Ok(Self {
            camera,
            image,
            preprocess,
            processed,
        })
    }

    pub fn processed(&self) -> &Image {
        &self.processed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u32,
    /// Mean loss of the batch, measured before the update.
    pub loss: f64,
}

/// Mean loss over `batch` and its gradient. Views are rendered in parallel and
/// reduced in the order given.
pub fn batch_loss(
    cloud: &GaussianCloud,
    views: &[TargetView],
    batch: &[usize],
    cfg: &ReconConfig,
    opts: &RenderOptions,
) -> Result<(f64, CloudGradients)> {
    if batch.is_empty() {
        return Err(Error::Param("empty batch".into()));
    }
    let opts = opts.with_trace();
    let parts = batch
        .par_iter()
        .map(|&v| {
            let view = views
                .get(v)
                .ok_or_else(|| Error::Param(format!("view {v} of {}", views.len())))?;
            let out = render(cloud, &view.camera, cfg.background, &opts)?;
            let small = view.preprocess.apply(&out.color)?;
            let (loss, g) = recon_loss(&small, &view.processed, cfg.lambda_l1, cfg.lambda_perc)?;
            let upstream = view.preprocess.adjoint(&g, view.camera.width, view.camera.height)?;
            let trace = out.trace.as_ref().ok_or_else(|| Error::State("render kept no trace".into()))?;
            Ok((loss, backward_with_trace(cloud, trace, &upstream)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let k = 1.0 / batch.len() as f64;
    let mut grads = CloudGradients::zeros(cloud.len());
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grads.accumulate(g);
    }
    grads.scale_by(k);
    Ok((loss * k, grads))
}

/// Runs `cfg.steps` Adam steps, each on `cfg.batch` views drawn without
/// replacement. No densification happens here.
pub fn optimize_stage2<R: Rng>(
    cloud: &mut GaussianCloud,
    views: &[TargetView],
    cfg: &ReconConfig,
    opts: &RenderOptions,
    rng: &mut R,
) -> Result<Vec<StepLog>> {
    cfg.validate()?;
    if views.len() < cfg.batch {
        return Err(Error::Param(format!("batch of {} from {} views", cfg.batch, views.len())));
    }
    let mut opt = CloudOptimizer::new(cloud.len(), cfg.rates, cfg.adam, cfg.steps as u64)?;
    let mut log = Vec::with_capacity(cfg.steps as usize);
    for step in 1..=cfg.steps {
        let mut batch = sample(rng, views.len(), cfg.batch).into_vec();
        batch.sort_unstable();
        let (loss, grads) = batch_loss(cloud, views, &batch, cfg, opts)?;
        if !loss.is_finite() {
            return Err(Error::Numerics("reconstruction loss"));
        }
        opt.step(cloud, &grads)?;
        log.push(StepLog { step, loss });
    }
    Ok(log)
}

pub fn write_loss_csv(path: impl AsRef<Path>, log: &[StepLog]) -> Result<()> {
    let path = path.as_ref();
    let io = |e| Error::io(path, e);
    let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(w, "step,loss").map_err(io)?;
    for s in log {
        writeln!(w, "{},{}", s.step, s.loss).map_err(io)?;
    }
    w.flush().map_err(io)
}
