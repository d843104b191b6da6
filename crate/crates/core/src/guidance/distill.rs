//! One optimization step of score distillation against an epsilon predictor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::condition::ViewConditions;
use super::noise::{add_noise, sample_noise, NoiseSchedule};
use super::oracle::EpsilonPredictor;
use super::score::{hds_difference, sds_difference, DEFAULT_GAMMA, DEFAULT_TAU};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::recon::adam::CloudOptimizer;
use crate::schedule::{fit_schedule, sample_timestep, t_curve, PhaseTable, ScheduleParams, SearchGrid};
use crate::splat::{render, render_backward, Camera, GaussianCloud, RenderOptions};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillMode {
    Sds,
    Hds,
    Ahds,
}

impl std::str::FromStr for DistillMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sds" => Ok(DistillMode::Sds),
            "hds" => Ok(DistillMode::Hds),
            "ahds" => Ok(DistillMode::Ahds),
            other => Err(Error::Param(format!("unknown distillation mode {other:?}"))),
        }
    }
}

/// Per-timestep weight `w(t)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Weighting {
    Constant { value: f64 },
    /// `w(t) = 1 − ᾱ_t`.
    OneMinusAlphaBar,
}

impl Weighting {
    pub fn at(&self, noise: &NoiseSchedule, t: u32) -> Result<f64> {
        match self {
            Weighting::Constant { value } => Ok(*value),
            Weighting::OneMinusAlphaBar => Ok(1.0 - noise.alpha_bar(t)?),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GuidanceConfig {
    pub mode: DistillMode,
    pub gamma: f64,
    pub tau: u32,
    pub weighting: Weighting,
    /// Global multiplier on the score difference before backpropagation.
    pub grad_scale: f64,
    /// Inclusive timestep range for the non-adaptive modes.
    pub t_range: [u32; 2],
    pub background: [f64; 3],
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            mode: DistillMode::Ahds,
            gamma: DEFAULT_GAMMA,
            tau: DEFAULT_TAU,
            weighting: Weighting::Constant { value: 1.0 },
            grad_scale: 1.0,
            t_range: [20, 980],
            background: [1.0, 1.0, 1.0],
        }
    }
}

/// Fitted schedule parameters together with their timestep curve.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveSchedule {
    pub table: PhaseTable,
    pub params: ScheduleParams,
    pub curve: Vec<u32>,
}

impl AdaptiveSchedule {
    pub fn fit(table: &PhaseTable, grid: &SearchGrid, offset: i32) -> Result<Self> {
        let fit = fit_schedule(table, grid)?;
        if let Some(w) = &fit.warning {
            log::warn!("schedule fit objective {:.3e} is poor", w.objective);
        }
        Ok(Self::from_params(table, fit.params, offset))
    }

    pub fn from_params(table: &PhaseTable, params: ScheduleParams, offset: i32) -> Self {
        Self {
            table: table.clone(),
            curve: t_curve(&params, table, offset),
            params,
        }
    }

    pub fn steps(&self) -> u32 {
        self.curve.len() as u32
    }
}

/// Noised render, timestep, sampled noise and the assembled score difference.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSample {
    pub x_t: Image,
    pub t: u32,
    pub eps: Image,
    pub delta: Image,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub t: u32,
    pub mean_abs_delta: f64,
    /// Norms of the center, scale, rotation, opacity and color gradients.
    pub grad_norms: [f64; 5],
    /// Mean squared score difference.
    pub loss_proxy: f64,
}

/// Everything a distillation step reads but does not own.
pub struct Distiller<'a> {
    pub predictor: &'a dyn EpsilonPredictor,
    pub noise: &'a NoiseSchedule,
    pub schedule: Option<&'a AdaptiveSchedule>,
    pub cfg: &'a GuidanceConfig,
    pub render: RenderOptions,
}

impl Distiller<'_> {
    fn sample_t<R: Rng>(&self, i: u32, rng: &mut R) -> Result<u32> {
        match self.cfg.mode {
            DistillMode::Sds | DistillMode::Hds => {
                let [lo, hi] = self.cfg.t_range;
                if lo == 0 || lo > hi || hi > self.noise.len() {
                    return Err(Error::Param(format!("timestep range [{lo}, {hi}]")));
                }
                Ok(rng.random_range(lo..=hi))
            }
            DistillMode::Ahds => {
                let s = self
                    .schedule
                    .ok_or_else(|| Error::State("adaptive mode needs a fitted schedule".into()))?;
                sample_timestep(i, &s.curve, &s.table, rng)
            }
        }
    }

    /// Draws `t` and `ε`, noises `x` and assembles the mode's score difference.
    pub fn score<R: Rng>(&self, x: &Image, conds: &ViewConditions, i: u32, rng: &mut R) -> Result<ScoreSample> {
        let t = self.sample_t(i, rng)?;
        let eps = sample_noise(x, rng);
        let x_t = add_noise(self.noise, x, t, &eps)?;
        let delta = match self.cfg.mode {
            DistillMode::Sds => sds_difference(
                self.predictor,
                &x_t,
                t,
                &conds.sds_conditional,
                &conds.sds_null,
                &eps,
                self.cfg.gamma,
            )?,
            DistillMode::Hds | DistillMode::Ahds => {
                hds_difference(self.predictor, &x_t, t, conds, self.cfg.gamma, self.cfg.tau)?
            }
        };
        Ok(ScoreSample { x_t, t, eps, delta })
    }
}

/// Renders `cam`, forms `w(t)·δ` and backpropagates it as the upstream
/// gradient of the rendered image, then takes one optimizer step. A
/// non-finite score difference aborts before the cloud is touched.
pub fn distill_step<R: Rng>(
    cloud: &mut GaussianCloud,
    opt: &mut CloudOptimizer,
    cam: &Camera,
    conds: &ViewConditions,
    ctx: &Distiller<'_>,
    i: u32,
    rng: &mut R,
) -> Result<StepReport> {
    let out = render(cloud, cam, ctx.cfg.background, &ctx.render.with_trace())?;
    let sample = ctx.score(&out.color, conds, i, rng)?;
    if !sample.delta.is_finite() {
        return Err(Error::Numerics("non-finite score difference"));
    }
    let w = ctx.cfg.weighting.at(ctx.noise, sample.t)?;
    // Per-pixel mean so the step size does not depend on resolution.
    let k = w * ctx.cfg.grad_scale / cam.pixel_count() as f64;
    let upstream = sample.delta.scale(k);
    let grads = render_backward(cloud, &out, &upstream)?;
    opt.step(cloud, &grads)?;
    let n = sample.delta.len().max(1) as f64;
    Ok(StepReport {
        t: sample.t,
        mean_abs_delta: sample.delta.mean_abs(),
        grad_norms: grads.norms(),
        loss_proxy: sample.delta.data().iter().map(|d| d * d).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::condition::Prompts;
    use crate::guidance::oracle::MockOracle;
    use crate::recon::adam::{AdamHyper, LearningRates};
    use crate::splat::Gaussian3D;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fixture() -> (GaussianCloud, Camera, MockOracle, ViewConditions) {
        let cloud = GaussianCloud::new(vec![
            Gaussian3D::isotropic(Vector3::zeros(), 0.3, 0.6, Vector3::new(0.2, 0.5, 0.8)),
            Gaussian3D::isotropic(Vector3::new(0.2, 0.1, 0.0), 0.2, 0.4, Vector3::new(0.9, 0.1, 0.1)),
        ])
        .unwrap();
        let cam = Camera::perspective(0.0, 0.0, 3.0, 16, 20.0);
        let conds = ViewConditions::from_prompts(&Prompts::default(), None);
        let oracle = MockOracle::new(NoiseSchedule::default()).with_fallback(Image::filled(16, 16, 3, 0.3));
        (cloud, cam, oracle, conds)
    }

    #[test]
    fn zero_weight_leaves_cloud_unchanged() {
        let (mut cloud, cam, oracle, conds) = fixture();
        let before = cloud.gaussians().to_vec();
        let noise = NoiseSchedule::default();
        let cfg = GuidanceConfig {
            mode: DistillMode::Hds,
            weighting: Weighting::Constant { value: 0.0 },
            ..Default::default()
        };
        let ctx = Distiller {
            predictor: &oracle,
            noise: &noise,
            schedule: None,
            cfg: &cfg,
            render: RenderOptions::default(),
        };
        let mut opt = CloudOptimizer::new(2, LearningRates::default(), AdamHyper::default(), 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        distill_step(&mut cloud, &mut opt, &cam, &conds, &ctx, 1, &mut rng).unwrap();
        assert_eq!(cloud.gaussians(), &before[..]);
    }

    #[test]
    fn adaptive_mode_requires_schedule() {
        let (mut cloud, cam, oracle, conds) = fixture();
        let noise = NoiseSchedule::default();
        let cfg = GuidanceConfig::default();
        let ctx = Distiller {
            predictor: &oracle,
            noise: &noise,
            schedule: None,
            cfg: &cfg,
            render: RenderOptions::default(),
        };
        let mut opt = CloudOptimizer::new(2, LearningRates::default(), AdamHyper::default(), 10).unwrap();
        let err = distill_step(&mut cloud, &mut opt, &cam, &conds, &ctx, 1, &mut ChaCha8Rng::seed_from_u64(0));
        assert!(matches!(err, Err(Error::State(_))));
    }

    #[test]
    fn mode_parses() {
        assert_eq!("AHDS".parse::<DistillMode>().unwrap(), DistillMode::Ahds);
        assert!("dds".parse::<DistillMode>().is_err());
    }
}
