//! DDPM forward process with a linear variance schedule.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::schedule::MAX_TIMESTEP;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alphas_cumprod: Vec<f64>,
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(1e-4, 0.02, MAX_TIMESTEP).expect("default schedule is valid")
    }
}

impl NoiseSchedule {
    /// `steps` betas evenly spaced from `start` to `end`.
    pub fn linear(start: f64, end: f64, steps: u32) -> Result<Self> {
        if !(0.0 < start && start < end && end < 1.0) || steps < 2 {
            return Err(Error::Param(format!("linear betas {start}..{end} over {steps} steps")));
        }
        let betas: Vec<f64> = (0..steps)
            .map(|k| start + (end - start) * k as f64 / (steps - 1) as f64)
            .collect();
        let mut acc = 1.0;
        let alphas_cumprod = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Ok(Self { betas, alphas_cumprod })
    }

    pub fn len(&self) -> u32 {
        self.betas.len() as u32
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    fn index(&self, t: u32) -> Result<usize> {
        if t == 0 || t > self.len() {
            return Err(Error::Range(t, self.len()));
        }
        Ok(t as usize - 1)
    }

    pub fn beta(&self, t: u32) -> Result<f64> {
        Ok(self.betas[self.index(t)?])
    }

    /// `ᾱ_t` for `t ∈ [1, len]`.
    pub fn alpha_bar(&self, t: u32) -> Result<f64> {
        Ok(self.alphas_cumprod[self.index(t)?])
    }

    /// `ᾱ` with `t = 0` meaning the clean signal.
    pub fn alpha_bar_or_one(&self, t: u32) -> Result<f64> {
        if t == 0 {
            Ok(1.0)
        } else {
            self.alpha_bar(t)
        }
    }
}

/// `x_t = √ᾱ_t·x + √(1 − ᾱ_t)·ε`.
pub fn add_noise(schedule: &NoiseSchedule, x: &Image, t: u32, eps: &Image) -> Result<Image> {
    let ab = schedule.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    x.zip_map(eps, |x, e| a * x + b * e)
}

/// Standard-normal image shaped like `like`.
pub fn sample_noise<R: Rng>(like: &Image, rng: &mut R) -> Image {
    let data = (0..like.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    Image::from_vec(like.width(), like.height(), like.channels(), data).expect("length matches shape")
}
