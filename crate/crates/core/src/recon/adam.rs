//! Bias-corrected Adam over flat parameter slices, plus a per-attribute wrapper
//! for Gaussian clouds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::splat::{CloudGradients, GaussianCloud, Lineage};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    /// Reorders moments after densification; `width` values per entry. New
    /// entries start from zero moments, the step counter is kept.
    pub fn remap(&mut self, lineage: &Lineage, width: usize) {
        let mut m = Vec::with_capacity(lineage.len() * width);
        let mut v = Vec::with_capacity(lineage.len() * width);
        for origin in lineage {
            match origin {
                Some(i) => {
                    m.extend_from_slice(&self.m[i * width..(i + 1) * width]);
                    v.extend_from_slice(&self.v[i * width..(i + 1) * width]);
                }
                None => {
                    m.extend(std::iter::repeat_n(0.0, width));
                    v.extend(std::iter::repeat_n(0.0, width));
                }
            }
        }
        self.m = m;
        self.v = v;
    }
}

/// One Adam update. Non-finite gradients abort with `Numerics` and leave both
/// parameters and state untouched.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, lr: f64, hyper: &AdamHyper) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} state entries",
            params.len(),
            grads.len(),
            state.len()
        )));
    }
    if !grads.iter().all(|g| g.is_finite()) {
        return Err(Error::Numerics("non-finite gradient"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = hyper.beta1 * state.m[i] + (1.0 - hyper.beta1) * g;
        state.v[i] = hyper.beta2 * state.v[i] + (1.0 - hyper.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub center: f64,
    /// Center rate reached at the last step; decays exponentially from `center`.
    pub center_final: f64,
    pub scale: f64,
    pub rotation: f64,
    pub opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            center: 1.6e-4,
            center_final: 1.6e-6,
            scale: 5e-3,
            rotation: 1e-3,
            opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

impl LearningRates {
    pub fn validate(&self) -> Result<()> {
        let all = [self.center, self.center_final, self.scale, self.rotation, self.opacity, self.color];
        if all.iter().all(|&r| r > 0.0 && r.is_finite()) {
            Ok(())
        } else {
            Err(Error::Param(format!("learning rates must be positive: {self:?}")))
        }
    }

    /// Center rate at optimizer step `step` of `total`, log-linear between the
    /// two endpoints.
    pub fn center_at(&self, step: u64, total: u64) -> f64 {
        if total <= 1 {
            return self.center;
        }
        let f = (step as f64 / (total - 1) as f64).clamp(0.0, 1.0);
        (self.center.ln() * (1.0 - f) + self.center_final.ln() * f).exp()
    }
}

const WIDTHS: [usize; 5] = [3, 3, 4, 1, 3];

/// Adam state for every attribute of a cloud.
#[derive(Clone, Debug, PartialEq)]
pub struct CloudOptimizer {
    pub hyper: AdamHyper,
    pub rates: LearningRates,
    /// Horizon of the center-rate decay.
    pub total_steps: u64,
    states: [AdamState; 5],
}

impl CloudOptimizer {
    pub fn new(cloud_len: usize, rates: LearningRates, hyper: AdamHyper, total_steps: u64) -> Result<Self> {
        rates.validate()?;
        Ok(Self {
            hyper,
            rates,
            total_steps,
            states: WIDTHS.map(|w| AdamState::new(cloud_len * w)),
        })
    }

    pub fn step_count(&self) -> u64 {
        self.states[0].step()
    }

    pub fn len(&self) -> usize {
        self.states[0].len() / WIDTHS[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn remap(&mut self, lineage: &Lineage) {
        for (s, w) in self.states.iter_mut().zip(WIDTHS) {
            s.remap(lineage, w);
        }
    }

    /// Applies one update to every attribute and re-projects constraints. The
    /// cloud is left untouched if any gradient is non-finite.
    pub fn step(&mut self, cloud: &mut GaussianCloud, grads: &CloudGradients) -> Result<()> {
        let n = cloud.len();
        if grads.len() != n || self.len() != n {
            return Err(Error::Shape(format!(
                "optimizer tracks {}, cloud has {n}, gradients {}",
                self.len(),
                grads.len()
            )));
        }
        if !grads.is_finite() {
            return Err(Error::Numerics("non-finite gradient"));
        }
        let gs = cloud.gaussians();
        let mut params: [Vec<f64>; 5] = [
            gs.iter().flat_map(|g| g.center.iter().copied().collect::<Vec<_>>()).collect(),
            gs.iter().flat_map(|g| g.log_scale.iter().copied().collect::<Vec<_>>()).collect(),
            gs.iter().flat_map(|g| g.rotation.iter().copied().collect::<Vec<_>>()).collect(),
            gs.iter().map(|g| g.opacity_logit).collect(),
            gs.iter().flat_map(|g| g.color.iter().copied().collect::<Vec<_>>()).collect(),
        ];
        let flat: [Vec<f64>; 5] = [
            grads.center.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect(),
            grads.log_scale.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect(),
            grads.rotation.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect(),
            grads.opacity_logit.clone(),
            grads.color.iter().flat_map(|v| v.iter().copied().collect::<Vec<_>>()).collect(),
        ];
        let step = self.step_count();
        let lrs = [
            self.rates.center_at(step, self.total_steps),
            self.rates.scale,
            self.rates.rotation,
            self.rates.opacity,
            self.rates.color,
        ];
        for k in 0..5 {
            adam_step(&mut params[k], &flat[k], &mut self.states[k], lrs[k], &self.hyper)?;
        }
        for (i, g) in cloud.gaussians_mut().iter_mut().enumerate() {
            g.center.copy_from_slice(&params[0][3 * i..3 * i + 3]);
            g.log_scale.copy_from_slice(&params[1][3 * i..3 * i + 3]);
            g.rotation.copy_from_slice(&params[2][4 * i..4 * i + 4]);
            g.opacity_logit = params[3][i];
            g.color.copy_from_slice(&params[4][3 * i..3 * i + 3]);
        }
        cloud.project_constraints();
        Ok(())
    }
}
