//! Score differences for score distillation (classifier-free guided) and for
//! the identity-conditioned variant with a split rectifier term.

use super::condition::{Condition, ViewConditions};
use super::oracle::EpsilonPredictor;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::schedule::MAX_TIMESTEP;

pub const DEFAULT_GAMMA: f64 = 7.5;
pub const DEFAULT_TAU: u32 = 170;

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma >= 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(Error::Param(format!("guidance scale {gamma} must be ≥ 0")))
    }
}

/// `ε(x_t; y_φ) + γ·(ε(x_t; y) − ε(x_t; y_φ)) − ε`.
pub fn sds_difference(
    pred: &dyn EpsilonPredictor,
    x_t: &Image,
    t: u32,
    cond: &Condition,
    null: &Condition,
    eps: &Image,
    gamma: f64,
) -> Result<Image> {
    check_gamma(gamma)?;
    let e_null = pred.predict(x_t, t, null)?;
    let e_cond = pred.predict(x_t, t, cond)?;
    let guided = e_null.zip_map(&e_cond, |u, c| u + gamma * (c - u))?;
    guided.zip_map(eps, |g, e| g - e)
}

/// `δ_rect + γ·(ε(x_t; y, I_ip) − ε(x_t; y_φ, I_μ))` with no sampled-noise
/// term. The rectifier `δ_rect` is `ε(x_t; y_φ, I_μ)` for `t < τ` and
/// `ε(x_t; y_φ, I_μ) − ε(x_t; y₋, I_φ)` from `τ` on.
pub fn hds_difference(
    pred: &dyn EpsilonPredictor,
    x_t: &Image,
    t: u32,
    conds: &ViewConditions,
    gamma: f64,
    tau: u32,
) -> Result<Image> {
    check_gamma(gamma)?;
    if tau == 0 || tau > MAX_TIMESTEP {
        return Err(Error::Range(tau, MAX_TIMESTEP));
    }
    let e_cond = pred.predict(x_t, t, &conds.conditional)?;
    let e_rect = pred.predict(x_t, t, &conds.rectifier)?;
    let base = if t < tau {
        e_rect.clone()
    } else {
        let neg = pred.predict(x_t, t, &conds.negative)?;
        e_rect.zip_map(&neg, |r, n| r - n)?
    };
    let cond_term = e_cond.zip_map(&e_rect, |c, r| c - r)?;
    base.zip_map(&cond_term, |b, d| b + gamma * d)
}
