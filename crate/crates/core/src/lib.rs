//! Gaussian-splat avatar generation at desk scale.
//!
//! Stage one distills a splat cloud from an epsilon-predictor with human-aware
//! score combinators and a fitted timestep schedule. Stage two renders a ring
//! of views, refines them with cross-view attention sharing, and fits the
//! cloud back to the refined images.

pub mod error;
pub mod guidance;
pub mod image;
pub mod pipeline;
pub mod plot;
pub mod posecond;
pub mod recon;
pub mod schedule;
pub mod splat;
pub mod vcr;

pub use error::{Error, Result};
pub use image::Image;
