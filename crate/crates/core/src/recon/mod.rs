//! Stage-2 reconstruction: crop/downsample preprocessing, L1 plus perceptual
//! loss, Adam, and the multi-view optimization loop.

pub mod adam;
pub mod loss;
pub mod optimize;
pub mod preprocess;

pub use adam::{adam_step, AdamHyper, AdamState, CloudOptimizer, LearningRates};
pub use loss::{gaussian_blur, perceptual_proxy, recon_loss, DEFAULT_LAMBDA_L1, DEFAULT_LAMBDA_PERC, PYRAMID_SIGMAS};
pub use optimize::{batch_loss, optimize_stage2, write_loss_csv, ReconConfig, StepLog, TargetView};
pub use preprocess::{crop_and_downsample, CropBox, Preprocess, ALPHA_THRESHOLD};
