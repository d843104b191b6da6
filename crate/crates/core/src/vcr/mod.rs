//! Multi-view refinement with attention sharing across a ring of views.

pub mod attention;
pub mod denoiser;
pub mod refine;
pub mod ring;

pub use attention::{attn, fused_attention, mutual_attention, softmax_rows, stack_rows, AttentionFeatures, FusionWeights, Matrix};
pub use denoiser::{ddim_timesteps, Prepared, ToyDenoiser, VcrConfig, PATCH_GRID, TOKENS, TOKEN_DIM};
pub use refine::{consistency, denoise_independent, refine_ring};
pub use ring::{arc, relative_distance, Guidance, RingEntry, RingManifest, RingView, ViewRing, ViewRole, DEFAULT_RING_SIZE, MAIN_AZIMUTHS};
