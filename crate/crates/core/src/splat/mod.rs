//! Gaussian splat data model, surface initialization, differentiable
//! rendering and densify/prune maintenance.

pub mod camera;
pub mod densify;
pub mod gaussian;
pub mod mesh;
pub mod ply;
pub mod project;
pub mod render;

pub use camera::{normalize_azimuth, Camera, Projection};
pub use densify::{densify_and_prune, DensifyConfig, DensifyMode, DensifyReport, Lineage};
pub use gaussian::{inverse_sigmoid, sigmoid, Gaussian3D, GaussianCloud};
pub use mesh::{init_from_surface, Capsule, CapsuleHumanoid, SurfaceSource, TriMesh, JOINT_NAMES};
pub use ply::{read_ply, write_ply};
pub use project::{project_gaussian, Projected, DEFAULT_BLUR};
pub use render::{
    render, render_backward, CloudGradients, RenderOptions, RenderOutput, RenderTrace, DEFAULT_EARLY_STOP,
};
