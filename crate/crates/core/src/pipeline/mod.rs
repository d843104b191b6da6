//! End-to-end orchestration: stage-1 distillation, ring rendering and
//! refinement, stage-2 reconstruction, and run manifests.

pub mod config;
pub mod reference;
pub mod run;
pub mod stage1;
pub mod stage2;

pub use config::{
    CameraSampling, DensifySchedule, OracleConfig, RunConfig, ScheduleConfig, Seeds, Stage1Config, Stage2Config,
    REFERENCE_STAGE1_STEPS,
};
pub use reference::{build_oracle, part_color, reference_avatar, Framing};
pub use run::{run_pipeline, Artifact, RunManifest, Timings, FINAL_PLY, RING_MANIFEST, RUN_MANIFEST, STAGE1_PLY};
pub use stage1::{build_pool, run_stage1, sample_cameras, write_ply_atomic, write_stage1_csv, CameraPool, DensifyEvent, Stage1Output, Stage1Row};
pub use stage2::{ring_cameras, run_stage2, Stage2Output};
