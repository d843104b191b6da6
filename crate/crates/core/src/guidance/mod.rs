//! Diffusion guidance: forward noising, the epsilon-predictor contract with a
//! closed-form mock, score-difference combinators and the distillation step.

pub mod condition;
pub mod distill;
pub mod noise;
pub mod oracle;
pub mod score;

pub use condition::{embed_label, null_embedding, Condition, ConditionRole, Fingerprint, Prompts, ViewConditions, EMBED_DIM};
pub use distill::{distill_step, AdaptiveSchedule, DistillMode, Distiller, GuidanceConfig, ScoreSample, StepReport, Weighting};
pub use noise::{add_noise, sample_noise, NoiseSchedule};
pub use oracle::{load_bank, write_bank, BankManifest, BankView, EpsilonPredictor, MockOracle, BANK_MANIFEST};
pub use score::{hds_difference, sds_difference, DEFAULT_GAMMA, DEFAULT_TAU};
