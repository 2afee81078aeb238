//! Background-robust continuous sign language recognition toolkit:
//! benchmark synthesis via matting, mixup background randomization,
//! disentangling auto-encoder losses with analytic gradients, CTC, WER
//! scoring, and a desk-scale end-to-end training harness.

pub mod benchgen;
pub mod ctc;
pub mod daecore;
pub mod gradcheck;
pub mod media;
pub mod metrics;
pub mod seeding;
pub mod toytrain;

pub use media::{AugmentConfig, Frame, Mask, SceneImage, Video};
pub use metrics::{GlossSeq, WerBreakdown};
