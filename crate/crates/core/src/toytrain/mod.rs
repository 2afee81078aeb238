//! Desk-scale end-to-end harness: synthetic sign-video generation, a
//! per-frame MLP model with the DAE split, CTC training with Adam and a
//! cosine schedule, and the baseline / BR / BR+DAE comparison experiment.

mod model;
mod optim;
mod synth;
mod train;

pub use model::{
    downsample_frame, forward_student, save_checkpoint, Backbone, ModelConfig, ModelParams,
    StudentForward, StudentGrads, StudentParams,
};
pub use optim::{adam_step, cosine_lr, AdamState, OptimConfig, BETA1, BETA2, EPS};
pub use synth::{
    gen_synthetic_dataset, gloss_label, gloss_token, make_texture, make_training_scene_catalog,
    MaskedVideo, SynthConfig, SynthDataset, TextureBand, TextureKind,
};
pub use train::{
    evaluate, render_table, run_experiment, toy_augment_config, train_condition, train_step,
    video_loss_and_grads, Condition, ConditionReport, EvalReport, ExperimentReport, StepLosses,
    TrainConfig, TrainState, DEMO_SEEDS,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    BadConfig(String),
    #[error("gloss token {0:?} is not in the synthetic vocabulary")]
    UnknownGloss(String),
    #[error("non-finite gradient")]
    NonFiniteGradient,
    #[error("io error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Media(#[from] crate::media::MediaError),
    #[error(transparent)]
    Dae(#[from] crate::daecore::DaeError),
    #[error(transparent)]
    Ctc(#[from] crate::ctc::CtcError),
    #[error(transparent)]
    Wer(#[from] crate::metrics::WerError),
    #[error(transparent)]
    Benchgen(#[from] crate::benchgen::BenchgenError),
}
