//! Miniature attention-only diffusion transformer on procedural latents:
//! teacher-forced flow-matching training with hand-written gradients and
//! streaming generation over a clean key/value cache.
//!
//! Every frame is a `rows × cols` grid of latent patches, one attention block.
//! The network predicts the clean latent; the velocity used for the loss and
//! the sampler is derived from it.

mod config;
mod experiment;
mod flow;
mod infer;
mod model;
mod params;
mod scene;
mod train;

pub use config::{Stage, ToyConfig};
pub use experiment::{
    counterfactual_experiment, CounterfactualConfig, CounterfactualRow, CounterfactualTable, COUNTERFACTUAL_ROWS,
};
pub use flow::{
    flow_matching_loss, flow_matching_loss_grad, image_tokens, token_features, tokens_image, velocity_from_clean,
    NoisedSample, MIN_VELOCITY_TIME,
};
pub use infer::{streaming_infer, streaming_infer_geometry, CleanKVCache, DenoiseStep, InferOptions, Rollout};
pub use model::{mix_seed, AttentionPlan, ForwardOutput, LayerKV, SelectionRule, SequenceInput, Tape, ToyModel};
pub use params::{
    load_checkpoint, manifest_path, save_checkpoint, Adam, LayerParams, Linear, ToyParams, CHECKPOINT_MAGIC,
};
pub use scene::{default_scene, frame_geometry, synth_scene_latents, FrameGeometry, SphereScene, SCENE_RADIUS_M};
pub use train::{
    frame_input, progressive_schedule, sample_noise, step_seed, teacher_forcing_mask, teacher_forcing_step,
    train_step, training_clip, write_loss_csv, Clip, LossRecord, StagePlan, StageSettings, StepOutput, TrainPlan,
};
