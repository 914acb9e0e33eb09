use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::flow::{flow_matching_loss_grad, image_tokens, token_features, velocity_from_clean, NoisedSample};
use super::model::{mix_seed, AttentionPlan, SelectionRule, SequenceInput};
use super::scene::{frame_geometry, synth_scene_latents, FrameGeometry};
use super::{Adam, Stage, ToyConfig, ToyModel, ToyParams, MIN_VELOCITY_TIME};
use crate::attention::BlockMask;
use crate::geometry::{EulerUE5, RayField};
use crate::trajgen::{gen_loop_closure, AxisSet, LoopClosureSpec, SignPolicy, StartState, TrajectoryRecord};
use crate::viewrope::{EncodingFlags, RopePosition};
use crate::warp::Image;
use crate::{Error, Result};

/// Encoding and attention switches of one training step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageSettings {
    pub stage: Stage,
    pub viewrope: bool,
    pub sparse: bool,
}

impl StageSettings {
    pub fn for_stage(stage: Stage) -> Self {
        Self {
            stage,
            viewrope: stage.viewrope(),
            sparse: stage.sparse(),
        }
    }

    /// Rejects switches that the stage has not unlocked yet.
    pub fn validate(&self) -> Result<()> {
        if self.viewrope && !self.stage.viewrope() {
            return Err(Error::Config(format!("view encoding is not enabled in stage {}", self.stage)));
        }
        if self.sparse && !self.stage.sparse() {
            return Err(Error::Config(format!("sparse attention is not enabled in stage {}", self.stage)));
        }
        Ok(())
    }

    pub fn flags(&self) -> EncodingFlags {
        EncodingFlags {
            rope: true,
            viewrope: self.viewrope,
        }
    }

    pub fn rule(&self) -> SelectionRule {
        if self.sparse {
            SelectionRule::TopK
        } else {
            SelectionRule::Dense
        }
    }
}

/// Latent frames of one posed clip.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub latents: Vec<Image>,
    pub geometry: FrameGeometry,
}

impl Clip {
    pub fn new(traj: &[TrajectoryRecord], scene_seed: u64, config: &ToyConfig) -> Result<Self> {
        Ok(Self {
            latents: synth_scene_latents(traj, scene_seed, config)?,
            geometry: frame_geometry(traj, config)?,
        })
    }

    pub fn len(&self) -> usize {
        self.latents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.latents.is_empty()
    }
}

/// Random loop-closure clip over a fresh scene: out and back by 60..180 degrees,
/// usually pure yaw.
pub fn training_clip(config: &ToyConfig, frames: usize, seed: u64) -> Result<Clip> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let axes = if rng.random_bool(0.7) {
        AxisSet::YAW
    } else {
        let all = AxisSet::all_subsets();
        all[rng.random_range(0..all.len())]
    };
    let spec = LoopClosureSpec {
        angle_deg: rng.random_range(60.0..=180.0),
        axes,
        frames,
        sign: SignPolicy::Random,
    };
    let start = StartState {
        euler: EulerUE5::new(rng.random_range(-15.0..15.0), 0.0, rng.random_range(-180.0..180.0)),
        ..StartState::default()
    };
    let traj = gen_loop_closure(&spec, &start, mix_seed(seed, 1))?;
    Clip::new(&traj, mix_seed(seed, 2), config)
}

/// Query tokens of one frame.
pub fn frame_input(latents: &DMatrix<f64>, t: f64, frame: usize, field: &RayField) -> SequenceInput {
    let cols = field.grid.cols;
    SequenceInput {
        features: token_features(latents, t),
        positions: (0..field.len())
            .map(|p| RopePosition::new(frame, p / cols, p % cols))
            .collect(),
        rotations: field.rotations_world.clone(),
    }
}

/// Block mask over `[clean frames; noised frames]`: clean frame `i` sees clean
/// frames `≤ i`; noised frame `i` sees clean frames `< i` and itself.
pub fn teacher_forcing_mask(frames: usize) -> BlockMask {
    BlockMask::from_fn(2 * frames, 2 * frames, |i, j| {
        if i < frames {
            j <= i
        } else {
            j < i - frames || j == i
        }
    })
}

/// Draws noise and a per-frame noise level from `{1/s, 2/s, …, 1}`.
pub fn sample_noise(clip: &Clip, steps: usize, seed: u64) -> Result<Vec<NoisedSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    clip.latents
        .iter()
        .map(|img| {
            let clean = image_tokens(img);
            let noise = DMatrix::from_fn(clean.nrows(), clean.ncols(), |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z
            });
            let t = rng.random_range(1..=steps) as f64 / steps as f64;
            NoisedSample::new(clean, noise, t)
        })
        .collect()
}

/// Loss, gradients and the block masks used in every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub loss: f64,
    pub grads: ToyParams,
    pub masks: Vec<BlockMask>,
    pub attention_macs: u64,
}

/// Teacher-forced flow-matching step over a clip: clean and noised streams in
/// one sequence, loss on the noised stream.
pub fn teacher_forcing_step(
    model: &ToyModel,
    clip: &Clip,
    samples: &[NoisedSample],
    settings: StageSettings,
    seed: u64,
) -> Result<StepOutput> {
    settings.validate()?;
    let frames = clip.len();
    if frames < 2 {
        return Err(Error::Parameter("teacher forcing needs at least 2 frames".into()));
    }
    if samples.len() != frames || clip.geometry.fields.len() != frames {
        return Err(Error::Dimension(format!(
            "{frames} frames, {} samples, {} ray fields",
            samples.len(),
            clip.geometry.fields.len()
        )));
    }
    let fields = &clip.geometry.fields;
    let clean: Vec<SequenceInput> = samples
        .iter()
        .enumerate()
        .map(|(f, s)| frame_input(&s.clean, 0.0, f, &fields[f]))
        .collect();
    let noised: Vec<SequenceInput> = samples
        .iter()
        .enumerate()
        .map(|(f, s)| frame_input(&s.noised, s.t, f, &fields[f]))
        .collect();
    let parts: Vec<&SequenceInput> = clean.iter().chain(&noised).collect();
    let input = SequenceInput::concat(&parts);
    let plan = AttentionPlan {
        allowed: teacher_forcing_mask(frames),
        rule: settings.rule(),
        flags: settings.flags(),
        seed,
    };
    let out = model.forward(&input, None, &plan, true)?;

    let b = model.config.block_size();
    let c = model.config.channels;
    let offset = frames * b;
    let mut d_x0 = DMatrix::zeros(2 * frames * b, c);
    let mut loss = 0.0;
    for (f, s) in samples.iter().enumerate() {
        let rows = offset + f * b;
        let x0 = out.x0.rows(rows, b).into_owned();
        let pred = velocity_from_clean(&s.noised, &x0, s.t);
        let (l, d_pred) = flow_matching_loss_grad(&pred, &s.clean, &s.noise)?;
        loss += l / frames as f64;
        // pred = (Z_t − X̂₀)/max(t, floor)
        let scale = -1.0 / (frames as f64 * s.t.max(MIN_VELOCITY_TIME));
        d_x0.rows_mut(rows, b).copy_from(&(d_pred * scale));
    }
    let tape = out.tape.as_ref().expect("tape requested");
    let grads = model.backward(tape, &d_x0)?;
    Ok(StepOutput {
        loss,
        grads,
        masks: out.masks,
        attention_macs: out.attention_macs,
    })
}

/// One stage of a progressive run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagePlan {
    pub stage: Stage,
    pub steps: usize,
    pub clip_frames: usize,
}

/// Ordered stages plus optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainPlan {
    pub stages: Vec<StagePlan>,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            stages: vec![
                StagePlan {
                    stage: Stage::TeacherForcing,
                    steps: 150,
                    clip_frames: 6,
                },
                StagePlan {
                    stage: Stage::PlusViewRope,
                    steps: 600,
                    clip_frames: 8,
                },
                StagePlan {
                    stage: Stage::PlusSparse,
                    steps: 600,
                    clip_frames: 8,
                },
                StagePlan {
                    stage: Stage::LongContext,
                    steps: 200,
                    clip_frames: 12,
                },
            ],
            lr: 2e-3,
            seed: 0,
        }
    }
}

impl TrainPlan {
    /// Stages must be non-empty and strictly increasing; clips need at least 2 frames.
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("training plan has no stages".into()));
        }
        for w in self.stages.windows(2) {
            if w[1].stage <= w[0].stage {
                return Err(Error::Config(format!(
                    "stage {} cannot follow stage {}",
                    w[1].stage, w[0].stage
                )));
            }
        }
        if let Some(s) = self.stages.iter().find(|s| s.clip_frames < 2) {
            return Err(Error::Config(format!("stage {} uses clips of {} frames", s.stage, s.clip_frames)));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.steps).sum()
    }
}

/// One row of the loss curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: usize,
    pub stage: Stage,
    pub loss: f64,
}

/// Seed of global step `step` in a run seeded with `seed`.
pub fn step_seed(seed: u64, step: usize) -> u64 {
    mix_seed(seed, step as u64)
}

/// One optimizer step on a freshly drawn clip.
pub fn train_step(model: &mut ToyModel, opt: &mut Adam, settings: StageSettings, frames: usize, seed: u64) -> Result<f64> {
    let clip = training_clip(&model.config, frames, mix_seed(seed, 10))?;
    let samples = sample_noise(&clip, model.config.denoise_steps, mix_seed(seed, 11))?;
    let out = teacher_forcing_step(model, &clip, &samples, settings, mix_seed(seed, 12))?;
    opt.step(&mut model.params, &out.grads);
    Ok(out.loss)
}

/// Runs the stages in order, switching the view encoding, sparsity and clip
/// length as each stage starts. `progress` sees every loss record.
pub fn progressive_schedule(
    model: &mut ToyModel,
    plan: &TrainPlan,
    mut progress: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>> {
    plan.validate()?;
    let mut opt = Adam::new(&model.params, plan.lr);
    let mut curve = Vec::with_capacity(plan.total_steps());
    let mut step = 0;
    for sp in &plan.stages {
        model.config.stage = sp.stage;
        model.config.clip_frames = sp.clip_frames;
        let settings = StageSettings::for_stage(sp.stage);
        for _ in 0..sp.steps {
            let loss = train_step(model, &mut opt, settings, sp.clip_frames, step_seed(plan.seed, step))?;
            let rec = LossRecord {
                step,
                stage: sp.stage,
                loss,
            };
            progress(&rec);
            curve.push(rec);
            step += 1;
        }
    }
    Ok(curve)
}

/// Writes `step,stage,loss` rows.
pub fn write_loss_csv(curve: &[LossRecord], mut w: impl Write) -> Result<()> {
    writeln!(w, "step,stage,loss")?;
    for r in curve {
        writeln!(w, "{},{},{:e}", r.step, r.stage, r.loss)?;
    }
    Ok(())
}
