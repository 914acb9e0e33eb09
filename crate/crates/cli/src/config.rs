//! Effective run configuration: defaults, then the JSON config file, then flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use viewrope::toymodel::{CounterfactualConfig, ToyConfig, TrainPlan};
use viewrope::trajgen::{ActionSamplerConfig, AxisSet, SignPolicy};

use crate::error::{CliError, CliResult};

/// Serializes a `Display`/`FromStr` type as its string form.
pub mod as_string {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<T: Display, S: Serializer>(v: &T, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(v)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<T, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        String::deserialize(d)?.parse().map_err(de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum TrajKind {
    /// Rotate away and back.
    Loop,
    /// Randomly sampled action segments.
    Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenTrajConfig {
    pub kind: TrajKind,
    pub angle_deg: f64,
    #[serde(with = "as_string")]
    pub axes: AxisSet,
    pub frames: usize,
    pub sign: SignPolicy,
    pub seed: u64,
    pub start_yaw_deg: f64,
    pub start_pitch_deg: f64,
    pub start_roll_deg: f64,
    pub start_pos_cm: [f64; 3],
    pub fov_h_deg: f64,
    pub fps: u32,
    /// Resample to this many frames with fixed endpoints.
    pub resample: Option<usize>,
    pub sampler: ActionSamplerConfig,
    pub output: Option<PathBuf>,
}

impl Default for GenTrajConfig {
    fn default() -> Self {
        Self {
            kind: TrajKind::Loop,
            angle_deg: 90.0,
            axes: AxisSet::YAW,
            frames: 61,
            sign: SignPolicy::Positive,
            seed: 0,
            start_yaw_deg: 0.0,
            start_pitch_deg: 0.0,
            start_roll_deg: 0.0,
            start_pos_cm: [0.0; 3],
            fov_h_deg: 60.0,
            fps: 30,
            resample: None,
            sampler: ActionSamplerConfig::default(),
            output: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum AttendMode {
    Dense,
    Sparse,
    Sliding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttendConfig {
    pub mode: AttendMode,
    /// Key blocks (frames) of a random instance.
    pub blocks: usize,
    pub block_size: usize,
    pub heads: usize,
    pub dim: usize,
    pub k: usize,
    pub sample_count: usize,
    pub window: usize,
    pub seed: u64,
    /// JSON tensors instead of a random instance.
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub heatmap: Option<PathBuf>,
}

impl Default for AttendConfig {
    fn default() -> Self {
        Self {
            mode: AttendMode::Sparse,
            blocks: 8,
            block_size: 16,
            heads: 2,
            dim: 16,
            k: 3,
            sample_count: 8,
            window: 2,
            seed: 0,
            input: None,
            output: None,
            heatmap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalLcConfig {
    pub trajectory: Option<PathBuf>,
    pub frames_dir: Option<PathBuf>,
    pub depths_dir: Option<PathBuf>,
    /// Revisit threshold; has no default.
    pub eps: Option<f64>,
    pub lambda: f64,
    pub huber_delta: f64,
    pub occlusion_tolerance: f64,
    pub output: Option<PathBuf>,
}

impl Default for EvalLcConfig {
    fn default() -> Self {
        let p = viewrope::warp::LoopClosureParams::new(0.0);
        Self {
            trajectory: None,
            frames_dir: None,
            depths_dir: None,
            eps: None,
            lambda: p.translation_weight,
            huber_delta: p.huber_delta,
            occlusion_tolerance: p.occlusion_tolerance,
            output: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainToyConfig {
    pub model: ToyConfig,
    pub plan: TrainPlan,
    pub init_seed: u64,
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferToyConfig {
    pub checkpoint: Option<PathBuf>,
    pub experiment: CounterfactualConfig,
    pub out_dir: Option<PathBuf>,
    /// Exit with an error when the ordering check fails.
    pub require_order: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub frames: Vec<usize>,
    pub k: usize,
    pub block_size: usize,
    pub heads: usize,
    pub dim: usize,
    pub sample_count: usize,
    pub repeats: usize,
    pub seed: u64,
    pub output: Option<PathBuf>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            frames: vec![8, 16, 32, 64, 128],
            k: 5,
            block_size: 16,
            heads: 2,
            dim: 32,
            sample_count: 8,
            repeats: 3,
            seed: 0,
            output: None,
        }
    }
}

/// All subcommand settings in one document.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub gen_traj: GenTrajConfig,
    pub attend: AttendConfig,
    pub eval_lc: EvalLcConfig,
    pub train_toy: TrainToyConfig,
    pub infer_toy: InferToyConfig,
    pub bench: BenchConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
