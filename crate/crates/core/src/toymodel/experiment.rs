use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::infer::{streaming_infer, InferOptions};
use super::model::{mix_seed, SelectionRule};
use super::scene::synth_scene_latents;
use super::ToyModel;
use crate::attention::SelectionStrategy;
use crate::geometry::EulerUE5;
use crate::trajgen::{gen_loop_closure, AxisSet, LoopClosureSpec, SignPolicy, StartState};
use crate::warp::{lce, RobustPhotometric};
use crate::{Error, Result};

/// Loop-closure rollouts compared across selection strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CounterfactualConfig {
    pub seeds: Vec<u64>,
    pub loop_frames: usize,
    pub loop_angle_deg: f64,
    /// Seeds on which the ordering must hold for a pass.
    pub required: usize,
}

impl Default for CounterfactualConfig {
    fn default() -> Self {
        Self {
            seeds: (0..10).collect(),
            loop_frames: 13,
            loop_angle_deg: 180.0,
            required: 8,
        }
    }
}

/// The three compared rollouts.
pub const COUNTERFACTUAL_ROWS: [(&str, SelectionRule); 3] = [
    ("Normal", SelectionRule::TopK),
    ("Random", SelectionRule::Counterfactual(SelectionStrategy::RandomSelection)),
    ("Exclude", SelectionRule::Counterfactual(SelectionStrategy::ExcludeSelected)),
];

/// Loop-closure error of one strategy on every seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualRow {
    pub name: String,
    pub lce: Vec<f64>,
}

impl CounterfactualRow {
    pub fn mean(&self) -> f64 {
        self.lce.iter().sum::<f64>() / self.lce.len().max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualTable {
    pub seeds: Vec<u64>,
    pub rows: Vec<CounterfactualRow>,
    /// Seeds with `Normal < Random < Exclude`.
    pub ordered: usize,
    pub required: usize,
}

impl CounterfactualTable {
    pub fn passed(&self) -> bool {
        self.ordered >= self.required
    }

    /// Per-seed ordering flags.
    pub fn ordering(&self) -> Vec<bool> {
        (0..self.seeds.len())
            .map(|s| self.rows[0].lce[s] < self.rows[1].lce[s] && self.rows[1].lce[s] < self.rows[2].lce[s])
            .collect()
    }

    /// `strategy,mean_lce,relative` rows, relative to the first row.
    pub fn to_csv(&self) -> String {
        let base = self.rows[0].mean();
        let mut s = String::from("strategy,mean_lce,relative_change\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:.6e},{:.6}\n", r.name, r.mean(), r.mean() / base - 1.0));
        }
        s
    }
}

impl fmt::Display for CounterfactualTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = self.rows[0].mean();
        writeln!(f, "{:<10}{:>14}{:>12}", "strategy", "mean LCE", "change")?;
        for r in &self.rows {
            writeln!(f, "{:<10}{:>14.6}{:>11.1}%", r.name, r.mean(), 100.0 * (r.mean() / base - 1.0))?;
        }
        write!(
            f,
            "ordering Normal < Random < Exclude on {}/{} seeds: {}",
            self.ordered,
            self.seeds.len(),
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

/// Rolls out a yaw loop per seed under each strategy with shared scene, start
/// pose and noise, and scores the returned frame against the first.
pub fn counterfactual_experiment(model: &ToyModel, config: &CounterfactualConfig) -> Result<CounterfactualTable> {
    if config.seeds.is_empty() {
        return Err(Error::Config("counterfactual experiment needs at least one seed".into()));
    }
    let mut rows: Vec<CounterfactualRow> = COUNTERFACTUAL_ROWS
        .iter()
        .map(|(name, _)| CounterfactualRow {
            name: name.to_string(),
            lce: Vec::new(),
        })
        .collect();
    let metric = RobustPhotometric::default();
    for &seed in &config.seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, 0xE7A1));
        let start = StartState {
            euler: EulerUE5::new(0.0, 0.0, rng.random_range(-180.0..180.0)),
            ..StartState::default()
        };
        let spec = LoopClosureSpec {
            angle_deg: config.loop_angle_deg,
            axes: AxisSet::YAW,
            frames: config.loop_frames,
            sign: SignPolicy::Positive,
        };
        let traj = gen_loop_closure(&spec, &start, seed)?;
        let latents = synth_scene_latents(&traj, mix_seed(seed, 0x5CE7E), &model.config)?;
        for (row, (_, rule)) in rows.iter_mut().zip(COUNTERFACTUAL_ROWS) {
            let rollout = streaming_infer(model, &latents[0], &traj, &InferOptions::new(rule, mix_seed(seed, 0x1F)))?;
            let last = rollout.frames.last().expect("non-empty rollout");
            row.lce.push(lce(&latents[0], last, &metric)?);
        }
    }
    let mut table = CounterfactualTable {
        seeds: config.seeds.clone(),
        rows,
        ordered: 0,
        required: config.required,
    };
    table.ordered = table.ordering().iter().filter(|&&o| o).count();
    Ok(table)
}
