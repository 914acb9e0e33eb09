use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use viewrope::toymodel::{
    counterfactual_experiment, load_checkpoint, progressive_schedule, save_checkpoint, write_loss_csv,
    CounterfactualTable, Stage, ToyModel,
};

use crate::config::{InferToyConfig, TrainToyConfig};
use crate::error::{CliError, CliResult};
use crate::output::{write_file, write_json, Output};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const LOSS_FILE: &str = "loss.csv";

#[derive(Debug, Serialize)]
struct StageLoss {
    stage: Stage,
    steps: usize,
    mean_loss_last_50: f64,
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    checkpoint: PathBuf,
    loss_curve: PathBuf,
    stages: Vec<StageLoss>,
    seconds: f64,
}

fn out_dir(dir: &Option<PathBuf>, cmd: &str) -> CliResult<PathBuf> {
    let dir = dir
        .clone()
        .ok_or_else(|| CliError::Config(format!("{cmd} needs --out-dir")))?;
    std::fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    Ok(dir)
}

pub fn train(c: &TrainToyConfig, out: &Output) -> CliResult<()> {
    let dir = out_dir(&c.out_dir, "train-toy")?;
    let mut model = ToyModel::new(c.model.clone(), c.init_seed)?;
    let start = Instant::now();
    let total = c.plan.total_steps();
    let curve = progressive_schedule(&mut model, &c.plan, |r| {
        if (r.step + 1) % 100 == 0 || r.step + 1 == total {
            out.note(format!("step {}/{total} [{}] loss {:.4}", r.step + 1, r.stage, r.loss));
        }
    })?;
    let seconds = start.elapsed().as_secs_f64();

    let ckpt = dir.join(CHECKPOINT_FILE);
    save_checkpoint(&ckpt, &model.config, &model.params)?;
    let mut csv = Vec::new();
    write_loss_csv(&curve, &mut csv)?;
    let loss_path = dir.join(LOSS_FILE);
    write_file(&loss_path, csv)?;

    let stages: Vec<StageLoss> = c
        .plan
        .stages
        .iter()
        .map(|sp| {
            let losses: Vec<f64> = curve.iter().filter(|r| r.stage == sp.stage).map(|r| r.loss).collect();
            let tail = &losses[losses.len().saturating_sub(50)..];
            StageLoss {
                stage: sp.stage,
                steps: losses.len(),
                mean_loss_last_50: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
            }
        })
        .collect();
    let mut text = String::new();
    for s in &stages {
        text.push_str(&format!("{:<16} {:>5} steps  loss {:.4}\n", s.stage.as_str(), s.steps, s.mean_loss_last_50));
    }
    text.push_str(&format!(
        "trained in {seconds:.1} s\ncheckpoint {}\nloss curve {}",
        ckpt.display(),
        loss_path.display()
    ));
    out.emit(
        text,
        &TrainSummary {
            checkpoint: ckpt,
            loss_curve: loss_path,
            stages,
            seconds,
        },
    );
    Ok(())
}

pub fn load_model(path: &Path) -> CliResult<ToyModel> {
    let (config, params) = load_checkpoint(path)?;
    Ok(ToyModel { config, params })
}

#[derive(Debug, Serialize)]
struct InferSummary<'a> {
    table: &'a CounterfactualTable,
    ordering: Vec<bool>,
    passed: bool,
}

pub fn infer(c: &InferToyConfig, out: &Output) -> CliResult<()> {
    let ckpt = c
        .checkpoint
        .as_ref()
        .ok_or_else(|| CliError::Config("infer-toy needs --checkpoint".into()))?;
    let model = load_model(ckpt)?;
    let table = counterfactual_experiment(&model, &c.experiment)?;
    if let Some(dir) = &c.out_dir {
        write_file(&dir.join("counterfactual.csv"), table.to_csv())?;
        write_json(&dir.join("lce_report.json"), &table)?;
    }
    out.emit(
        &table,
        &InferSummary {
            table: &table,
            ordering: table.ordering(),
            passed: table.passed(),
        },
    );
    if c.require_order && !table.passed() {
        return Err(CliError::Check(format!(
            "ordering held on {} of {} seeds, {} required",
            table.ordered,
            table.seeds.len(),
            table.required
        )));
    }
    Ok(())
}
