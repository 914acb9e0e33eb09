//! `viewrope` command-line driver.

mod attend;
mod bench;
mod config;
mod error;
mod eval_lc;
mod gen_traj;
mod output;
mod toy;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use viewrope::trajgen::{AxisSet, SignPolicy};

use config::{AttendMode, RunConfig, TrajKind};
use error::{CliError, CliResult};
use output::Output;

#[derive(Debug, Parser)]
#[command(name = "viewrope", version, about = "View-aware rotary encoding toolkit")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Print the effective configuration as JSON and exit.
    #[arg(long, global = true)]
    print_config: bool,
    /// Emit a JSON summary on stdout instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a camera trajectory file.
    GenTraj(GenTrajArgs),
    /// Run dense, sparse or sliding-window block attention.
    Attend(AttendArgs),
    /// Loop-closure consistency of posed frames with depth.
    EvalLc(EvalLcArgs),
    /// Train the toy model with the progressive schedule.
    TrainToy(TrainToyArgs),
    /// Counterfactual loop-closure rollouts of a trained toy model.
    InferToy(InferToyArgs),
    /// Multiply-accumulate counts and timings of dense vs sparse attention.
    Bench(BenchArgs),
}

fn parse_axes(s: &str) -> Result<AxisSet, String> {
    s.parse().map_err(|e: viewrope::Error| e.to_string())
}

fn parse_sign(s: &str) -> Result<SignPolicy, String> {
    match s {
        "positive" => Ok(SignPolicy::Positive),
        "random" => Ok(SignPolicy::Random),
        _ => Err(format!("unknown sign policy `{s}` (positive|random)")),
    }
}

#[derive(Debug, Args)]
struct GenTrajArgs {
    #[arg(long, value_enum)]
    kind: Option<TrajKind>,
    /// Loop excursion in degrees.
    #[arg(long)]
    angle: Option<f64>,
    /// Axes to rotate, e.g. `yaw` or `yaw+pitch`.
    #[arg(long, value_parser = parse_axes)]
    axes: Option<AxisSet>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long, value_parser = parse_sign)]
    sign: Option<SignPolicy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    start_yaw: Option<f64>,
    #[arg(long)]
    start_pitch: Option<f64>,
    #[arg(long)]
    fov: Option<f64>,
    #[arg(long)]
    fps: Option<u32>,
    #[arg(long)]
    resample: Option<usize>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl GenTrajArgs {
    fn apply(self, c: &mut config::GenTrajConfig) {
        set(&mut c.kind, self.kind);
        set(&mut c.angle_deg, self.angle);
        set(&mut c.axes, self.axes);
        set(&mut c.frames, self.frames);
        set(&mut c.sign, self.sign);
        set(&mut c.seed, self.seed);
        set(&mut c.start_yaw_deg, self.start_yaw);
        set(&mut c.start_pitch_deg, self.start_pitch);
        set(&mut c.fov_h_deg, self.fov);
        set(&mut c.fps, self.fps);
        some(&mut c.resample, self.resample);
        some(&mut c.output, self.out);
    }
}

#[derive(Debug, Args)]
struct AttendArgs {
    #[arg(long, value_enum)]
    mode: Option<AttendMode>,
    /// Use a random instance (the default when no input is given).
    #[arg(long, conflicts_with = "input")]
    random: bool,
    /// JSON file with `block_size`, `heads`, `dim` and flat `q`, `k`, `v`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    blocks: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    /// Blocks selected per query block.
    #[arg(long)]
    k: Option<usize>,
    /// Sampled positions per block for the affinity estimate.
    #[arg(long = "Ks", visible_alias = "ks")]
    sample_count: Option<usize>,
    /// Sliding-window size.
    #[arg(short = 'w', long)]
    window: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the attention output as JSON.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Write the block affinity heatmap as CSV.
    #[arg(long)]
    heatmap: Option<PathBuf>,
}

impl AttendArgs {
    fn apply(self, c: &mut config::AttendConfig) {
        set(&mut c.mode, self.mode);
        if self.random {
            c.input = None;
        }
        some(&mut c.input, self.input);
        set(&mut c.blocks, self.blocks);
        set(&mut c.block_size, self.block_size);
        set(&mut c.heads, self.heads);
        set(&mut c.dim, self.dim);
        set(&mut c.k, self.k);
        set(&mut c.sample_count, self.sample_count);
        set(&mut c.window, self.window);
        set(&mut c.seed, self.seed);
        some(&mut c.output, self.out);
        some(&mut c.heatmap, self.heatmap);
    }
}

#[derive(Debug, Args)]
struct EvalLcArgs {
    /// Trajectory file (JSON lines).
    #[arg(long)]
    traj: Option<PathBuf>,
    /// Directory with `frame_NNNN.{vrkd,csv}` grids.
    #[arg(long)]
    frames: Option<PathBuf>,
    /// Directory with `depth_NNNN.{vrkd,csv}` grids; missing files skip their pairs.
    #[arg(long)]
    depths: Option<PathBuf>,
    /// Revisit threshold on the pose similarity.
    #[arg(long)]
    eps: Option<f64>,
    /// Translation weight of the pose similarity.
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    huber_delta: Option<f64>,
    #[arg(long)]
    occlusion_tolerance: Option<f64>,
    /// Write the report as JSON.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl EvalLcArgs {
    fn apply(self, c: &mut config::EvalLcConfig) {
        some(&mut c.trajectory, self.traj);
        some(&mut c.frames_dir, self.frames);
        some(&mut c.depths_dir, self.depths);
        some(&mut c.eps, self.eps);
        set(&mut c.lambda, self.lambda);
        set(&mut c.huber_delta, self.huber_delta);
        set(&mut c.occlusion_tolerance, self.occlusion_tolerance);
        some(&mut c.output, self.out);
    }
}

#[derive(Debug, Args)]
struct TrainToyArgs {
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Seed of the training data stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Seed of the weight initialization.
    #[arg(long)]
    init_seed: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    /// Steps per stage, comma separated, in plan order.
    #[arg(long, value_delimiter = ',')]
    stage_steps: Option<Vec<usize>>,
}

impl TrainToyArgs {
    fn apply(self, c: &mut config::TrainToyConfig) -> CliResult<()> {
        some(&mut c.out_dir, self.out_dir);
        set(&mut c.plan.seed, self.seed);
        set(&mut c.init_seed, self.init_seed);
        set(&mut c.plan.lr, self.lr);
        if let Some(steps) = self.stage_steps {
            if steps.len() != c.plan.stages.len() {
                return Err(CliError::Config(format!(
                    "{} step counts for {} stages",
                    steps.len(),
                    c.plan.stages.len()
                )));
            }
            for (s, n) in c.plan.stages.iter_mut().zip(steps) {
                s.steps = n;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
struct InferToyArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate seeds `0..N`.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    loop_frames: Option<usize>,
    #[arg(long)]
    loop_angle: Option<f64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Fail when the ordering check fails.
    #[arg(long)]
    require_order: bool,
}

impl InferToyArgs {
    fn apply(self, c: &mut config::InferToyConfig) {
        some(&mut c.checkpoint, self.checkpoint);
        if let Some(n) = self.seeds {
            c.experiment.seeds = (0..n).collect();
        }
        set(&mut c.experiment.loop_frames, self.loop_frames);
        set(&mut c.experiment.loop_angle_deg, self.loop_angle);
        some(&mut c.out_dir, self.out_dir);
        c.require_order |= self.require_order;
    }
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Frame counts (key blocks), comma separated.
    #[arg(long, value_delimiter = ',')]
    frames: Option<Vec<usize>>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    heads: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Write the table as CSV.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

impl BenchArgs {
    fn apply(self, c: &mut config::BenchConfig) {
        set(&mut c.frames, self.frames);
        set(&mut c.k, self.k);
        set(&mut c.block_size, self.block_size);
        set(&mut c.heads, self.heads);
        set(&mut c.dim, self.dim);
        set(&mut c.repeats, self.repeats);
        set(&mut c.seed, self.seed);
        some(&mut c.output, self.out);
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn some<T>(slot: &mut Option<T>, value: Option<T>) {
    if value.is_some() {
        *slot = value;
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("VIEWROPE_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("VIEWROPE_THREADS=`{raw}` is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))
}

#[derive(Debug, Clone, Copy)]
enum Task {
    GenTraj,
    Attend,
    EvalLc,
    TrainToy,
    InferToy,
    Bench,
}

fn run(cli: Cli) -> CliResult<()> {
    configure_threads()?;
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let task = match cli.command {
        Command::GenTraj(a) => {
            a.apply(&mut cfg.gen_traj);
            Task::GenTraj
        }
        Command::Attend(a) => {
            a.apply(&mut cfg.attend);
            Task::Attend
        }
        Command::EvalLc(a) => {
            a.apply(&mut cfg.eval_lc);
            Task::EvalLc
        }
        Command::TrainToy(a) => {
            a.apply(&mut cfg.train_toy)?;
            Task::TrainToy
        }
        Command::InferToy(a) => {
            a.apply(&mut cfg.infer_toy);
            Task::InferToy
        }
        Command::Bench(a) => {
            a.apply(&mut cfg.bench);
            Task::Bench
        }
    };
    if cli.print_config {
        println!("{}", cfg.to_json());
        return Ok(());
    }
    let out = Output::new(cli.json);
    match task {
        Task::GenTraj => gen_traj::run(&cfg.gen_traj, &out),
        Task::Attend => attend::run(&cfg.attend, &out),
        Task::EvalLc => eval_lc::run(&cfg.eval_lc, &out),
        Task::TrainToy => toy::train(&cfg.train_toy, &out),
        Task::InferToy => toy::infer(&cfg.infer_toy, &out),
        Task::Bench => bench::run(&cfg.bench, &out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
