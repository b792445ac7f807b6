use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "eqflow", version, about = "Infer dynamics that keep a pattern distribution fixed")]
pub struct Cli {
    /// key=value file; flags given on the command line win
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// one seed for the whole run
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// worker threads for the parallel parts
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Sample a dataset from one of the built-in systems.
    GenData(GenData),
    /// Train a denoiser and save it as a score model.
    TrainScore(TrainScore),
    /// Train one or more velocity networks against a score model.
    TrainFlow(TrainFlow),
    /// Training-free Gray-Scott recovery with the rotation kernel.
    Recover(Recover),
    /// Integrate a trained flow from dataset samples.
    Rollout(Rollout),
    /// Similarity tables, preservation curves and Lyapunov exponents.
    Eval(Eval),
    /// Scatter a sprite, learn its score and roll out a skew dynamics.
    Alife(Alife),
}

#[derive(Args, Debug)]
pub struct GenData {
    /// ring, two-gaussians, two-moons, lorenz or gray-scott
    #[arg(long)]
    pub system: String,
    /// gray-scott preset: life, wave, spirals or maze
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, default_value_t = 4096)]
    pub n: usize,
    /// side of the square gray-scott grid
    #[arg(long, default_value_t = 64)]
    pub grid: usize,
    #[arg(long, default_value_t = 4000)]
    pub burn_in: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainScore {
    #[arg(long)]
    pub data: PathBuf,
    /// eps or v; defaults to eps for vectors and v for grids
    #[arg(long)]
    pub objective: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// hidden widths of the dense denoiser, comma separated
    #[arg(long, default_value = "128,128,128")]
    pub hidden: String,
    #[arg(long, default_value_t = 4)]
    pub pe_levels: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainFlow {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub score: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub alpha: f64,
    /// fd, hutch or exact
    #[arg(long, default_value = "fd")]
    pub div: String,
    /// probes per point for hutch
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// finite-difference step for fd
    #[arg(long, default_value_t = 1e-3)]
    pub h: f64,
    #[arg(long, default_value_t = 2000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value = "128,128,128")]
    pub hidden: String,
    #[arg(long, default_value_t = 4)]
    pub pe_levels: usize,
    /// train this many models, seeds `seed..seed+seeds`
    #[arg(long, default_value_t = 1)]
    pub seeds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Recover {
    #[arg(long)]
    pub score: PathBuf,
    /// the dataset the score was trained on (fixes the standardization)
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub preset: String,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.90)]
    pub alpha: f64,
    /// both, 1 or -1
    #[arg(long, default_value = "both", allow_hyphen_values = true)]
    pub gamma: String,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    /// simulator steps behind the ground-truth change
    #[arg(long, default_value_t = 50)]
    pub gs_steps: usize,
    #[arg(long, default_value_t = 4000)]
    pub burn_in: usize,
    /// random-kernel baselines rolled out with the same noise
    #[arg(long, default_value_t = 0)]
    pub baselines: usize,
    #[arg(long, default_value_t = 50)]
    pub every: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Rollout {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// particles, taken from the start of the dataset
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long, default_value_t = 10)]
    pub every: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Eval {
    #[arg(long)]
    pub data: PathBuf,
    /// trained flow models; repeat the flag
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// analytic ground truth to compare against (lorenz)
    #[arg(long)]
    pub system: Option<String>,
    /// random networks built like the first model
    #[arg(long, default_value_t = 5)]
    pub baselines: usize,
    #[arg(long, default_value_t = 512)]
    pub probes: usize,
    /// also write the MMD preservation curve
    #[arg(long)]
    pub curve: bool,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    #[arg(long, default_value_t = 10)]
    pub every: usize,
    /// particles for the curve
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    /// also estimate the largest Lyapunov exponent of every field
    #[arg(long)]
    pub lyapunov: bool,
    #[arg(long, default_value_t = 50_000)]
    pub horizon: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Alife {
    /// RGBA sprite
    #[arg(long)]
    pub pattern: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub canvas: usize,
    #[arg(long, default_value_t = 256)]
    pub scenes: usize,
    /// placement attempts per scene are `patterns * attempts`
    #[arg(long, default_value_t = 24)]
    pub patterns: usize,
    #[arg(long, default_value_t = 2)]
    pub attempts: usize,
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// spatial radius of the random skew kernel
    #[arg(long, default_value_t = 1)]
    pub radius: usize,
    #[arg(long, default_value_t = 0.1)]
    pub eta: f64,
    #[arg(long, default_value_t = 0.90)]
    pub alpha: f64,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.01)]
    pub dt: f64,
    #[arg(long, default_value_t = 25)]
    pub every: usize,
    #[arg(long)]
    pub out: PathBuf,
}
