use std::path::PathBuf;

use cardiosim_core::diffusion::ScheduleKind;
use cardiosim_core::Lead;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "cardiosim", version, about = "Physiology-constrained ECG simulation toolkit")]
pub struct Cli {
    /// Also write the run manifest JSON to this path.
    #[arg(long, global = true)]
    pub manifest: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Integrate the three-equation simulator and write a lead CSV.
    Simulate(SimulateArgs),
    /// Fit simulator parameters to one lead of a beat crop.
    Calibrate(CalibrateArgs),
    /// Detect R-peaks and crop one beat from a 12-lead recording.
    BeatExtract(BeatExtractArgs),
    /// Evaluate a physiology loss on a 12-lead beat.
    Loss(LossArgs),
    /// Top-k admission retrieval and conditioning report.
    Retrieve(RetrieveArgs),
    /// Signal-level and embedding-level evaluation metrics.
    Metrics(MetricsArgs),
    /// Tabulate a diffusion noise schedule.
    Schedule(ScheduleArgs),
    /// Ancestral sampling with an exact-noise oracle on a simulated beat.
    DiffuseDemo(DiffuseDemoArgs),
}

fn parse_lead(s: &str) -> Result<Lead, String> {
    s.parse().map_err(|e: cardiosim_core::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<ScheduleKind, String> {
    s.parse().map_err(|e: cardiosim_core::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Parameter registry JSON; the built-in `default` class when omitted.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    pub class: String,
    /// Single lead to emit; all twelve when omitted.
    #[arg(long, value_parser = parse_lead)]
    pub lead: Option<Lead>,
    /// Override the registry heart rate (bpm).
    #[arg(long)]
    pub hr: Option<f64>,
    #[arg(long, default_value_t = 500.0)]
    pub fs: f64,
    /// Seconds of output after burn-in.
    #[arg(long, default_value_t = 10.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 1.0)]
    pub burn_in: f64,
    /// Euler sub-steps per output sample.
    #[arg(long, default_value_t = 8)]
    pub sub_steps: usize,
    /// Multiply every output sample by this factor.
    #[arg(long, default_value_t = 1.0)]
    pub gain: f64,
    /// Emit one R-centred beat crop instead of a continuous recording.
    #[arg(long)]
    pub beat: bool,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Beat CSV with one lead column (or several plus --lead).
    #[arg(long)]
    pub beat: PathBuf,
    #[arg(long, value_parser = parse_lead)]
    pub lead: Option<Lead>,
    #[arg(long, default_value = "default")]
    pub class: String,
    #[arg(long, default_value_t = 500.0)]
    pub fs: f64,
    /// Calibration config JSON; defaults for missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Registry to start from and append the fitted entry to.
    #[arg(long)]
    pub registry: Option<PathBuf>,
    /// Result JSON; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BeatExtractArgs {
    /// 12-lead signal CSV.
    #[arg(long)]
    pub signal: PathBuf,
    #[arg(long)]
    pub fs: Option<f64>,
    /// `{"fs": ...}` sidecar used when --fs is absent.
    #[arg(long)]
    pub fs_sidecar: Option<PathBuf>,
    /// Lead used for R-peak detection.
    #[arg(long, value_parser = parse_lead, default_value = "II")]
    pub lead: Lead,
    /// Which in-bounds beat to crop, counting from zero.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    /// Beat CSV output.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LossKind {
    Euler,
    Interlead,
    Spectral,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(value_enum)]
    pub kind: LossKind,
    /// 12-lead beat CSV.
    #[arg(long)]
    pub beat: PathBuf,
    #[arg(long)]
    pub registry: Option<PathBuf>,
    #[arg(long, default_value = "default")]
    pub class: String,
    #[arg(long, default_value_t = 500.0)]
    pub fs: f64,
    /// Comma-separated reference beat CSVs for the spectral loss.
    #[arg(long, value_delimiter = ',')]
    pub crops: Vec<PathBuf>,
    /// Spectral config JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Divide the inter-lead sum by 6 (L_c - 1).
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    /// Profiles JSONL.
    #[arg(long)]
    pub index: PathBuf,
    /// Query JSON: a profile plus optional age, sex, hr, original_diagnoses.
    #[arg(long)]
    pub query: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Diagnosis, medication and procedure weights.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Pairs manifest JSON of real/generated signal CSVs.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 500.0)]
    pub fs: f64,
    #[arg(long, value_parser = parse_lead, default_value = "II")]
    pub hr_lead: Lead,
    /// Generated-sample embeddings CSV.
    #[arg(long)]
    pub gen_emb: Option<PathBuf>,
    /// Real-sample embeddings CSV.
    #[arg(long)]
    pub real_emb: Option<PathBuf>,
    /// Two-column CSV of (generated, real) text-signal similarities.
    #[arg(long)]
    pub clip_sims: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PlotFormat {
    Svg,
}

#[derive(Debug, Args)]
pub struct ScheduleArgs {
    #[arg(long, value_parser = parse_kind, default_value = "linear")]
    pub kind: ScheduleKind,
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    #[arg(long, default_value_t = 8.5e-4)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 1.2e-2)]
    pub beta_end: f64,
    /// Series CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub plot: Option<PlotFormat>,
    #[arg(long, requires = "plot")]
    pub plot_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DiffuseDemoArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    #[arg(long, value_parser = parse_kind, default_value = "linear")]
    pub kind: ScheduleKind,
    #[arg(long, default_value_t = 8.5e-4)]
    pub beta_start: f64,
    #[arg(long, default_value_t = 1.2e-2)]
    pub beta_end: f64,
    #[arg(long, default_value_t = 500.0)]
    pub fs: f64,
    /// Per-step CSV; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
