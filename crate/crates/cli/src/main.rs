use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use featpose::registration::Window;
use featpose::RegistrationConfig;

mod bench;
mod commands;
mod plot;

#[derive(Parser, Debug)]
#[command(name = "featpose", version, about = "Camera pose estimation against a template feature field")]
struct Cli {
    /// Worker threads (0 = one per core).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a template field and a labeled dataset of rendered instances.
    Synth(SynthArgs),
    /// Render a pose bank from a template field.
    Bank(BankArgs),
    /// Estimate camera poses for feature maps.
    Estimate(EstimateArgs),
    /// Evaluate the estimator on a labeled dataset.
    Evaluate(EvaluateArgs),
    /// Convert raw feature maps to 3-channel maps.
    Ingest(IngestArgs),
    /// Time the pipeline stages.
    Bench(BenchArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RegArgs {
    /// Polish each match with a local warped-MSE search.
    #[arg(long)]
    pub refine: bool,
    /// Log-polar samples, radial x angular.
    #[arg(long, default_value = "128x128", value_parser = parse_pair)]
    pub log_polar: (usize, usize),
    /// Disable the radial Hann taper on the log-polar spectra.
    #[arg(long)]
    pub no_window: bool,
}

impl RegArgs {
    pub fn config(&self) -> RegistrationConfig {
        RegistrationConfig {
            refine: self.refine,
            log_polar_size: self.log_polar,
            window: if self.no_window { Window::None } else { Window::Hann },
            ..RegistrationConfig::default()
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Azimuth mixture as mean:std:weight in degrees, comma separated, or "uniform".
    #[arg(long, default_value = "90:15:0.5,270:15:0.5")]
    pub peaks: String,
    /// Instance variation in [0, 1].
    #[arg(long, default_value_t = 0.3)]
    pub strength: f64,
    /// Override the colour amplitude implied by --strength.
    #[arg(long)]
    pub color_strength: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::PartId)]
    pub mode: ModeArg,
    /// Image side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Elevation range in degrees.
    #[arg(long, default_value = "85,95", value_parser = parse_range)]
    pub phi_range: (f64, f64),
    /// In-plane rotation std in degrees.
    #[arg(long, default_value_t = 0.0)]
    pub gamma_std: f64,
    /// Camera distance range.
    #[arg(long, default_value = "3,3", value_parser = parse_range)]
    pub r_range: (f64, f64),
    /// Use an existing TFF1 template instead of generating one.
    #[arg(long)]
    pub template: Option<PathBuf>,
    /// Voxel lattice size of the generated template.
    #[arg(long, default_value_t = 32)]
    pub grid: usize,
    /// Also write a PNG per entry, normalized by the dataset value range.
    #[arg(long)]
    pub png: bool,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    PartId,
    ColorCopy,
    GrayCopy,
}

impl From<ModeArg> for featpose::synth::FeatureMode {
    fn from(m: ModeArg) -> Self {
        use featpose::synth::FeatureMode;
        match m {
            ModeArg::PartId => FeatureMode::PartId,
            ModeArg::ColorCopy => FeatureMode::ColorCopy,
            ModeArg::GrayCopy => FeatureMode::GrayCopy,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// 36 x 3 bins, elevation 85-95 degrees.
    Narrow,
    /// 36 x 18 bins over the full elevation range.
    Shapenet,
}

#[derive(Args, Debug)]
pub struct BankArgs {
    /// Template field (TFF1).
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Preset::Narrow)]
    pub preset: Preset,
    #[arg(long)]
    pub n_theta: Option<usize>,
    #[arg(long)]
    pub n_phi: Option<usize>,
    /// Camera distance of every bank pose.
    #[arg(long, default_value_t = 3.0)]
    pub r: f64,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    /// Vertical field of view in degrees.
    #[arg(long, default_value_t = 45.0)]
    pub fov: f64,
    /// Samples per ray.
    #[arg(long, default_value_t = 64)]
    pub samples: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum EstimateMode {
    Argmax,
    Sample,
}

#[derive(Args, Debug)]
pub struct EstimateArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// Query feature maps (TFM1).
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = EstimateMode::Argmax)]
    pub mode: EstimateMode,
    #[arg(long, default_value_t = 100.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write every input's full distribution as CSV.
    #[arg(long)]
    pub dump_pdf: Option<PathBuf>,
    #[command(flatten)]
    pub reg: RegArgs,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub bank: PathBuf,
    /// Dataset manifest.csv.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory for report.json, entries.csv and the histogram plots.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 100.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 24)]
    pub theta_bins: usize,
    #[arg(long, default_value_t = 12)]
    pub phi_bins: usize,
    /// Skip the PNG plots.
    #[arg(long)]
    pub no_plots: bool,
    #[command(flatten)]
    pub reg: RegArgs,
}

#[derive(Args, Debug)]
pub struct IngestArgs {
    /// Raw feature maps: u32 height, width, channels (little-endian) then f32 HWC data.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// One raw 1-channel mask per input, in order.
    #[arg(long = "mask")]
    pub masks: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Keep 3-channel inputs as they are.
    #[arg(long)]
    pub no_pca: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
    /// Image side length for bank renders and queries.
    #[arg(long, default_value_t = 48)]
    pub size: usize,
    /// Bank grids for the render-time rows.
    #[arg(long, default_value = "12x6,36x18,60x30", value_delimiter = ',', value_parser = parse_pair)]
    pub presets: Vec<(usize, usize)>,
    /// Steps per axis of the naive scale/rotation grid.
    #[arg(long, default_value_t = 256)]
    pub naive_steps: usize,
    #[arg(long)]
    pub skip_naive: bool,
    /// CSV destination (stdout when omitted).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_pair(s: &str) -> Result<(usize, usize), String> {
    let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected AxB, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("{v:?}: {e}"));
    Ok((p(a)?, p(b)?))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or_else(|| format!("expected LO,HI, got {s:?}"))?;
    let p = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let (lo, hi) = (p(a)?, p(b)?);
    if lo > hi {
        return Err(format!("range {lo},{hi} is decreasing"));
    }
    Ok((lo, hi))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: cannot start worker pool: {e}");
            return ExitCode::FAILURE;
        }
    };
    let result = pool.install(|| match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Bank(a) => commands::bank(&a),
        Command::Estimate(a) => commands::estimate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
        Command::Ingest(a) => commands::ingest(&a),
        Command::Bench(a) => bench::run(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
