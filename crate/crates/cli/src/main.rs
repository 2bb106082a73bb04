mod analyze;
mod codec;
mod config;
mod eval;
mod failure;
mod train;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Parser, Subcommand};

use config::CliConfig;
use failure::{CmdResult, Failure};

#[derive(Parser, Debug)]
#[command(name = "rpc", version, about = "Recurrent progressive image codec")]
struct Cli {
    /// JSON settings file; flags take precedence over its values.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model and write checkpoints plus a loss log.
    Train(TrainArgs),
    /// Encode a PNG into a container.
    Compress(CompressArgs),
    /// Decode a container into a PNG.
    Decompress(DecompressArgs),
    /// Rate-distortion curves over a directory of PNGs.
    Eval(EvalArgs),
    /// Bjøntegaard delta between two `bpp,quality` CSV curves.
    Bd(BdArgs),
    /// Support formulas, the IIR priming model, or measured receptive fields.
    Analyze(AnalyzeArgs),
    /// Write a directory of synthetic PNG images.
    SynthCorpus(SynthArgs),
}

#[derive(clap::Args, Debug)]
pub struct TrainArgs {
    /// Hyperparameter preset the other values are layered on (default desk).
    #[arg(long, value_parser = ["desk", "paper-prime", "paper-diffusion"])]
    pub preset: Option<String>,
    /// Seed for initialization and patch sampling.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Total optimizer steps.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Adam learning rate.
    #[arg(long = "lr")]
    pub learning_rate: Option<f64>,
    /// Patches per step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Square patch side in pixels, a multiple of 16.
    #[arg(long)]
    pub patch_size: Option<usize>,
    /// Unrolled iterations per patch.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Priming steps before the first iteration.
    #[arg(long = "prime")]
    pub k_prime: Option<usize>,
    /// Diffusion steps before each later iteration.
    #[arg(long = "diffuse")]
    pub k_diffuse: Option<usize>,
    /// Directory of training PNGs.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Directory for checkpoints and loss.csv.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Steps between checkpoints.
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    /// Continue from this checkpoint; the loss log is appended to.
    #[arg(long, value_name = "PATH")]
    pub resume: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct CompressArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Trained model (`.rpck`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Iterations to store (the target iteration count with --sabr).
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Priming steps; defaults to the checkpoint's setting.
    #[arg(long)]
    pub prime: Option<usize>,
    /// Diffusion steps; defaults to the checkpoint's setting.
    #[arg(long)]
    pub diffuse: Option<usize>,
    /// Entropy-code the payload.
    #[arg(long)]
    pub entropy: bool,
    /// Allocate iterations per tile and store the height map.
    #[arg(long)]
    pub sabr: bool,
    /// Largest allowed worst 8x8 sub-tile mean absolute error per tile
    /// (pixel scale [0, 1]). Defaults to the mean at the target rate.
    #[arg(long, requires = "sabr")]
    pub target_quality: Option<f64>,
    /// Target iteration count for the allocation window.
    #[arg(long, requires = "sabr")]
    pub target_rate: Option<usize>,
    /// Also write the encoder's own reconstruction.
    #[arg(long, value_name = "PNG")]
    pub recon: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
pub struct DecompressArgs {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Model the stream was encoded with.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Priming steps used at encode time; defaults to the checkpoint's setting.
    #[arg(long)]
    pub prime: Option<usize>,
    /// Diffusion steps used at encode time; defaults to the checkpoint's setting.
    #[arg(long)]
    pub diffuse: Option<usize>,
}

#[derive(clap::Args, Debug)]
pub struct EvalArgs {
    /// Directory of PNGs to measure.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Trained model (`.rpck`).
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Any of nominal, entropy, sabr.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Any of psnr, ssim, msssim.
    #[arg(long, value_delimiter = ',')]
    pub metrics: Option<Vec<String>>,
    /// Largest iteration count measured; defaults to the model maximum.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Priming steps; defaults to the checkpoint's setting.
    #[arg(long)]
    pub prime: Option<usize>,
    /// Diffusion steps; defaults to the checkpoint's setting.
    #[arg(long)]
    pub diffuse: Option<usize>,
    /// Combined CSV; one `bpp,quality` file per curve is written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(clap::Args, Debug)]
#[command(group(ArgGroup::new("measure").args(["quality", "rate"])))]
pub struct BdArgs {
    pub reference: PathBuf,
    pub test: PathBuf,
    /// Average quality difference at equal rate (dB).
    #[arg(long)]
    pub quality: bool,
    /// Average rate difference at equal quality (percent, the default).
    #[arg(long)]
    pub rate: bool,
    /// Extrapolate the reference fit up to this bpp.
    #[arg(long, value_name = "BPP")]
    pub extend_reference: Option<f64>,
}

#[derive(clap::Args, Debug)]
#[command(group(ArgGroup::new("analysis").required(true).args(["support", "iir", "receptive_field"])))]
pub struct AnalyzeArgs {
    /// `t,k_prime,k_diffuse`
    #[arg(long, value_name = "T,KP,KD")]
    pub support: Option<String>,
    /// `n,a,t_max`
    #[arg(long, value_name = "N,A,TMAX")]
    pub iir: Option<String>,
    /// Measure how far one bit stack's influence spreads.
    #[arg(long)]
    pub receptive_field: bool,
    /// Model to probe; a seeded random desk model otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Last iteration (0-based) to measure.
    #[arg(long, default_value_t = 2)]
    pub t_max: usize,
    /// `flip` perturbs the stack; `gradient` follows straight-through derivatives.
    #[arg(long, default_value = "flip", value_parser = ["flip", "gradient"])]
    pub probe: String,
    /// Random probe images; the field is their union.
    #[arg(long, default_value_t = 1)]
    pub images: usize,
    /// Seed for probe images and the random model.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Priming steps.
    #[arg(long)]
    pub prime: Option<usize>,
    /// Diffusion steps.
    #[arg(long)]
    pub diffuse: Option<usize>,
}

#[derive(clap::Args, Debug)]
pub struct SynthArgs {
    pub dir: PathBuf,
    /// Number of images.
    #[arg(long, default_value_t = 16)]
    pub count: usize,
    /// Square side, or `HxW`.
    #[arg(long, default_value = "64")]
    pub size: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn configure_threads() -> CmdResult {
    let Ok(value) = std::env::var("RPC_THREADS") else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Config(format!("RPC_THREADS must be a positive integer, got {value:?}")))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(Failure::runtime)
}

fn run(cli: Cli) -> CmdResult {
    configure_threads()?;
    let config = CliConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => train::run(&config, a),
        Command::Compress(a) => codec::compress(&config, a),
        Command::Decompress(a) => codec::decompress(&config, a),
        Command::Eval(a) => eval::eval(&config, a),
        Command::Bd(a) => eval::bd(a),
        Command::Analyze(a) => analyze::analyze(&config, a),
        Command::SynthCorpus(a) => analyze::synth_corpus(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format(|buf, record| writeln!(buf, "[{}] {}", record.level().as_str().to_lowercase(), record.args()))
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("rpc: {failure}");
            ExitCode::from(failure.code())
        }
    }
}
