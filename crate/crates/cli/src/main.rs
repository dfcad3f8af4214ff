/// `println!` that stops quietly when stdout is closed (e.g. piped into `head`).
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use freqpde::pipeline::PipelineConfig;
use freqpde::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "freqpde", version, about = "Multi-view depth pipeline: pyramid fusion, depth head, positional embedding, depth losses")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Configuration file plus flag overrides; flags win.
#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// JSON pipeline configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Weight bundle; when absent, weights are generated from the seed.
    #[arg(long, global = true)]
    weights: Option<PathBuf>,
    /// Seed for generated weights.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Generate all-zero weights instead of seeded ones.
    #[arg(long, global = true)]
    zero_weights: bool,
    #[arg(long, global = true)]
    alpha: Option<f64>,
    #[arg(long, global = true)]
    beta: Option<f64>,
    #[arg(long, global = true)]
    omega: Option<f64>,
    /// Width-attention mask ratio.
    #[arg(long, global = true)]
    mu: Option<f64>,
    #[arg(long, global = true)]
    bins: Option<usize>,
    #[arg(long, global = true)]
    attractors: Option<usize>,
    #[arg(long, global = true)]
    d_min: Option<f64>,
    #[arg(long, global = true)]
    d_max: Option<f64>,
    /// Positional-embedding channels.
    #[arg(long, global = true)]
    pe_channels: Option<usize>,
    #[arg(long, global = true)]
    lambda_s: Option<f64>,
    #[arg(long, global = true)]
    lambda_m: Option<f64>,
    #[arg(long, global = true)]
    lambda_1: Option<f64>,
    #[arg(long, global = true)]
    lambda_2: Option<f64>,
    #[arg(long, global = true)]
    lambda_3: Option<f64>,
}

impl ConfigArgs {
    pub fn resolve(&self) -> Result<PipelineConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let bad = |e: serde_json::Error| Error::Format(format!("config {}: {e}", p.display()));
                let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(p)?).map_err(bad)?;
                // written configs carry the format version
                if let Some(map) = v.as_object_mut() {
                    map.remove("version");
                }
                serde_json::from_value(v).map_err(bad)?
            }
            None => PipelineConfig::default(),
        };
        macro_rules! set {
            ($flag:ident => $($field:tt)+) => {
                if let Some(v) = self.$flag {
                    c.$($field)+ = v;
                }
            };
        }
        set!(seed => weight_seed);
        set!(alpha => csdp.alpha);
        set!(beta => csdp.beta);
        set!(omega => csdp.omega);
        set!(mu => csdp.mu);
        set!(bins => csdp.num_bins);
        set!(attractors => csdp.num_attractors);
        set!(d_min => csdp.d_min);
        set!(d_max => csdp.d_max);
        set!(pe_channels => pe.channels);
        set!(lambda_s => loss.lambda_s);
        set!(lambda_m => loss.lambda_m);
        set!(lambda_1 => loss.lambda_1);
        set!(lambda_2 => loss.lambda_2);
        set!(lambda_3 => loss.lambda_3);
        if self.zero_weights {
            c.zero_weights = true;
        }
        c.csdp.validate()?;
        c.loss.validate()?;
        Ok(c)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic rig: features, calibration, LiDAR cloud, pseudo depth.
    Synth(SynthArgs),
    /// Write the weight bundle for a rig geometry.
    Weights(WeightsArgs),
    /// Fuse feature pyramids top-down.
    Fspe(FspeArgs),
    /// Predict per-level, per-camera depth maps.
    Depth(DepthArgs),
    /// Positional depth embeddings and depth-aware features.
    Pe(PeArgs),
    /// Project a LiDAR cloud to sparse depth targets and report coverage.
    Project(ProjectArgs),
    /// Projected-point coverage over resolutions and strides.
    Coverage(CoverageArgs),
    /// Depth losses, optionally with a finite-difference gradient check.
    Loss(LossArgs),
    /// Run the invariant suite.
    Selftest(SelftestArgs),
    /// Run the whole synthetic pipeline in memory and print its digest.
    Pipeline(PipelineArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// Finest grid height.
    #[arg(long)]
    height: Option<usize>,
    /// Finest grid width.
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    cameras: Option<usize>,
    /// Seed of the generated data (weights use --seed).
    #[arg(long)]
    data_seed: Option<u64>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct WeightsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    levels: usize,
    #[arg(long)]
    channels: usize,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct FspeArgs {
    /// Directory of `cam{j}_level{l}.fpde` files (level 0 coarsest).
    #[arg(long, conflicts_with = "level")]
    rig: Option<PathBuf>,
    /// Level files of one camera, coarsest first.
    #[arg(long = "level", num_args = 1..)]
    level: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Stride of the finest level; defaults to 1 for single files, or is
    /// derived from the calibration when given.
    #[arg(long)]
    finest_stride: Option<f64>,
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct DepthArgs {
    /// Directory of fused `cam{j}_level{l}.fpde` features.
    #[arg(long)]
    rig: PathBuf,
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum LevelChoice {
    All,
    Finest,
}

#[derive(Args, Debug)]
pub struct PeArgs {
    /// Directory of `depth_cam{j}_level{l}.fpde` maps.
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    calibration: PathBuf,
    /// Fused features to add the embedding to; without it only embeddings are written.
    #[arg(long)]
    rig: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Depth levels fused into one embedding.
    #[arg(long, value_enum, default_value = "all")]
    depth_levels: LevelChoice,
    /// Feature levels that receive an embedding.
    #[arg(long, value_enum, default_value = "finest")]
    feature_levels: LevelChoice,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct ProjectArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Stride of the target grid relative to the native image.
    #[arg(long, default_value_t = 4.0)]
    stride: f64,
    /// Coverage resolutions as WIDTHxHEIGHT, comma separated; defaults to native.
    #[arg(long, value_delimiter = ',')]
    resolutions: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [4.0, 8.0, 16.0])]
    strides: Vec<f64>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct CoverageArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long)]
    calibration: PathBuf,
    #[arg(long, value_delimiter = ',')]
    resolutions: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [4.0, 8.0, 16.0])]
    strides: Vec<f64>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct LossArgs {
    /// Predicted depth maps, one per level.
    #[arg(long, num_args = 1.., required = true)]
    pred: Vec<PathBuf>,
    /// Sparse target JSON files, one per prediction.
    #[arg(long, num_args = 1..)]
    target: Vec<PathBuf>,
    /// Raw pseudo relative-depth maps, one per prediction.
    #[arg(long, num_args = 1..)]
    pseudo: Vec<PathBuf>,
    /// External sampling-loss value.
    #[arg(long)]
    samp: Option<f64>,
    /// External regression-loss value.
    #[arg(long)]
    reg: Option<f64>,
    /// Average over levels instead of summing.
    #[arg(long)]
    mean_levels: bool,
    #[arg(long)]
    grad_check: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

#[derive(Args, Debug)]
pub struct SelftestArgs {
    #[arg(long, default_value_t = freqpde::selftest::DEFAULT_SEED)]
    test_seed: u64,
    /// Also write the JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    cameras: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    /// Write the pipeline report here.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    cfg: ConfigArgs,
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("FREQPDE_THREADS") else { return Ok(()) };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidParam(format!("FREQPDE_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidParam(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Weights(a) => commands::weights(&a),
        Command::Fspe(a) => commands::fspe(&a),
        Command::Depth(a) => commands::depth(&a),
        Command::Pe(a) => commands::pe(&a),
        Command::Project(a) => commands::project(&a),
        Command::Coverage(a) => commands::coverage(&a),
        Command::Loss(a) => commands::loss(&a),
        Command::Selftest(a) => commands::selftest(&a),
        Command::Pipeline(a) => commands::pipeline(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::from(if e.is_numerical() { 2 } else { 1 })
        }
    }
}
