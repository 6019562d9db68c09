mod commands;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use omnistereo_core::Error;

/// Omnidirectional stereo depth from multi-camera panoramas.
#[derive(Debug, Parser)]
#[command(name = "omnistereo", version)]
struct Cli {
    /// Worker threads. Falls back to OMNISTEREO_THREADS, then to one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProjectionArg {
    Cassini,
    Erp,
    Cylindrical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InterpArg {
    Nearest,
    Bilinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CostArg {
    Census,
    Sad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Toggle {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DepthModel {
    Cylindrical,
    Spherical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MetricKind {
    Disparity,
    Depth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Colormap {
    Turbo,
    Gray,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Layout {
    Square,
    Triangle,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Reproject a panorama to another projection, optionally rotated.
    Convert(ConvertArgs),
    /// Rectify one camera pair of a rig into cylindrical left/right images.
    Rectify(RectifyArgs),
    /// Convert Cassini angular ground-truth disparity to cylindrical pixels.
    GtConvert(GtConvertArgs),
    /// Match a rectified pair into disparity and confidence maps.
    Match(MatchArgs),
    /// Convert disparity to Euclidean depth.
    ToDepth(ToDepthArgs),
    /// Forward-warp a Cassini depth map into another camera.
    ReprojectDepth(ReprojectArgs),
    /// Confidence-weighted fusion of aligned depth maps.
    Fuse(FuseArgs),
    /// Compare a prediction with ground truth.
    Eval(EvalArgs),
    /// Run circular axial attention over a feature map.
    Attn(AttnArgs),
    /// Write random or neutral attention parameters.
    AttnParams(AttnParamsArgs),
    /// Render a float map to a colormapped PNG.
    Viz(VizArgs),
    /// Render the built-in analytic scene from a rig.
    Synth(SynthArgs),
    /// Run every stage on a rig and fuse into the reference camera.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub to: ProjectionArg,
    /// Source projection; inferred from the aspect ratio when omitted.
    #[arg(long)]
    pub from: Option<ProjectionArg>,
    /// Roll, pitch and yaw in radians, applied to the viewing rays.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub rot: Option<Vec<f64>>,
    #[arg(long, default_value = "bilinear")]
    pub interp: InterpArg,
}

#[derive(Debug, Args)]
pub struct RectifyArgs {
    #[arg(long)]
    pub rig: PathBuf,
    /// Two camera ids, left first.
    #[arg(long, value_delimiter = ',', required = true)]
    pub pair: Vec<String>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GtConvertArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub baseline: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub left: PathBuf,
    #[arg(long)]
    pub right: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub baseline: f64,
    #[arg(long)]
    pub max_disp: Option<usize>,
    #[arg(long, default_value = "census")]
    pub cost: CostArg,
    /// Matching window side.
    #[arg(long, default_value_t = 7)]
    pub window: usize,
    /// Box aggregation window side; 0 or 1 disables aggregation.
    #[arg(long, default_value_t = 5)]
    pub aggregation: usize,
    /// Add horizontal smoothing, as the pipeline does.
    #[arg(long)]
    pub smooth: bool,
    #[arg(long, default_value = "off")]
    pub attn: Toggle,
    /// Attention parameters; identity attention when omitted.
    #[arg(long)]
    pub attn_params: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ToDepthArgs {
    #[arg(long)]
    pub disp: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    pub baseline: f64,
    #[arg(long)]
    pub projection: DepthModel,
    #[arg(long)]
    pub out: PathBuf,
    /// Drop cylindrical pixels farther than this from the plane normal to
    /// the baseline, degrees.
    #[arg(long)]
    pub max_elevation: Option<f64>,
    /// Cylindrical confidence to resample next to the depth.
    #[arg(long, requires = "conf_out")]
    pub conf: Option<PathBuf>,
    #[arg(long, requires = "conf")]
    pub conf_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReprojectArgs {
    #[arg(long)]
    pub depth: PathBuf,
    /// `x,y,z`, `x,y,z,qw,qx,qy,qz`, `rig.json#camera-id` or a JSON file
    /// with `rotation` and `translation`.
    #[arg(long, allow_hyphen_values = true)]
    pub src_pose: String,
    #[arg(long, allow_hyphen_values = true)]
    pub ref_pose: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, requires = "conf_out")]
    pub conf: Option<PathBuf>,
    #[arg(long, requires = "conf")]
    pub conf_out: Option<PathBuf>,
    /// Footprint splat scale; 0 splats single pixels.
    #[arg(long, default_value_t = 1.0)]
    pub splat: f64,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Alternating depth and confidence maps.
    #[arg(long, value_delimiter = ',', required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// Pixels where this map is finite and nonzero are evaluated.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    #[arg(long, default_value = "depth")]
    pub kind: MetricKind,
    /// Restrict to the central band a cylinder can see.
    #[arg(long)]
    pub band: bool,
    /// Print JSON instead of `key value` lines.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    /// Feature map, `w * d` samples wide.
    #[arg(long)]
    pub tensor: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also run the brute-force reference and report the largest difference.
    #[arg(long)]
    pub oracle: bool,
}

#[derive(Debug, Args)]
pub struct AttnParamsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub channels: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = 5)]
    pub span: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Half-width of the uniform weight distribution; 0 writes identity
    /// attention.
    #[arg(long, default_value_t = 0.5)]
    pub scale: f64,
    #[arg(long)]
    pub no_residual: bool,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "turbo")]
    pub cmap: Colormap,
    #[arg(long, allow_negative_numbers = true)]
    pub min: Option<f64>,
    #[arg(long, allow_negative_numbers = true)]
    pub max: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "square")]
    pub layout: Layout,
    /// ERP width; the height is half of it.
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    /// Supersampling per axis.
    #[arg(long, default_value_t = 3)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub rig: PathBuf,
    /// Fused Cassini depth of the reference camera.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the fused depth as ERP.
    #[arg(long)]
    pub erp_out: Option<PathBuf>,
    /// Cassini ground-truth depth to evaluate against.
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Largest elevation from the plane normal to a pair's baseline, degrees.
    #[arg(long, default_value_t = 45.0)]
    pub max_elevation: f64,
    #[arg(long)]
    pub json: bool,
}

/// Exit code and greppable tag for an error.
fn classify(e: &Error) -> (u8, &'static str) {
    match e {
        Error::InvalidArgument(_) => (2, "usage"),
        Error::Format { .. } => (3, "format"),
        Error::Io(_) => (3, "io"),
        Error::Shape(_) => (3, "shape"),
        Error::Domain(_) => (4, "domain"),
    }
}

fn fail(code: u8, tag: &str, msg: &str) -> ExitCode {
    let line = msg.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
    eprintln!("omnistereo: error[{tag}]: {line}");
    ExitCode::from(code)
}

fn thread_count(flag: Option<usize>) -> Result<usize, String> {
    if let Some(n) = flag {
        return if n > 0 { Ok(n) } else { Err("--threads must be positive".into()) };
    }
    match std::env::var("OMNISTEREO_THREADS") {
        Ok(s) => match s.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(format!("OMNISTEREO_THREADS must be a positive integer, got '{s}'")),
        },
        Err(_) => Ok(0),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            return fail(2, "usage", first);
        }
    };
    let threads = match thread_count(cli.threads) {
        Ok(n) => n,
        Err(msg) => return fail(2, "usage", &msg),
    };
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(threads).build() {
        Ok(p) => p,
        Err(e) => return fail(4, "runtime", &e.to_string()),
    };
    let result = pool.install(|| match cli.command {
        Command::Convert(a) => commands::convert(&a),
        Command::Rectify(a) => commands::rectify(&a),
        Command::GtConvert(a) => commands::gt_convert(&a),
        Command::Match(a) => commands::match_pair(&a),
        Command::ToDepth(a) => commands::to_depth(&a),
        Command::ReprojectDepth(a) => commands::reproject_depth(&a),
        Command::Fuse(a) => commands::fuse(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Attn(a) => commands::attn(&a),
        Command::AttnParams(a) => commands::attn_params(&a),
        Command::Viz(a) => commands::viz(&a),
        Command::Synth(a) => commands::synth(&a),
        Command::Pipeline(a) => commands::pipeline(&a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, tag) = classify(&e);
            fail(code, tag, &e.to_string())
        }
    }
}
