use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use hfl_core::{candidates, eval, features::InterpMode, semlabel, spectral};

#[derive(Debug, Parser)]
#[command(
    name = "hfl",
    version,
    about = "Boundary detection from deep feature stacks",
    arg_required_else_help = true
)]
pub struct Cli {
    /// Worker threads; 1 is the reference behavior.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub jobs: u64,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert a raster between PGM and HFLT.
    Convert(ConvertArgs),
    /// Select candidate boundary points from an image or an edge map.
    Candidates(CandidatesArgs),
    /// Interpolate per-candidate descriptors from a feature stack.
    Describe(DescribeArgs),
    /// Train the regressor head with balancing and hard-positive mining.
    Train(TrainArgs),
    /// Fit a ridge linear probe over descriptors.
    Probe(ProbeArgs),
    /// Run the full detector on one image.
    Detect(DetectArgs),
    /// Boundary benchmark: ODS, OIS, AP.
    Eval(EvalArgs),
    /// Per-class semantic boundary benchmark.
    EvalSem(EvalSemArgs),
    /// Segmentation intersection over union.
    EvalIou(EvalIouArgs),
    /// Object proposal recall.
    EvalProposals(EvalProposalsArgs),
    /// Intervening-contour spectral embedding of a boundary map.
    Spectral(SpectralArgs),
    /// Attach class labels to boundary pixels.
    Label(LabelArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Interp {
    Bilinear,
    Uniform4,
}

impl From<Interp> for InterpMode {
    fn from(m: Interp) -> Self {
        match m {
            Interp::Bilinear => InterpMode::Bilinear,
            Interp::Uniform4 => InterpMode::Uniform4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum GtModeArg {
    Any,
    Consensus,
}

impl From<GtModeArg> for eval::GtMode {
    fn from(m: GtModeArg) -> Self {
        match m {
            GtModeArg::Any => eval::GtMode::Any,
            GtModeArg::Consensus => eval::GtMode::Consensus,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IouModeArg {
    #[value(name = "per-pixel", alias = "pp")]
    PerPixel,
    #[value(name = "per-image", alias = "pi")]
    PerImage,
}

impl From<IouModeArg> for eval::IouMode {
    fn from(m: IouModeArg) -> Self {
        match m {
            IouModeArg::PerPixel => eval::IouMode::PerPixel,
            IouModeArg::PerImage => eval::IouMode::PerImage,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum NeighborhoodArg {
    Euclidean,
    Chebyshev,
}

impl From<NeighborhoodArg> for spectral::Neighborhood {
    fn from(m: NeighborhoodArg) -> Self {
        match m {
            NeighborhoodArg::Euclidean => spectral::Neighborhood::Euclidean,
            NeighborhoodArg::Chebyshev => spectral::Neighborhood::Chebyshev,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LineArg {
    Bresenham,
    Supercover,
}

impl From<LineArg> for spectral::LineMode {
    fn from(m: LineArg) -> Self {
        match m {
            LineArg::Bresenham => spectral::LineMode::Bresenham,
            LineArg::Supercover => spectral::LineMode::Supercover,
        }
    }
}

/// `HxW`, e.g. `481x321` is 481 rows by 321 columns.
pub fn parse_dims(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected HxW, got {s:?}"))?;
    let h: usize = h.trim().parse().map_err(|_| format!("bad height in {s:?}"))?;
    let w: usize = w.trim().parse().map_err(|_| format!("bad width in {s:?}"))?;
    if h == 0 || w == 0 {
        return Err(format!("dims must be positive, got {s:?}"));
    }
    Ok((h, w))
}

fn parse_setting(s: &str) -> Result<(String, String), String> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| format!("expected key=value, got {s:?}"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

#[derive(Debug, Args)]
pub struct ConvertArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Format follows the extension: `.pgm` or anything else for HFLT.
    #[arg(long)]
    pub output: PathBuf,
    /// PGM quantization level.
    #[arg(long, default_value_t = 255, value_parser = clap::value_parser!(u8).range(1..))]
    pub maxval: u8,
}

#[derive(Debug, Args)]
pub struct CandidatesArgs {
    /// Grayscale image (PGM or HFLT).
    #[arg(long)]
    pub image: PathBuf,
    /// External edge map to use instead of the gradient proxy.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long, default_value_t = candidates::DEFAULT_THRESHOLD)]
    pub threshold: f32,
    #[arg(long, default_value_t = candidates::DEFAULT_MAX_COUNT)]
    pub max: usize,
    /// Candidate CSV (`x,y,score`).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the thinned candidate map.
    #[arg(long)]
    pub map_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    /// Feature-stack manifest.
    #[arg(long)]
    pub stack: PathBuf,
    #[arg(long)]
    pub candidates: PathBuf,
    /// Frame of the candidate coordinates; defaults to the stack input frame.
    #[arg(long, value_parser = parse_dims)]
    pub candidate_dims: Option<(usize, usize)>,
    #[arg(long, value_enum, default_value_t = Interp::Bilinear)]
    pub mode: Interp,
    /// Require this many stack channels.
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
    /// Annotations `[K,H,W]` in the candidate frame, for agreement labels.
    #[arg(long, requires = "labels_out")]
    pub gt: Option<PathBuf>,
    /// Label CSV written when `--gt` is given.
    #[arg(long, requires = "gt")]
    pub labels_out: Option<PathBuf>,
    /// Agreement radius in pixels.
    #[arg(long, default_value_t = eval::DEFAULT_AGREEMENT_TOL)]
    pub agree_tol: f32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Descriptor matrices, one per image.
    #[arg(long, num_args = 1.., required = true)]
    pub descriptors: Vec<PathBuf>,
    /// Label CSVs, paired with `--descriptors` in order.
    #[arg(long, num_args = 1.., required = true)]
    pub labels: Vec<PathBuf>,
    /// Fraction of samples held out for hard-positive mining.
    #[arg(long, default_value_t = 0.2)]
    pub holdout_frac: f64,
    /// Flat `key=value` training config.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_parser = parse_setting)]
    pub settings: Vec<(String, String)>,
    /// Output directory for the head.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub descriptors: Vec<PathBuf>,
    #[arg(long, num_args = 1.., required = true)]
    pub labels: Vec<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    /// Per-channel CSV (`channel,layer,weight,magnitude`).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub stack: PathBuf,
    /// Head directory written by `train`.
    #[arg(long)]
    pub head: PathBuf,
    /// Candidate CSV in the image frame, or an edge map replacing the gradient proxy.
    #[arg(long)]
    pub candidates: Option<PathBuf>,
    #[arg(long, default_value_t = candidates::DEFAULT_THRESHOLD)]
    pub threshold: f32,
    #[arg(long, default_value_t = candidates::DEFAULT_MAX_COUNT)]
    pub max: usize,
    #[arg(long, value_enum, default_value_t = Interp::Bilinear)]
    pub mode: Interp,
    /// Boundary map, `.pgm` or `.hflt`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted boundary maps, `<stem>.pgm` or `<stem>.hflt`.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Annotations, `<stem>.hflt` tensors `[K,H,W]`.
    #[arg(long)]
    pub gt_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = GtModeArg::Any)]
    pub mode: GtModeArg,
    /// Matching tolerance in pixels; defaults to 0.0075 of the image diagonal, rounded.
    #[arg(long)]
    pub tol: Option<f32>,
    /// Number of evenly spaced thresholds.
    #[arg(long, default_value_t = eval::DEFAULT_THRESHOLD_COUNT)]
    pub thresholds: usize,
    /// Metrics CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-image curves CSV.
    #[arg(long)]
    pub curves_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalSemArgs {
    /// Per-class boundary maps, `<stem>.hflt` tensors `[C,H,W]`.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Per-class annotations, `<stem>.hflt` tensors `[C,K,H,W]`.
    #[arg(long)]
    pub gt_dir: PathBuf,
    #[arg(long, value_enum, default_value_t = GtModeArg::Any)]
    pub mode: GtModeArg,
    #[arg(long)]
    pub tol: Option<f32>,
    #[arg(long, default_value_t = eval::DEFAULT_THRESHOLD_COUNT)]
    pub thresholds: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalIouArgs {
    /// Predicted label rasters, `<stem>.hflt` or `<stem>.pgm` holding class indices.
    #[arg(long)]
    pub pred_dir: PathBuf,
    #[arg(long)]
    pub gt_dir: PathBuf,
    /// Class count including background.
    #[arg(long)]
    pub classes: usize,
    #[arg(long, value_enum, default_value_t = IouModeArg::PerPixel)]
    pub mode: IouModeArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalProposalsArgs {
    /// Ranked proposals, `<stem>.csv` with `x0,y0,x1,y1` rows.
    #[arg(long)]
    pub pred_dir: PathBuf,
    /// Ground-truth boxes, `<stem>.csv`.
    #[arg(long)]
    pub gt_dir: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = eval::DEFAULT_PROPOSAL_IOUS)]
    pub ious: Vec<f64>,
    #[arg(long, default_value_t = eval::DEFAULT_PROPOSAL_BUDGET)]
    pub budget: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Recall at every proposal count.
    #[arg(long)]
    pub curves_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SpectralArgs {
    #[arg(long)]
    pub boundary: PathBuf,
    #[arg(long, default_value_t = spectral::DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = spectral::DEFAULT_RADIUS)]
    pub radius: usize,
    /// Explicit σ, overriding `--sigma-frac`.
    #[arg(long)]
    pub sigma: Option<f32>,
    #[arg(long, default_value_t = spectral::DEFAULT_SIGMA_FRAC)]
    pub sigma_frac: f32,
    #[arg(long, value_enum, default_value_t = NeighborhoodArg::Euclidean)]
    pub neighborhood: NeighborhoodArg,
    #[arg(long, value_enum, default_value_t = LineArg::Bresenham)]
    pub line: LineArg,
    /// Longest working-grid side; 0 keeps full resolution.
    #[arg(long, default_value_t = spectral::DEFAULT_DECIMATE_MAX)]
    pub decimate_max: usize,
    #[arg(long, default_value_t = spectral::DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = spectral::DEFAULT_MAX_ITER)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Exclude the trivial constant eigenvector.
    #[arg(long)]
    pub drop_trivial: bool,
    /// `[k,H,W]` tensor.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("classes").required(true).args(["probs", "seg"]))]
pub struct LabelArgs {
    #[arg(long)]
    pub boundary: PathBuf,
    /// Class probabilities `[C+1,H,W]`, channel 0 background.
    #[arg(long)]
    pub probs: Option<PathBuf>,
    /// Segmentation label raster.
    #[arg(long)]
    pub seg: Option<PathBuf>,
    #[arg(long, default_value_t = semlabel::DEFAULT_GRID)]
    pub grid: usize,
    #[arg(long, default_value_t = semlabel::DEFAULT_BTHRESH)]
    pub bthresh: f32,
    /// Label raster; the confidence raster goes beside it as `<stem>.confidence.hflt`.
    #[arg(long)]
    pub out: PathBuf,
}
