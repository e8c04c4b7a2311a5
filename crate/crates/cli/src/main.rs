//! `corrdepth` command-line front end.
//!
//! Every stage reads its inputs from files and writes its outputs to files;
//! `pipeline` runs the same stage functions through files in its output
//! directory, so chaining the subcommands by hand gives identical bytes.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

use corrdepth::correlation::{build_correlation_volume, build_pyramid, FusionStrategy, LookupConfig};
use corrdepth::io::{self, names, WeightSet};
use corrdepth::metrics::{compute_metrics, MetricsRecord};
use corrdepth::refine::{refine_loop, refine_with_gru, GruWeights, OracleUpdater, RefineConfig};
use corrdepth::synthscene::{context_pyramid, make_scene, scene_features, SceneParams, SurfaceKind, DEFAULT_FEATURE_DIM};
use corrdepth::triangulation::{flow_from_correlation, init_depth_from_flows};
use corrdepth::upsample::{upsample_depth, ContextPyramid, DffmWeights, CONTEXT_CHANNELS};
use corrdepth::Error;

/// Entry-name prefix of the update operator in a weight file.
const GRU_PREFIX: &str = "gru.";
/// Entry-name prefix of the upsampler in a weight file.
const DFFM_PREFIX: &str = "dffm.";

/// File names written by `synth` and `pipeline`.
mod files {
    pub const CAMERAS: &str = "cameras.txt";
    pub const FEATURES: &str = "features.corw";
    pub const CONTEXT: &str = "context.corw";
    pub const GT: &str = "gt.pfm";
    pub const GT_LOW: &str = "gt_low.pfm";
    pub const CORRELATION: &str = "correlation.corw";
    pub const FLOWS: &str = "flows.corw";
    pub const INIT: &str = "init.pfm";
    pub const REFINED: &str = "refined.pfm";
    pub const DEPTH: &str = "depth.pfm";
}

/// Full-resolution scale over the feature grid.
const UPSAMPLE_FACTOR: usize = 8;

#[derive(Parser)]
#[command(name = "corrdepth", version, about = "Correlation-guided multi-view depth estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scene: cameras, features, context and ground truth.
    Synth(SynthArgs),
    /// Build correlation pyramids from reference and source features.
    Corr(CorrArgs),
    /// Integer flows from the level-0 correlation argmax.
    Flow(FlowArgs),
    /// Initial depth by triangulating flows.
    Init(InitArgs),
    /// Iterative depth refinement at feature resolution.
    Refine(RefineArgs),
    /// Upsample a feature-resolution depth map to full resolution.
    Upsample(UpsampleArgs),
    /// Compare a predicted depth map with ground truth.
    Eval(EvalArgs),
    /// synth, corr, flow, init, refine, upsample and eval in one run.
    Pipeline(PipelineArgs),
}

#[derive(Args, Clone)]
struct SceneArgs {
    #[arg(long, default_value = "plane", value_parser = parse_surface)]
    surface: SurfaceKind,
    /// Number of source views.
    #[arg(long, default_value_t = 4)]
    views: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Feature-grid height.
    #[arg(long, default_value_t = 48)]
    height: usize,
    /// Feature-grid width.
    #[arg(long, default_value_t = 64)]
    width: usize,
    /// Feature channels.
    #[arg(long, default_value_t = DEFAULT_FEATURE_DIM)]
    dim: usize,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    scene: SceneArgs,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CorrArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FlowArgs {
    /// Correlation pyramids written by `corr`.
    #[arg(long)]
    corr: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long)]
    flows: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum UpdaterKind {
    Gru,
    Oracle,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ReportFormat {
    Text,
    Structured,
}

#[derive(Args, Clone)]
struct RefineOptions {
    #[arg(long, default_value_t = 3)]
    radius: usize,
    #[arg(long, default_value_t = 12)]
    iters: usize,
    #[arg(long, default_value = "averaging", value_parser = parse_fusion)]
    fusion: FusionStrategy,
    #[arg(long, default_value_t = 4)]
    levels: usize,
    #[arg(long, value_enum, default_value_t = UpdaterKind::Oracle)]
    updater: UpdaterKind,
}

#[derive(Args)]
struct RefineArgs {
    #[arg(long)]
    corr: PathBuf,
    #[arg(long)]
    cameras: PathBuf,
    /// Initial depth (PFM).
    #[arg(long)]
    init: PathBuf,
    /// Context maps; the GRU uses the feature-resolution map.
    #[arg(long)]
    context: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[command(flatten)]
    options: RefineOptions,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct UpsampleArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    context: PathBuf,
    /// Upsampler weights; zero weights (plain bilinear) when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    report: ReportFormat,
}

#[derive(Args)]
struct PipelineArgs {
    #[command(flatten)]
    scene: SceneArgs,
    #[command(flatten)]
    options: RefineOptions,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
    report: ReportFormat,
    /// Directory for intermediate and final files.
    #[arg(long)]
    out: PathBuf,
}

fn parse_surface(s: &str) -> Result<SurfaceKind, String> {
    SurfaceKind::from_str(s).map_err(|e| e.to_string())
}

fn parse_fusion(s: &str) -> Result<FusionStrategy, String> {
    FusionStrategy::from_str(s).map_err(|e| e.to_string())
}

/// CLI failure: a library error or a bad flag combination.
enum Failure {
    Usage(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Core(e) => match e {
                Error::Config(_) => 2,
                Error::Parse { .. } | Error::Io { .. } => 3,
                Error::Shape(_) | Error::Index { .. } => 4,
                Error::DegenerateGeometry(_) => 5,
                _ => 1,
            },
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Usage(m) => m.clone(),
            Failure::Core(e) => e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|source| {
        Failure::Core(Error::Io {
            path: dir.display().to_string(),
            source,
        })
    })
}

fn synth(args: &SynthArgs) -> CliResult<()> {
    let s = &args.scene;
    let params = SceneParams {
        height: s.height,
        width: s.width,
        ..SceneParams::default()
    };
    let scene = make_scene(s.surface, params, s.views, s.seed)?;
    let (reference, sources) = scene_features(&scene, s.dim, s.seed)?;
    let context = context_pyramid(&scene, CONTEXT_CHANNELS, s.seed)?;
    create_dir(&args.out)?;
    io::write_rig(&args.out.join(files::CAMERAS), scene.rig())?;
    io::write_weights(&args.out.join(files::FEATURES), &io::features_to_set(&reference, &sources)?)?;
    let mut ctx = WeightSet::new();
    for scale in 1..=3 {
        ctx.insert(names::context(scale), io::feature_to_tensor(context.level(scale)))?;
    }
    io::write_weights(&args.out.join(files::CONTEXT), &ctx)?;
    io::write_depth(&args.out.join(files::GT_LOW), scene.reference_depth())?;
    io::write_depth(&args.out.join(files::GT), &scene.reference_depth_at_scale(UPSAMPLE_FACTOR)?)?;
    Ok(())
}

fn corr(args: &CorrArgs) -> CliResult<()> {
    let (reference, sources) = io::features_from_set(&io::read_weights(&args.features)?)?;
    let pyramids = sources
        .iter()
        .map(|s| build_pyramid(build_correlation_volume(&reference, s)?, args.levels))
        .collect::<corrdepth::Result<Vec<_>>>()?;
    io::write_weights(&args.out, &io::pyramids_to_set(&pyramids)?)?;
    Ok(())
}

fn flow(args: &FlowArgs) -> CliResult<()> {
    let pyramids = io::pyramids_from_set(&io::read_weights(&args.corr)?)?;
    let flows = pyramids
        .iter()
        .map(|p| flow_from_correlation(p.level(0)))
        .collect::<corrdepth::Result<Vec<_>>>()?;
    io::write_weights(&args.out, &io::flows_to_set(&flows)?)?;
    Ok(())
}

fn init(args: &InitArgs) -> CliResult<()> {
    let flows = io::flows_from_set(&io::read_weights(&args.flows)?)?;
    let rig = io::read_rig(&args.cameras)?;
    io::write_depth(&args.out, &init_depth_from_flows(&flows, &rig)?)?;
    Ok(())
}

fn read_context(path: &Path) -> CliResult<ContextPyramid> {
    let set = io::read_weights(path)?;
    let level = |scale| io::feature_from_tensor(set.require(&names::context(scale))?);
    Ok(ContextPyramid::new(level(1)?, level(2)?, level(3)?)?)
}

fn refine(args: &RefineArgs) -> CliResult<()> {
    let o = &args.options;
    let cfg = RefineConfig {
        iterations: o.iters,
        lookup: LookupConfig {
            radius: o.radius,
            levels: o.levels,
        },
        fusion: o.fusion,
        ..RefineConfig::default()
    };
    let pyramids = io::pyramids_from_set(&io::read_weights(&args.corr)?)?;
    let rig = io::read_rig(&args.cameras)?;
    let d0 = io::read_depth(&args.init)?;
    let iterates = match o.updater {
        UpdaterKind::Oracle => refine_loop(&d0, &pyramids, &rig, &mut OracleUpdater::new(), &cfg)?,
        UpdaterKind::Gru => {
            let path = args
                .weights
                .as_ref()
                .ok_or_else(|| Failure::Usage("the gru updater needs --weights".into()))?;
            let weights = GruWeights::from_set(&io::read_weights(path)?, GRU_PREFIX)?;
            let context = args.context.as_deref().map(read_context).transpose()?;
            refine_with_gru(&d0, &pyramids, &rig, context.as_ref().map(|c| c.level(3)), &weights, &cfg)?
        }
    };
    let last = iterates.last().cloned().unwrap_or(d0);
    io::write_depth(&args.out, &last)?;
    Ok(())
}

fn upsample(args: &UpsampleArgs) -> CliResult<()> {
    let depth = io::read_depth(&args.depth)?;
    let context = read_context(&args.context)?;
    let weights = match &args.weights {
        Some(path) => {
            let set = io::read_weights(path)?;
            if set.contains_prefix(DFFM_PREFIX) {
                DffmWeights::from_set(&set, DFFM_PREFIX)?
            } else {
                DffmWeights::zeros(context.channels())
            }
        }
        None => DffmWeights::zeros(context.channels()),
    };
    io::write_depth(&args.out, &upsample_depth(&depth, &context, &weights)?)?;
    Ok(())
}

fn evaluate(pred: &Path, gt: &Path) -> CliResult<MetricsRecord> {
    Ok(compute_metrics(&io::read_depth(pred)?, &io::read_depth(gt)?)?)
}

fn print_report(record: &MetricsRecord, format: ReportFormat) {
    match format {
        ReportFormat::Text => println!("{record}"),
        ReportFormat::Structured => print!("{}", record.to_key_values()),
    }
}

fn pipeline(args: &PipelineArgs) -> CliResult<()> {
    let dir = &args.out;
    let path = |name: &str| dir.join(name);
    synth(&SynthArgs {
        scene: args.scene.clone(),
        out: dir.clone(),
    })?;
    corr(&CorrArgs {
        features: path(files::FEATURES),
        levels: args.options.levels,
        out: path(files::CORRELATION),
    })?;
    flow(&FlowArgs {
        corr: path(files::CORRELATION),
        out: path(files::FLOWS),
    })?;
    init(&InitArgs {
        flows: path(files::FLOWS),
        cameras: path(files::CAMERAS),
        out: path(files::INIT),
    })?;
    refine(&RefineArgs {
        corr: path(files::CORRELATION),
        cameras: path(files::CAMERAS),
        init: path(files::INIT),
        context: Some(path(files::CONTEXT)),
        weights: args.weights.clone(),
        options: args.options.clone(),
        out: path(files::REFINED),
    })?;
    upsample(&UpsampleArgs {
        depth: path(files::REFINED),
        context: path(files::CONTEXT),
        weights: args.weights.clone(),
        out: path(files::DEPTH),
    })?;
    let record = evaluate(&path(files::DEPTH), &path(files::GT))?;
    print_report(&record, args.report);
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Corr(a) => corr(&a),
        Command::Flow(a) => flow(&a),
        Command::Init(a) => init(&a),
        Command::Refine(a) => refine(&a),
        Command::Upsample(a) => upsample(&a),
        Command::Eval(a) => {
            let record = evaluate(&a.pred, &a.gt)?;
            print_report(&record, a.report);
            Ok(())
        }
        Command::Pipeline(a) => pipeline(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.exit_code())
        }
    }
}
