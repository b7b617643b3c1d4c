use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use partlift::cameras::make_default_views;
use partlift::fusion::{aggregate, CellPointIndex};
use partlift::grouping::BoxSet;
use partlift::io;
use partlift::metrics::{report, IouPooling, ObjectEval};
use partlift::pipeline::{ground_truth_detections, rasterize, run_pipeline, PipelineConfig};
use partlift::projection::visibility_map;
use partlift::synth::{preset, synth_scene, PRESETS};
use partlift::{LabelSchema, PointCloud, View};

#[derive(Parser)]
#[command(name = "partlift", version, about = "Lift 2D part boxes on rendered views to 3D part segmentation")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, env = "PARTLIFT_THREADS", global = true)]
    threads: Option<usize>,

    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Segment a cloud from per-view part detections.
    Segment(SegmentArgs),
    /// Ground-truth detections from a labeled cloud.
    Gtboxes(GtboxesArgs),
    /// Generate a synthetic labeled scene.
    Synth(SynthArgs),
    /// Default camera rig for a cloud.
    Views(ViewsArgs),
    /// Score predicted labels against ground truth.
    Eval(EvalArgs),
    /// Fuse per-view feature maps across views.
    FuseFeatures(FuseArgs),
}

#[derive(Args, Clone)]
struct RenderArgs {
    /// Number of default views, used when no views file is given.
    #[arg(long, default_value_t = 10)]
    num_views: usize,
    #[arg(long, default_value_t = 800)]
    width: u32,
    #[arg(long, default_value_t = 800)]
    height: u32,
    /// Minimum splat radius in pixels.
    #[arg(long, default_value_t = 1.0)]
    splat_radius: f64,
    /// Splat radius in world units (estimated from sampling density if omitted).
    #[arg(long)]
    point_radius: Option<f64>,
    /// Depth tolerance in world units (1e-3 of the cloud diagonal if omitted).
    #[arg(long)]
    eps_z: Option<f64>,
    /// Neighbours per point in the kNN graph.
    #[arg(long, default_value_t = 10)]
    knn: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum BoxSetArg {
    SameCategory,
    AllCategories,
}

#[derive(Clone, Copy, ValueEnum)]
enum PoolingArg {
    Pooled,
    PerShapeMean,
}

impl From<PoolingArg> for IouPooling {
    fn from(p: PoolingArg) -> Self {
        match p {
            PoolingArg::Pooled => IouPooling::Pooled,
            PoolingArg::PerShapeMean => IouPooling::PerShapeMean,
        }
    }
}

#[derive(Args)]
struct SegmentArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Views JSON; the default rig is used when omitted.
    #[arg(long)]
    views: Option<PathBuf>,
    #[arg(long)]
    detections: PathBuf,
    /// Label schema JSON: object name and ordered part names.
    #[arg(long)]
    schema: PathBuf,
    /// Output label file.
    #[arg(long)]
    out: PathBuf,
    /// Ground-truth labels; enables the report.
    #[arg(long, requires = "report")]
    gt: Option<PathBuf>,
    /// CSV report path.
    #[arg(long, requires = "gt")]
    report: Option<PathBuf>,
    #[command(flatten)]
    render: RenderArgs,
    /// Instance merge threshold on the relative L1 coverage distance.
    #[arg(long, default_value_t = 0.3)]
    tau: f64,
    /// Superpoint boundary penalty.
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    color_weight: f64,
    /// Cut-pursuit iteration cap.
    #[arg(long, default_value_t = 20)]
    max_iters: usize,
    /// Tiny-component filter for ground-truth boxes.
    #[arg(long, default_value_t = 0.05)]
    noise_fraction: f64,
    /// Ignore detections below this confidence.
    #[arg(long, default_value_t = 0.0)]
    min_score: f64,
    /// Leave superpoints unlabeled when their best score is below this.
    #[arg(long, default_value_t = 0.0)]
    semantic_threshold: f64,
    #[arg(long, value_enum, default_value_t = BoxSetArg::SameCategory)]
    box_set: BoxSetArg,
    #[arg(long, value_enum, default_value_t = PoolingArg::Pooled)]
    pooling: PoolingArg,
}

#[derive(Args)]
struct GtboxesArgs {
    #[arg(long)]
    cloud: PathBuf,
    /// Ground-truth label file.
    #[arg(long)]
    labels: PathBuf,
    /// Views JSON; the default rig is used when omitted.
    #[arg(long)]
    views: Option<PathBuf>,
    /// Also write the views used.
    #[arg(long)]
    views_out: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    render: RenderArgs,
    #[arg(long, default_value_t = 0.05)]
    noise_fraction: f64,
}

#[derive(Args)]
struct SynthArgs {
    /// Built-in scene.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// Scene spec JSON.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Samples per unit area, for presets.
    #[arg(long, default_value_t = 2000.0)]
    density: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for cloud.ply, labels.txt and schema.json.
    #[arg(long)]
    out: PathBuf,
    /// Write ASCII instead of binary PLY.
    #[arg(long)]
    ascii: bool,
}

#[derive(Args)]
struct ViewsArgs {
    #[arg(long)]
    cloud: PathBuf,
    #[arg(long, default_value_t = 10)]
    num_views: usize,
    #[arg(long, default_value_t = 800)]
    width: u32,
    #[arg(long, default_value_t = 800)]
    height: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    schema: PathBuf,
    /// Predicted label files, paired in order with --gt.
    #[arg(long, required = true)]
    pred: Vec<PathBuf>,
    #[arg(long, required = true)]
    gt: Vec<PathBuf>,
    /// CSV output; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = PoolingArg::Pooled)]
    pooling: PoolingArg,
}

#[derive(Args)]
struct FuseArgs {
    /// Input PLFM feature maps, one per view.
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    cloud: PathBuf,
    /// Views JSON; the default rig is used when omitted.
    #[arg(long)]
    views: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    render: RenderArgs,
}

impl RenderArgs {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            num_views: self.num_views,
            width: self.width,
            height: self.height,
            splat_radius: self.splat_radius,
            point_radius: self.point_radius,
            eps_z: self.eps_z,
            knn: self.knn,
            ..PipelineConfig::default()
        }
    }

    fn views(&self, path: Option<&Path>, cloud: &PointCloud) -> Result<Vec<View>> {
        match path {
            Some(p) => io::read_views(p).with_context(|| format!("reading views {}", p.display())),
            None => Ok(make_default_views(cloud, self.num_views, self.width, self.height)),
        }
    }
}

fn read_cloud(path: &Path) -> Result<PointCloud> {
    io::read_ply(path).with_context(|| format!("reading cloud {}", path.display()))
}

fn segment(args: SegmentArgs) -> Result<()> {
    let config = PipelineConfig {
        tau: args.tau,
        rho: args.rho,
        color_weight: args.color_weight,
        max_iters: args.max_iters,
        noise_fraction: args.noise_fraction,
        min_score: args.min_score,
        semantic_threshold: args.semantic_threshold,
        box_set: match args.box_set {
            BoxSetArg::SameCategory => BoxSet::SameCategory,
            BoxSetArg::AllCategories => BoxSet::AllCategories,
        },
        pooling: args.pooling.into(),
        ..args.render.config()
    };
    let cloud = read_cloud(&args.cloud)?;
    let views = args.render.views(args.views.as_deref(), &cloud)?;
    let schema = io::read_schema(&args.schema)?;
    let detections = io::read_detections(&args.detections, &views, &schema)
        .with_context(|| format!("reading detections {}", args.detections.display()))?;
    let gt = args.gt.as_deref().map(io::read_labels).transpose()?;
    let out = run_pipeline(&config, &cloud, &views, &detections, &schema, gt.as_ref())?;
    io::write_labels(&args.out, &out.result)?;
    info!(
        "wrote {} points, {} instances to {}",
        out.result.len(),
        out.result.instances.len(),
        args.out.display()
    );
    if let (Some(path), Some(r)) = (args.report, out.report) {
        io::write_report(&path, &r)?;
    }
    Ok(())
}

fn gtboxes(args: GtboxesArgs) -> Result<()> {
    let config = PipelineConfig {
        noise_fraction: args.noise_fraction,
        ..args.render.config()
    };
    config.check()?;
    let cloud = read_cloud(&args.cloud)?;
    let labels = io::read_labels(&args.labels)?;
    if labels.len() != cloud.len() {
        bail!("{} labels for {} points", labels.len(), cloud.len());
    }
    let views = args.render.views(args.views.as_deref(), &cloud)?;
    let detections = ground_truth_detections(&config, &cloud, &labels, &views);
    info!("{} boxes over {} views", detections.len(), views.len());
    io::write_detections(&args.out, &detections)?;
    if let Some(path) = args.views_out {
        io::write_views(path, &views)?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let spec = match (&args.preset, &args.spec) {
        (_, Some(path)) => io::read_scene_spec(path)?,
        (Some(name), None) => preset(name, args.density, args.seed)
            .with_context(|| format!("unknown preset {name}; choose from {}", PRESETS.join(", ")))?,
        (None, None) => bail!("give --preset or --spec"),
    };
    let scene = synth_scene(&spec)?;
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let encoding = if args.ascii {
        io::PlyEncoding::Ascii
    } else {
        io::PlyEncoding::BinaryLittleEndian
    };
    io::write_ply(args.out.join("cloud.ply"), &scene.cloud, encoding)?;
    io::write_labels(args.out.join("labels.txt"), &scene.labels)?;
    io::write_schema(args.out.join("schema.json"), &scene.schema)?;
    info!(
        "{} points, {} instances in {}",
        scene.cloud.len(),
        scene.labels.instances.len(),
        args.out.display()
    );
    Ok(())
}

fn views(args: ViewsArgs) -> Result<()> {
    if args.num_views == 0 {
        bail!("--num-views must be at least 1");
    }
    let cloud = read_cloud(&args.cloud)?;
    io::write_views(&args.out, &make_default_views(&cloud, args.num_views, args.width, args.height))?;
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    if args.pred.len() != args.gt.len() {
        bail!("{} --pred files but {} --gt files", args.pred.len(), args.gt.len());
    }
    let schema: LabelSchema = io::read_schema(&args.schema)?;
    let shapes = args
        .pred
        .iter()
        .zip(&args.gt)
        .map(|(p, g)| -> Result<_> {
            let pred = io::read_labels(p)?;
            let gt = io::read_labels(g)?;
            if pred.len() != gt.len() {
                bail!("{} has {} points, {} has {}", p.display(), pred.len(), g.display(), gt.len());
            }
            Ok((pred, gt))
        })
        .collect::<Result<Vec<_>>>()?;
    let r = report(&[ObjectEval { schema, shapes }], args.pooling.into())?;
    match args.out {
        Some(path) => io::write_report(path, &r)?,
        None => print!("{}", r.to_csv()),
    }
    Ok(())
}

fn fuse_features(args: FuseArgs) -> Result<()> {
    let config = args.render.config();
    config.check()?;
    let maps = io::read_plfm(&args.features)?;
    let cloud = read_cloud(&args.cloud)?;
    let views = args.render.views(args.views.as_deref(), &cloud)?;
    if maps.len() != views.len() {
        bail!("{} feature maps for {} views", maps.len(), views.len());
    }
    let m = maps.first().map_or(1, |f| f.m());
    let vis = visibility_map(&rasterize(&config, &cloud, &views));
    let index = CellPointIndex::build(&vis, &views, m)?;
    io::write_plfm(&args.out, &aggregate(&maps, &index)?)?;
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = if cli.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("PARTLIFT_THREADS must be at least 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::Segment(a) => segment(a),
        Command::Gtboxes(a) => gtboxes(a),
        Command::Synth(a) => synth(a),
        Command::Views(a) => views(a),
        Command::Eval(a) => eval(a),
        Command::FuseFeatures(a) => fuse_features(a),
    }
}
