//! Command-line front end.
//!
//! Every command that writes a file also writes `<file>.meta`, a plain
//! `key = value` sidecar with the tool version, the arguments and the seeds,
//! schemes and hashes that determine the output.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::checkpoint::{load_checkpoint, load_direction, save_checkpoint};
use crate::curvature::{ratio_map, EigRatioMap, LanczosSettings};
use crate::data::{load_idx, make_synthetic, Dataset, Split, SyntheticKind};
use crate::directions::{random_direction, DirType, Direction, IgnorePolicy, Scheme, RNG_ID};
use crate::error::{Error, Result};
use crate::experiments::MoonsSetup;
use crate::model::{ModelSpec, Network, ParamVector};
use crate::objective::NetworkObjective;
use crate::par::Execution;
use crate::render::{
    contour_svg, heat_svg, histogram_svg, line_svg, norm_curve_svg, trajectory_overlay_svg, width_at_level, Levels, PlotKind,
    RenderSpec, Transform,
};
use crate::surface::{fmt_f64, grid_2d, interpolate_1d, ray_1d, repeat_study, AxisSpec, LossGrid, Metadata};
use crate::train::{train, weight_histogram, weight_norm_series, OptimizerKind, TrainConfig};
use crate::trajectory::{pca_directions, trajectory_surface, ProjectionTable, TrajectoryPath};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser, Debug)]
#[command(name = "landscape", version, about = "Loss-landscape surfaces, curvature maps and trajectory projections")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model, writing one checkpoint per epoch.
    Train(TrainArgs),
    /// Loss along one random direction.
    Ray1d(Ray1dArgs),
    /// Loss on the segment between two checkpoints.
    Interp1d(Interp1dArgs),
    /// Loss on a plane spanned by two random directions.
    Grid2d(Grid2dArgs),
    /// Hessian eigenvalue ratio |λmin/λmax| on a plane.
    Eigmap(EigmapArgs),
    /// PCA projection of a training run, optionally with the loss surface.
    Traj(TrajArgs),
    /// Render a CSV or checkpoint as SVG.
    Render(RenderArgs),
    /// Rays along several seeds, with flatness widths and their spread.
    Repeat(RepeatArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Dataset: two-moons, gaussian-blobs, spirals or idx.
    #[arg(long, default_value = "two-moons")]
    pub data: String,
    #[arg(long)]
    pub n_train: Option<usize>,
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub data_seed: u64,
    #[arg(long)]
    pub train_images: Option<PathBuf>,
    #[arg(long)]
    pub train_labels: Option<PathBuf>,
    #[arg(long)]
    pub test_images: Option<PathBuf>,
    #[arg(long)]
    pub test_labels: Option<PathBuf>,
    /// Evaluate on the first N samples of each split only.
    #[arg(long)]
    pub subsample: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Model spec TOML; defaults to the standard two-moons MLP.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Evaluate cells one at a time.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Training config TOML; flags below override the standard setup otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Comma-separated epochs after which the learning rate drops.
    #[arg(long, value_delimiter = ',')]
    pub lr_drops: Option<Vec<usize>>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone)]
pub struct DirArgs {
    #[arg(long, default_value = "filter")]
    pub xnorm: Scheme,
    #[arg(long, default_value = "biasbn")]
    pub xignore: IgnorePolicy,
    #[arg(long, default_value_t = 0)]
    pub xseed: u64,
    /// Load the x direction from a file instead of sampling it.
    #[arg(long)]
    pub xdir: Option<PathBuf>,
    #[arg(long, default_value = "weights")]
    pub dir_type: DirType,
}

#[derive(Args, Debug, Clone)]
pub struct YDirArgs {
    #[arg(long, default_value = "filter")]
    pub ynorm: Scheme,
    #[arg(long, default_value = "biasbn")]
    pub yignore: IgnorePolicy,
    #[arg(long, default_value_t = 1)]
    pub yseed: u64,
    #[arg(long)]
    pub ydir: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct Ray1dArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub dir: DirArgs,
    #[arg(long, default_value = "-1:1:51", allow_hyphen_values = true)]
    pub x: AxisSpec,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Interp1dArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Start point (α = 0).
    #[arg(long)]
    pub from: PathBuf,
    /// End point (α = 1).
    #[arg(long)]
    pub to: PathBuf,
    #[arg(long, default_value = "-0.5:1.5:41", allow_hyphen_values = true)]
    pub x: AxisSpec,
    #[arg(long, default_value = "weights")]
    pub dir_type: DirType,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Grid2dArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub dir: DirArgs,
    #[command(flatten)]
    pub ydir: YDirArgs,
    #[arg(long, default_value = "-1:1:51", allow_hyphen_values = true)]
    pub x: AxisSpec,
    #[arg(long, default_value = "-1:1:51", allow_hyphen_values = true)]
    pub y: AxisSpec,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EigmapArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub dir: DirArgs,
    #[command(flatten)]
    pub ydir: YDirArgs,
    #[arg(long, default_value = "-1:1:11", allow_hyphen_values = true)]
    pub x: AxisSpec,
    #[arg(long, default_value = "-1:1:11", allow_hyphen_values = true)]
    pub y: AxisSpec,
    /// Krylov dimension; defaults to min(dim, 100).
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, default_value_t = 0)]
    pub lanczos_seed: u64,
    /// Loss grid that must share this map's plane.
    #[arg(long)]
    pub companion: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrajArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Directory written by `train`.
    #[arg(long)]
    pub run: PathBuf,
    /// Projection CSV.
    #[arg(long)]
    pub out: PathBuf,
    /// Also evaluate the loss on the PCA plane and write it here.
    #[arg(long)]
    pub surface: Option<PathBuf>,
    #[arg(long, default_value = "-1:1:31", allow_hyphen_values = true)]
    pub x: AxisSpec,
    #[arg(long, default_value = "-1:1:31", allow_hyphen_values = true)]
    pub y: AxisSpec,
}

#[derive(Args, Debug)]
pub struct RenderArgs {
    /// line-1d, contour-2d, heat-2d, trajectory-overlay, histogram or norm-curve.
    #[arg(long)]
    pub kind: PlotKind,
    /// Grid/eigmap/norms CSV, or a checkpoint for histograms.
    #[arg(long)]
    pub input: PathBuf,
    /// Projection CSV for trajectory overlays.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Explicit contour levels, comma-separated and strictly increasing.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub levels: Option<Vec<f64>>,
    #[arg(long, default_value_t = crate::render::DEFAULT_LEVEL_COUNT)]
    pub level_count: usize,
    #[arg(long, default_value_t = crate::render::DEFAULT_LEVEL_CAP)]
    pub level_cap: f64,
    #[arg(long, default_value = "linear")]
    pub transform: Transform,
    #[arg(long, default_value_t = 50)]
    pub bins: usize,
    /// Norm-curve column: per-epoch file column name.
    #[arg(long, default_value = "norm")]
    pub column: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RepeatArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of seeds, starting at `--first-seed`.
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[arg(long, default_value = "filter")]
    pub xnorm: Scheme,
    #[arg(long, default_value = "biasbn")]
    pub xignore: IgnorePolicy,
    #[arg(long, default_value = "-1:1:51", allow_hyphen_values = true)]
    pub x: AxisSpec,
    /// Width level is the center loss plus this offset.
    #[arg(long, default_value_t = 0.5)]
    pub level_offset: f64,
    /// Widths CSV; rays go to `<stem>_seed<k>.csv` beside it.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` and runs the command; errors go to stderr with a nonzero
/// status, usage problems print clap's usage text.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli.command, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(command: Command, args: &[String]) -> Result<()> {
    match command {
        Command::Train(a) => cmd_train(a, args),
        Command::Ray1d(a) => cmd_ray1d(a, args),
        Command::Interp1d(a) => cmd_interp1d(a, args),
        Command::Grid2d(a) => cmd_grid2d(a, args),
        Command::Eigmap(a) => cmd_eigmap(a, args),
        Command::Traj(a) => cmd_traj(a, args),
        Command::Render(a) => cmd_render(a, args),
        Command::Repeat(a) => cmd_repeat(a, args),
    }
}

fn load_data(a: &DataArgs) -> Result<(Dataset, Option<Dataset>)> {
    let std = MoonsSetup::default();
    let (train, test) = if a.data == "idx" {
        let need = |p: &Option<PathBuf>, flag: &str| p.clone().ok_or_else(|| Error::Invalid(format!("--data idx needs --{flag}")));
        let train = load_idx(&need(&a.train_images, "train-images")?, &need(&a.train_labels, "train-labels")?, Split::Train)?;
        let test = match (&a.test_images, &a.test_labels) {
            (Some(i), Some(l)) => Some(load_idx(i, l, Split::Test)?),
            (None, None) => None,
            _ => return Err(Error::Invalid("--test-images and --test-labels go together".into())),
        };
        (train, test)
    } else {
        let kind: SyntheticKind = a.data.parse()?;
        let noise = a.noise.unwrap_or(std.noise);
        let train = make_synthetic(kind, a.n_train.unwrap_or(std.n_train), noise, a.data_seed, Split::Train)?;
        let test = make_synthetic(kind, a.n_test.unwrap_or(std.n_test), noise, a.data_seed, Split::Test)?;
        (train, Some(test))
    };
    Ok(match a.subsample {
        Some(n) => (train.head(n), test.map(|t| t.head(n))),
        None => (train, test),
    })
}

fn load_spec(a: &ModelArgs) -> Result<ModelSpec> {
    match &a.model {
        Some(p) => ModelSpec::load(p),
        None => Ok(MoonsSetup::default().spec()),
    }
}

fn exec(a: &ModelArgs) -> Execution {
    if a.sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    }
}

fn load_point(net: &Network, path: &Path) -> Result<ParamVector> {
    let (c, _) = load_checkpoint(path)?;
    if c.params.layout().spec_hash != net.spec_hash() || c.params.layout().as_ref() != net.layout().as_ref() {
        return Err(Error::SpecHashMismatch(c.params.layout().spec_hash.clone(), net.spec_hash().to_string()));
    }
    Ok(c.params)
}

fn direction(
    theta: &ParamVector,
    file: &Option<PathBuf>,
    seed: u64,
    scheme: Scheme,
    ignore: IgnorePolicy,
    dir_type: DirType,
) -> Result<Direction> {
    let d = match file {
        Some(p) => {
            let d = load_direction(p)?;
            if d.layout().as_ref() != theta.layout().as_ref() {
                return Err(Error::SpecHashMismatch(d.layout().spec_hash.clone(), theta.layout().spec_hash.clone()));
            }
            d
        }
        None => random_direction(theta, seed, scheme, ignore),
    };
    Ok(d.for_dir_type(dir_type))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

/// `<out>.meta`: tool identity and arguments, then `meta`.
fn write_sidecar(out: &Path, args: &[String], meta: &Metadata) -> Result<()> {
    let mut m = Metadata::default();
    m.set("tool", "landscape");
    m.set("tool_version", TOOL_VERSION);
    m.set("args", args.join(" "));
    m.set("rng", RNG_ID);
    for (k, v) in &meta.0 {
        m.set(k, v);
    }
    let text: String = m.0.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    write_text(&sidecar_path(out), &text)
}

fn save_grid(grid: &LossGrid, out: &Path, args: &[String]) -> Result<()> {
    write_text(out, &grid.to_csv_string())?;
    write_sidecar(out, args, &grid.meta)
}

pub fn checkpoint_file(dir: &Path, epoch: usize) -> PathBuf {
    dir.join(format!("epoch_{epoch:04}.ckpt"))
}

fn cmd_train(a: TrainArgs, args: &[String]) -> Result<()> {
    let spec = load_spec(&a.model)?;
    let (train_set, test_set) = load_data(&a.data)?;
    let std = MoonsSetup::default();
    let mut cfg = match &a.config {
        Some(p) => TrainConfig::from_toml(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => std.config(128, 0.0, a.seed),
    };
    if let Some(v) = a.optimizer {
        cfg.optimizer = v;
    }
    if let Some(v) = a.lr {
        cfg.lr = v;
    }
    if let Some(v) = a.momentum {
        cfg.momentum = v;
    }
    if let Some(v) = a.weight_decay {
        cfg.weight_decay = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = &a.lr_drops {
        cfg.lr_drop_epochs = v.clone();
    }
    if a.config.is_none() {
        cfg.seed = a.seed;
    }
    cfg.validate()?;
    let (net, init) = Network::build(&spec, cfg.seed)?;
    let record = train(&net, &init, &train_set, test_set.as_ref(), &cfg)?;
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    write_text(&a.out.join("model.toml"), &spec.to_toml())?;
    write_text(&a.out.join("config.toml"), &cfg.to_toml())?;
    let drops: Vec<String> = record.lr_drops.iter().map(|e| e.to_string()).collect();
    let mut extra = Metadata::default();
    extra.set("lr_drops", drops.join(","));
    extra.set("seed", cfg.seed);
    for c in &record.checkpoints {
        save_checkpoint(&checkpoint_file(&a.out, c.epoch), c, &extra)?;
    }
    let norms = weight_norm_series(&record);
    let mut csv = String::from("# landscape norms v1\nepoch,norm,train_loss,train_err,test_loss,test_err,lr,is_lr_drop\n");
    for (c, n) in record.checkpoints.iter().zip(&norms.per_epoch) {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            c.epoch,
            fmt_f64(*n),
            fmt_f64(c.train_loss),
            fmt_f64(c.train_err),
            fmt_f64(c.test_loss),
            fmt_f64(c.test_err),
            fmt_f64(cfg.lr_at(c.epoch)),
            u8::from(record.lr_drops.contains(&c.epoch))
        ));
    }
    let norms_path = a.out.join("norms.csv");
    write_text(&norms_path, &csv)?;
    let mut iter_csv = String::from("# landscape norms v1\niteration,norm\n");
    for (i, n) in norms.per_iteration.iter().enumerate() {
        iter_csv.push_str(&format!("{i},{}\n", fmt_f64(*n)));
    }
    write_text(&a.out.join("norms_iter.csv"), &iter_csv)?;
    let mut meta = Metadata::default();
    meta.set("kind", "train");
    meta.set("model_spec_hash", net.spec_hash());
    meta.set("seed", cfg.seed);
    meta.set("optimizer", cfg.optimizer);
    meta.set("lr_drops", drops.join(","));
    meta.set("diverged", record.diverged.map_or("no".to_string(), |e| format!("epoch {e}")));
    meta.set("final_digest", record.last().params.digest());
    write_sidecar(&norms_path, args, &meta)?;
    if let Some(e) = record.diverged {
        eprintln!("warning: training diverged during epoch {e}");
    }
    Ok(())
}

fn cmd_ray1d(a: Ray1dArgs, args: &[String]) -> Result<()> {
    let spec = load_spec(&a.model)?;
    let net = Network::compile(&spec)?;
    let theta = load_point(&net, &a.checkpoint)?;
    let (train_set, test_set) = load_data(&a.data)?;
    let obj = NetworkObjective::new(&net, &train_set, test_set.as_ref());
    let d = direction(&theta, &a.dir.xdir, a.dir.xseed, a.dir.xnorm, a.dir.xignore, a.dir.dir_type)?;
    let mut grid = ray_1d(&obj, &theta, &d, a.x, exec(&a.model))?;
    grid.meta.set("dir_type", a.dir.dir_type);
    save_grid(&grid, &a.out, args)
}

fn cmd_interp1d(a: Interp1dArgs, args: &[String]) -> Result<()> {
    let spec = load_spec(&a.model)?;
    let net = Network::compile(&spec)?;
    let (from, to) = (load_point(&net, &a.from)?, load_point(&net, &a.to)?);
    let (train_set, test_set) = load_data(&a.data)?;
    let obj = NetworkObjective::new(&net, &train_set, test_set.as_ref());
    let grid = interpolate_1d(&obj, &from, &to, a.x, a.dir_type, exec(&a.model))?;
    save_grid(&grid, &a.out, args)
}

fn plane(theta: &ParamVector, x: &DirArgs, y: &YDirArgs) -> Result<(Direction, Direction)> {
    Ok((
        direction(theta, &x.xdir, x.xseed, x.xnorm, x.xignore, x.dir_type)?,
        direction(theta, &y.ydir, y.yseed, y.ynorm, y.yignore, x.dir_type)?,
    ))
}

fn cmd_grid2d(a: Grid2dArgs, args: &[String]) -> Result<()> {
    let spec = load_spec(&a.model)?;
    let net = Network::compile(&spec)?;
    let theta = load_point(&net, &a.checkpoint)?;
    let (train_set, test_set) = load_data(&a.data)?;
    let obj = NetworkObjective::new(&net, &train_set, test_set.as_ref());
    let (dx, dy) = plane(&theta, &a.dir, &a.ydir)?;
    let mut grid = grid_2d(&obj, &theta, &dx, &dy, a.x, a.y, exec(&a.model))?;
    grid.meta.set("dir_type", a.dir.dir_type);
    save_grid(&grid, &a.out, args)
}

fn cmd_eigmap(a: EigmapArgs, args: &[String]) -> Result<()> {
    let spec = load_spec(&a.model)?;
    let net = Network::compile(&spec)?;
    let theta = load_point(&net, &a.checkpoint)?;
    let (train_set, _) = load_data(&a.data)?;
    let obj = NetworkObjective::new(&net, &train_set, None);
    let (dx, dy) = plane(&theta, &a.dir, &a.ydir)?;
    let companion = a.companion.as_deref().map(LossGrid::load).transpose()?;
    let settings = LanczosSettings { iterations: a.iterations, tol: a.tol, seed: a.lanczos_seed };
    let map = ratio_map(&obj, &theta, &dx, &dy, a.x, a.y, &settings, companion.as_ref(), exec(&a.model))?;
    write_text(&a.out, &map.to_csv_string())?;
    write_sidecar(&a.out, args, &map.meta)?;
    if !map.unconverged.is_empty() {
        eprintln!("warning: {} cells missed the residual tolerance", map.unconverged.len());
    }
    Ok(())
}

/// Checkpoints of a `train` output directory in epoch order.
pub fn load_run(dir: &Path, net: &Network) -> Result<TrajectoryPath> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "ckpt"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Invalid(format!("no checkpoints in {}", dir.display())));
    }
    let mut path = TrajectoryPath { epochs: vec![], points: vec![], lr_drops: vec![] };
    for f in &files {
        let (c, meta) = load_checkpoint(f)?;
        if c.params.layout().as_ref() != net.layout().as_ref() {
            return Err(Error::SpecHashMismatch(c.params.layout().spec_hash.clone(), net.spec_hash().to_string()));
        }
        if let Some(d) = meta.get("lr_drops") {
            path.lr_drops = crate::surface::parse_index_list(d)?;
        }
        path.epochs.push(c.epoch);
        path.points.push(c.params);
    }
    Ok(path)
}

fn cmd_traj(a: TrajArgs, args: &[String]) -> Result<()> {
    let spec = load_spec(&a.model)?;
    let net = Network::compile(&spec)?;
    let path = load_run(&a.run, &net)?;
    let pca = pca_directions(&path)?;
    write_text(&a.out, &pca.to_csv_string())?;
    let mut meta = Metadata::default();
    meta.set("kind", "projection");
    meta.set("model_spec_hash", net.spec_hash());
    meta.set("final_digest", path.origin().digest());
    meta.set("variance1", fmt_f64(pca.variance[0]));
    meta.set("variance2", fmt_f64(pca.variance[1]));
    write_sidecar(&a.out, args, &meta)?;
    if pca.degenerate() {
        eprintln!("warning: trajectory has rank {}; second axis carries no variance", pca.rank);
    }
    if let Some(surface_out) = &a.surface {
        let (train_set, test_set) = load_data(&a.data)?;
        let obj = NetworkObjective::new(&net, &train_set, test_set.as_ref());
        let s = trajectory_surface(&obj, &path, &pca, a.x, a.y, exec(&a.model))?;
        save_grid(&s.grid, surface_out, args)?;
    }
    Ok(())
}

/// Column `name` of a comma-separated table with `#` comments and a header row.
fn read_column(path: &Path, name: &str) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.starts_with('#') && !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format(format!("{} is empty", path.display())))?;
    let col = header
        .split(',')
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::Format(format!("no column `{name}` in {}", path.display())))?;
    lines
        .map(|l| {
            l.split(',')
                .nth(col)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Format(format!("bad row `{l}` in {}", path.display())))
        })
        .collect()
}

fn first_line(path: &Path) -> Result<String> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().next().unwrap_or_default().to_string())
}

fn cmd_render(a: RenderArgs, args: &[String]) -> Result<()> {
    let spec = RenderSpec {
        kind: a.kind,
        levels: match &a.levels {
            Some(l) => Levels::List(l.clone()),
            None => Levels::Count { count: a.level_count, cap: a.level_cap },
        },
        transform: a.transform,
        output: Some(a.out.clone()),
    };
    spec.validate()?;
    let svg = match a.kind {
        PlotKind::Line1d => line_svg(&LossGrid::load(&a.input)?, &spec)?,
        PlotKind::Contour2d => contour_svg(&LossGrid::load(&a.input)?, &spec)?,
        PlotKind::Heat2d => {
            if first_line(&a.input)?.contains("eigmap") {
                let m = EigRatioMap::load(&a.input)?;
                heat_svg(&m.x, &m.y, &m.ratios(), "|lambda_min / lambda_max|", &spec)?
            } else {
                let g = LossGrid::load(&a.input)?;
                let y = g.y.ok_or_else(|| Error::Invalid("heat map needs a 2D grid".into()))?;
                heat_svg(&g.x, &y, &g.train_losses(), "training loss", &spec)?
            }
        }
        PlotKind::TrajectoryOverlay => {
            let overlay = a.overlay.as_deref().ok_or_else(|| Error::Invalid("trajectory-overlay needs --overlay".into()))?;
            trajectory_overlay_svg(&LossGrid::load(&a.input)?, &ProjectionTable::load(overlay)?, &spec)?
        }
        PlotKind::Histogram => {
            let (c, _) = load_checkpoint(&a.input)?;
            histogram_svg(&weight_histogram(&c.params, a.bins, None)?, &format!("weights at epoch {}", c.epoch))
        }
        PlotKind::NormCurve => {
            let series = read_column(&a.input, &a.column)?;
            norm_curve_svg(&series, if a.column == "norm" { "epoch" } else { "iteration" })
        }
    };
    write_text(&a.out, &svg)?;
    let mut meta = Metadata::default();
    meta.set("kind", "render");
    meta.set("input", a.input.display());
    write_sidecar(&a.out, args, &meta)
}

fn cmd_repeat(a: RepeatArgs, args: &[String]) -> Result<()> {
    let spec = load_spec(&a.model)?;
    let net = Network::compile(&spec)?;
    let theta = load_point(&net, &a.checkpoint)?;
    let (train_set, test_set) = load_data(&a.data)?;
    let obj = NetworkObjective::new(&net, &train_set, test_set.as_ref());
    let seeds: Vec<u64> = (a.first_seed..a.first_seed + a.seeds).collect();
    let rays = repeat_study(&obj, &theta, &seeds, a.xnorm, a.xignore, a.x, exec(&a.model))?;
    let stem = a.out.with_extension("");
    let mut csv = String::from("# landscape repeat v1\nseed,center_loss,level,width\n");
    let mut widths = Vec::new();
    for (s, g) in seeds.iter().zip(&rays) {
        let ray_path = PathBuf::from(format!("{}_seed{s}.csv", stem.display()));
        save_grid(g, &ray_path, args)?;
        let center = g.cells[g.center_index()].train_loss;
        let level = center + a.level_offset;
        let w = width_at_level(g, level)?;
        widths.push(w);
        csv.push_str(&format!("{s},{},{},{}\n", fmt_f64(center), fmt_f64(level), fmt_f64(w)));
    }
    let (mean, cv) = mean_cv(&widths);
    write_text(&a.out, &csv)?;
    let mut meta = Metadata::default();
    meta.set("kind", "repeat");
    meta.set("model_spec_hash", net.spec_hash());
    meta.set("center_digest", theta.digest());
    meta.set("seeds", format!("{}..{}", a.first_seed, a.first_seed + a.seeds));
    meta.set("xnorm", a.xnorm);
    meta.set("xignore", a.xignore);
    meta.set("width_mean", fmt_f64(mean));
    meta.set("width_cv", fmt_f64(cv));
    write_sidecar(&a.out, args, &meta)
}

/// Mean and coefficient of variation (sample standard deviation over mean).
pub fn mean_cv(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt() / mean)
}
