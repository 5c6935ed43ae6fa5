mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pldepth::bench::run_benchmark;
use pldepth::eval::{compute_metrics, post_process_fuse, Scaling};
use pldepth::io::{
    load_depth, load_image, parse_calibration, read_weights, save_depth, save_disparity, write_cloud,
    CalibrationSet, CloudFormat,
};
use pldepth::network::arch::with_commas;
use pldepth::network::{build_depth_network, build_encoder, sigmoid_to_disparity, Network};
use pldepth::optimizer::optimize_disparity;
use pldepth::{back_project_capped, disparity_to_depth, hflip, resize_bilinear, DisparityMap, ImageBuffer, Intrinsics};
use serde::Serialize;

use config::{emit, parse_res, EstimateConfig, FileConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation: exit code 1.
    Usage(String),
    /// Unreadable or inconsistent inputs: exit code 2.
    Data(String),
}

impl From<pldepth::Error> for CliError {
    fn from(e: pldepth::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

#[derive(Parser)]
#[command(name = "pldepth", version, about = "Stereo depth estimation and pseudo-LiDAR tools")]
struct Cli {
    /// TOML file with [estimate], [optimizer], [eval] and [bench] sections
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Also write the report as a JSON record
    #[arg(long, global = true)]
    json_out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Predict depth for a stereo pair with the network
    Estimate(EstimateArgs),
    /// Fit a disparity map by minimizing the photometric loss directly
    Optimize(OptimizeArgs),
    /// Lift a depth map to a point cloud
    Backproject(BackprojectArgs),
    /// Score a predicted depth map against ground truth
    Eval(EvalArgs),
    /// Time the inference pipeline stage by stage
    Bench(BenchArgs),
    /// Print the encoder layer table with shapes and parameter counts
    Arch(ArchArgs),
}

#[derive(Args)]
struct EstimateArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// PNG16 depth (a .f32 sidecar is written next to it) or a .f32 path
    #[arg(long)]
    out_depth: PathBuf,
    /// Average with a pass on the mirrored pair
    #[arg(long)]
    pp: bool,
    #[arg(long, value_parser = parse_res)]
    model_res: Option<(usize, usize)>,
    #[arg(long)]
    min_depth: Option<f64>,
    #[arg(long)]
    max_depth: Option<f64>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    left: PathBuf,
    #[arg(long)]
    right: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    /// Raw .f32 disparity map
    #[arg(long)]
    out_disparity: PathBuf,
    /// Write the per-step loss trace as CSV
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Also write the depth implied by the fitted disparity
    #[arg(long)]
    out_depth: Option<PathBuf>,
    #[arg(long)]
    levels: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    step_size: Option<f64>,
    #[arg(long)]
    init_disparity: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Args)]
struct BackprojectArgs {
    #[arg(long)]
    depth: PathBuf,
    #[arg(long)]
    calib: PathBuf,
    #[arg(long)]
    out_cloud: PathBuf,
    #[arg(long, default_value = "ply")]
    format: CloudFormat,
    /// Drop points farther than this many meters
    #[arg(long)]
    max_depth: Option<f64>,
    /// Image whose gray level becomes the point intensity
    #[arg(long)]
    image: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// none, median, fixed:<c> or a bare factor
    #[arg(long)]
    scaling: Option<Scaling>,
    #[arg(long)]
    min_depth: Option<f64>,
    #[arg(long)]
    max_depth: Option<f64>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_parser = parse_res)]
    model_res: Option<(usize, usize)>,
    #[arg(long, value_parser = parse_res)]
    image_res: Option<(usize, usize)>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    warmup: Option<usize>,
    /// Kernel worker threads; 1 pins a single-threaded measurement
    #[arg(long)]
    threads: Option<usize>,
    /// Leave the network stage out of the measurement
    #[arg(long)]
    no_network: bool,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct ArchArgs {
    /// Six-channel stereo input (the default)
    #[arg(long, conflicts_with = "mono")]
    stereo: bool,
    /// Three-channel monocular input
    #[arg(long)]
    mono: bool,
    #[arg(long, value_parser = parse_res)]
    input_res: Option<(usize, usize)>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let file = FileConfig::load(cli.config.as_deref())?;
    let json = cli.json_out.as_ref();
    match cli.command {
        Command::Estimate(a) => estimate(a, file.estimate, json),
        Command::Optimize(a) => optimize(a, file.optimizer, json),
        Command::Backproject(a) => backproject(a, json),
        Command::Eval(a) => eval(a, file.eval, json),
        Command::Bench(a) => bench(a, file.bench, json),
        Command::Arch(a) => arch(a, json),
    }
}

fn read_calibration(path: &Path) -> Result<CalibrationSet, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(parse_calibration(&text)?)
}

/// Intrinsics for a `width × height` raster, rescaled from the calibrated
/// image size when the calibration records one that differs.
fn intrinsics_for(calib: &CalibrationSet, width: usize, height: usize) -> Result<Intrinsics, CliError> {
    Ok(match calib.image_size {
        Some(size) if size != (width, height) => calib.native_intrinsics()?.rescaled(width, height)?,
        _ => calib.intrinsics(width, height)?,
    })
}

fn load_pair(left: &Path, right: &Path) -> Result<(ImageBuffer, ImageBuffer), CliError> {
    let (l, r) = (load_image(left)?, load_image(right)?);
    if !l.same_dims(&r) {
        return Err(CliError::Data(format!(
            "left is {}x{}x{} but right is {}x{}x{}",
            l.width(),
            l.height(),
            l.channels(),
            r.width(),
            r.height(),
            r.channels()
        )));
    }
    Ok((l, r))
}

#[derive(Serialize)]
struct EstimateReport {
    width: usize,
    height: usize,
    valid_pixels: usize,
    min_depth_m: f64,
    max_depth_m: f64,
    mean_depth_m: f64,
    out_depth: String,
}

fn estimate(a: EstimateArgs, mut cfg: EstimateConfig, json: Option<&PathBuf>) -> CliResult {
    if let Some(r) = a.model_res {
        cfg.model_res = r;
    }
    if let Some(v) = a.min_depth {
        cfg.min_depth = v;
    }
    if let Some(v) = a.max_depth {
        cfg.max_depth = v;
    }
    cfg.post_process |= a.pp;
    let (mw, mh) = cfg.model_res;
    if mw % 32 != 0 || mh % 32 != 0 {
        return Err(CliError::Usage(format!("model resolution {mw}x{mh} must be a multiple of 32")));
    }

    let (left, right) = load_pair(&a.left, &a.right)?;
    let (w, h) = (left.width(), left.height());
    let calib = read_calibration(&a.calib)?;
    let rig = pldepth::StereoRig::new(intrinsics_for(&calib, w, h)?, calib.baseline())?;
    let store = read_weights(&a.weights)?;
    let net = Network::<f32>::new(build_depth_network(true, mh, mw), &store)?;

    let infer = |l: &ImageBuffer, r: &ImageBuffer| -> Result<DisparityMap, CliError> {
        let stacked = ImageBuffer::stack_channels(l, r)?;
        let input = if (w, h) == (mw, mh) { stacked } else { resize_bilinear(&stacked, mw, mh)? };
        let (sig, _) = net.predict(&input)?;
        let sig = if (w, h) == (mw, mh) { sig } else { DisparityMap::new(resize_bilinear(sig.values(), w, h)?)? };
        Ok(sigmoid_to_disparity(&sig, cfg.min_depth, cfg.max_depth, &rig)?)
    };
    let mut disparity = infer(&left, &right)?;
    if cfg.post_process {
        let mirrored = infer(&hflip(&left), &hflip(&right))?;
        disparity = post_process_fuse(&disparity, &mirrored)?;
    }
    let depth = disparity_to_depth(&disparity, &rig);
    save_depth(&depth, &a.out_depth)?;

    let vals: Vec<f64> = depth
        .values()
        .data()
        .iter()
        .zip(depth.valid())
        .filter(|(_, &ok)| ok)
        .map(|(&v, _)| v)
        .collect();
    let report = EstimateReport {
        width: w,
        height: h,
        valid_pixels: vals.len(),
        min_depth_m: vals.iter().copied().fold(f64::INFINITY, f64::min),
        max_depth_m: vals.iter().copied().fold(0.0, f64::max),
        mean_depth_m: vals.iter().sum::<f64>() / vals.len().max(1) as f64,
        out_depth: a.out_depth.display().to_string(),
    };
    let kv = format!(
        "width={}\nheight={}\nvalid_pixels={}\nmin_depth_m={:.6}\nmax_depth_m={:.6}\nmean_depth_m={:.6}\nout_depth={}\n",
        report.width,
        report.height,
        report.valid_pixels,
        report.min_depth_m,
        report.max_depth_m,
        report.mean_depth_m,
        report.out_depth
    );
    emit(&kv, &report, &cfg, json)
}

#[derive(Serialize)]
struct OptimizeReport {
    width: usize,
    height: usize,
    final_loss: f64,
    steps: usize,
    converged: bool,
    monotone: bool,
    levels: Vec<pldepth::optimizer::LevelSummary>,
}

fn optimize(a: OptimizeArgs, mut cfg: pldepth::optimizer::OptimizerConfig, json: Option<&PathBuf>) -> CliResult {
    if let Some(v) = a.levels {
        cfg.levels = v;
    }
    if let Some(v) = a.steps {
        cfg.steps_per_level = v;
    }
    if let Some(v) = a.step_size {
        cfg.step_size = v;
    }
    if let Some(v) = a.init_disparity {
        cfg.init_disparity = v;
    }
    if let Some(v) = a.lambda {
        cfg.loss.lambda_smooth = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;

    let (left, right) = load_pair(&a.left, &a.right)?;
    let (w, h) = (left.width(), left.height());
    let calib = read_calibration(&a.calib)?;
    let k = intrinsics_for(&calib, w, h)?;
    let rig = pldepth::StereoRig::new(k, calib.baseline())?;
    let (disparity, trace) = optimize_disparity(&left, &right, &rig, &k, &cfg)?;
    save_disparity(&disparity, &a.out_disparity)?;
    if let Some(path) = &a.out_depth {
        save_depth(&disparity_to_depth(&disparity, &rig), path)?;
    }
    if let Some(path) = &a.trace {
        let mut csv = String::from("level,step,width,height,total,photometric,smoothness,masked_fraction,step_size\n");
        for e in &trace.entries {
            let _ = writeln!(
                csv,
                "{},{},{},{},{:e},{:e},{:e},{},{:e}",
                e.level, e.step, e.width, e.height, e.total, e.photometric, e.smoothness, e.masked_fraction, e.step_size
            );
        }
        std::fs::write(path, csv).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    }

    let report = OptimizeReport {
        width: w,
        height: h,
        final_loss: trace.final_loss().unwrap_or(f64::NAN),
        steps: trace.levels.iter().map(|l| l.steps).sum(),
        converged: trace.converged,
        monotone: trace.is_monotone(),
        levels: trace.levels.clone(),
    };
    let mut kv = format!(
        "width={w}\nheight={h}\nfinal_loss={:e}\nsteps={}\nconverged={}\nmonotone={}\n",
        report.final_loss, report.steps, report.converged, report.monotone
    );
    for l in &report.levels {
        let _ = writeln!(
            kv,
            "level.{}={}x{} steps={} outcome={:?}",
            l.level, l.width, l.height, l.steps, l.outcome
        );
    }
    emit(&kv, &report, &cfg, json)
}

#[derive(Serialize)]
struct BackprojectSettings {
    format: String,
    max_depth: Option<f64>,
    intensity: bool,
}

#[derive(Serialize)]
struct BackprojectReport {
    width: usize,
    height: usize,
    valid_pixels: usize,
    points: usize,
    out_cloud: String,
}

fn backproject(a: BackprojectArgs, json: Option<&PathBuf>) -> CliResult {
    if let Some(m) = a.max_depth {
        if !(m > 0.0) {
            return Err(CliError::Usage(format!("--max-depth must be positive, got {m}")));
        }
    }
    let depth = load_depth(&a.depth)?;
    let (w, h) = (depth.width(), depth.height());
    let calib = read_calibration(&a.calib)?;
    let k = intrinsics_for(&calib, w, h)?;
    let image = a.image.as_deref().map(load_image).transpose()?;
    let cloud = back_project_capped(&depth, &k, image.as_ref(), a.max_depth.unwrap_or(f64::INFINITY))?;
    write_cloud(&cloud, &a.out_cloud, a.format)?;

    let settings = BackprojectSettings {
        format: format!("{:?}", a.format).to_lowercase(),
        max_depth: a.max_depth,
        intensity: image.is_some(),
    };
    let report = BackprojectReport {
        width: w,
        height: h,
        valid_pixels: depth.valid().iter().filter(|&&v| v).count(),
        points: cloud.len(),
        out_cloud: a.out_cloud.display().to_string(),
    };
    let kv = format!(
        "width={w}\nheight={h}\nvalid_pixels={}\npoints={}\nout_cloud={}\n",
        report.valid_pixels, report.points, report.out_cloud
    );
    emit(&kv, &report, &settings, json)
}

fn eval(a: EvalArgs, mut cfg: pldepth::eval::EvalConfig, json: Option<&PathBuf>) -> CliResult {
    if let Some(s) = a.scaling {
        cfg.scaling = s;
    }
    if let Some(v) = a.min_depth {
        cfg.min_depth = v;
    }
    if let Some(v) = a.max_depth {
        cfg.max_depth = v;
    }
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let pred = load_depth(&a.pred)?;
    let gt = load_depth(&a.gt)?;
    let report = compute_metrics(&pred, &gt, &cfg)?;
    emit(&report.to_key_values(), &report, &cfg, json)
}

fn bench(a: BenchArgs, mut cfg: pldepth::bench::BenchConfig, json: Option<&PathBuf>) -> CliResult {
    if let Some(r) = a.model_res {
        cfg.model_res = r;
    }
    if let Some(r) = a.image_res {
        cfg.image_res = r;
    }
    if let Some(v) = a.iters {
        cfg.iterations = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup = v;
    }
    if a.threads.is_some() {
        cfg.threads = a.threads;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if a.no_network {
        cfg.stages.network = false;
    }
    if cfg.iterations == 0 {
        return Err(CliError::Usage("--iters must be at least 1".into()));
    }
    if cfg.threads == Some(0) {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    if cfg.stages.network && (cfg.model_res.0 % 32 != 0 || cfg.model_res.1 % 32 != 0) {
        return Err(CliError::Usage(format!(
            "model resolution {}x{} must be a multiple of 32 when the network stage runs",
            cfg.model_res.0, cfg.model_res.1
        )));
    }
    let report = run_benchmark(&cfg)?;
    emit(&report.to_key_values(), &report, &cfg, json)
}

#[derive(Serialize)]
struct ArchRow {
    label: String,
    name: String,
    output: String,
    params: Option<u64>,
}

#[derive(Serialize)]
struct ArchReport {
    variant: &'static str,
    input: String,
    total_params: u64,
    rows: Vec<ArchRow>,
}

#[derive(Serialize)]
struct ArchSettings {
    stereo: bool,
    input_res: (usize, usize),
}

fn arch(a: ArchArgs, json: Option<&PathBuf>) -> CliResult {
    let stereo = !a.mono;
    let mut spec = build_encoder(stereo);
    if let Some((w, h)) = a.input_res {
        spec = spec.with_input_resolution(h, w);
    }
    let input = spec.input_shape;
    let rows = spec.summary_rows().map_err(|e| CliError::Usage(e.to_string()))?;
    let total = spec.param_count().total;

    let label_w = rows.iter().map(|r| r.label.len()).max().unwrap_or(0).max(12);
    let name_w = rows.iter().map(|r| r.name.len()).max().unwrap_or(0).max(4);
    let mut text = format!(
        "{:<label_w$}  {:<name_w$}  {:<20}  {:>12}\n",
        "Layer (type)", "name", "Output Shape", "Param #"
    );
    text.push_str(&"=".repeat(label_w + name_w + 38));
    text.push('\n');
    for r in &rows {
        let params = r.params.map(with_commas).unwrap_or_else(|| "--".into());
        let _ = writeln!(
            text,
            "{:<label_w$}  {:<name_w$}  {:<20}  {:>12}",
            r.label,
            r.name,
            r.output.to_string(),
            params
        );
    }
    text.push_str(&"=".repeat(label_w + name_w + 38));
    text.push('\n');
    let _ = writeln!(text, "Total params: {}", with_commas(total));
    let _ = writeln!(text, "variant={}", if stereo { "stereo" } else { "mono" });
    let _ = writeln!(text, "input={input}");
    let _ = writeln!(text, "total_params={total}");

    let report = ArchReport {
        variant: if stereo { "stereo" } else { "mono" },
        input: input.to_string(),
        total_params: total,
        rows: rows
            .into_iter()
            .map(|r| ArchRow {
                label: r.label,
                name: r.name,
                output: r.output.to_string(),
                params: r.params,
            })
            .collect(),
    };
    let settings = ArchSettings {
        stereo,
        input_res: (input.width, input.height),
    };
    emit(&text, &report, &settings, json)
}
