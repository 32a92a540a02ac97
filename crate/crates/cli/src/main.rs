use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use geocorr::adapter::{train, write_trace, AdapterNet};
use geocorr::canonicalize::{canonicalize_yaw, CanonicalizeConfig, FileAnswers, OracleEstimator, OrientationEstimator, Pivot};
use geocorr::eval::AnnotationSet;
use geocorr::geometry::io::{load_mesh, write_descriptors, write_mesh};
use geocorr::pipeline::{
    load_training_pairs, run_eval, run_pipeline, worker_count, write_eval, write_run, write_synthetic_dataset, Manifest, PipelineConfig,
    RunReport, SyntheticDataset,
};
use geocorr::pose::{refine_pose, PoseParams, RefineConfig};
use geocorr::raster::{CameraModel, MaskImage};
use geocorr::synth::{make_scene, MeshKind, SceneParams};

/// Exit code when the manifest lists no pairs.
const EXIT_EMPTY: u8 = 3;
/// Exit code when every pair failed.
const EXIT_ALL_FAILED: u8 = 4;

const CHECKPOINT_FILE: &str = "adapter.gcad";
const TRACE_FILE: &str = "trace.csv";

#[derive(Parser)]
#[command(name = "geocorr", version, about = "Geometry-verified pseudo-labels for semantic correspondence")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic scene, or a whole synthetic dataset with --pairs.
    Synth(SynthArgs),
    /// Fit scale and translation of a mesh to an observed mask.
    RefinePose(RefinePoseArgs),
    /// Rotate a mesh about the vertical axis into the canonical yaw.
    Canonicalize(CanonicalizeArgs),
    /// Produce geometry-verified labels for every pair of a manifest.
    GenerateLabels(RunArgs),
    /// Generate labels, train an adapter on them and evaluate if annotations exist.
    Run(RunArgs),
    /// Train an adapter on the kept labels of a finished run.
    TrainAdapter(TrainArgs),
    /// Keypoint transfer accuracy and filter validation of a finished run.
    Eval(EvalArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Tetra,
    Cube,
    Icosphere,
    Strip,
    Blob,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "icosphere")]
    kind: Kind,
    /// Subdivisions for icosphere and blob, triangles for strip.
    #[arg(long, default_value_t = 2)]
    n: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 80)]
    size: usize,
    #[arg(long, default_value_t = 30.0)]
    yaw: f64,
    #[arg(long, default_value_t = 15.0)]
    elevation: f64,
    /// Write a dataset with this many pairs and a manifest instead of one scene.
    #[arg(long)]
    pairs: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RefinePoseArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    /// Starting pose; identity when absent.
    #[arg(long)]
    init: Option<PathBuf>,
    /// Pipeline config whose `refine` table is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CanonicalizeArgs {
    #[arg(long)]
    mesh: PathBuf,
    #[arg(long)]
    camera: PathBuf,
    #[arg(long)]
    pose: PathBuf,
    /// `oracle` or a JSON answer file `{"yaws": [...]}`.
    #[arg(long)]
    estimator: String,
    /// True yaw offset of the mesh for the oracle, in degrees.
    #[arg(long, default_value_t = 0.0)]
    oracle_offset: f64,
    /// Directory receiving the rendered views for an external estimator.
    #[arg(long)]
    views: Option<PathBuf>,
    #[arg(long)]
    pivot_origin: bool,
    #[arg(long, default_value_t = 0.0)]
    azimuth_offset: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; falls back to the config's `output_root`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory for the checkpoint and loss trace.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    annotations: PathBuf,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Pool all keypoints instead of averaging per image.
    #[arg(long)]
    per_keypoint: bool,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(&a),
        Command::RefinePose(a) => refine(&a),
        Command::Canonicalize(a) => canonicalize(&a),
        Command::GenerateLabels(a) => generate(&a, false),
        Command::Run(a) => generate(&a, true),
        Command::TrainAdapter(a) => train_adapter(&a),
        Command::Eval(a) => eval(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => Ok(PipelineConfig::load(p)?),
        None => Ok(PipelineConfig::default()),
    }
}

fn synth(a: &SynthArgs) -> Result<ExitCode> {
    if let Some(pairs) = a.pairs {
        let params = SyntheticDataset { pairs, image_size: a.size, ..SyntheticDataset::default() };
        let manifest = write_synthetic_dataset(&a.out, &params, a.seed)?;
        log::info!("wrote {}", manifest.display());
        return Ok(ExitCode::SUCCESS);
    }
    let kind = match a.kind {
        Kind::Tetra => MeshKind::Tetra,
        Kind::Cube => MeshKind::Cube,
        Kind::Icosphere => MeshKind::Icosphere { n: a.n },
        Kind::Strip => MeshKind::Strip { k: a.n as usize },
        Kind::Blob => MeshKind::Blob { n: a.n },
    };
    let params = SceneParams { kind, image_size: a.size, yaw_deg: a.yaw, elevation_deg: a.elevation, ..SceneParams::default() };
    let scene = make_scene(&params, a.seed)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_mesh(&scene.mesh, a.out.join("mesh.ply"))?;
    if let Some(d) = scene.mesh.descriptors() {
        write_descriptors(d, a.out.join("mesh.gcdf"))?;
    }
    scene.mask.write(a.out.join("mask.pgm"))?;
    write_json(&a.out.join("camera.json"), &scene.camera)?;
    write_json(&a.out.join("pose.json"), &scene.gt_pose)?;
    log::info!("scene with {} vertices written to {}", scene.mesh.vertex_count(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct PoseReport {
    log_scale: f64,
    translation: [f64; 3],
    final_dt_loss: f64,
    final_iou_loss: f64,
    steps_dt: usize,
    steps_iou: usize,
}

fn refine(a: &RefinePoseArgs) -> Result<ExitCode> {
    let refine: RefineConfig = load_config(a.config.as_deref())?.refine;
    let mesh = load_mesh::<f64>(&a.mesh)?;
    let camera: CameraModel<f64> = read_json(&a.camera)?;
    let mask = MaskImage::read(&a.mask)?;
    let init = match &a.init {
        Some(p) => read_json(p)?,
        None => PoseParams::identity(),
    };
    let r = refine_pose(&mesh, &camera, &mask, init, &refine)?;
    let report = PoseReport {
        log_scale: r.pose.log_scale,
        translation: r.pose.translation,
        final_dt_loss: r.final_dt_loss,
        final_iou_loss: r.final_iou_loss,
        steps_dt: refine.steps_dt,
        steps_iou: refine.steps_iou,
    };
    write_json(&a.out, &report)?;
    log::info!("pose refined, soft-IoU loss {:.4}", r.final_iou_loss);
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct CanonReport<'a> {
    correction_deg: u16,
    votes: &'a [geocorr::canonicalize::ViewVote],
}

fn canonicalize(a: &CanonicalizeArgs) -> Result<ExitCode> {
    let mesh = load_mesh::<f64>(&a.mesh)?;
    let camera: CameraModel<f64> = read_json(&a.camera)?;
    let pose: PoseParams<f64> = read_json(&a.pose)?;
    let estimator: Box<dyn OrientationEstimator> = if a.estimator == "oracle" {
        Box::new(OracleEstimator::perfect(a.oracle_offset))
    } else {
        let answers = FileAnswers::load(&a.estimator)?;
        Box::new(match &a.views {
            Some(dir) => answers.with_view_dir(dir),
            None => answers,
        })
    };
    let cfg = CanonicalizeConfig {
        pivot: if a.pivot_origin { Pivot::Origin } else { Pivot::AabbCenter },
        azimuth_offset_deg: a.azimuth_offset,
    };
    let canon = canonicalize_yaw(&mesh, &camera, &pose, estimator.as_ref(), &cfg)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    write_mesh(&canon.mesh, &a.out)?;
    if let Some(report) = &a.report {
        write_json(report, &CanonReport { correction_deg: canon.correction.degrees(), votes: &canon.votes })?;
    }
    log::info!("yaw correction {} degrees", canon.correction.degrees());
    Ok(ExitCode::SUCCESS)
}

fn run_exit_code(report: &RunReport) -> ExitCode {
    if report.pairs_total == 0 {
        log::error!("manifest lists no pairs");
        ExitCode::from(EXIT_EMPTY)
    } else if report.pairs_ok == 0 {
        log::error!("all {} pairs failed", report.pairs_total);
        ExitCode::from(EXIT_ALL_FAILED)
    } else {
        ExitCode::SUCCESS
    }
}

fn generate(a: &RunArgs, full: bool) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    let out = match a.out.clone().or_else(|| cfg.output_root.clone()) {
        Some(o) => o,
        None => bail!("no output directory: pass --out or set output_root"),
    };
    let (manifest, root) = Manifest::load(&a.manifest)?;
    let workers = worker_count();
    log::info!("{} pairs on {workers} workers", manifest.pairs.len());
    let run = run_pipeline(&cfg, &manifest, &root, workers)?;
    write_run(&run, &out)?;
    let r = &run.report;
    log::info!("{}/{} pairs ok, {} of {} labels kept", r.pairs_ok, r.pairs_total, r.labels_kept, r.labels_total);
    if r.pairs_total == 0 || r.pairs_ok == 0 || !full {
        return Ok(run_exit_code(r));
    }

    let net = train_on_run(&cfg, &out, &out)?;
    if let Some(ann) = &manifest.annotations {
        let ann_path = cfg.input_root.clone().unwrap_or(root).join(ann);
        let set = AnnotationSet::read(&ann_path)?;
        let report = run_eval(&out, &set, net.as_ref(), false)?;
        write_eval(&report, &out)?;
        log_pck(&report);
    }
    Ok(ExitCode::SUCCESS)
}

fn train_on_run(cfg: &PipelineConfig, run_dir: &Path, out: &Path) -> Result<Option<AdapterNet<f64>>> {
    let pairs = load_training_pairs(run_dir)?;
    if pairs.is_empty() {
        log::warn!("no kept labels to train on");
        return Ok(None);
    }
    let dim = pairs[0].src.channels();
    let net = cfg.adapter.network::<f64>(dim)?;
    let outcome = train(net, &pairs, &cfg.adapter)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    outcome.net.save(out.join(CHECKPOINT_FILE))?;
    write_trace(out.join(TRACE_FILE), &outcome.trace)?;
    if let Some(last) = outcome.trace.last() {
        log::info!("adapter trained on {} pairs, final loss {:.4}", pairs.len(), last.total());
    }
    Ok(Some(outcome.net))
}

fn train_adapter(a: &TrainArgs) -> Result<ExitCode> {
    let cfg = load_config(a.config.as_deref())?;
    if train_on_run(&cfg, &a.run, &a.out)?.is_none() {
        bail!("run {} has no kept labels", a.run.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn log_pck(report: &geocorr::pipeline::EvalReport) {
    for row in &report.pck {
        log::info!("PCK@{}: {:.4} over {} pairs", row.alpha, row.pck, row.pairs);
    }
}

fn eval(a: &EvalArgs) -> Result<ExitCode> {
    let set = AnnotationSet::read(&a.annotations)?;
    let net = a.checkpoint.as_ref().map(AdapterNet::<f64>::load).transpose()?;
    let report = run_eval(&a.run, &set, net.as_ref(), a.per_keypoint)?;
    write_eval(&report, &a.out)?;
    log_pck(&report);
    Ok(ExitCode::SUCCESS)
}
