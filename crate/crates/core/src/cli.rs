//! The `affect` command line: argument parsing, config resolution, run
//! manifests and exit codes.
//!
//! Exit codes: 0 success, 1 bad arguments, config or input data, 2 a
//! failure while running. JSON results go to stdout, progress to stderr.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use serde_json::json;

use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::config::{Config, ConfigError};
use crate::data::annotations::{load_annotations, write_predictions};
use crate::data::pnm::{list_images, load_images, read_pnm, write_pnm};
use crate::data::synthetic::FrameRenderer;
use crate::data::{
    assign_folds, folds_for, generate_synthetic, read_folds, write_features, write_folds, DataError, Dataset,
    ANNOTATIONS_DIR, FEATURES_DIR, FOLDS_FILE, FRAMES_DIR,
};
use crate::labels::{Task, TaskLabels, NUM_EXPR};
use crate::mae::{extract_features, finetune, finetune_head_swap, pretrain, smoothed_reduction, synthetic_images};
use crate::mae::{MaeClassifier, MaeError, MaeModel};
use crate::nn::Module;
use crate::objectives::score_labels;
use crate::temporal::{TemporalError, TemporalModel};
use crate::trainer::{evaluate, predict, run_folds, split_by_fold, train_task, write_log_csv, TrainConfig, TrainError};
use crate::Rng;

pub const THREADS_ENV: &str = "AFFECT_NUM_THREADS";
pub const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Debug, Parser)]
#[command(name = "affect", version, about = "Continuous affect recognition from face video features")]
pub struct Cli {
    /// Config file (`key = value` lines), or the built-in `desk` or `published`
    #[arg(long, global = true, default_value = "desk")]
    pub config: String,
    /// Seed for generation, initialisation, masking and shuffling [default: 0]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; created if missing
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Self-supervised masked-autoencoder pre-training on frame images
    PretrainMae(PretrainArgs),
    /// Supervised expression fine-tuning of a pre-trained MAE encoder
    FinetuneMae(FinetuneArgs),
    /// Encode frame images into per-frame feature files
    ExtractFeatures(ExtractArgs),
    /// Generate a synthetic dataset with a known optimal predictor
    GenSynthetic(SyntheticArgs),
    /// Train the temporal model for one task on one fold
    Train(TrainArgs),
    /// Score prediction files against gold annotations
    Evaluate(EvaluateArgs),
    /// Write per-frame predictions from a trained checkpoint
    Predict(PredictArgs),
    /// Cross-validate every task over video-disjoint folds
    RunFolds(RunFoldsArgs),
}

#[derive(Debug, Args, Default)]
pub struct OptimFlags {
    /// Peak learning rate [desk: 1e-3, published: 3e-5]
    #[arg(long)]
    pub lr: Option<f64>,
    /// AdamW decoupled weight decay [default: 1e-5]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Segments per batch [desk: 8, published: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Training epochs; the first one is linear warm-up [default: 20]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Head dropout [default: 0.3]
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Segment window in frames [desk: 64, published: 300]
    #[arg(long)]
    pub window: Option<usize>,
    /// Segment stride in frames [desk: 32, published: 200]
    #[arg(long)]
    pub stride: Option<usize>,
    /// Global gradient-norm cap, 0 disables [default: 1.0]
    #[arg(long)]
    pub grad_clip: Option<f64>,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Directory of PGM/PPM images, searched recursively; synthetic blobs when absent
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Number of synthetic images when --images is absent
    #[arg(long, default_value_t = 64)]
    pub count: usize,
    /// Use every n-th image
    #[arg(long, default_value_t = 1)]
    pub every: usize,
    /// Pre-training epochs [desk: 13, published: 500]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Images per batch [desk: 16, published: 1024]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate [default: 5e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Fraction of patches hidden from the encoder [default: 0.75]
    #[arg(long)]
    pub mask_ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Pre-trained MAE checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root with frames/<video>/ and annotations/EXPR/
    #[arg(long)]
    pub data: PathBuf,
    /// Fine-tuning epochs [desk: 5, published: 10]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Images per batch [desk: 16, published: 256]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate [desk: 5e-4, published: 1e-4]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Use every n-th frame [default: 10]
    #[arg(long)]
    pub frame_step: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// MAE or fine-tuned classifier checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root with frames/<video>/; annotations and folds are copied along
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct SyntheticArgs {
    /// Number of videos [default: 10]
    #[arg(long)]
    pub videos: Option<usize>,
    /// Frames per video [default: 600]
    #[arg(long)]
    pub frames: Option<usize>,
    /// Latent dimension [default: 4]
    #[arg(long)]
    pub latent_dim: Option<usize>,
    /// Feature dimension [default: 32]
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Feature noise standard deviation [default: 0.1]
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Also render frames/<video>/NNNNNN.pgm at the MAE image size
    #[arg(long)]
    pub images: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// va, expr or au
    #[arg(long)]
    pub task: Task,
    /// Dataset root with features/ and annotations/
    #[arg(long)]
    pub data: PathBuf,
    /// Validation fold; the others train
    #[arg(long, default_value_t = 0)]
    pub fold: usize,
    #[command(flatten)]
    pub optim: OptimFlags,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// va, expr or au
    #[arg(long)]
    pub task: Task,
    /// Predictions: a dataset root or an annotations directory
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold labels: a dataset root or an annotations directory
    #[arg(long)]
    pub gold: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Trained temporal-model checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset root with features/
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunFoldsArgs {
    /// Number of folds [default: 5]
    #[arg(long)]
    pub k: Option<usize>,
    /// Comma-separated tasks
    #[arg(long, value_delimiter = ',', default_value = "va,expr,au")]
    pub tasks: Vec<Task>,
    /// Dataset root; a synthetic dataset from the config is generated when absent
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[command(flatten)]
    pub optim: OptimFlags,
}

/// A failed command, carrying its exit code.
#[derive(Debug)]
pub enum CliError {
    Invalid(String),
    Runtime(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Invalid(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        if e.is_validation() {
            CliError::Invalid(e.to_string())
        } else {
            CliError::Runtime(e.to_string())
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Invalid(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Segmentation(_) | TrainError::Temporal(TemporalError::Config(_)) => {
                CliError::Invalid(e.to_string())
            }
            TrainError::Data(d) => d.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TemporalError> for CliError {
    fn from(e: TemporalError) -> Self {
        TrainError::from(e).into()
    }
}

impl From<MaeError> for CliError {
    fn from(e: MaeError) -> Self {
        match e {
            MaeError::Config(_) | MaeError::DegenerateMask { .. } | MaeError::ImageShape { .. } => {
                CliError::Invalid(e.to_string())
            }
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

/// Parse `argv` (program name first), run the command, and return the
/// process exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .try_init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return e.code();
    }
    let line: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match run(&cli, &line.join(" ")) {
        Ok(value) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("results serialise"));
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Invalid(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Base config from `--config` and `--seed`, before subcommand flags.
pub fn resolve_config(name: &str, seed: Option<u64>) -> Result<Config, CliError> {
    let mut cfg = match name {
        "published" => Config::default(),
        "desk" => Config::desk(),
        path => {
            let mut c = Config::default();
            c.apply_file(Path::new(path))?;
            c
        }
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn set_opt<T: ToString>(cfg: &mut Config, key: &str, value: Option<T>) -> Result<(), CliError> {
    if let Some(v) = value {
        cfg.set(key, &v.to_string())?;
    }
    Ok(())
}

fn apply_optim_flags(cfg: &mut Config, f: &OptimFlags) -> Result<(), CliError> {
    set_opt(cfg, "lr", f.lr)?;
    set_opt(cfg, "weight_decay", f.weight_decay)?;
    set_opt(cfg, "batch_size", f.batch_size)?;
    set_opt(cfg, "epochs", f.epochs)?;
    set_opt(cfg, "dropout", f.dropout)?;
    set_opt(cfg, "window", f.window)?;
    set_opt(cfg, "stride", f.stride)?;
    set_opt(cfg, "grad_clip", f.grad_clip)
}

fn command_config(cli: &Cli) -> Result<Config, CliError> {
    let mut cfg = resolve_config(&cli.config, cli.seed)?;
    match &cli.command {
        Command::PretrainMae(a) => {
            set_opt(&mut cfg, "mae_pretrain_epochs", a.epochs)?;
            set_opt(&mut cfg, "mae_pretrain_batch", a.batch_size)?;
            set_opt(&mut cfg, "mae_pretrain_lr", a.lr)?;
            set_opt(&mut cfg, "mae_mask_ratio", a.mask_ratio)?;
        }
        Command::FinetuneMae(a) => {
            set_opt(&mut cfg, "mae_finetune_epochs", a.epochs)?;
            set_opt(&mut cfg, "mae_finetune_batch", a.batch_size)?;
            set_opt(&mut cfg, "mae_finetune_lr", a.lr)?;
            set_opt(&mut cfg, "mae_frame_step", a.frame_step)?;
        }
        Command::GenSynthetic(a) => {
            set_opt(&mut cfg, "num_videos", a.videos)?;
            set_opt(&mut cfg, "frames_per_video", a.frames)?;
            set_opt(&mut cfg, "latent_dim", a.latent_dim)?;
            set_opt(&mut cfg, "feature_dim", a.feature_dim)?;
            set_opt(&mut cfg, "noise_std", a.noise_std)?;
        }
        Command::Train(a) => apply_optim_flags(&mut cfg, &a.optim)?,
        Command::RunFolds(a) => {
            apply_optim_flags(&mut cfg, &a.optim)?;
            set_opt(&mut cfg, "folds", a.k)?;
        }
        Command::ExtractFeatures(_) | Command::Evaluate(_) | Command::Predict(_) => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_manifest(out: &Path, command: &str, cfg: &Config) -> Result<(), CliError> {
    let threads = std::env::var(THREADS_ENV).unwrap_or_else(|_| "default".into());
    let text = format!(
        "# affect run manifest\ncommand = {command}\nversion = {}\nthreads = {threads}\n\n{}",
        env!("CARGO_PKG_VERSION"),
        cfg.to_text()
    );
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, text).map_err(|e| io_error(&path, e))
}

fn run(cli: &Cli, command_line: &str) -> Result<serde_json::Value, CliError> {
    let cfg = command_config(cli)?;
    let out = &cli.out;
    fs::create_dir_all(out).map_err(|e| io_error(out, e))?;
    write_manifest(out, command_line, &cfg)?;
    match &cli.command {
        Command::PretrainMae(a) => pretrain_mae(a, &cfg, out),
        Command::FinetuneMae(a) => finetune_mae(a, &cfg, out),
        Command::ExtractFeatures(a) => extract(a, out),
        Command::GenSynthetic(a) => gen_synthetic(a, &cfg, out),
        Command::Train(a) => train(a, &cfg, out),
        Command::Evaluate(a) => evaluate_dirs(a),
        Command::Predict(a) => predict_dir(a, out),
        Command::RunFolds(a) => folds(a, &cfg, out),
    }
}

fn checkpoint_header(kind: &str, cfg: &Config, extra: &[(&str, String)]) -> Vec<(String, String)> {
    let mut h = vec![("kind".to_string(), kind.to_string())];
    h.extend(extra.iter().map(|(k, v)| (k.to_string(), v.clone())));
    h.extend(cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)));
    h
}

fn expect_kind(ck: &Checkpoint, kinds: &[&str], path: &Path) -> Result<String, CliError> {
    let kind = ck.require("kind")?.to_string();
    if !kinds.contains(&kind.as_str()) {
        return Err(CliError::Invalid(format!(
            "{}: checkpoint kind '{kind}', expected {}",
            path.display(),
            kinds.join(" or ")
        )));
    }
    Ok(kind)
}

fn load_classifier(path: &Path) -> Result<(MaeClassifier, Config), CliError> {
    let ck = Checkpoint::load(path)?;
    let kind = expect_kind(&ck, &["mae", "mae-classifier"], path)?;
    let cfg = ck.config()?;
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let model = MaeModel::new(cfg.mae.clone(), &mut rng)?;
    if kind == "mae" {
        ck.load_into(&model.named_parameters())?;
        Ok((
            finetune_head_swap(model, NUM_EXPR, cfg.mae_fc_hidden, cfg.mae_fc_dropout, &mut rng),
            cfg,
        ))
    } else {
        let clf = finetune_head_swap(model, NUM_EXPR, cfg.mae_fc_hidden, cfg.mae_fc_dropout, &mut rng);
        ck.load_into(&clf.named_parameters())?;
        Ok((clf, cfg))
    }
}

fn pretrain_mae(a: &PretrainArgs, cfg: &Config, out: &Path) -> Result<serde_json::Value, CliError> {
    if a.every == 0 {
        return Err(CliError::Invalid("--every must be >= 1".into()));
    }
    let m = &cfg.mae;
    let images: Vec<_> = match &a.images {
        Some(dir) => load_images(dir)?.into_iter().map(|(_, t)| t).step_by(a.every).collect(),
        None => synthetic_images(a.count, m.image_height, m.image_width, m.channels, cfg.seed)
            .into_iter()
            .step_by(a.every)
            .collect(),
    };
    if images.is_empty() {
        return Err(CliError::Invalid("no images to pre-train on".into()));
    }
    let tc = cfg.mae_pretrain(images.len());
    log::info!("pre-training on {} images for {} steps", images.len(), tc.steps);
    let model = MaeModel::new(m.clone(), &mut Rng::seed_from_u64(cfg.seed))?;
    let losses = pretrain(&model, &images, &tc)?;
    let path = out.join("mae.ckpt");
    Checkpoint::new(checkpoint_header("mae", cfg, &[]), &model.named_parameters()).save(&path)?;
    let log_path = out.join("pretrain_log.csv");
    let text: String = std::iter::once("step,loss\n".to_string())
        .chain(losses.iter().enumerate().map(|(i, l)| format!("{},{l}\n", i + 1)))
        .collect();
    fs::write(&log_path, text).map_err(|e| io_error(&log_path, e))?;
    Ok(json!({
        "images": images.len(),
        "steps": losses.len(),
        "first_loss": losses.first(),
        "last_loss": losses.last(),
        "smoothed_reduction": smoothed_reduction(&losses, 5),
        "checkpoint": path,
    }))
}

/// Video directories under `root/frames`, sorted by name.
fn frame_dirs(root: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let frames = root.join(FRAMES_DIR);
    if !frames.is_dir() {
        return Err(CliError::Invalid(format!("{} is not a directory", frames.display())));
    }
    let mut dirs: Vec<(String, PathBuf)> = fs::read_dir(&frames)
        .map_err(|e| io_error(&frames, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .map(|p| (p.file_name().unwrap_or_default().to_string_lossy().into_owned(), p))
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn finetune_mae(a: &FinetuneArgs, cfg: &Config, out: &Path) -> Result<serde_json::Value, CliError> {
    let ck = Checkpoint::load(&a.checkpoint)?;
    expect_kind(&ck, &["mae"], &a.checkpoint)?;
    // architecture comes from the checkpoint, optimisation from this run
    let arch = ck.config()?;
    let mut run_cfg = cfg.clone();
    run_cfg.mae = arch.mae.clone();
    let mut rng = Rng::seed_from_u64(cfg.seed);
    let model = MaeModel::new(arch.mae.clone(), &mut rng)?;
    ck.load_into(&model.named_parameters())?;
    let clf = finetune_head_swap(model, NUM_EXPR, cfg.mae_fc_hidden, cfg.mae_fc_dropout, &mut rng);

    let gold = load_annotations(&a.data.join(ANNOTATIONS_DIR), Task::Expr)?;
    let (mut images, mut labels) = (Vec::new(), Vec::new());
    for (video, dir) in frame_dirs(&a.data)? {
        let Some(track) = gold.iter().find(|f| f.video_id == video) else {
            continue;
        };
        let TaskLabels::Expr(ids) = &track.labels else {
            unreachable!("EXPR directory holds expression tracks")
        };
        let paths = list_images(&dir)?;
        if paths.len() != ids.len() {
            return Err(CliError::Invalid(format!(
                "'{video}': {} frames but {} expression labels",
                paths.len(),
                ids.len()
            )));
        }
        for i in (0..paths.len()).step_by(cfg.mae_frame_step) {
            images.push(read_pnm(&paths[i])?);
            labels.push(ids[i]);
        }
    }
    if images.is_empty() {
        return Err(CliError::Invalid("no frames with expression labels".into()));
    }
    let tc = cfg.mae_finetune(images.len());
    log::info!("fine-tuning on {} frames for {} steps", images.len(), tc.steps);
    let losses = finetune(&clf, &images, &labels, &tc)?;
    let path = out.join("classifier.ckpt");
    Checkpoint::new(checkpoint_header("mae-classifier", &run_cfg, &[]), &clf.named_parameters()).save(&path)?;
    Ok(json!({
        "frames": images.len(),
        "steps": losses.len(),
        "first_loss": losses.first(),
        "last_loss": losses.last(),
        "checkpoint": path,
    }))
}

fn copy_tree(from: &Path, to: &Path) -> Result<(), CliError> {
    fs::create_dir_all(to).map_err(|e| io_error(to, e))?;
    for entry in fs::read_dir(from).map_err(|e| io_error(from, e))? {
        let path = entry.map_err(|e| io_error(from, e))?.path();
        let target = to.join(path.file_name().unwrap_or_default());
        if path.is_dir() {
            copy_tree(&path, &target)?;
        } else {
            fs::copy(&path, &target).map_err(|e| io_error(&path, e))?;
        }
    }
    Ok(())
}

fn extract(a: &ExtractArgs, out: &Path) -> Result<serde_json::Value, CliError> {
    let (clf, _) = load_classifier(&a.checkpoint)?;
    let feat_dir = out.join(FEATURES_DIR);
    fs::create_dir_all(&feat_dir).map_err(|e| io_error(&feat_dir, e))?;
    let mut videos = Vec::new();
    for (video, dir) in frame_dirs(&a.data)? {
        let frames: Vec<_> = load_images(&dir)?.into_iter().map(|(_, t)| t).collect();
        if frames.is_empty() {
            continue;
        }
        let features = extract_features(&clf, &frames)?;
        write_features(&feat_dir.join(format!("{video}.bin")), &features)?;
        log::info!("{video}: {} frames → {:?}", frames.len(), features.shape());
        videos.push(json!({"video": video, "frames": frames.len()}));
    }
    let ann = a.data.join(ANNOTATIONS_DIR);
    if ann.is_dir() && a.data.canonicalize().ok() != out.canonicalize().ok() {
        copy_tree(&ann, &out.join(ANNOTATIONS_DIR))?;
        let folds = a.data.join(FOLDS_FILE);
        if folds.is_file() {
            fs::copy(&folds, out.join(FOLDS_FILE)).map_err(|e| io_error(&folds, e))?;
        }
    }
    Ok(json!({"feature_dim": clf.feature_dim(), "videos": videos}))
}

fn gen_synthetic(a: &SyntheticArgs, cfg: &Config, out: &Path) -> Result<serde_json::Value, CliError> {
    let spec = cfg.synthetic_spec();
    let synth = generate_synthetic(&spec)?;
    synth.dataset.save(out)?;
    let ids = synth.dataset.video_ids();
    let folds = assign_folds(ids.len(), cfg.folds, cfg.seed)?;
    write_folds(&out.join(FOLDS_FILE), &ids, &folds)?;
    let oracle = synth.oracle_scores()?;
    log::info!(
        "oracle: CCC-V {:.4}, CCC-A {:.4}, Expr F1 {:.4}, AU F1 {:.4}",
        oracle.ccc_v,
        oracle.ccc_a,
        oracle.expr_f1,
        oracle.au_f1
    );
    let oracle_json = serde_json::to_string_pretty(&oracle).expect("scores serialise");
    let path = out.join("oracle.json");
    fs::write(&path, oracle_json).map_err(|e| io_error(&path, e))?;
    if a.images {
        let m = &cfg.mae;
        let renderer = FrameRenderer::new(spec.latent_dim, m.image_height, m.image_width, spec.seed);
        for (i, id) in ids.iter().enumerate() {
            let dir = out.join(FRAMES_DIR).join(id);
            fs::create_dir_all(&dir).map_err(|e| io_error(&dir, e))?;
            for (t, frame) in synth.render_video(i, &renderer).iter().enumerate() {
                write_pnm(&dir.join(format!("{t:06}.pgm")), frame)?;
            }
        }
    }
    Ok(json!({"videos": ids.len(), "frames_per_video": spec.frames_per_video, "oracle": oracle}))
}

/// Fold of every video: `folds.txt` when present, else a seeded assignment.
fn fold_assignment(data: &Dataset, root: Option<&Path>, k: usize, seed: u64) -> Result<Vec<usize>, CliError> {
    if let Some(path) = root.map(|r| r.join(FOLDS_FILE)).filter(|p| p.is_file()) {
        let folds = folds_for(data, &read_folds(&path)?)?;
        if let Some(&bad) = folds.iter().find(|&&f| f >= k) {
            return Err(CliError::Invalid(format!("{}: fold {bad} but k = {k}", path.display())));
        }
        return Ok(folds);
    }
    Ok(assign_folds(data.videos.len(), k, seed)?)
}

fn train(a: &TrainArgs, cfg: &Config, out: &Path) -> Result<serde_json::Value, CliError> {
    let data = Dataset::load(&a.data)?;
    if a.fold >= cfg.folds {
        return Err(CliError::Invalid(format!("--fold {} but k = {}", a.fold, cfg.folds)));
    }
    let folds = fold_assignment(&data, Some(&a.data), cfg.folds, cfg.seed)?;
    let (train_idx, val_idx) = split_by_fold(&folds, a.fold);
    let train = data.sequences(a.task, &train_idx)?;
    let val = data.sequences(a.task, &val_idx)?;
    let input_dim = data
        .feature_dim()
        .ok_or_else(|| CliError::Invalid(format!("{}: no feature files", a.data.display())))?;
    let model = TemporalModel::new(cfg.model_config(a.task, input_dim), &mut Rng::seed_from_u64(cfg.seed))?;
    let tc = TrainConfig::from_config(cfg)?;
    let outcome = train_task(a.task, &model, &train, &val, &tc)?;
    let extra = [("task", a.task.to_string()), ("input_dim", input_dim.to_string())];
    let ck_path = out.join("model.ckpt");
    Checkpoint::new(checkpoint_header("temporal", cfg, &extra), &model.named_parameters()).save(&ck_path)?;
    let log_path = out.join("train_log.csv");
    write_log_csv(&log_path, &outcome.log).map_err(|e| io_error(&log_path, e))?;
    let mut report = outcome.best_report.clone();
    report.fold = Some(a.fold);
    let result = json!({
        "task": a.task,
        "fold": a.fold,
        "best_epoch": outcome.best_epoch,
        "train_videos": train.len(),
        "val_videos": val.len(),
        "metrics": report,
        "primary": report.primary(),
    });
    let path = out.join("metrics.json");
    fs::write(&path, serde_json::to_string_pretty(&result).expect("metrics serialise")).map_err(|e| io_error(&path, e))?;
    Ok(result)
}

/// The directory holding `<TASK>/` annotation folders under `dir`.
fn annotation_root(dir: &Path) -> PathBuf {
    let nested = dir.join(ANNOTATIONS_DIR);
    if nested.is_dir() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn evaluate_dirs(a: &EvaluateArgs) -> Result<serde_json::Value, CliError> {
    let pred = load_annotations(&annotation_root(&a.pred), a.task)?;
    let gold = load_annotations(&annotation_root(&a.gold), a.task)?;
    let mut pairs = Vec::with_capacity(gold.len());
    for g in &gold {
        let p = pred
            .iter()
            .find(|p| p.video_id == g.video_id)
            .ok_or_else(|| CliError::Invalid(format!("no prediction for video '{}'", g.video_id)))?;
        pairs.push((&p.labels, &g.labels));
    }
    if pairs.is_empty() {
        return Err(CliError::Invalid(format!("no {} gold annotations", a.task)));
    }
    let report = score_labels(a.task, &pairs).map_err(|e| CliError::Invalid(e.to_string()))?;
    Ok(json!({"videos": pairs.len(), "metrics": report, "primary": report.primary()}))
}

fn load_temporal(path: &Path) -> Result<(TemporalModel, Config, Task), CliError> {
    let ck = Checkpoint::load(path)?;
    expect_kind(&ck, &["temporal"], path)?;
    let cfg = ck.config()?;
    let task: Task = ck
        .require("task")?
        .parse()
        .map_err(|e: String| CliError::Invalid(format!("{}: {e}", path.display())))?;
    let input_dim: usize = ck
        .require("input_dim")?
        .parse()
        .map_err(|_| CliError::Invalid(format!("{}: bad input_dim", path.display())))?;
    let model = TemporalModel::new(cfg.model_config(task, input_dim), &mut Rng::seed_from_u64(cfg.seed))?;
    ck.load_into(&model.named_parameters())?;
    Ok((model, cfg, task))
}

fn predict_dir(a: &PredictArgs, out: &Path) -> Result<serde_json::Value, CliError> {
    let (model, cfg, task) = load_temporal(&a.checkpoint)?;
    let data = Dataset::load(&a.data)?;
    let videos: Vec<_> = data.videos.iter().map(|v| (v.video_id.clone(), v.features.clone())).collect();
    let seg = cfg.segmentation().map_err(|e| CliError::Invalid(e.to_string()))?;
    let preds = predict(&model, &videos, &seg)?;
    let dir = out.join("predictions");
    let written = write_predictions(&dir, task, &preds, cfg.au_threshold)?;
    let mut result = json!({"task": task, "videos": preds.len(), "files": written.len(), "dir": dir});
    // score against the data's own annotations when it has them
    let seqs = data.all_sequences(task)?;
    if seqs.len() == data.videos.len() && !seqs.is_empty() {
        let tc = TrainConfig::from_config(&cfg)?;
        let (report, _) = evaluate(&model, &seqs, &tc)?;
        result["metrics"] = json!(report);
    }
    Ok(result)
}

fn folds(a: &RunFoldsArgs, cfg: &Config, out: &Path) -> Result<serde_json::Value, CliError> {
    let (data, synth) = match &a.data {
        Some(root) => (Dataset::load(root)?, None),
        None => {
            let synth = generate_synthetic(&cfg.synthetic_spec())?;
            (synth.dataset.clone(), Some(synth))
        }
    };
    let assignment = fold_assignment(&data, a.data.as_deref(), cfg.folds, cfg.seed)?;
    let mut tasks = a.tasks.clone();
    tasks.dedup();
    let mut table = run_folds(&data, &tasks, cfg, &assignment)?;
    if let Some(s) = &synth {
        table.add_oracle(s, &tasks)?;
    }
    let md = out.join("folds.md");
    fs::write(&md, table.to_text()).map_err(|e| io_error(&md, e))?;
    let js = out.join("folds.json");
    fs::write(&js, table.to_json()).map_err(|e| io_error(&js, e))?;
    eprint!("{}", table.to_text());
    Ok(serde_json::to_value(&table).expect("fold table serialises"))
}
