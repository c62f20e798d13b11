//! Command-line front end. Every subcommand resolves its configuration
//! (defaults, then `--config`, then flags), writes the resolved config next
//! to its outputs, and maps errors onto exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::checkpoint::Checkpoint;
use crate::clip::{train_clip, ClipAlignModel, TrainConfig};
use crate::config::{default_out_root, parse_override, resolve_config, write_resolved};
use crate::embedding::{
    read_embeddings, split_pairs, write_embeddings, DimPolicy, EmbeddingMatrix, Modality,
    PairEntry, PairManifest, PairedDataset, Split, AUDIO_DIM, VIDEO_DIM,
};
use crate::error::{Error, Result};
use crate::eval::{
    emit_report, prior_fidelity, ranks_csv, retrieval_metrics, Direction, DEFAULT_KS,
};
use crate::prior::{map_audio_to_goal, train_prior, CvaePrior, PriorConfig, PriorTrainPairs};
use crate::synth::{deterministic_prior_task, generate, PriorTaskSpec, SyntheticSpec};
use crate::windowing::{compute_windows, MediaInfo, WindowSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_TRAINING: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "avalign", version, about = "Audio-video embedding alignment and goal prior")]
#[command(arg_required_else_help = true)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate encoder outputs for one source and write a paired dataset.
    Ingest(IngestArgs),
    /// Compute the window manifest for a media file.
    Window(WindowArgs),
    /// Generate a synthetic paired dataset.
    Synth(SynthArgs),
    /// Train the contrastive alignment model.
    TrainClip(TrainClipArgs),
    /// Train the conditional goal prior.
    TrainPrior(TrainPriorArgs),
    /// Map audio classifier logits to goal embeddings.
    Map(MapArgs),
    /// Evaluate retrieval (clip) or prior fidelity.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// JSON configuration file layered over the defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override any configuration key (dotted paths allowed), e.g. --set lr=0.01.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Media-info JSON (source_id, duration_s, fps, sample_rate).
    #[arg(long)]
    pub media: PathBuf,
    /// Audio embeddings, one row per untrimmed window (EMB1 or CSV).
    #[arg(long)]
    pub audio: PathBuf,
    /// Video embeddings, one row per untrimmed window (EMB1 or CSV).
    #[arg(long)]
    pub video: PathBuf,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long)]
    pub leading_trim: Option<f64>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct WindowArgs {
    #[arg(long, conflicts_with = "media")]
    pub duration: Option<f64>,
    #[arg(long)]
    pub media: Option<PathBuf>,
    #[arg(long)]
    pub source_id: Option<String>,
    #[arg(long)]
    pub leading_trim: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Generator settings (alias of --config).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Emit condition/target pairs for the prior instead of audio/video pairs.
    #[arg(long)]
    pub prior_task: bool,
    #[arg(long)]
    pub n_pairs: Option<usize>,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    /// Full-scale defaults.
    Full,
    /// Batch 256, 30 epochs, lr 1e-4.
    Desk,
}

#[derive(Debug, Args)]
pub struct DimArgs {
    /// Accept audio embeddings of this width instead of 527.
    #[arg(long)]
    pub audio_dim: Option<usize>,
    /// Accept video embeddings of this width instead of 512.
    #[arg(long)]
    pub video_dim: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainClipArgs {
    /// Pair manifest (pairs.json) with train/test splits.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Audio embeddings (EMB1 or CSV).
    #[arg(long)]
    pub audio: PathBuf,
    /// Video embeddings (EMB1 or CSV).
    #[arg(long)]
    pub video: PathBuf,
    /// Checkpoint path; loss CSV and resolved config are written beside it.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "full")]
    pub preset: Preset,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[command(flatten)]
    pub dims: DimArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct TrainPriorArgs {
    /// Condition embeddings: shared-space rows, or audio rows with --clip.
    #[arg(long)]
    pub cond: PathBuf,
    /// Target goal embeddings.
    #[arg(long)]
    pub target: PathBuf,
    /// Manifest pairing condition rows (audio_row) with target rows (video_row).
    #[arg(long)]
    pub pairs: PathBuf,
    /// Project the conditions through this alignment checkpoint first.
    #[arg(long)]
    pub clip: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub kl_beta: Option<f64>,
    #[arg(long)]
    pub latent_dim: Option<usize>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub clip: PathBuf,
    #[arg(long)]
    pub prior: PathBuf,
    /// Audio classifier logits (EMB1 or CSV).
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Alignment checkpoint; evaluates retrieval unless --prior is given.
    #[arg(long)]
    pub clip: Option<PathBuf>,
    /// Prior checkpoint; evaluates sample fidelity.
    #[arg(long)]
    pub prior: Option<PathBuf>,
    #[arg(long)]
    pub pairs: PathBuf,
    /// Audio rows (retrieval) or conditions (fidelity).
    #[arg(long, alias = "cond")]
    pub audio: PathBuf,
    /// Video rows (retrieval) or targets (fidelity).
    #[arg(long, alias = "target")]
    pub video: PathBuf,
    /// Report path; per-query ranks go to `<stem>.ranks.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated K values.
    #[arg(long, value_delimiter = ',')]
    pub ks: Option<Vec<usize>>,
    #[command(flatten)]
    pub common: CommonArgs,
}

/// Parses `args` (including the program name) and runs the subcommand.
/// Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::TrainingAborted { .. } => EXIT_TRAINING,
        _ => EXIT_DATA,
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Ingest(a) => ingest(a),
        Command::Window(a) => window(a),
        Command::Synth(a) => synth(a),
        Command::TrainClip(a) => train_clip_cmd(a),
        Command::TrainPrior(a) => train_prior_cmd(a),
        Command::Map(a) => map_cmd(a),
        Command::Eval(a) => eval_cmd(a),
    }
}

fn flag_layer(common: &CommonArgs, named: Vec<(&str, Option<Value>)>) -> Result<Vec<(String, Value)>> {
    let mut flags: Vec<(String, Value)> = Vec::new();
    for o in &common.overrides {
        flags.push(parse_override(o)?);
    }
    for (k, v) in named {
        if let Some(v) = v {
            flags.push((k.to_string(), v));
        }
    }
    if let Some(seed) = common.seed {
        flags.push(("seed".into(), json!(seed)));
    }
    Ok(flags)
}

fn opt<T: Serialize>(v: &Option<T>) -> Option<Value> {
    v.as_ref().map(|v| serde_json::to_value(v).expect("flag values serialize"))
}

/// `dir/name` with `dir` created if needed.
fn in_dir(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    Ok(dir.join(name))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p).map_err(|e| Error::io(p, e)),
        _ => Ok(()),
    }
}

/// `out` with its extension replaced by `suffix` (e.g. `run.ckpt` ->
/// `run.loss.csv`).
pub fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().unwrap_or_default().to_string_lossy();
    out.with_file_name(format!("{stem}.{suffix}"))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads an EMB1 file, or a CSV/whitespace text file of one row per line.
pub fn load_matrix(path: &Path, modality: Modality) -> Result<EmbeddingMatrix> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    if matches!(ext, "csv" | "txt" | "tsv") {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut rows: Vec<Vec<f32>> = Vec::new();
        for (r, line) in text.lines().filter(|l| !l.trim().is_empty()).enumerate() {
            let row = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|t| !t.is_empty())
                .enumerate()
                .map(|(c, t)| {
                    let v: f32 = t.parse().map_err(|_| {
                        Error::Format(format!("{}: row {r}, col {c}: {t:?} is not a number", path.display()))
                    })?;
                    if v.is_finite() {
                        Ok(v)
                    } else {
                        Err(Error::NonFinite { row: r, col: c })
                    }
                })
                .collect::<Result<Vec<f32>>>()?;
            rows.push(row);
        }
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(r) = rows.iter().position(|row| row.len() != dim) {
            return Err(Error::Format(format!(
                "{}: row {r} has {} values, expected {dim}",
                path.display(),
                rows[r].len()
            )));
        }
        let data: Vec<f32> = rows.concat();
        return EmbeddingMatrix::new(modality, rows.len(), dim.max(1), data);
    }
    Ok(read_embeddings(path)?.with_modality(modality))
}

fn policy(dims: &DimArgs) -> DimPolicy {
    DimPolicy {
        audio: Some(dims.audio_dim.unwrap_or(AUDIO_DIM)),
        video: Some(dims.video_dim.unwrap_or(VIDEO_DIM)),
        ..DimPolicy::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub window_len_s: f64,
    pub overlap: f64,
    pub n_frames: usize,
    /// Windows starting before this time are dropped.
    pub leading_trim_s: f64,
    pub test_fraction: f64,
    pub seed: u64,
    pub audio_dim: usize,
    pub video_dim: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        let w = WindowSpec::default();
        IngestConfig {
            window_len_s: w.window_len_s,
            overlap: w.overlap,
            n_frames: w.n_frames,
            leading_trim_s: WindowSpec::INGEST_LEADING_TRIM_S,
            test_fraction: 0.1,
            seed: 0,
            audio_dim: AUDIO_DIM,
            video_dim: VIDEO_DIM,
        }
    }
}

fn ingest(a: &IngestArgs) -> Result<()> {
    let flags = flag_layer(
        &a.common,
        vec![
            ("test_fraction", opt(&a.test_fraction)),
            ("leading_trim_s", opt(&a.leading_trim)),
        ],
    )?;
    let cfg: IngestConfig = resolve_config(&IngestConfig::default(), a.common.config.as_deref(), &flags)?;
    let media = MediaInfo::read(&a.media)?;
    let spec = WindowSpec {
        window_len_s: cfg.window_len_s,
        overlap: cfg.overlap,
        fps: media.fps,
        n_frames: cfg.n_frames,
        sample_rate: media.sample_rate,
        leading_trim_s: 0.0,
    };
    let all = compute_windows(&media.source_id, media.duration_s, &spec)?;
    let audio = load_matrix(&a.audio, Modality::Audio)?;
    let video = load_matrix(&a.video, Modality::Video)?;
    let policy = DimPolicy {
        audio: Some(cfg.audio_dim),
        video: Some(cfg.video_dim),
        ..DimPolicy::default()
    };
    policy.check(&audio)?;
    policy.check(&video)?;
    for (name, m) in [("audio", &audio), ("video", &video)] {
        if m.rows() != all.windows.len() {
            return Err(Error::Dimension(format!(
                "{name} has {} rows but {} has {} windows",
                m.rows(),
                media.source_id,
                all.windows.len()
            )));
        }
    }
    let keep: Vec<usize> = all
        .windows
        .iter()
        .enumerate()
        .filter(|(_, w)| w.start_s + 1e-9 >= cfg.leading_trim_s)
        .map(|(i, _)| i)
        .collect();
    if keep.is_empty() {
        return Err(Error::InvalidInput(format!(
            "no windows of {} start after the {} s leading trim",
            media.source_id, cfg.leading_trim_s
        )));
    }
    let manifest = PairManifest {
        entries: keep
            .iter()
            .enumerate()
            .map(|(row, &i)| PairEntry {
                source_id: media.source_id.clone(),
                window_index: all.windows[i].index,
                audio_row: row,
                video_row: row,
                split: Split::Train,
            })
            .collect(),
    };
    let ds = PairedDataset::new(audio.select_rows(&keep), video.select_rows(&keep), manifest)?;
    let ds = split_pairs(&ds, cfg.test_fraction, cfg.seed)?;
    let (zero_a, zero_v) = (
        crate::embedding::l2_normalize_rows(ds.audio()).1.len(),
        crate::embedding::l2_normalize_rows(ds.video()).1.len(),
    );
    if zero_a + zero_v > 0 {
        log::warn!("{zero_a} audio and {zero_v} video rows have zero norm");
    }
    let dir = a.out_dir.clone().unwrap_or_else(|| default_out_root().join("ingest"));
    write_embeddings(in_dir(&dir, "audio.emb")?, ds.audio())?;
    write_embeddings(dir.join("video.emb"), ds.video())?;
    ds.manifest().write(dir.join("pairs.json"))?;
    write_resolved(&cfg, dir.join("config.json"))?;
    println!("{} pairs from {} into {}", ds.len(), media.source_id, dir.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowRunConfig {
    pub source_id: String,
    pub duration_s: Option<f64>,
    pub spec: WindowSpec,
}

impl Default for WindowRunConfig {
    fn default() -> Self {
        WindowRunConfig {
            source_id: "media".into(),
            duration_s: None,
            spec: WindowSpec::default(),
        }
    }
}

fn window(a: &WindowArgs) -> Result<()> {
    let mut named = vec![
        ("duration_s", opt(&a.duration)),
        ("spec.leading_trim_s", opt(&a.leading_trim)),
    ];
    if let Some(path) = &a.media {
        let m = MediaInfo::read(path)?;
        named.push(("source_id", Some(json!(m.source_id))));
        named.push(("duration_s", Some(json!(m.duration_s))));
        named.push(("spec.fps", Some(json!(m.fps))));
        named.push(("spec.sample_rate", Some(json!(m.sample_rate))));
    }
    named.push(("source_id", opt(&a.source_id)));
    let cfg: WindowRunConfig = resolve_config(
        &WindowRunConfig::default(),
        a.common.config.as_deref(),
        &flag_layer(&CommonArgs { seed: None, ..a.common.clone() }, named)?,
    )?;
    let duration = cfg
        .duration_s
        .ok_or_else(|| Error::Config("a duration is required (--duration or --media)".into()))?;
    let manifest = compute_windows(&cfg.source_id, duration, &cfg.spec)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| default_out_root().join("window").join("windows.json"));
    ensure_parent(&out)?;
    manifest.write(&out)?;
    write_resolved(&cfg, sibling(&out, "config.json"))?;
    println!("{} windows -> {}", manifest.windows.len(), out.display());
    Ok(())
}

fn synth(a: &SynthArgs) -> Result<()> {
    let file = a.spec.as_deref().or(a.common.config.as_deref());
    let dir = a.out_dir.clone().unwrap_or_else(|| default_out_root().join("synth"));
    let named = vec![("n_pairs", opt(&a.n_pairs))];
    if a.prior_task {
        let spec: PriorTaskSpec = resolve_config(&PriorTaskSpec::default(), file, &flag_layer(&a.common, named)?)?;
        let pairs = deterministic_prior_task(&spec)?;
        let ds = PairedDataset::new(
            pairs.condition().clone(),
            pairs.target().clone(),
            PairManifest::aligned("synthetic-prior", pairs.len()),
        )?;
        let ds = if ds.is_empty() { ds } else { split_pairs(&ds, spec.test_fraction, spec.seed)? };
        write_embeddings(in_dir(&dir, "condition.emb")?, ds.audio())?;
        write_embeddings(dir.join("target.emb"), ds.video())?;
        ds.manifest().write(dir.join("pairs.json"))?;
        write_resolved(&spec, dir.join("config.json"))?;
        println!("{} prior pairs -> {}", ds.len(), dir.display());
    } else {
        let mut named = named;
        named.push(("noise_sigma", opt(&a.noise_sigma)));
        let spec: SyntheticSpec = resolve_config(&SyntheticSpec::default(), file, &flag_layer(&a.common, named)?)?;
        let ds = generate(&spec)?;
        write_embeddings(in_dir(&dir, "audio.emb")?, ds.audio())?;
        write_embeddings(dir.join("video.emb"), ds.video())?;
        ds.manifest().write(dir.join("pairs.json"))?;
        write_resolved(&spec, dir.join("config.json"))?;
        println!("{} pairs -> {}", ds.len(), dir.display());
    }
    Ok(())
}

fn load_pairs(pairs: &Path, audio: &Path, video: &Path, a_mod: Modality, v_mod: Modality) -> Result<PairedDataset> {
    let manifest = PairManifest::read(pairs)?;
    PairedDataset::new(load_matrix(audio, a_mod)?, load_matrix(video, v_mod)?, manifest)
}

fn train_clip_cmd(a: &TrainClipArgs) -> Result<()> {
    let base = match a.preset {
        Preset::Full => TrainConfig::default(),
        Preset::Desk => TrainConfig::desk(),
    };
    let flags = flag_layer(
        &a.common,
        vec![
            ("lr", opt(&a.lr)),
            ("epochs", opt(&a.epochs)),
            ("batch_size", opt(&a.batch_size)),
        ],
    )?;
    let cfg: TrainConfig = resolve_config(&base, a.common.config.as_deref(), &flags)?;
    cfg.validate()?;
    let ds = load_pairs(&a.pairs, &a.audio, &a.video, Modality::Audio, Modality::Video)?;
    ds.check_dims(&policy(&a.dims))?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| default_out_root().join("train-clip").join("clip.ckpt"));
    ensure_parent(&out)?;
    write_resolved(&cfg, sibling(&out, "config.json"))?;
    let (model, history) = train_clip(&ds, &cfg)?;
    model.to_checkpoint(history.steps() as u64)?.write(&out)?;
    write_text(&sibling(&out, "loss.csv"), &history.to_csv())?;
    if let Some(last) = history.epoch_means().last() {
        println!("trained {} steps, final epoch loss {last:.5} -> {}", history.steps(), out.display());
    }
    Ok(())
}

fn read_clip(path: &Path) -> Result<ClipAlignModel<f32>> {
    ClipAlignModel::from_checkpoint(&Checkpoint::read(path)?)
}

fn read_prior(path: &Path) -> Result<CvaePrior<f32>> {
    CvaePrior::from_checkpoint(&Checkpoint::read(path)?)
}

/// Condition/target pairs of one split; conditions are projected through
/// `clip` when given.
fn prior_pairs(ds: &PairedDataset, split: Option<Split>, clip: Option<&ClipAlignModel<f32>>) -> Result<PriorTrainPairs> {
    let ds = match split {
        Some(s) => ds.subset(s),
        None => ds.aligned(),
    };
    let cond = match clip {
        Some(c) => c.embed_audio(ds.audio())?,
        None => ds.audio().clone(),
    };
    PriorTrainPairs::new(cond, ds.video().clone().with_modality(Modality::Goal))
}

fn train_prior_cmd(a: &TrainPriorArgs) -> Result<()> {
    let flags = flag_layer(
        &a.common,
        vec![
            ("lr", opt(&a.lr)),
            ("epochs", opt(&a.epochs)),
            ("batch_size", opt(&a.batch_size)),
            ("kl_beta", opt(&a.kl_beta)),
            ("latent_dim", opt(&a.latent_dim)),
        ],
    )?;
    let cfg: PriorConfig = resolve_config(&PriorConfig::default(), a.common.config.as_deref(), &flags)?;
    cfg.validate()?;
    let clip = a.clip.as_deref().map(read_clip).transpose()?;
    let cond_mod = if clip.is_some() { Modality::Audio } else { Modality::Shared };
    let ds = load_pairs(&a.pairs, &a.cond, &a.target, cond_mod, Modality::Goal)?;
    // with an alignment model, inputs must match its two encoders
    let dims = match &clip {
        Some(c) => DimPolicy {
            audio: Some(c.audio_net.input_dim()),
            goal: Some(c.video_net.input_dim()),
            ..DimPolicy::default()
        },
        None => DimPolicy::default(),
    };
    ds.check_dims(&dims)?;
    let pairs = prior_pairs(&ds, Some(Split::Train), clip.as_ref())?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| default_out_root().join("train-prior").join("prior.ckpt"));
    ensure_parent(&out)?;
    write_resolved(&cfg, sibling(&out, "config.json"))?;
    let (prior, history) = train_prior(&pairs, &cfg)?;
    prior.to_checkpoint(history.steps() as u64)?.write(&out)?;
    write_text(&sibling(&out, "loss.csv"), &history.to_csv())?;
    println!("trained prior for {} steps -> {}", history.steps(), out.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapConfig {
    pub seed: u64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig { seed: 0 }
    }
}

fn map_cmd(a: &MapArgs) -> Result<()> {
    let cfg: MapConfig = resolve_config(&MapConfig::default(), a.common.config.as_deref(), &flag_layer(&a.common, vec![])?)?;
    let clip = read_clip(&a.clip)?;
    let prior = read_prior(&a.prior)?;
    let input = load_matrix(&a.input, Modality::Audio)?;
    let goals = map_audio_to_goal(&clip, &prior, input.matrix(), cfg.seed)?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| default_out_root().join("map").join("goals.emb"));
    ensure_parent(&out)?;
    write_embeddings(&out, &goals)?;
    write_resolved(&cfg, sibling(&out, "config.json"))?;
    println!("{} goal embeddings -> {}", goals.rows(), out.display());
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub ks: Vec<usize>,
    pub split: SplitChoice,
    pub direction: Direction,
    /// Prior sampling seed.
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            ks: DEFAULT_KS.to_vec(),
            split: SplitChoice::Test,
            direction: Direction::AudioToVideo,
            seed: 0,
        }
    }
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let cfg: EvalConfig = resolve_config(
        &EvalConfig::default(),
        a.common.config.as_deref(),
        &flag_layer(&a.common, vec![("ks", opt(&a.ks))])?,
    )?;
    let split = match cfg.split {
        SplitChoice::Train => Some(Split::Train),
        SplitChoice::Test => Some(Split::Test),
        SplitChoice::All => None,
    };
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| default_out_root().join("eval").join("report.json"));
    ensure_parent(&out)?;
    let clip = a.clip.as_deref().map(read_clip).transpose()?;
    if let Some(prior_path) = &a.prior {
        let prior = read_prior(prior_path)?;
        let cond_mod = if clip.is_some() { Modality::Audio } else { Modality::Shared };
        let ds = load_pairs(&a.pairs, &a.audio, &a.video, cond_mod, Modality::Goal)?;
        let pairs = prior_pairs(&ds, split, clip.as_ref())?;
        let report = prior_fidelity(&prior, &pairs, cfg.seed)?;
        emit_report(&report, &out)?;
        println!("mean cosine {:.4} over {} pairs -> {}", report.mean_cosine, report.n, out.display());
    } else {
        let clip = clip.ok_or_else(|| Error::Config("eval needs --clip or --prior".into()))?;
        let ds = load_pairs(&a.pairs, &a.audio, &a.video, Modality::Audio, Modality::Video)?;
        let ds = match split {
            Some(s) => ds.subset(s),
            None => ds.aligned(),
        };
        let (report, ranks) = retrieval_metrics(&clip, &ds, &cfg.ks, cfg.direction)?;
        emit_report(&report, &out)?;
        write_text(&sibling(&out, "ranks.csv"), &ranks_csv(&ranks))?;
        if let Some((k, r)) = report.recall_at.iter().next() {
            println!("recall@{k} {r:.4}, median rank {} -> {}", report.median_rank, out.display());
        }
    }
    write_resolved(&cfg, sibling(&out, "config.json"))?;
    Ok(())
}
