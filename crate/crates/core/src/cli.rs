//! Command-line front end.
//!
//! Configuration precedence, lowest first: the preset (`desk` unless the file
//! says `preset = "paper"`), the `--config` file, `--set key=value`
//! assignments in order, then dedicated flags such as `--seed`. The device
//! comes from `LANDMARK_ADAPT_DEVICE` when set.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use rand::Rng;

use crate::adapters::{load_checkpoint, read_checkpoint_meta, Regime};
use crate::config::{parse_assignment, ConfigBuilder, RunConfig, DEFAULT_LANDMARKS};
use crate::data::{
    load_clips, load_dataset, toy_clip, toy_corpus, write_dataset, DatasetManifest, Family,
    LoadedDataset, PairMode, Split,
};
use crate::error::{Error, Result};
use crate::eval::{collate, evaluate, plot_reports, EvalData, EvalReport, NetworkSource, Protocol, Provenance};
use crate::netcore::DetectMode;
use crate::seed::{stream_rng, tags};
use crate::training::{adapt, pretrain_core, Model, PairPool, RunDir, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "landmark-adapt", version = env!("LANDMARK_ADAPT_GIT_DESCRIBE"), about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic annotated corpus.
    Toydata(ToyArgs),
    /// Train the supervised core detector.
    Pretrain(TrainArgs),
    /// Learn landmarks on unlabelled images (scratch, finetune or proposed).
    Adapt(TrainArgs),
    /// Score a checkpoint with one evaluation protocol.
    Eval(EvalArgs),
    /// Draw figures and a CSV table from evaluation reports.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
pub struct ToyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Training images.
    #[arg(long)]
    pub n: usize,
    /// Held-out test images.
    #[arg(long, default_value_t = 0)]
    pub test: usize,
    #[arg(long)]
    pub family: Family,
    /// Unannotated clips for temporal pairs.
    #[arg(long, default_value_t = 0)]
    pub clips: usize,
    #[arg(long, default_value_t = 50)]
    pub frames: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub force: bool,
}

/// Flags shared by every command that reads a run configuration.
#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value`, value parsed as TOML. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub regime: Option<Regime>,
    /// Pretrained core checkpoint (finetune and proposed).
    #[arg(long)]
    pub core: Option<PathBuf>,
    /// Root under which run directories are created.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub deterministic: bool,
    /// Continue the newest run of this regime under `--out`.
    #[arg(long)]
    pub resume: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: ConfigArgs,
    #[arg(long)]
    pub protocol: Protocol,
    /// Checkpoint to score. Defaults to the newest checkpoint of `--regime`
    /// under the configured run root.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub regime: Option<Regime>,
    /// Comma-separated regression sizes.
    #[arg(long, value_delimiter = ',')]
    pub n_im: Option<Vec<usize>>,
    /// Report directory. Defaults to the checkpoint's `reports/`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Report files, or directories searched for `<protocol>-*.json`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    #[arg(long, default_value = "plots")]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| match e.kind() {
        clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
            print!("{e}");
            std::process::exit(0)
        }
        _ => Error::Argument(first_line(&e.to_string())),
    })?;
    match cli.command {
        Command::Toydata(a) => cmd_toydata(&a).map(|_| ()),
        Command::Pretrain(a) => cmd_pretrain(&a),
        Command::Adapt(a) => cmd_adapt(&a),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::Plot(a) => cmd_plot(&a).map(|_| ()),
    }
}

fn first_line(s: &str) -> String {
    s.lines()
        .find(|l| !l.trim().is_empty())
        .unwrap_or(s)
        .trim_start_matches("error: ")
        .to_string()
}

fn command_line() -> String {
    std::env::args().collect::<Vec<_>>().join(" ")
}

/// Writes a toy corpus; returns its manifest.
pub fn cmd_toydata(a: &ToyArgs) -> Result<DatasetManifest> {
    let mut samples = toy_corpus(a.seed, a.n, a.family, Split::Train)?;
    if a.test > 0 {
        samples.extend(toy_corpus(a.seed, a.test, a.family, Split::Test)?);
    }
    let clips = (0..a.clips)
        .map(|j| {
            let clip_seed: u64 = stream_rng(a.seed, &[tags::CLIP, j as u64]).random();
            let (frames, _) = toy_clip(clip_seed, a.frames, a.family)?;
            Ok((format!("clip-{j:03}"), frames))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut manifest = DatasetManifest::new(
        a.family.point_count(),
        a.family.anchor_indices(),
        format!("toy family {} seed {}", a.family.as_str(), a.seed),
    );
    manifest.family = Some(a.family.as_str().into());
    let m = write_dataset(&a.out, &manifest, &samples, &clips, a.force)?;
    info!("wrote {} train / {} test images to {}", m.train, m.test, a.out.display());
    Ok(m)
}

fn builder(common: &ConfigArgs) -> Result<ConfigBuilder> {
    let mut b = ConfigBuilder::new();
    if let Some(path) = &common.config {
        b = b.file(path)?;
    }
    for s in &common.set {
        let (k, v) = parse_assignment(s)?;
        b = b.set(&k, v)?;
    }
    b = b.set_opt("data", common.data.as_ref().map(|p| p.display().to_string()))?;
    if let Some(seed) = common.seed {
        b = b.set("train.seed", seed as i64)?.set("eval.seed", seed as i64)?;
    }
    Ok(b)
}

fn train_config(a: &TrainArgs, default_regime: Option<Regime>) -> Result<RunConfig> {
    train_config_builder(a)?.build(default_regime, DEFAULT_LANDMARKS)
}

fn train_config_builder(a: &TrainArgs) -> Result<ConfigBuilder> {
    let mut b = builder(&a.common)?
        .set_opt("regime", a.regime.map(|r| r.as_str()))?
        .set_opt("core", a.core.as_ref().map(|p| p.display().to_string()))?
        .set_opt("out", a.out.as_ref().map(|p| p.display().to_string()))?;
    if a.deterministic {
        b = b.set("train.deterministic", true)?;
    }
    Ok(b)
}

fn require_data(cfg: &RunConfig) -> Result<&Path> {
    cfg.data
        .as_deref()
        .ok_or_else(|| Error::Config("no dataset given (--data)".into()))
}

fn load(cfg: &RunConfig) -> Result<(PathBuf, LoadedDataset)> {
    let root = require_data(cfg)?.to_path_buf();
    let ds = load_dataset(&root)?;
    Ok((root, ds))
}

pub fn cmd_pretrain(a: &TrainArgs) -> Result<()> {
    if a.resume {
        return Err(Error::Argument("--resume applies to adapt only".into()));
    }
    // Without an explicit count the core predicts every annotated point.
    let b = train_config_builder(a)?;
    let points = match b.peek("data").and_then(|v| v.as_str()) {
        Some(d) => load_dataset(Path::new(d))?.manifest.points,
        None => return Err(Error::Config("no dataset given (--data)".into())),
    };
    let cfg = b.build(Some(Regime::Pretrain), points)?;
    if cfg.train.regime != Regime::Pretrain {
        return Err(Error::Config(format!("pretrain cannot run the {} regime", cfg.train.regime)));
    }
    let device = cfg.device()?;
    let (root, ds) = load(&cfg)?;
    let run = RunDir::create(&cfg.out, Regime::Pretrain)?;
    run.write_manifest(&RunManifest::new(&command_line(), &cfg.train, &root, None, device))?;
    info!("pretraining into {}", run.path().display());
    let (outcome, report) = pretrain_core(&cfg.train, ds.train, &ds.test, &run, device)?;
    if let Some(r) = report {
        info!(
            "held-out error on {} images: {:.3} px (argmax), {:.3} px (softargmax)",
            r.images, r.argmax_px, r.softargmax_px
        );
    }
    println!("{}", outcome.checkpoint.display());
    Ok(())
}

fn pair_pool(cfg: &RunConfig, root: &Path, ds: LoadedDataset) -> Result<PairPool> {
    match cfg.train.pairs.mode {
        PairMode::Warp => {
            let mut images: Vec<_> = ds.train.into_iter().map(|s| s.image).collect();
            // Clip frames are unlabelled images too.
            for (_, frames) in load_clips(root)? {
                images.extend(frames);
            }
            Ok(PairPool::Images(Arc::new(images)))
        }
        PairMode::Temporal => {
            let clips: Vec<_> = load_clips(root)?.into_iter().map(|(_, f)| f).collect();
            if clips.is_empty() {
                return Err(Error::Data(format!("temporal pairs need clips; {} has none", root.display())));
            }
            Ok(PairPool::Clips(Arc::new(clips)))
        }
    }
}

pub fn cmd_adapt(a: &TrainArgs) -> Result<()> {
    let (cfg, run, data, core) = if a.resume {
        let probe = train_config(a, None)?;
        let run = RunDir::latest(&probe.out, probe.train.regime)?.ok_or_else(|| {
            Error::Argument(format!(
                "no {} run under {} to resume",
                probe.train.regime,
                probe.out.display()
            ))
        })?;
        let m = run.read_manifest()?;
        if a.common.config.is_some() || !a.common.set.is_empty() {
            warn!("--resume reuses the configuration recorded in {}", run.path().display());
        }
        let cfg = RunConfig { train: m.config, ..probe };
        (cfg, run, m.data, m.core)
    } else {
        let cfg = train_config(a, None)?;
        if cfg.train.regime == Regime::Pretrain {
            return Err(Error::Config("use the pretrain command for the pretrain regime".into()));
        }
        if cfg.train.regime.needs_core() && cfg.core.is_none() {
            return Err(Error::Config(format!(
                "core checkpoint required for the {} regime (--core)",
                cfg.train.regime
            )));
        }
        let data = require_data(&cfg)?.to_path_buf();
        let core = cfg.core.clone();
        let run = RunDir::create(&cfg.out, cfg.train.regime)?;
        (cfg, run, data, core)
    };
    let device = cfg.device()?;
    let core_ckpt = core.as_deref().map(load_checkpoint).transpose()?;
    let ds = load_dataset(&data)?;
    let pool = pair_pool(&cfg, &data, ds)?;
    if !a.resume {
        run.write_manifest(&RunManifest::new(&command_line(), &cfg.train, &data, core.as_deref(), device))?;
    }
    info!("{} training into {}", cfg.train.regime, run.path().display());
    let outcome = adapt(&cfg.train, pool, core_ckpt.as_ref(), &run, a.resume, device)?;
    println!("{}", outcome.checkpoint.display());
    Ok(())
}

/// Scores one checkpoint; returns the report path.
pub fn cmd_eval(a: &EvalArgs) -> Result<PathBuf> {
    let mut b = builder(&a.common)?;
    if let Some(n) = &a.n_im {
        b = b.set("eval.n_im", n.iter().map(|&v| v as i64).collect::<Vec<_>>())?;
    }
    let ckpt_path = match (&a.checkpoint, a.regime) {
        (Some(p), _) => p.clone(),
        (None, regime) => {
            let probe = builder(&a.common)?.build(regime, DEFAULT_LANDMARKS)?;
            let regime = probe.train.regime;
            let run = RunDir::latest(&probe.out, regime)?.ok_or_else(|| {
                Error::Argument(format!("no {regime} run under {}", probe.out.display()))
            })?;
            run.latest_checkpoint()?
                .map(|(_, p)| p)
                .ok_or_else(|| Error::Argument(format!("{} has no checkpoint", run.path().display())))?
        }
    };
    let meta = read_checkpoint_meta(&ckpt_path)?;
    let cfg = b.set("regime", meta.regime.as_str())?.build(None, meta.landmarks)?;
    let device = cfg.device()?;
    let (root, ds) = load(&cfg)?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    let model = Model::from_checkpoint(&ckpt, device)?;
    let source = NetworkSource {
        detector: &model.detector,
        mode: DetectMode::Softargmax,
        device,
    };
    let data = EvalData {
        dataset: ds.manifest.family.clone().unwrap_or_else(|| root.display().to_string()),
        train: ds.train,
        test: ds.test,
        anchors: ds.manifest.anchors,
    };
    let provenance = Provenance {
        regime: Some(meta.regime),
        config_hash: meta.config_hash.clone(),
    };
    let report = evaluate(&source, a.protocol, &data, &cfg.eval, &provenance)?;
    let dir = match &a.out {
        Some(d) => d.clone(),
        None => ckpt_path
            .parent()
            .map(|p| p.join("reports"))
            .unwrap_or_else(|| PathBuf::from("reports")),
    };
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join(report.file_name());
    report.write(&path)?;
    if let Some(m) = report.mean {
        info!("mean {}: {m:.4}", report.normalization);
    }
    println!("{}", path.display());
    Ok(path)
}

fn is_report_name(p: &Path) -> bool {
    let name = p.file_name().and_then(|s| s.to_str()).unwrap_or("");
    name.ends_with(".json") && Protocol::ALL.iter().any(|pr| name.starts_with(&format!("{pr}-")))
}

/// Writes one SVG per protocol and, when regression reports are present,
/// `table.csv`. Returns the written files.
pub fn cmd_plot(a: &PlotArgs) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in &a.reports {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| is_report_name(f))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    let reports = files.iter().map(|f| EvalReport::read(f)).collect::<Result<Vec<_>>>()?;
    if reports.is_empty() {
        return Err(Error::Argument("no evaluation reports found".into()));
    }
    let mut written = plot_reports(&reports, &a.out)?;
    let regression: Vec<EvalReport> = reports
        .into_iter()
        .filter(|r| r.protocol != Protocol::Consistency && r.regime.is_some())
        .collect();
    if !regression.is_empty() {
        let path = a.out.join("table.csv");
        std::fs::write(&path, collate(&regression)?).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    for w in &written {
        println!("{}", w.display());
    }
    Ok(written)
}
