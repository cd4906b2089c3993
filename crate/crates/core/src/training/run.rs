//! Run directories: `<root>/<timestamp>-<regime>/` holding `manifest.json`,
//! `log.csv`, `ckpt-NNNN.bin` (NNNN = epochs completed) and `reports/`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::TrainingConfig;
use crate::adapters::Regime;
use crate::error::{Error, Result};

pub const RUN_MANIFEST_FORMAT: &str = "landmark-adapt/run";
pub const LOG_HEADER: &str = "step,loss,pixel,perceptual,lr";

/// Everything needed to repeat a run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub regime: Regime,
    pub config_hash: String,
    pub config: TrainingConfig,
    pub data: PathBuf,
    pub core: Option<PathBuf>,
    pub code_version: String,
    pub created: String,
    pub device: String,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &TrainingConfig,
        data: &Path,
        core: Option<&Path>,
        device: tch::Device,
    ) -> Self {
        Self {
            format: RUN_MANIFEST_FORMAT.into(),
            version: 1,
            command: command.into(),
            regime: config.regime,
            config_hash: config.hash(),
            config: config.clone(),
            data: data.to_path_buf(),
            core: core.map(Path::to_path_buf),
            code_version: env!("LANDMARK_ADAPT_GIT_DESCRIBE").into(),
            created: chrono::Local::now().to_rfc3339(),
            device: format!("{device:?}"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunDir {
    path: PathBuf,
}

impl RunDir {
    /// Creates a fresh `<root>/<timestamp>-<regime>` directory (suffixed when
    /// the name is taken).
    pub fn create(root: &Path, regime: Regime) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
        let stamp = chrono::Local::now().format("%Y%m%d-%H%M%S");
        let base = format!("{stamp}-{regime}");
        let mut path = root.join(&base);
        let mut n = 2;
        while path.exists() {
            path = root.join(format!("{base}.{n}"));
            n += 1;
        }
        fs::create_dir_all(path.join("reports")).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path })
    }

    pub fn open(path: &Path) -> Result<Self> {
        if !path.join("manifest.json").is_file() {
            return Err(Error::Config(format!("{} is not a run directory", path.display())));
        }
        Ok(Self {
            path: path.to_path_buf(),
        })
    }

    /// The most recently created run directory for `regime` under `root`.
    pub fn latest(root: &Path, regime: Regime) -> Result<Option<Self>> {
        if !root.is_dir() {
            return Ok(None);
        }
        let suffix = format!("-{regime}");
        let mut runs: Vec<PathBuf> = fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
                let stem = name.split('.').next().unwrap_or("");
                stem.ends_with(&suffix) && p.join("manifest.json").is_file()
            })
            .collect();
        runs.sort_by_key(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            let (stem, n) = match name.split_once('.') {
                Some((s, n)) => (s.to_string(), n.parse::<u32>().unwrap_or(0)),
                None => (name.clone(), 1),
            };
            (stem, n)
        });
        Ok(runs.pop().map(|path| Self { path }))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn reports(&self) -> PathBuf {
        self.path.join("reports")
    }

    pub fn log_path(&self) -> PathBuf {
        self.path.join("log.csv")
    }

    pub fn checkpoint(&self, epoch: u64) -> PathBuf {
        self.path.join(format!("ckpt-{epoch:04}.bin"))
    }

    /// `(epochs completed, path)` of the newest checkpoint.
    pub fn latest_checkpoint(&self) -> Result<Option<(u64, PathBuf)>> {
        let mut best = None;
        for entry in fs::read_dir(&self.path).map_err(|e| Error::io(&self.path, e))? {
            let path = entry.map_err(|e| Error::io(&self.path, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            let epoch = name
                .strip_prefix("ckpt-")
                .and_then(|r| r.strip_suffix(".bin"))
                .and_then(|n| n.parse::<u64>().ok());
            if let Some(e) = epoch {
                if best.as_ref().is_none_or(|(b, _)| e > *b) {
                    best = Some((e, path));
                }
            }
        }
        Ok(best)
    }

    pub fn write_manifest(&self, manifest: &RunManifest) -> Result<()> {
        let path = self.path.join("manifest.json");
        let json = serde_json::to_string_pretty(manifest).expect("manifest serialises");
        fs::write(&path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read_manifest(&self) -> Result<RunManifest> {
        let path = self.path.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// One row of `log.csv`. Supervised steps leave `pixel` and `perceptual` empty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub pixel: Option<f64>,
    pub perceptual: Option<f64>,
    pub lr: f64,
}

impl LogRow {
    pub fn to_line(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
        format!(
            "{},{:.9e},{},{},{:.6e}",
            self.step,
            self.loss,
            opt(self.pixel),
            opt(self.perceptual),
            self.lr
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let bad = || Error::Data(format!("malformed log row `{line}`"));
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
        Ok(Self {
            step: f[0].parse().map_err(|_| bad())?,
            loss: num(f[1])?,
            pixel: opt(f[2])?,
            perceptual: opt(f[3])?,
            lr: num(f[4])?,
        })
    }
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines().skip(1).filter(|l| !l.is_empty()).map(LogRow::parse).collect()
}

/// Appends rows to `log.csv`.
pub struct LogWriter {
    file: fs::File,
    path: PathBuf,
}

impl LogWriter {
    /// Starts a new log, or on resume keeps only the rows up to `keep_through`.
    pub fn open(path: &Path, keep_through: Option<u64>) -> Result<Self> {
        let mut text = format!("{LOG_HEADER}\n");
        if let Some(last) = keep_through {
            if path.is_file() {
                for row in read_log(path)?.into_iter().filter(|r| r.step <= last) {
                    text.push_str(&row.to_line());
                    text.push('\n');
                }
            }
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
        let file = fs::OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            file,
            path: path.to_path_buf(),
        })
    }

    pub fn append(&mut self, row: &LogRow) -> Result<()> {
        writeln!(self.file, "{}", row.to_line()).map_err(|e| Error::io(&self.path, e))
    }
}
