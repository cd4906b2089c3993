//! Run configuration: a TOML file with dotted keys, overridden by `--set`
//! assignments and then by dedicated command-line flags.
//!
//! ```toml
//! preset = "desk"          # or "paper"
//! regime = "proposed"
//! data = "data/toy-B"
//! core = "runs/20260101-120000-pretrain/ckpt-0010.bin"
//! out = "runs"
//! device = "cpu"           # LANDMARK_ADAPT_DEVICE overrides this
//! train.epochs = 20
//! train.learning_rate = 1e-3
//! train.arch.generator_width = 16
//! eval.n_im = [1, 10, 100]
//! ```
//!
//! `train.*` keys overlay the preset's [`TrainingConfig`] for the chosen
//! regime; `eval.*` keys fill [`EvalOptions`]. Unknown keys anywhere are errors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tch::Device;

use crate::adapters::Regime;
use crate::error::{Error, Result};
use crate::eval::EvalOptions;
use crate::training::TrainingConfig;

/// Environment variable that overrides the configured device.
pub const DEVICE_ENV: &str = "LANDMARK_ADAPT_DEVICE";

/// Landmarks discovered by the adaptation regimes unless configured otherwise.
pub const DEFAULT_LANDMARKS: usize = 10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Desk,
    Paper,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRunConfig {
    #[serde(default)]
    preset: Preset,
    regime: Option<Regime>,
    landmarks: Option<usize>,
    data: Option<PathBuf>,
    core: Option<PathBuf>,
    checkpoint: Option<PathBuf>,
    out: Option<PathBuf>,
    device: Option<String>,
    #[serde(default)]
    train: toml::Table,
    #[serde(default)]
    eval: EvalOptions,
}

/// A validated run configuration.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub preset: Preset,
    pub data: Option<PathBuf>,
    pub core: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out: PathBuf,
    pub device: String,
    pub train: TrainingConfig,
    pub eval: EvalOptions,
}

/// Parses `key=value`, reading the value as TOML (bare words become strings).
pub fn parse_assignment(text: &str) -> Result<(String, toml::Value)> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("`{text}` is not a key=value assignment")))?;
    let key = key.trim().to_string();
    let value = value.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {value}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(value.to_string()));
    Ok((key, parsed))
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| Error::Config(format!("empty key `{key}`")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{p}` in `{key}` is not a table")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn merge_json(base: &mut serde_json::Value, overlay: serde_json::Value) {
    match (base, overlay) {
        (serde_json::Value::Object(b), serde_json::Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge_json(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// Layers configuration sources, lowest precedence first.
#[derive(Debug, Default)]
pub struct ConfigBuilder {
    table: toml::Table,
}

impl ConfigBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn file(mut self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed: toml::Table = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        for (k, v) in parsed {
            self.table.insert(k, v);
        }
        Ok(self)
    }

    pub fn set(mut self, key: &str, value: impl Into<toml::Value>) -> Result<Self> {
        set_dotted(&mut self.table, key, value.into())?;
        Ok(self)
    }

    /// The value currently held at a dotted key.
    pub fn peek(&self, key: &str) -> Option<&toml::Value> {
        let mut parts = key.split('.');
        let mut cur = self.table.get(parts.next()?)?;
        for p in parts {
            cur = cur.as_table()?.get(p)?;
        }
        Some(cur)
    }

    pub fn set_opt(self, key: &str, value: Option<impl Into<toml::Value>>) -> Result<Self> {
        match value {
            Some(v) => self.set(key, v),
            None => Ok(self),
        }
    }

    /// Resolves against the preset for `regime` (or the configured regime).
    /// `landmarks` is the fallback landmark count.
    pub fn build(self, default_regime: Option<Regime>, landmarks: usize) -> Result<RunConfig> {
        let raw: RawRunConfig = toml::Value::Table(self.table)
            .try_into()
            .map_err(|e| Error::Config(e.to_string()))?;
        let regime = raw
            .regime
            .or(default_regime)
            .ok_or_else(|| Error::Config("no regime given".into()))?;
        let k = raw.landmarks.unwrap_or(landmarks);
        let base = match raw.preset {
            Preset::Desk => TrainingConfig::desk(regime, k),
            Preset::Paper => TrainingConfig::paper(regime, k),
        };
        let mut json = serde_json::to_value(&base).expect("config serialises");
        let overlay = serde_json::to_value(&raw.train).map_err(|e| Error::Config(e.to_string()))?;
        merge_json(&mut json, overlay);
        let train: TrainingConfig =
            serde_json::from_value(json).map_err(|e| Error::Config(format!("train: {e}")))?;
        if train.regime != regime || train.landmarks != k {
            return Err(Error::Config(
                "set the regime and landmark count with the top-level `regime` and `landmarks` keys".into(),
            ));
        }
        train.validate()?;
        if raw.eval.trials == 0 {
            return Err(Error::Config("eval.trials must be positive".into()));
        }
        raw.eval.ranges.validate()?;
        let device = std::env::var(DEVICE_ENV)
            .ok()
            .filter(|s| !s.is_empty())
            .or(raw.device)
            .unwrap_or_else(|| "cpu".into());
        parse_device(&device)?;
        Ok(RunConfig {
            preset: raw.preset,
            data: raw.data,
            core: raw.core,
            checkpoint: raw.checkpoint,
            out: raw.out.unwrap_or_else(|| PathBuf::from("runs")),
            device,
            train,
            eval: raw.eval,
        })
    }
}

impl RunConfig {
    pub fn device(&self) -> Result<Device> {
        parse_device(&self.device)
    }
}

/// `cpu`, `cuda`, `cuda:N` or `mps`.
pub fn parse_device(s: &str) -> Result<Device> {
    match s {
        "cpu" => Ok(Device::Cpu),
        "cuda" => Ok(Device::Cuda(0)),
        "mps" => Ok(Device::Mps),
        other => other
            .strip_prefix("cuda:")
            .and_then(|n| n.parse().ok())
            .map(Device::Cuda)
            .ok_or_else(|| Error::Config(format!("unknown device `{other}`"))),
    }
}
