use std::path::Path;

use serde::{Deserialize, Serialize};

use super::regression::ErrorMetric;
use crate::adapters::Regime;
use crate::error::{Error, Result};

pub const REPORT_FORMAT: &str = "landmark-adapt/eval-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Protocol {
    Forward,
    Backward,
    Consistency,
}

impl Protocol {
    pub const ALL: [Protocol; 3] = [Protocol::Forward, Protocol::Backward, Protocol::Consistency];

    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Forward => "forward",
            Protocol::Backward => "backward",
            Protocol::Consistency => "consistency",
        }
    }
}

impl std::fmt::Display for Protocol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown protocol `{s}`")))
    }
}

/// One measured value: an `n_im` row of a regression table or a landmark of
/// the consistency table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub n_im: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub point: Option<usize>,
    pub value: f64,
    /// The regressor fell back to ridge regression.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ridge: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportCounts {
    pub train_samples: usize,
    pub test_samples: usize,
    /// Test samples (regression) or point observations (consistency) left out.
    pub excluded: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub trials: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub format: String,
    pub version: u32,
    pub protocol: Protocol,
    pub regime: Option<Regime>,
    pub dataset: String,
    pub seed: u64,
    pub config_hash: String,
    /// What the values are relative to.
    pub normalization: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub metric: Option<ErrorMetric>,
    /// Regression: ascending `n_im`. Consistency: landmarks ascending by error.
    pub rows: Vec<ReportRow>,
    /// Consistency: mean over landmarks.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub mean: Option<f64>,
    pub counts: ReportCounts,
}

impl EvalReport {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("report serialises");
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: Self =
            serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        if r.format != REPORT_FORMAT || r.version != REPORT_VERSION {
            return Err(Error::Data(format!(
                "{}: not a version {REPORT_VERSION} evaluation report",
                path.display()
            )));
        }
        Ok(r)
    }

    /// Conventional file name, e.g. `forward-proposed.json`.
    pub fn file_name(&self) -> String {
        let who = self.regime.map(Regime::as_str).unwrap_or("custom");
        format!("{}-{who}.json", self.protocol)
    }
}

/// Collates regression reports of several regimes into one CSV table: a
/// forward block above a backward block, one row per `n_im`, one column per
/// regime.
pub fn collate(reports: &[EvalReport]) -> Result<String> {
    let mut regimes: Vec<Regime> = Regime::ALL
        .into_iter()
        .filter(|r| reports.iter().any(|x| x.regime == Some(*r)))
        .collect();
    regimes.dedup();
    if regimes.is_empty() {
        return Err(Error::Data("no regime-tagged reports to collate".into()));
    }
    let mut out = String::from("protocol,n_im");
    for r in &regimes {
        out.push(',');
        out.push_str(r.as_str());
    }
    out.push('\n');
    for protocol in [Protocol::Forward, Protocol::Backward] {
        let block: Vec<&EvalReport> = reports.iter().filter(|r| r.protocol == protocol).collect();
        let mut n_ims: Vec<usize> = block
            .iter()
            .flat_map(|r| r.rows.iter().filter_map(|row| row.n_im))
            .collect();
        n_ims.sort_unstable();
        n_ims.dedup();
        for n in n_ims {
            out.push_str(&format!("{protocol},{n}"));
            for regime in &regimes {
                let v = block
                    .iter()
                    .filter(|r| r.regime == Some(*regime))
                    .flat_map(|r| r.rows.iter())
                    .find(|row| row.n_im == Some(n))
                    .map(|row| format!("{:.4}", row.value))
                    .unwrap_or_default();
                out.push(',');
                out.push_str(&v);
            }
            out.push('\n');
        }
    }
    Ok(out)
}
