//! Evaluation reports: CSV rows per action, template and method, plus a
//! plain-text summary.

use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use uvcloth_core::dataset::Split;
use uvcloth_core::garment::Template;

use crate::error::{EvalError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Offsets predicted by the network, reconstructed through the binding.
    Network,
    Lbs,
    /// True offsets reconstructed through the binding: the round-trip floor.
    GroundTruth,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Network, Method::Lbs, Method::GroundTruth];

    pub fn tag(self) -> &'static str {
        match self {
            Method::Network => "network",
            Method::Lbs => "lbs",
            Method::GroundTruth => "ground_truth",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub action: String,
    pub template: String,
    pub method: Method,
    pub mse_uv_mm2: f64,
    pub mse_vert_mm2: f64,
    pub frames: usize,
}

/// Hem motion relative to the torso for one source of garment frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HemRow {
    pub action: String,
    pub template: String,
    /// A method tag or `simulation`.
    pub source: String,
    pub variance_mm2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub split: Split,
    pub rows: Vec<EvalRow>,
    pub hem: Vec<HemRow>,
    /// Mean wall time per frame for all three templates, informational.
    pub network_ms: f64,
    pub lbs_ms: f64,
}

impl Default for EvalReport {
    fn default() -> Self {
        EvalReport {
            split: Split::Test,
            rows: Vec::new(),
            hem: Vec::new(),
            network_ms: 0.0,
            lbs_ms: 0.0,
        }
    }
}

/// Frame-weighted mean of `field` over rows matching the filters.
pub fn weighted_mean(rows: &[EvalRow], template: Option<&str>, method: Method, field: impl Fn(&EvalRow) -> f64) -> Option<f64> {
    let picked: Vec<&EvalRow> = rows
        .iter()
        .filter(|r| r.method == method && template.is_none_or(|t| r.template == t))
        .collect();
    let frames: usize = picked.iter().map(|r| r.frames).sum();
    (frames > 0).then(|| picked.iter().map(|r| field(r) * r.frames as f64).sum::<f64>() / frames as f64)
}

/// Mean hem variance over actions for `template` and `source`.
pub fn mean_hem_variance(hem: &[HemRow], template: &str, source: &str) -> Option<f64> {
    let v: Vec<f64> = hem
        .iter()
        .filter(|h| h.template == template && h.source == source)
        .map(|h| h.variance_mm2)
        .collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn write_rows<T: Serialize>(rows: &[T], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| EvalError::Invalid(format!("writing CSV: {e}")))?;
    Ok(())
}

pub fn read_rows<T: for<'de> Deserialize<'de>>(r: impl Read) -> Result<Vec<T>> {
    csv::Reader::from_reader(r)
        .deserialize()
        .map(|row| row.map_err(EvalError::from))
        .collect()
}

fn create(path: &Path) -> Result<std::fs::File> {
    std::fs::File::create(path).map_err(|e| EvalError::io(path, e))
}

fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| EvalError::io(path, e))
}

/// Path of the hem table written next to a report.
pub fn hem_path(report: &Path) -> std::path::PathBuf {
    let stem = report.file_stem().and_then(|s| s.to_str()).unwrap_or("report");
    report.with_file_name(format!("{stem}_hem.csv"))
}

impl EvalReport {
    /// Writes the metric rows to `path` and the hem table beside it.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        write_rows(&self.rows, create(path)?)?;
        write_rows(&self.hem, create(&hem_path(path))?)
    }

    /// Reads a report saved by [`EvalReport::save`]; timings are not stored.
    pub fn load(path: impl AsRef<Path>, split: Split) -> Result<EvalReport> {
        let path = path.as_ref();
        let rows = read_rows(open(path)?)?;
        let hem_file = hem_path(path);
        let hem = if hem_file.exists() { read_rows(open(&hem_file)?)? } else { Vec::new() };
        Ok(EvalReport {
            split,
            rows,
            hem,
            ..Default::default()
        })
    }

    pub fn mean(&self, template: Option<&str>, method: Method) -> Option<(f64, f64)> {
        let uv = weighted_mean(&self.rows, template, method, |r| r.mse_uv_mm2)?;
        let vert = weighted_mean(&self.rows, template, method, |r| r.mse_vert_mm2)?;
        Some((uv, vert))
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let actions: std::collections::BTreeSet<&str> = self.rows.iter().map(|r| r.action.as_str()).collect();
        let _ = writeln!(s, "{} actions, {} rows", actions.len(), self.rows.len());
        let _ = writeln!(s, "{:<10} {:<13} {:>14} {:>14}", "template", "method", "uv mse mm²", "vertex mse mm²");
        let names: Vec<Option<&str>> = Template::ALL.iter().map(|t| Some(t.name())).chain([None]).collect();
        for t in names {
            for m in Method::ALL {
                if let Some((uv, vert)) = self.mean(t, m) {
                    let _ = writeln!(s, "{:<10} {:<13} {uv:>14.4} {vert:>14.4}", t.unwrap_or("all"), m.tag());
                }
            }
        }
        if let (Some((_, dress)), Some((_, tops)), Some((_, bottoms))) = (
            self.mean(Some("dress"), Method::Network),
            self.mean(Some("tops"), Method::Network),
            self.mean(Some("bottoms"), Method::Network),
        ) {
            let _ = writeln!(s, "dress / mean(tops, bottoms) network vertex mse: {:.2}", dress / (0.5 * (tops + bottoms)));
        }
        if !self.hem.is_empty() {
            let _ = writeln!(s, "hem variance relative to the pelvis, mm²:");
            for t in Template::ALL {
                let parts: Vec<String> = ["simulation", "network", "lbs", "ground_truth"]
                    .iter()
                    .filter_map(|src| mean_hem_variance(&self.hem, t.name(), src).map(|v| format!("{src} {v:.3}")))
                    .collect();
                let _ = writeln!(s, "  {:<8} {}", t.name(), parts.join(", "));
            }
        }
        if self.network_ms > 0.0 || self.lbs_ms > 0.0 {
            let _ = writeln!(s, "time per frame: network {:.1} ms, lbs {:.1} ms", self.network_ms, self.lbs_ms);
        }
        s
    }
}
