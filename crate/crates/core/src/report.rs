//! Serializable audit, validation and experiment reports.
//!
//! Reports are written with sorted maps and without wall times unless timing
//! capture is requested, so a fixed configuration gives byte-identical output.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ExpectedCounts};
use crate::error::{FairError, Result};
use crate::experiments::{CorrelationRow, UnderSummary};
use crate::learners::PerformanceTriple;
use crate::predictions::PredictionSource;

pub const TOOL: &str = concat!("fairlens ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    /// Not applicable to the inputs (missing scores, strata, judgments...).
    Skipped,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    /// None for dataset-level metrics.
    pub attribute: Option<String>,
    pub value: Option<f64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub details: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ns: Option<u64>,
}

impl MetricRow {
    pub fn ok(id: impl Into<String>, attribute: Option<String>, value: f64) -> Self {
        MetricRow {
            id: id.into(),
            attribute,
            value: Some(value),
            status: Status::Ok,
            message: None,
            flags: Vec::new(),
            terms: None,
            details: None,
            wall_time_ns: None,
        }
    }

    pub fn skipped(id: impl Into<String>, attribute: Option<String>, reason: impl Into<String>) -> Self {
        MetricRow {
            value: None,
            status: Status::Skipped,
            message: Some(reason.into()),
            ..MetricRow::ok(id, attribute, 0.0)
        }
    }

    pub fn error(id: impl Into<String>, attribute: Option<String>, err: &FairError) -> Self {
        MetricRow {
            value: None,
            status: Status::Error,
            message: Some(err.to_string()),
            ..MetricRow::ok(id, attribute, 0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSummary {
    pub name: String,
    pub values: usize,
    pub privileged: String,
    pub privileged_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub fingerprint: String,
    pub n: usize,
    /// Prepared model inputs: feature columns plus one per attribute.
    pub n_prep_features: usize,
    pub attributes: Vec<AttributeSummary>,
}

impl DatasetSummary {
    pub fn of(ds: &Dataset) -> Self {
        let attributes = ds
            .attributes
            .iter()
            .zip(&ds.sensitive)
            .map(|(spec, codes)| {
                let p = spec.privileged_code();
                AttributeSummary {
                    name: spec.name.clone(),
                    values: spec.n_values(),
                    privileged: spec.privileged.clone(),
                    privileged_size: codes.iter().filter(|&&c| c == p).count(),
                }
            })
            .collect();
        DatasetSummary {
            fingerprint: ds.fingerprint(),
            n: ds.n_rows(),
            n_prep_features: ds.n_input_columns(),
            attributes,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSummary {
    pub source: PredictionSource,
    pub has_scores: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub learner: String,
    pub k: usize,
    pub stratified: bool,
    pub seed: u64,
    pub fold_sizes: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StatusCounts {
    pub ok: usize,
    pub skipped: usize,
    pub error: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub tool: String,
    pub command: String,
    pub seed: u64,
    pub dataset: DatasetSummary,
    pub predictions: PredictionSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cv: Option<CvSummary>,
    pub settings: serde_json::Value,
    pub performance: Option<PerformanceTriple>,
    pub metrics: Vec<MetricRow>,
    pub summary: StatusCounts,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
    /// Phase name -> wall time, only when timings are recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings_ns: Option<BTreeMap<String, u64>>,
}

impl FairnessReport {
    pub fn count_statuses(rows: &[MetricRow]) -> StatusCounts {
        let mut c = StatusCounts::default();
        for r in rows {
            match r.status {
                Status::Ok => c.ok += 1,
                Status::Skipped => c.skipped += 1,
                Status::Error => c.error += 1,
            }
        }
        c
    }

    pub fn has_errors(&self) -> bool {
        self.summary.error > 0
    }

    pub fn metric(&self, id: &str, attribute: Option<&str>) -> Option<&MetricRow> {
        self.metrics
            .iter()
            .find(|m| m.id == id && m.attribute.as_deref() == attribute)
    }

    /// One row per metric: id, attribute, value, status, message, flags, terms.
    pub fn write_metrics_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "attribute", "value", "status", "message", "flags", "terms"])?;
        for m in &self.metrics {
            let status = match m.status {
                Status::Ok => "ok",
                Status::Skipped => "skipped",
                Status::Error => "error",
            };
            out.write_record([
                m.id.clone(),
                m.attribute.clone().unwrap_or_default(),
                m.value.map(|v| v.to_string()).unwrap_or_default(),
                status.to_string(),
                m.message.clone().unwrap_or_default(),
                m.flags.join("; "),
                m.terms.map(|t| t.to_string()).unwrap_or_default(),
            ])?;
        }
        out.flush().map_err(|e| FairError::io("<csv output>", e))?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub tool: String,
    pub dataset: DatasetSummary,
    pub constant_columns: Vec<String>,
    pub expected: Option<ExpectedCounts>,
    pub mismatches: Vec<String>,
    pub matches: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub tool: String,
    pub command: String,
    pub seed: u64,
    pub dataset: DatasetSummary,
    pub attribute: String,
    pub learners: Vec<String>,
    pub cv: Vec<CvSummary>,
    pub settings: serde_json::Value,
    pub underestimation: Vec<UnderSummary>,
    pub correlation: Vec<CorrelationRow>,
    pub files: Vec<String>,
    pub notes: Vec<String>,
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    std::fs::write(path, to_json(value)?).map_err(|e| FairError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_serialize_compactly() {
        let row = MetricRow::skipped("bgl", Some("sex".into()), "scores are required but not available");
        let v = serde_json::to_value(&row).unwrap();
        assert_eq!(v["status"], "skipped");
        assert!(v.get("wall_time_ns").is_none());
        assert!(v["value"].is_null());
        let back: MetricRow = serde_json::from_value(v).unwrap();
        assert_eq!(back, row);
    }

    #[test]
    fn status_counts() {
        let rows = vec![
            MetricRow::ok("dp.alt", None, 0.1),
            MetricRow::skipped("bgl", None, "x"),
            MetricRow::error("di", None, &FairError::ZeroDenominator("p".into())),
        ];
        assert_eq!(
            FairnessReport::count_statuses(&rows),
            StatusCounts {
                ok: 1,
                skipped: 1,
                error: 1
            }
        );
    }
}
