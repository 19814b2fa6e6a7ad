use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::correlate;
use crate::error::{FairError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub model: String,
    pub fold: usize,
    pub accuracy: f64,
    pub f1: f64,
    pub gmean: f64,
    pub metrics: BTreeMap<String, Option<f64>>,
}

/// One row per (model, fold), one column per metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TradeoffTable {
    pub metrics: Vec<String>,
    pub rows: Vec<TradeoffRow>,
}

const FIXED: [&str; 5] = ["model", "fold", "accuracy", "f1", "gmean"];

fn parse_f64(field: &str, raw: &str) -> Result<f64> {
    raw.parse()
        .map_err(|_| FairError::invalid(format!("column {field}: `{raw}` is not a number")))
}

impl TradeoffTable {
    pub fn push(&mut self, row: TradeoffRow) {
        for k in row.metrics.keys() {
            if !self.metrics.contains(k) {
                self.metrics.push(k.clone());
            }
        }
        self.rows.push(row);
    }

    /// Column of one metric (or accuracy/f1/gmean) across rows.
    pub fn series(&self, name: &str) -> Option<Vec<Option<f64>>> {
        match name {
            "accuracy" => Some(self.rows.iter().map(|r| Some(r.accuracy)).collect()),
            "f1" => Some(self.rows.iter().map(|r| Some(r.f1)).collect()),
            "gmean" => Some(self.rows.iter().map(|r| Some(r.gmean)).collect()),
            _ if self.metrics.iter().any(|m| m == name) => {
                Some(self.rows.iter().map(|r| r.metrics.get(name).copied().flatten()).collect())
            }
            _ => None,
        }
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let header: Vec<&str> = FIXED.iter().copied().chain(self.metrics.iter().map(String::as_str)).collect();
        out.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.model.clone(),
                r.fold.to_string(),
                r.accuracy.to_string(),
                r.f1.to_string(),
                r.gmean.to_string(),
            ];
            for m in &self.metrics {
                rec.push(r.metrics.get(m).copied().flatten().map(|v| v.to_string()).unwrap_or_default());
            }
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| FairError::io("<csv output>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let header: Vec<String> = reader.headers()?.iter().map(String::from).collect();
        if header.len() < FIXED.len() || header[..FIXED.len()] != FIXED {
            return Err(FairError::invalid("tradeoff table header must start with model,fold,accuracy,f1,gmean"));
        }
        let metrics: Vec<String> = header[FIXED.len()..].to_vec();
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec?;
            let get = |i: usize| rec.get(i).unwrap_or_default();
            let mut values = BTreeMap::new();
            for (i, m) in metrics.iter().enumerate() {
                let raw = get(FIXED.len() + i);
                let v = if raw.is_empty() { None } else { Some(parse_f64(m, raw)?) };
                values.insert(m.clone(), v);
            }
            rows.push(TradeoffRow {
                model: get(0).to_string(),
                fold: get(1)
                    .parse()
                    .map_err(|_| FairError::invalid(format!("bad fold `{}`", get(1))))?,
                accuracy: parse_f64("accuracy", get(2))?,
                f1: parse_f64("f1", get(3))?,
                gmean: parse_f64("gmean", get(4))?,
                metrics: values,
            });
        }
        Ok(TradeoffTable { metrics, rows })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRow {
    pub individual: String,
    pub group: String,
    pub samples: usize,
    pub r: Option<f64>,
    pub status: String,
}

/// Pearson r between each individual metric and each group metric across
/// the table's (model, fold) rows. Unknown metric columns are reported as
/// undefined rows.
pub fn relation_table(table: &TradeoffTable, individual: &[String], group: &[String]) -> Vec<RelationRow> {
    let mut out = Vec::new();
    for i in individual {
        for g in group {
            let row = match (table.series(i), table.series(g)) {
                (Some(a), Some(b)) => {
                    let c = correlate(i, &a, g, &b);
                    RelationRow {
                        individual: i.clone(),
                        group: g.clone(),
                        samples: c.samples,
                        r: c.r,
                        status: c.status,
                    }
                }
                _ => RelationRow {
                    individual: i.clone(),
                    group: g.clone(),
                    samples: 0,
                    r: None,
                    status: "undefined: metric not in table".into(),
                },
            };
            out.push(row);
        }
    }
    out
}

pub fn write_relation_csv<W: Write>(rows: &[RelationRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["individual", "group", "samples", "r", "status"])?;
    for r in rows {
        out.write_record([
            r.individual.clone(),
            r.group.clone(),
            r.samples.to_string(),
            r.r.map(|v| v.to_string()).unwrap_or_default(),
            r.status.clone(),
        ])?;
    }
    out.flush().map_err(|e| FairError::io("<csv output>", e))?;
    Ok(())
}
