use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{FairError, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PredictionSource {
    Builtin { learner: String },
    External { path: PathBuf },
    Planted,
}

/// Hard predictions, optional scores and where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub hard: Vec<u8>,
    pub scores: Option<Vec<f64>>,
    pub source: PredictionSource,
    pub seed: u64,
}

impl PredictionSet {
    pub fn from_hard(hard: Vec<u8>, source: PredictionSource, seed: u64) -> Self {
        PredictionSet {
            hard,
            scores: None,
            source,
            seed,
        }
    }

    pub fn from_scores(scores: Vec<f64>, threshold: f64, source: PredictionSource, seed: u64) -> Self {
        let hard = scores.iter().map(|&s| u8::from(s >= threshold)).collect();
        PredictionSet {
            hard,
            scores: Some(scores),
            source,
            seed,
        }
    }

    pub fn len(&self) -> usize {
        self.hard.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hard.is_empty()
    }

    pub fn is_external(&self) -> bool {
        matches!(self.source, PredictionSource::External { .. })
    }

    /// Scores if present, otherwise the hard predictions as 0/1 scores. The
    /// flag is true in the fallback case.
    pub fn scores_or_hard(&self) -> (Vec<f64>, bool) {
        match &self.scores {
            Some(s) => (s.clone(), false),
            None => (self.hard.iter().map(|&h| h as f64).collect(), true),
        }
    }

    pub fn validate(&self, n: usize, threshold: f64) -> Result<()> {
        if self.hard.len() != n {
            return Err(FairError::LengthMismatch {
                expected: n,
                got: self.hard.len(),
            });
        }
        if self.hard.iter().any(|&h| h > 1) {
            return Err(FairError::invalid("hard predictions must be 0 or 1"));
        }
        if let Some(scores) = &self.scores {
            if scores.len() != n {
                return Err(FairError::LengthMismatch {
                    expected: n,
                    got: scores.len(),
                });
            }
            for (r, (&s, &h)) in scores.iter().zip(&self.hard).enumerate() {
                if !(0.0..=1.0).contains(&s) {
                    return Err(FairError::invalid(format!("row {r}: score {s} outside [0,1]")));
                }
                if u8::from(s >= threshold) != h {
                    return Err(FairError::invalid(format!(
                        "row {r}: hard prediction {h} disagrees with score {s} at threshold {threshold}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Reads a `row_id,hard[,score]` CSV that must cover rows `0..n` exactly once.
    pub fn read_csv(path: &Path, n: usize, threshold: f64) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| FairError::from_csv(path, e))?;
        let headers = reader.headers()?.clone();
        let find = |name: &str| headers.iter().position(|h| h == name);
        let id_col = find("row_id").ok_or_else(|| FairError::MissingColumn("row_id".into()))?;
        let hard_col = find("hard").ok_or_else(|| FairError::MissingColumn("hard".into()))?;
        let score_col = find("score");

        let mut hard: Vec<Option<u8>> = vec![None; n];
        let mut scores: Vec<f64> = vec![0.0; n];
        let mut any_score = false;
        for record in reader.records() {
            let record = record?;
            let id: usize = record
                .get(id_col)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| FairError::invalid("row_id must be a non-negative integer"))?;
            if id >= n {
                return Err(FairError::invalid(format!("row_id {id} outside 0..{n}")));
            }
            if hard[id].is_some() {
                return Err(FairError::invalid(format!("row_id {id} appears twice")));
            }
            let h = match record.get(hard_col) {
                Some("0") => 0,
                Some("1") => 1,
                other => {
                    return Err(FairError::invalid(format!(
                        "row_id {id}: hard must be 0 or 1, got {other:?}"
                    )))
                }
            };
            hard[id] = Some(h);
            if let Some(c) = score_col {
                let raw = record.get(c).unwrap_or("");
                if !raw.is_empty() {
                    scores[id] = raw
                        .parse()
                        .map_err(|_| FairError::invalid(format!("row_id {id}: bad score `{raw}`")))?;
                    any_score = true;
                }
            }
        }
        let hard: Vec<u8> = hard
            .into_iter()
            .enumerate()
            .map(|(r, h)| h.ok_or_else(|| FairError::invalid(format!("row_id {r} missing"))))
            .collect::<Result<_>>()?;
        let set = PredictionSet {
            hard,
            scores: any_score.then_some(scores),
            source: PredictionSource::External {
                path: path.to_path_buf(),
            },
            seed: 0,
        };
        set.validate(n, threshold)?;
        Ok(set)
    }
}
