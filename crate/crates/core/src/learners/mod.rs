//! Small built-in classifiers, cross-validation and performance measures.

mod cv;
mod ensemble;
mod logreg;
mod stump;

pub use cv::{
    ber_audit, cross_validate, cross_validate_xy, performance, BerAudit, BerRow, CvFold, CvResult, FoldPlan,
    PerformanceTriple,
};
pub use ensemble::{bagging_score, fit_adaboost, fit_bagging, BoostRound, Boosted};
pub use logreg::{fit_logistic, Logistic};
pub use stump::{fit_stump, Presorted, Stump};

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{decode_code, FeatureMatrix};
use crate::error::{FairError, Result};
use crate::predictions::DEFAULT_THRESHOLD;

/// Anything that maps a model-input row to a score in [0,1].
pub trait Classifier: Sync {
    fn score_row(&self, row: &[f64]) -> f64;

    fn scores(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows()).into_par_iter().map(|r| self.score_row(x.row(r))).collect()
    }

    fn predict(&self, x: &FeatureMatrix) -> Vec<u8> {
        self.scores(x).into_iter().map(|s| u8::from(s >= DEFAULT_THRESHOLD)).collect()
    }
}

/// Rule with a known dependence on one sensitive attribute:
/// `yhat = 1` iff `x[feature] < thresholds[code]`, where `code` is decoded
/// from the attribute's model-input column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Planted {
    pub feature: usize,
    pub attribute_column: usize,
    pub n_values: usize,
    pub thresholds: Vec<f64>,
}

impl Planted {
    pub fn predict_row(&self, row: &[f64]) -> u8 {
        let code = decode_code(row[self.attribute_column], self.n_values) as usize;
        u8::from(row[self.feature] < self.thresholds[code])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum Model {
    Constant { score: f64 },
    Stump(Stump),
    Bagging { stumps: Vec<Stump> },
    AdaBoost(Boosted),
    Logistic(Logistic),
    Planted(Planted),
}

impl Classifier for Model {
    fn score_row(&self, row: &[f64]) -> f64 {
        match self {
            Model::Constant { score } => *score,
            Model::Stump(s) => s.predict_row(row) as f64,
            Model::Bagging { stumps } => bagging_score(stumps, row),
            Model::AdaBoost(b) => b.score(row),
            Model::Logistic(l) => l.score(row),
            Model::Planted(p) => p.predict_row(row) as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum LearnerId {
    Stump,
    Bagging { replicates: usize },
    AdaBoost { rounds: usize },
    LogReg { epochs: usize, lr: f64 },
}

impl LearnerId {
    pub const DEFAULT_BAGGING: usize = 20;
    pub const DEFAULT_ROUNDS: usize = 50;
    pub const DEFAULT_EPOCHS: usize = 200;
    pub const DEFAULT_LR: f64 = 0.5;

    pub fn family(&self) -> &'static str {
        match self {
            LearnerId::Stump => "stump",
            LearnerId::Bagging { .. } => "bagging",
            LearnerId::AdaBoost { .. } => "adaboost",
            LearnerId::LogReg { .. } => "logreg",
        }
    }
}

impl fmt::Display for LearnerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LearnerId::Stump => write!(f, "stump"),
            LearnerId::Bagging { replicates } => write!(f, "bagging({replicates})"),
            LearnerId::AdaBoost { rounds } => write!(f, "adaboost({rounds})"),
            LearnerId::LogReg { epochs, lr } => write!(f, "logreg({epochs},{lr})"),
        }
    }
}

impl FromStr for LearnerId {
    type Err = FairError;

    /// `stump`, `bagging(B)`, `adaboost(T)`, `logreg(epochs,lr)`; arguments
    /// may be omitted to take defaults.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (head, args) = match s.find('(') {
            Some(open) => {
                let close = s
                    .strip_suffix(')')
                    .ok_or_else(|| FairError::invalid(format!("learner `{s}`: missing `)`")))?;
                (&s[..open], close[open + 1..].split(',').map(str::trim).collect::<Vec<_>>())
            }
            None => (s, Vec::new()),
        };
        let bad = || FairError::invalid(format!("cannot parse learner `{s}`"));
        let int = |v: &str| v.parse::<usize>().map_err(|_| bad());
        let id = match (head, args.as_slice()) {
            ("stump", []) => LearnerId::Stump,
            ("bagging", []) => LearnerId::Bagging {
                replicates: Self::DEFAULT_BAGGING,
            },
            ("bagging", [b]) => LearnerId::Bagging { replicates: int(b)? },
            ("adaboost", []) => LearnerId::AdaBoost {
                rounds: Self::DEFAULT_ROUNDS,
            },
            ("adaboost", [t]) => LearnerId::AdaBoost { rounds: int(t)? },
            ("logreg", []) => LearnerId::LogReg {
                epochs: Self::DEFAULT_EPOCHS,
                lr: Self::DEFAULT_LR,
            },
            ("logreg", [e, lr]) => LearnerId::LogReg {
                epochs: int(e)?,
                lr: lr.parse().map_err(|_| bad())?,
            },
            _ => return Err(bad()),
        };
        match id {
            LearnerId::Bagging { replicates: 0 } | LearnerId::AdaBoost { rounds: 0 } => {
                Err(FairError::invalid(format!("learner `{s}` needs a positive size")))
            }
            LearnerId::LogReg { lr, .. } if !(lr > 0.0 && lr.is_finite()) => {
                Err(FairError::invalid(format!("learner `{s}`: learning rate must be positive")))
            }
            id => Ok(id),
        }
    }
}

/// Parses a comma-separated learner list, respecting parentheses.
pub fn parse_learners(list: &str) -> Result<Vec<LearnerId>> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0;
    for (i, ch) in list.char_indices() {
        match ch {
            '(' => depth += 1,
            ')' => depth = depth.saturating_sub(1),
            ',' if depth == 0 => {
                out.push(list[start..i].parse()?);
                start = i + 1;
            }
            _ => {}
        }
    }
    if !list[start..].trim().is_empty() {
        out.push(list[start..].parse()?);
    }
    if out.is_empty() {
        return Err(FairError::invalid("empty learner list"));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub learner: LearnerId,
    pub model: Model,
    pub flags: Vec<String>,
}

impl Classifier for TrainedModel {
    fn score_row(&self, row: &[f64]) -> f64 {
        self.model.score_row(row)
    }
}

/// Trains `learner` on `x`/`y`. Single-class data yields a constant model
/// with a flag.
pub fn train(learner: LearnerId, x: &FeatureMatrix, y: &[u8], seed: u64) -> Result<TrainedModel> {
    if y.len() != x.n_rows() {
        return Err(FairError::LengthMismatch {
            expected: x.n_rows(),
            got: y.len(),
        });
    }
    if x.n_rows() < 2 {
        return Err(FairError::invalid("training needs at least 2 rows"));
    }
    let positives = y.iter().filter(|&&l| l == 1).count();
    if positives == 0 || positives == y.len() {
        let score = if positives == 0 { 0.0 } else { 1.0 };
        return Ok(TrainedModel {
            learner,
            model: Model::Constant { score },
            flags: vec![format!("single-class training data; constant {score} model")],
        });
    }
    let model = match learner {
        LearnerId::Stump => {
            let sorted = Presorted::new(x);
            Model::Stump(fit_stump(x, y, &vec![1.0; y.len()], &sorted).0)
        }
        LearnerId::Bagging { replicates } => Model::Bagging {
            stumps: fit_bagging(x, y, replicates, seed),
        },
        LearnerId::AdaBoost { rounds } => Model::AdaBoost(fit_adaboost(x, y, rounds)),
        LearnerId::LogReg { epochs, lr } => Model::Logistic(fit_logistic(x, y, epochs, lr)),
    };
    Ok(TrainedModel {
        learner,
        model,
        flags: Vec::new(),
    })
}
