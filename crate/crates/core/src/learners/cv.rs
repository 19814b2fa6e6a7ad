use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, Classifier, LearnerId, TrainedModel};
use crate::data::{Dataset, FeatureMatrix};
use crate::error::{FairError, Result};
use crate::predictions::{PredictionSet, PredictionSource, DEFAULT_THRESHOLD};
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    /// Test rows per fold, ascending.
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// Shuffles rows (per label class when stratified) and deals them
    /// round-robin, continuing the deal across classes so fold sizes differ
    /// by at most one.
    pub fn new(labels: &[u8], k: usize, seed: u64, stratified: bool) -> Result<Self> {
        let n = labels.len();
        if k < 2 {
            return Err(FairError::invalid("cross-validation needs k >= 2"));
        }
        if n < k {
            return Err(FairError::invalid(format!("{n} rows cannot fill {k} folds")));
        }
        let mut rng = seeded_rng(seed, 0x666f_6c64);
        let classes: Vec<Vec<usize>> = if stratified {
            (0..=1u8)
                .map(|c| (0..n).filter(|&r| labels[r] == c).collect())
                .collect()
        } else {
            vec![(0..n).collect()]
        };
        let mut folds = vec![Vec::with_capacity(n / k + 1); k];
        let mut slot = 0;
        for mut rows in classes {
            rows.shuffle(&mut rng);
            for r in rows {
                folds[slot % k].push(r);
                slot += 1;
            }
        }
        for f in &mut folds {
            f.sort_unstable();
        }
        Ok(FoldPlan {
            k,
            seed,
            stratified,
            folds,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    pub fn train_rows(&self, fold: usize) -> Vec<usize> {
        let mut rows: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(f, _)| f != fold)
            .flat_map(|(_, rows)| rows.iter().copied())
            .collect();
        rows.sort_unstable();
        rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvFold {
    pub fold: usize,
    pub test_rows: Vec<usize>,
    pub model: TrainedModel,
    pub scores: Vec<f64>,
    pub hard: Vec<u8>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub learner: LearnerId,
    pub plan: FoldPlan,
    pub folds: Vec<CvFold>,
}

impl CvResult {
    /// Held-out predictions for every row, assembled from the folds.
    pub fn out_of_fold(&self) -> PredictionSet {
        let n = self.plan.n_rows();
        let mut scores = vec![0.0; n];
        for f in &self.folds {
            for (&r, &s) in f.test_rows.iter().zip(&f.scores) {
                scores[r] = s;
            }
        }
        PredictionSet::from_scores(
            scores,
            DEFAULT_THRESHOLD,
            PredictionSource::Builtin {
                learner: self.learner.to_string(),
            },
            self.plan.seed,
        )
    }
}

pub(crate) fn fold_seed(seed: u64, fold: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(fold as u64)
}

/// k-fold cross-validation on an arbitrary design matrix and target.
pub fn cross_validate_xy(
    x: &FeatureMatrix,
    y: &[u8],
    learner: LearnerId,
    plan: &FoldPlan,
) -> Result<CvResult> {
    if plan.n_rows() != x.n_rows() || y.len() != x.n_rows() {
        return Err(FairError::LengthMismatch {
            expected: x.n_rows(),
            got: plan.n_rows().min(y.len()),
        });
    }
    let folds = (0..plan.k)
        .into_par_iter()
        .map(|f| {
            let train_rows = plan.train_rows(f);
            let test_rows = plan.folds[f].clone();
            let x_train = x.select_rows(&train_rows);
            let y_train: Vec<u8> = train_rows.iter().map(|&r| y[r]).collect();
            let model = train(learner, &x_train, &y_train, fold_seed(plan.seed, f))?;
            let x_test = x.select_rows(&test_rows);
            let scores = model.scores(&x_test);
            let hard = scores.iter().map(|&s| u8::from(s >= DEFAULT_THRESHOLD)).collect();
            let mut flags = model.flags.clone();
            let test_pos = test_rows.iter().filter(|&&r| y[r] == 1).count();
            if test_pos == 0 || test_pos == test_rows.len() {
                flags.push(format!("fold {f}: single-class test set"));
            }
            Ok(CvFold {
                fold: f,
                test_rows,
                model,
                scores,
                hard,
                flags,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CvResult {
        learner,
        plan: plan.clone(),
        folds,
    })
}

/// Label-stratified k-fold cross-validation on the dataset's model input.
pub fn cross_validate(dataset: &Dataset, learner: LearnerId, k: usize, seed: u64) -> Result<CvResult> {
    let plan = FoldPlan::new(&dataset.labels, k, seed, true)?;
    cross_validate_xy(&dataset.design_matrix(), &dataset.labels, learner, &plan)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceTriple {
    pub accuracy: f64,
    pub f1: f64,
    /// sqrt(TPR * TNR)
    pub gmean: f64,
    pub flags: Vec<String>,
}

pub fn performance(yhat: &[u8], y: &[u8]) -> Result<PerformanceTriple> {
    if yhat.len() != y.len() {
        return Err(FairError::LengthMismatch {
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(FairError::NoRows);
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &l) in yhat.iter().zip(y) {
        match (p, l) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    let mut flags = Vec::new();
    let accuracy = (tp + tn) as f64 / y.len() as f64;
    let f1 = if tp == 0 {
        flags.push("f1 undefined (no true positives); reported as 0".to_string());
        0.0
    } else {
        (2 * tp) as f64 / (2 * tp + fp + fn_) as f64
    };
    let gmean = if tp + fn_ == 0 || tn + fp == 0 {
        flags.push("gmean undefined (a label class is empty); reported as 0".to_string());
        0.0
    } else {
        let tpr = tp as f64 / (tp + fn_) as f64;
        let tnr = tn as f64 / (tn + fp) as f64;
        (tpr * tnr).sqrt()
    };
    Ok(PerformanceTriple {
        accuracy,
        f1,
        gmean,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerRow {
    pub learner: LearnerId,
    pub ber: f64,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerAudit {
    pub attribute: String,
    pub epsilon: f64,
    pub rows: Vec<BerRow>,
    pub min_ber: f64,
    /// True when no tried learner reaches BER <= epsilon.
    pub epsilon_fair: bool,
    pub flags: Vec<String>,
}

fn balanced_error(pred: &[u8], target: &[u8]) -> f64 {
    let (mut miss1, mut n1, mut miss0, mut n0) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &t) in pred.iter().zip(target) {
        if t == 1 {
            n1 += 1;
            miss1 += u64::from(p == 0);
        } else {
            n0 += 1;
            miss0 += u64::from(p == 1);
        }
    }
    0.5 * (miss1 as f64 / n1 as f64 + miss0 as f64 / n0 as f64)
}

/// How well the non-sensitive features predict the attribute (privileged vs
/// rest), measured by held-out balanced error rate per learner.
pub fn ber_audit(
    dataset: &Dataset,
    attribute: usize,
    learners: &[LearnerId],
    k: usize,
    seed: u64,
    epsilon: f64,
) -> Result<BerAudit> {
    let spec = dataset
        .attributes
        .get(attribute)
        .ok_or_else(|| FairError::invalid(format!("attribute index {attribute} out of range")))?;
    let privileged = spec.privileged_code();
    let target: Vec<u8> = dataset.sensitive[attribute]
        .iter()
        .map(|&c| u8::from(c == privileged))
        .collect();
    let ones = target.iter().filter(|&&t| t == 1).count();
    if ones == 0 || ones == target.len() {
        return Err(FairError::Undefined(format!("attribute {} is constant", spec.name)));
    }
    let mut flags = Vec::new();
    if spec.n_values() > 2 {
        flags.push(format!("{} binarised as privileged vs rest", spec.name));
    }
    let plan = FoldPlan::new(&target, k, seed, true)?;
    let mut rows = Vec::with_capacity(learners.len());
    for &learner in learners {
        let cv = cross_validate_xy(&dataset.features, &target, learner, &plan)?;
        let oof = cv.out_of_fold();
        rows.push(BerRow {
            learner,
            ber: balanced_error(&oof.hard, &target),
            flags: cv.folds.iter().flat_map(|f| f.flags.iter().cloned()).collect(),
        });
    }
    let min_ber = rows.iter().map(|r| r.ber).fold(f64::INFINITY, f64::min);
    Ok(BerAudit {
        attribute: spec.name.clone(),
        epsilon,
        rows,
        min_ber,
        epsilon_fair: min_ber > epsilon,
        flags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_are_balanced_and_reproducible() {
        let y: Vec<u8> = (0..100).map(|i| u8::from(i % 3 == 0)).collect();
        let plan = FoldPlan::new(&y, 5, 7, true).unwrap();
        assert!(plan.folds.iter().all(|f| f.len() == 20));
        assert_eq!(plan, FoldPlan::new(&y, 5, 7, true).unwrap());
        let mut all: Vec<usize> = plan.folds.concat();
        all.sort_unstable();
        assert_eq!(all, (0..100).collect::<Vec<_>>());
        assert_ne!(plan.folds, FoldPlan::new(&y, 5, 8, true).unwrap().folds);
        assert!(FoldPlan::new(&y[..3], 5, 0, true).is_err());
    }

    #[test]
    fn performance_examples() {
        // TP=4, FP=1, FN=1, TN=4
        let yhat = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let y = [1, 1, 1, 1, 0, 1, 0, 0, 0, 0];
        let p = performance(&yhat, &y).unwrap();
        assert!((p.accuracy - 0.8).abs() < 1e-15);
        assert!((p.f1 - 0.8).abs() < 1e-15);
        assert!((p.gmean - 0.8).abs() < 1e-15);

        let p = performance(&[1, 0], &[1, 0]).unwrap();
        assert_eq!((p.accuracy, p.f1, p.gmean), (1.0, 1.0, 1.0));

        let p = performance(&[1, 1], &[1, 1]).unwrap();
        assert_eq!((p.f1, p.gmean), (1.0, 0.0));
        assert_eq!(p.flags.len(), 1);
    }

    #[test]
    fn constant_predictor_ber_is_half() {
        assert_eq!(balanced_error(&[1, 1, 1, 1], &[1, 0, 1, 0]), 0.5);
        assert_eq!(balanced_error(&[1, 0], &[1, 0]), 0.0);
    }
}
