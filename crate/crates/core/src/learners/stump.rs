use serde::{Deserialize, Serialize};

use crate::data::FeatureMatrix;

/// One-feature threshold rule: rows with `x[feature] > threshold` get
/// `polarity`, the rest get `1 - polarity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub polarity: u8,
}

impl Stump {
    pub fn predict_row(&self, x: &[f64]) -> u8 {
        if x[self.feature] > self.threshold {
            self.polarity
        } else {
            1 - self.polarity
        }
    }
}

/// Row indices per feature, sorted by value then index. Built once and shared
/// by every weighted fit on the same matrix.
#[derive(Debug, Clone)]
pub struct Presorted {
    order: Vec<Vec<usize>>,
}

impl Presorted {
    pub fn new(x: &FeatureMatrix) -> Self {
        let order = (0..x.n_cols())
            .map(|f| {
                let mut idx: Vec<usize> = (0..x.n_rows()).collect();
                idx.sort_by(|&a, &b| x.get(a, f).total_cmp(&x.get(b, f)).then(a.cmp(&b)));
                idx
            })
            .collect();
        Presorted { order }
    }
}

/// Weighted stump minimising weighted misclassification. Candidate thresholds
/// are `min - 1` (a constant rule) and midpoints between consecutive distinct
/// values. Ties go to the lowest feature, then the lowest threshold, then
/// polarity 1. Returns the stump and its weighted error.
pub fn fit_stump(x: &FeatureMatrix, y: &[u8], w: &[f64], sorted: &Presorted) -> (Stump, f64) {
    let total: f64 = w.iter().sum();
    let neg: f64 = y.iter().zip(w).filter(|(&l, _)| l == 0).map(|(_, &wi)| wi).sum();
    let mut best = Stump {
        feature: 0,
        threshold: f64::NEG_INFINITY,
        polarity: 1,
    };
    let mut best_err = f64::INFINITY;
    let mut consider = |f: usize, t: f64, err1: f64| {
        let err0 = total - err1;
        if err1 < best_err {
            best_err = err1;
            best = Stump { feature: f, threshold: t, polarity: 1 };
        }
        if err0 < best_err {
            best_err = err0;
            best = Stump { feature: f, threshold: t, polarity: 0 };
        }
    };
    for (f, order) in sorted.order.iter().enumerate() {
        if order.is_empty() {
            continue;
        }
        let min = x.get(order[0], f);
        // everything above the threshold: polarity 1 misclassifies the negatives
        let mut err1 = neg;
        consider(f, min - 1.0, err1);
        let mut i = 0;
        while i < order.len() {
            let v = x.get(order[i], f);
            while i < order.len() && x.get(order[i], f) == v {
                let r = order[i];
                if y[r] == 1 {
                    err1 += w[r];
                } else {
                    err1 -= w[r];
                }
                i += 1;
            }
            if i < order.len() {
                let next = x.get(order[i], f);
                consider(f, v + (next - v) / 2.0, err1);
            }
        }
    }
    (best, best_err.max(0.0))
}
