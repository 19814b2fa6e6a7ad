use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stump::{fit_stump, Presorted, Stump};
use crate::data::FeatureMatrix;
use crate::seeded_rng;

/// Bootstrap replicates of stumps. Each replicate draws `n` rows with
/// replacement, expressed as multiplicity weights.
pub fn fit_bagging(x: &FeatureMatrix, y: &[u8], b: usize, seed: u64) -> Vec<Stump> {
    let n = x.n_rows();
    let sorted = Presorted::new(x);
    (0..b)
        .into_par_iter()
        .map(|rep| {
            let mut rng = seeded_rng(seed, 0x6261_6700 + rep as u64);
            let mut w = vec![0.0; n];
            for _ in 0..n {
                w[rng.gen_range(0..n)] += 1.0;
            }
            fit_stump(x, y, &w, &sorted).0
        })
        .collect()
}

/// Fraction of stumps voting 1.
pub fn bagging_score(stumps: &[Stump], row: &[f64]) -> f64 {
    let votes = stumps.iter().filter(|s| s.predict_row(row) == 1).count();
    votes as f64 / stumps.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoostRound {
    /// Weighted error of the round's stump under normalised weights.
    pub error: f64,
    pub alpha: f64,
    /// Normaliser of the weight update; the product over rounds bounds the
    /// training error.
    pub z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boosted {
    pub stumps: Vec<Stump>,
    pub alphas: Vec<f64>,
    pub rounds: Vec<BoostRound>,
}

impl Boosted {
    /// Signed margin sum F(x) = Σ α_t h_t(x) with h in {-1, +1}.
    pub fn margin(&self, row: &[f64]) -> f64 {
        self.stumps
            .iter()
            .zip(&self.alphas)
            .map(|(s, a)| if s.predict_row(row) == 1 { *a } else { -*a })
            .sum()
    }

    /// Margin mapped to [0,1]; 0.5 is the decision boundary.
    pub fn score(&self, row: &[f64]) -> f64 {
        let total: f64 = self.alphas.iter().sum();
        if total <= 0.0 {
            return 0.5;
        }
        ((self.margin(row) / total + 1.0) / 2.0).clamp(0.0, 1.0)
    }

    /// Upper bound on training error after each round.
    pub fn error_bounds(&self) -> Vec<f64> {
        self.rounds
            .iter()
            .scan(1.0, |acc, r| {
                *acc *= r.z;
                Some(*acc)
            })
            .collect()
    }
}

const ZERO_ERROR_ALPHA_FLOOR: f64 = 1e-10;
// weighted errors this close to 0.5 are chance up to rounding
const CHANCE_TOLERANCE: f64 = 1e-9;

/// Discrete AdaBoost over stumps. Stops early on a zero-error round or when
/// the best stump is no better than chance.
pub fn fit_adaboost(x: &FeatureMatrix, y: &[u8], rounds: usize) -> Boosted {
    let n = x.n_rows();
    let sorted = Presorted::new(x);
    let mut w = vec![1.0 / n as f64; n];
    let mut out = Boosted {
        stumps: Vec::new(),
        alphas: Vec::new(),
        rounds: Vec::new(),
    };
    for _ in 0..rounds {
        let (stump, err) = fit_stump(x, y, &w, &sorted);
        if err >= 0.5 - CHANCE_TOLERANCE {
            if out.stumps.is_empty() {
                out.stumps.push(stump);
                out.alphas.push(0.0);
            }
            break;
        }
        let alpha = 0.5 * ((1.0 - err + ZERO_ERROR_ALPHA_FLOOR) / (err + ZERO_ERROR_ALPHA_FLOOR)).ln();
        let mut z = 0.0;
        for (r, wr) in w.iter_mut().enumerate() {
            let agree = stump.predict_row(x.row(r)) == y[r];
            *wr *= if agree { (-alpha).exp() } else { alpha.exp() };
            z += *wr;
        }
        for wr in &mut w {
            *wr /= z;
        }
        out.stumps.push(stump);
        out.alphas.push(alpha);
        out.rounds.push(BoostRound { error: err, alpha, z });
        if err == 0.0 {
            break;
        }
    }
    out
}
