//! Benefit inequality indices, discriminative risk and empirical Lipschitz
//! auditing.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{perturb, Dataset, FeatureMatrix, PerturbationPolicy};
use crate::error::{FairError, Result};
use crate::learners::Classifier;
use crate::seeded_rng;

/// b_i = yhat_i - y_i + 1.
pub fn benefits(yhat: &[u8], y: &[u8]) -> Result<Vec<f64>> {
    if yhat.len() != y.len() {
        return Err(FairError::LengthMismatch {
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if y.is_empty() {
        return Err(FairError::NoRows);
    }
    Ok(yhat.iter().zip(y).map(|(&p, &l)| p as f64 - l as f64 + 1.0).collect())
}

fn mean_benefit(b: &[f64]) -> Result<f64> {
    if b.is_empty() {
        return Err(FairError::NoRows);
    }
    let mu = b.iter().sum::<f64>() / b.len() as f64;
    if mu <= 0.0 {
        return Err(FairError::ZeroDenominator("mean benefit is zero".into()));
    }
    Ok(mu)
}

/// Generalised entropy index of a benefit vector; `alpha` must not be 0 or 1.
pub fn gei_from_benefits(b: &[f64], alpha: f64) -> Result<f64> {
    if alpha == 0.0 || alpha == 1.0 || !alpha.is_finite() {
        return Err(FairError::invalid(format!(
            "GEI alpha must be finite and not 0 or 1 (got {alpha}); use the Theil index for 1"
        )));
    }
    let mu = mean_benefit(b)?;
    let n = b.len() as f64;
    let s: f64 = b.iter().map(|&bi| (bi / mu).powf(alpha) - 1.0).sum();
    Ok(s / (n * alpha * (alpha - 1.0)))
}

pub fn general_entropy_index(yhat: &[u8], y: &[u8], alpha: f64) -> Result<f64> {
    gei_from_benefits(&benefits(yhat, y)?, alpha)
}

/// Theil index with natural log and 0·ln 0 = 0.
pub fn theil_from_benefits(b: &[f64]) -> Result<f64> {
    let mu = mean_benefit(b)?;
    let s: f64 = b
        .iter()
        .map(|&bi| {
            let r = bi / mu;
            if r == 0.0 {
                0.0
            } else {
                r * r.ln()
            }
        })
        .sum();
    Ok(s / b.len() as f64)
}

pub fn theil_index(yhat: &[u8], y: &[u8]) -> Result<f64> {
    theil_from_benefits(&benefits(yhat, y)?)
}

/// Predictions of `model` on the dataset before and after perturbing the
/// sensitive attributes.
#[derive(Debug, Clone, PartialEq)]
pub struct PerturbedPredictions {
    pub original: Vec<u8>,
    pub perturbed: Vec<u8>,
    pub flags: Vec<String>,
}

impl PerturbedPredictions {
    pub fn disagreements(&self) -> usize {
        self.original.iter().zip(&self.perturbed).filter(|(a, b)| a != b).count()
    }
}

pub fn perturbed_predictions(
    model: &dyn Classifier,
    dataset: &Dataset,
    seed: u64,
    policy: PerturbationPolicy,
) -> Result<PerturbedPredictions> {
    if dataset.n_rows() == 0 {
        return Err(FairError::NoRows);
    }
    let p = perturb(dataset, seed, policy)?;
    if p.unperturbable.len() == dataset.n_attributes() {
        let names: Vec<&str> = dataset.attributes.iter().map(|a| a.name.as_str()).collect();
        return Err(FairError::Unperturbable(names.join("`, `")));
    }
    let flags = p
        .unperturbable
        .iter()
        .map(|&i| format!("{} has a single observed value and was not perturbed", dataset.attributes[i].name))
        .collect();
    Ok(PerturbedPredictions {
        original: model.predict(&dataset.design_matrix()),
        perturbed: model.predict(&dataset.design_matrix_with(&p.sensitive)),
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrResult {
    pub value: f64,
    pub draws: usize,
    pub per_draw: Vec<f64>,
    pub flags: Vec<String>,
}

/// Share of rows whose prediction changes when only the sensitive inputs are
/// perturbed; the mean over `draws` perturbations seeded `seed, seed+1, ...`.
pub fn discriminative_risk_k(
    model: &dyn Classifier,
    dataset: &Dataset,
    seed: u64,
    policy: PerturbationPolicy,
    draws: usize,
) -> Result<DrResult> {
    if draws == 0 {
        return Err(FairError::invalid("at least one perturbation draw is required"));
    }
    let n = dataset.n_rows() as f64;
    let mut per_draw = Vec::with_capacity(draws);
    let mut flags = Vec::new();
    for d in 0..draws {
        let pp = perturbed_predictions(model, dataset, seed.wrapping_add(d as u64), policy)?;
        per_draw.push(pp.disagreements() as f64 / n);
        if d == 0 {
            flags = pp.flags;
        }
    }
    let value = per_draw.iter().sum::<f64>() / draws as f64;
    Ok(DrResult {
        value,
        draws,
        per_draw,
        flags,
    })
}

pub fn discriminative_risk(
    model: &dyn Classifier,
    dataset: &Dataset,
    seed: u64,
    policy: PerturbationPolicy,
) -> Result<DrResult> {
    discriminative_risk_k(model, dataset, seed, policy, 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LipschitzConfig {
    /// Ratio threshold of the probabilistic form.
    pub epsilon: f64,
    /// Allowed share of pairs at or above `epsilon`.
    pub delta: f64,
    /// Every pair is evaluated when n is at most this.
    pub full_threshold: usize,
    /// Random pairs drawn above the threshold.
    pub sample_pairs: usize,
    pub seed: u64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        LipschitzConfig {
            epsilon: 1.0,
            delta: 0.05,
            full_threshold: 2000,
            sample_pairs: 200_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzResult {
    /// Largest d_y/d_x over pairs with d_x > 0.
    pub constant: f64,
    /// Pairs with d_x = 0 and d_y > 0.
    pub hard_violations: u64,
    pub pairs: u64,
    pub exhaustive: bool,
    /// Share of pairs whose ratio is at least epsilon (hard violations count).
    pub violation_rate: f64,
    pub epsilon: f64,
    pub delta: f64,
    pub within_delta: bool,
}

#[derive(Default, Clone, Copy)]
struct PairTally {
    constant: f64,
    hard: u64,
    over: u64,
    pairs: u64,
}

impl PairTally {
    fn add(&mut self, dy: f64, dx: f64, epsilon: f64) {
        self.pairs += 1;
        if dx == 0.0 {
            if dy > 0.0 {
                self.hard += 1;
                self.over += 1;
            }
            return;
        }
        let ratio = dy / dx;
        self.constant = self.constant.max(ratio);
        if ratio >= epsilon {
            self.over += 1;
        }
    }

    fn merge(self, o: PairTally) -> PairTally {
        PairTally {
            constant: self.constant.max(o.constant),
            hard: self.hard + o.hard,
            over: self.over + o.over,
            pairs: self.pairs + o.pairs,
        }
    }
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Empirical Lipschitz constant of `scores` against Euclidean distance
/// between rows of `x`, with d_y = |score difference|.
pub fn lipschitz_audit(scores: &[f64], x: &FeatureMatrix, cfg: &LipschitzConfig) -> Result<LipschitzResult> {
    let n = x.n_rows();
    if scores.len() != n {
        return Err(FairError::LengthMismatch {
            expected: n,
            got: scores.len(),
        });
    }
    if n < 2 {
        return Err(FairError::invalid("Lipschitz audit needs at least 2 rows"));
    }
    let eps = cfg.epsilon;
    let exhaustive = n <= cfg.full_threshold;
    let tally = if exhaustive {
        (0..n)
            .into_par_iter()
            .map(|i| {
                let mut t = PairTally::default();
                for j in i + 1..n {
                    t.add((scores[i] - scores[j]).abs(), euclidean(x.row(i), x.row(j)), eps);
                }
                t
            })
            .reduce(PairTally::default, PairTally::merge)
    } else {
        let mut rng = seeded_rng(cfg.seed, 0x6c69_7073);
        let pairs: Vec<(usize, usize)> = (0..cfg.sample_pairs.max(1))
            .map(|_| {
                let i = rng.gen_range(0..n);
                let mut j = rng.gen_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                (i, j)
            })
            .collect();
        pairs
            .par_iter()
            .map(|&(i, j)| {
                let mut t = PairTally::default();
                t.add((scores[i] - scores[j]).abs(), euclidean(x.row(i), x.row(j)), eps);
                t
            })
            .reduce(PairTally::default, PairTally::merge)
    };
    let violation_rate = tally.over as f64 / tally.pairs as f64;
    Ok(LipschitzResult {
        constant: tally.constant,
        hard_violations: tally.hard,
        pairs: tally.pairs,
        exhaustive,
        violation_rate,
        epsilon: eps,
        delta: cfg.delta,
        within_delta: violation_rate <= cfg.delta,
    })
}
