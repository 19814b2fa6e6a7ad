use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{FairError, Result};
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "policy", rename_all = "snake_case")]
pub enum PerturbationPolicy {
    /// Every row gets a different value.
    #[default]
    FlipAll,
    /// Each row is perturbed independently with probability `p`.
    Rate { p: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    /// Same layout as [`Dataset::sensitive`].
    pub sensitive: Vec<Vec<u32>>,
    /// Attributes with fewer than two observed values, left unchanged.
    pub unperturbable: Vec<usize>,
}

/// Replaces sensitive values with different ones. Two-valued attributes are
/// flipped; others resample uniformly among the remaining values.
pub fn perturb(dataset: &Dataset, seed: u64, policy: PerturbationPolicy) -> Result<Perturbation> {
    if let PerturbationPolicy::Rate { p } = policy {
        if !(0.0..=1.0).contains(&p) {
            return Err(FairError::invalid(format!("perturbation rate {p} outside [0,1]")));
        }
    }
    let mut rng = seeded_rng(seed, 0x7065_7274);
    let mut sensitive = dataset.sensitive.clone();
    let mut unperturbable = Vec::new();
    for (i, (spec, col)) in dataset.attributes.iter().zip(sensitive.iter_mut()).enumerate() {
        let first = col[0];
        if col.iter().all(|&c| c == first) {
            unperturbable.push(i);
            continue;
        }
        let k = spec.n_values() as u32;
        for c in col.iter_mut() {
            let hit = match policy {
                PerturbationPolicy::FlipAll => true,
                PerturbationPolicy::Rate { p } => rng.gen::<f64>() < p,
            };
            if !hit {
                continue;
            }
            *c = if k == 2 {
                1 - *c
            } else {
                // uniform over the k-1 other values
                let draw = rng.gen_range(0..k - 1);
                if draw >= *c {
                    draw + 1
                } else {
                    draw
                }
            };
        }
    }
    Ok(Perturbation {
        sensitive,
        unperturbable,
    })
}
