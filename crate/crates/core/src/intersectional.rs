//! Differential fairness, min-max ratios, intersectional disparate impact,
//! multiaccuracy and per-group calibration.

use serde::{Deserialize, Serialize};

use crate::data::GroupPartition;
use crate::error::{FairError, Result};
use crate::group::check_lengths;

pub const DEFAULT_KAPPA: f64 = 0.5;
pub const DEFAULT_BINS: usize = 10;

/// Per-group counts of positive predictions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountTable {
    pub positives: Vec<u64>,
    pub totals: Vec<u64>,
    pub kappa: f64,
}

impl CountTable {
    pub fn new(yhat: &[u8], partition: &GroupPartition, kappa: f64) -> Self {
        let k = partition.n_groups();
        let mut positives = vec![0; k];
        let mut totals = vec![0; k];
        for (&p, &c) in yhat.iter().zip(&partition.codes) {
            totals[c as usize] += 1;
            positives[c as usize] += u64::from(p);
        }
        CountTable {
            positives,
            totals,
            kappa,
        }
    }

    pub fn count(&self, outcome: u8, group: usize) -> u64 {
        if outcome == 1 {
            self.positives[group]
        } else {
            self.totals[group] - self.positives[group]
        }
    }

    /// (N_{y,a} + κ) / (N_a + 2κ)
    pub fn smoothed_rate(&self, outcome: u8, group: usize) -> f64 {
        (self.count(outcome, group) as f64 + self.kappa) / (self.totals[group] as f64 + 2.0 * self.kappa)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdfResult {
    pub epsilon: f64,
    pub kappa: f64,
    pub excluded_groups: Vec<usize>,
    pub flags: Vec<String>,
}

/// Largest absolute log-ratio of smoothed outcome rates between any two
/// groups, over both outcomes. Groups without rows are excluded.
pub fn empirical_differential_fairness(yhat: &[u8], partition: &GroupPartition, kappa: f64) -> Result<EdfResult> {
    if yhat.len() != partition.n_rows() {
        return Err(FairError::LengthMismatch {
            expected: partition.n_rows(),
            got: yhat.len(),
        });
    }
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(FairError::invalid(format!("kappa must be finite and >= 0, got {kappa}")));
    }
    let table = CountTable::new(yhat, partition, kappa);
    let groups: Vec<usize> = (0..partition.n_groups()).filter(|&j| table.totals[j] > 0).collect();
    let excluded: Vec<usize> = (0..partition.n_groups()).filter(|&j| table.totals[j] == 0).collect();
    if groups.len() < 2 {
        return Err(FairError::TooFewGroups {
            needed: 2,
            found: groups.len(),
        });
    }
    let mut flags = Vec::new();
    if !excluded.is_empty() {
        flags.push(format!("groups without rows excluded: {excluded:?}"));
    }
    let zero_cell = groups
        .iter()
        .any(|&j| table.count(0, j) == 0 || table.count(1, j) == 0);
    if zero_cell {
        if kappa == 0.0 {
            return Err(FairError::ZeroDenominator(
                "a group has zero count for an outcome; use kappa > 0".into(),
            ));
        }
        flags.push(format!("zero outcome count smoothed with kappa {kappa}"));
    }
    let mut epsilon = 0.0f64;
    for outcome in [0u8, 1] {
        let logs: Vec<f64> = groups.iter().map(|&j| table.smoothed_rate(outcome, j).ln()).collect();
        let hi = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = logs.iter().copied().fold(f64::INFINITY, f64::min);
        epsilon = epsilon.max(hi - lo);
    }
    Ok(EdfResult {
        epsilon,
        kappa,
        excluded_groups: excluded,
        flags,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioKind {
    Dpr,
    EoppR,
    Cspr,
    GbrInt,
}

impl RatioKind {
    pub const ALL: [RatioKind; 4] = [RatioKind::Dpr, RatioKind::EoppR, RatioKind::Cspr, RatioKind::GbrInt];

    pub fn as_str(self) -> &'static str {
        match self {
            RatioKind::Dpr => "dpr",
            RatioKind::EoppR => "eoppr",
            RatioKind::Cspr => "cspr",
            RatioKind::GbrInt => "gbr_int",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioResult {
    pub kind: RatioKind,
    pub value: f64,
    pub per_group: Vec<Option<f64>>,
    pub skipped_groups: Vec<usize>,
    pub flags: Vec<String>,
}

fn ratio_of_extremes(kind: RatioKind, per_group: Vec<Option<f64>>) -> Result<RatioResult> {
    let defined: Vec<f64> = per_group.iter().flatten().copied().collect();
    if defined.len() < 2 {
        return Err(FairError::TooFewGroups {
            needed: 2,
            found: defined.len(),
        });
    }
    let hi = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = defined.iter().copied().fold(f64::INFINITY, f64::min);
    if hi <= 0.0 {
        return Err(FairError::ZeroDenominator(format!(
            "{}: every group quantity is zero",
            kind.as_str()
        )));
    }
    let skipped: Vec<usize> = per_group
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .map(|(j, _)| j)
        .collect();
    let flags = if skipped.is_empty() {
        Vec::new()
    } else {
        vec![format!("undefined groups skipped: {skipped:?}")]
    };
    Ok(RatioResult {
        kind,
        value: lo / hi,
        per_group,
        skipped_groups: skipped,
        flags,
    })
}

/// Smallest per-group quantity over the largest. `legitimate` is required for
/// CSPR and restricts rows to the legitimate stratum.
pub fn minmax_ratio(
    kind: RatioKind,
    yhat: &[u8],
    y: &[u8],
    partition: &GroupPartition,
    legitimate: Option<&[bool]>,
) -> Result<RatioResult> {
    check_lengths(yhat, y, partition)?;
    let k = partition.n_groups();
    let mask: Option<&[bool]> = match (kind, legitimate) {
        (RatioKind::Cspr, None) => {
            return Err(FairError::invalid("cspr needs a stratum with a legitimate value"));
        }
        (RatioKind::Cspr, Some(m)) => {
            if m.len() != y.len() {
                return Err(FairError::LengthMismatch {
                    expected: y.len(),
                    got: m.len(),
                });
            }
            Some(m)
        }
        _ => None,
    };
    // numerator events and conditioning counts per group
    let mut event = vec![0u64; k];
    let mut cond = vec![0u64; k];
    let mut base = vec![0u64; k];
    for r in 0..y.len() {
        let j = partition.codes[r] as usize;
        let in_cond = match kind {
            RatioKind::Dpr | RatioKind::GbrInt => true,
            RatioKind::EoppR => y[r] == 1,
            RatioKind::Cspr => mask.is_some_and(|m| m[r]),
        };
        if in_cond {
            cond[j] += 1;
            event[j] += u64::from(yhat[r]);
            base[j] += u64::from(y[r]);
        }
    }
    let per_group: Vec<Option<f64>> = (0..k)
        .map(|j| {
            if cond[j] == 0 {
                return None;
            }
            let rate = event[j] as f64 / cond[j] as f64;
            match kind {
                RatioKind::GbrInt if base[j] == 0 => None,
                RatioKind::GbrInt => Some(event[j] as f64 / base[j] as f64),
                _ => Some(rate),
            }
        })
        .collect();
    ratio_of_extremes(kind, per_group)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdiResult {
    pub value: f64,
    pub rates: Vec<Option<f64>>,
    pub skipped_groups: Vec<usize>,
}

/// Minimum over ordered group pairs of the positive-rate ratio.
pub fn intersectional_disparate_impact(yhat: &[u8], partition: &GroupPartition) -> Result<IdiResult> {
    if yhat.len() != partition.n_rows() {
        return Err(FairError::LengthMismatch {
            expected: partition.n_rows(),
            got: yhat.len(),
        });
    }
    let table = CountTable::new(yhat, partition, 0.0);
    let rates: Vec<Option<f64>> = (0..partition.n_groups())
        .map(|j| (table.totals[j] > 0).then(|| table.positives[j] as f64 / table.totals[j] as f64))
        .collect();
    if let Some(j) = rates.iter().position(|r| *r == Some(0.0)) {
        return Err(FairError::ZeroDenominator(format!("group {j} has no positive predictions")));
    }
    let r = ratio_of_extremes(RatioKind::Dpr, rates)?;
    Ok(IdiResult {
        value: r.value,
        rates: r.per_group,
        skipped_groups: r.skipped_groups,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiaccuracyResult {
    /// |Σ_{i in group}(score_i - y_i)| / n per group.
    pub residuals: Vec<f64>,
    pub max_residual: f64,
    pub alpha: f64,
    pub passes: bool,
}

/// Multiaccuracy against group indicators and their negations.
pub fn multiaccuracy_check(
    scores: &[f64],
    y: &[u8],
    partition: &GroupPartition,
    alpha: f64,
) -> Result<MultiaccuracyResult> {
    if scores.len() != partition.n_rows() || y.len() != partition.n_rows() {
        return Err(FairError::LengthMismatch {
            expected: partition.n_rows(),
            got: scores.len().min(y.len()),
        });
    }
    if y.is_empty() {
        return Err(FairError::NoRows);
    }
    let n = y.len() as f64;
    let mut sums = vec![0.0; partition.n_groups()];
    for ((&s, &l), &c) in scores.iter().zip(y).zip(&partition.codes) {
        sums[c as usize] += s - l as f64;
    }
    let residuals: Vec<f64> = sums.iter().map(|s| s.abs() / n).collect();
    let max_residual = residuals.iter().copied().fold(0.0, f64::max);
    Ok(MultiaccuracyResult {
        residuals,
        max_residual,
        alpha,
        passes: max_residual <= alpha,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub bins: usize,
    /// rates[bin][group]: empirical P(y=1) in the cell, None when empty.
    pub rates: Vec<Vec<Option<f64>>>,
    pub max_gap: f64,
    pub flags: Vec<String>,
}

/// Equal-width score bins; per bin, the largest gap in positive-label rate
/// between populated groups.
pub fn calibration_by_group(
    scores: &[f64],
    y: &[u8],
    partition: &GroupPartition,
    bins: usize,
) -> Result<CalibrationResult> {
    if bins == 0 {
        return Err(FairError::invalid("at least one bin is required"));
    }
    if scores.len() != partition.n_rows() || y.len() != partition.n_rows() {
        return Err(FairError::LengthMismatch {
            expected: partition.n_rows(),
            got: scores.len().min(y.len()),
        });
    }
    let k = partition.n_groups();
    let mut pos = vec![vec![0u64; k]; bins];
    let mut tot = vec![vec![0u64; k]; bins];
    for ((&s, &l), &c) in scores.iter().zip(y).zip(&partition.codes) {
        let b = ((s * bins as f64).floor() as usize).min(bins - 1);
        tot[b][c as usize] += 1;
        pos[b][c as usize] += u64::from(l);
    }
    let rates: Vec<Vec<Option<f64>>> = (0..bins)
        .map(|b| {
            (0..k)
                .map(|j| (tot[b][j] > 0).then(|| pos[b][j] as f64 / tot[b][j] as f64))
                .collect()
        })
        .collect();
    let mut flags = Vec::new();
    if partition.nonempty_groups() < 2 {
        flags.push("fewer than two populated groups; gap is 0 by convention".to_string());
    }
    let mut empty_cells = 0;
    let mut max_gap = 0.0f64;
    for row in &rates {
        empty_cells += row.iter().filter(|r| r.is_none()).count();
        let defined: Vec<f64> = row.iter().flatten().copied().collect();
        if defined.len() >= 2 {
            let hi = defined.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lo = defined.iter().copied().fold(f64::INFINITY, f64::min);
            max_gap = max_gap.max(hi - lo);
        }
    }
    if empty_cells > 0 {
        flags.push(format!("{empty_cells} empty (bin, group) cells"));
    }
    Ok(CalibrationResult {
        bins,
        rates,
        max_gap,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstCaseLoss {
    pub per_group: Vec<Option<f64>>,
    pub max: f64,
}

const LOG_LOSS_CLIP: f64 = 1e-15;

/// Mean log-loss per group and its maximum. Diagnostic only.
pub fn worst_case_log_loss(scores: &[f64], y: &[u8], partition: &GroupPartition) -> Result<WorstCaseLoss> {
    if scores.len() != partition.n_rows() || y.len() != partition.n_rows() {
        return Err(FairError::LengthMismatch {
            expected: partition.n_rows(),
            got: scores.len().min(y.len()),
        });
    }
    let per_group: Vec<Option<f64>> = partition
        .groups
        .iter()
        .map(|g| {
            (!g.is_empty()).then(|| {
                g.iter()
                    .map(|&r| {
                        let p = scores[r].clamp(LOG_LOSS_CLIP, 1.0 - LOG_LOSS_CLIP);
                        if y[r] == 1 {
                            -p.ln()
                        } else {
                            -(1.0 - p).ln()
                        }
                    })
                    .sum::<f64>()
                    / g.len() as f64
            })
        })
        .collect();
    let max = per_group.iter().flatten().copied().fold(0.0, f64::max);
    Ok(WorstCaseLoss { per_group, max })
}
