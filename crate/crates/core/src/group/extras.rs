use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{check_lengths, probe_metric, EmptyCellPolicy, Form, MetricResult, ProbeKind};
use crate::data::GroupPartition;
use crate::error::{FairError, Result};

/// The 80% rule threshold.
pub const DEFAULT_TAU: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiResult {
    /// P(yhat=1 | non-privileged pooled) / P(yhat=1 | privileged)
    pub ratio: f64,
    pub passes: bool,
    pub tau: f64,
    pub rate_marginalised: f64,
    pub rate_privileged: f64,
}

/// Disparate impact ratio; passes when the ratio is at least `tau`.
pub fn disparate_impact(yhat: &[u8], partition: &GroupPartition, tau: f64) -> Result<DiResult> {
    if yhat.len() != partition.n_rows() {
        return Err(FairError::LengthMismatch {
            expected: partition.n_rows(),
            got: yhat.len(),
        });
    }
    let (mut n_p, mut pos_p, mut n_m, mut pos_m) = (0u64, 0u64, 0u64, 0u64);
    for (&p, &c) in yhat.iter().zip(&partition.codes) {
        if c == partition.privileged {
            n_p += 1;
            pos_p += u64::from(p);
        } else {
            n_m += 1;
            pos_m += u64::from(p);
        }
    }
    if n_p == 0 || n_m == 0 {
        return Err(FairError::TooFewGroups { needed: 2, found: 1 });
    }
    if pos_p == 0 {
        return Err(FairError::ZeroDenominator(
            "privileged group has no positive predictions".into(),
        ));
    }
    // one division from integer cross products
    let ratio = (pos_m as u128 * n_p as u128) as f64 / (n_m as u128 * pos_p as u128) as f64;
    Ok(DiResult {
        ratio,
        passes: ratio >= tau,
        tau,
        rate_marginalised: pos_m as f64 / n_m as f64,
        rate_privileged: pos_p as f64 / n_p as f64,
    })
}

/// Largest deviation of a group's positive rate from the overall rate.
pub fn disparate_treatment(
    yhat: &[u8],
    y: &[u8],
    partition: &GroupPartition,
    policy: EmptyCellPolicy,
) -> Result<MetricResult> {
    let mut m = probe_metric(ProbeKind::Dp, yhat, y, partition, Form::Ext, policy)?;
    m.name = "dt".into();
    Ok(m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CspResult {
    pub value: f64,
    /// (stratum code, within-stratum value or None when skipped)
    pub per_stratum: Vec<(u32, Option<f64>)>,
    pub flags: Vec<String>,
}

/// Statistical parity within each stratum of a legitimate factor; the
/// reported value is the worst stratum.
pub fn conditional_statistical_parity(
    yhat: &[u8],
    partition: &GroupPartition,
    strata: &[u32],
) -> Result<CspResult> {
    let n = partition.n_rows();
    if yhat.len() != n || strata.len() != n {
        return Err(FairError::LengthMismatch {
            expected: n,
            got: yhat.len().min(strata.len()),
        });
    }
    let levels: BTreeSet<u32> = strata.iter().copied().collect();
    let mut per_stratum = Vec::new();
    let mut flags = Vec::new();
    let mut value: Option<f64> = None;
    let zeros = vec![0u8; n];
    for s in levels {
        let rows: Vec<usize> = (0..n).filter(|&r| strata[r] == s).collect();
        let sub = partition.restrict(&rows);
        let sub_yhat: Vec<u8> = rows.iter().map(|&r| yhat[r]).collect();
        match probe_metric(
            ProbeKind::Dp,
            &sub_yhat,
            &zeros[..rows.len()],
            &sub,
            Form::Ext,
            EmptyCellPolicy::Skip,
        ) {
            Ok(m) => {
                value = Some(value.map_or(m.value, |v: f64| v.max(m.value)));
                per_stratum.push((s, Some(m.value)));
            }
            Err(e) => {
                flags.push(format!("stratum {s} skipped: {e}"));
                per_stratum.push((s, None));
            }
        }
    }
    let value = value.ok_or(FairError::TooFewGroups { needed: 2, found: 1 })?;
    Ok(CspResult {
        value,
        per_stratum,
        flags,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BglResult {
    pub xi: f64,
    pub group_losses: Vec<Option<f64>>,
    pub max_loss: f64,
    pub passes: bool,
    pub offending: Vec<usize>,
    pub skipped_groups: Vec<usize>,
}

/// Absolute loss |y - score|, which is 1-Lipschitz and bounded in [0,1].
pub fn absolute_loss(y: &[u8], scores: &[f64]) -> Vec<f64> {
    y.iter().zip(scores).map(|(&l, &s)| (l as f64 - s).abs()).collect()
}

/// Expected loss per group; passes when every group is at most `xi`.
pub fn bounded_group_loss(losses: &[f64], partition: &GroupPartition, xi: f64) -> Result<BglResult> {
    if losses.len() != partition.n_rows() {
        return Err(FairError::LengthMismatch {
            expected: partition.n_rows(),
            got: losses.len(),
        });
    }
    if let Some(bad) = losses.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(FairError::invalid(format!("loss {bad} outside [0,1]")));
    }
    let mut group_losses = Vec::with_capacity(partition.n_groups());
    let mut offending = Vec::new();
    let mut skipped = Vec::new();
    let mut max_loss = 0.0f64;
    for (j, rows) in partition.groups.iter().enumerate() {
        if rows.is_empty() {
            skipped.push(j);
            group_losses.push(None);
            continue;
        }
        let mean = rows.iter().map(|&r| losses[r]).sum::<f64>() / rows.len() as f64;
        if mean > xi {
            offending.push(j);
        }
        max_loss = max_loss.max(mean);
        group_losses.push(Some(mean));
    }
    Ok(BglResult {
        xi,
        group_losses,
        max_loss,
        passes: offending.is_empty(),
        offending,
        skipped_groups: skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaTerm {
    /// P(a=j, y=0)
    pub alpha: f64,
    /// |P(yhat=1 | y=0) - P(yhat=1 | a=j, y=0)|
    pub beta: f64,
    pub product: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaResult {
    pub terms: Vec<Option<GammaTerm>>,
    /// Smallest gamma the classifier satisfies.
    pub max: f64,
    pub skipped_groups: Vec<usize>,
}

/// False-positive subgroup fairness evaluated for every group.
pub fn gamma_subgroup_fairness(yhat: &[u8], y: &[u8], partition: &GroupPartition) -> Result<GammaResult> {
    check_lengths(yhat, y, partition)?;
    let n = partition.n_rows() as f64;
    let k = partition.n_groups();
    let mut neg = vec![0u64; k];
    let mut fp = vec![0u64; k];
    for ((&p, &l), &c) in yhat.iter().zip(y).zip(&partition.codes) {
        if l == 0 {
            neg[c as usize] += 1;
            fp[c as usize] += u64::from(p);
        }
    }
    let total_neg: u64 = neg.iter().sum();
    if total_neg == 0 {
        return Err(FairError::Undefined("no rows with y=0".into()));
    }
    let overall = fp.iter().sum::<u64>() as f64 / total_neg as f64;
    let mut terms = Vec::with_capacity(k);
    let mut skipped = Vec::new();
    let mut max = 0.0f64;
    for j in 0..k {
        if neg[j] == 0 {
            skipped.push(j);
            terms.push(None);
            continue;
        }
        let alpha = neg[j] as f64 / n;
        let beta = (overall - fp[j] as f64 / neg[j] as f64).abs();
        let product = alpha * beta;
        max = max.max(product);
        terms.push(Some(GammaTerm { alpha, beta, product }));
    }
    Ok(GammaResult {
        terms,
        max,
        skipped_groups: skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimaxRow {
    pub group_errors: Vec<Option<f64>>,
    pub max_error: f64,
    /// max_error minus the best max_error across candidates.
    pub gap: f64,
}

/// Worst-group error per candidate and its distance to the best candidate.
pub fn minimax_gap(candidates: &[Vec<u8>], y: &[u8], partition: &GroupPartition) -> Result<Vec<MinimaxRow>> {
    if candidates.is_empty() {
        return Err(FairError::invalid("at least one candidate is required"));
    }
    let mut rows = Vec::with_capacity(candidates.len());
    for yhat in candidates {
        check_lengths(yhat, y, partition)?;
        let group_errors: Vec<Option<f64>> = partition
            .groups
            .iter()
            .map(|g| {
                (!g.is_empty()).then(|| {
                    g.iter().filter(|&&r| yhat[r] != y[r]).count() as f64 / g.len() as f64
                })
            })
            .collect();
        let max_error = group_errors.iter().flatten().copied().fold(0.0, f64::max);
        rows.push(MinimaxRow {
            group_errors,
            max_error,
            gap: 0.0,
        });
    }
    let best = rows.iter().map(|r| r.max_error).fold(f64::INFINITY, f64::min);
    for r in &mut rows {
        r.gap = r.max_error - best;
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_groups(sizes: (usize, usize)) -> GroupPartition {
        let codes: Vec<u32> = std::iter::repeat(0)
            .take(sizes.0)
            .chain(std::iter::repeat(1).take(sizes.1))
            .collect();
        GroupPartition::from_codes(&codes, 2, 1)
    }

    #[test]
    fn di_boundary_and_failure() {
        let p = two_groups((10, 10));
        // rates 0.4 vs 0.5
        let yhat: Vec<u8> = (0..10).map(|r| u8::from(r < 4)).chain((0..10).map(|r| u8::from(r < 5))).collect();
        let di = disparate_impact(&yhat, &p, DEFAULT_TAU).unwrap();
        assert_eq!(di.ratio, 0.8);
        assert!(di.passes);
        // 0.2 vs 0.5
        let yhat: Vec<u8> = (0..10).map(|r| u8::from(r < 2)).chain((0..10).map(|r| u8::from(r < 5))).collect();
        let di = disparate_impact(&yhat, &p, DEFAULT_TAU).unwrap();
        assert!((di.ratio - 0.4).abs() < 1e-15);
        assert!(!di.passes);
        // equal rates
        let yhat = vec![1u8; 20];
        assert_eq!(disparate_impact(&yhat, &p, DEFAULT_TAU).unwrap().ratio, 1.0);
        // zero privileged rate
        let yhat: Vec<u8> = (0..20).map(|r| u8::from(r < 3)).collect();
        assert!(matches!(disparate_impact(&yhat, &p, 0.8), Err(FairError::ZeroDenominator(_))));
    }

    #[test]
    fn dt_examples() {
        let p = two_groups((1, 3));
        let yhat = [0, 1, 1, 1];
        let m = disparate_treatment(&yhat, &[0; 4], &p, EmptyCellPolicy::Skip).unwrap();
        assert!((m.value - 0.75).abs() < 1e-15);
        assert_eq!(m.name, "dt");
        let yhat = [1, 1, 1, 1];
        assert_eq!(disparate_treatment(&yhat, &[0; 4], &p, EmptyCellPolicy::Skip).unwrap().value, 0.0);
    }

    #[test]
    fn csp_removes_between_strata_disparity() {
        // stratum 0: both groups rate 1; stratum 1: both groups rate 0.
        // group 0 lives mostly in stratum 1, so unconditioned DP differs.
        let codes = [0, 1, 0, 0, 0, 1];
        let strata = [0, 0, 1, 1, 1, 1];
        let yhat = [1, 1, 0, 0, 0, 0];
        let p = GroupPartition::from_codes(&codes, 2, 1);
        let csp = conditional_statistical_parity(&yhat, &p, &strata).unwrap();
        assert_eq!(csp.value, 0.0);
        let unconditioned = probe_metric(ProbeKind::Dp, &yhat, &[0; 6], &p, Form::Ext, EmptyCellPolicy::Skip)
            .unwrap()
            .value;
        assert!(unconditioned > 0.0);
    }

    #[test]
    fn csp_single_stratum_matches_dp_ext_and_flags_empty() {
        let codes = [0, 1, 2, 0, 1, 2];
        let yhat = [1, 0, 1, 1, 1, 0];
        let p = GroupPartition::from_codes(&codes, 3, 0);
        let csp = conditional_statistical_parity(&yhat, &p, &[0; 6]).unwrap();
        let ext = probe_metric(ProbeKind::Dp, &yhat, &[0; 6], &p, Form::Ext, EmptyCellPolicy::Skip).unwrap();
        assert_eq!(csp.value, ext.value);

        // stratum 1 contains only group 0
        let strata = [0, 0, 0, 1, 0, 0];
        let csp = conditional_statistical_parity(&yhat, &p, &strata).unwrap();
        assert_eq!(csp.per_stratum[1], (1, None));
        assert_eq!(csp.flags.len(), 1);
    }

    #[test]
    fn bgl_examples() {
        let p = two_groups((2, 2));
        let perfect = bounded_group_loss(&[0.0; 4], &p, 0.0).unwrap();
        assert!(perfect.passes);
        let r = bounded_group_loss(&[0.1, 0.1, 0.4, 0.4], &p, 0.3).unwrap();
        assert!(!r.passes);
        assert_eq!(r.offending, vec![1]);
        assert!(bounded_group_loss(&[1.0, 0.3, 0.9, 0.0], &p, 1.0).unwrap().passes);
        assert_eq!(absolute_loss(&[1, 0], &[0.75, 0.25]), vec![0.25, 0.25]);
    }

    #[test]
    fn gamma_examples() {
        // identical FPRs
        let p = two_groups((4, 4));
        let y = [0u8; 8];
        let yhat = [1, 0, 1, 0, 1, 0, 1, 0];
        assert_eq!(gamma_subgroup_fairness(&yhat, &y, &p).unwrap().max, 0.0);

        // group 0: half the data, all y=0, FPR 0.8; group 1 FPR 0.4 -> overall 0.6, beta 0.2
        let p = two_groups((10, 10));
        let yhat: Vec<u8> = (0..10).map(|r| u8::from(r < 8)).chain((0..10).map(|r| u8::from(r < 4))).collect();
        let g = gamma_subgroup_fairness(&yhat, &[0; 20], &p).unwrap();
        let t0 = g.terms[0].unwrap();
        assert!((t0.alpha - 0.5).abs() < 1e-15);
        assert!((t0.beta - 0.2).abs() < 1e-12);
        assert!((t0.product - 0.1).abs() < 1e-12);

        // a 1-row group with a large beta carries little weight
        let p = two_groups((1, 99));
        let yhat: Vec<u8> = std::iter::once(1).chain(std::iter::repeat(0).take(99)).collect();
        let g = gamma_subgroup_fairness(&yhat, &[0; 100], &p).unwrap();
        let t0 = g.terms[0].unwrap();
        assert!((t0.beta - 0.99).abs() < 1e-12);
        assert!((t0.product - 0.0099).abs() < 1e-12);

        assert!(gamma_subgroup_fairness(&[1, 1], &[1, 1], &two_groups((1, 1))).is_err());
    }

    #[test]
    fn minimax_examples() {
        let p = two_groups((10, 10));
        let y = vec![0u8; 20];
        let single = minimax_gap(&[y.clone()], &y, &p).unwrap();
        assert_eq!(single[0].gap, 0.0);
        assert_eq!(single[0].max_error, 0.0);

        let a: Vec<u8> = (0..20).map(|r| u8::from(r < 3)).collect(); // group 0 error 0.3
        let b: Vec<u8> = (0..20).map(|r| u8::from((10..12).contains(&r))).collect(); // group 1 error 0.2
        let rows = minimax_gap(&[a, b], &y, &p).unwrap();
        assert!((rows[0].gap - 0.1).abs() < 1e-12);
        assert_eq!(rows[1].gap, 0.0);
    }
}
