//! Independence, separation and sufficiency measures.
//!
//! Every measure that compares a conditional rate across groups is expressed
//! as a [`ProbeKind`]: an event over `(prediction, label)` and a conditioning
//! event over the same pair. The per-group rate is the frequency of the event
//! among the group's rows that satisfy the condition. Each probe can then be
//! aggregated in any [`Form`].

mod extras;

pub use extras::{
    absolute_loss,
    bounded_group_loss, conditional_statistical_parity, disparate_impact, disparate_treatment,
    gamma_subgroup_fairness, minimax_gap, BglResult, CspResult, DiResult, GammaResult, GammaTerm,
    MinimaxRow, DEFAULT_TAU,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::GroupPartition;
use crate::error::{FairError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeKind {
    /// P(yhat=1 | group)
    Dp,
    /// P(yhat=1 | group, y=1)
    Eopp,
    /// P(yhat=1 | group, y=0), predictive equality / FPR balance
    FprBalance,
    /// P(y=1 | group, yhat=1)
    Pp,
    /// P(y=0 | group, yhat=0)
    NpvParity,
}

impl ProbeKind {
    pub const ALL: [ProbeKind; 5] = [
        ProbeKind::Dp,
        ProbeKind::Eopp,
        ProbeKind::FprBalance,
        ProbeKind::Pp,
        ProbeKind::NpvParity,
    ];

    pub fn prefix(self) -> &'static str {
        match self {
            ProbeKind::Dp => "dp",
            ProbeKind::Eopp => "eopp",
            ProbeKind::FprBalance => "peq",
            ProbeKind::Pp => "ppar",
            ProbeKind::NpvParity => "npv",
        }
    }

    pub fn from_prefix(s: &str) -> Option<Self> {
        ProbeKind::ALL.into_iter().find(|k| k.prefix() == s)
    }

    #[inline]
    pub fn condition(self, yhat: u8, y: u8) -> bool {
        match self {
            ProbeKind::Dp => true,
            ProbeKind::Eopp => y == 1,
            ProbeKind::FprBalance => y == 0,
            ProbeKind::Pp => yhat == 1,
            ProbeKind::NpvParity => yhat == 0,
        }
    }

    #[inline]
    pub fn event(self, yhat: u8, y: u8) -> bool {
        match self {
            ProbeKind::Dp | ProbeKind::Eopp | ProbeKind::FprBalance => yhat == 1,
            ProbeKind::Pp => y == 1,
            ProbeKind::NpvParity => y == 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    /// Two-group difference.
    Orig,
    /// Pooled non-privileged groups against the privileged group.
    Binarised,
    /// Largest deviation of a group from the overall rate.
    Ext,
    /// Largest pairwise gap.
    Alt,
    ExtAvg,
    AltAvg,
}

impl Form {
    pub const ALL: [Form; 6] = [
        Form::Orig,
        Form::Binarised,
        Form::Ext,
        Form::Alt,
        Form::ExtAvg,
        Form::AltAvg,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Form::Orig => "orig",
            Form::Binarised => "binarised",
            Form::Ext => "ext",
            Form::Alt => "alt",
            Form::ExtAvg => "ext_avg",
            Form::AltAvg => "alt_avg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Form::ALL.into_iter().find(|f| f.as_str() == s)
    }
}

impl std::fmt::Display for Form {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyCellPolicy {
    /// Leave groups with an empty conditioning cell out and record them.
    #[default]
    Skip,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    pub kind: Option<ProbeKind>,
    pub form: Option<Form>,
    pub value: f64,
    pub skipped_groups: Vec<usize>,
    pub flags: Vec<String>,
    /// Number of terms the form aggregates (1 for two-rate differences).
    pub terms: usize,
    pub wall_time_ns: u64,
}

impl MetricResult {
    pub fn scalar(name: impl Into<String>, value: f64) -> Self {
        MetricResult {
            name: name.into(),
            kind: None,
            form: None,
            value,
            skipped_groups: Vec::new(),
            flags: Vec::new(),
            terms: 1,
            wall_time_ns: 0,
        }
    }

    pub fn with_flag(mut self, flag: impl Into<String>) -> Self {
        self.flags.push(flag.into());
        self
    }
}

/// Per-group counts of the conditioning event and of the event within it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProbeCounts {
    pub condition: Vec<u64>,
    pub event: Vec<u64>,
}

impl ProbeCounts {
    pub fn tally(probe: ProbeKind, yhat: &[u8], y: &[u8], partition: &GroupPartition) -> Self {
        let k = partition.n_groups();
        let mut condition = vec![0u64; k];
        let mut event = vec![0u64; k];
        for ((&p, &l), &c) in yhat.iter().zip(y).zip(&partition.codes) {
            if probe.condition(p, l) {
                condition[c as usize] += 1;
                if probe.event(p, l) {
                    event[c as usize] += 1;
                }
            }
        }
        ProbeCounts { condition, event }
    }

    pub fn rate(&self, j: usize) -> Option<f64> {
        (self.condition[j] > 0).then(|| self.event[j] as f64 / self.condition[j] as f64)
    }

    pub fn evaluable(&self) -> Vec<usize> {
        (0..self.condition.len())
            .filter(|&j| self.condition[j] > 0)
            .collect()
    }

    pub fn empty(&self) -> Vec<usize> {
        (0..self.condition.len())
            .filter(|&j| self.condition[j] == 0)
            .collect()
    }
}

pub(crate) fn check_lengths(yhat: &[u8], y: &[u8], partition: &GroupPartition) -> Result<()> {
    let n = partition.n_rows();
    for len in [yhat.len(), y.len()] {
        if len != n {
            return Err(FairError::LengthMismatch { expected: n, got: len });
        }
    }
    Ok(())
}

/// Empirical frequency of the probe's event among rows of group `j` that
/// satisfy its condition.
pub fn group_rate(
    probe: ProbeKind,
    yhat: &[u8],
    y: &[u8],
    partition: &GroupPartition,
    j: usize,
) -> Result<f64> {
    check_lengths(yhat, y, partition)?;
    if j >= partition.n_groups() {
        return Err(FairError::invalid(format!("group {j} out of range")));
    }
    let counts = ProbeCounts::tally(probe, yhat, y, partition);
    counts.rate(j).ok_or(FairError::EmptyCell { group: j })
}

/// Aggregates the probe's per-group rates in the requested form.
pub fn probe_metric(
    probe: ProbeKind,
    yhat: &[u8],
    y: &[u8],
    partition: &GroupPartition,
    form: Form,
    policy: EmptyCellPolicy,
) -> Result<MetricResult> {
    check_lengths(yhat, y, partition)?;
    let start = Instant::now();
    let counts = ProbeCounts::tally(probe, yhat, y, partition);
    let mut result = aggregate(probe, &counts, partition.privileged as usize, form, policy)?;
    result.wall_time_ns = start.elapsed().as_nanos() as u64;
    Ok(result)
}

/// Form aggregation over precomputed counts.
pub fn aggregate(
    probe: ProbeKind,
    counts: &ProbeCounts,
    privileged: usize,
    form: Form,
    policy: EmptyCellPolicy,
) -> Result<MetricResult> {
    let k = counts.condition.len();
    let empty = counts.empty();
    if policy == EmptyCellPolicy::Error {
        if let Some(&g) = empty.first() {
            return Err(FairError::EmptyCell { group: g });
        }
    }
    let rate = |j: usize| counts.rate(j);
    let evaluable = counts.evaluable();

    let (value, terms) = match form {
        Form::Orig => {
            if k != 2 {
                return Err(FairError::invalid(format!(
                    "the two-group form needs a binary attribute, got {k} values"
                )));
            }
            let other = 1 - privileged;
            let rp = rate(privileged).ok_or(FairError::EmptyCell { group: privileged })?;
            let ro = rate(other).ok_or(FairError::EmptyCell { group: other })?;
            ((ro - rp).abs(), 1)
        }
        Form::Binarised => {
            let rp = rate(privileged).ok_or(FairError::EmptyCell { group: privileged })?;
            let (mut cond, mut ev) = (0u64, 0u64);
            for j in (0..k).filter(|&j| j != privileged) {
                cond += counts.condition[j];
                ev += counts.event[j];
            }
            if cond == 0 {
                return Err(FairError::TooFewGroups { needed: 2, found: 1 });
            }
            ((ev as f64 / cond as f64 - rp).abs(), 1)
        }
        Form::Ext | Form::ExtAvg => {
            require_two(&evaluable)?;
            let cond: u64 = counts.condition.iter().sum();
            let ev: u64 = counts.event.iter().sum();
            let overall = ev as f64 / cond as f64;
            let devs = evaluable.iter().map(|&j| (rate(j).unwrap() - overall).abs());
            if form == Form::Ext {
                (devs.fold(0.0, f64::max), evaluable.len())
            } else {
                (devs.sum::<f64>() / evaluable.len() as f64, evaluable.len())
            }
        }
        Form::Alt | Form::AltAvg => {
            require_two(&evaluable)?;
            let rates: Vec<f64> = evaluable.iter().map(|&j| rate(j).unwrap()).collect();
            let mut max = 0.0f64;
            let mut sum = 0.0;
            let mut pairs = 0usize;
            for a in 0..rates.len() {
                for b in a + 1..rates.len() {
                    let d = (rates[a] - rates[b]).abs();
                    max = max.max(d);
                    sum += d;
                    pairs += 1;
                }
            }
            if form == Form::Alt {
                (max, pairs)
            } else {
                (sum / pairs as f64, pairs)
            }
        }
    };

    let mut flags = Vec::new();
    if !empty.is_empty() {
        flags.push(format!("skipped {} empty cell(s)", empty.len()));
    }
    Ok(MetricResult {
        name: format!("{}.{}", probe.prefix(), form.as_str()),
        kind: Some(probe),
        form: Some(form),
        value,
        skipped_groups: empty,
        flags,
        terms,
        wall_time_ns: 0,
    })
}

fn require_two(evaluable: &[usize]) -> Result<()> {
    if evaluable.len() < 2 {
        return Err(FairError::TooFewGroups {
            needed: 2,
            found: evaluable.len(),
        });
    }
    Ok(())
}

#[derive(Clone, Copy)]
enum Scope {
    All,
    Is(u32),
    Not(u32),
}

fn scan_rate(probe: ProbeKind, yhat: &[u8], y: &[u8], codes: &[u32], scope: Scope) -> Option<f64> {
    let (mut cond, mut ev) = (0u64, 0u64);
    for ((&p, &l), &c) in yhat.iter().zip(y).zip(codes) {
        let inside = match scope {
            Scope::All => true,
            Scope::Is(j) => c == j,
            Scope::Not(j) => c != j,
        };
        if inside && probe.condition(p, l) {
            cond += 1;
            ev += u64::from(probe.event(p, l));
        }
    }
    (cond > 0).then(|| ev as f64 / cond as f64)
}

/// Evaluates a form the way its formula reads: every probability inside every
/// term is estimated by its own pass over the rows. Values equal
/// [`probe_metric`]; the cost grows with the number of terms, which is what
/// the timing harness measures.
pub fn probe_metric_direct(
    probe: ProbeKind,
    yhat: &[u8],
    y: &[u8],
    partition: &GroupPartition,
    form: Form,
) -> Result<MetricResult> {
    check_lengths(yhat, y, partition)?;
    let start = Instant::now();
    let codes = &partition.codes;
    let k = partition.n_groups() as u32;
    let priv_ = partition.privileged;
    let rate = |s: Scope| scan_rate(probe, yhat, y, codes, s);

    let mut skipped = Vec::new();
    let (value, terms) = match form {
        Form::Orig | Form::Binarised => {
            if form == Form::Orig && k != 2 {
                return Err(FairError::invalid(format!(
                    "the two-group form needs a binary attribute, got {k} values"
                )));
            }
            let rp = rate(Scope::Is(priv_)).ok_or(FairError::EmptyCell { group: priv_ as usize })?;
            let ro = rate(Scope::Not(priv_)).ok_or(FairError::TooFewGroups { needed: 2, found: 1 })?;
            ((ro - rp).abs(), 1)
        }
        Form::Ext | Form::ExtAvg => {
            let mut devs = Vec::new();
            for j in 0..k {
                let rj = rate(Scope::Is(j));
                let all = rate(Scope::All);
                match (rj, all) {
                    (Some(a), Some(b)) => devs.push((a - b).abs()),
                    _ => skipped.push(j as usize),
                }
            }
            if devs.len() < 2 {
                return Err(FairError::TooFewGroups {
                    needed: 2,
                    found: devs.len(),
                });
            }
            let v = if form == Form::Ext {
                devs.iter().copied().fold(0.0, f64::max)
            } else {
                devs.iter().sum::<f64>() / devs.len() as f64
            };
            (v, devs.len())
        }
        Form::Alt | Form::AltAvg => {
            let mut gaps = Vec::new();
            for j in 0..k {
                for m in j + 1..k {
                    if let (Some(a), Some(b)) = (rate(Scope::Is(j)), rate(Scope::Is(m))) {
                        gaps.push((a - b).abs());
                    }
                }
            }
            if gaps.is_empty() {
                return Err(FairError::TooFewGroups { needed: 2, found: 1 });
            }
            let v = if form == Form::Alt {
                gaps.iter().copied().fold(0.0, f64::max)
            } else {
                gaps.iter().sum::<f64>() / gaps.len() as f64
            };
            (v, gaps.len())
        }
    };
    Ok(MetricResult {
        name: format!("{}.{}", probe.prefix(), form.as_str()),
        kind: Some(probe),
        form: Some(form),
        value,
        skipped_groups: skipped,
        flags: Vec::new(),
        terms,
        wall_time_ns: start.elapsed().as_nanos() as u64,
    })
}

/// Mean of the TPR-gap and FPR-gap terms in the given form. When one term has
/// too few evaluable groups the other is reported alone, with a flag.
pub fn equalized_odds(
    yhat: &[u8],
    y: &[u8],
    partition: &GroupPartition,
    form: Form,
    policy: EmptyCellPolicy,
) -> Result<MetricResult> {
    let start = Instant::now();
    let tpr = probe_metric(ProbeKind::Eopp, yhat, y, partition, form, policy);
    let fpr = probe_metric(ProbeKind::FprBalance, yhat, y, partition, form, policy);
    let (value, mut flags, skipped, terms) = match (tpr, fpr) {
        (Ok(t), Ok(f)) => {
            let mut skipped = t.skipped_groups.clone();
            skipped.extend(f.skipped_groups.iter().copied());
            skipped.sort_unstable();
            skipped.dedup();
            let mut flags = t.flags;
            flags.extend(f.flags);
            (0.5 * (t.value + f.value), flags, skipped, t.terms + f.terms)
        }
        (Ok(t), Err(e)) => {
            let mut flags = t.flags;
            flags.push(format!("fpr term unavailable ({e}); eopp term only"));
            (t.value, flags, t.skipped_groups, t.terms)
        }
        (Err(e), Ok(f)) => {
            let mut flags = f.flags;
            flags.push(format!("tpr term unavailable ({e}); fpr term only"));
            (f.value, flags, f.skipped_groups, f.terms)
        }
        (Err(e), Err(_)) => return Err(e),
    };
    flags.dedup();
    Ok(MetricResult {
        name: format!("eo.{}", form.as_str()),
        kind: None,
        form: Some(form),
        value,
        skipped_groups: skipped,
        flags,
        terms,
        wall_time_ns: start.elapsed().as_nanos() as u64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn part(codes: &[u32], k: usize, privileged: u32) -> GroupPartition {
        GroupPartition::from_codes(codes, k, privileged)
    }

    /// Three groups of five rows with DP rates 0.2, 0.4, 0.6.
    fn three_groups() -> (Vec<u8>, Vec<u8>, GroupPartition) {
        let mut codes = Vec::new();
        let mut yhat = Vec::new();
        for (j, pos) in [(0u32, 1), (1, 2), (2, 3)] {
            for r in 0..5 {
                codes.push(j);
                yhat.push(u8::from(r < pos));
            }
        }
        let y = vec![0; 15];
        (yhat, y, part(&codes, 3, 2))
    }

    #[test]
    fn dp_rate_counts() {
        let p = part(&[0, 0, 0, 0], 2, 1);
        let r = group_rate(ProbeKind::Dp, &[1, 1, 0, 0], &[0, 0, 0, 0], &p, 0).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn eopp_rate_counts() {
        let p = part(&[0, 0, 0], 2, 1);
        let r = group_rate(ProbeKind::Eopp, &[1, 0, 0], &[1, 1, 0], &p, 0).unwrap();
        assert_eq!(r, 0.5);
    }

    #[test]
    fn pp_rate_counts() {
        let p = part(&[0, 0, 0, 0], 2, 1);
        let r = group_rate(ProbeKind::Pp, &[1, 1, 1, 0], &[1, 1, 1, 0], &p, 0).unwrap();
        assert_eq!(r, 1.0);
        assert!(matches!(
            group_rate(ProbeKind::Pp, &[1, 1, 1, 0], &[1, 1, 1, 0], &p, 1),
            Err(FairError::EmptyCell { group: 1 })
        ));
    }

    #[test]
    fn all_forms_on_three_groups() {
        let (yhat, y, p) = three_groups();
        let v = |f| probe_metric(ProbeKind::Dp, &yhat, &y, &p, f, EmptyCellPolicy::Skip).unwrap().value;
        assert!((v(Form::Binarised) - 0.3).abs() < 1e-12);
        assert!((v(Form::Ext) - 0.2).abs() < 1e-12);
        assert!((v(Form::Alt) - 0.4).abs() < 1e-12);
        assert!((v(Form::AltAvg) - 0.8 / 3.0).abs() < 1e-12);
        assert!((v(Form::ExtAvg) - 0.4 / 3.0).abs() < 1e-12);
        assert!(probe_metric(ProbeKind::Dp, &yhat, &y, &p, Form::Orig, EmptyCellPolicy::Skip).is_err());
    }

    #[test]
    fn direct_evaluation_matches_counted() {
        let (yhat, y, p) = three_groups();
        for form in [Form::Binarised, Form::Ext, Form::Alt, Form::ExtAvg, Form::AltAvg] {
            let a = probe_metric(ProbeKind::Dp, &yhat, &y, &p, form, EmptyCellPolicy::Skip).unwrap();
            let b = probe_metric_direct(ProbeKind::Dp, &yhat, &y, &p, form).unwrap();
            assert_eq!(a.value, b.value, "{form}");
            assert_eq!(a.terms, b.terms, "{form}");
        }
    }

    #[test]
    fn identical_rates_give_zero() {
        let codes = [0, 0, 1, 1, 2, 2];
        let p = part(&codes, 3, 0);
        let yhat = [1, 0, 1, 0, 1, 0];
        for form in [Form::Binarised, Form::Ext, Form::Alt, Form::ExtAvg, Form::AltAvg] {
            let m = probe_metric(ProbeKind::Dp, &yhat, &[0; 6], &p, form, EmptyCellPolicy::Skip).unwrap();
            assert_eq!(m.value, 0.0);
        }
    }

    #[test]
    fn binary_attribute_forms_coincide() {
        let p = part(&[0, 0, 0, 1, 1], 2, 1);
        let yhat = [1, 0, 0, 1, 1];
        let y = [0; 5];
        let orig = probe_metric(ProbeKind::Dp, &yhat, &y, &p, Form::Orig, EmptyCellPolicy::Skip).unwrap();
        for form in [Form::Binarised, Form::Alt, Form::AltAvg] {
            let m = probe_metric(ProbeKind::Dp, &yhat, &y, &p, form, EmptyCellPolicy::Skip).unwrap();
            assert_eq!(m.value, orig.value);
        }
    }

    #[test]
    fn empty_cells_skipped_or_rejected() {
        // group 1 has no y=1 rows
        let p = part(&[0, 0, 1, 1, 2, 2], 3, 0);
        let yhat = [1, 0, 1, 1, 0, 0];
        let y = [1, 1, 0, 0, 1, 1];
        let m = probe_metric(ProbeKind::Eopp, &yhat, &y, &p, Form::AltAvg, EmptyCellPolicy::Skip).unwrap();
        assert_eq!(m.skipped_groups, vec![1]);
        assert_eq!(m.terms, 1);
        assert!((m.value - 0.5).abs() < 1e-15);
        assert!(matches!(
            probe_metric(ProbeKind::Eopp, &yhat, &y, &p, Form::Alt, EmptyCellPolicy::Error),
            Err(FairError::EmptyCell { group: 1 })
        ));
    }

    #[test]
    fn too_few_groups() {
        let p = part(&[0, 0, 0], 3, 0);
        assert!(matches!(
            probe_metric(ProbeKind::Dp, &[1, 0, 0], &[0; 3], &p, Form::Alt, EmptyCellPolicy::Skip),
            Err(FairError::TooFewGroups { .. })
        ));
    }

    #[test]
    fn equalized_odds_two_groups() {
        // group 0: TPR 0.8 (4/5), FPR 0.1 (1/10); group 1: TPR 0.6, FPR 0.3
        let mut codes = Vec::new();
        let mut yhat = Vec::new();
        let mut y = Vec::new();
        for (g, tp, fp) in [(0u32, 4, 1), (1, 3, 3)] {
            for r in 0..5 {
                codes.push(g);
                y.push(1);
                yhat.push(u8::from(r < tp));
            }
            for r in 0..10 {
                codes.push(g);
                y.push(0);
                yhat.push(u8::from(r < fp));
            }
        }
        let p = part(&codes, 2, 1);
        let eo = equalized_odds(&yhat, &y, &p, Form::Orig, EmptyCellPolicy::Skip).unwrap();
        assert!((eo.value - 0.2).abs() < 1e-12);
        assert_eq!(eo.name, "eo.orig");
    }

    #[test]
    fn equalized_odds_perfect_and_missing_negatives() {
        let p = part(&[0, 0, 1, 1], 2, 1);
        let y = [1, 0, 1, 0];
        let eo = equalized_odds(&y, &y, &p, Form::Orig, EmptyCellPolicy::Skip).unwrap();
        assert_eq!(eo.value, 0.0);

        // group 1 has no y=0 rows
        let y = [1, 0, 1, 1];
        let yhat = [1, 0, 0, 1];
        let eo = equalized_odds(&yhat, &y, &p, Form::Orig, EmptyCellPolicy::Skip).unwrap();
        assert!((eo.value - 0.5).abs() < 1e-15);
        assert!(eo.flags.iter().any(|f| f.contains("eopp term only")));
    }
}
