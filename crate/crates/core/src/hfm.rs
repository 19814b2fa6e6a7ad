//! Harmonic fairness via manifold: how between-group set distances change
//! when labels are replaced by predictions.
//!
//! Points are the scaled non-sensitive features plus one outcome coordinate
//! (label or prediction, times `outcome_weight`). Exact evaluation costs
//! Θ(n²) distance evaluations per attribute.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, GroupPartition};
use crate::error::{FairError, Result};
use crate::seeded_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HfmVersion {
    Prev,
    Max,
    Avg,
}

impl HfmVersion {
    pub const ALL: [HfmVersion; 3] = [HfmVersion::Prev, HfmVersion::Max, HfmVersion::Avg];

    pub fn as_str(self) -> &'static str {
        match self {
            HfmVersion::Prev => "prev",
            HfmVersion::Max => "max",
            HfmVersion::Avg => "avg",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HfmConfig {
    pub outcome_weight: f64,
}

impl Default for HfmConfig {
    fn default() -> Self {
        HfmConfig { outcome_weight: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HfmResult {
    pub version: HfmVersion,
    /// prev: g_f/g_y - 1; max and avg: ln(g_f/g_y)
    pub value: f64,
    pub g_f: f64,
    pub g_y: f64,
    pub exact: bool,
    /// Anchor budget per group when approximated.
    pub budget: Option<usize>,
    pub distance_evaluations: u64,
    pub flags: Vec<String>,
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn directed_maxmin(from: &[Vec<f64>], to: &[Vec<f64>]) -> f64 {
    from.iter()
        .map(|p| to.iter().map(|q| euclidean(p, q)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Symmetric max-min (Hausdorff) distance between two point sets.
pub fn bidirectional_maxmin(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(FairError::invalid("max-min distance needs two nonempty sets"));
    }
    Ok(directed_maxmin(a, b).max(directed_maxmin(b, a)))
}

/// Features plus the two candidate outcome coordinates.
struct Points<'a> {
    dataset: &'a Dataset,
    y: Vec<f64>,
    f: Vec<f64>,
}

impl<'a> Points<'a> {
    fn new(dataset: &'a Dataset, yhat: &[u8], cfg: &HfmConfig) -> Result<Self> {
        if yhat.len() != dataset.n_rows() {
            return Err(FairError::LengthMismatch {
                expected: dataset.n_rows(),
                got: yhat.len(),
            });
        }
        if !(cfg.outcome_weight >= 0.0 && cfg.outcome_weight.is_finite()) {
            return Err(FairError::invalid("outcome weight must be finite and non-negative"));
        }
        let w = cfg.outcome_weight;
        Ok(Points {
            dataset,
            y: dataset.labels.iter().map(|&l| l as f64 * w).collect(),
            f: yhat.iter().map(|&p| p as f64 * w).collect(),
        })
    }

    /// Distance from `i` to the nearest row outside its group, under labels
    /// and under predictions.
    fn nearest_outside(&self, i: usize, codes: &[u32]) -> (f64, f64) {
        let x = &self.dataset.features;
        let xi = x.row(i);
        let (mut best_y, mut best_f) = (f64::INFINITY, f64::INFINITY);
        for r in 0..codes.len() {
            if codes[r] == codes[i] {
                continue;
            }
            let base: f64 = xi.iter().zip(x.row(r)).map(|(a, b)| (a - b) * (a - b)).sum();
            let dy = self.y[i] - self.y[r];
            let df = self.f[i] - self.f[r];
            best_y = best_y.min(base + dy * dy);
            best_f = best_f.min(base + df * df);
        }
        (best_y.sqrt(), best_f.sqrt())
    }
}

/// Per-attribute aggregates over the anchors of every group.
struct AttributeTerms {
    max_y: f64,
    max_f: f64,
    avg_y: f64,
    avg_f: f64,
    evaluations: u64,
}

fn attribute_terms(points: &Points, partition: &GroupPartition, anchors: &[Vec<usize>]) -> Result<AttributeTerms> {
    let nonempty = partition.nonempty_groups();
    if nonempty < 2 {
        return Err(FairError::TooFewGroups {
            needed: 2,
            found: nonempty,
        });
    }
    let flat: Vec<usize> = anchors.iter().flatten().copied().collect();
    let mins: Vec<(f64, f64)> = flat
        .par_iter()
        .map(|&i| points.nearest_outside(i, &partition.codes))
        .collect();
    let n = partition.n_rows() as f64;
    let mut terms = AttributeTerms {
        max_y: 0.0,
        max_f: 0.0,
        avg_y: 0.0,
        avg_f: 0.0,
        evaluations: 0,
    };
    let mut offset = 0;
    for (j, group_anchors) in anchors.iter().enumerate() {
        let m = group_anchors.len();
        if m == 0 {
            continue;
        }
        let chunk = &mins[offset..offset + m];
        offset += m;
        let (mut sum_y, mut sum_f) = (0.0, 0.0);
        for &(dy, df) in chunk {
            terms.max_y = terms.max_y.max(dy);
            terms.max_f = terms.max_f.max(df);
            sum_y += dy;
            sum_f += df;
        }
        let size = partition.group(j).len();
        let outside = (partition.n_rows() - size) as u64;
        terms.evaluations += m as u64 * outside;
        if m == size {
            terms.avg_y += sum_y;
            terms.avg_f += sum_f;
        } else {
            let scale = size as f64 / m as f64;
            terms.avg_y += sum_y * scale;
            terms.avg_f += sum_f * scale;
        }
    }
    terms.avg_y /= n;
    terms.avg_f /= n;
    Ok(terms)
}

/// Anchors per group: the whole group in row order when `budget` covers it,
/// otherwise the first `budget` rows of a seeded permutation, so that larger
/// budgets give supersets.
fn anchors(partition: &GroupPartition, budget: Option<usize>, seed: u64, attribute: usize) -> Vec<Vec<usize>> {
    partition
        .groups
        .iter()
        .enumerate()
        .map(|(j, g)| match budget {
            Some(m) if m < g.len() => {
                let mut rng = seeded_rng(seed, 0x6866_6d00 ^ ((attribute as u64) << 16) ^ j as u64);
                let mut perm = g.clone();
                perm.shuffle(&mut rng);
                perm.truncate(m);
                perm
            }
            _ => g.clone(),
        })
        .collect()
}

fn finish(
    version: HfmVersion,
    g_f: f64,
    g_y: f64,
    budget: Option<usize>,
    exact: bool,
    evaluations: u64,
    flags: Vec<String>,
) -> Result<HfmResult> {
    if g_y == 0.0 {
        return Err(FairError::ZeroDenominator(
            "label-augmented groups coincide (g_y = 0); every point has a zero-distance counterpart in another group"
                .into(),
        ));
    }
    let value = match version {
        HfmVersion::Prev => g_f / g_y - 1.0,
        _ => {
            if g_f == 0.0 {
                return Err(FairError::Undefined(
                    "prediction-augmented groups coincide (g_f = 0); log ratio is unbounded".into(),
                ));
            }
            (g_f / g_y).ln()
        }
    };
    Ok(HfmResult {
        version,
        value,
        g_f,
        g_y,
        exact,
        budget,
        distance_evaluations: evaluations,
        flags,
    })
}

fn compute(
    dataset: &Dataset,
    yhat: &[u8],
    attributes: &[usize],
    version: HfmVersion,
    budget: Option<usize>,
    seed: u64,
    cfg: &HfmConfig,
) -> Result<HfmResult> {
    if let Some(0) = budget {
        return Err(FairError::invalid("approximation budget must be at least 1"));
    }
    if attributes.is_empty() {
        return Err(FairError::invalid("at least one sensitive attribute is required"));
    }
    let points = Points::new(dataset, yhat, cfg)?;
    if version == HfmVersion::Prev {
        if attributes.len() != 1 {
            return Err(FairError::invalid("hfm.prev takes exactly one attribute"));
        }
        let spec = &dataset.attributes[attributes[0]];
        if spec.n_values() != 2 {
            return Err(FairError::invalid(format!(
                "hfm.prev needs a two-valued attribute; {} has {} values",
                spec.name,
                spec.n_values()
            )));
        }
    }
    let mut g_y = 0.0f64;
    let mut g_f = 0.0f64;
    let mut evaluations = 0;
    let mut flags = Vec::new();
    for &a in attributes {
        if a >= dataset.n_attributes() {
            return Err(FairError::invalid(format!("attribute index {a} out of range")));
        }
        let partition = dataset.partition(a);
        if !partition.empty_groups().is_empty() {
            flags.push(format!(
                "{}: empty groups {:?} skipped",
                dataset.attributes[a].name,
                partition.empty_groups()
            ));
        }
        let t = attribute_terms(&points, &partition, &anchors(&partition, budget, seed, a))?;
        evaluations += t.evaluations;
        match version {
            HfmVersion::Prev | HfmVersion::Max => {
                g_y = g_y.max(t.max_y);
                g_f = g_f.max(t.max_f);
            }
            HfmVersion::Avg => {
                g_y += t.avg_y;
                g_f += t.avg_f;
            }
        }
    }
    if version == HfmVersion::Avg {
        g_y /= attributes.len() as f64;
        g_f /= attributes.len() as f64;
    }
    let exact = match budget {
        None => true,
        Some(m) => attributes
            .iter()
            .all(|&a| dataset.partition(a).groups.iter().all(|g| g.len() <= m)),
    };
    finish(version, g_f, g_y, budget, exact, evaluations, flags)
}

/// Ratio of prediction- to label-augmented max-min distance between the two
/// groups of a binary attribute, minus one.
pub fn hfm_prev(dataset: &Dataset, yhat: &[u8], attribute: usize, cfg: &HfmConfig) -> Result<HfmResult> {
    compute(dataset, yhat, &[attribute], HfmVersion::Prev, None, 0, cfg)
}

/// Log ratio of the largest directed max-min distance from any group to its
/// complement, over all listed attributes.
pub fn hfm_max(dataset: &Dataset, yhat: &[u8], attributes: &[usize], cfg: &HfmConfig) -> Result<HfmResult> {
    compute(dataset, yhat, attributes, HfmVersion::Max, None, 0, cfg)
}

/// Log ratio of the mean nearest-complement distance, averaged over attributes.
pub fn hfm_avg(dataset: &Dataset, yhat: &[u8], attributes: &[usize], cfg: &HfmConfig) -> Result<HfmResult> {
    compute(dataset, yhat, attributes, HfmVersion::Avg, None, 0, cfg)
}

/// Anchor-subsampled estimate: only `budget` seeded anchors per group are
/// evaluated, each against the full complement. Budgets covering every group
/// reproduce the exact result.
pub fn hfm_approx(
    dataset: &Dataset,
    yhat: &[u8],
    attributes: &[usize],
    version: HfmVersion,
    budget: usize,
    seed: u64,
    cfg: &HfmConfig,
) -> Result<HfmResult> {
    let mut r = compute(dataset, yhat, attributes, version, Some(budget), seed, cfg)?;
    if !r.exact {
        r.flags.push("anchor-subsampled estimate".into());
    }
    Ok(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{FeatureMatrix, SensitiveAttributeSpec};

    #[test]
    fn maxmin_examples() {
        let a = vec![vec![0.0]];
        let b = vec![vec![0.3], vec![0.9]];
        assert!((bidirectional_maxmin(&a, &b).unwrap() - 0.9).abs() < 1e-15);
        assert_eq!(bidirectional_maxmin(&a, &b).unwrap(), bidirectional_maxmin(&b, &a).unwrap());
        assert_eq!(bidirectional_maxmin(&b, &b.clone()).unwrap(), 0.0);
        assert!(bidirectional_maxmin(&a, &[]).is_err());
    }

    fn four_points() -> Dataset {
        Dataset::new(
            FeatureMatrix::from_rows(&[vec![0.0], vec![0.1], vec![0.5], vec![0.6]]),
            vec!["x".into()],
            vec![SensitiveAttributeSpec::numbered("s", 2, 0)],
            vec![vec![0, 0, 1, 1]],
            vec![0, 1, 0, 1],
        )
        .unwrap()
    }

    #[test]
    fn identical_outcomes_give_zero() {
        let ds = four_points();
        let y = ds.labels.clone();
        let cfg = HfmConfig::default();
        assert_eq!(hfm_prev(&ds, &y, 0, &cfg).unwrap().value, 0.0);
        assert_eq!(hfm_max(&ds, &y, &[0], &cfg).unwrap().value, 0.0);
        assert_eq!(hfm_avg(&ds, &y, &[0], &cfg).unwrap().value, 0.0);
    }

    #[test]
    fn flipping_one_group_increases_separation() {
        let ds = four_points();
        // group 1 predictions inverted relative to labels
        let r = hfm_prev(&ds, &[0, 1, 1, 0], 0, &HfmConfig::default()).unwrap();
        assert!(r.value > 0.0);
        let m = hfm_max(&ds, &[0, 1, 1, 0], &[0], &HfmConfig::default()).unwrap();
        assert!((m.value - (1.0 + r.value).ln()).abs() < 1e-12);
    }

    #[test]
    fn prev_requires_binary_attribute() {
        let ds = Dataset::new(
            FeatureMatrix::from_rows(&[vec![0.0], vec![0.5], vec![1.0]]),
            vec!["x".into()],
            vec![SensitiveAttributeSpec::numbered("s", 3, 0)],
            vec![vec![0, 1, 2]],
            vec![0, 1, 0],
        )
        .unwrap();
        assert!(hfm_prev(&ds, &[0, 1, 0], 0, &HfmConfig::default()).is_err());
    }

    #[test]
    fn coincident_groups_are_an_error() {
        let ds = Dataset::new(
            FeatureMatrix::from_rows(&[vec![0.2], vec![0.2]]),
            vec!["x".into()],
            vec![SensitiveAttributeSpec::numbered("s", 2, 0)],
            vec![vec![0, 1]],
            vec![1, 1],
        )
        .unwrap();
        assert!(matches!(
            hfm_prev(&ds, &[1, 0], 0, &HfmConfig::default()),
            Err(FairError::ZeroDenominator(_))
        ));
    }

    #[test]
    fn full_budget_is_exact() {
        let ds = four_points();
        let yhat = [1, 1, 0, 0];
        let cfg = HfmConfig::default();
        for v in [HfmVersion::Max, HfmVersion::Avg] {
            let exact = compute(&ds, &yhat, &[0], v, None, 0, &cfg).unwrap();
            let approx = hfm_approx(&ds, &yhat, &[0], v, 10, 3, &cfg).unwrap();
            assert_eq!(exact.value.to_bits(), approx.value.to_bits());
            assert!(approx.exact);
        }
    }
}
