//! Empirical study harness: form comparisons, timing, perturbation-based
//! performance deltas, correlations and plot-data tables.

mod tables;
mod timing;
mod underestimation;

pub use tables::{relation_table, write_relation_csv, RelationRow, TradeoffRow, TradeoffTable};
pub use timing::{bench_dataset, factor_value_count, timing_bench, BenchConfig, TimingRecord};
pub use underestimation::{underestimation_from_cv, underestimation_table, UnderRow, UnderSummary, UnderestimationTable};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PerturbationPolicy};
use crate::error::{FairError, Result};
use crate::individual::perturbed_predictions;
use crate::learners::{performance, Classifier, Model, Planted};

/// Pearson correlation from one pass of co-moment updates.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(FairError::LengthMismatch {
            expected: x.len(),
            got: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(FairError::invalid("correlation needs at least 2 samples"));
    }
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        let k = (i + 1) as f64;
        let dx = a - mx;
        let dy = b - my;
        mx += dx / k;
        my += dy / k;
        sxx += dx * (a - mx);
        syy += dy * (b - my);
        sxy += dx * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(FairError::Undefined("zero variance".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub metric: String,
    pub against: String,
    pub r: Option<f64>,
    pub samples: usize,
    pub status: String,
}

pub(crate) const MIN_CORRELATION_SAMPLES: usize = 3;

/// Pearson r of `a` against `b`, over positions where both are present.
pub fn correlate(metric: &str, a: &[Option<f64>], against: &str, b: &[Option<f64>]) -> CorrelationRow {
    let (xs, ys): (Vec<f64>, Vec<f64>) = a
        .iter()
        .zip(b)
        .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
        .unzip();
    let samples = xs.len();
    let (r, status) = if samples < MIN_CORRELATION_SAMPLES {
        (None, format!("undefined: {samples} paired samples"))
    } else {
        match pearson(&xs, &ys) {
            Ok(r) => (Some(r), "ok".to_string()),
            Err(e) => (None, format!("undefined: {e}")),
        }
    };
    CorrelationRow {
        metric: metric.to_string(),
        against: against.to_string(),
        r,
        samples,
        status,
    }
}

pub fn write_correlation_csv<W: std::io::Write>(rows: &[CorrelationRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["metric", "against", "samples", "r", "status"])?;
    for r in rows {
        out.write_record([
            r.metric.clone(),
            r.against.clone(),
            r.samples.to_string(),
            r.r.map(|v| v.to_string()).unwrap_or_default(),
            r.status.clone(),
        ])?;
    }
    out.flush().map_err(|e| FairError::io("<csv output>", e))?;
    Ok(())
}

/// Every metric series against every delta series.
pub fn correlation_table(
    metrics: &BTreeMap<String, Vec<Option<f64>>>,
    deltas: &BTreeMap<String, Vec<Option<f64>>>,
) -> Vec<CorrelationRow> {
    let mut rows = Vec::new();
    for (m, a) in metrics {
        for (d, b) in deltas {
            rows.push(correlate(m, a, d, b));
        }
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaPerformance {
    pub accuracy: f64,
    pub f1: f64,
    pub gmean: f64,
    /// Discriminative risk of the same perturbation.
    pub dr: f64,
    pub flags: Vec<String>,
}

/// Absolute change in performance when only the sensitive inputs are
/// perturbed. The accuracy change and DR are ratios of integer counts over
/// the same n, so `accuracy <= dr` holds exactly.
pub fn delta_performance(
    model: &dyn Classifier,
    dataset: &Dataset,
    seed: u64,
    policy: PerturbationPolicy,
) -> Result<DeltaPerformance> {
    let pp = perturbed_predictions(model, dataset, seed, policy)?;
    let y = &dataset.labels;
    let correct = |p: &[u8]| p.iter().zip(y).filter(|(a, b)| a == b).count();
    let (c0, c1) = (correct(&pp.original), correct(&pp.perturbed));
    let n = y.len() as f64;
    let before = performance(&pp.original, y)?;
    let after = performance(&pp.perturbed, y)?;
    let mut flags = pp.flags.clone();
    flags.extend(before.flags.iter().map(|f| format!("original: {f}")));
    flags.extend(after.flags.iter().map(|f| format!("perturbed: {f}")));
    Ok(DeltaPerformance {
        accuracy: c0.abs_diff(c1) as f64 / n,
        f1: (before.f1 - after.f1).abs(),
        gmean: (before.gmean - after.gmean).abs(),
        dr: pp.disagreements() as f64 / n,
        flags,
    })
}

/// Models `yhat = 1` iff `x[feature] < t_s(a)` with
/// `t_s(a) = (1 - s)·mean(rates) + s·rates[a]`, one per strength `s`.
/// Strength 0 ignores the attribute; strength 1 reproduces `x < rates[a]`.
pub fn dependence_graded_family(
    dataset: &Dataset,
    feature: usize,
    attribute: usize,
    rates: &[f64],
    strengths: &[f64],
) -> Result<Vec<(f64, Model)>> {
    let spec = dataset
        .attributes
        .get(attribute)
        .ok_or_else(|| FairError::invalid(format!("attribute index {attribute} out of range")))?;
    if rates.len() != spec.n_values() {
        return Err(FairError::LengthMismatch {
            expected: spec.n_values(),
            got: rates.len(),
        });
    }
    if feature >= dataset.features.n_cols() {
        return Err(FairError::invalid(format!("feature index {feature} out of range")));
    }
    let mean = rates.iter().sum::<f64>() / rates.len() as f64;
    Ok(strengths
        .iter()
        .map(|&s| {
            let thresholds = rates.iter().map(|&r| (1.0 - s) * mean + s * r).collect();
            let model = Model::Planted(Planted {
                feature,
                attribute_column: dataset.features.n_cols() + attribute,
                n_values: spec.n_values(),
                thresholds,
            });
            (s, model)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticConfig};

    fn two_pass(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let mx = x.iter().sum::<f64>() / n;
        let my = y.iter().sum::<f64>() / n;
        let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
        let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
        sxy / (sxx * syy).sqrt()
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 4.0, 7.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &neg).unwrap() + 1.0).abs() < 1e-15);
        let y = [0.3, -1.0, 2.5, 0.1];
        assert!((pearson(&x, &y).unwrap() - two_pass(&x, &y)).abs() < 1e-12);
        assert!(pearson(&x, &[1.0; 4]).is_err());
    }

    #[test]
    fn correlation_flags_constant_series() {
        let a = vec![Some(1.0), Some(2.0), Some(3.0)];
        let c = vec![Some(5.0); 3];
        let row = correlate("m", &a, "d", &c);
        assert!(row.r.is_none());
        assert!(row.status.starts_with("undefined"));
        let row = correlate("m", &a, "d", &[Some(1.0), None, Some(2.0)]);
        assert_eq!(row.samples, 2);
        assert!(row.r.is_none());
    }

    #[test]
    fn graded_family_tracks_dependence() {
        let cfg = SyntheticConfig {
            n: 400,
            attribute_sizes: vec![2],
            label_rates: Some(vec![0.7, 0.3]),
            label_noise: 0.0,
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        let family = dependence_graded_family(&ds, 0, 0, &[0.7, 0.3], &[0.0, 0.5, 1.0]).unwrap();
        let deltas: Vec<DeltaPerformance> = family
            .iter()
            .map(|(_, m)| delta_performance(m, &ds, 1, PerturbationPolicy::FlipAll).unwrap())
            .collect();
        assert_eq!(deltas[0].dr, 0.0);
        assert!(deltas[0].dr < deltas[1].dr && deltas[1].dr < deltas[2].dr);
        for d in &deltas {
            assert!(d.accuracy <= d.dr);
        }
    }
}
