use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::Result;
use crate::group::{probe_metric, EmptyCellPolicy, Form, ProbeKind};
use crate::learners::{cross_validate, CvResult, LearnerId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderRow {
    pub learner: String,
    pub fold: usize,
    pub metric: String,
    pub form: Form,
    pub value: Option<f64>,
    pub status: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderSummary {
    pub learner: String,
    pub metric: String,
    /// Folds where both the binarised and alt forms are defined.
    pub comparable_folds: usize,
    pub binarised_below_alt: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnderestimationTable {
    pub attribute: String,
    pub rows: Vec<UnderRow>,
    pub summary: Vec<UnderSummary>,
}

/// Every probe in every form on each fold's held-out predictions.
pub fn underestimation_from_cv(dataset: &Dataset, attribute: usize, cvs: &[CvResult]) -> UnderestimationTable {
    let base = dataset.partition(attribute);
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for cv in cvs {
        let learner = cv.learner.to_string();
        for probe in ProbeKind::ALL {
            let mut comparable = 0;
            let mut below = 0;
            for fold in &cv.folds {
                let partition = base.restrict(&fold.test_rows);
                let y: Vec<u8> = fold.test_rows.iter().map(|&r| dataset.labels[r]).collect();
                let mut binarised = None;
                let mut alt = None;
                for form in Form::ALL {
                    let (value, status) =
                        match probe_metric(probe, &fold.hard, &y, &partition, form, EmptyCellPolicy::Skip) {
                            Ok(m) => (Some(m.value), "ok".to_string()),
                            Err(e) => (None, format!("skipped: {e}")),
                        };
                    match form {
                        Form::Binarised => binarised = value,
                        Form::Alt => alt = value,
                        _ => {}
                    }
                    rows.push(UnderRow {
                        learner: learner.clone(),
                        fold: fold.fold,
                        metric: probe.prefix().to_string(),
                        form,
                        value,
                        status,
                    });
                }
                if let (Some(b), Some(a)) = (binarised, alt) {
                    comparable += 1;
                    below += usize::from(b < a);
                }
            }
            summary.push(UnderSummary {
                learner: learner.clone(),
                metric: probe.prefix().to_string(),
                comparable_folds: comparable,
                binarised_below_alt: below,
            });
        }
    }
    UnderestimationTable {
        attribute: dataset.attributes[attribute].name.clone(),
        rows,
        summary,
    }
}

pub fn underestimation_table(
    dataset: &Dataset,
    attribute: usize,
    learners: &[LearnerId],
    k: usize,
    seed: u64,
) -> Result<UnderestimationTable> {
    let cvs = learners
        .iter()
        .map(|&l| cross_validate(dataset, l, k, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(underestimation_from_cv(dataset, attribute, &cvs))
}

impl UnderestimationTable {
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["learner", "fold", "metric", "form", "value", "status"])?;
        for r in &self.rows {
            out.write_record([
                r.learner.clone(),
                r.fold.to_string(),
                r.metric.clone(),
                r.form.to_string(),
                r.value.map(|v| v.to_string()).unwrap_or_default(),
                r.status.clone(),
            ])?;
        }
        out.flush().map_err(|e| crate::error::FairError::io("<csv output>", e))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticConfig};

    #[test]
    fn binary_attribute_makes_binarised_equal_alt() {
        let cfg = SyntheticConfig {
            n: 200,
            attribute_sizes: vec![2],
            ..Default::default()
        };
        let ds = generate(&cfg).unwrap();
        let t = underestimation_table(&ds, 0, &[LearnerId::Stump], 5, 1).unwrap();
        for fold in 0..5 {
            let get = |form: Form| {
                t.rows
                    .iter()
                    .find(|r| r.fold == fold && r.metric == "dp" && r.form == form)
                    .and_then(|r| r.value)
            };
            assert_eq!(get(Form::Binarised), get(Form::Alt));
        }
        assert!(t.summary.iter().all(|s| s.binarised_below_alt == 0));
        assert_eq!(t.rows.len(), 5 * ProbeKind::ALL.len() * Form::ALL.len());
    }
}
