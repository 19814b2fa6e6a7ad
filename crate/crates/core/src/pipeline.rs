//! Command orchestration: validation, audits and the experiment pipeline.
//!
//! An audit builds one job per (metric id, attribute) and runs the jobs in
//! parallel. A failing job becomes an `error` row; the other rows are still
//! computed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{count_mismatches, ingest_unchecked};
use crate::data::{Dataset, DatasetManifest, GroupPartition, PerturbationPolicy, DEFAULT_SUPER_CAP};
use crate::error::{FairError, Result};
use crate::experiments::{
    correlation_table, delta_performance, relation_table, timing_bench, underestimation_from_cv, write_correlation_csv,
    write_relation_csv, BenchConfig, CorrelationRow, RelationRow, TimingRecord, TradeoffRow, TradeoffTable,
    UnderestimationTable,
};
use crate::group::{
    absolute_loss, bounded_group_loss, conditional_statistical_parity, disparate_impact, disparate_treatment,
    equalized_odds, gamma_subgroup_fairness, minimax_gap, probe_metric, EmptyCellPolicy, Form, MetricResult,
    ProbeKind, DEFAULT_TAU,
};
use crate::hfm::{hfm_approx, hfm_avg, hfm_max, hfm_prev, HfmConfig, HfmResult, HfmVersion};
use crate::individual::{general_entropy_index, lipschitz_audit, perturbed_predictions, theil_index, LipschitzConfig};
use crate::intersectional::{
    calibration_by_group, empirical_differential_fairness, intersectional_disparate_impact, minmax_ratio,
    multiaccuracy_check, worst_case_log_loss, RatioKind, DEFAULT_BINS, DEFAULT_KAPPA,
};
use crate::learners::{ber_audit, cross_validate, performance, CvResult, LearnerId};
use crate::predictions::PredictionSet;
use crate::procedural::{ablate, pf_accuracy, pf_apriori, pf_disparity, Ablation, JudgmentMatrix};
use crate::report::{
    CvSummary, DatasetSummary, ExperimentReport, FairnessReport, MetricRow, PredictionSummary, Status,
    ValidationReport, TOOL,
};

// ---------------------------------------------------------------- validate

/// Ingests the manifest's data and compares it with the expected counts.
pub fn validate_manifest(manifest: &DatasetManifest) -> Result<(Dataset, ValidationReport)> {
    let ds = ingest_unchecked(manifest)?;
    let mismatches = manifest
        .expected_counts
        .as_ref()
        .map(|e| count_mismatches(&ds, manifest, e))
        .unwrap_or_default();
    let report = ValidationReport {
        tool: TOOL.to_string(),
        dataset: DatasetSummary::of(&ds),
        constant_columns: ds.constant_columns.clone(),
        expected: manifest.expected_counts.clone(),
        matches: mismatches.is_empty(),
        mismatches,
    };
    Ok((ds, report))
}

// ---------------------------------------------------------------- catalog

const PER_ATTRIBUTE: [&str; 16] = [
    "di",
    "dt",
    "csp",
    "bgl",
    "gammasf",
    "minimax_gap",
    "hfm.prev",
    "edf.epsilon",
    "dpr",
    "eoppr",
    "cspr",
    "gbr_int",
    "idi",
    "multiacc.max_residual",
    "calib.max_gap",
    "worst_loss",
];

const DATASET_LEVEL: [&str; 9] = [
    "theil",
    "dr",
    "lipschitz.constant",
    "lipschitz.violations",
    "hfm.max",
    "hfm.avg",
    "pf.apriori",
    "pf.accuracy",
    "pf.disparity",
];

pub fn gei_id(alpha: f64) -> String {
    format!("gei({alpha})")
}

/// Every metric id an audit can emit. `--metrics` tokens select ids equal to
/// the token or starting with `token.` or `token(`.
pub fn metric_catalog(alpha: f64) -> Vec<String> {
    let mut ids = Vec::new();
    let prefixes = ProbeKind::ALL.iter().map(|p| p.prefix()).chain(["eo"]);
    for p in prefixes {
        for f in Form::ALL {
            ids.push(format!("{p}.{f}"));
        }
    }
    ids.extend(PER_ATTRIBUTE.iter().map(|s| s.to_string()));
    ids.push("ber".into());
    ids.push(gei_id(alpha));
    ids.extend(DATASET_LEVEL.iter().map(|s| s.to_string()));
    ids
}

fn token_selects(token: &str, id: &str) -> bool {
    id == token
        || id
            .strip_prefix(token)
            .is_some_and(|rest| rest.starts_with('.') || rest.starts_with('('))
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetricSelection {
    /// None selects everything.
    pub tokens: Option<Vec<String>>,
}

impl MetricSelection {
    /// Rejects tokens that select nothing in the catalog.
    pub fn parse(list: &str, alpha: f64) -> Result<Self> {
        let catalog = metric_catalog(alpha);
        let tokens: Vec<String> = list
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(String::from)
            .collect();
        if tokens.is_empty() {
            return Err(FairError::invalid("empty metric selection"));
        }
        for t in &tokens {
            if t != "all" && !catalog.iter().any(|id| token_selects(t, id)) {
                return Err(FairError::UnknownMetric(t.clone()));
            }
        }
        if tokens.iter().any(|t| t == "all") {
            return Ok(MetricSelection { tokens: None });
        }
        Ok(MetricSelection { tokens: Some(tokens) })
    }

    pub fn selects(&self, id: &str) -> bool {
        match &self.tokens {
            None => true,
            Some(tokens) => tokens.iter().any(|t| token_selects(t, id)),
        }
    }
}

pub fn parse_forms(list: &str) -> Result<Vec<Form>> {
    let mut forms = Vec::new();
    for t in list.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        let f = Form::parse(t).ok_or_else(|| FairError::invalid(format!("unknown form `{t}`")))?;
        if !forms.contains(&f) {
            forms.push(f);
        }
    }
    if forms.is_empty() {
        return Err(FairError::invalid("empty form selection"));
    }
    forms.sort();
    Ok(forms)
}

// ---------------------------------------------------------------- audit

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditConfig {
    pub seed: u64,
    pub k: usize,
    /// The first learner produces the audited predictions when none are
    /// supplied; all of them are tried by the BER audit and minimax gap.
    pub learners: Vec<LearnerId>,
    pub metrics: MetricSelection,
    pub forms: Vec<Form>,
    /// Anchors per group for HFM; exact HFM is used when unset and n is at
    /// most `hfm_exact_max_n`.
    pub approx_budget: Option<usize>,
    pub hfm_exact_max_n: usize,
    pub kappa: f64,
    /// GEI exponent.
    pub alpha: f64,
    /// BER threshold.
    pub epsilon: f64,
    pub tau: f64,
    /// Bounded group loss threshold.
    pub xi: f64,
    pub multiacc_alpha: f64,
    pub calibration_bins: usize,
    pub lipschitz_epsilon: f64,
    pub lipschitz_delta: f64,
    pub perturbation: PerturbationPolicy,
    pub record_timings: bool,
}

pub const DEFAULT_APPROX_BUDGET: usize = 256;

impl Default for AuditConfig {
    fn default() -> Self {
        AuditConfig {
            seed: 0,
            k: 5,
            learners: vec![LearnerId::Bagging { replicates: 20 }],
            metrics: MetricSelection::default(),
            forms: Form::ALL.to_vec(),
            approx_budget: None,
            hfm_exact_max_n: 4000,
            kappa: DEFAULT_KAPPA,
            alpha: 2.0,
            epsilon: 0.1,
            tau: DEFAULT_TAU,
            xi: 0.3,
            multiacc_alpha: 0.05,
            calibration_bins: DEFAULT_BINS,
            lipschitz_epsilon: 1.0,
            lipschitz_delta: 0.05,
            perturbation: PerturbationPolicy::FlipAll,
            record_timings: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Computed {
    value: f64,
    flags: Vec<String>,
    terms: Option<u64>,
    details: Option<serde_json::Value>,
}

impl Computed {
    fn new(value: f64) -> Self {
        Computed {
            value,
            flags: Vec::new(),
            terms: None,
            details: None,
        }
    }

    fn flags(mut self, flags: impl IntoIterator<Item = String>) -> Self {
        self.flags.extend(flags);
        self
    }

    fn details(mut self, d: serde_json::Value) -> Self {
        self.details = Some(d);
        self
    }
}

enum Outcome {
    Done(Computed),
    Skip(String),
}

type Job<'a> = Box<dyn Fn() -> Result<Outcome> + Send + Sync + 'a>;

struct Task<'a> {
    id: String,
    attribute: Option<String>,
    job: Job<'a>,
}

fn group_names(partition: &GroupPartition, spec_values: &[String], groups: &[usize]) -> Vec<String> {
    debug_assert!(groups.iter().all(|&g| g < partition.n_groups()));
    groups.iter().map(|&g| spec_values[g].clone()).collect()
}

fn from_metric(m: MetricResult, values: &[String], partition: &GroupPartition) -> Outcome {
    let mut flags = m.flags;
    if !m.skipped_groups.is_empty() {
        flags.push(format!(
            "groups without conditioning rows skipped: {}",
            group_names(partition, values, &m.skipped_groups).join(", ")
        ));
    }
    Outcome::Done(Computed {
        terms: Some(m.terms as u64),
        ..Computed::new(m.value).flags(flags)
    })
}

fn from_hfm(r: HfmResult) -> Outcome {
    let details = serde_json::json!({
        "exact": r.exact,
        "budget": r.budget,
        "g_f": r.g_f,
        "g_y": r.g_y,
    });
    Outcome::Done(Computed {
        terms: Some(r.distance_evaluations),
        ..Computed::new(r.value).flags(r.flags).details(details)
    })
}

fn json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

/// Held-out DR: each fold model against a perturbation of its own test rows.
pub fn out_of_fold_dr(cv: &CvResult, dataset: &Dataset, seed: u64, policy: PerturbationPolicy) -> Result<(f64, Vec<String>)> {
    let mut disagreements = 0usize;
    let mut flags = Vec::new();
    for fold in &cv.folds {
        let sub = dataset.subset(&fold.test_rows);
        let pp = perturbed_predictions(&fold.model, &sub, seed, policy)?;
        disagreements += pp.disagreements();
        flags.extend(pp.flags.into_iter().map(|f| format!("fold {}: {f}", fold.fold)));
    }
    Ok((disagreements as f64 / dataset.n_rows() as f64, flags))
}

struct AuditContext<'a> {
    cfg: &'a AuditConfig,
    /// The dataset the models were trained on.
    model_ds: &'a Dataset,
    /// `model_ds` plus the super attribute, when there is one.
    groups_ds: &'a Dataset,
    partitions: Vec<GroupPartition>,
    preds: &'a PredictionSet,
    cvs: &'a [CvResult],
    judgments: Option<&'a JudgmentMatrix>,
    ablation: Option<&'a Result<(Ablation, Ablation)>>,
    used_features: Vec<String>,
}

impl<'a> AuditContext<'a> {
    fn scores(&self) -> Result<&'a [f64]> {
        self.preds.scores.as_deref().ok_or(FairError::MissingScores)
    }

    fn attribute_tasks(&'a self, a: usize, tasks: &mut Vec<Task<'a>>) {
        let cfg = self.cfg;
        let ds = self.groups_ds;
        let name = ds.attributes[a].name.clone();
        let values = &ds.attributes[a].values;
        let part = &self.partitions[a];
        let yhat = &self.preds.hard[..];
        let y = &ds.labels[..];
        let label = name.clone();
        let mut push = |id: String, job: Job<'a>| {
            tasks.push(Task {
                id,
                attribute: Some(name.clone()),
                job,
            })
        };
        for probe in ProbeKind::ALL {
            for &form in &cfg.forms {
                push(
                    format!("{}.{form}", probe.prefix()),
                    Box::new(move || {
                        if form == Form::Orig && part.n_groups() != 2 {
                            return Ok(Outcome::Skip("orig form needs a two-valued attribute".into()));
                        }
                        let m = probe_metric(probe, yhat, y, part, form, EmptyCellPolicy::Skip)?;
                        Ok(from_metric(m, values, part))
                    }),
                );
            }
        }
        for &form in &cfg.forms {
            push(
                format!("eo.{form}"),
                Box::new(move || {
                    if form == Form::Orig && part.n_groups() != 2 {
                        return Ok(Outcome::Skip("orig form needs a two-valued attribute".into()));
                    }
                    let m = equalized_odds(yhat, y, part, form, EmptyCellPolicy::Skip)?;
                    Ok(from_metric(m, values, part))
                }),
            );
        }
        push(
            "di".into(),
            Box::new(move || {
                let r = disparate_impact(yhat, part, cfg.tau)?;
                let details = serde_json::json!({
                    "passes": r.passes,
                    "tau": r.tau,
                    "rate_marginalised": r.rate_marginalised,
                    "rate_privileged": r.rate_privileged,
                    "rule": "passes when ratio >= tau",
                });
                Ok(Outcome::Done(Computed::new(r.ratio).details(details)))
            }),
        );
        push(
            "dt".into(),
            Box::new(move || {
                let m = disparate_treatment(yhat, y, part, EmptyCellPolicy::Skip)?;
                Ok(from_metric(m, values, part))
            }),
        );
        push(
            "csp".into(),
            Box::new(move || {
                let Some(strata) = &ds.strata else {
                    return Ok(Outcome::Skip("no stratum column in the manifest".into()));
                };
                let r = conditional_statistical_parity(yhat, part, &strata.codes)?;
                let per: BTreeMap<String, Option<f64>> = r
                    .per_stratum
                    .iter()
                    .map(|&(s, v)| (strata.values[s as usize].clone(), v))
                    .collect();
                Ok(Outcome::Done(
                    Computed::new(r.value)
                        .flags(r.flags)
                        .details(serde_json::json!({ "per_stratum": per })),
                ))
            }),
        );
        push(
            "bgl".into(),
            Box::new(move || {
                let scores = self.scores()?;
                let r = bounded_group_loss(&absolute_loss(y, scores), part, cfg.xi)?;
                let details = serde_json::json!({
                    "xi": r.xi,
                    "passes": r.passes,
                    "group_losses": r.group_losses,
                    "offending": group_names(part, values, &r.offending),
                });
                Ok(Outcome::Done(Computed::new(r.max_loss).details(details)))
            }),
        );
        push(
            "gammasf".into(),
            Box::new(move || {
                let r = gamma_subgroup_fairness(yhat, y, part)?;
                Ok(Outcome::Done(
                    Computed::new(r.max).details(serde_json::json!({ "terms": json(&r.terms) })),
                ))
            }),
        );
        push(
            "minimax_gap".into(),
            Box::new(move || {
                let mut candidates = vec![self.preds.hard.clone()];
                let mut labels = vec!["audited".to_string()];
                for cv in self.cvs.iter().skip(1) {
                    candidates.push(cv.out_of_fold().hard);
                    labels.push(cv.learner.to_string());
                }
                let rows = minimax_gap(&candidates, y, part)?;
                let max_errors: BTreeMap<String, f64> =
                    labels.into_iter().zip(rows.iter().map(|r| r.max_error)).collect();
                Ok(Outcome::Done(
                    Computed::new(rows[0].gap).details(serde_json::json!({ "max_error": max_errors })),
                ))
            }),
        );
        push(
            "hfm.prev".into(),
            Box::new(move || {
                let binary;
                let (target, mut flags) = if part.n_groups() == 2 {
                    (ds, Vec::new())
                } else {
                    binary = ds.with_binarised_attribute(a);
                    (&binary, vec![format!("{label} binarised as privileged vs rest")])
                };
                let r = self.hfm(target, yhat, &[a], HfmVersion::Prev)?;
                if let Outcome::Done(mut c) = from_hfm(r) {
                    flags.append(&mut c.flags);
                    c.flags = flags;
                    return Ok(Outcome::Done(c));
                }
                unreachable!("from_hfm always yields a value")
            }),
        );
        push(
            "edf.epsilon".into(),
            Box::new(move || {
                let r = empirical_differential_fairness(yhat, part, cfg.kappa)?;
                let mut flags = r.flags;
                if !r.excluded_groups.is_empty() {
                    flags.push(format!(
                        "empty groups excluded: {}",
                        group_names(part, values, &r.excluded_groups).join(", ")
                    ));
                }
                Ok(Outcome::Done(
                    Computed::new(r.epsilon)
                        .flags(flags)
                        .details(serde_json::json!({ "kappa": r.kappa })),
                ))
            }),
        );
        for kind in RatioKind::ALL {
            push(
                kind.as_str().into(),
                Box::new(move || {
                    let mask = ds.strata.as_ref().and_then(|s| s.legitimate_mask());
                    if kind == RatioKind::Cspr && mask.is_none() {
                        return Ok(Outcome::Skip("no legitimate stratum value in the manifest".into()));
                    }
                    let r = minmax_ratio(kind, yhat, y, part, mask.as_deref())?;
                    let mut flags = r.flags;
                    if !r.skipped_groups.is_empty() {
                        flags.push(format!(
                            "undefined groups skipped: {}",
                            group_names(part, values, &r.skipped_groups).join(", ")
                        ));
                    }
                    Ok(Outcome::Done(
                        Computed::new(r.value)
                            .flags(flags)
                            .details(serde_json::json!({ "per_group": r.per_group })),
                    ))
                }),
            );
        }
        push(
            "idi".into(),
            Box::new(move || {
                let r = intersectional_disparate_impact(yhat, part)?;
                Ok(Outcome::Done(
                    Computed::new(r.value).details(serde_json::json!({ "rates": r.rates })),
                ))
            }),
        );
        push(
            "multiacc.max_residual".into(),
            Box::new(move || {
                let r = multiaccuracy_check(self.scores()?, y, part, cfg.multiacc_alpha)?;
                Ok(Outcome::Done(Computed::new(r.max_residual).details(serde_json::json!({
                    "alpha": r.alpha,
                    "passes": r.passes,
                    "residuals": r.residuals,
                }))))
            }),
        );
        push(
            "calib.max_gap".into(),
            Box::new(move || {
                let r = calibration_by_group(self.scores()?, y, part, cfg.calibration_bins)?;
                Ok(Outcome::Done(
                    Computed::new(r.max_gap)
                        .flags(r.flags)
                        .details(serde_json::json!({ "bins": r.bins })),
                ))
            }),
        );
        push(
            "worst_loss".into(),
            Box::new(move || {
                let r = worst_case_log_loss(self.scores()?, y, part)?;
                Ok(Outcome::Done(
                    Computed::new(r.max).details(serde_json::json!({ "per_group": r.per_group })),
                ))
            }),
        );
        push(
            "ber".into(),
            Box::new(move || {
                let r = ber_audit(ds, a, &cfg.learners, cfg.k, cfg.seed, cfg.epsilon)?;
                let per: BTreeMap<String, f64> = r.rows.iter().map(|row| (row.learner.to_string(), row.ber)).collect();
                Ok(Outcome::Done(Computed::new(r.min_ber).flags(r.flags).details(serde_json::json!({
                    "epsilon": r.epsilon,
                    "epsilon_fair": r.epsilon_fair,
                    "per_learner": per,
                }))))
            }),
        );
    }

    fn hfm(&self, ds: &Dataset, yhat: &[u8], attrs: &[usize], version: HfmVersion) -> Result<HfmResult> {
        let hcfg = HfmConfig::default();
        let budget = match self.cfg.approx_budget {
            Some(b) => Some(b),
            None if ds.n_rows() > self.cfg.hfm_exact_max_n => Some(DEFAULT_APPROX_BUDGET),
            None => None,
        };
        match (budget, version) {
            (Some(b), v) => hfm_approx(ds, yhat, attrs, v, b, self.cfg.seed, &hcfg),
            (None, HfmVersion::Prev) => hfm_prev(ds, yhat, attrs[0], &hcfg),
            (None, HfmVersion::Max) => hfm_max(ds, yhat, attrs, &hcfg),
            (None, HfmVersion::Avg) => hfm_avg(ds, yhat, attrs, &hcfg),
        }
    }

    fn dataset_tasks(&'a self, tasks: &mut Vec<Task<'a>>) {
        let cfg = self.cfg;
        let ds = self.model_ds;
        let yhat = &self.preds.hard[..];
        let y = &ds.labels[..];
        let mut push = |id: String, job: Job<'a>| {
            tasks.push(Task {
                id,
                attribute: None,
                job,
            })
        };
        push(
            gei_id(cfg.alpha),
            Box::new(move || Ok(Outcome::Done(Computed::new(general_entropy_index(yhat, y, cfg.alpha)?)))),
        );
        push(
            "theil".into(),
            Box::new(move || Ok(Outcome::Done(Computed::new(theil_index(yhat, y)?)))),
        );
        push(
            "dr".into(),
            Box::new(move || {
                if self.preds.is_external() || self.cvs.is_empty() {
                    return Err(FairError::ExternalPredictions);
                }
                let (value, flags) = out_of_fold_dr(&self.cvs[0], ds, cfg.seed, cfg.perturbation)?;
                Ok(Outcome::Done(Computed::new(value).flags(flags).details(serde_json::json!({
                    "draws": 1,
                    "protocol": "each fold model on a perturbation of its own held-out rows",
                }))))
            }),
        );
        let lipschitz = move || {
            let lcfg = LipschitzConfig {
                epsilon: cfg.lipschitz_epsilon,
                delta: cfg.lipschitz_delta,
                seed: cfg.seed,
                ..Default::default()
            };
            lipschitz_audit(self.scores()?, &ds.features, &lcfg)
        };
        push(
            "lipschitz.constant".into(),
            Box::new(move || {
                let r = lipschitz()?;
                Ok(Outcome::Done(Computed::new(r.constant).details(serde_json::json!({
                    "pairs": r.pairs,
                    "exhaustive": r.exhaustive,
                    "hard_violations": r.hard_violations,
                }))))
            }),
        );
        push(
            "lipschitz.violations".into(),
            Box::new(move || {
                let r = lipschitz()?;
                Ok(Outcome::Done(Computed::new(r.violation_rate).details(serde_json::json!({
                    "epsilon": r.epsilon,
                    "delta": r.delta,
                    "within_delta": r.within_delta,
                    "hard_violations": r.hard_violations,
                    "pairs": r.pairs,
                }))))
            }),
        );
        let attrs: Vec<usize> = (0..ds.n_attributes()).collect();
        for version in [HfmVersion::Max, HfmVersion::Avg] {
            let attrs = attrs.clone();
            push(
                format!("hfm.{}", version.as_str()),
                Box::new(move || Ok(from_hfm(self.hfm(ds, yhat, &attrs, version)?))),
            );
        }
        let judged = |f: &dyn Fn(&JudgmentMatrix, &[&str], &(Ablation, Ablation)) -> Result<f64>| -> Result<Outcome> {
            let Some(j) = self.judgments else {
                return Ok(Outcome::Skip("no judgment files supplied".into()));
            };
            if self.used_features.is_empty() {
                return Ok(Outcome::Skip("no judged feature is present in the dataset".into()));
            }
            let used: Vec<&str> = self.used_features.iter().map(String::as_str).collect();
            let placeholder;
            let abl = match self.ablation {
                Some(Ok(a)) => a,
                Some(Err(e)) => return Err(FairError::invalid(format!("feature ablation failed: {e}"))),
                None => {
                    placeholder = (empty_ablation(), empty_ablation());
                    &placeholder
                }
            };
            Ok(Outcome::Done(
                Computed::new(f(j, &used, abl)?).details(serde_json::json!({ "features": used })),
            ))
        };
        push("pf.apriori".into(), Box::new(move || judged(&|j, used, _| pf_apriori(j, used))));
        push(
            "pf.accuracy".into(),
            Box::new(move || judged(&|j, used, (acc, _)| pf_accuracy(j, used, acc))),
        );
        push(
            "pf.disparity".into(),
            Box::new(move || judged(&|j, used, (_, disp)| pf_disparity(j, used, disp))),
        );
    }
}

fn empty_ablation() -> Ablation {
    Ablation {
        full: 0.0,
        without: BTreeMap::new(),
    }
}

fn run_task(task: &Task<'_>, record: bool) -> MetricRow {
    let start = Instant::now();
    let outcome = (task.job)();
    let elapsed = start.elapsed().as_nanos() as u64;
    let attr = task.attribute.clone();
    let mut row = match outcome {
        Ok(Outcome::Done(c)) => MetricRow {
            flags: c.flags,
            terms: c.terms,
            details: c.details,
            ..MetricRow::ok(&task.id, attr, c.value)
        },
        Ok(Outcome::Skip(reason)) => MetricRow::skipped(&task.id, attr, reason),
        Err(e @ (FairError::MissingScores | FairError::ExternalPredictions)) => {
            MetricRow::skipped(&task.id, attr, e.to_string())
        }
        Err(e) => MetricRow::error(&task.id, attr, &e),
    };
    if let Some(v) = row.value {
        if !v.is_finite() {
            row.status = Status::Error;
            row.message = Some(format!("non-finite value {v}"));
            row.value = None;
        }
    }
    if record {
        row.wall_time_ns = Some(elapsed);
    }
    row
}

/// Features named in the judgment tables that resolve to dataset inputs.
fn judged_features(ds: &Dataset, j: &JudgmentMatrix) -> Vec<String> {
    j.features
        .iter()
        .filter(|f| {
            ds.feature_groups.iter().any(|g| &g.name == *f) || ds.attributes.iter().any(|a| &a.name == *f)
        })
        .cloned()
        .collect()
}

fn cv_summary(cv: &CvResult) -> CvSummary {
    CvSummary {
        learner: cv.learner.to_string(),
        k: cv.plan.k,
        stratified: cv.plan.stratified,
        seed: cv.plan.seed,
        fold_sizes: cv.plan.folds.iter().map(Vec::len).collect(),
    }
}

/// Computes every selected metric. Supplied predictions are audited as is;
/// otherwise the first learner's held-out cross-validation predictions are.
pub fn run_audit(
    dataset: &Dataset,
    predictions: Option<PredictionSet>,
    judgments: Option<&JudgmentMatrix>,
    cfg: &AuditConfig,
) -> Result<FairnessReport> {
    let total = Instant::now();
    let mut timings = BTreeMap::new();
    if cfg.learners.is_empty() {
        return Err(FairError::invalid("at least one learner is required"));
    }
    let mut notes = Vec::new();

    let start = Instant::now();
    let cvs: Vec<CvResult> = if predictions.is_some() {
        Vec::new()
    } else {
        cfg.learners
            .iter()
            .map(|&l| cross_validate(dataset, l, cfg.k, cfg.seed))
            .collect::<Result<_>>()?
    };
    let preds = match predictions {
        Some(p) => {
            p.validate(dataset.n_rows(), crate::predictions::DEFAULT_THRESHOLD)?;
            p
        }
        None => cvs[0].out_of_fold(),
    };
    timings.insert("train".to_string(), start.elapsed().as_nanos() as u64);

    let mut groups_ds = dataset.clone();
    if dataset.n_attributes() >= 2 {
        let all: Vec<usize> = (0..dataset.n_attributes()).collect();
        match dataset.with_super_attribute(&all, DEFAULT_SUPER_CAP) {
            Ok((with, _)) => groups_ds = with,
            Err(e) => notes.push(format!("super attribute not audited: {e}")),
        }
    }

    let used_features = judgments.map(|j| judged_features(dataset, j)).unwrap_or_default();
    let want_ablation = judgments.is_some()
        && !used_features.is_empty()
        && (cfg.metrics.selects("pf.accuracy") || cfg.metrics.selects("pf.disparity"));
    let start = Instant::now();
    let ablation = want_ablation.then(|| {
        let used: Vec<&str> = used_features.iter().map(String::as_str).collect();
        ablate(dataset, &used, cfg.learners[0], cfg.k, cfg.seed, 0)
    });
    if want_ablation {
        timings.insert("ablation".to_string(), start.elapsed().as_nanos() as u64);
    }

    let ctx = AuditContext {
        cfg,
        model_ds: dataset,
        groups_ds: &groups_ds,
        partitions: (0..groups_ds.n_attributes()).map(|a| groups_ds.partition(a)).collect(),
        preds: &preds,
        cvs: &cvs,
        judgments,
        ablation: ablation.as_ref(),
        used_features,
    };
    let mut tasks = Vec::new();
    for a in 0..groups_ds.n_attributes() {
        ctx.attribute_tasks(a, &mut tasks);
    }
    ctx.dataset_tasks(&mut tasks);
    tasks.retain(|t| cfg.metrics.selects(&t.id));

    let start = Instant::now();
    let metrics: Vec<MetricRow> = tasks.par_iter().map(|t| run_task(t, cfg.record_timings)).collect();
    timings.insert("metrics".to_string(), start.elapsed().as_nanos() as u64);

    let performance = match performance(&preds.hard, &dataset.labels) {
        Ok(p) => Some(p),
        Err(e) => {
            notes.push(format!("performance unavailable: {e}"));
            None
        }
    };
    if preds.scores.is_none() {
        notes.push("predictions carry no scores; score-based metrics are skipped".into());
    }
    for cv in &cvs {
        for f in &cv.folds {
            notes.extend(f.flags.iter().map(|fl| format!("{} fold {}: {fl}", cv.learner, f.fold)));
        }
    }
    timings.insert("total".to_string(), total.elapsed().as_nanos() as u64);

    Ok(FairnessReport {
        tool: TOOL.to_string(),
        command: "audit".into(),
        seed: cfg.seed,
        dataset: DatasetSummary::of(dataset),
        predictions: PredictionSummary {
            source: preds.source.clone(),
            has_scores: preds.scores.is_some(),
            seed: preds.seed,
        },
        cv: cvs.first().map(cv_summary),
        settings: json(cfg),
        performance,
        summary: FairnessReport::count_statuses(&metrics),
        metrics,
        notes,
        timings_ns: cfg.record_timings.then_some(timings),
    })
}

// ---------------------------------------------------------------- experiment

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub k: usize,
    pub learners: Vec<LearnerId>,
    /// Attribute whose forms are compared. Defaults to the super attribute
    /// of all attributes, or the only attribute.
    pub attribute: Option<String>,
    pub forms: Vec<Form>,
    pub alpha: f64,
    pub approx_budget: usize,
    pub hfm_exact_max_n: usize,
    pub perturbation: PerturbationPolicy,
    pub bench: BenchConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            k: 5,
            learners: vec![
                LearnerId::Stump,
                LearnerId::Bagging { replicates: 20 },
                LearnerId::AdaBoost { rounds: 50 },
                LearnerId::LogReg { epochs: 200, lr: 0.5 },
            ],
            attribute: None,
            forms: Form::ALL.to_vec(),
            alpha: 2.0,
            approx_budget: DEFAULT_APPROX_BUDGET,
            hfm_exact_max_n: 2000,
            perturbation: PerturbationPolicy::FlipAll,
            bench: BenchConfig {
                sizes: vec![1000, 2000],
                hfm_max_n: 2000,
                record_times: false,
                ..Default::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutputs {
    pub underestimation: UnderestimationTable,
    pub timing: Vec<TimingRecord>,
    pub correlation: Vec<CorrelationRow>,
    pub tradeoff: TradeoffTable,
    pub relation: Vec<RelationRow>,
    pub report: ExperimentReport,
}

pub const EXPERIMENT_FILES: [&str; 6] = [
    "underestimation.csv",
    "timing.csv",
    "correlation.csv",
    "tradeoff.csv",
    "relation.csv",
    "report.json",
];

fn resolve_attribute(ds: &Dataset, name: Option<&str>) -> Result<(Dataset, usize)> {
    match name {
        Some(n) => {
            if let Some(i) = ds.attribute_index(n) {
                return Ok((ds.clone(), i));
            }
            let parts: Vec<usize> = n
                .split('*')
                .map(|p| ds.attribute_index(p).ok_or_else(|| FairError::invalid(format!("unknown attribute `{p}`"))))
                .collect::<Result<_>>()?;
            ds.with_super_attribute(&parts, DEFAULT_SUPER_CAP)
        }
        None if ds.n_attributes() >= 2 => {
            let all: Vec<usize> = (0..ds.n_attributes()).collect();
            ds.with_super_attribute(&all, DEFAULT_SUPER_CAP)
        }
        None => Ok((ds.clone(), 0)),
    }
}

struct Cell {
    row: TradeoffRow,
    deltas: BTreeMap<String, Option<f64>>,
}

fn cell_metrics(
    cfg: &ExperimentConfig,
    model_ds: &Dataset,
    groups_ds: &Dataset,
    attribute: usize,
    cv: &CvResult,
    fold: usize,
) -> Result<Cell> {
    let f = &cv.folds[fold];
    let sub = model_ds.subset(&f.test_rows);
    let y = &sub.labels[..];
    let part = groups_ds.partition(attribute).restrict(&f.test_rows);
    let yhat = &f.hard[..];
    let perf = performance(yhat, y)?;
    let mut metrics = BTreeMap::new();
    for probe in ProbeKind::ALL {
        for &form in &cfg.forms {
            let v = probe_metric(probe, yhat, y, &part, form, EmptyCellPolicy::Skip).ok().map(|m| m.value);
            metrics.insert(format!("{}.{form}", probe.prefix()), v);
        }
    }
    metrics.insert(
        "edf.epsilon".into(),
        empirical_differential_fairness(yhat, &part, DEFAULT_KAPPA).ok().map(|r| r.epsilon),
    );
    metrics.insert(
        "dpr".into(),
        minmax_ratio(RatioKind::Dpr, yhat, y, &part, None).ok().map(|r| r.value),
    );
    metrics.insert(gei_id(cfg.alpha), general_entropy_index(yhat, y, cfg.alpha).ok());
    metrics.insert("theil".into(), theil_index(yhat, y).ok());
    let attrs: Vec<usize> = (0..sub.n_attributes()).collect();
    let hcfg = HfmConfig::default();
    for version in [HfmVersion::Max, HfmVersion::Avg] {
        let r = if sub.n_rows() > cfg.hfm_exact_max_n {
            hfm_approx(&sub, yhat, &attrs, version, cfg.approx_budget, cfg.seed, &hcfg)
        } else if version == HfmVersion::Max {
            hfm_max(&sub, yhat, &attrs, &hcfg)
        } else {
            hfm_avg(&sub, yhat, &attrs, &hcfg)
        };
        metrics.insert(format!("hfm.{}", version.as_str()), r.ok().map(|r| r.value));
    }
    let delta = delta_performance(&f.model, &sub, cfg.seed, cfg.perturbation).map_err(|e| {
        FairError::invalid(format!("{} fold {fold}: perturbation failed: {e}", cv.learner))
    })?;
    metrics.insert("dr".into(), Some(delta.dr));
    let deltas = [
        ("delta.accuracy".to_string(), Some(delta.accuracy)),
        ("delta.f1".to_string(), Some(delta.f1)),
        ("delta.gmean".to_string(), Some(delta.gmean)),
    ]
    .into_iter()
    .collect();
    Ok(Cell {
        row: TradeoffRow {
            model: cv.learner.to_string(),
            fold,
            accuracy: perf.accuracy,
            f1: perf.f1,
            gmean: perf.gmean,
            metrics,
        },
        deltas,
    })
}

/// Cross-validates every learner, then derives the five plot-data tables.
pub fn run_experiment(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<ExperimentOutputs> {
    if cfg.learners.is_empty() {
        return Err(FairError::invalid("at least one learner is required"));
    }
    let (groups_ds, attribute) = resolve_attribute(dataset, cfg.attribute.as_deref())?;
    let cvs: Vec<CvResult> = cfg
        .learners
        .par_iter()
        .map(|&l| {
            cross_validate(dataset, l, cfg.k, cfg.seed)
                .map_err(|e| FairError::invalid(format!("cross-validation of {l} failed: {e}")))
        })
        .collect::<Result<_>>()?;
    let underestimation = underestimation_from_cv(&groups_ds, attribute, &cvs);

    let cells_idx: Vec<(usize, usize)> = cvs
        .iter()
        .enumerate()
        .flat_map(|(i, cv)| (0..cv.folds.len()).map(move |f| (i, f)))
        .collect();
    let cells: Vec<Cell> = cells_idx
        .par_iter()
        .map(|&(i, f)| cell_metrics(cfg, dataset, &groups_ds, attribute, &cvs[i], f))
        .collect::<Result<_>>()?;

    let mut tradeoff = TradeoffTable::default();
    let mut deltas: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for c in cells {
        for (k, v) in c.deltas {
            deltas.entry(k).or_default().push(v);
        }
        tradeoff.push(c.row);
    }
    let metric_series: BTreeMap<String, Vec<Option<f64>>> = tradeoff
        .metrics
        .iter()
        .filter_map(|m| tradeoff.series(m).map(|s| (m.clone(), s)))
        .collect();
    let correlation = correlation_table(&metric_series, &deltas);

    let individual: Vec<String> = [gei_id(cfg.alpha), "theil".into(), "dr".into(), "hfm.max".into(), "hfm.avg".into()]
        .into_iter()
        .collect();
    let group: Vec<String> = tradeoff
        .metrics
        .iter()
        .filter(|m| !individual.contains(m))
        .cloned()
        .collect();
    let relation = relation_table(&tradeoff, &individual, &group);

    let bench = BenchConfig {
        seed: cfg.seed,
        ..cfg.bench.clone()
    };
    let timing = timing_bench(&bench)?;

    let mut notes = vec![
        "delta performance and dr use one perturbation draw per (model, fold) on the fold's held-out rows, seeded by the global seed".to_string(),
        "correlation and relation series are indexed by (model, fold)".to_string(),
    ];
    if !bench.record_times {
        notes.push("timing.csv holds term counts only; pass --record-timings for wall times".into());
    }
    let report = ExperimentReport {
        tool: TOOL.to_string(),
        command: "experiment".into(),
        seed: cfg.seed,
        dataset: DatasetSummary::of(dataset),
        attribute: groups_ds.attributes[attribute].name.clone(),
        learners: cfg.learners.iter().map(ToString::to_string).collect(),
        cv: cvs.iter().map(cv_summary).collect(),
        settings: json(cfg),
        underestimation: underestimation.summary.clone(),
        correlation: correlation.clone(),
        files: EXPERIMENT_FILES.iter().map(|s| s.to_string()).collect(),
        notes,
    };
    Ok(ExperimentOutputs {
        underestimation,
        timing,
        correlation,
        tradeoff,
        relation,
        report,
    })
}

fn create(dir: &Path, name: &str) -> Result<(PathBuf, std::io::BufWriter<std::fs::File>)> {
    let path = dir.join(name);
    let file = std::fs::File::create(&path).map_err(|e| FairError::io(&path, e))?;
    Ok((path, std::io::BufWriter::new(file)))
}

/// Writes the five CSV tables and report.json into `dir`.
pub fn write_experiment(outputs: &ExperimentOutputs, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| FairError::io(dir, e))?;
    let mut written = Vec::new();
    let (p, w) = create(dir, "underestimation.csv")?;
    outputs.underestimation.write_csv(w)?;
    written.push(p);
    let (p, w) = create(dir, "timing.csv")?;
    TimingRecord::write_csv(&outputs.timing, w)?;
    written.push(p);
    let (p, w) = create(dir, "correlation.csv")?;
    write_correlation_csv(&outputs.correlation, w)?;
    written.push(p);
    let (p, w) = create(dir, "tradeoff.csv")?;
    outputs.tradeoff.write_csv(w)?;
    written.push(p);
    let (p, w) = create(dir, "relation.csv")?;
    write_relation_csv(&outputs.relation, w)?;
    written.push(p);
    let p = dir.join("report.json");
    crate::report::write_json(&outputs.report, &p)?;
    written.push(p);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synthetic::{generate, SyntheticConfig};

    #[test]
    fn selection_tokens() {
        let s = MetricSelection::parse("dp, hfm,gei", 2.0).unwrap();
        assert!(s.selects("dp.alt") && s.selects("hfm.prev") && s.selects("gei(2)"));
        assert!(!s.selects("dpr") && !s.selects("eopp.alt"));
        assert!(matches!(MetricSelection::parse("dp,bogus", 2.0), Err(FairError::UnknownMetric(t)) if t == "bogus"));
        assert!(MetricSelection::parse("all", 2.0).unwrap().selects("anything"));
        assert_eq!(parse_forms("alt,binarised,alt").unwrap(), vec![Form::Binarised, Form::Alt]);
        assert!(parse_forms("nope").is_err());
    }

    #[test]
    fn external_predictions_without_scores_skip_score_metrics() {
        let ds = generate(&SyntheticConfig {
            n: 300,
            ..Default::default()
        })
        .unwrap();
        let hard: Vec<u8> = ds.features.column(0).iter().map(|&x| u8::from(x < 0.5)).collect();
        let preds = PredictionSet::from_hard(
            hard,
            crate::predictions::PredictionSource::External { path: "p.csv".into() },
            0,
        );
        let cfg = AuditConfig {
            learners: vec![LearnerId::Stump],
            ..Default::default()
        };
        let r = run_audit(&ds, Some(preds), None, &cfg).unwrap();
        for id in ["bgl", "multiacc.max_residual", "calib.max_gap", "worst_loss"] {
            let row = r.metric(id, Some("s0")).unwrap();
            assert_eq!(row.status, Status::Skipped, "{id}");
        }
        assert_eq!(r.metric("lipschitz.constant", None).unwrap().status, Status::Skipped);
        assert_eq!(r.metric("dr", None).unwrap().status, Status::Skipped);
        assert_eq!(r.metric("dp.alt", Some("s0*s1")).unwrap().status, Status::Ok);
        assert_eq!(r.metric("dp.orig", Some("s0")).unwrap().status, Status::Skipped);
        assert_eq!(r.metric("dp.orig", Some("s1")).unwrap().status, Status::Ok);
        assert!(r.timings_ns.is_none());
    }
}
