//! Judgment-based procedural fairness over member-by-feature approval tables.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{FairError, Result};
use crate::group::{probe_metric, EmptyCellPolicy, Form, ProbeKind};
use crate::learners::{cross_validate_xy, performance, FoldPlan, LearnerId};

/// Approval tables indexed `[member][feature]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentMatrix {
    pub members: Vec<String>,
    pub features: Vec<String>,
    /// Fair to use without further knowledge.
    pub apriori: Vec<Vec<bool>>,
    /// Fair to use if it increases accuracy.
    pub accuracy: Vec<Vec<bool>>,
    /// Fair to use even if it increases disparity.
    pub disparity: Vec<Vec<bool>>,
}

struct Table {
    members: Vec<String>,
    features: Vec<String>,
    cells: Vec<Vec<bool>>,
}

fn read_table(path: &Path) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| FairError::from_csv(path, e))?;
    let headers = reader.headers()?.clone();
    if headers.get(0) != Some("member") {
        return Err(FairError::invalid(format!(
            "{}: first column must be `member`",
            path.display()
        )));
    }
    let features: Vec<String> = headers.iter().skip(1).map(String::from).collect();
    let mut members = Vec::new();
    let mut cells = Vec::new();
    for record in reader.records() {
        let record = record?;
        let member = record.get(0).unwrap_or_default().to_string();
        let row = record
            .iter()
            .skip(1)
            .map(|v| match v {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(FairError::invalid(format!(
                    "{}: member {member}: cell `{other}` is not 0 or 1",
                    path.display()
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        members.push(member);
        cells.push(row);
    }
    Ok(Table {
        members,
        features,
        cells,
    })
}

fn with_suffix(stem: &Path, suffix: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

/// Reorders `t` to the given member and feature order; both sets must match.
fn align(t: Table, members: &[String], features: &[String], what: &str) -> Result<Vec<Vec<bool>>> {
    let same = |a: &[String], b: &[String]| {
        a.iter().collect::<BTreeSet<_>>() == b.iter().collect::<BTreeSet<_>>() && a.len() == b.len()
    };
    if !same(&t.members, members) {
        return Err(FairError::invalid(format!("{what} table lists different members")));
    }
    if !same(&t.features, features) {
        return Err(FairError::invalid(format!("{what} table lists different features")));
    }
    let col: Vec<usize> = features
        .iter()
        .map(|f| t.features.iter().position(|g| g == f).expect("feature sets checked"))
        .collect();
    Ok(members
        .iter()
        .map(|m| {
            let r = t.members.iter().position(|x| x == m).expect("member sets checked");
            col.iter().map(|&c| t.cells[r][c]).collect()
        })
        .collect())
}

impl JudgmentMatrix {
    pub fn new(
        members: Vec<String>,
        features: Vec<String>,
        apriori: Vec<Vec<bool>>,
        accuracy: Vec<Vec<bool>>,
        disparity: Vec<Vec<bool>>,
    ) -> Result<Self> {
        let m = JudgmentMatrix {
            members,
            features,
            apriori,
            accuracy,
            disparity,
        };
        for t in [&m.apriori, &m.accuracy, &m.disparity] {
            if t.len() != m.members.len() || t.iter().any(|r| r.len() != m.features.len()) {
                return Err(FairError::invalid("judgment table shape does not match members x features"));
            }
        }
        if m.members.is_empty() {
            return Err(FairError::invalid("judgment tables list no members"));
        }
        Ok(m)
    }

    /// Loads `<stem>.apr.csv`, `<stem>.acc.csv` and `<stem>.disp.csv`.
    pub fn load(stem: &Path) -> Result<Self> {
        let apr = read_table(&with_suffix(stem, ".apr.csv"))?;
        let acc = read_table(&with_suffix(stem, ".acc.csv"))?;
        let disp = read_table(&with_suffix(stem, ".disp.csv"))?;
        let members = apr.members.clone();
        let features = apr.features.clone();
        let accuracy = align(acc, &members, &features, "accuracy")?;
        let disparity = align(disp, &members, &features, "disparity")?;
        Self::new(members, features, apr.cells, accuracy, disparity)
    }

    fn feature_index(&self, name: &str) -> Result<usize> {
        self.features
            .iter()
            .position(|f| f == name)
            .ok_or_else(|| FairError::UnknownFeature(name.to_string()))
    }

    /// Share of members in every selected set; `choose` picks the set for a
    /// feature given the member row.
    fn fraction(&self, used: &[&str], choose: impl Fn(usize, usize) -> bool) -> Result<f64> {
        let cols = used.iter().map(|f| self.feature_index(f)).collect::<Result<Vec<_>>>()?;
        let approving = (0..self.members.len())
            .filter(|&m| cols.iter().all(|&c| choose(m, c)))
            .count();
        Ok(approving as f64 / self.members.len() as f64)
    }
}

/// Accuracy or disparity of the model with all used features, and without
/// each one in turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ablation {
    pub full: f64,
    pub without: BTreeMap<String, f64>,
}

impl Ablation {
    fn without(&self, feature: &str) -> Result<f64> {
        self.without
            .get(feature)
            .copied()
            .ok_or_else(|| FairError::invalid(format!("no ablation value for feature `{feature}`")))
    }
}

/// Share of members approving every used feature a priori.
pub fn pf_apriori(j: &JudgmentMatrix, used: &[&str]) -> Result<f64> {
    j.fraction(used, |m, c| j.apriori[m][c])
}

/// Uses the a priori set for features whose removal does not lower accuracy,
/// otherwise its union with the accuracy-conditional set.
pub fn pf_accuracy(j: &JudgmentMatrix, used: &[&str], acc: &Ablation) -> Result<f64> {
    let improves: Vec<bool> = used
        .iter()
        .map(|f| Ok(acc.full > acc.without(f)?))
        .collect::<Result<_>>()?;
    let cols = used.iter().map(|f| j.feature_index(f)).collect::<Result<Vec<_>>>()?;
    j.fraction(used, |m, c| {
        let k = cols.iter().position(|&x| x == c).expect("column from used list");
        j.apriori[m][c] || (improves[k] && j.accuracy[m][c])
    })
}

/// Uses the disparity-conditional set for features whose use increases
/// disparity, otherwise the a priori set.
pub fn pf_disparity(j: &JudgmentMatrix, used: &[&str], disp: &Ablation) -> Result<f64> {
    let increases: Vec<bool> = used
        .iter()
        .map(|f| Ok(disp.full > disp.without(f)?))
        .collect::<Result<_>>()?;
    let cols = used.iter().map(|f| j.feature_index(f)).collect::<Result<Vec<_>>>()?;
    j.fraction(used, |m, c| {
        let k = cols.iter().position(|&x| x == c).expect("column from used list");
        if increases[k] {
            j.disparity[m][c]
        } else {
            j.apriori[m][c]
        }
    })
}

/// Model-input columns belonging to a raw feature or sensitive attribute.
fn input_columns(dataset: &Dataset, name: &str) -> Result<Vec<usize>> {
    if let Some(g) = dataset.feature_groups.iter().find(|g| g.name == name) {
        return Ok(g.columns().collect());
    }
    if let Some(i) = dataset.attributes.iter().position(|a| a.name == name || a.column == name) {
        return Ok(vec![dataset.features.n_cols() + i]);
    }
    Err(FairError::UnknownFeature(name.to_string()))
}

/// Retrains `learner` without each used feature (same folds, same seed) and
/// records held-out accuracy and binarised demographic parity on
/// `attribute`.
pub fn ablate(
    dataset: &Dataset,
    used: &[&str],
    learner: LearnerId,
    k: usize,
    seed: u64,
    attribute: usize,
) -> Result<(Ablation, Ablation)> {
    let design = dataset.design_matrix();
    let plan = FoldPlan::new(&dataset.labels, k, seed, true)?;
    let partition = dataset.partition(attribute).binarised();
    let evaluate = |cols: &[usize]| -> Result<(f64, f64)> {
        let x = design.select_columns(cols);
        let cv = cross_validate_xy(&x, &dataset.labels, learner, &plan)?;
        let oof = cv.out_of_fold();
        let acc = performance(&oof.hard, &dataset.labels)?.accuracy;
        let dp = probe_metric(
            ProbeKind::Dp,
            &oof.hard,
            &dataset.labels,
            &partition,
            Form::Binarised,
            EmptyCellPolicy::Skip,
        )?
        .value;
        Ok((acc, dp))
    };
    let mut dropped = Vec::with_capacity(used.len());
    for f in used {
        dropped.push(input_columns(dataset, f)?);
    }
    let base: Vec<usize> = (0..design.n_cols()).collect();
    let (acc_full, dp_full) = evaluate(&base)?;
    let per_feature = dropped
        .par_iter()
        .map(|cols| {
            let keep: Vec<usize> = base.iter().copied().filter(|c| !cols.contains(c)).collect();
            evaluate(&keep)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut acc = Ablation {
        full: acc_full,
        without: BTreeMap::new(),
    };
    let mut disp = Ablation {
        full: dp_full,
        without: BTreeMap::new(),
    };
    for (f, (a, d)) in used.iter().zip(per_feature) {
        acc.without.insert(f.to_string(), a);
        disp.without.insert(f.to_string(), d);
    }
    Ok((acc, disp))
}
