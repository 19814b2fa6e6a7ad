//! Seeded synthetic datasets with planted group disparities.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use std::path::{Path, PathBuf};

use super::{
    ColumnKind, Dataset, DatasetManifest, ExpectedCounts, FeatureColumn, FeatureMatrix, GroupPartition,
    SensitiveAttributeSpec,
};
use crate::error::{FairError, Result};
use crate::seeded_rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    pub n_features: usize,
    /// Value count per sensitive attribute; code 0 is privileged.
    pub attribute_sizes: Vec<usize>,
    /// Positive-label rate per value of the first attribute. Defaults to a
    /// ramp from 0.7 (privileged) down to 0.3.
    pub label_rates: Option<Vec<f64>>,
    /// Probability of flipping each label.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n: 1000,
            n_features: 4,
            attribute_sizes: vec![3, 2],
            label_rates: None,
            label_noise: 0.05,
            seed: 0,
        }
    }
}

/// Evenly spaced rates from `hi` (code 0) to `lo` (last code).
pub fn ramp(k: usize, hi: f64, lo: f64) -> Vec<f64> {
    if k == 1 {
        return vec![hi];
    }
    (0..k)
        .map(|j| hi - (hi - lo) * j as f64 / (k - 1) as f64)
        .collect()
}

/// Features are uniform on [0,1]; the label is `x0 < rate[a0]`, then flipped
/// with probability `label_noise`. Feature 0 therefore carries the signal.
pub fn generate(cfg: &SyntheticConfig) -> Result<Dataset> {
    if cfg.n == 0 {
        return Err(FairError::NoRows);
    }
    if cfg.n_features == 0 {
        return Err(FairError::invalid("synthetic data needs at least one feature"));
    }
    if cfg.attribute_sizes.is_empty() || cfg.attribute_sizes.iter().any(|&k| k < 2) {
        return Err(FairError::invalid("every synthetic attribute needs at least 2 values"));
    }
    let k0 = cfg.attribute_sizes[0];
    let rates = cfg.label_rates.clone().unwrap_or_else(|| ramp(k0, 0.7, 0.3));
    if rates.len() != k0 {
        return Err(FairError::LengthMismatch {
            expected: k0,
            got: rates.len(),
        });
    }

    let mut rng = seeded_rng(cfg.seed, 0x73796e);
    let mut data = Vec::with_capacity(cfg.n * cfg.n_features);
    for _ in 0..cfg.n * cfg.n_features {
        data.push(rng.gen::<f64>());
    }
    let features = FeatureMatrix::new(cfg.n, cfg.n_features, data);
    let sensitive: Vec<Vec<u32>> = cfg
        .attribute_sizes
        .iter()
        .map(|&k| (0..cfg.n).map(|_| rng.gen_range(0..k as u32)).collect())
        .collect();
    let labels = (0..cfg.n)
        .map(|r| {
            let y = features.get(r, 0) < rates[sensitive[0][r] as usize];
            let flip = rng.gen::<f64>() < cfg.label_noise;
            u8::from(y ^ flip)
        })
        .collect();
    let attributes = cfg
        .attribute_sizes
        .iter()
        .enumerate()
        .map(|(i, &k)| SensitiveAttributeSpec::numbered(format!("s{i}"), k, 0))
        .collect();
    let names = (0..cfg.n_features).map(|j| format!("x{j}")).collect();
    Dataset::new(features, names, attributes, sensitive, labels)
}

/// Hard predictions where group `j` has exactly `round(rates[j] * |D_j|)`
/// positives, chosen by a seeded shuffle.
pub fn planted_predictions(partition: &GroupPartition, rates: &[f64], seed: u64) -> Result<Vec<u8>> {
    if rates.len() != partition.n_groups() {
        return Err(FairError::LengthMismatch {
            expected: partition.n_groups(),
            got: rates.len(),
        });
    }
    let mut rng = seeded_rng(seed, 0x706c61);
    let mut out = vec![0u8; partition.n_rows()];
    for (j, &rate) in rates.iter().enumerate() {
        if !(0.0..=1.0).contains(&rate) {
            return Err(FairError::invalid(format!("rate {rate} outside [0,1]")));
        }
        let mut rows = partition.group(j).to_vec();
        rows.shuffle(&mut rng);
        let k = (rate * rows.len() as f64).round() as usize;
        for &r in &rows[..k] {
            out[r] = 1;
        }
    }
    Ok(out)
}

/// Writes `<stem>.csv` and a manifest `<stem>.json` for `ds` into `dir`.
/// The manifest carries the dataset's own counts as expected counts.
pub fn write_bundle(ds: &Dataset, dir: &Path, stem: &str) -> Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(dir).map_err(|e| FairError::io(dir, e))?;
    let csv_name = format!("{stem}.csv");
    let csv_path = dir.join(&csv_name);
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| FairError::from_csv(&csv_path, e))?;
    let mut header: Vec<String> = ds.feature_names.clone();
    header.extend(ds.attributes.iter().map(|a| a.name.clone()));
    header.push("y".into());
    w.write_record(&header)?;
    for r in 0..ds.n_rows() {
        let mut rec: Vec<String> = ds.features.row(r).iter().map(|v| v.to_string()).collect();
        rec.extend(
            ds.attributes
                .iter()
                .zip(&ds.sensitive)
                .map(|(a, codes)| a.values[codes[r] as usize].clone()),
        );
        rec.push(ds.labels[r].to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| FairError::io(&csv_path, e))?;

    let expected = ExpectedCounts {
        n: Some(ds.n_rows()),
        n_raw_features: Some(ds.feature_names.len() + ds.n_attributes()),
        n_prep_features: Some(ds.n_input_columns()),
        value_counts: ds.attributes.iter().map(|a| (a.name.clone(), a.n_values())).collect(),
        privileged_sizes: ds
            .attributes
            .iter()
            .zip(&ds.sensitive)
            .map(|(a, codes)| {
                let p = a.privileged_code();
                (a.name.clone(), codes.iter().filter(|&&c| c == p).count())
            })
            .collect(),
    };
    let manifest = DatasetManifest {
        csv_path: PathBuf::from(csv_name),
        feature_columns: ds
            .feature_names
            .iter()
            .map(|n| FeatureColumn::Typed {
                name: n.clone(),
                kind: ColumnKind::Numeric,
                categories: None,
            })
            .collect(),
        sensitive_specs: ds.attributes.clone(),
        label_column: "y".into(),
        positive_label: None,
        expected_counts: Some(expected),
        missing_markers: vec!["?".into(), String::new(), "NA".into()],
        stratum: None,
    };
    let manifest_path = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&manifest)? + "\n";
    std::fs::write(&manifest_path, text).map_err(|e| FairError::io(&manifest_path, e))?;
    Ok((csv_path, manifest_path))
}
