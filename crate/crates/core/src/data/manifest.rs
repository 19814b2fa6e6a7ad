use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::preprocess::{preprocess, RawColumn, RawValues};
use super::{Dataset, SensitiveAttributeSpec, Strata};
use crate::error::{FairError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    /// Numeric when every value parses as a number, categorical otherwise.
    #[default]
    Auto,
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FeatureColumn {
    Name(String),
    Typed {
        name: String,
        #[serde(default)]
        kind: ColumnKind,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        categories: Option<Vec<String>>,
    },
}

impl FeatureColumn {
    pub fn name(&self) -> &str {
        match self {
            FeatureColumn::Name(n) => n,
            FeatureColumn::Typed { name, .. } => name,
        }
    }

    fn kind(&self) -> ColumnKind {
        match self {
            FeatureColumn::Name(_) => ColumnKind::Auto,
            FeatureColumn::Typed { kind, .. } => *kind,
        }
    }

    fn categories(&self) -> Option<&Vec<String>> {
        match self {
            FeatureColumn::Name(_) => None,
            FeatureColumn::Typed { categories, .. } => categories.as_ref(),
        }
    }
}

/// Optional validation targets; every field that is set must match exactly.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ExpectedCounts {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Raw feature count including the sensitive columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_raw_features: Option<usize>,
    /// Prepared feature count: one-hot/scaled feature columns plus one column
    /// per sensitive attribute.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_prep_features: Option<usize>,
    /// Attribute name -> number of values.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub value_counts: BTreeMap<String, usize>,
    /// Attribute name -> privileged-group size.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub privileged_sizes: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSpec {
    pub column: String,
    /// Value treated as the legitimate factor being present (`l(x) = 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub legitimate_value: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    /// Resolved relative to the manifest's directory when loaded from a file.
    pub csv_path: PathBuf,
    pub feature_columns: Vec<FeatureColumn>,
    pub sensitive_specs: Vec<SensitiveAttributeSpec>,
    pub label_column: String,
    /// Label value mapped to 1. When absent the column must hold 0/1.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_counts: Option<ExpectedCounts>,
    /// Rows with any of these values in a used column are rejected.
    #[serde(default = "default_missing_markers")]
    pub missing_markers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stratum: Option<StratumSpec>,
}

fn default_missing_markers() -> Vec<String> {
    vec!["?".into(), String::new(), "NA".into()]
}

impl DatasetManifest {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FairError::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text)?;
        if m.csv_path.is_relative() {
            if let Some(dir) = path.parent() {
                m.csv_path = dir.join(&m.csv_path);
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensitive_specs.is_empty() {
            return Err(FairError::Manifest("at least one sensitive spec is required".into()));
        }
        let mut seen = HashSet::new();
        let mut claim = |c: &str| -> Result<()> {
            if seen.insert(c.to_string()) {
                Ok(())
            } else {
                Err(FairError::Manifest(format!("column `{c}` is used twice")))
            }
        };
        for f in &self.feature_columns {
            claim(f.name())?;
        }
        for s in &self.sensitive_specs {
            claim(s.source_column())?;
        }
        claim(&self.label_column)?;
        if let Some(st) = &self.stratum {
            if !self.feature_columns.iter().any(|f| f.name() == st.column) {
                claim(&st.column)?;
            }
        }
        let mut names = HashSet::new();
        for s in &self.sensitive_specs {
            if !names.insert(&s.name) {
                return Err(FairError::Manifest(format!("attribute `{}` declared twice", s.name)));
            }
        }
        Ok(())
    }
}

impl SensitiveAttributeSpec {
    fn source_column(&self) -> &str {
        if self.column.is_empty() {
            &self.name
        } else {
            &self.column
        }
    }
}

/// Reads the manifest's CSV and builds a preprocessed [`Dataset`].
pub fn ingest(manifest: &DatasetManifest) -> Result<Dataset> {
    let dataset = ingest_unchecked(manifest)?;
    if let Some(expected) = &manifest.expected_counts {
        let diffs = count_mismatches(&dataset, manifest, expected);
        if !diffs.is_empty() {
            return Err(FairError::CountMismatch(diffs));
        }
    }
    Ok(dataset)
}

/// Ingestion without the expected-count comparison.
pub(crate) fn ingest_unchecked(manifest: &DatasetManifest) -> Result<Dataset> {
    manifest.validate()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(&manifest.csv_path)
        .map_err(|e| FairError::from_csv(&manifest.csv_path, e))?;
    let headers: HashMap<String, usize> = reader
        .headers()?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();
    let col = |name: &str| -> Result<usize> {
        headers
            .get(name)
            .copied()
            .ok_or_else(|| FairError::MissingColumn(name.to_string()))
    };

    let feature_idx: Vec<usize> = manifest
        .feature_columns
        .iter()
        .map(|f| col(f.name()))
        .collect::<Result<_>>()?;
    let sens_idx: Vec<usize> = manifest
        .sensitive_specs
        .iter()
        .map(|s| col(s.source_column()))
        .collect::<Result<_>>()?;
    let label_idx = col(&manifest.label_column)?;
    let stratum_idx = manifest
        .stratum
        .as_ref()
        .map(|s| col(&s.column))
        .transpose()?;

    let used: Vec<usize> = feature_idx
        .iter()
        .chain(&sens_idx)
        .chain(std::iter::once(&label_idx))
        .chain(stratum_idx.iter())
        .copied()
        .collect();
    let missing: HashSet<&str> = manifest.missing_markers.iter().map(String::as_str).collect();

    let mut feature_raw: Vec<Vec<String>> = vec![Vec::new(); feature_idx.len()];
    let mut sens_raw: Vec<Vec<String>> = vec![Vec::new(); sens_idx.len()];
    let mut label_raw = Vec::new();
    let mut stratum_raw = Vec::new();

    for record in reader.records() {
        let record = record?;
        let cell = |i: usize| record.get(i).unwrap_or("");
        if used.iter().any(|&i| missing.contains(cell(i))) {
            continue;
        }
        for (k, &i) in feature_idx.iter().enumerate() {
            feature_raw[k].push(cell(i).to_string());
        }
        for (k, &i) in sens_idx.iter().enumerate() {
            sens_raw[k].push(cell(i).to_string());
        }
        label_raw.push(cell(label_idx).to_string());
        if let Some(i) = stratum_idx {
            stratum_raw.push(cell(i).to_string());
        }
    }
    let n = label_raw.len();
    if n == 0 {
        return Err(FairError::NoRows);
    }

    let labels = encode_labels(&manifest.label_column, &label_raw, manifest.positive_label.as_deref())?;

    let mut attributes = Vec::with_capacity(sens_raw.len());
    let mut sensitive = Vec::with_capacity(sens_raw.len());
    for (spec, raw) in manifest.sensitive_specs.iter().zip(&sens_raw) {
        let mut spec = spec.clone();
        if spec.column.is_empty() {
            spec.column = spec.name.clone();
        }
        if spec.values.is_empty() {
            spec.values = raw.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
        }
        spec.validate()?;
        let codes = raw
            .iter()
            .map(|v| {
                spec.code_of(v).ok_or_else(|| FairError::UnknownCategory {
                    column: spec.column.clone(),
                    value: v.clone(),
                })
            })
            .collect::<Result<Vec<u32>>>()?;
        attributes.push(spec);
        sensitive.push(codes);
    }

    let raw_columns = manifest
        .feature_columns
        .iter()
        .zip(feature_raw)
        .map(|(fc, values)| to_raw_column(fc, values))
        .collect::<Result<Vec<_>>>()?;
    let prepared = preprocess(&raw_columns)?;

    let strata = match &manifest.stratum {
        Some(st) => {
            let values: Vec<String> = stratum_raw
                .iter()
                .cloned()
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let codes = stratum_raw
                .iter()
                .map(|v| values.iter().position(|x| x == v).unwrap() as u32)
                .collect();
            let legitimate = match &st.legitimate_value {
                Some(lv) => Some(values.iter().position(|x| x == lv).ok_or_else(|| {
                    FairError::UnknownCategory {
                        column: st.column.clone(),
                        value: lv.clone(),
                    }
                })? as u32),
                None => None,
            };
            Some(Strata {
                name: st.column.clone(),
                values,
                codes,
                legitimate,
            })
        }
        None => None,
    };

    let dataset = Dataset {
        features: prepared.matrix,
        feature_names: prepared.names,
        feature_groups: prepared.groups,
        attributes,
        sensitive,
        labels,
        strata,
        constant_columns: prepared.constant_columns,
        manifest: Some(manifest.clone()),
    };
    dataset.check()?;
    Ok(dataset)
}

/// Field-by-field differences between a dataset and the expected counts.
pub(crate) fn count_mismatches(
    ds: &Dataset,
    manifest: &DatasetManifest,
    expected: &ExpectedCounts,
) -> Vec<String> {
    let mut diffs = Vec::new();
    fn check(diffs: &mut Vec<String>, field: String, want: usize, got: usize) {
        if want != got {
            diffs.push(format!("{field}: expected {want}, got {got}"));
        }
    }
    if let Some(n) = expected.n {
        check(&mut diffs, "n".into(), n, ds.n_rows());
    }
    if let Some(raw) = expected.n_raw_features {
        check(
            &mut diffs,
            "n_raw_features".into(),
            raw,
            manifest.feature_columns.len() + manifest.sensitive_specs.len(),
        );
    }
    if let Some(prep) = expected.n_prep_features {
        check(&mut diffs, "n_prep_features".into(), prep, ds.n_input_columns());
    }
    for (name, &want) in &expected.value_counts {
        match ds.attribute_index(name) {
            Some(i) => check(&mut diffs, format!("{name}.values"), want, ds.attributes[i].n_values()),
            None => diffs.push(format!("{name}: no such attribute")),
        }
    }
    for (name, &want) in &expected.privileged_sizes {
        match ds.attribute_index(name) {
            Some(i) => {
                let p = ds.attributes[i].privileged_code();
                let got = ds.sensitive[i].iter().filter(|&&c| c == p).count();
                check(&mut diffs, format!("{name}.privileged"), want, got);
            }
            None => diffs.push(format!("{name}: no such attribute")),
        }
    }
    diffs
}

fn encode_labels(column: &str, raw: &[String], positive: Option<&str>) -> Result<Vec<u8>> {
    let distinct: BTreeSet<&str> = raw.iter().map(String::as_str).collect();
    match positive {
        Some(pos) => {
            if distinct.len() > 2 {
                return Err(FairError::NonBinaryLabel {
                    column: column.into(),
                    detail: format!("{} distinct values", distinct.len()),
                });
            }
            Ok(raw.iter().map(|v| u8::from(v == pos)).collect())
        }
        None => raw
            .iter()
            .map(|v| match v.as_str() {
                "0" => Ok(0),
                "1" => Ok(1),
                other => Err(FairError::NonBinaryLabel {
                    column: column.into(),
                    detail: format!("value `{other}` is neither 0 nor 1"),
                }),
            })
            .collect(),
    }
}

fn to_raw_column(fc: &FeatureColumn, values: Vec<String>) -> Result<RawColumn> {
    let parse_all = || -> Option<Vec<f64>> { values.iter().map(|v| v.parse::<f64>().ok()).collect() };
    let name = fc.name().to_string();
    let raw = match fc.kind() {
        ColumnKind::Numeric => {
            let parsed = parse_all().ok_or_else(|| {
                FairError::invalid(format!("numeric column `{name}` has a non-numeric value"))
            })?;
            RawValues::Numeric(parsed)
        }
        ColumnKind::Categorical => RawValues::Categorical {
            categories: fc.categories().cloned(),
            values,
        },
        ColumnKind::Auto => match parse_all() {
            Some(parsed) if fc.categories().is_none() => RawValues::Numeric(parsed),
            _ => RawValues::Categorical {
                categories: fc.categories().cloned(),
                values,
            },
        },
    };
    Ok(RawColumn { name, values: raw })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("data.csv");
        let mut f = std::fs::File::create(&p).unwrap();
        f.write_all(body.as_bytes()).unwrap();
        p
    }

    fn manifest(csv: PathBuf) -> DatasetManifest {
        DatasetManifest {
            csv_path: csv,
            feature_columns: vec![
                FeatureColumn::Name("age".into()),
                FeatureColumn::Name("color".into()),
            ],
            sensitive_specs: vec![SensitiveAttributeSpec {
                name: "sex".into(),
                column: "sex".into(),
                values: vec!["F".into(), "M".into()],
                privileged: "M".into(),
            }],
            label_column: "y".into(),
            positive_label: Some(">50K".into()),
            expected_counts: None,
            missing_markers: default_missing_markers(),
            stratum: None,
        }
    }

    const CSV: &str = "age,color,sex,y\n20,red,M,>50K\n40,blue,F,<=50K\n?,red,F,<=50K\n60, blue ,M,<=50K\n";

    #[test]
    fn ingests_and_rejects_missing_rows() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(write_csv(dir.path(), CSV));
        let ds = ingest(&m).unwrap();
        assert_eq!(ds.n_rows(), 3);
        assert_eq!(ds.labels, vec![1, 0, 0]);
        assert_eq!(ds.feature_names, vec!["age", "color=blue", "color=red"]);
        assert_eq!(ds.features.row(1), &[0.5, 1.0, 0.0]);
        assert_eq!(ds.sensitive[0], vec![1, 0, 1]);
        assert_eq!(ds.n_input_columns(), 4);
    }

    #[test]
    fn empty_csv_is_no_rows() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(write_csv(dir.path(), "age,color,sex,y\n"));
        assert!(matches!(ingest(&m), Err(FairError::NoRows)));
    }

    #[test]
    fn missing_column_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(write_csv(dir.path(), "age,sex,y\n1,M,0\n"));
        assert!(matches!(ingest(&m), Err(FairError::MissingColumn(c)) if c == "color"));
    }

    #[test]
    fn unknown_category_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(write_csv(dir.path(), "age,color,sex,y\n1,red,X,>50K\n"));
        assert!(matches!(ingest(&m), Err(FairError::UnknownCategory { .. })));
    }

    #[test]
    fn non_binary_label_reported() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(write_csv(dir.path(), "age,color,sex,y\n1,red,M,a\n2,red,F,b\n3,red,F,c\n"));
        assert!(matches!(ingest(&m), Err(FairError::NonBinaryLabel { .. })));
        m.positive_label = None;
        assert!(matches!(ingest(&m), Err(FairError::NonBinaryLabel { .. })));
    }

    #[test]
    fn expected_counts_checked() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = manifest(write_csv(dir.path(), CSV));
        m.expected_counts = Some(ExpectedCounts {
            n: Some(3),
            n_raw_features: Some(3),
            n_prep_features: Some(4),
            value_counts: [("sex".to_string(), 2)].into(),
            privileged_sizes: [("sex".to_string(), 2)].into(),
        });
        assert!(ingest(&m).is_ok());
        m.expected_counts.as_mut().unwrap().n = Some(4);
        m.expected_counts.as_mut().unwrap().privileged_sizes.insert("sex".into(), 1);
        match ingest(&m) {
            Err(FairError::CountMismatch(d)) => assert_eq!(d.len(), 2, "{d:?}"),
            other => panic!("expected mismatch, got {other:?}"),
        }
    }

    #[test]
    fn overlapping_columns_rejected() {
        let mut m = manifest(PathBuf::from("x.csv"));
        m.feature_columns.push(FeatureColumn::Name("sex".into()));
        assert!(matches!(m.validate(), Err(FairError::Manifest(_))));
    }

    #[test]
    fn manifest_json_shape() {
        let json = r#"{
            "csv_path": "adult.csv",
            "feature_columns": ["age", {"name": "workclass", "kind": "categorical"}],
            "sensitive_specs": [{"name": "race", "privileged": "White"}],
            "label_column": "income",
            "positive_label": ">50K",
            "expected_counts": {"n": 30162, "privileged_sizes": {"race": 25933}}
        }"#;
        let m: DatasetManifest = serde_json::from_str(json).unwrap();
        assert_eq!(m.feature_columns[1].name(), "workclass");
        assert_eq!(m.missing_markers, default_missing_markers());
        assert_eq!(m.expected_counts.unwrap().privileged_sizes["race"], 25933);
    }

    #[test]
    fn ingest_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(write_csv(dir.path(), CSV));
        assert_eq!(ingest(&m).unwrap().fingerprint(), ingest(&m).unwrap().fingerprint());
    }
}
