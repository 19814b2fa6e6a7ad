//! Dataset representation, ingestion, preprocessing, group partitioning,
//! super-attribute degeneration and sensitive-attribute perturbation.

mod manifest;
mod partition;
mod perturb;
mod preprocess;
pub mod synthetic;

pub use manifest::{
    ingest, ColumnKind, DatasetManifest, ExpectedCounts, FeatureColumn, StratumSpec,
};
pub(crate) use manifest::{count_mismatches, ingest_unchecked};
pub use partition::{degenerate_super_attribute, GroupPartition, DEFAULT_SUPER_CAP};
pub use perturb::{perturb, Perturbation, PerturbationPolicy};
pub use preprocess::{preprocess, FeatureGroup, Prepared, RawColumn, RawValues};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{FairError, Result};

/// A multi-valued sensitive attribute. Codes are positions in `values`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SensitiveAttributeSpec {
    pub name: String,
    #[serde(default)]
    pub column: String,
    /// Ordered category values. Left empty in a manifest, it is filled from
    /// the data in sorted order.
    #[serde(default)]
    pub values: Vec<String>,
    pub privileged: String,
}

impl SensitiveAttributeSpec {
    pub fn new(name: impl Into<String>, values: Vec<String>, privileged: impl Into<String>) -> Self {
        let name = name.into();
        SensitiveAttributeSpec {
            column: name.clone(),
            name,
            values,
            privileged: privileged.into(),
        }
    }

    /// Convenience for synthetic data: values "0".."k-1" with the given privileged code.
    pub fn numbered(name: impl Into<String>, n_values: usize, privileged: u32) -> Self {
        let values = (0..n_values).map(|v| v.to_string()).collect();
        SensitiveAttributeSpec::new(name, values, privileged.to_string())
    }

    pub fn n_values(&self) -> usize {
        self.values.len()
    }

    pub fn code_of(&self, value: &str) -> Option<u32> {
        self.values.iter().position(|v| v == value).map(|p| p as u32)
    }

    pub fn privileged_code(&self) -> u32 {
        self.code_of(&self.privileged)
            .expect("validated spec has privileged among its values")
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() < 2 {
            return Err(FairError::Manifest(format!(
                "attribute `{}` needs at least 2 values, has {}",
                self.name,
                self.values.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for v in &self.values {
            if !seen.insert(v) {
                return Err(FairError::Manifest(format!(
                    "attribute `{}` lists value `{v}` twice",
                    self.name
                )));
            }
        }
        if self.code_of(&self.privileged).is_none() {
            return Err(FairError::Manifest(format!(
                "privileged value `{}` is not among the values of `{}`",
                self.privileged, self.name
            )));
        }
        Ok(())
    }
}

/// Dense row-major matrix of reals.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape mismatch");
        FeatureMatrix { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        FeatureMatrix::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.len(), cols, "ragged rows");
            data.extend_from_slice(r);
        }
        FeatureMatrix::new(rows.len(), cols, data)
    }

    pub fn n_rows(&self) -> usize {
        self.rows
    }

    pub fn n_cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(rows.len() * self.cols);
        for &r in rows {
            data.extend_from_slice(self.row(r));
        }
        FeatureMatrix::new(rows.len(), self.cols, data)
    }

    pub fn select_columns(&self, cols: &[usize]) -> FeatureMatrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for r in 0..self.rows {
            let row = self.row(r);
            data.extend(cols.iter().map(|&c| row[c]));
        }
        FeatureMatrix::new(self.rows, cols.len(), data)
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }
}

/// Supplementary "legitimate factor" column used by conditional statistical
/// parity and its ratio form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strata {
    pub name: String,
    pub values: Vec<String>,
    pub codes: Vec<u32>,
    /// Code treated as `l(x) = 1` by the ratio form, when set.
    pub legitimate: Option<u32>,
}

impl Strata {
    pub fn legitimate_mask(&self) -> Option<Vec<bool>> {
        self.legitimate
            .map(|l| self.codes.iter().map(|&c| c == l).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    /// Preprocessed non-sensitive features, every entry in [0,1].
    pub features: FeatureMatrix,
    pub feature_names: Vec<String>,
    /// Prepared columns grouped by the raw column they came from.
    pub feature_groups: Vec<FeatureGroup>,
    pub attributes: Vec<SensitiveAttributeSpec>,
    /// `sensitive[i][r]` is the code of attribute `i` for row `r`.
    pub sensitive: Vec<Vec<u32>>,
    pub labels: Vec<u8>,
    pub strata: Option<Strata>,
    pub constant_columns: Vec<String>,
    pub manifest: Option<DatasetManifest>,
}

impl Dataset {
    /// Assembles a dataset and checks the shape invariants.
    pub fn new(
        features: FeatureMatrix,
        feature_names: Vec<String>,
        attributes: Vec<SensitiveAttributeSpec>,
        sensitive: Vec<Vec<u32>>,
        labels: Vec<u8>,
    ) -> Result<Self> {
        let feature_groups = feature_names
            .iter()
            .enumerate()
            .map(|(i, name)| FeatureGroup {
                name: name.clone(),
                start: i,
                len: 1,
            })
            .collect();
        let ds = Dataset {
            features,
            feature_names,
            feature_groups,
            attributes,
            sensitive,
            labels,
            strata: None,
            constant_columns: Vec::new(),
            manifest: None,
        };
        ds.check()?;
        Ok(ds)
    }

    pub fn check(&self) -> Result<()> {
        let n = self.labels.len();
        if n == 0 {
            return Err(FairError::NoRows);
        }
        if self.features.n_rows() != n {
            return Err(FairError::LengthMismatch {
                expected: n,
                got: self.features.n_rows(),
            });
        }
        if self.feature_names.len() != self.features.n_cols() {
            return Err(FairError::LengthMismatch {
                expected: self.features.n_cols(),
                got: self.feature_names.len(),
            });
        }
        if self.attributes.is_empty() {
            return Err(FairError::invalid("at least one sensitive attribute is required"));
        }
        if self.attributes.len() != self.sensitive.len() {
            return Err(FairError::LengthMismatch {
                expected: self.attributes.len(),
                got: self.sensitive.len(),
            });
        }
        for (spec, col) in self.attributes.iter().zip(&self.sensitive) {
            spec.validate()?;
            if col.len() != n {
                return Err(FairError::LengthMismatch {
                    expected: n,
                    got: col.len(),
                });
            }
            if let Some(&bad) = col.iter().find(|&&c| c as usize >= spec.n_values()) {
                return Err(FairError::UnknownCategory {
                    column: spec.name.clone(),
                    value: bad.to_string(),
                });
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y > 1) {
            return Err(FairError::NonBinaryLabel {
                column: "label".into(),
                detail: format!("value {bad}"),
            });
        }
        if self.features.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(FairError::invalid("preprocessed features must lie in [0,1]"));
        }
        Ok(())
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_attributes(&self) -> usize {
        self.attributes.len()
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn partition(&self, attribute: usize) -> GroupPartition {
        let spec = &self.attributes[attribute];
        GroupPartition::from_codes(
            &self.sensitive[attribute],
            spec.n_values(),
            spec.privileged_code(),
        )
        .with_attribute(attribute)
    }

    /// Model input: prepared features followed by one column per sensitive
    /// attribute holding `code / (n_values - 1)`.
    pub fn design_matrix(&self) -> FeatureMatrix {
        self.design_matrix_with(&self.sensitive)
    }

    pub fn design_matrix_with(&self, sensitive: &[Vec<u32>]) -> FeatureMatrix {
        let n = self.n_rows();
        let d = self.features.n_cols();
        let cols = d + self.attributes.len();
        let mut data = Vec::with_capacity(n * cols);
        for r in 0..n {
            data.extend_from_slice(self.features.row(r));
            for (spec, col) in self.attributes.iter().zip(sensitive) {
                data.push(encode_code(col[r], spec.n_values()));
            }
        }
        FeatureMatrix::new(n, cols, data)
    }

    /// Number of model-input columns (prepared features plus one per attribute).
    pub fn n_input_columns(&self) -> usize {
        self.features.n_cols() + self.attributes.len()
    }

    /// Rows restricted to `rows`, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(rows),
            feature_names: self.feature_names.clone(),
            feature_groups: self.feature_groups.clone(),
            attributes: self.attributes.clone(),
            sensitive: self
                .sensitive
                .iter()
                .map(|col| rows.iter().map(|&r| col[r]).collect())
                .collect(),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            strata: self.strata.as_ref().map(|s| Strata {
                codes: rows.iter().map(|&r| s.codes[r]).collect(),
                ..s.clone()
            }),
            constant_columns: self.constant_columns.clone(),
            manifest: self.manifest.clone(),
        }
    }

    /// Appends a degenerated super attribute built from `attributes`.
    pub fn with_super_attribute(&self, attributes: &[usize], cap: usize) -> Result<(Dataset, usize)> {
        let (spec, codes) = degenerate_super_attribute(self, attributes, cap)?;
        let mut out = self.clone();
        out.attributes.push(spec);
        out.sensitive.push(codes);
        let idx = out.attributes.len() - 1;
        Ok((out, idx))
    }

    /// Copy with attribute `i` reduced to privileged (code 0) versus the rest.
    pub fn with_binarised_attribute(&self, i: usize) -> Dataset {
        let spec = &self.attributes[i];
        let p = spec.privileged_code();
        let mut out = self.clone();
        out.attributes[i] = SensitiveAttributeSpec {
            values: vec![spec.privileged.clone(), format!("not {}", spec.privileged)],
            ..spec.clone()
        };
        out.sensitive[i] = self.sensitive[i].iter().map(|&c| u32::from(c != p)).collect();
        out
    }

    /// 64-bit fingerprint (hex) over the canonical content of the dataset.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_rows() as u64).to_le_bytes());
        h.update((self.features.n_cols() as u64).to_le_bytes());
        for name in &self.feature_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for v in self.features.as_slice() {
            h.update(v.to_bits().to_le_bytes());
        }
        for (spec, col) in self.attributes.iter().zip(&self.sensitive) {
            h.update(spec.name.as_bytes());
            h.update([0u8]);
            for v in &spec.values {
                h.update(v.as_bytes());
                h.update([0u8]);
            }
            h.update(spec.privileged.as_bytes());
            h.update([1u8]);
            for c in col {
                h.update(c.to_le_bytes());
            }
        }
        h.update(&self.labels);
        let digest = h.finalize();
        let mut bytes = [0u8; 8];
        bytes.copy_from_slice(&digest[..8]);
        format!("{:016x}", u64::from_be_bytes(bytes))
    }
}

pub(crate) fn encode_code(code: u32, n_values: usize) -> f64 {
    if n_values <= 1 {
        0.0
    } else {
        code as f64 / (n_values - 1) as f64
    }
}

pub(crate) fn decode_code(value: f64, n_values: usize) -> u32 {
    if n_values <= 1 {
        0
    } else {
        (value * (n_values - 1) as f64).round().clamp(0.0, (n_values - 1) as f64) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(
            FeatureMatrix::from_rows(&[vec![0.0], vec![0.5], vec![1.0], vec![0.25]]),
            vec!["x".into()],
            vec![SensitiveAttributeSpec::numbered("a", 3, 2)],
            vec![vec![0, 1, 2, 2]],
            vec![0, 1, 1, 0],
        )
        .unwrap()
    }

    #[test]
    fn design_matrix_appends_scaled_codes() {
        let ds = tiny();
        let m = ds.design_matrix();
        assert_eq!(m.n_cols(), 2);
        assert_eq!(m.row(1), &[0.5, 0.5]);
        assert_eq!(m.row(2), &[1.0, 1.0]);
        for c in 0..3 {
            assert_eq!(decode_code(encode_code(c, 3), 3), c);
        }
    }

    #[test]
    fn fingerprint_is_stable_and_content_sensitive() {
        let a = tiny();
        let b = tiny();
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
        let mut c = tiny();
        c.labels[0] = 1;
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn rejects_out_of_range_features_and_codes() {
        let bad = Dataset::new(
            FeatureMatrix::from_rows(&[vec![1.5]]),
            vec!["x".into()],
            vec![SensitiveAttributeSpec::numbered("a", 2, 1)],
            vec![vec![0]],
            vec![0],
        );
        assert!(bad.is_err());
        let bad = Dataset::new(
            FeatureMatrix::from_rows(&[vec![0.5]]),
            vec!["x".into()],
            vec![SensitiveAttributeSpec::numbered("a", 2, 1)],
            vec![vec![7]],
            vec![0],
        );
        assert!(matches!(bad, Err(FairError::UnknownCategory { .. })));
    }

    #[test]
    fn spec_validation() {
        let mut s = SensitiveAttributeSpec::numbered("a", 2, 1);
        assert!(s.validate().is_ok());
        s.privileged = "9".into();
        assert!(s.validate().is_err());
        let dup = SensitiveAttributeSpec::new("a", vec!["x".into(), "x".into()], "x");
        assert!(dup.validate().is_err());
        let single = SensitiveAttributeSpec::new("a", vec!["x".into()], "x");
        assert!(single.validate().is_err());
    }
}
