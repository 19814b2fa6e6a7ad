use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::FeatureMatrix;
use crate::error::{FairError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum RawValues {
    Numeric(Vec<f64>),
    /// `categories` fixes the indicator order; when absent, sorted distinct values are used.
    Categorical {
        values: Vec<String>,
        categories: Option<Vec<String>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawColumn {
    pub name: String,
    pub values: RawValues,
}

impl RawColumn {
    pub fn numeric(name: impl Into<String>, values: Vec<f64>) -> Self {
        RawColumn {
            name: name.into(),
            values: RawValues::Numeric(values),
        }
    }

    pub fn categorical(name: impl Into<String>, values: Vec<String>) -> Self {
        RawColumn {
            name: name.into(),
            values: RawValues::Categorical {
                values,
                categories: None,
            },
        }
    }

    fn len(&self) -> usize {
        match &self.values {
            RawValues::Numeric(v) => v.len(),
            RawValues::Categorical { values, .. } => values.len(),
        }
    }
}

/// Contiguous block of prepared columns derived from one raw column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureGroup {
    pub name: String,
    pub start: usize,
    pub len: usize,
}

impl FeatureGroup {
    pub fn columns(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub matrix: FeatureMatrix,
    pub names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
    /// Numeric columns with min == max; they are scaled to 0.
    pub constant_columns: Vec<String>,
}

/// One-hot encodes categoricals and min-max scales numerics to [0,1].
/// Columns keep input order; indicator columns follow category order.
pub fn preprocess(columns: &[RawColumn]) -> Result<Prepared> {
    let n = columns.first().map_or(0, RawColumn::len);
    if let Some(bad) = columns.iter().find(|c| c.len() != n) {
        return Err(FairError::LengthMismatch {
            expected: n,
            got: bad.len(),
        });
    }

    let mut blocks: Vec<Vec<f64>> = Vec::new();
    let mut names = Vec::new();
    let mut groups = Vec::new();
    let mut constant_columns = Vec::new();

    for col in columns {
        let start = names.len();
        match &col.values {
            RawValues::Numeric(values) => {
                if let Some(v) = values.iter().find(|v| !v.is_finite()) {
                    return Err(FairError::invalid(format!(
                        "non-finite value {v} in numeric column `{}`",
                        col.name
                    )));
                }
                let (lo, hi) = values
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                        (lo.min(v), hi.max(v))
                    });
                let scaled = if n == 0 || lo == hi {
                    if n > 0 {
                        constant_columns.push(col.name.clone());
                    }
                    vec![0.0; n]
                } else {
                    let span = hi - lo;
                    values
                        .iter()
                        .map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
                        .collect()
                };
                blocks.push(scaled);
                names.push(col.name.clone());
            }
            RawValues::Categorical { values, categories } => {
                let cats: Vec<String> = match categories {
                    Some(c) => c.clone(),
                    None => values
                        .iter()
                        .cloned()
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect(),
                };
                let mut indicators = vec![vec![0.0; n]; cats.len()];
                for (r, v) in values.iter().enumerate() {
                    let k = cats.iter().position(|c| c == v).ok_or_else(|| {
                        FairError::UnknownCategory {
                            column: col.name.clone(),
                            value: v.clone(),
                        }
                    })?;
                    indicators[k][r] = 1.0;
                }
                for (cat, ind) in cats.iter().zip(indicators) {
                    blocks.push(ind);
                    names.push(format!("{}={}", col.name, cat));
                }
            }
        }
        groups.push(FeatureGroup {
            name: col.name.clone(),
            start,
            len: names.len() - start,
        });
    }

    let cols = blocks.len();
    let mut data = Vec::with_capacity(n * cols);
    for r in 0..n {
        data.extend(blocks.iter().map(|b| b[r]));
    }
    Ok(Prepared {
        matrix: FeatureMatrix::new(n, cols, data),
        names,
        groups,
        constant_columns,
    })
}
