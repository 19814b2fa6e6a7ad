use serde::{Deserialize, Serialize};

use super::{Dataset, SensitiveAttributeSpec};
use crate::error::{FairError, Result};

/// Largest super attribute built unless the caller raises the cap.
pub const DEFAULT_SUPER_CAP: usize = 4096;

/// Rows of a dataset split by the values of one attribute.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupPartition {
    pub attribute: usize,
    pub privileged: u32,
    /// `groups[j]` lists the rows with code `j`, ascending.
    pub groups: Vec<Vec<usize>>,
    /// Per-row group code.
    pub codes: Vec<u32>,
}

impl GroupPartition {
    /// Panics if a code is outside `0..n_values`; codes are validated upstream.
    pub fn from_codes(codes: &[u32], n_values: usize, privileged: u32) -> Self {
        let mut groups = vec![Vec::new(); n_values];
        for (r, &c) in codes.iter().enumerate() {
            groups[c as usize].push(r);
        }
        GroupPartition {
            attribute: 0,
            privileged,
            groups,
            codes: codes.to_vec(),
        }
    }

    pub fn with_attribute(mut self, attribute: usize) -> Self {
        self.attribute = attribute;
        self
    }

    pub fn n_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn n_rows(&self) -> usize {
        self.codes.len()
    }

    pub fn group(&self, j: usize) -> &[usize] {
        &self.groups[j]
    }

    /// All rows outside group `j`, ascending.
    pub fn complement(&self, j: usize) -> Vec<usize> {
        self.codes
            .iter()
            .enumerate()
            .filter(|(_, &c)| c as usize != j)
            .map(|(r, _)| r)
            .collect()
    }

    /// Groups without any rows.
    pub fn empty_groups(&self) -> Vec<usize> {
        (0..self.groups.len())
            .filter(|&j| self.groups[j].is_empty())
            .collect()
    }

    pub fn nonempty_groups(&self) -> usize {
        self.groups.iter().filter(|g| !g.is_empty()).count()
    }

    /// Privileged (code 1) versus everyone else (code 0).
    pub fn binarised(&self) -> GroupPartition {
        let codes: Vec<u32> = self
            .codes
            .iter()
            .map(|&c| u32::from(c == self.privileged))
            .collect();
        GroupPartition::from_codes(&codes, 2, 1).with_attribute(self.attribute)
    }

    /// Restricts to the given rows; row indices are renumbered 0..rows.len().
    pub fn restrict(&self, rows: &[usize]) -> GroupPartition {
        let codes: Vec<u32> = rows.iter().map(|&r| self.codes[r]).collect();
        GroupPartition::from_codes(&codes, self.groups.len(), self.privileged)
            .with_attribute(self.attribute)
    }
}

/// Cartesian product of several attributes as one attribute. Codes are
/// mixed-radix with the first listed attribute most significant.
pub fn degenerate_super_attribute(
    dataset: &Dataset,
    attributes: &[usize],
    cap: usize,
) -> Result<(SensitiveAttributeSpec, Vec<u32>)> {
    if attributes.len() < 2 {
        return Err(FairError::invalid("a super attribute needs at least two attributes"));
    }
    if let Some(&bad) = attributes.iter().find(|&&i| i >= dataset.n_attributes()) {
        return Err(FairError::invalid(format!("attribute index {bad} out of range")));
    }
    let specs: Vec<&SensitiveAttributeSpec> = attributes.iter().map(|&i| &dataset.attributes[i]).collect();
    let count = specs
        .iter()
        .try_fold(1usize, |acc, s| acc.checked_mul(s.n_values()))
        .unwrap_or(usize::MAX);
    if count > cap {
        return Err(FairError::SuperAttributeTooLarge { count, cap });
    }

    let mut values = vec![String::new()];
    for s in &specs {
        values = values
            .iter()
            .flat_map(|prefix| {
                s.values.iter().map(move |v| {
                    if prefix.is_empty() {
                        v.clone()
                    } else {
                        format!("{prefix}|{v}")
                    }
                })
            })
            .collect();
    }
    let privileged = specs
        .iter()
        .map(|s| s.privileged.as_str())
        .collect::<Vec<_>>()
        .join("|");
    let name = specs.iter().map(|s| s.name.as_str()).collect::<Vec<_>>().join("*");

    let n = dataset.n_rows();
    let codes = (0..n)
        .map(|r| {
            attributes.iter().zip(&specs).fold(0u32, |acc, (&i, s)| {
                acc * s.n_values() as u32 + dataset.sensitive[i][r]
            })
        })
        .collect();
    let spec = SensitiveAttributeSpec {
        column: name.clone(),
        name,
        values,
        privileged,
    };
    debug_assert_eq!(spec.n_values(), count);
    Ok((spec, codes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::FeatureMatrix;

    fn dataset_with(sizes: &[usize]) -> Dataset {
        let n = 8;
        Dataset::new(
            FeatureMatrix::zeros(n, 1),
            vec!["x".into()],
            sizes
                .iter()
                .enumerate()
                .map(|(i, &k)| SensitiveAttributeSpec::numbered(format!("a{i}"), k, 0))
                .collect(),
            sizes
                .iter()
                .map(|&k| (0..n).map(|r| (r % k) as u32).collect())
                .collect(),
            vec![0; n],
        )
        .unwrap()
    }

    #[test]
    fn partition_of_binary_codes() {
        let p = GroupPartition::from_codes(&[0, 1, 0, 1], 2, 1);
        assert_eq!(p.group(0), &[0, 2]);
        assert_eq!(p.group(1), &[1, 3]);
        assert_eq!(p.complement(0), vec![1, 3]);
    }

    #[test]
    fn single_value_leaves_other_groups_empty() {
        let p = GroupPartition::from_codes(&[2, 2, 2], 3, 0);
        assert_eq!(p.group(2).len(), 3);
        assert_eq!(p.empty_groups(), vec![0, 1]);
        assert_eq!(p.nonempty_groups(), 1);
    }

    #[test]
    fn super_attribute_value_counts() {
        let ds = dataset_with(&[2, 6]);
        let (spec, codes) = degenerate_super_attribute(&ds, &[0, 1], DEFAULT_SUPER_CAP).unwrap();
        assert_eq!(spec.n_values(), 12);
        assert_eq!(spec.privileged, "0|0");
        assert_eq!(spec.privileged_code(), 0);
        assert!(codes.iter().all(|&c| c < 12));

        let ds = dataset_with(&[2, 6, 3]);
        let (spec, _) = degenerate_super_attribute(&ds, &[0, 1, 2], DEFAULT_SUPER_CAP).unwrap();
        assert_eq!(spec.n_values(), 36);

        let ds = dataset_with(&[2, 2]);
        let (spec, codes) = degenerate_super_attribute(&ds, &[0, 1], DEFAULT_SUPER_CAP).unwrap();
        assert_eq!(spec.values, vec!["0|0", "0|1", "1|0", "1|1"]);
        // row 1: a0=1, a1=1 -> 3
        assert_eq!(codes[1], 3);
    }

    #[test]
    fn super_attribute_cap() {
        let ds = dataset_with(&[2, 6, 3]);
        assert!(matches!(
            degenerate_super_attribute(&ds, &[0, 1, 2], 35),
            Err(FairError::SuperAttributeTooLarge { count: 36, cap: 35 })
        ));
        assert!(degenerate_super_attribute(&ds, &[0], 100).is_err());
    }

    #[test]
    fn binarised_partition() {
        let p = GroupPartition::from_codes(&[0, 1, 2, 1], 3, 1).binarised();
        assert_eq!(p.group(1), &[1, 3]);
        assert_eq!(p.group(0), &[0, 2]);
    }
}
