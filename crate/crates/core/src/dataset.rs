//! Comparison records together with the deduplicated point set they touch.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::domain::{Domain, PreferenceRecord};
use crate::error::Result;

/// Records `M`, unique points `X` (`N` of them) and per-record indices into `X`.
///
/// Points are deduplicated by exact bitwise coordinate equality.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceDataset {
    records: Vec<PreferenceRecord>,
    unique_points: Vec<Vec<f64>>,
    index_pairs: Vec<(usize, usize)>,
    #[serde(skip)]
    lookup: HashMap<Vec<u64>, usize>,
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

impl PreferenceDataset {
    pub fn new() -> Self {
        Self::default()
    }

    /// Build a dataset from records, checking every point against `domain`.
    pub fn from_records(domain: &Domain, records: &[PreferenceRecord]) -> Result<Self> {
        let mut ds = PreferenceDataset::new();
        for r in records {
            ds.push(domain, r.clone())?;
        }
        Ok(ds)
    }

    pub fn push(&mut self, domain: &Domain, record: PreferenceRecord) -> Result<()> {
        let m = self.records.len();
        domain.check(&record.first, 2 * m)?;
        domain.check(&record.second, 2 * m + 1)?;
        let i = self.intern(&record.first);
        let j = self.intern(&record.second);
        self.index_pairs.push((i, j));
        self.records.push(record);
        Ok(())
    }

    /// Index of `x` in the unique point list, inserting it if new.
    pub fn intern(&mut self, x: &[f64]) -> usize {
        if self.lookup.len() != self.unique_points.len() {
            self.rebuild_lookup();
        }
        let k = key(x);
        if let Some(&i) = self.lookup.get(&k) {
            return i;
        }
        let i = self.unique_points.len();
        self.unique_points.push(x.to_vec());
        self.lookup.insert(k, i);
        i
    }

    pub fn index_of(&self, x: &[f64]) -> Option<usize> {
        if self.lookup.len() == self.unique_points.len() {
            self.lookup.get(&key(x)).copied()
        } else {
            let k = key(x);
            self.unique_points.iter().position(|p| key(p) == k)
        }
    }

    fn rebuild_lookup(&mut self) {
        self.lookup = self
            .unique_points
            .iter()
            .enumerate()
            .map(|(i, p)| (key(p), i))
            .collect();
    }

    pub fn records(&self) -> &[PreferenceRecord] {
        &self.records
    }

    pub fn unique_points(&self) -> &[Vec<f64>] {
        &self.unique_points
    }

    pub fn index_pairs(&self) -> &[(usize, usize)] {
        &self.index_pairs
    }

    /// `M`
    pub fn num_records(&self) -> usize {
        self.records.len()
    }

    /// `N`
    pub fn num_points(&self) -> usize {
        self.unique_points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Deduplicate the points of `records` into a [`PreferenceDataset`].
pub fn dedupe_points(domain: &Domain, records: &[PreferenceRecord]) -> Result<PreferenceDataset> {
    PreferenceDataset::from_records(domain, records)
}
