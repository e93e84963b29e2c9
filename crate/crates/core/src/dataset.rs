//! Paired two-domain records and deterministic splitting.

use alloc::collections::BTreeMap;
use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Which side of a pair a vector comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Domain {
    Vision,
    Language,
}

impl Domain {
    pub fn other(self) -> Domain {
        match self {
            Domain::Vision => Domain::Language,
            Domain::Language => Domain::Vision,
        }
    }
}

/// One vision/language correspondence.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PairRecord {
    pub pair_id: String,
    #[cfg_attr(
        feature = "serde",
        serde(rename = "class", default, skip_serializing_if = "Option::is_none")
    )]
    pub class_label: Option<String>,
    pub vision: Vec<f64>,
    pub language: Vec<f64>,
}

impl PairRecord {
    pub fn vector(&self, domain: Domain) -> &[f64] {
        match domain {
            Domain::Vision => &self.vision,
            Domain::Language => &self.language,
        }
    }

    fn check_finite(&self) -> Result<()> {
        if self.vision.is_empty() || self.language.is_empty() {
            return Err(Error::InvalidArgument(alloc::format!(
                "pair `{}` has an empty vector",
                self.pair_id
            )));
        }
        if !self.vision.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("vision vector"));
        }
        if !self.language.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("language vector"));
        }
        Ok(())
    }
}

/// An ordered collection of pair records sharing per-domain dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<PairRecord>,
    dim_vision: usize,
    dim_language: usize,
}

impl Dataset {
    /// Validates the records and builds a dataset. Order is preserved.
    pub fn new(records: Vec<PairRecord>) -> Result<Self> {
        let first = records.first().ok_or(Error::EmptyDataset)?;
        let dim_vision = first.vision.len();
        let dim_language = first.language.len();
        let mut seen = BTreeSet::new();
        for rec in &records {
            Self::check_record(rec, dim_vision, dim_language)?;
            if !seen.insert(rec.pair_id.as_str()) {
                return Err(Error::DuplicatePairId(rec.pair_id.clone()));
            }
        }
        Ok(Self {
            records,
            dim_vision,
            dim_language,
        })
    }

    /// Checks a single record against expected dimensions.
    pub fn check_record(rec: &PairRecord, dim_vision: usize, dim_language: usize) -> Result<()> {
        rec.check_finite()?;
        if rec.vision.len() != dim_vision {
            return Err(Error::DimensionMismatch {
                expected: dim_vision,
                actual: rec.vision.len(),
            });
        }
        if rec.language.len() != dim_language {
            return Err(Error::DimensionMismatch {
                expected: dim_language,
                actual: rec.language.len(),
            });
        }
        Ok(())
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<PairRecord> {
        self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim_vision(&self) -> usize {
        self.dim_vision
    }

    pub fn dim_language(&self) -> usize {
        self.dim_language
    }

    pub fn dim(&self, domain: Domain) -> usize {
        match domain {
            Domain::Vision => self.dim_vision,
            Domain::Language => self.dim_language,
        }
    }

    pub fn vector(&self, index: usize, domain: Domain) -> &[f64] {
        self.records[index].vector(domain)
    }

    /// True when every record carries a class label.
    pub fn is_labeled(&self) -> bool {
        self.records.iter().all(|r| r.class_label.is_some())
    }

    /// Record indices grouped by class label, in label order.
    pub fn class_index(&self) -> BTreeMap<Option<&str>, Vec<usize>> {
        let mut groups: BTreeMap<Option<&str>, Vec<usize>> = BTreeMap::new();
        for (i, rec) in self.records.iter().enumerate() {
            groups
                .entry(rec.class_label.as_deref())
                .or_default()
                .push(i);
        }
        groups
    }

    /// Builds a sub-dataset from record indices, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            dim_vision: self.dim_vision,
            dim_language: self.dim_language,
        }
    }
}

/// Splits `ds` into (train, test).
///
/// Stratified by class label when any record is labeled: each class sends
/// `round(test_fraction * n_c)` records to the test side, clamped so both sides
/// get at least one. Records keep their original relative order on each side.
pub fn split_dataset(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    if ds.len() < 2 {
        return Err(Error::InvalidArgument(
            "split needs at least 2 records".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let stratify = ds.records.iter().any(|r| r.class_label.is_some());
    let groups: Vec<Vec<usize>> = if stratify {
        ds.class_index().into_values().collect()
    } else {
        alloc::vec![(0..ds.len()).collect()]
    };

    let mut test = Vec::new();
    for mut members in groups {
        if members.len() < 2 {
            let label = ds.records[members[0]]
                .class_label
                .clone()
                .unwrap_or_default();
            return Err(Error::SingletonClass(label));
        }
        let n = members.len();
        let n_test = (libm::round(test_fraction * n as f64) as usize).clamp(1, n - 1);
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..n_test]);
    }
    test.sort_unstable();
    let mut is_test = alloc::vec![false; ds.len()];
    for &i in &test {
        is_test[i] = true;
    }
    let train: Vec<usize> = (0..ds.len()).filter(|&i| !is_test[i]).collect();
    Ok((ds.subset(&train), ds.subset(&test)))
}
