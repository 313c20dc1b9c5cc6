use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cluster or class assignment of items, labels in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    assignments: Vec<usize>,
    k: usize,
}

impl Partition {
    /// `k` is the number of distinct labels actually used.
    pub fn new(assignments: Vec<usize>) -> Self {
        let k = assignments.iter().copied().max().map_or(0, |m| m + 1);
        Self { assignments, k }
    }

    pub fn with_k(assignments: Vec<usize>, k: usize) -> Result<Self> {
        if let Some(&bad) = assignments.iter().find(|&&a| a >= k) {
            return Err(Error::IndexOutOfRange(format!("label {bad} not in [0, {k})")));
        }
        Ok(Self { assignments, k })
    }

    pub fn assignments(&self) -> &[usize] {
        &self.assignments
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledItems {
    pub item_ids: Vec<String>,
    pub labels: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct LabelRow {
    item_id: String,
    label: String,
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<LabeledItems> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Parse {
                location: path.display().to_string(),
                message: format!("{other:?}"),
            },
        })?;
    let mut items = LabeledItems {
        item_ids: Vec::new(),
        labels: Vec::new(),
    };
    for row in reader.deserialize::<LabelRow>() {
        let row = row.map_err(|e| Error::Parse {
            location: format!("{}:{}", path.display(), e.position().map_or(0, |p| p.line())),
            message: e.to_string(),
        })?;
        items.item_ids.push(row.item_id);
        items.labels.push(row.label);
    }
    Ok(items)
}

pub fn write_labels(path: impl AsRef<Path>, item_ids: &[String], labels: &[String]) -> Result<()> {
    if item_ids.len() != labels.len() {
        return Err(Error::InconsistentLengths(format!(
            "{} item ids vs {} labels",
            item_ids.len(),
            labels.len()
        )));
    }
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse {
        location: path.display().to_string(),
        message: e.to_string(),
    })?;
    for (item_id, label) in item_ids.iter().zip(labels) {
        w.serialize(LabelRow {
            item_id: item_id.clone(),
            label: label.clone(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Encodes several label vectors against one shared, sorted dictionary so
/// that equal strings get equal indices across vectors.
pub fn encode_shared(label_sets: &[&[String]]) -> (Vec<Vec<usize>>, Vec<String>) {
    let mut dict: BTreeMap<&str, usize> = BTreeMap::new();
    for set in label_sets {
        for l in set.iter() {
            dict.entry(l.as_str()).or_insert(0);
        }
    }
    for (i, v) in dict.values_mut().enumerate() {
        *v = i;
    }
    let encoded = label_sets
        .iter()
        .map(|set| set.iter().map(|l| dict[l.as_str()]).collect())
        .collect();
    (encoded, dict.keys().map(|s| s.to_string()).collect())
}
