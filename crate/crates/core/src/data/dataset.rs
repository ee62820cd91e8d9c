use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Synthetic,
    IdxFile,
}

/// Labelled examples with stable per-example ids.
#[derive(Debug, Clone)]
pub struct Dataset {
    inputs: Tensor<f32>,
    labels: Vec<usize>,
    ids: Vec<u64>,
    classes: usize,
    provenance: Provenance,
    index: HashMap<u64, usize>,
}

impl Dataset {
    /// Builds a top-level dataset; every class must be present and ids unique.
    pub fn new(
        inputs: Tensor<f32>,
        labels: Vec<usize>,
        ids: Vec<u64>,
        classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        let ds = Self::subset_unchecked(inputs, labels, ids, classes, provenance)?;
        let present: HashSet<usize> = ds.labels.iter().copied().collect();
        if present.len() != classes {
            return Err(Error::InvalidParameter(format!(
                "only {} of {classes} classes present",
                present.len()
            )));
        }
        Ok(ds)
    }

    fn subset_unchecked(
        inputs: Tensor<f32>,
        labels: Vec<usize>,
        ids: Vec<u64>,
        classes: usize,
        provenance: Provenance,
    ) -> Result<Self> {
        let n = inputs.rows();
        if labels.len() != n || ids.len() != n {
            return Err(Error::Shape(format!(
                "{n} inputs, {} labels, {} ids",
                labels.len(),
                ids.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidParameter(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }
        let index: HashMap<u64, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        if index.len() != n {
            return Err(Error::InvalidParameter("duplicate example ids".into()));
        }
        Ok(Self {
            inputs,
            labels,
            ids,
            classes,
            provenance,
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> &Tensor<f32> {
        &self.inputs
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.inputs.shape()[1..]
    }

    pub fn position(&self, id: u64) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.index.contains_key(&id)
    }

    /// Rows and labels for a list of row positions.
    pub fn batch(&self, rows: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        (
            self.inputs.gather_rows(rows),
            rows.iter().map(|&r| self.labels[r]).collect(),
        )
    }

    /// Sub-dataset with the given ids, in the given order. `None` when `ids` is empty.
    pub fn select(&self, ids: &[u64]) -> Result<Option<Dataset>> {
        if ids.is_empty() {
            return Ok(None);
        }
        let rows = ids
            .iter()
            .map(|id| {
                self.position(*id)
                    .ok_or_else(|| Error::InvalidParameter(format!("unknown example id {id}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let (inputs, labels) = self.batch(&rows);
        Self::subset_unchecked(inputs, labels, ids.to_vec(), self.classes, self.provenance).map(Some)
    }

    /// Same examples with replaced inputs (e.g. a corrupted copy).
    pub fn with_inputs(&self, inputs: Tensor<f32>) -> Result<Dataset> {
        if inputs.shape() != self.inputs.shape() {
            return Err(Error::Shape("replacement inputs".into()));
        }
        Self::subset_unchecked(
            inputs,
            self.labels.clone(),
            self.ids.clone(),
            self.classes,
            self.provenance,
        )
    }

    /// Concatenation of datasets with disjoint ids.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidParameter("concat of zero datasets".into()))?;
        let tensors: Vec<&Tensor<f32>> = parts.iter().map(|d| &d.inputs).collect();
        let inputs = Tensor::concat_rows(&tensors)?;
        let labels = parts.iter().flat_map(|d| d.labels.iter().copied()).collect();
        let ids = parts.iter().flat_map(|d| d.ids.iter().copied()).collect();
        Self::subset_unchecked(inputs, labels, ids, first.classes, first.provenance)
    }
}
