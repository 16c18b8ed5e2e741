//! Multimodal client datasets: a synthetic generator and a CSV loader.

mod csv_loader;
mod synthetic;

pub use csv_loader::{load_csv, CsvSchema};
pub use synthetic::{generate, DatasetSpec, ModalitySpec, NaturalParams, Regime};

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalitySplit {
    pub train: Array2<f64>,
    pub test: Array2<f64>,
}

/// One client's local data. Rows are aligned across modalities: row `i` of
/// every modality's train matrix is the same sample, labelled `train_labels[i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientDataset {
    pub client_id: usize,
    /// Indexed by global modality id; `None` where the client lacks the modality.
    pub modalities: Vec<Option<ModalitySplit>>,
    pub train_labels: Vec<usize>,
    pub test_labels: Vec<usize>,
    /// Heterogeneity group the client was drawn from (0 for loaded data).
    pub group: usize,
}

impl ClientDataset {
    /// Global ids of the modalities this client holds, ascending.
    pub fn modality_mask(&self) -> Vec<usize> {
        self.modalities
            .iter()
            .enumerate()
            .filter_map(|(m, s)| s.as_ref().map(|_| m))
            .collect()
    }

    pub fn has_modality(&self, m: usize) -> bool {
        self.modalities.get(m).is_some_and(Option::is_some)
    }

    pub fn modality(&self, m: usize) -> Result<&ModalitySplit> {
        self.modalities
            .get(m)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::Data(format!("client {} has no modality {m}", self.client_id)))
    }

    /// `|D^k_m|`: training rows held for modality `m` (0 when absent).
    pub fn sample_count(&self, m: usize) -> usize {
        self.modalities
            .get(m)
            .and_then(Option::as_ref)
            .map_or(0, |s| s.train.nrows())
    }

    pub fn train_len(&self) -> usize {
        self.train_labels.len()
    }

    pub fn test_len(&self) -> usize {
        self.test_labels.len()
    }

    /// Features of modality `m`, or a zero matrix of width `dim` when the
    /// client lacks it.
    pub fn features_or_zeros(&self, m: usize, dim: usize, train: bool) -> Array2<f64> {
        match self.modalities.get(m).and_then(Option::as_ref) {
            Some(s) if train => s.train.clone(),
            Some(s) => s.test.clone(),
            None => {
                let n = if train { self.train_len() } else { self.test_len() };
                Array2::zeros((n, dim))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub clients: Vec<ClientDataset>,
    pub num_classes: usize,
    /// Feature width per global modality.
    pub feature_dims: Vec<usize>,
}

impl Dataset {
    pub fn num_modalities(&self) -> usize {
        self.feature_dims.len()
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    /// Checks widths, row alignment and label ranges.
    pub fn validate(&self) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::Data("dataset has no clients".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Data("need at least two classes".into()));
        }
        for c in &self.clients {
            if c.modalities.len() != self.num_modalities() {
                return Err(Error::Data(format!(
                    "client {} lists {} modalities, dataset has {}",
                    c.client_id,
                    c.modalities.len(),
                    self.num_modalities()
                )));
            }
            if c.modality_mask().is_empty() {
                return Err(Error::Data(format!("client {} has no modalities", c.client_id)));
            }
            if c.train_len() == 0 {
                return Err(Error::Data(format!("client {} has no training rows", c.client_id)));
            }
            for (m, split) in c.modalities.iter().enumerate() {
                let Some(split) = split else { continue };
                let dim = self.feature_dims[m];
                if split.train.ncols() != dim || split.test.ncols() != dim {
                    return Err(Error::Dimension(format!(
                        "client {} modality {m}: width {} / {} but expected {dim}",
                        c.client_id,
                        split.train.ncols(),
                        split.test.ncols()
                    )));
                }
                if split.train.nrows() != c.train_len() || split.test.nrows() != c.test_len() {
                    return Err(Error::Alignment {
                        client: c.client_id,
                        detail: format!("modality {m} rows do not match the label vectors"),
                    });
                }
            }
            if let Some(bad) = c
                .train_labels
                .iter()
                .chain(&c.test_labels)
                .find(|&&y| y >= self.num_classes)
            {
                return Err(Error::Data(format!(
                    "client {} has label {bad} outside [0, {})",
                    c.client_id, self.num_classes
                )));
            }
        }
        Ok(())
    }
}

/// Splits aligned rows into train/test using the given row order.
pub(crate) fn split_rows(
    features: &[Array2<f64>],
    labels: &[usize],
    order: &[usize],
    train_count: usize,
) -> (Vec<ModalitySplit>, Vec<usize>, Vec<usize>) {
    let (train_idx, test_idx) = order.split_at(train_count);
    let splits = features
        .iter()
        .map(|x| ModalitySplit {
            train: x.select(Axis(0), train_idx),
            test: x.select(Axis(0), test_idx),
        })
        .collect();
    let pick = |idx: &[usize]| idx.iter().map(|&i| labels[i]).collect();
    (splits, pick(train_idx), pick(test_idx))
}

/// `round(n·fraction)`, kept inside `[1, n−1]` when `n ≥ 2`.
pub(crate) fn train_count(n: usize, fraction: f64) -> usize {
    if n < 2 {
        return n;
    }
    ((n as f64 * fraction).round() as usize).clamp(1, n - 1)
}

/// Empirical class proportions.
pub fn label_distribution(labels: &[usize], num_classes: usize) -> Vec<f64> {
    let mut counts = vec![0.0; num_classes];
    for &y in labels {
        counts[y] += 1.0;
    }
    let n = labels.len().max(1) as f64;
    counts.iter().map(|c| c / n).collect()
}

/// Concatenates the given matrices column-wise.
pub(crate) fn hstack(parts: &[ArrayView2<'_, f64>]) -> Array2<f64> {
    ndarray::concatenate(Axis(1), parts).expect("row counts agree")
}
