use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ledger::LedgerEntry;
use crate::selection::ModalityChoice;

/// Everything observable about one communication round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    pub round: usize,
    /// Test accuracy per client; `None` for clients without test rows.
    pub client_accuracy: Vec<Option<f64>>,
    pub mean_accuracy: Option<f64>,
    /// Modality decision per client (absent for methods without one).
    pub choices: Vec<Option<ModalityChoice>>,
    /// Accepted clients per modality.
    pub selected_clients: BTreeMap<usize, Vec<usize>>,
    /// Shapley magnitude per client, keyed by global modality id.
    pub shapley: Vec<BTreeMap<usize, f64>>,
    pub local_losses: Vec<BTreeMap<usize, f64>>,
    pub uploads: Vec<LedgerEntry>,
    pub bytes_this_round: u64,
    pub cumulative_bytes: u64,
}

/// Mean over the clients that have an accuracy.
pub fn mean_of_present(values: &[Option<f64>]) -> Option<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}
