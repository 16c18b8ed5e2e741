use std::fmt;

use serde::{Deserialize, Serialize};

/// What a ledger entry paid for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// A per-modality model (or a baseline's per-modality branch).
    Modality(usize),
    /// A baseline's fusion layer.
    Fusion,
    /// A single model covering all modalities.
    Joint,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Component::Modality(m) => write!(f, "{m}"),
            Component::Fusion => f.write_str("fusion"),
            Component::Joint => f.write_str("joint"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: usize,
    pub client: usize,
    pub component: Component,
    pub bytes: u64,
}

/// Append-only record of uploads.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    entries: Vec<LedgerEntry>,
    clients_total: usize,
    total_bytes: u64,
}

impl CommLedger {
    pub fn new(clients_total: usize) -> Self {
        CommLedger {
            entries: Vec::new(),
            clients_total,
            total_bytes: 0,
        }
    }

    pub fn record(&mut self, entry: LedgerEntry) {
        self.total_bytes += entry.bytes;
        self.entries.push(entry);
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn clients_total(&self) -> usize {
        self.clients_total
    }

    pub fn total_bytes(&self) -> u64 {
        self.total_bytes
    }

    pub fn bytes_in_round(&self, round: usize) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.round == round)
            .map(|e| e.bytes)
            .sum()
    }

    /// Σ bytes / K.
    pub fn cumulative_avg_per_client(&self) -> f64 {
        self.total_bytes as f64 / self.clients_total.max(1) as f64
    }

    pub fn budget_reached(&self, budget_bytes: f64) -> bool {
        self.cumulative_avg_per_client() >= budget_bytes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn totals_and_average() {
        let mut l = CommLedger::new(4);
        for (round, client, bytes) in [(1, 0, 100), (1, 2, 100), (2, 1, 60)] {
            l.record(LedgerEntry {
                round,
                client,
                component: Component::Modality(0),
                bytes,
            });
        }
        assert_eq!(l.total_bytes(), 260);
        assert_eq!(l.bytes_in_round(1), 200);
        assert_eq!(l.cumulative_avg_per_client(), 65.0);
        assert!(l.budget_reached(65.0));
        assert!(!l.budget_reached(65.5));
        assert_eq!(Component::Fusion.to_string(), "fusion");
        assert_eq!(Component::Modality(3).to_string(), "3");
    }
}
