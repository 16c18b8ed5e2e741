//! Joint selection: which modality models a client offers for upload, and
//! which of the offering clients the server accepts.

mod policy;
mod priority;
mod recency;

pub use policy::{
    client_selector, modality_selector, ClientSelector, HigherLoss, LowerLoss, ModalitySelector,
    TopPriority, UniformClients, UniformModalities,
};
pub use priority::{
    compute_priority, normalize_criteria, select_modalities, ModalityChoice, NormalizedCriteria,
    PriorityBreakdown,
};
pub use recency::RecencyTracker;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which end of the loss ranking the server favours.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossDirection {
    #[default]
    Lower,
    Higher,
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub gamma: usize,
    pub delta: f64,
    pub alpha_s: f64,
    pub alpha_c: f64,
    pub alpha_r: f64,
    pub loss_direction: LossDirection,
    pub random_seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            gamma: 1,
            delta: 0.2,
            alpha_s: 1.0 / 3.0,
            alpha_c: 1.0 / 3.0,
            alpha_r: 1.0 / 3.0,
            loss_direction: LossDirection::Lower,
            random_seed: 0,
        }
    }
}

pub(crate) const ALPHA_TOLERANCE: f64 = 1e-9;

impl SelectionConfig {
    /// Checks ranges; errors name the offending field under `prefix`.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let path = |f: &str| format!("{prefix}.{f}");
        if self.gamma == 0 {
            return Err(Error::invalid_config(path("gamma"), "must be at least 1"));
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(Error::invalid_config(
                path("delta"),
                format!("must lie in (0, 1], got {}", self.delta),
            ));
        }
        for (name, a) in [
            ("alpha_s", self.alpha_s),
            ("alpha_c", self.alpha_c),
            ("alpha_r", self.alpha_r),
        ] {
            if !a.is_finite() || a < 0.0 {
                return Err(Error::invalid_config(
                    path(name),
                    format!("must be a nonnegative number, got {a}"),
                ));
            }
        }
        let sum = self.alpha_s + self.alpha_c + self.alpha_r;
        if (sum - 1.0).abs() > ALPHA_TOLERANCE {
            return Err(Error::invalid_config(
                path("alpha_s"),
                format!("alpha_s + alpha_c + alpha_r must equal 1, got {sum}"),
            ));
        }
        Ok(())
    }
}

/// `max(1, round_half_up(δ·K))`.
pub fn target_client_count(delta: f64, clients_total: usize) -> usize {
    // The epsilon keeps decimal inputs like 0.25·10 on the "half up" side.
    let scaled = delta * clients_total as f64;
    ((scaled + 0.5 + 1e-9).floor() as usize).max(1)
}

/// Server-side client selection for one modality. `losses` pairs each
/// eligible client with its reported loss; the result is sorted by client id.
pub fn select_clients(
    losses: &[(usize, f64)],
    delta: f64,
    clients_total: usize,
    direction: LossDirection,
    seed: u64,
) -> Vec<usize> {
    if losses.is_empty() {
        return Vec::new();
    }
    let count = target_client_count(delta, clients_total).min(losses.len());
    client_selector(direction).select(losses, count, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn five() -> Vec<(usize, f64)> {
        vec![(0, 0.1), (1, 0.9), (2, 0.5), (3, 0.3), (4, 0.7)]
    }

    #[test]
    fn client_count_rounding() {
        assert_eq!(target_client_count(0.2, 5), 1);
        assert_eq!(target_client_count(0.2, 9), 2);
        assert_eq!(target_client_count(0.2, 10), 2);
        assert_eq!(target_client_count(0.25, 10), 3);
        assert_eq!(target_client_count(0.01, 10), 1);
        assert_eq!(target_client_count(1.0, 7), 7);
    }

    #[test]
    fn lower_and_higher() {
        assert_eq!(select_clients(&five(), 0.2, 5, LossDirection::Lower, 0), vec![0]);
        assert_eq!(select_clients(&five(), 0.2, 5, LossDirection::Higher, 0), vec![1]);
        assert_eq!(select_clients(&five(), 0.4, 5, LossDirection::Lower, 0), vec![0, 3]);
        assert!(select_clients(&[], 0.4, 5, LossDirection::Lower, 0).is_empty());
    }

    #[test]
    fn loss_ties_go_to_lower_client() {
        let tied = [(4, 0.5), (2, 0.5), (7, 0.5)];
        assert_eq!(select_clients(&tied, 0.2, 10, LossDirection::Lower, 0), vec![2, 4]);
        assert_eq!(select_clients(&tied, 0.2, 10, LossDirection::Higher, 0), vec![2, 4]);
    }

    #[test]
    fn random_direction_is_seeded() {
        let a = select_clients(&five(), 0.4, 5, LossDirection::Random, 3);
        assert_eq!(a.len(), 2);
        assert_eq!(a, select_clients(&five(), 0.4, 5, LossDirection::Random, 3));
    }

    #[test]
    fn count_capped_at_eligible() {
        let two = [(0, 0.2), (5, 0.1)];
        assert_eq!(select_clients(&two, 1.0, 10, LossDirection::Lower, 0), vec![0, 5]);
    }

    #[test]
    fn config_validation() {
        assert!(SelectionConfig::default().validate("selection").is_ok());
        let bad = SelectionConfig {
            delta: 0.0,
            ..Default::default()
        };
        match bad.validate("selection") {
            Err(Error::InvalidConfig { path, .. }) => assert_eq!(path, "selection.delta"),
            other => panic!("{other:?}"),
        }
        let bad = SelectionConfig {
            alpha_s: 0.5,
            ..Default::default()
        };
        assert!(bad.validate("selection").is_err());
    }
}
