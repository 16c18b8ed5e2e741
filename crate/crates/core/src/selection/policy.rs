//! Interchangeable selection strategies. The priority and loss-ranked
//! policies implement the protocol; the uniform ones back the ablations.

use rand::seq::index;

use super::{priority::select_modalities, LossDirection, PriorityBreakdown};
use crate::rng;

/// Chooses which of a client's modalities to offer for upload. Returns
/// positions into the client's modality list, ascending.
pub trait ModalitySelector: Send + Sync {
    fn name(&self) -> &'static str;
    fn select(&self, breakdown: &PriorityBreakdown, gamma: usize, seed: u64) -> Vec<usize>;
}

/// Chooses `count` clients out of the eligible `(client, loss)` pairs.
/// Returns client ids, ascending.
pub trait ClientSelector: Send + Sync {
    fn name(&self) -> &'static str;
    fn select(&self, losses: &[(usize, f64)], count: usize, seed: u64) -> Vec<usize>;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TopPriority;

impl ModalitySelector for TopPriority {
    fn name(&self) -> &'static str {
        "top_priority"
    }

    fn select(&self, breakdown: &PriorityBreakdown, gamma: usize, _seed: u64) -> Vec<usize> {
        select_modalities(&breakdown.priority, gamma)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UniformModalities;

impl ModalitySelector for UniformModalities {
    fn name(&self) -> &'static str {
        "uniform"
    }

    fn select(&self, breakdown: &PriorityBreakdown, gamma: usize, seed: u64) -> Vec<usize> {
        uniform_subset(breakdown.priority.len(), gamma, seed)
    }
}

fn uniform_subset(n: usize, count: usize, seed: u64) -> Vec<usize> {
    let count = count.min(n);
    if count == n {
        return (0..n).collect();
    }
    let mut rng = rng::stream(seed, &[]);
    let mut picked = index::sample(&mut rng, n, count).into_vec();
    picked.sort_unstable();
    picked
}

/// Sorts `(client, loss)` pairs by loss in the given order, client id breaking ties.
fn ranked(losses: &[(usize, f64)], count: usize, descending: bool) -> Vec<usize> {
    let mut order = losses.to_vec();
    order.sort_by(|a, b| {
        let by_loss = if descending {
            b.1.total_cmp(&a.1)
        } else {
            a.1.total_cmp(&b.1)
        };
        by_loss.then(a.0.cmp(&b.0))
    });
    let mut out: Vec<usize> = order.into_iter().take(count).map(|(k, _)| k).collect();
    out.sort_unstable();
    out
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LowerLoss;

impl ClientSelector for LowerLoss {
    fn name(&self) -> &'static str {
        "lower"
    }

    fn select(&self, losses: &[(usize, f64)], count: usize, _seed: u64) -> Vec<usize> {
        ranked(losses, count, false)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct HigherLoss;

impl ClientSelector for HigherLoss {
    fn name(&self) -> &'static str {
        "higher"
    }

    fn select(&self, losses: &[(usize, f64)], count: usize, _seed: u64) -> Vec<usize> {
        ranked(losses, count, true)
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UniformClients;

impl ClientSelector for UniformClients {
    fn name(&self) -> &'static str {
        "random"
    }

    fn select(&self, losses: &[(usize, f64)], count: usize, seed: u64) -> Vec<usize> {
        let mut ids: Vec<usize> = losses.iter().map(|(k, _)| *k).collect();
        ids.sort_unstable();
        let mut out: Vec<usize> = uniform_subset(ids.len(), count, seed)
            .into_iter()
            .map(|i| ids[i])
            .collect();
        out.sort_unstable();
        out
    }
}

pub fn client_selector(direction: LossDirection) -> Box<dyn ClientSelector> {
    match direction {
        LossDirection::Lower => Box::new(LowerLoss),
        LossDirection::Higher => Box::new(HigherLoss),
        LossDirection::Random => Box::new(UniformClients),
    }
}

/// `uniform == true` gives the random-modality ablation.
pub fn modality_selector(uniform: bool) -> Box<dyn ModalitySelector> {
    if uniform {
        Box::new(UniformModalities)
    } else {
        Box::new(TopPriority)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_subset_saturates_and_is_seeded() {
        assert_eq!(uniform_subset(3, 5, 1), vec![0, 1, 2]);
        let a = uniform_subset(10, 3, 4);
        assert_eq!(a.len(), 3);
        assert_eq!(a, uniform_subset(10, 3, 4));
    }

    #[test]
    fn uniform_clients_frequency() {
        let losses: Vec<(usize, f64)> = (0..10).map(|k| (k, 0.0)).collect();
        let mut counts = [0usize; 10];
        for round in 0..2000u64 {
            for k in UniformClients.select(&losses, 2, round) {
                counts[k] += 1;
            }
        }
        for c in counts {
            assert!((c as f64 / 2000.0 - 0.2).abs() < 0.04, "{c}");
        }
    }
}
