use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Last-upload round per `(client, modality)` pair. Pairs never uploaded
/// read as round 0. Rounds count from 1.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecencyTracker {
    last_upload_round: BTreeMap<(usize, usize), usize>,
    current_round: usize,
}

impl Default for RecencyTracker {
    fn default() -> Self {
        RecencyTracker::new()
    }
}

impl RecencyTracker {
    pub fn new() -> Self {
        RecencyTracker {
            last_upload_round: BTreeMap::new(),
            current_round: 1,
        }
    }

    /// A fresh tracker positioned at round `round`.
    pub fn at_round(round: usize) -> Self {
        RecencyTracker {
            last_upload_round: BTreeMap::new(),
            current_round: round.max(1),
        }
    }

    pub fn current_round(&self) -> usize {
        self.current_round
    }

    pub fn last_upload(&self, client: usize, modality: usize) -> usize {
        self.last_upload_round
            .get(&(client, modality))
            .copied()
            .unwrap_or(0)
    }

    /// `t − t_last − 1`: rounds since the last upload, minus one.
    pub fn recency(&self, client: usize, modality: usize) -> usize {
        self.current_round - self.last_upload(client, modality) - 1
    }

    /// Records uploads made during `round`, which must be the current round.
    pub fn mark_uploaded(&mut self, pairs: &[(usize, usize)], round: usize) -> Result<()> {
        if round != self.current_round {
            return Err(Error::Data(format!(
                "uploads recorded for round {round} while the tracker is at round {}",
                self.current_round
            )));
        }
        for &pair in pairs {
            self.last_upload_round.insert(pair, round);
        }
        Ok(())
    }

    pub fn advance(&mut self) {
        self.current_round += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn recency_examples() {
        let mut t = RecencyTracker::new();
        assert_eq!(t.recency(0, 0), 0);
        t.advance();
        t.advance();
        assert_eq!(t.current_round(), 3);
        assert_eq!(t.recency(4, 1), 2);
        t.advance();
        t.mark_uploaded(&[(0, 0)], 4).unwrap();
        t.advance();
        assert_eq!(t.recency(0, 0), 0);
        assert_eq!(t.recency(0, 1), 4);
        assert!(t.mark_uploaded(&[(0, 0)], 3).is_err());

        let mut t = RecencyTracker::at_round(4);
        t.mark_uploaded(&[(2, 2)], 4).unwrap();
        t.advance();
        assert_eq!(t.recency(2, 2), 0);
        t.mark_uploaded(&[(2, 0)], 5).unwrap();
        // t = 5, t_last = 3 style check via at_round
        let mut t = RecencyTracker::at_round(3);
        t.mark_uploaded(&[(1, 1)], 3).unwrap();
        t.advance();
        t.advance();
        assert_eq!(t.recency(1, 1), 1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn recency_law(uploads in prop::collection::vec(any::<bool>(), 1..60)) {
            // uploads[i] says whether the pair uploads in round i + 1
            let mut t = RecencyTracker::new();
            let mut last = 0usize;
            for (i, &up) in uploads.iter().enumerate() {
                let round = i + 1;
                prop_assert_eq!(t.current_round(), round);
                let r = t.recency(0, 0);
                prop_assert_eq!(r, round - last - 1);
                if last > 0 && last == round - 1 {
                    prop_assert_eq!(r, 0);
                }
                if up {
                    t.mark_uploaded(&[(0, 0)], round).unwrap();
                    last = round;
                }
                let before = t.recency(0, 1);
                t.advance();
                prop_assert_eq!(t.recency(0, 1), before + 1);
            }
        }
    }
}
