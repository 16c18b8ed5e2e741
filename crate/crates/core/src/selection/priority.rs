use serde::{Deserialize, Serialize};

use super::{SelectionConfig, ALPHA_TOLERANCE};
use crate::error::{Error, Result};

/// Value used for a criterion whose raw values are all equal.
const DEGENERATE: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCriteria {
    pub shapley: f64,
    pub size: f64,
    pub recency: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriorityBreakdown {
    pub raw_shapley: Vec<f64>,
    pub raw_sizes: Vec<f64>,
    pub raw_recency: Vec<f64>,
    pub normalized: Vec<NormalizedCriteria>,
    pub priority: Vec<f64>,
}

/// A client's modality decision for one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalityChoice {
    /// Global modality ids the client owns, in the order used by `breakdown`.
    pub owned: Vec<usize>,
    /// Global modality ids chosen for upload, ascending.
    pub selected: Vec<usize>,
    pub breakdown: PriorityBreakdown,
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return vec![DEGENERATE; values.len()];
    }
    values
        .iter()
        .map(|v| ((v - lo) / (hi - lo)).clamp(0.0, 1.0))
        .collect()
}

/// Min-max normalizes Shapley magnitudes and sizes over the client's own
/// modalities and divides recency by the current round.
pub fn normalize_criteria(
    raw_shapley: &[f64],
    raw_sizes: &[f64],
    raw_recency: &[f64],
    current_round: usize,
) -> Result<Vec<NormalizedCriteria>> {
    let m = raw_shapley.len();
    if m == 0 || raw_sizes.len() != m || raw_recency.len() != m {
        return Err(Error::Dimension(format!(
            "criteria lengths differ or are empty: {} / {} / {}",
            m,
            raw_sizes.len(),
            raw_recency.len()
        )));
    }
    if current_round == 0 {
        return Err(Error::Data("rounds count from 1".into()));
    }
    let shapley = min_max(raw_shapley);
    let size = min_max(raw_sizes);
    let t = current_round as f64;
    Ok((0..m)
        .map(|i| NormalizedCriteria {
            shapley: shapley[i],
            size: size[i],
            recency: (raw_recency[i] / t).clamp(0.0, 1.0),
        })
        .collect())
}

/// `α_s·φ̃ + α_c·(1 − θ̃) + α_r·𝒯̃` per modality.
pub fn compute_priority(
    normalized: &[NormalizedCriteria],
    config: &SelectionConfig,
) -> Result<Vec<f64>> {
    let (a_s, a_c, a_r) = (config.alpha_s, config.alpha_c, config.alpha_r);
    if [a_s, a_c, a_r].iter().any(|a| !a.is_finite() || *a < 0.0)
        || (a_s + a_c + a_r - 1.0).abs() > ALPHA_TOLERANCE
    {
        return Err(Error::Config(format!(
            "priority weights must be nonnegative and sum to 1, got ({a_s}, {a_c}, {a_r})"
        )));
    }
    Ok(normalized
        .iter()
        .map(|n| a_s * n.shapley + a_c * (1.0 - n.size) + a_r * n.recency)
        .collect())
}

/// Positions of the `min(γ, len)` highest priorities, ascending. Equal
/// priorities go to the lower position.
pub fn select_modalities(priorities: &[f64], gamma: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..priorities.len()).collect();
    order.sort_by(|&a, &b| priorities[b].total_cmp(&priorities[a]).then(a.cmp(&b)));
    order.truncate(gamma.min(priorities.len()));
    order.sort_unstable();
    order
}

impl PriorityBreakdown {
    pub fn compute(
        raw_shapley: Vec<f64>,
        raw_sizes: Vec<f64>,
        raw_recency: Vec<f64>,
        current_round: usize,
        config: &SelectionConfig,
    ) -> Result<Self> {
        let normalized = normalize_criteria(&raw_shapley, &raw_sizes, &raw_recency, current_round)?;
        let priority = compute_priority(&normalized, config)?;
        Ok(PriorityBreakdown {
            raw_shapley,
            raw_sizes,
            raw_recency,
            normalized,
            priority,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn alphas(s: f64, c: f64, r: f64) -> SelectionConfig {
        SelectionConfig {
            alpha_s: s,
            alpha_c: c,
            alpha_r: r,
            ..SelectionConfig::default()
        }
    }

    #[test]
    fn normalization_examples() {
        let n = normalize_criteria(&[0.2, 0.5, 0.8], &[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0], 1).unwrap();
        let phi: Vec<f64> = n.iter().map(|c| c.shapley).collect();
        assert!((phi[0] - 0.0).abs() < 1e-12);
        assert!((phi[1] - 0.5).abs() < 1e-12);
        assert!((phi[2] - 1.0).abs() < 1e-12);

        let mb = 0.26 * 1024.0 * 1024.0;
        let n = normalize_criteria(&[0.1, 0.3], &[mb, mb], &[0.0, 1.0], 2).unwrap();
        assert_eq!(n[0].size, 0.5);
        assert_eq!(n[1].size, 0.5);

        let n = normalize_criteria(&[0.4], &[10.0], &[4.0], 5).unwrap();
        assert!((n[0].recency - 0.8).abs() < 1e-12);
        assert!(normalize_criteria(&[], &[], &[], 1).is_err());
    }

    #[test]
    fn priority_examples() {
        let top = [NormalizedCriteria {
            shapley: 1.0,
            size: 0.0,
            recency: 1.0,
        }];
        let p = compute_priority(&top, &alphas(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0)).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-12);

        let n = normalize_criteria(&[0.1, 0.9, 0.4], &[100.0, 200.0, 400.0], &[1.0, 0.0, 2.0], 3).unwrap();
        let pure_shapley = compute_priority(&n, &alphas(1.0, 0.0, 0.0)).unwrap();
        for (p, c) in pure_shapley.iter().zip(&n) {
            assert_eq!(*p, c.shapley);
        }
        let pure_size = compute_priority(&n, &alphas(0.0, 1.0, 0.0)).unwrap();
        assert!((pure_size[0] - 1.0).abs() < 1e-12);
        assert!((pure_size[1] - 2.0 / 3.0).abs() < 1e-12);
        assert!(pure_size[2].abs() < 1e-12);
        assert!(matches!(
            compute_priority(&n, &alphas(0.5, 0.5, 0.5)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn top_gamma_examples() {
        assert_eq!(select_modalities(&[0.9, 0.3, 0.6], 1), vec![0]);
        assert_eq!(select_modalities(&[0.5, 0.5, 0.1], 1), vec![0]);
        assert_eq!(select_modalities(&[0.1, 0.5, 0.5], 1), vec![1]);
        assert_eq!(select_modalities(&[0.2, 0.1], 5), vec![0, 1]);
        assert_eq!(select_modalities(&[0.2, 0.7, 0.9], 2), vec![1, 2]);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, usize)> {
        (1usize..8).prop_flat_map(|m| {
            (
                prop::collection::vec(0.0..1.0f64, m),
                prop::collection::vec(1.0..1e6f64, m),
                prop::collection::vec(0usize..40, m),
                41usize..80,
            )
                .prop_map(|(s, z, r, t)| (s, z, r.into_iter().map(|x| x as f64).collect(), t))
        })
    }

    fn weights() -> impl Strategy<Value = SelectionConfig> {
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_filter_map("nonzero", |(a, b, c)| {
            let s = a + b + c;
            (s > 1e-3).then(|| alphas(a / s, b / s, 1.0 - a / s - b / s).clone())
                .filter(|cfg| cfg.alpha_r >= 0.0)
        })
    }

    /// Selected set, or `None` when the γ-th and (γ+1)-th priorities are too
    /// close for the comparison to be robust to rounding.
    fn robust_selection(p: &[f64], gamma: usize) -> Option<Vec<usize>> {
        let mut sorted = p.to_vec();
        sorted.sort_by(|a, b| b.total_cmp(a));
        if gamma < p.len() && (sorted[gamma - 1] - sorted[gamma]).abs() < 1e-9 {
            return None;
        }
        Some(select_modalities(p, gamma))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn cardinality_and_dominance(p in prop::collection::vec(0.0..1.0f64, 1..10), gamma in 1usize..12) {
            let sel = select_modalities(&p, gamma);
            prop_assert_eq!(sel.len(), gamma.min(p.len()));
            for i in 0..p.len() {
                if !sel.contains(&i) {
                    for &s in &sel {
                        prop_assert!(p[s] > p[i] || (p[s] == p[i] && s < i));
                    }
                }
            }
        }

        #[test]
        fn ties_break_to_lower_index(m in 2usize..10, gamma in 1usize..10, v in 0.0..1.0f64) {
            let p = vec![v; m];
            prop_assert_eq!(select_modalities(&p, gamma), (0..gamma.min(m)).collect::<Vec<_>>());
        }

        #[test]
        fn normalized_values_in_unit_interval((s, z, r, t) in instance(), cfg in weights()) {
            let n = normalize_criteria(&s, &z, &r, t).unwrap();
            for c in &n {
                prop_assert!((0.0..=1.0).contains(&c.shapley));
                prop_assert!((0.0..=1.0).contains(&c.size));
                prop_assert!((0.0..=1.0).contains(&c.recency));
            }
            for p in compute_priority(&n, &cfg).unwrap() {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(&p));
            }
        }

        #[test]
        fn affine_invariance((s, z, r, t) in instance(), cfg in weights(),
                             a in 0.01..100.0f64, b in -10.0..10.0f64, gamma in 1usize..4, which in 0usize..2) {
            let base = normalize_criteria(&s, &z, &r, t).unwrap();
            let (s2, z2) = if which == 0 {
                (s.iter().map(|x| a * x + b).collect::<Vec<_>>(), z.clone())
            } else {
                (s.clone(), z.iter().map(|x| a * x + b).collect::<Vec<_>>())
            };
            let moved = normalize_criteria(&s2, &z2, &r, t).unwrap();
            for (x, y) in base.iter().zip(&moved) {
                prop_assert!((x.shapley - y.shapley).abs() < 1e-9);
                prop_assert!((x.size - y.size).abs() < 1e-9);
                prop_assert_eq!(x.recency, y.recency);
            }
            let p1 = compute_priority(&base, &cfg).unwrap();
            let p2 = compute_priority(&moved, &cfg).unwrap();
            if let (Some(a), Some(b)) = (robust_selection(&p1, gamma), robust_selection(&p2, gamma)) {
                prop_assert_eq!(a, b);
            }
        }

        #[test]
        fn raising_shapley_never_lowers_rank((s, z, r, t) in instance(), cfg in weights(), idx in 0usize..8, bump in 0.0..1.0f64) {
            prop_assume!(cfg.alpha_s > 0.0);
            let idx = idx % s.len();
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            prop_assume!(hi > lo);
            let rank = |p: &[f64]| p.iter().enumerate().filter(|&(j, &v)| v > p[idx] || (v == p[idx] && j < idx)).count();
            let before = compute_priority(&normalize_criteria(&s, &z, &r, t).unwrap(), &cfg).unwrap();
            let mut s2 = s.clone();
            s2[idx] += bump;
            let after = compute_priority(&normalize_criteria(&s2, &z, &r, t).unwrap(), &cfg).unwrap();
            prop_assert!(rank(&after) <= rank(&before));
        }
    }
}
