//! Exact Shapley values over modality coalitions.
//!
//! The payoff of a coalition `Y` for eval sample `i` is the fraction of
//! background rows `j` for which the ensemble, fed a hybrid row taking `Y`'s
//! columns from `i` and the rest from `j`, predicts `i`'s target label.

use std::collections::HashMap;

use ndarray::{ArrayView2, Axis};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::EnsembleModel;
use crate::error::{Error, Result};
use crate::rng;

pub const MAX_EXACT_MODALITIES: usize = 16;
pub const SHAPLEY_SAMPLE_CAP: usize = 50;

/// How per-sample Shapley values are collapsed into one magnitude per modality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapleyAggregation {
    /// `|mean_i φ_i|`
    #[default]
    AbsOfMean,
    /// `mean_i |φ_i|`
    MeanOfAbs,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyOptions {
    pub max_samples: usize,
    pub aggregation: ShapleyAggregation,
    pub seed: u64,
}

impl Default for ShapleyOptions {
    fn default() -> Self {
        ShapleyOptions {
            max_samples: SHAPLEY_SAMPLE_CAP,
            aggregation: ShapleyAggregation::AbsOfMean,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    /// Signed mean of per-sample Shapley values.
    pub per_modality: Vec<f64>,
    /// Magnitudes fed to selection. Equal to `|per_modality|` under
    /// [`ShapleyAggregation::AbsOfMean`].
    pub magnitudes: Vec<f64>,
    pub eval_sample_count: usize,
    pub background_sample_count: usize,
    pub full_value: f64,
    pub empty_value: f64,
}

/// Up to `cap` distinct row indices drawn uniformly, returned in ascending order.
pub fn subsample_indices(n: usize, cap: usize, seed: u64) -> Vec<usize> {
    if n <= cap {
        return (0..n).collect();
    }
    let mut rng = rng::stream(seed, &[rng::tag::SHAPLEY]);
    let mut picked = index::sample(&mut rng, n, cap).into_vec();
    picked.sort_unstable();
    picked
}

/// Prediction cache keyed by the row's mixed-radix code.
struct Memo<'a> {
    ensemble: &'a EnsembleModel,
    radix: u128,
    cache: Option<HashMap<u128, usize>>,
}

impl<'a> Memo<'a> {
    fn new(ensemble: &'a EnsembleModel, radix: usize) -> Self {
        let radix = radix.max(1) as u128;
        let fits = (0..ensemble.feature_count)
            .try_fold(1u128, |acc, _| acc.checked_mul(radix))
            .is_some();
        Memo {
            ensemble,
            radix,
            cache: fits.then(HashMap::new),
        }
    }

    fn predict(&mut self, row: &[usize]) -> usize {
        let Some(cache) = self.cache.as_mut() else {
            return self.ensemble.predict_row(row);
        };
        let code = row.iter().fold(0u128, |acc, &v| acc * self.radix + v as u128);
        *cache
            .entry(code)
            .or_insert_with(|| self.ensemble.predict_row(row))
    }
}

struct Game<'a> {
    eval: ArrayView2<'a, usize>,
    background: ArrayView2<'a, usize>,
    targets: &'a [usize],
    memo: Memo<'a>,
}

impl<'a> Game<'a> {
    fn new(
        ensemble: &'a EnsembleModel,
        eval: ArrayView2<'a, usize>,
        background: ArrayView2<'a, usize>,
        targets: &'a [usize],
    ) -> Result<Self> {
        let m = ensemble.feature_count;
        if eval.nrows() == 0 {
            return Err(Error::Data("coalition value needs at least one eval sample".into()));
        }
        if background.nrows() == 0 {
            return Err(Error::Data("coalition value needs at least one background sample".into()));
        }
        if eval.ncols() != m || background.ncols() != m {
            return Err(Error::Dimension(format!(
                "ensemble expects {m} modality columns, got eval {} / background {}",
                eval.ncols(),
                background.ncols()
            )));
        }
        if targets.len() != eval.nrows() {
            return Err(Error::Dimension(format!(
                "{} eval rows but {} targets",
                eval.nrows(),
                targets.len()
            )));
        }
        let radix = eval
            .iter()
            .chain(background.iter())
            .copied()
            .max()
            .unwrap_or(0)
            + 1;
        Ok(Game {
            eval,
            background,
            targets,
            memo: Memo::new(ensemble, radix),
        })
    }

    /// Correct-prediction counts per eval sample for coalition `mask`; each
    /// count is out of `background.nrows()`.
    fn hits(&mut self, mask: u32) -> Vec<u64> {
        let m = self.eval.ncols();
        let outside: Vec<usize> = (0..m).filter(|&f| mask & (1 << f) == 0).collect();
        // Background rows only matter through their non-coalition columns.
        let mut patterns: Vec<(usize, u64)> = Vec::new();
        let mut seen: HashMap<Vec<usize>, usize> = HashMap::new();
        for (j, row) in self.background.axis_iter(Axis(0)).enumerate() {
            let key: Vec<usize> = outside.iter().map(|&f| row[f]).collect();
            match seen.get(&key) {
                Some(&slot) => patterns[slot].1 += 1,
                None => {
                    seen.insert(key, patterns.len());
                    patterns.push((j, 1));
                }
            }
        }
        let mut hybrid = vec![0usize; m];
        (0..self.eval.nrows())
            .map(|i| {
                let mut hits = 0;
                for &(j, count) in &patterns {
                    for (f, slot) in hybrid.iter_mut().enumerate() {
                        *slot = if mask & (1 << f) != 0 {
                            self.eval[[i, f]]
                        } else {
                            self.background[[j, f]]
                        };
                    }
                    if self.memo.predict(&hybrid) == self.targets[i] {
                        hits += count;
                    }
                }
                hits
            })
            .collect()
    }
}

/// Mean correct-classification rate of the coalition `coalition` under
/// interventional marginalization over `background`.
pub fn coalition_value(
    ensemble: &EnsembleModel,
    coalition: &[usize],
    eval_samples: ArrayView2<'_, usize>,
    background: ArrayView2<'_, usize>,
    target_labels: &[usize],
) -> Result<f64> {
    let m = ensemble.feature_count;
    if m > 32 {
        return Err(Error::Capability(format!(
            "coalitions over {m} modalities are not supported"
        )));
    }
    let mut mask = 0u32;
    for &f in coalition {
        if f >= m {
            return Err(Error::Dimension(format!("modality {f} outside [0, {m})")));
        }
        mask |= 1 << f;
    }
    let mut game = Game::new(ensemble, eval_samples, background, target_labels)?;
    let b = background.nrows() as f64;
    let hits = game.hits(mask);
    Ok(hits.iter().map(|&h| h as f64 / b).sum::<f64>() / hits.len() as f64)
}

/// `|S|! (m - |S| - 1)! / m!` for every coalition size `|S|` in `0..m`.
fn subset_weights(m: usize) -> Vec<f64> {
    let fact = |k: usize| (1..=k).fold(1.0f64, |acc, i| acc * i as f64);
    let total = fact(m);
    (0..m).map(|s| fact(s) * fact(m - s - 1) / total).collect()
}

/// Exact Shapley values by enumerating all `2^m` coalitions.
///
/// Eval and background sets larger than `options.max_samples` are reduced by
/// a uniform seeded subsample.
pub fn shapley_exact(
    ensemble: &EnsembleModel,
    eval_samples: ArrayView2<'_, usize>,
    background: ArrayView2<'_, usize>,
    target_labels: &[usize],
    options: &ShapleyOptions,
) -> Result<ShapleyReport> {
    let m = ensemble.feature_count;
    if m > MAX_EXACT_MODALITIES {
        return Err(Error::Capability(format!(
            "exact Shapley enumeration supports at most {MAX_EXACT_MODALITIES} modalities, got {m}; \
             a sampled estimator is required"
        )));
    }
    if target_labels.len() != eval_samples.nrows() {
        return Err(Error::Dimension(format!(
            "{} eval rows but {} targets",
            eval_samples.nrows(),
            target_labels.len()
        )));
    }

    let eval_idx = subsample_indices(eval_samples.nrows(), options.max_samples, options.seed);
    let bg_idx = subsample_indices(
        background.nrows(),
        options.max_samples,
        rng::derive_seed(options.seed, &[1]),
    );
    let eval = eval_samples.select(Axis(0), &eval_idx);
    let bg = background.select(Axis(0), &bg_idx);
    let targets: Vec<usize> = eval_idx.iter().map(|&i| target_labels[i]).collect();

    let mut game = Game::new(ensemble, eval.view(), bg.view(), &targets)?;
    let s = eval.nrows();
    let b = bg.nrows() as f64;
    // values[mask][i] = v_i(mask)
    let values: Vec<Vec<f64>> = (0..1u32 << m)
        .map(|mask| game.hits(mask).iter().map(|&h| h as f64 / b).collect())
        .collect();

    let weights = subset_weights(m);
    let mut per_sample = vec![vec![0.0f64; m]; s];
    for (f, _) in weights.iter().enumerate().take(m) {
        let bit = 1u32 << f;
        for mask in (0..1u32 << m).filter(|mask| mask & bit == 0) {
            let w = weights[mask.count_ones() as usize];
            let (with, without) = (&values[(mask | bit) as usize], &values[mask as usize]);
            for i in 0..s {
                per_sample[i][f] += w * (with[i] - without[i]);
            }
        }
    }

    let mean = |col: &dyn Fn(&Vec<f64>) -> f64| per_sample.iter().map(col).sum::<f64>() / s as f64;
    let per_modality: Vec<f64> = (0..m).map(|f| mean(&|row| row[f])).collect();
    let magnitudes = match options.aggregation {
        ShapleyAggregation::AbsOfMean => per_modality.iter().map(|v| v.abs()).collect(),
        ShapleyAggregation::MeanOfAbs => (0..m).map(|f| mean(&|row| row[f].abs())).collect(),
    };
    let full = (1u32 << m) - 1;
    Ok(ShapleyReport {
        per_modality,
        magnitudes,
        eval_sample_count: s,
        background_sample_count: bg.nrows(),
        full_value: values[full as usize].iter().sum::<f64>() / s as f64,
        empty_value: values[0].iter().sum::<f64>() / s as f64,
    })
}
