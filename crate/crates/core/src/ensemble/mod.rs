//! The client-private ensemble: a random forest over the vector of
//! per-modality class predictions, and the exact Shapley engine that scores
//! each modality's contribution to it.

mod shapley;
mod tree;

pub use shapley::{
    coalition_value, shapley_exact, subsample_indices, ShapleyAggregation, ShapleyOptions,
    ShapleyReport, MAX_EXACT_MODALITIES, SHAPLEY_SAMPLE_CAP,
};
pub use tree::{DecisionTree, Node};

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use tree::TreeParams;

/// Categorical matrix: one row per sample, one column per modality, each cell
/// a predicted class index.
pub type PredictionMatrix = Array2<usize>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ForestParams {
    pub num_trees: usize,
    pub max_depth: usize,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            num_trees: 20,
            max_depth: 6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub trees: Vec<DecisionTree>,
    pub num_trees: usize,
    pub max_depth: usize,
    pub feature_count: usize,
    pub num_classes: usize,
    pub seed: u64,
}

/// ⌈√m⌉ modalities considered per split.
pub fn features_per_split(feature_count: usize) -> usize {
    let mut k = (feature_count as f64).sqrt().ceil() as usize;
    while k * k < feature_count {
        k += 1;
    }
    k.max(1)
}

/// Fits a forest where each tree sees a seeded bootstrap resample.
pub fn fit_ensemble(
    predictions: ArrayView2<'_, usize>,
    labels: &[usize],
    num_classes: usize,
    params: &ForestParams,
    seed: u64,
) -> Result<EnsembleModel> {
    let n = predictions.nrows();
    if n == 0 {
        return Err(Error::Data("cannot fit an ensemble on zero samples".into()));
    }
    if labels.len() != n {
        return Err(Error::Dimension(format!(
            "{n} prediction rows but {} labels",
            labels.len()
        )));
    }
    if predictions.ncols() == 0 {
        return Err(Error::Dimension("ensemble needs at least one modality".into()));
    }
    if params.num_trees == 0 {
        return Err(Error::Data("num_trees must be at least 1".into()));
    }
    if let Some(bad) = labels.iter().chain(predictions.iter()).find(|&&c| c >= num_classes) {
        return Err(Error::Data(format!(
            "class index {bad} outside [0, {num_classes})"
        )));
    }
    let tree_params = TreeParams {
        max_depth: params.max_depth,
        max_features: features_per_split(predictions.ncols()),
        num_classes,
    };
    let trees = (0..params.num_trees)
        .map(|t| {
            let mut rng = rng::stream(seed, &[t as u64]);
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            DecisionTree::fit(predictions, labels, rows, &tree_params, &mut rng)
        })
        .collect();
    Ok(EnsembleModel {
        trees,
        num_trees: params.num_trees,
        max_depth: params.max_depth,
        feature_count: predictions.ncols(),
        num_classes,
        seed,
    })
}

impl EnsembleModel {
    /// Assembles an ensemble from hand-built trees.
    pub fn from_trees(trees: Vec<DecisionTree>, feature_count: usize, num_classes: usize) -> Self {
        let max_depth = trees.iter().map(DecisionTree::depth).max().unwrap_or(0);
        EnsembleModel {
            num_trees: trees.len(),
            trees,
            max_depth,
            feature_count,
            num_classes,
            seed: 0,
        }
    }

    /// Majority vote; ties go to the lowest class.
    pub fn predict_row(&self, row: &[usize]) -> usize {
        let mut votes = vec![0usize; self.num_classes];
        for tree in &self.trees {
            votes[tree.predict_row(row)] += 1;
        }
        let mut best = 0;
        for (c, &v) in votes.iter().enumerate() {
            if v > votes[best] {
                best = c;
            }
        }
        best
    }

    pub fn predict(&self, predictions: ArrayView2<'_, usize>) -> Result<Vec<usize>> {
        if predictions.ncols() != self.feature_count {
            return Err(Error::Dimension(format!(
                "ensemble expects {} modality columns, got {}",
                self.feature_count,
                predictions.ncols()
            )));
        }
        let mut buf = vec![0; self.feature_count];
        Ok(predictions
            .rows()
            .into_iter()
            .map(|row| {
                buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
                self.predict_row(&buf)
            })
            .collect())
    }

    pub fn splits_on(&self, feature: usize) -> bool {
        self.trees.iter().any(|t| t.splits_on(feature))
    }

    pub fn accuracy(&self, predictions: ArrayView2<'_, usize>, labels: &[usize]) -> Result<f64> {
        let out = self.predict(predictions)?;
        if out.is_empty() {
            return Err(Error::Data("accuracy of an empty set is undefined".into()));
        }
        let hits = out.iter().zip(labels).filter(|(a, b)| a == b).count();
        Ok(hits as f64 / out.len() as f64)
    }
}

/// Free-function form of [`EnsembleModel::predict`].
pub fn ensemble_predict(
    ensemble: &EnsembleModel,
    predictions: ArrayView2<'_, usize>,
) -> Result<Vec<usize>> {
    ensemble.predict(predictions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};

    #[test]
    fn sqrt_feature_count() {
        assert_eq!(features_per_split(1), 1);
        assert_eq!(features_per_split(2), 2);
        assert_eq!(features_per_split(4), 2);
        assert_eq!(features_per_split(5), 3);
        assert_eq!(features_per_split(16), 4);
    }

    #[test]
    fn informative_modality_gives_perfect_training_accuracy() {
        let mut rng = crate::rng::stream(42, &[]);
        let n = 50;
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(0..3usize));
        let y: Vec<usize> = (0..n).map(|i| x[[i, 0]]).collect();
        let ens = fit_ensemble(
            x.view(),
            &y,
            3,
            &ForestParams {
                num_trees: 10,
                max_depth: 3,
            },
            1,
        )
        .unwrap();
        assert_eq!(ens.accuracy(x.view(), &y).unwrap(), 1.0);
    }

    #[test]
    fn depth_zero_single_tree_predicts_bootstrap_majority() {
        let x = array![[0usize, 1], [1, 1], [1, 0], [0, 0], [2, 2]];
        let y = [0usize, 1, 1, 2, 1];
        let ens = fit_ensemble(
            x.view(),
            &y,
            3,
            &ForestParams {
                num_trees: 1,
                max_depth: 0,
            },
            9,
        )
        .unwrap();
        // recompute the bootstrap draw to find its majority
        let mut rng = crate::rng::stream(9, &[0]);
        let mut counts = [0usize; 3];
        for _ in 0..5 {
            counts[y[rng.random_range(0..5usize)]] += 1;
        }
        let majority = (0..3).fold(0, |b, c| if counts[c] > counts[b] { c } else { b });
        let out = ens.predict(x.view()).unwrap();
        assert!(out.iter().all(|&c| c == majority));
    }

    #[test]
    fn fitting_is_deterministic() {
        let x = array![[0usize, 1], [1, 1], [1, 0], [0, 0], [2, 2], [2, 1]];
        let y = [0usize, 1, 1, 0, 2, 2];
        let p = ForestParams::default();
        let a = fit_ensemble(x.view(), &y, 3, &p, 5).unwrap();
        let b = fit_ensemble(x.view(), &y, 3, &p, 5).unwrap();
        let probe = Array2::from_shape_fn((9, 2), |(i, j)| (i + j) % 3);
        assert_eq!(a.predict(probe.view()).unwrap(), b.predict(probe.view()).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn votes() {
        let unanimous = EnsembleModel::from_trees(vec![DecisionTree::leaf(2); 3], 1, 3);
        assert_eq!(unanimous.predict_row(&[0]), 2);
        let majority = EnsembleModel::from_trees(
            vec![DecisionTree::leaf(0), DecisionTree::leaf(1), DecisionTree::leaf(1)],
            1,
            2,
        );
        assert_eq!(majority.predict_row(&[0]), 1);
        let tied = EnsembleModel::from_trees(
            vec![
                DecisionTree::leaf(0),
                DecisionTree::leaf(0),
                DecisionTree::leaf(1),
                DecisionTree::leaf(1),
            ],
            1,
            2,
        );
        assert_eq!(tied.predict_row(&[0]), 0);
    }

    #[test]
    fn errors() {
        let empty = Array2::<usize>::zeros((0, 2));
        assert!(matches!(
            fit_ensemble(empty.view(), &[], 2, &ForestParams::default(), 0),
            Err(Error::Data(_))
        ));
        let ens = EnsembleModel::from_trees(vec![DecisionTree::leaf(0)], 2, 2);
        let wide = Array2::<usize>::zeros((1, 3));
        assert!(matches!(ens.predict(wide.view()), Err(Error::Dimension(_))));
    }
}
