use ndarray::ArrayView2;
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Arena node. `Split` routes rows whose `feature` column equals `value` to
/// `equal`, everything else to `other` (a one-hot indicator test).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        class: usize,
    },
    Split {
        feature: usize,
        value: usize,
        equal: usize,
        other: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    nodes: Vec<Node>,
}

pub(crate) struct TreeParams {
    pub max_depth: usize,
    pub max_features: usize,
    pub num_classes: usize,
}

fn gini(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn majority(counts: &[usize]) -> usize {
    let mut best = 0;
    for (c, &k) in counts.iter().enumerate() {
        if k > counts[best] {
            best = c;
        }
    }
    best
}

struct Builder<'a> {
    x: ArrayView2<'a, usize>,
    y: &'a [usize],
    params: &'a TreeParams,
    nodes: Vec<Node>,
}

struct Candidate {
    feature: usize,
    value: usize,
    impurity: f64,
}

impl Builder<'_> {
    fn class_counts(&self, rows: &[usize]) -> Vec<usize> {
        let mut counts = vec![0; self.params.num_classes];
        for &r in rows {
            counts[self.y[r]] += 1;
        }
        counts
    }

    /// Lowest weighted child Gini over every `feature == value` test on the
    /// given features. Earlier (feature, value) pairs win ties.
    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<Candidate> {
        let c = self.params.num_classes;
        let mut best: Option<Candidate> = None;
        for &f in features {
            let max_value = rows.iter().map(|&r| self.x[[r, f]]).max()?;
            // per value: class counts of rows holding that value
            let mut by_value = vec![vec![0usize; c]; max_value + 1];
            for &r in rows {
                by_value[self.x[[r, f]]][self.y[r]] += 1;
            }
            let totals = self.class_counts(rows);
            for (value, eq_counts) in by_value.iter().enumerate() {
                let n_eq: usize = eq_counts.iter().sum();
                if n_eq == 0 || n_eq == rows.len() {
                    continue;
                }
                let ne_counts: Vec<usize> =
                    totals.iter().zip(eq_counts).map(|(t, e)| t - e).collect();
                let n_ne = rows.len() - n_eq;
                let impurity = (n_eq as f64 * gini(eq_counts, n_eq)
                    + n_ne as f64 * gini(&ne_counts, n_ne))
                    / rows.len() as f64;
                if best.as_ref().is_none_or(|b| impurity < b.impurity) {
                    best = Some(Candidate {
                        feature: f,
                        value,
                        impurity,
                    });
                }
            }
        }
        best
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize, rng: &mut Rng) -> usize {
        let counts = self.class_counts(&rows);
        let class = majority(&counts);
        let parent = gini(&counts, rows.len());
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { class });
        if depth >= self.params.max_depth || rows.len() < 2 || parent == 0.0 {
            return id;
        }

        let m = self.x.ncols();
        let k = self.params.max_features.clamp(1, m);
        let mut candidates: Vec<usize> = index::sample(rng, m, k).into_vec();
        candidates.sort_unstable();
        let improves = |c: &Candidate| parent - c.impurity > 1e-12;
        let mut split = self.best_split(&rows, &candidates).filter(improves);
        if split.is_none() && k < m {
            // No sampled feature helps; fall back to the rest.
            let rest: Vec<usize> = (0..m).filter(|f| !candidates.contains(f)).collect();
            split = self.best_split(&rows, &rest).filter(improves);
        }
        let Some(split) = split else {
            return id;
        };

        let (eq, ne): (Vec<usize>, Vec<usize>) = rows
            .into_iter()
            .partition(|&r| self.x[[r, split.feature]] == split.value);
        let equal = self.grow(eq, depth + 1, rng);
        let other = self.grow(ne, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            value: split.value,
            equal,
            other,
        };
        id
    }
}

impl DecisionTree {
    pub(crate) fn fit(
        x: ArrayView2<'_, usize>,
        y: &[usize],
        rows: Vec<usize>,
        params: &TreeParams,
        rng: &mut Rng,
    ) -> DecisionTree {
        let mut builder = Builder {
            x,
            y,
            params,
            nodes: Vec::new(),
        };
        builder.grow(rows, 0, rng);
        DecisionTree {
            nodes: builder.nodes,
        }
    }

    /// Builds a tree from an explicit arena; node 0 is the root.
    pub fn from_nodes(nodes: Vec<Node>) -> DecisionTree {
        assert!(!nodes.is_empty(), "a tree needs at least one node");
        DecisionTree { nodes }
    }

    pub fn leaf(class: usize) -> DecisionTree {
        DecisionTree {
            nodes: vec![Node::Leaf { class }],
        }
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn predict_row(&self, row: &[usize]) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { class } => return class,
                Node::Split {
                    feature,
                    value,
                    equal,
                    other,
                } => at = if row[feature] == value { equal } else { other },
            }
        }
    }

    pub fn splits_on(&self, feature: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { feature: f, .. } if *f == feature))
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { equal, other, .. } => 1 + walk(nodes, equal).max(walk(nodes, other)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Swaps two feature indices in every split.
    pub fn swap_features(&mut self, a: usize, b: usize) {
        for node in &mut self.nodes {
            if let Node::Split { feature, .. } = node {
                if *feature == a {
                    *feature = b;
                } else if *feature == b {
                    *feature = a;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn gini_basics() {
        assert_eq!(gini(&[4, 0], 4), 0.0);
        assert!((gini(&[2, 2], 4) - 0.5).abs() < 1e-15);
        assert_eq!(majority(&[3, 3, 1]), 0);
        assert_eq!(majority(&[1, 3, 3]), 1);
    }

    #[test]
    fn grows_a_pure_split() {
        let x = array![[0usize, 1], [0, 0], [1, 1], [1, 0]];
        let y = [0usize, 0, 1, 1];
        let params = TreeParams {
            max_depth: 3,
            max_features: 2,
            num_classes: 2,
        };
        let mut rng = crate::rng::stream(0, &[]);
        let tree = DecisionTree::fit(x.view(), &y, (0..4).collect(), &params, &mut rng);
        assert!(tree.splits_on(0));
        assert!(!tree.splits_on(1));
        assert_eq!(tree.depth(), 1);
        for (i, row) in x.rows().into_iter().enumerate() {
            assert_eq!(tree.predict_row(&row.to_vec()), y[i]);
        }
    }

    #[test]
    fn depth_zero_is_majority_leaf() {
        let x = array![[0usize], [1], [1]];
        let y = [2usize, 1, 1];
        let params = TreeParams {
            max_depth: 0,
            max_features: 1,
            num_classes: 3,
        };
        let mut rng = crate::rng::stream(0, &[]);
        let tree = DecisionTree::fit(x.view(), &y, vec![0, 1, 2], &params, &mut rng);
        assert_eq!(tree.nodes(), &[Node::Leaf { class: 1 }]);
    }
}
