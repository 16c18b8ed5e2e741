//! Per-modality linear branches whose outputs are concatenated into a linear
//! fusion head. With branch width `C` this is the decision-level network;
//! with a shared width `h` it is the feature-level one.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{
    argmax, cross_entropy, dense, dense_backward, softmax_in_place, TrainParams, BYTES_PER_PARAM,
};
use crate::rng::{self, tag};

const INIT_RANGE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionNet {
    pub input_dims: Vec<usize>,
    pub branch_width: usize,
    pub num_classes: usize,
    /// One dense layer per modality: `branch_width × input_dim` weights, then biases.
    pub branches: Vec<Vec<f64>>,
    /// `num_classes × (M·branch_width)` weights, then biases.
    pub head: Vec<f64>,
}

impl FusionNet {
    pub fn new(input_dims: &[usize], branch_width: usize, num_classes: usize, seed: u64) -> Result<Self> {
        if input_dims.is_empty() || input_dims.contains(&0) || branch_width == 0 || num_classes < 2 {
            return Err(Error::Dimension(format!(
                "fusion net needs nonzero dims, got inputs {input_dims:?}, width {branch_width}, {num_classes} classes"
            )));
        }
        let block = |len: usize, id: usize| -> Vec<f64> {
            let mut r = rng::stream(seed, &[tag::INIT, id as u64]);
            (0..len).map(|_| r.random_range(-INIT_RANGE..INIT_RANGE)).collect()
        };
        let branches = input_dims
            .iter()
            .enumerate()
            .map(|(m, &d)| block((d + 1) * branch_width, m))
            .collect();
        let head = block(
            (input_dims.len() * branch_width + 1) * num_classes,
            input_dims.len(),
        );
        Ok(FusionNet {
            input_dims: input_dims.to_vec(),
            branch_width,
            num_classes,
            branches,
            head,
        })
    }

    pub fn num_modalities(&self) -> usize {
        self.input_dims.len()
    }

    pub fn branch_bytes(&self, m: usize) -> usize {
        self.branches[m].len() * BYTES_PER_PARAM
    }

    pub fn head_bytes(&self) -> usize {
        self.head.len() * BYTES_PER_PARAM
    }

    pub fn byte_size(&self) -> usize {
        (0..self.num_modalities()).map(|m| self.branch_bytes(m)).sum::<usize>() + self.head_bytes()
    }

    fn forward(&self, row: &[Vec<f64>], hidden: &mut [f64], logits: &mut [f64]) {
        let w = self.branch_width;
        for (m, x) in row.iter().enumerate() {
            dense(&self.branches[m], x, &mut hidden[m * w..(m + 1) * w]);
        }
        dense(&self.head, hidden, logits);
    }

    pub fn predict(&self, rows: &[Vec<Vec<f64>>]) -> Vec<usize> {
        let mut hidden = vec![0.0; self.num_modalities() * self.branch_width];
        let mut logits = vec![0.0; self.num_classes];
        rows.iter()
            .map(|row| {
                self.forward(row, &mut hidden, &mut logits);
                argmax(&logits)
            })
            .collect()
    }

    /// End-to-end minibatch SGD. `rows[i][m]` is sample `i`'s modality-`m`
    /// feature vector. Returns the trained net and its last-epoch mean loss.
    pub fn train(
        &self,
        rows: &[Vec<Vec<f64>>],
        labels: &[usize],
        params: &TrainParams,
        seed: u64,
    ) -> Result<(FusionNet, f64)> {
        let n = rows.len();
        if n == 0 || labels.len() != n {
            return Err(Error::Data(format!("{n} rows and {} labels", labels.len())));
        }
        if params.batch_size == 0 {
            return Err(Error::Data("batch_size must be at least 1".into()));
        }
        let width = self.num_modalities() * self.branch_width;
        let w = self.branch_width;
        let mut net = self.clone();
        let mut hidden = vec![0.0; width];
        let mut logits = vec![0.0; self.num_classes];
        let mut g_hidden = vec![0.0; width];
        let mut g_branches: Vec<Vec<f64>> = net.branches.iter().map(|b| vec![0.0; b.len()]).collect();
        let mut g_head = vec![0.0; net.head.len()];
        let mut order: Vec<usize> = (0..n).collect();
        let mut final_loss = 0.0;
        for epoch in 0..params.epochs {
            order.shuffle(&mut rng::stream(seed, &[tag::TRAIN, epoch as u64]));
            let mut epoch_loss = 0.0;
            for batch in order.chunks(params.batch_size) {
                g_branches.iter_mut().flatten().for_each(|g| *g = 0.0);
                g_head.iter_mut().for_each(|g| *g = 0.0);
                for &i in batch {
                    net.forward(&rows[i], &mut hidden, &mut logits);
                    epoch_loss += cross_entropy(&logits, labels[i]);
                    softmax_in_place(&mut logits);
                    logits[labels[i]] -= 1.0;
                    dense_backward(&mut g_head, &hidden, &logits);
                    for (j, gh) in g_hidden.iter_mut().enumerate() {
                        *gh = (0..net.num_classes)
                            .map(|c| net.head[c * width + j] * logits[c])
                            .sum();
                    }
                    for (m, x) in rows[i].iter().enumerate() {
                        dense_backward(&mut g_branches[m], x, &g_hidden[m * w..(m + 1) * w]);
                    }
                }
                let step = params.learning_rate / batch.len() as f64;
                for (p, g) in net.head.iter_mut().zip(&g_head) {
                    *p -= step * g;
                }
                for (block, grads) in net.branches.iter_mut().zip(&g_branches) {
                    for (p, g) in block.iter_mut().zip(grads) {
                        *p -= step * g;
                    }
                }
            }
            if !epoch_loss.is_finite()
                || net.head.iter().chain(net.branches.iter().flatten()).any(|p| !p.is_finite())
            {
                return Err(Error::Divergence {
                    epoch,
                    detail: "fusion network loss or parameters became non-finite".into(),
                });
            }
            final_loss = epoch_loss / n as f64;
        }
        Ok((net, final_loss))
    }
}

/// Weighted average of equally shaped parameter blocks.
pub(crate) fn average_blocks(blocks: &[(&[f64], f64)]) -> Vec<f64> {
    let total: f64 = blocks.iter().map(|(_, w)| w).sum();
    let mut out = vec![0.0; blocks[0].0.len()];
    for (block, w) in blocks {
        let beta = w / total;
        for (acc, p) in out.iter_mut().zip(block.iter()) {
            *acc += beta * p;
        }
    }
    out
}
