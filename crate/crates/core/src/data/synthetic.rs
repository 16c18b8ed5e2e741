//! Class-conditional Gaussian generator.
//!
//! Each modality places one mean per class, with pairwise distance
//! `CLASS_SEPARATION · informativeness`, and adds unit-variance noise. Clients
//! in group `g > 0` see class `c` drawn around a point moved towards the mean
//! of class `(c + g) mod C` by `group_shift_magnitude` (1.0 = fully swapped),
//! so the same label means different features across groups.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{split_rows, train_count, ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::rng::{self, tag, Rng};

/// Distance between class means at informativeness 1.
pub const CLASS_SEPARATION: f64 = 6.0;

const MAX_IID_ATTEMPTS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModalitySpec {
    pub feature_dim: usize,
    pub informativeness: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Iid,
    #[default]
    Natural,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NaturalParams {
    /// Dirichlet concentration of per-client label proportions.
    pub label_skew_concentration: f64,
    pub group_count: usize,
    pub group_shift_magnitude: f64,
    /// Log-normal law of per-client sample counts.
    pub samples_log_mean: f64,
    pub samples_log_std: f64,
}

impl Default for NaturalParams {
    fn default() -> Self {
        NaturalParams {
            label_skew_concentration: 1.0,
            group_count: 1,
            group_shift_magnitude: 0.0,
            samples_log_mean: 120f64.ln(),
            samples_log_std: 0.5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub num_clients: usize,
    pub modalities: Vec<ModalitySpec>,
    pub num_classes: usize,
    #[serde(default)]
    pub regime: Regime,
    #[serde(default)]
    pub natural: NaturalParams,
    #[serde(default)]
    pub missing_modality_rate: f64,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_train_fraction() -> f64 {
    0.8
}

impl DatasetSpec {
    /// Checks ranges; errors name the field under `prefix`.
    pub fn validate(&self, prefix: &str) -> Result<()> {
        let path = |f: &str| format!("{prefix}.{f}");
        let bad = |f: &str, msg: String| Err(Error::invalid_config(path(f), msg));
        if self.num_clients == 0 {
            return bad("num_clients", "must be at least 1".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes", "must be at least 2".into());
        }
        if self.modalities.is_empty() {
            return bad("modalities", "at least one modality is required".into());
        }
        for (i, m) in self.modalities.iter().enumerate() {
            if m.feature_dim == 0 {
                return bad(&format!("modalities[{i}].feature_dim"), "must be at least 1".into());
            }
            if !(0.0..=1.0).contains(&m.informativeness) {
                return bad(
                    &format!("modalities[{i}].informativeness"),
                    format!("must lie in [0, 1], got {}", m.informativeness),
                );
            }
        }
        if !(0.0..1.0).contains(&self.missing_modality_rate) {
            return bad("missing_modality_rate", "must lie in [0, 1)".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad("train_fraction", "must lie in (0, 1)".into());
        }
        let n = &self.natural;
        if !(n.label_skew_concentration > 0.0 && n.label_skew_concentration.is_finite()) {
            return bad("natural.label_skew_concentration", "must be positive".into());
        }
        if n.group_count == 0 {
            return bad("natural.group_count", "must be at least 1".into());
        }
        if !n.group_shift_magnitude.is_finite() || n.group_shift_magnitude < 0.0 {
            return bad("natural.group_shift_magnitude", "must be nonnegative".into());
        }
        if !n.samples_log_mean.is_finite() || !(n.samples_log_std >= 0.0) {
            return bad("natural.samples_log_std", "sample-count law must be finite with std >= 0".into());
        }
        Ok(())
    }

    fn min_samples(&self) -> usize {
        // enough that the expected training share covers every class
        ((self.num_classes as f64 / self.train_fraction).ceil() as usize + 1).max(2)
    }
}

/// Class means for one modality, `num_classes × dim`.
fn class_means(dim: usize, num_classes: usize, informativeness: f64) -> Array2<f64> {
    let spacing = CLASS_SEPARATION * informativeness;
    let mut means = Array2::zeros((num_classes, dim));
    if dim >= num_classes {
        let scale = spacing / std::f64::consts::SQRT_2;
        for c in 0..num_classes {
            means[[c, c]] = scale;
        }
    } else if dim >= 2 {
        let radius = spacing / (2.0 * (std::f64::consts::PI / num_classes as f64).sin());
        for c in 0..num_classes {
            let angle = 2.0 * std::f64::consts::PI * c as f64 / num_classes as f64;
            means[[c, 0]] = radius * angle.cos();
            means[[c, 1]] = radius * angle.sin();
        }
    } else {
        let mid = (num_classes as f64 - 1.0) / 2.0;
        for c in 0..num_classes {
            means[[c, 0]] = spacing * (c as f64 - mid);
        }
    }
    means
}

fn dirichlet(rng: &mut Rng, k: usize, alpha: f64) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("alpha validated positive");
    let mut draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let sum: f64 = draws.iter().sum();
    if sum <= 0.0 || !sum.is_finite() {
        // all mass underflowed; pick one class
        let hot = rng.random_range(0..k);
        draws.iter_mut().enumerate().for_each(|(i, d)| *d = (i == hot) as u8 as f64);
        return draws;
    }
    draws.iter().map(|d| d / sum).collect()
}

fn categorical(rng: &mut Rng, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// All samples of one client before masking and splitting.
struct RawClient {
    features: Vec<Array2<f64>>,
    labels: Vec<usize>,
    group: usize,
}

struct Generator<'a> {
    spec: &'a DatasetSpec,
    means: Vec<Array2<f64>>,
}

impl Generator<'_> {
    fn sample_features(&self, rng: &mut Rng, labels: &[usize], group: usize) -> Vec<Array2<f64>> {
        let c_total = self.spec.num_classes;
        let shift = self.spec.natural.group_shift_magnitude;
        self.means
            .iter()
            .map(|means| {
                let dim = means.ncols();
                let mut x = Array2::zeros((labels.len(), dim));
                for (i, &y) in labels.iter().enumerate() {
                    let swapped = (y + group) % c_total;
                    for j in 0..dim {
                        let base = means[[y, j]];
                        let center = base + shift * (means[[swapped, j]] - base);
                        let noise: f64 = StandardNormal.sample(rng);
                        x[[i, j]] = center + noise;
                    }
                }
                x
            })
            .collect()
    }

    fn raw_client(&self, k: usize) -> RawClient {
        let spec = self.spec;
        let mut rng = rng::stream(spec.seed, &[tag::DATA, k as u64]);
        let nat = &spec.natural;
        let law = LogNormal::new(nat.samples_log_mean, nat.samples_log_std)
            .expect("validated sample-count law");
        let n = (law.sample(&mut rng).round() as usize).max(spec.min_samples());
        let group = k % nat.group_count;
        let probs = dirichlet(&mut rng, spec.num_classes, nat.label_skew_concentration);
        let labels: Vec<usize> = (0..n).map(|_| categorical(&mut rng, &probs)).collect();
        let features = self.sample_features(&mut rng, &labels, group);
        RawClient {
            features,
            labels,
            group,
        }
    }
}

fn draw_mask(rng: &mut Rng, m: usize, rate: f64) -> Vec<bool> {
    let mut keep: Vec<bool> = (0..m).map(|_| rng.random::<f64>() >= rate).collect();
    if !keep.iter().any(|&k| k) {
        keep[rng.random_range(0..m)] = true;
    }
    keep
}

/// Pools every client's samples, shuffles, and deals them back in equal
/// shares. Retries with a fresh shuffle while some client's training split
/// lacks a class.
fn redistribute(spec: &DatasetSpec, raw: Vec<RawClient>) -> Vec<RawClient> {
    let m = spec.modalities.len();
    let total: usize = raw.iter().map(|r| r.labels.len()).sum();
    let labels: Vec<usize> = raw.iter().flat_map(|r| r.labels.iter().copied()).collect();
    let groups: Vec<usize> = raw
        .iter()
        .flat_map(|r| std::iter::repeat_n(r.group, r.labels.len()))
        .collect();
    let pooled: Vec<Array2<f64>> = (0..m)
        .map(|j| {
            let views: Vec<_> = raw.iter().map(|r| r.features[j].view()).collect();
            ndarray::concatenate(ndarray::Axis(0), &views).expect("widths agree")
        })
        .collect();
    let k = spec.num_clients;
    let share = total / k;
    let mut order: Vec<usize> = (0..total).collect();
    for attempt in 0..MAX_IID_ATTEMPTS {
        let mut rng = rng::stream(spec.seed, &[tag::DATA, u64::MAX, attempt]);
        order.shuffle(&mut rng);
        let chunks: Vec<&[usize]> = (0..k)
            .map(|c| {
                let end = if c + 1 == k { total } else { (c + 1) * share };
                &order[c * share..end]
            })
            .collect();
        let covers_all = chunks.iter().all(|idx| {
            let n_train = train_count(idx.len(), spec.train_fraction);
            let mut seen = vec![false; spec.num_classes];
            idx[..n_train].iter().for_each(|&i| seen[labels[i]] = true);
            seen.iter().all(|&s| s)
        });
        if covers_all || attempt + 1 == MAX_IID_ATTEMPTS {
            return chunks
                .iter()
                .map(|idx| RawClient {
                    features: pooled.iter().map(|x| x.select(ndarray::Axis(0), idx)).collect(),
                    labels: idx.iter().map(|&i| labels[i]).collect(),
                    group: groups[idx[0]],
                })
                .collect();
        }
    }
    unreachable!("loop returns on its last attempt")
}

/// Generates a deterministic multimodal dataset from `spec`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate("dataset").map_err(|e| Error::Spec(e.to_string()))?;
    let generator = Generator {
        spec,
        means: spec
            .modalities
            .iter()
            .map(|m| class_means(m.feature_dim, spec.num_classes, m.informativeness))
            .collect(),
    };
    let mut raw: Vec<RawClient> = (0..spec.num_clients).map(|k| generator.raw_client(k)).collect();
    if spec.regime == Regime::Iid {
        let total: usize = raw.iter().map(|r| r.labels.len()).sum();
        if total < spec.num_clients * spec.min_samples() {
            return Err(Error::Spec(format!(
                "{total} pooled samples cannot give {} clients {} samples each",
                spec.num_clients,
                spec.min_samples()
            )));
        }
        raw = redistribute(spec, raw);
    }

    let m = spec.modalities.len();
    let clients = raw
        .into_iter()
        .enumerate()
        .map(|(k, r)| {
            let mut rng = rng::stream(spec.seed, &[tag::SPLIT, k as u64]);
            let keep = draw_mask(&mut rng, m, spec.missing_modality_rate);
            let n = r.labels.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let (splits, train_labels, test_labels) =
                split_rows(&r.features, &r.labels, &order, train_count(n, spec.train_fraction));
            ClientDataset {
                client_id: k,
                modalities: splits
                    .into_iter()
                    .zip(keep)
                    .map(|(s, kept)| kept.then_some(s))
                    .collect(),
                train_labels,
                test_labels,
                group: r.group,
            }
        })
        .collect();

    let dataset = Dataset {
        clients,
        num_classes: spec.num_classes,
        feature_dims: spec.modalities.iter().map(|m| m.feature_dim).collect(),
    };
    dataset.validate()?;
    Ok(dataset)
}
