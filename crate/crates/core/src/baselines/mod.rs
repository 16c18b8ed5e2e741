//! Comparison systems: data-, feature- and decision-level fusion trained with
//! plain FedAvg, and the random-submodel upload scheme. The random-selection
//! ablations reuse [`Federation`](crate::federation::Federation) with uniform
//! selectors and are built in [`crate::methods`].

mod fusion;

pub use fusion::FusionNet;

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;

use crate::data::{hstack, Dataset};
use crate::error::{Error, Result};
use crate::federation::{
    client_error, mean_of_present, CommLedger, Component, FederationConfig, LedgerEntry,
    RoundDriver, RoundReport,
};
use crate::models::{init_model, ModalityModel};
use crate::rng::{derive_seed, stream, tag};
use fusion::average_blocks;

fn accuracy(predicted: &[usize], labels: &[usize]) -> Option<f64> {
    if labels.is_empty() {
        return None;
    }
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    Some(hits as f64 / labels.len() as f64)
}

fn empty_report(round: usize, k: usize) -> RoundReport {
    RoundReport {
        round,
        client_accuracy: Vec::new(),
        mean_accuracy: None,
        choices: vec![None; k],
        selected_clients: BTreeMap::new(),
        shapley: vec![BTreeMap::new(); k],
        local_losses: vec![BTreeMap::new(); k],
        uploads: Vec::new(),
        bytes_this_round: 0,
        cumulative_bytes: 0,
    }
}

struct FusedClient {
    train: Array2<f64>,
    test: Array2<f64>,
    train_labels: Vec<usize>,
    test_labels: Vec<usize>,
}

/// Early fusion: one model over the concatenation of all modalities, with
/// missing modalities zero-filled.
pub struct DataLevel {
    config: FederationConfig,
    clients: Vec<FusedClient>,
    global: ModalityModel,
    ledger: CommLedger,
    round: usize,
}

impl DataLevel {
    pub fn new(dataset: &Dataset, config: FederationConfig) -> Result<Self> {
        dataset.validate()?;
        let width: usize = dataset.feature_dims.iter().sum();
        let fuse = |c: &crate::data::ClientDataset, train: bool| {
            let parts: Vec<Array2<f64>> = dataset
                .feature_dims
                .iter()
                .enumerate()
                .map(|(m, &d)| c.features_or_zeros(m, d, train))
                .collect();
            let views: Vec<ArrayView2<'_, f64>> = parts.iter().map(|p| p.view()).collect();
            hstack(&views)
        };
        let clients = dataset
            .clients
            .iter()
            .map(|c| FusedClient {
                train: fuse(c, true),
                test: fuse(c, false),
                train_labels: c.train_labels.clone(),
                test_labels: c.test_labels.clone(),
            })
            .collect::<Vec<_>>();
        let global = init_model(
            config.arch,
            width,
            dataset.num_classes,
            derive_seed(config.seed, &[tag::INIT]),
        )?;
        Ok(DataLevel {
            ledger: CommLedger::new(clients.len()),
            clients,
            global,
            config,
            round: 1,
        })
    }

    pub fn global_model(&self) -> &ModalityModel {
        &self.global
    }
}

impl RoundDriver for DataLevel {
    fn clients_total(&self) -> usize {
        self.clients.len()
    }

    fn run_round(&mut self) -> Result<RoundReport> {
        let t = self.round;
        let k_total = self.clients.len();
        let mut report = empty_report(t, k_total);
        let mut trained = Vec::with_capacity(k_total);
        for (k, c) in self.clients.iter().enumerate() {
            let seed = derive_seed(self.config.seed, &[tag::TRAIN, t as u64, k as u64]);
            let (model, outcome) = self
                .global
                .train_local(c.train.view(), &c.train_labels, &self.config.training, seed)
                .map_err(client_error(k, t))?;
            report.local_losses[k].insert(0, outcome.final_loss);
            trained.push(model);
        }
        let total: usize = self.clients.iter().map(|c| c.train_labels.len()).sum();
        let models: Vec<&ModalityModel> = trained.iter().collect();
        let weights: Vec<f64> = self
            .clients
            .iter()
            .map(|c| c.train_labels.len() as f64 / total as f64)
            .collect();
        self.global = crate::models::weighted_sum(&models, &weights)?;
        for (k, model) in trained.iter().enumerate() {
            let entry = LedgerEntry {
                round: t,
                client: k,
                component: Component::Joint,
                bytes: model.byte_size() as u64,
            };
            self.ledger.record(entry);
            report.uploads.push(entry);
        }
        report.client_accuracy = self
            .clients
            .iter()
            .map(|c| Ok(accuracy(&self.global.predict(c.test.view())?, &c.test_labels)))
            .collect::<Result<_>>()?;
        report.mean_accuracy = mean_of_present(&report.client_accuracy);
        report.bytes_this_round = report.uploads.iter().map(|e| e.bytes).sum();
        report.cumulative_bytes = self.ledger.total_bytes();
        self.round += 1;
        Ok(report)
    }
}

/// How a fusion-network client uploads its stack each round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UploadScheme {
    /// Every branch and the head.
    Full,
    /// One uniformly drawn component among the owned branches and the head.
    RandomComponent,
}

struct SplitClient {
    train: Vec<Vec<Vec<f64>>>,
    test: Vec<Vec<Vec<f64>>>,
    train_labels: Vec<usize>,
    test_labels: Vec<usize>,
    mask: Vec<usize>,
}

fn row_major(parts: &[Array2<f64>], n: usize) -> Vec<Vec<Vec<f64>>> {
    (0..n)
        .map(|i| parts.iter().map(|p| p.row(i).to_vec()).collect())
        .collect()
}

/// Intermediate and late fusion trained end-to-end with FedAvg.
pub struct FusionFederation {
    config: FederationConfig,
    scheme: UploadScheme,
    clients: Vec<SplitClient>,
    global: FusionNet,
    ledger: CommLedger,
    round: usize,
}

impl FusionFederation {
    /// Decision level: each branch emits class scores.
    pub fn decision_level(dataset: &Dataset, config: FederationConfig) -> Result<Self> {
        Self::new(dataset, config, dataset.num_classes, UploadScheme::Full)
    }

    /// Feature level: each branch is a `feature_hidden_units`-wide encoder.
    pub fn feature_level(dataset: &Dataset, config: FederationConfig) -> Result<Self> {
        let width = config.feature_hidden_units;
        Self::new(dataset, config, width, UploadScheme::Full)
    }

    /// Decision-level network with one random component uploaded per client.
    pub fn random_submodel(dataset: &Dataset, config: FederationConfig) -> Result<Self> {
        Self::new(dataset, config, dataset.num_classes, UploadScheme::RandomComponent)
    }

    pub fn new(
        dataset: &Dataset,
        config: FederationConfig,
        branch_width: usize,
        scheme: UploadScheme,
    ) -> Result<Self> {
        dataset.validate()?;
        let clients = dataset
            .clients
            .iter()
            .map(|c| {
                let parts = |train: bool| -> Vec<Array2<f64>> {
                    dataset
                        .feature_dims
                        .iter()
                        .enumerate()
                        .map(|(m, &d)| c.features_or_zeros(m, d, train))
                        .collect()
                };
                SplitClient {
                    train: row_major(&parts(true), c.train_len()),
                    test: row_major(&parts(false), c.test_len()),
                    train_labels: c.train_labels.clone(),
                    test_labels: c.test_labels.clone(),
                    mask: c.modality_mask(),
                }
            })
            .collect::<Vec<_>>();
        let global = FusionNet::new(
            &dataset.feature_dims,
            branch_width,
            dataset.num_classes,
            derive_seed(config.seed, &[tag::INIT]),
        )?;
        Ok(FusionFederation {
            ledger: CommLedger::new(clients.len()),
            clients,
            global,
            config,
            scheme,
            round: 1,
        })
    }

    pub fn global_model(&self) -> &FusionNet {
        &self.global
    }

    /// Components client `k` uploads in round `t`.
    fn components(&self, k: usize, t: usize) -> Vec<Component> {
        let mask = &self.clients[k].mask;
        match self.scheme {
            UploadScheme::Full => (0..self.global.num_modalities())
                .map(Component::Modality)
                .chain([Component::Fusion])
                .collect(),
            UploadScheme::RandomComponent => {
                let seed = derive_seed(self.config.seed, &[tag::SUBMODEL, t as u64, k as u64]);
                let pick = stream(seed, &[]).random_range(0..=mask.len());
                vec![mask.get(pick).map_or(Component::Fusion, |&m| Component::Modality(m))]
            }
        }
    }
}

impl RoundDriver for FusionFederation {
    fn clients_total(&self) -> usize {
        self.clients.len()
    }

    fn run_round(&mut self) -> Result<RoundReport> {
        let t = self.round;
        let k_total = self.clients.len();
        let mut report = empty_report(t, k_total);
        let mut trained = Vec::with_capacity(k_total);
        for (k, c) in self.clients.iter().enumerate() {
            let seed = derive_seed(self.config.seed, &[tag::TRAIN, t as u64, k as u64]);
            let (net, loss) = self
                .global
                .train(&c.train, &c.train_labels, &self.config.training, seed)
                .map_err(client_error(k, t))?;
            report.local_losses[k].insert(0, loss);
            trained.push(net);
        }

        let mut senders: BTreeMap<Component, Vec<usize>> = BTreeMap::new();
        for k in 0..k_total {
            for component in self.components(k, t) {
                senders.entry(component).or_default().push(k);
            }
        }
        for (&component, ks) in &senders {
            let weight = |k: usize| self.clients[k].train_labels.len() as f64;
            let block = |net: &FusionNet| -> Vec<f64> {
                match component {
                    Component::Modality(m) => net.branches[m].clone(),
                    _ => net.head.clone(),
                }
            };
            let blocks: Vec<(Vec<f64>, f64)> =
                ks.iter().map(|&k| (block(&trained[k]), weight(k))).collect();
            let refs: Vec<(&[f64], f64)> = blocks.iter().map(|(b, w)| (b.as_slice(), *w)).collect();
            let averaged = average_blocks(&refs);
            let bytes = match component {
                Component::Modality(m) => self.global.branch_bytes(m),
                Component::Fusion => self.global.head_bytes(),
                Component::Joint => {
                    return Err(Error::Aggregation("fusion networks have no joint component".into()))
                }
            } as u64;
            match component {
                Component::Modality(m) => {
                    self.global.branches[m] = averaged;
                    report.selected_clients.insert(m, ks.clone());
                }
                _ => self.global.head = averaged,
            }
            for &k in ks {
                report.uploads.push(LedgerEntry {
                    round: t,
                    client: k,
                    component,
                    bytes,
                });
            }
        }
        report.uploads.sort_by_key(|e| (e.client, e.component));
        for &entry in &report.uploads {
            self.ledger.record(entry);
        }

        report.client_accuracy = self
            .clients
            .iter()
            .map(|c| accuracy(&self.global.predict(&c.test), &c.test_labels))
            .collect();
        report.mean_accuracy = mean_of_present(&report.client_accuracy);
        report.bytes_this_round = report.uploads.iter().map(|e| e.bytes).sum();
        report.cumulative_bytes = self.ledger.total_bytes();
        self.round += 1;
        Ok(report)
    }
}
