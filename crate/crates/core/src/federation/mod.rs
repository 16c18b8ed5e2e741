//! The mmFedMC round: local training, on-device ensemble fitting, Shapley
//! scoring, joint modality/client selection, and weighted aggregation.

mod budget;
mod ledger;
mod report;

pub use budget::{run_until_budget, BudgetRun, RoundDriver, BYTES_PER_MB, DEFAULT_MAX_ROUNDS};
pub use ledger::{CommLedger, Component, LedgerEntry};
pub use report::{mean_of_present, RoundReport};

use std::collections::BTreeMap;

use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{ClientDataset, Dataset};
use crate::ensemble::{
    fit_ensemble, shapley_exact, subsample_indices, EnsembleModel, ForestParams,
    ShapleyAggregation, ShapleyOptions, SHAPLEY_SAMPLE_CAP,
};
use crate::error::{Error, Result};
use crate::models::{init_model, weighted_sum, Arch, ModalityModel, TrainParams};
use crate::rng::{derive_seed, tag};
use crate::selection::{
    client_selector, modality_selector, target_client_count, ClientSelector, ModalityChoice,
    ModalitySelector, PriorityBreakdown, RecencyTracker, SelectionConfig,
};

/// Settings shared by every federated method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FederationConfig {
    pub selection: SelectionConfig,
    pub training: TrainParams,
    pub arch: Arch,
    pub forest: ForestParams,
    pub shapley_aggregation: ShapleyAggregation,
    /// Rows per client used for the Shapley estimate each round.
    pub shapley_samples: usize,
    /// Encoder width of the feature-level baseline.
    pub feature_hidden_units: usize,
    pub seed: u64,
}

impl Default for FederationConfig {
    fn default() -> Self {
        FederationConfig {
            selection: SelectionConfig::default(),
            training: TrainParams::default(),
            arch: Arch::default(),
            forest: ForestParams::default(),
            shapley_aggregation: ShapleyAggregation::default(),
            shapley_samples: SHAPLEY_SAMPLE_CAP,
            feature_hidden_units: 8,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClientState {
    pub client_id: usize,
    pub data: ClientDataset,
    /// Current model per owned modality, keyed by global modality id.
    pub modality_models: BTreeMap<usize, ModalityModel>,
    /// Stage-2 ensemble over the deployed global models.
    pub ensemble: Option<EnsembleModel>,
    /// Last-epoch training loss per owned modality.
    pub local_losses: BTreeMap<usize, f64>,
}

impl ClientState {
    pub fn modality_mask(&self) -> Vec<usize> {
        self.data.modality_mask()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub global_models: BTreeMap<usize, ModalityModel>,
    pub round: usize,
}

/// Sample-count weighted average of the uploaded models for one modality.
pub fn aggregate_modality(uploads: &[(&ModalityModel, usize)]) -> Result<ModalityModel> {
    let total: usize = uploads.iter().map(|(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Aggregation(
            "uploads carry no training samples".into(),
        ));
    }
    let models: Vec<&ModalityModel> = uploads.iter().map(|(m, _)| *m).collect();
    let weights: Vec<f64> = uploads
        .iter()
        .map(|(_, n)| *n as f64 / total as f64)
        .collect();
    weighted_sum(&models, &weights)
}

/// Per-modality class predictions for a client's rows, one column per
/// owned modality in ascending id order.
pub fn prediction_matrix(
    client: &ClientDataset,
    models: &BTreeMap<usize, ModalityModel>,
    train: bool,
) -> Result<Array2<usize>> {
    let rows = if train { client.train_len() } else { client.test_len() };
    let mask = client.modality_mask();
    let mut out = Array2::zeros((rows, mask.len()));
    for (col, &m) in mask.iter().enumerate() {
        let split = client.modality(m)?;
        let x = if train { &split.train } else { &split.test };
        let model = models
            .get(&m)
            .ok_or_else(|| Error::Data(format!("client {} has no model for modality {m}", client.client_id)))?;
        for (i, c) in model.predict(x.view())?.into_iter().enumerate() {
            out[[i, col]] = c;
        }
    }
    Ok(out)
}

/// Test accuracy of each client's ensemble over its deployed models.
pub fn evaluate_clients(clients: &[ClientState]) -> Result<Vec<Option<f64>>> {
    clients
        .iter()
        .map(|c| {
            if c.data.test_len() == 0 {
                return Ok(None);
            }
            let Some(ens) = &c.ensemble else {
                return Ok(None);
            };
            let preds = prediction_matrix(&c.data, &c.modality_models, false)?;
            ens.accuracy(preds.view(), &c.data.test_labels).map(Some)
        })
        .collect()
}

pub(crate) fn client_error(client: usize, round: usize) -> impl Fn(Error) -> Error {
    move |source| Error::Client {
        client,
        round,
        source: Box::new(source),
    }
}

/// The mmFedMC protocol with pluggable selection policies.
pub struct Federation {
    config: FederationConfig,
    num_classes: usize,
    clients: Vec<ClientState>,
    server: ServerState,
    tracker: RecencyTracker,
    ledger: CommLedger,
    modality_selector: Box<dyn ModalitySelector>,
    client_selector: Box<dyn ClientSelector>,
    last_uploads: Vec<BTreeMap<usize, ModalityModel>>,
}

impl Federation {
    pub fn new(dataset: &Dataset, config: FederationConfig) -> Result<Self> {
        let clients_sel = client_selector(config.selection.loss_direction);
        Self::with_selectors(dataset, config, modality_selector(false), clients_sel)
    }

    pub fn with_selectors(
        dataset: &Dataset,
        config: FederationConfig,
        modality_selector: Box<dyn ModalitySelector>,
        client_selector: Box<dyn ClientSelector>,
    ) -> Result<Self> {
        dataset.validate()?;
        config.selection.validate("selection")?;
        let global_models = dataset
            .feature_dims
            .iter()
            .enumerate()
            .map(|(m, &d)| {
                let seed = derive_seed(config.seed, &[tag::INIT, m as u64]);
                Ok((m, init_model(config.arch, d, dataset.num_classes, seed)?.with_modality_id(m)))
            })
            .collect::<Result<BTreeMap<_, _>>>()?;
        let clients = dataset
            .clients
            .iter()
            .map(|data| ClientState {
                client_id: data.client_id,
                modality_models: data
                    .modality_mask()
                    .into_iter()
                    .map(|m| (m, global_models[&m].clone()))
                    .collect(),
                data: data.clone(),
                ensemble: None,
                local_losses: BTreeMap::new(),
            })
            .collect::<Vec<_>>();
        Ok(Federation {
            num_classes: dataset.num_classes,
            ledger: CommLedger::new(clients.len()),
            last_uploads: vec![BTreeMap::new(); clients.len()],
            clients,
            server: ServerState {
                global_models,
                round: 0,
            },
            tracker: RecencyTracker::new(),
            config,
            modality_selector,
            client_selector,
        })
    }

    pub fn clients(&self) -> &[ClientState] {
        &self.clients
    }

    pub fn server(&self) -> &ServerState {
        &self.server
    }

    pub fn ledger(&self) -> &CommLedger {
        &self.ledger
    }

    pub fn tracker(&self) -> &RecencyTracker {
        &self.tracker
    }

    /// Locally trained models of the last round, per client, before aggregation.
    pub fn local_models(&self, client: usize) -> &BTreeMap<usize, ModalityModel> {
        &self.last_uploads[client]
    }

    /// Train locally, fit the stage-1 ensemble, score and pick modalities.
    fn client_update(&self, k: usize, t: usize) -> Result<ClientUpdate> {
        let cfg = &self.config;
        let client = &self.clients[k];
        let data = &client.data;
        let mask = data.modality_mask();

        let mut trained = BTreeMap::new();
        let mut losses = BTreeMap::new();
        for &m in &mask {
            let split = data.modality(m)?;
            let seed = derive_seed(cfg.seed, &[tag::TRAIN, t as u64, k as u64, m as u64]);
            let (model, outcome) = client.modality_models[&m].train_local(
                split.train.view(),
                &data.train_labels,
                &cfg.training,
                seed,
            )?;
            trained.insert(m, model);
            losses.insert(m, outcome.final_loss);
        }

        let preds = prediction_matrix(data, &trained, true)?;
        let stage1 = fit_ensemble(
            preds.view(),
            &data.train_labels,
            self.num_classes,
            &cfg.forest,
            derive_seed(cfg.seed, &[tag::ENSEMBLE_STAGE1, t as u64, k as u64]),
        )?;
        let rows = subsample_indices(
            preds.nrows(),
            cfg.shapley_samples,
            derive_seed(cfg.seed, &[tag::SHAPLEY, t as u64, k as u64]),
        );
        let sample = preds.select(Axis(0), &rows);
        let targets: Vec<usize> = rows.iter().map(|&i| data.train_labels[i]).collect();
        let shapley = shapley_exact(
            &stage1,
            sample.view(),
            sample.view(),
            &targets,
            &ShapleyOptions {
                max_samples: cfg.shapley_samples,
                aggregation: cfg.shapley_aggregation,
                seed: 0,
            },
        )?;

        let sizes = mask.iter().map(|m| trained[m].byte_size() as f64).collect();
        let recency = mask
            .iter()
            .map(|&m| self.tracker.recency(k, m) as f64)
            .collect();
        let breakdown = PriorityBreakdown::compute(
            shapley.magnitudes.clone(),
            sizes,
            recency,
            t,
            &cfg.selection,
        )?;
        let positions = self.modality_selector.select(
            &breakdown,
            cfg.selection.gamma,
            derive_seed(cfg.seed, &[tag::MODALITY_SELECT, t as u64, k as u64]),
        );
        let selected = positions.iter().map(|&p| mask[p]).collect();
        let shapley_by_id = mask
            .iter()
            .copied()
            .zip(shapley.magnitudes.iter().copied())
            .collect();
        Ok(ClientUpdate {
            trained,
            losses,
            shapley: shapley_by_id,
            choice: ModalityChoice {
                owned: mask,
                selected,
                breakdown,
            },
        })
    }

    /// Deploy the global models and refit the stage-2 ensemble.
    fn deploy(&mut self, k: usize, t: usize) -> Result<()> {
        let seed = derive_seed(self.config.seed, &[tag::ENSEMBLE_STAGE2, t as u64, k as u64]);
        let client = &mut self.clients[k];
        for (m, model) in client.modality_models.iter_mut() {
            *model = self.server.global_models[m].clone();
        }
        let preds = prediction_matrix(&client.data, &client.modality_models, true)?;
        client.ensemble = Some(fit_ensemble(
            preds.view(),
            &client.data.train_labels,
            self.num_classes,
            &self.config.forest,
            seed,
        )?);
        Ok(())
    }
}

struct ClientUpdate {
    trained: BTreeMap<usize, ModalityModel>,
    losses: BTreeMap<usize, f64>,
    shapley: BTreeMap<usize, f64>,
    choice: ModalityChoice,
}

impl RoundDriver for Federation {
    fn clients_total(&self) -> usize {
        self.clients.len()
    }

    fn run_round(&mut self) -> Result<RoundReport> {
        let t = self.tracker.current_round();
        let k_total = self.clients.len();
        let updates = (0..k_total)
            .map(|k| self.client_update(k, t).map_err(client_error(k, t)))
            .collect::<Result<Vec<_>>>()?;

        let count = target_client_count(self.config.selection.delta, k_total);
        let mut selected_clients = BTreeMap::new();
        let mut uploads = Vec::new();
        let mut pairs = Vec::new();
        for m in 0..self.server.global_models.len() {
            let offers: Vec<(usize, f64)> = updates
                .iter()
                .enumerate()
                .filter(|(_, u)| u.choice.selected.contains(&m))
                .map(|(k, u)| (k, u.losses[&m]))
                .collect();
            if offers.is_empty() {
                continue;
            }
            let seed = derive_seed(
                self.config.seed,
                &[tag::CLIENT_SELECT, self.config.selection.random_seed, t as u64, m as u64],
            );
            let chosen = self
                .client_selector
                .select(&offers, count.min(offers.len()), seed);
            let sent: Vec<(&ModalityModel, usize)> = chosen
                .iter()
                .map(|&k| (&updates[k].trained[&m], self.clients[k].data.sample_count(m)))
                .collect();
            let global = aggregate_modality(&sent)?.with_modality_id(m);
            for &k in &chosen {
                let entry = LedgerEntry {
                    round: t,
                    client: k,
                    component: Component::Modality(m),
                    bytes: updates[k].trained[&m].byte_size() as u64,
                };
                self.ledger.record(entry);
                uploads.push(entry);
                pairs.push((k, m));
            }
            self.server.global_models.insert(m, global);
            selected_clients.insert(m, chosen);
        }
        self.server.round = t;

        let mut choices = Vec::with_capacity(k_total);
        let mut shapley = Vec::with_capacity(k_total);
        let mut local_losses = Vec::with_capacity(k_total);
        for (k, u) in updates.into_iter().enumerate() {
            self.clients[k].local_losses = u.losses.clone();
            self.last_uploads[k] = u.trained;
            choices.push(Some(u.choice));
            shapley.push(u.shapley);
            local_losses.push(u.losses);
        }
        for k in 0..k_total {
            self.deploy(k, t).map_err(client_error(k, t))?;
        }
        let client_accuracy = evaluate_clients(&self.clients)?;

        self.tracker.mark_uploaded(&pairs, t)?;
        self.tracker.advance();
        let bytes_this_round = uploads.iter().map(|e| e.bytes).sum();
        Ok(RoundReport {
            round: t,
            mean_accuracy: mean_of_present(&client_accuracy),
            client_accuracy,
            choices,
            selected_clients,
            shapley,
            local_losses,
            uploads,
            bytes_this_round,
            cumulative_bytes: self.ledger.total_bytes(),
        })
    }
}
