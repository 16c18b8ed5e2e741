use std::collections::BTreeMap;

use mmfedmc::data::*;
use mmfedmc::ensemble::{DecisionTree, EnsembleModel};
use mmfedmc::federation::*;
use mmfedmc::models::{init_model, Arch, ModalityModel};
use mmfedmc::selection::SelectionConfig;
use mmfedmc::Error;
use ndarray::Array2;

fn spec(clients: usize, dims: &[usize], seed: u64) -> DatasetSpec {
    DatasetSpec {
        num_clients: clients,
        modalities: dims
            .iter()
            .map(|&d| ModalitySpec {
                feature_dim: d,
                informativeness: 0.6,
            })
            .collect(),
        num_classes: 3,
        regime: Regime::Natural,
        natural: NaturalParams {
            samples_log_mean: 40f64.ln(),
            ..NaturalParams::default()
        },
        missing_modality_rate: 0.0,
        train_fraction: 0.8,
        seed,
    }
}

fn config(gamma: usize, delta: f64, seed: u64) -> FederationConfig {
    FederationConfig {
        selection: SelectionConfig {
            gamma,
            delta,
            ..SelectionConfig::default()
        },
        seed,
        ..FederationConfig::default()
    }
}

#[test]
fn aggregation_weights_follow_sample_counts() {
    let base = init_model(Arch::LinearSoftmax, 1, 2, 0).unwrap();
    let with = |v: f64| ModalityModel {
        params: vec![v; base.params.len()],
        ..base.clone()
    };
    let (a, b, c) = (with(1.0), with(2.0), with(4.0));
    let two = aggregate_modality(&[(&a, 30), (&b, 70)]).unwrap();
    assert!(two.params.iter().all(|p| (p - (0.3 + 1.4)).abs() < 1e-15));
    let three = aggregate_modality(&[(&a, 50), (&b, 50), (&c, 100)]).unwrap();
    assert!(three.params.iter().all(|p| (p - (0.25 + 0.5 + 2.0)).abs() < 1e-15));
    let equal = aggregate_modality(&[(&a, 5), (&c, 5)]).unwrap();
    assert!(equal.params.iter().all(|p| (p - 2.5).abs() < 1e-15));

    let wide = init_model(Arch::LinearSoftmax, 3, 2, 0).unwrap();
    assert!(matches!(
        aggregate_modality(&[(&a, 1), (&wide, 1)]),
        Err(Error::Aggregation(_))
    ));
}

#[test]
fn single_client_full_selection_keeps_its_model() {
    let ds = generate(&spec(1, &[2, 3], 4)).unwrap();
    let mut fed = Federation::new(&ds, config(2, 1.0, 4)).unwrap();
    for _ in 0..3 {
        fed.run_round().unwrap();
        for m in 0..2 {
            assert_eq!(fed.server().global_models[&m].params, fed.local_models(0)[&m].params);
        }
    }
}

#[test]
fn ledger_selection_and_stale_models() {
    let ds = generate(&spec(6, &[2, 4, 3], 7)).unwrap();
    let mut fed = Federation::new(&ds, config(1, 0.34, 7)).unwrap();
    let mut previous = fed.server().global_models.clone();
    let mut cumulative = 0;
    for round in 1..=8 {
        let r = fed.run_round().unwrap();
        assert_eq!(r.round, round);
        let expected: u64 = r.uploads.iter().map(|e| e.bytes).sum();
        assert_eq!(r.bytes_this_round, expected);
        for e in &r.uploads {
            let Component::Modality(m) = e.component else { panic!("unexpected component") };
            assert_eq!(e.bytes, previous[&m].byte_size() as u64);
            // accepted ⊆ offered ⊆ owned
            let choice = r.choices[e.client].as_ref().unwrap();
            assert!(choice.selected.contains(&m));
            assert!(choice.owned.contains(&m));
            assert!(r.selected_clients[&m].contains(&e.client));
        }
        assert_eq!(r.uploads.len(), r.selected_clients.values().map(Vec::len).sum::<usize>());
        for (m, ks) in &r.selected_clients {
            let offered = r.choices.iter().flatten().filter(|c| c.selected.contains(m)).count();
            assert_eq!(ks.len(), offered.min(2));
        }
        for (m, model) in &fed.server().global_models {
            if !r.selected_clients.contains_key(m) {
                assert_eq!(model.params, previous[m].params, "modality {m} changed without uploads");
            }
        }
        cumulative += r.bytes_this_round;
        assert_eq!(r.cumulative_bytes, cumulative);
        assert_eq!(fed.ledger().total_bytes(), cumulative);
        for (k, mask) in r.choices.iter().enumerate() {
            let choice = mask.as_ref().unwrap();
            assert_eq!(choice.selected.len(), 1);
            assert_eq!(choice.owned, ds.clients[k].modality_mask());
        }
        previous = fed.server().global_models.clone();
    }
}

#[test]
fn runs_are_deterministic() {
    let ds = generate(&spec(4, &[2, 3], 1)).unwrap();
    let run = || {
        let mut fed = Federation::new(&ds, config(1, 0.5, 9)).unwrap();
        (0..4).map(|_| fed.run_round().unwrap()).collect::<Vec<_>>()
    };
    let a = serde_json::to_string(&run()).unwrap();
    let b = serde_json::to_string(&run()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn recency_tracks_actual_uploads() {
    let ds = generate(&spec(5, &[2, 3, 2], 3)).unwrap();
    let mut fed = Federation::new(&ds, config(1, 0.2, 3)).unwrap();
    let mut last = BTreeMap::new();
    for _ in 0..6 {
        let r = fed.run_round().unwrap();
        for e in &r.uploads {
            let Component::Modality(m) = e.component else { unreachable!() };
            last.insert((e.client, m), r.round);
        }
        let t = fed.tracker().current_round();
        for k in 0..5 {
            for m in ds.clients[k].modality_mask() {
                let expected = t - last.get(&(k, m)).copied().unwrap_or(0) - 1;
                assert_eq!(fed.tracker().recency(k, m), expected);
            }
        }
    }
}

struct Silent;

impl RoundDriver for Silent {
    fn clients_total(&self) -> usize {
        2
    }

    fn run_round(&mut self) -> mmfedmc::Result<RoundReport> {
        Ok(RoundReport {
            round: 1,
            client_accuracy: vec![None, None],
            mean_accuracy: None,
            choices: vec![None, None],
            selected_clients: BTreeMap::new(),
            shapley: vec![BTreeMap::new(); 2],
            local_losses: vec![BTreeMap::new(); 2],
            uploads: Vec::new(),
            bytes_this_round: 0,
            cumulative_bytes: 0,
        })
    }
}

/// Uploads a fixed number of bytes per client per round.
struct Constant {
    per_client: u64,
    round: usize,
}

impl RoundDriver for Constant {
    fn clients_total(&self) -> usize {
        4
    }

    fn run_round(&mut self) -> mmfedmc::Result<RoundReport> {
        self.round += 1;
        let mut r = Silent.run_round()?;
        r.round = self.round;
        r.bytes_this_round = 4 * self.per_client;
        r.cumulative_bytes = self.round as u64 * 4 * self.per_client;
        Ok(r)
    }
}

#[test]
fn budget_boundaries() {
    let run = |per_client: u64, budget: f64| {
        let mut d = Constant { per_client, round: 0 };
        run_until_budget(&mut d, budget, 1000).unwrap()
    };
    let exact = run(100, 100.0);
    assert_eq!((exact.comm_rounds, exact.budget_reached), (1, true));
    assert_eq!(run(100, 50.0).comm_rounds, 1);
    assert_eq!(run(100, 250.0).comm_rounds, 3);
    let capped = {
        let mut d = Constant { per_client: 1, round: 0 };
        run_until_budget(&mut d, 1e9, 7).unwrap()
    };
    assert_eq!((capped.comm_rounds, capped.budget_reached), (7, false));
    assert!(matches!(
        run_until_budget(&mut Silent, 10.0, 100),
        Err(Error::Stall { round: 1 })
    ));
    assert!(matches!(
        run_until_budget(&mut Silent, 0.0, 100),
        Err(Error::InvalidConfig { .. })
    ));
}

#[test]
fn cumulative_bytes_increase_with_uploads() {
    let ds = generate(&spec(5, &[2, 2], 2)).unwrap();
    let mut fed = Federation::new(&ds, config(1, 0.2, 2)).unwrap();
    let run = run_until_budget(&mut fed, 500.0, 200).unwrap();
    assert!(run.budget_reached);
    let bytes: Vec<u64> = run.reports.iter().map(|r| r.cumulative_bytes).collect();
    assert!(bytes.windows(2).all(|w| w[1] > w[0]));
    // halts at the first crossing
    let k = 5.0;
    assert!(*bytes.last().unwrap() as f64 / k >= 500.0);
    if bytes.len() > 1 {
        assert!((bytes[bytes.len() - 2] as f64 / k) < 500.0);
    }
}

fn client_with_test(labels: Vec<usize>) -> ClientState {
    let n = labels.len();
    let data = ClientDataset {
        client_id: 0,
        modalities: vec![Some(ModalitySplit {
            train: Array2::zeros((1, 1)),
            test: Array2::from_shape_fn((n, 1), |(i, _)| i as f64),
        })],
        train_labels: vec![0],
        test_labels: labels,
        group: 0,
    };
    let model = init_model(Arch::LinearSoftmax, 1, 4, 0).unwrap();
    ClientState {
        client_id: 0,
        modality_models: [(0, model)].into_iter().collect(),
        ensemble: Some(EnsembleModel::from_trees(vec![DecisionTree::leaf(2)], 1, 4)),
        local_losses: BTreeMap::new(),
        data,
    }
}

#[test]
fn evaluation_of_constant_ensembles_and_empty_tests() {
    let balanced = client_with_test((0..40).map(|i| i % 4).collect());
    let empty = client_with_test(Vec::new());
    let acc = evaluate_clients(&[balanced, empty]).unwrap();
    assert_eq!(acc, vec![Some(0.25), None]);
    assert_eq!(mean_of_present(&acc), Some(0.25));
}

#[test]
fn separable_data_is_classified_perfectly() {
    let mut s = spec(3, &[2], 5);
    s.modalities[0].informativeness = 1.0;
    s.num_classes = 2;
    let ds = generate(&s).unwrap();
    let mut fed = Federation::new(&ds, config(1, 1.0, 5)).unwrap();
    let mut last = None;
    for _ in 0..5 {
        last = fed.run_round().unwrap().mean_accuracy;
    }
    assert!(last.unwrap() >= 0.99, "{last:?}");
}
