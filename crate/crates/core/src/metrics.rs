//! Analytics over a finished run: accuracy against communication, Shapley
//! trajectories and upload histograms, plus their CSV writers. Every function
//! here is a pure function of the [`Trajectory`].

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::{RoundReport, BYTES_PER_MB};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub method: String,
    pub seed: u64,
    pub clients_total: usize,
    /// The experiment configuration that produced the run.
    pub config: serde_json::Value,
    pub reports: Vec<RoundReport>,
}

impl Trajectory {
    pub fn validate(&self) -> Result<()> {
        if self.reports.is_empty() {
            return Err(Error::Data("trajectory has no rounds".into()));
        }
        for (i, r) in self.reports.iter().enumerate() {
            if r.round != i + 1 {
                return Err(Error::Data(format!(
                    "round {} at position {i}; rounds must run 1, 2, ...",
                    r.round
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub round: usize,
    pub cum_mb_per_client: f64,
    pub mean_acc: Option<f64>,
    pub per_client_acc: Vec<Option<f64>>,
}

pub fn accuracy_vs_comm(trajectory: &Trajectory) -> Result<Vec<CurvePoint>> {
    trajectory.validate()?;
    let k = trajectory.clients_total.max(1) as f64;
    Ok(trajectory
        .reports
        .iter()
        .map(|r| CurvePoint {
            round: r.round,
            cum_mb_per_client: r.cumulative_bytes as f64 / (k * BYTES_PER_MB),
            mean_acc: r.mean_accuracy,
            per_client_acc: r.client_accuracy.clone(),
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShapleyPoint {
    pub round: usize,
    pub modality: usize,
    pub mean_abs_shapley: f64,
}

/// Per round and modality, the mean `|φ|` over the clients that own it.
pub fn shapley_trajectory(trajectory: &Trajectory) -> Vec<ShapleyPoint> {
    let mut out = Vec::new();
    for r in &trajectory.reports {
        let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
        for per_client in &r.shapley {
            for (&m, &phi) in per_client {
                let e = sums.entry(m).or_default();
                e.0 += phi.abs();
                e.1 += 1;
            }
        }
        out.extend(sums.into_iter().map(|(modality, (sum, n))| ShapleyPoint {
            round: r.round,
            modality,
            mean_abs_shapley: sum / n as f64,
        }));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistogramAxis {
    Client,
    Modality,
}

/// Upload events per client or per uploaded component, over all rounds.
pub fn selection_histogram(trajectory: &Trajectory, axis: HistogramAxis) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for e in trajectory.reports.iter().flat_map(|r| &r.uploads) {
        let id = match axis {
            HistogramAxis::Client => format!("client/{}", e.client),
            HistogramAxis::Modality => format!("modality/{}", e.component),
        };
        *counts.entry(id).or_insert(0) += 1;
    }
    counts
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_curve_csv<W: Write>(points: &[CurvePoint], out: W) -> Result<()> {
    let clients = points.first().map_or(0, |p| p.per_client_acc.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["round".to_string(), "cum_mb_per_client".into(), "mean_acc".into()];
    header.extend((0..clients).map(|k| format!("acc_client_{k}")));
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![p.round.to_string(), p.cum_mb_per_client.to_string(), opt(p.mean_acc)];
        row.extend(p.per_client_acc.iter().map(|a| opt(*a)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_shapley_csv<W: Write>(points: &[ShapleyPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["round", "modality", "mean_abs_shapley"])?;
    for p in points {
        w.write_record([
            p.round.to_string(),
            p.modality.to_string(),
            p.mean_abs_shapley.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes both axes into one `id,count` table; ids carry an axis prefix.
pub fn write_histogram_csv<W: Write>(histograms: &[&BTreeMap<String, usize>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "count"])?;
    for (id, count) in histograms.iter().flat_map(|h| h.iter()) {
        w.write_record([id.as_str(), &count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// The three numbers reported per run: final accuracy, bytes per round, rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub final_mean_accuracy: Option<f64>,
    /// Average uploaded bytes per client per round.
    pub bytes_per_round_per_client: f64,
    pub mb_per_round_per_client: f64,
    pub comm_rounds: usize,
    pub total_bytes: u64,
    pub budget_reached: bool,
}

pub fn summarize(trajectory: &Trajectory, budget_reached: bool) -> Result<RunSummary> {
    trajectory.validate()?;
    let last = trajectory.reports.last().expect("validated nonempty");
    let rounds = trajectory.reports.len();
    let per_round = last.cumulative_bytes as f64 / (trajectory.clients_total.max(1) * rounds) as f64;
    Ok(RunSummary {
        method: trajectory.method.clone(),
        seed: trajectory.seed,
        final_mean_accuracy: last.mean_accuracy,
        bytes_per_round_per_client: per_round,
        mb_per_round_per_client: per_round / BYTES_PER_MB,
        comm_rounds: rounds,
        total_bytes: last.cumulative_bytes,
        budget_reached,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> Option<MeanStd> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some(MeanStd { mean, std })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSeedSummary {
    pub method: String,
    pub seeds: Vec<u64>,
    pub final_mean_accuracy: Option<MeanStd>,
    pub bytes_per_round_per_client: MeanStd,
    pub comm_rounds: MeanStd,
}

pub fn cross_seed(runs: &[RunSummary]) -> Result<CrossSeedSummary> {
    let first = runs
        .first()
        .ok_or_else(|| Error::Data("no runs to summarize".into()))?;
    let acc: Vec<f64> = runs.iter().filter_map(|r| r.final_mean_accuracy).collect();
    let bytes: Vec<f64> = runs.iter().map(|r| r.bytes_per_round_per_client).collect();
    let rounds: Vec<f64> = runs.iter().map(|r| r.comm_rounds as f64).collect();
    Ok(CrossSeedSummary {
        method: first.method.clone(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        final_mean_accuracy: mean_std(&acc),
        bytes_per_round_per_client: mean_std(&bytes).expect("nonempty"),
        comm_rounds: mean_std(&rounds).expect("nonempty"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std() {
        let s = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(mean_std(&[7.0]).unwrap().std, 0.0);
        assert!(mean_std(&[]).is_none());
    }
}
