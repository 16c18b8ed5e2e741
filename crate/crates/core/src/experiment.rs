//! Runs configured experiments and writes their artifacts.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::{DatasetSource, ExperimentConfig};
use crate::data::{generate, load_csv, CsvSchema, Dataset};
use crate::error::{Error, Result};
use crate::federation::run_until_budget;
use crate::methods::MethodRegistry;
use crate::metrics::{
    accuracy_vs_comm, cross_seed, mean_std, selection_histogram, shapley_trajectory, summarize,
    write_curve_csv, write_histogram_csv, write_shapley_csv, CrossSeedSummary, HistogramAxis,
    RunSummary, Trajectory,
};

pub const TRAJECTORY_FILE: &str = "trajectory.json";
pub const CURVE_FILE: &str = "accuracy_vs_comm.csv";
pub const SHAPLEY_FILE: &str = "shapley_trajectory.csv";
pub const HISTOGRAM_FILE: &str = "selection_histogram.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CROSS_SEED_FILE: &str = "cross_seed_summary.json";
pub const COMPARISON_FILE: &str = "comparison.csv";

/// The dataset for one run seed. Data seeds are offset by the run seed so
/// that seed 0 reproduces the configured dataset exactly.
pub fn load_dataset(source: &DatasetSource, seed: u64) -> Result<Dataset> {
    match source {
        DatasetSource::Synthetic(spec) => {
            let mut spec = spec.clone();
            spec.seed = spec.seed.wrapping_add(seed);
            generate(&spec)
        }
        DatasetSource::Csv { path, schema } => load_csv(
            path,
            &CsvSchema {
                seed: schema.seed.wrapping_add(seed),
                ..schema.clone()
            },
        ),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRun {
    pub trajectory: Trajectory,
    pub summary: RunSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub runs: Vec<SeedRun>,
    pub cross_seed: Option<CrossSeedSummary>,
}

pub fn run_seed(config: &ExperimentConfig, registry: &MethodRegistry, seed: u64) -> Result<SeedRun> {
    let dataset = load_dataset(&config.dataset, seed)?;
    let mut driver = registry.build(&config.method, &dataset, config.federation(seed))?;
    log::info!(
        "{} seed {seed}: {} clients, {} modalities",
        config.method,
        dataset.num_clients(),
        dataset.num_modalities()
    );
    let run = run_until_budget(driver.as_mut(), config.budget_bytes(), config.max_rounds)?;
    log::info!(
        "{} seed {seed}: {} rounds, budget reached: {}",
        config.method,
        run.comm_rounds,
        run.budget_reached
    );
    let trajectory = Trajectory {
        method: config.method.clone(),
        seed,
        clients_total: dataset.num_clients(),
        config: serde_json::to_value(config)?,
        reports: run.reports,
    };
    let summary = summarize(&trajectory, run.budget_reached)?;
    Ok(SeedRun {
        trajectory,
        summary,
    })
}

pub fn run_experiment(config: &ExperimentConfig, registry: &MethodRegistry) -> Result<ExperimentOutcome> {
    config.validate()?;
    let runs = config
        .seeds
        .iter()
        .map(|&s| run_seed(config, registry, s))
        .collect::<Result<Vec<_>>>()?;
    let cross_seed = if runs.len() > 1 {
        let summaries: Vec<RunSummary> = runs.iter().map(|r| r.summary.clone()).collect();
        Some(cross_seed(&summaries)?)
    } else {
        None
    };
    Ok(ExperimentOutcome { runs, cross_seed })
}

fn write_file(path: &Path, written: &mut Vec<PathBuf>, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    written.push(path.to_path_buf());
    body(&mut out)?;
    out.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(value: &T) -> impl FnOnce(&mut dyn Write) -> Result<()> + '_ {
    move |out| {
        serde_json::to_writer_pretty(&mut *out, value)?;
        out.write_all(b"\n")?;
        Ok(())
    }
}

fn write_seed(run: &SeedRun, dir: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let t = &run.trajectory;
    write_file(&dir.join(TRAJECTORY_FILE), written, write_json(t))?;
    let curve = accuracy_vs_comm(t)?;
    write_file(&dir.join(CURVE_FILE), written, |w| write_curve_csv(&curve, w))?;
    let shapley = shapley_trajectory(t);
    write_file(&dir.join(SHAPLEY_FILE), written, |w| write_shapley_csv(&shapley, w))?;
    let clients = selection_histogram(t, HistogramAxis::Client);
    let modalities = selection_histogram(t, HistogramAxis::Modality);
    write_file(&dir.join(HISTOGRAM_FILE), written, |w| {
        write_histogram_csv(&[&clients, &modalities], w)
    })?;
    write_file(&dir.join(SUMMARY_FILE), written, write_json(&run.summary))
}

/// Writes `seed_<s>/` directories (and the cross-seed summary) under `dir`.
/// On failure every file written so far is removed.
pub fn write_artifacts(outcome: &ExperimentOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    let mut created_dirs = Vec::new();
    let result = (|| {
        if !dir.exists() {
            fs::create_dir_all(dir)?;
            created_dirs.push(dir.to_path_buf());
        }
        for run in &outcome.runs {
            let seed_dir = dir.join(format!("seed_{}", run.summary.seed));
            if !seed_dir.exists() {
                fs::create_dir_all(&seed_dir)?;
                created_dirs.push(seed_dir.clone());
            }
            write_seed(run, &seed_dir, &mut written)?;
        }
        if let Some(summary) = &outcome.cross_seed {
            write_file(&dir.join(CROSS_SEED_FILE), &mut written, write_json(summary))?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        for path in &written {
            let _ = fs::remove_file(path);
        }
        for d in created_dirs.iter().rev() {
            let _ = fs::remove_dir(d);
        }
        return Err(e);
    }
    Ok(written)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub method: String,
    pub final_mean_accuracy: Option<f64>,
    pub final_mean_accuracy_std: Option<f64>,
    pub bytes_per_round_per_client: f64,
    pub mb_per_round_per_client: f64,
    pub comm_rounds: f64,
}

/// Checks that the configs can be compared.
pub fn check_comparable(configs: &[ExperimentConfig]) -> Result<()> {
    let Some((first, rest)) = configs.split_first() else {
        return Err(Error::Comparability("nothing to compare".into()));
    };
    if rest.is_empty() {
        return Err(Error::Comparability("compare needs at least two configs".into()));
    }
    for (i, c) in rest.iter().enumerate() {
        if c.dataset != first.dataset {
            return Err(Error::Comparability(format!(
                "config {} uses a different dataset than config 0",
                i + 1
            )));
        }
        if c.budget_mb != first.budget_mb {
            return Err(Error::Comparability(format!(
                "config {} has budget {} MB, config 0 has {} MB",
                i + 1,
                c.budget_mb,
                first.budget_mb
            )));
        }
    }
    Ok(())
}

/// One row per config, sorted by method name.
pub fn compare(configs: &[ExperimentConfig], registry: &MethodRegistry) -> Result<Vec<CompareRow>> {
    check_comparable(configs)?;
    let mut rows = configs
        .iter()
        .map(|c| {
            let outcome = run_experiment(c, registry)?;
            let acc: Vec<f64> = outcome
                .runs
                .iter()
                .filter_map(|r| r.summary.final_mean_accuracy)
                .collect();
            let bytes: Vec<f64> = outcome
                .runs
                .iter()
                .map(|r| r.summary.bytes_per_round_per_client)
                .collect();
            let rounds: Vec<f64> = outcome.runs.iter().map(|r| r.summary.comm_rounds as f64).collect();
            let acc = mean_std(&acc);
            let bytes = mean_std(&bytes).expect("at least one seed").mean;
            Ok(CompareRow {
                method: c.method.clone(),
                final_mean_accuracy: acc.map(|a| a.mean),
                final_mean_accuracy_std: acc.map(|a| a.std),
                bytes_per_round_per_client: bytes,
                mb_per_round_per_client: bytes / crate::federation::BYTES_PER_MB,
                comm_rounds: mean_std(&rounds).expect("at least one seed").mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| a.method.cmp(&b.method));
    Ok(rows)
}

pub fn write_compare_csv<W: Write>(rows: &[CompareRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "method",
        "final_mean_accuracy",
        "final_mean_accuracy_std",
        "bytes_per_round_per_client",
        "mb_per_round_per_client",
        "comm_rounds",
    ])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.method.clone(),
            opt(r.final_mean_accuracy),
            opt(r.final_mean_accuracy_std),
            r.bytes_per_round_per_client.to_string(),
            r.mb_per_round_per_client.to_string(),
            r.comm_rounds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
