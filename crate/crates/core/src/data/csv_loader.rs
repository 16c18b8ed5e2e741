//! Loads `client<k>_mod<m>.csv` files: a header row, numeric feature
//! columns, and a final integer `label` column.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{split_rows, train_count, ClientDataset, Dataset};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    /// Inferred as `max label + 1` when absent.
    #[serde(default)]
    pub num_classes: Option<usize>,
}

fn default_fraction() -> f64 {
    0.8
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            train_fraction: default_fraction(),
            seed: 0,
            num_classes: None,
        }
    }
}

struct Table {
    features: Array2<f64>,
    labels: Vec<usize>,
}

fn parse_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix("client")?.strip_suffix(".csv")?;
    let (k, m) = rest.split_once("_mod")?;
    Some((k.parse().ok()?, m.parse().ok()?))
}

fn read_table(path: &Path) -> Result<Table> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().last().map(str::trim) != Some("label") {
        return Err(Error::Schema {
            file,
            detail: "the last column must be named `label`".into(),
        });
    }
    let width = headers.len() - 1;
    if width == 0 {
        return Err(Error::Schema {
            file,
            detail: "no feature columns".into(),
        });
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        // header is line 1
        let row = i + 2;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                file,
                row,
                column: record.len().min(headers.len()) + 1,
                detail: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        for (j, cell) in record.iter().take(width).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| Error::Parse {
                file: file.clone(),
                row,
                column: j + 1,
                detail: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    file,
                    row,
                    column: j + 1,
                    detail: "value is not finite".into(),
                });
            }
            values.push(v);
        }
        let cell = &record[width];
        labels.push(cell.trim().parse().map_err(|_| Error::Parse {
            file: file.clone(),
            row,
            column: width + 1,
            detail: format!("label `{cell}` is not a nonnegative integer"),
        })?);
    }
    let features = Array2::from_shape_vec((labels.len(), width), values)
        .expect("row-major buffer has rows × width entries");
    Ok(Table { features, labels })
}

/// Reads every client/modality file in `dir`. Clients are indexed in
/// ascending order of their file number; each client's rows are shuffled with
/// a seeded permutation before the train/test split.
pub fn load_csv(dir: &Path, schema: &CsvSchema) -> Result<Dataset> {
    if !(schema.train_fraction > 0.0 && schema.train_fraction < 1.0) {
        return Err(Error::Spec("train_fraction must lie in (0, 1)".into()));
    }
    let mut files: BTreeMap<usize, BTreeMap<usize, PathBuf>> = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some((k, m)) = path.file_name().and_then(|n| n.to_str()).and_then(parse_name) else {
            continue;
        };
        files.entry(k).or_default().insert(m, path);
    }
    if files.is_empty() {
        return Err(Error::Data(format!(
            "no client<k>_mod<m>.csv files in {}",
            dir.display()
        )));
    }
    let num_modalities = files
        .values()
        .flat_map(|mods| mods.keys())
        .max()
        .map_or(0, |m| m + 1);

    let mut feature_dims: Vec<Option<usize>> = vec![None; num_modalities];
    let mut loaded = Vec::new();
    for (index, (k, mods)) in files.iter().enumerate() {
        let mut tables: Vec<Option<Table>> = (0..num_modalities).map(|_| None).collect();
        let mut reference: Option<(usize, Vec<usize>)> = None;
        for (&m, path) in mods {
            let table = read_table(path)?;
            match feature_dims[m] {
                Some(d) if d != table.features.ncols() => {
                    return Err(Error::Schema {
                        file: path.display().to_string(),
                        detail: format!(
                            "modality {m} has {} feature columns, other clients have {d}",
                            table.features.ncols()
                        ),
                    })
                }
                _ => feature_dims[m] = Some(table.features.ncols()),
            }
            match &reference {
                None => reference = Some((m, table.labels.clone())),
                Some((first, labels)) => {
                    if labels.len() != table.labels.len() {
                        return Err(Error::Alignment {
                            client: *k,
                            detail: format!(
                                "modality {first} has {} rows, modality {m} has {}",
                                labels.len(),
                                table.labels.len()
                            ),
                        });
                    }
                    if *labels != table.labels {
                        return Err(Error::Alignment {
                            client: *k,
                            detail: format!("labels of modality {first} and {m} disagree"),
                        });
                    }
                }
            }
            tables[m] = Some(table);
        }
        let (_, labels) = reference.expect("each client has at least one file");
        loaded.push((index, *k, tables, labels));
    }

    let max_label = loaded
        .iter()
        .flat_map(|(_, _, _, labels)| labels.iter().copied())
        .max()
        .unwrap_or(0);
    let num_classes = schema.num_classes.unwrap_or(max_label + 1).max(2);

    let feature_dims: Vec<usize> = feature_dims
        .into_iter()
        .enumerate()
        .map(|(m, d)| {
            d.ok_or_else(|| Error::Data(format!("no client provides modality {m}")))
        })
        .collect::<Result<_>>()?;

    let clients = loaded
        .into_iter()
        .map(|(index, k, tables, labels)| {
            let n = labels.len();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng::stream(schema.seed, &[tag::SPLIT, k as u64]));
            let present: Vec<usize> = (0..num_modalities).filter(|&m| tables[m].is_some()).collect();
            let matrices: Vec<Array2<f64>> = present
                .iter()
                .map(|&m| tables[m].as_ref().expect("present").features.clone())
                .collect();
            let (splits, train_labels, test_labels) =
                split_rows(&matrices, &labels, &order, train_count(n, schema.train_fraction));
            let mut modalities: Vec<_> = (0..num_modalities).map(|_| None).collect();
            for (m, split) in present.into_iter().zip(splits) {
                modalities[m] = Some(split);
            }
            ClientDataset {
                client_id: index,
                modalities,
                train_labels,
                test_labels,
                group: 0,
            }
        })
        .collect();

    let dataset = Dataset {
        clients,
        num_classes,
        feature_dims,
    };
    dataset.validate()?;
    Ok(dataset)
}
