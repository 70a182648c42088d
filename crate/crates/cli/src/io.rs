//! Dataset CSV and JSON artifact files.

use std::path::Path;

use rgne_core::game::PlayerMatrix;
use rgne_core::uncertainty::{DataPoint, Dataset};
use rgne_core::vgne::recover_multiplier;
use serde::Serialize;

use crate::config::LoadedConfig;
use crate::error::{CliError, CliResult};

/// `k, alpha_<i>_<c>..., x_<i>_<c>..., residual`, with 1-based indices.
pub fn dataset_header(players: usize, dim: usize) -> Vec<String> {
    let block = |prefix: &'static str| {
        (1..=players).flat_map(move |i| (1..=dim).map(move |c| format!("{prefix}_{i}_{c}")))
    };
    std::iter::once("k".to_string())
        .chain(block("alpha"))
        .chain(block("x"))
        .chain(std::iter::once("residual".to_string()))
        .collect()
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
        }
        _ => Ok(()),
    }
}

fn csv_error(path: &Path, e: csv::Error) -> CliError {
    CliError::format(path, e.to_string())
}

/// Floats use Rust's shortest round-trip representation.
pub fn write_dataset(path: &Path, dataset: &Dataset, players: usize, dim: usize) -> CliResult<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(dataset_header(players, dim)).map_err(|e| csv_error(path, e))?;
    for p in &dataset.points {
        let mut row = Vec::with_capacity(2 + 2 * players * dim);
        row.push(p.k.to_string());
        row.extend(p.alpha.as_slice().iter().map(|v| format!("{v:?}")));
        row.extend(p.x_star.as_slice().iter().map(|v| format!("{v:?}")));
        row.push(format!("{:?}", p.residual));
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Reads a dataset written by [`write_dataset`] and checks it against the
/// configuration. Multipliers are re-estimated from the stored equilibria.
pub fn read_dataset(path: &Path, cfg: &LoadedConfig) -> CliResult<Dataset> {
    let (n, dim) = (cfg.game.players, cfg.game.dim);
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| csv_error(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let want = dataset_header(n, dim);
    if header != want {
        return Err(CliError::format(
            path,
            format!("header does not match the configured game; expected {}", want.join(",")),
        ));
    }
    let beta = cfg.game.beta_true.clone().unwrap_or_else(|| vec![0.0; n]);
    let block = n * dim;
    let mut points = Vec::new();
    for (row_idx, record) in r.records().enumerate() {
        let line = row_idx + 2;
        let record = record.map_err(|e| csv_error(path, e))?;
        let k: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| CliError::format(path, format!("line {line}: k is not an index")))?;
        let mut values = Vec::with_capacity(2 * block + 1);
        for (col, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                CliError::format(path, format!("line {line}, column {}: not a number", want[col]))
            })?;
            if !v.is_finite() {
                return Err(CliError::format(
                    path,
                    format!("line {line}, column {}: value is not finite", want[col]),
                ));
            }
            values.push(v);
        }
        let residual = values.pop().expect("header has a residual column");
        let x_vals = values.split_off(block);
        let alpha = PlayerMatrix::from_vec(n, dim, values).map_err(|e| CliError::format(path, e.to_string()))?;
        let x_star = PlayerMatrix::from_vec(n, dim, x_vals).map_err(|e| CliError::format(path, e.to_string()))?;
        let lambda = if cfg.game.beta_true.is_some() {
            recover_multiplier(&cfg.game, &beta, &alpha, &x_star)
                .map_err(|e| CliError::format(path, e.to_string()))?
        } else {
            0.0
        };
        points.push(DataPoint {
            k,
            alpha,
            x_star,
            lambda,
            residual,
        });
    }
    let dataset = Dataset {
        points,
        seed: 0,
        fingerprint: cfg.game.fingerprint(),
    };
    dataset
        .validate(&cfg.profile)
        .map_err(|e| CliError::format(path, e.to_string()))?;
    Ok(dataset)
}

/// Serialises `value` as pretty JSON with a top-level `manifest_hash` field.
pub fn write_json_artifact<T: Serialize>(path: &Path, value: &T, manifest_hash: &str) -> CliResult<()> {
    let mut doc = serde_json::to_value(value).map_err(|e| CliError::format(path, e.to_string()))?;
    match doc.as_object_mut() {
        Some(map) => {
            map.insert("manifest_hash".into(), manifest_hash.into());
        }
        None => return Err(CliError::format(path, "artifact is not a JSON object")),
    }
    write_json(path, &doc)
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> CliResult<()> {
    ensure_parent(path)?;
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::format(path, e.to_string()))
}

/// Writes rows of floats under `header`, in shortest round-trip form.
pub fn write_table(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
