//! File formats: JSON documents and CSV tables.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use caosd_agent::CurveRow;
use caosd_core::{Allocation, ConstraintConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::metrics::AggregateRow;

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| HarnessError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let file = File::open(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

#[derive(Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(ConstraintConfig),
    Many(Vec<ConstraintConfig>),
}

/// Reads a config file holding either one config object or an array of them.
pub fn read_configs(path: &Path) -> Result<Vec<ConstraintConfig>> {
    let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let parsed = if value.is_array() {
        OneOrMany::Many(serde_json::from_value(value)?)
    } else {
        OneOrMany::One(serde_json::from_value(value)?)
    };
    Ok(match parsed {
        OneOrMany::One(c) => vec![c],
        OneOrMany::Many(v) => v,
    })
}

/// The single config in `path`; an array must hold exactly one entry.
pub fn read_config(path: &Path) -> Result<ConstraintConfig> {
    let mut all = read_configs(path)?;
    if all.len() != 1 {
        return Err(HarnessError::InvalidInput(format!(
            "{} holds {} configs, expected 1",
            path.display(),
            all.len()
        )));
    }
    Ok(all.remove(0))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

pub fn write_curve(path: &Path, curve: &[CurveRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for row in curve {
        w.serialize(row)?;
    }
    if curve.is_empty() {
        w.write_record(["step", "mean_nu", "ci_lo", "ci_hi"])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Long format: `approach,episode,nu`.
pub fn write_nu(path: &Path, results: &[(String, Vec<f64>)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["approach", "episode", "nu"])?;
    for (name, nus) in results {
        for (episode, nu) in nus.iter().enumerate() {
            w.write_record([name.clone(), episode.to_string(), nu.to_string()])?;
        }
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Episode returns from a CSV with a `nu` column.
pub fn read_nu(path: &Path) -> Result<Vec<f64>> {
    if !path.exists() {
        return Err(HarnessError::MissingInput(format!(
            "result file {}",
            path.display()
        )));
    }
    let mut r = csv::Reader::from_path(path)?;
    let col = r
        .headers()?
        .iter()
        .position(|h| h.trim() == "nu")
        .ok_or_else(|| {
            HarnessError::InvalidInput(format!("{} has no nu column", path.display()))
        })?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let v: f64 = rec
            .get(col)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| {
                HarnessError::InvalidInput(format!("bad nu value in {}", path.display()))
            })?;
        out.push(v);
    }
    if out.is_empty() {
        return Err(HarnessError::InvalidInput(format!(
            "{} holds no episodes",
            path.display()
        )));
    }
    Ok(out)
}

pub fn write_allocations(path: &Path, allocations: &[Allocation], labels: &[String]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(labels)?;
    for a in allocations {
        w.write_record(a.values().iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

pub fn write_summary(path: &Path, rows: &[AggregateRow], delta: bool) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["env", "approach", "n_experiments", "mean", "ci_lo", "ci_hi"])?;
    for row in rows {
        let i = if delta {
            match row.delta {
                Some(d) => d,
                None => continue,
            }
        } else {
            row.theta
        };
        w.write_record([
            row.env.to_string(),
            row.approach.clone(),
            row.n_experiments.to_string(),
            i.mean.to_string(),
            i.ci_lo.to_string(),
            i.ci_hi.to_string(),
        ])?;
    }
    w.flush().map_err(|e| HarnessError::io(path, e))
}

/// Creates `dir` and its parents.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = File::create(path).map_err(|e| HarnessError::io(path, e))?;
    f.write_all(text.as_bytes())
        .map_err(|e| HarnessError::io(path, e))
}
