//! The per-generator-step metrics table (`metrics.csv`).
//!
//! One row per generator update. `critic_distance` is populated for
//! Wasserstein runs and left empty otherwise; every other numeric cell is a
//! finite number.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LeganError, Result};
use crate::objectives::ObjectiveKind;

pub const HEADER: &str = "epoch,step,objective,d_loss,g_loss,l_real,l_fake,l_diff,l_ratio,critic_distance,l_diff_perimage,l_ratio_perimage";

/// Columns that `plot` can draw.
pub const NUMERIC_COLUMNS: [&str; 10] = [
    "d_loss",
    "g_loss",
    "l_real",
    "l_fake",
    "l_diff",
    "l_ratio",
    "critic_distance",
    "l_diff_perimage",
    "l_ratio_perimage",
    "step",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub step: usize,
    pub objective: String,
    pub d_loss: f64,
    pub g_loss: f64,
    pub l_real: f64,
    pub l_fake: f64,
    pub l_diff: f64,
    pub l_ratio: f64,
    pub critic_distance: Option<f64>,
    pub l_diff_perimage: f64,
    pub l_ratio_perimage: f64,
}

impl MetricsRow {
    /// Value of a numeric column; `None` for an unknown name, `Some(None)`
    /// for an empty cell.
    pub fn column(&self, name: &str) -> Option<Option<f64>> {
        let v = match name {
            "step" => self.step as f64,
            "d_loss" => self.d_loss,
            "g_loss" => self.g_loss,
            "l_real" => self.l_real,
            "l_fake" => self.l_fake,
            "l_diff" => self.l_diff,
            "l_ratio" => self.l_ratio,
            "critic_distance" => return Some(self.critic_distance),
            "l_diff_perimage" => self.l_diff_perimage,
            "l_ratio_perimage" => self.l_ratio_perimage,
            _ => return None,
        };
        Some(Some(v))
    }

    fn check(&self) -> std::result::Result<(), String> {
        let objective: ObjectiveKind = self
            .objective
            .parse()
            .map_err(|_| format!("unknown objective {:?}", self.objective))?;
        for name in NUMERIC_COLUMNS {
            if let Some(Some(v)) = self.column(name) {
                if !v.is_finite() {
                    return Err(format!("non-finite {name}"));
                }
            }
        }
        match (objective, self.critic_distance) {
            (ObjectiveKind::Wasserstein, None) => Err("critic_distance missing".into()),
            (ObjectiveKind::Vanilla | ObjectiveKind::LeastSquares, Some(_)) => {
                Err("critic_distance set for a non-Wasserstein run".into())
            }
            _ => Ok(()),
        }
    }
}

/// Streams rows to a writer, header first.
pub struct MetricsWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> MetricsWriter<W> {
    pub fn new(out: W) -> Result<Self> {
        let mut inner = csv::WriterBuilder::new()
            .has_headers(false)
            .from_writer(out);
        inner
            .write_record(HEADER.split(','))
            .map_err(|e| csv_error("<metrics>", e))?;
        Ok(MetricsWriter { inner })
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner
            .serialize(row)
            .map_err(|e| csv_error("<metrics>", e))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.inner
            .flush()
            .map_err(|e| LeganError::io("<metrics>", e))
    }
}

fn csv_error(path: impl AsRef<Path>, e: csv::Error) -> LeganError {
    let location = e
        .position()
        .map(|p| format!("line {}", p.line()))
        .unwrap_or_else(|| "record".to_string());
    LeganError::Format {
        path: path.as_ref().to_path_buf(),
        location,
        detail: e.to_string(),
    }
}

/// Parses a metrics table, checking the header and every row.
pub fn parse_metrics(input: impl Read, path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(input);
    let header = reader.headers().map_err(|e| csv_error(path, e))?;
    if header.iter().collect::<Vec<_>>().join(",") != HEADER {
        return Err(LeganError::Format {
            path: path.to_path_buf(),
            location: "line 1".into(),
            detail: format!("header must be {HEADER:?}"),
        });
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize::<MetricsRow>().enumerate() {
        let row = rec.map_err(|e| csv_error(path, e))?;
        row.check().map_err(|detail| LeganError::Format {
            path: path.to_path_buf(),
            location: format!("line {}", i + 2),
            detail,
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let file = std::fs::File::open(path).map_err(|e| LeganError::io(path, e))?;
    parse_metrics(file, path)
}

/// Per-epoch mean of one column, skipping empty cells. `None` for an
/// unknown column.
pub fn epoch_means(rows: &[MetricsRow], column: &str) -> Option<Vec<(usize, f64)>> {
    if !NUMERIC_COLUMNS.contains(&column) {
        return None;
    }
    let mut out: Vec<(usize, f64, usize)> = Vec::new();
    for row in rows {
        let Some(v) = row.column(column)? else {
            continue;
        };
        match out.last_mut() {
            Some((e, sum, n)) if *e == row.epoch => {
                *sum += v;
                *n += 1;
            }
            _ => out.push((row.epoch, v, 1)),
        }
    }
    Some(
        out.into_iter()
            .map(|(e, sum, n)| (e, sum / n as f64))
            .collect(),
    )
}
