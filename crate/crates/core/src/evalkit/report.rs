//! CSV and JSON writers for the result tables.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::experiment::{rep_kind, AggregateRow, Method};

/// Writes `rows` as CSV with a header row taken from the field names.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::config(format!("csv: {other:?}")),
    }
}

/// One row of the scaling table: quality at the reference rate plus cost.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub variant: String,
    pub rep: String,
    pub auprc: f64,
    pub auroc: f64,
    pub time_seconds: f64,
    /// Relative cost, printed with four decimals.
    pub rel_cost: String,
    pub feature_dim: usize,
}

/// Scaling-table rows from aggregated metrics at one anomaly rate.
pub fn scaling_rows(aggs: &[AggregateRow], rate: f64) -> Vec<ScalingRow> {
    aggs.iter()
        .filter(|a| a.cardinality.is_none() && (a.anomaly_rate - rate).abs() < 1e-12)
        .map(|a| {
            let rep = match a.variant.parse::<Method>() {
                Ok(Method::RandProj(v)) => rep_kind(&v),
                _ => "stats",
            };
            ScalingRow {
                variant: a.variant.clone(),
                rep: rep.to_string(),
                auprc: a.auprc_mean,
                auroc: a.auroc_mean,
                time_seconds: a.wall_seconds_mean,
                rel_cost: format_cost(a.complexity_proxy),
                feature_dim: a.feature_dim,
            }
        })
        .collect()
}

/// Four-decimal rendering used for relative costs (`0.03125` -> `0.0312`).
pub fn format_cost(x: f64) -> String {
    format!("{x:.4}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_formatting_matches_table_convention() {
        assert_eq!(format_cost(1.0), "1.0000");
        assert_eq!(format_cost(1.0 / 3.0), "0.3333");
        assert_eq!(format_cost(0.03125), "0.0312");
        assert_eq!(format_cost(0.0625), "0.0625");
    }

    #[test]
    fn csv_round_trip() {
        #[derive(Serialize)]
        struct R {
            a: f64,
            b: Option<usize>,
        }
        let dir = std::env::temp_dir().join(format!("smkc-report-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let p = dir.join("t.csv");
        write_csv(&p, &[R { a: 0.1, b: None }, R { a: 2.0, b: Some(3) }]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "a,b\n0.1,\n2.0,3\n");
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
