//! On-disk dataset format.
//!
//! `windows.jsonl` holds one window per line with values as a `len x C` array
//! where missing entries are `null`. `index.csv` lists every window with its
//! split, cardinality, cell rate, label and line number. Both files are
//! written in dataset order, so regenerating with the same configuration gives
//! byte-identical output.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::benchgen::{AnomalyType, LabeledDataset, Split, WindowRecord};
use crate::error::{Error, Result};
use crate::sketch::{Label, Window};

pub const WINDOWS_FILE: &str = "windows.jsonl";
pub const INDEX_FILE: &str = "index.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowLine {
    pub id: String,
    pub split: Split,
    #[serde(rename = "C")]
    pub cardinality: usize,
    pub rate: f64,
    pub label: Label,
    pub anomaly: Option<AnomalyType>,
    pub ids: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl WindowLine {
    pub fn from_record(r: &WindowRecord) -> Self {
        let w = &r.window;
        let values = (0..w.len())
            .map(|t| {
                (0..w.cardinality())
                    .map(|j| w.observed(t, j).then(|| w.value(t, j)))
                    .collect()
            })
            .collect();
        WindowLine {
            id: r.id.clone(),
            split: r.split,
            cardinality: r.cardinality,
            rate: r.rate,
            label: w.label,
            anomaly: w.anomaly,
            ids: w.ids().to_vec(),
            values,
        }
    }

    pub fn into_record(self) -> Result<WindowRecord> {
        let len = self.values.len();
        let c = self.ids.len();
        let mut values = Vec::with_capacity(len * c);
        let mut mask = Vec::with_capacity(len * c);
        for row in &self.values {
            if row.len() != c {
                return Err(Error::InvalidWindow(format!(
                    "{}: row has {} entries, expected {c}",
                    self.id,
                    row.len()
                )));
            }
            for v in row {
                values.push(v.unwrap_or(0.0));
                mask.push(v.is_some());
            }
        }
        let window = Window::new(self.ids, values, mask, len)?.with_label(self.label, self.anomaly);
        Ok(WindowRecord {
            id: self.id,
            split: self.split,
            cardinality: self.cardinality,
            rate: self.rate,
            window,
        })
    }
}

#[derive(Serialize)]
struct IndexRow<'a> {
    id: &'a str,
    split: &'a str,
    #[serde(rename = "C")]
    cardinality: usize,
    rate: f64,
    label: &'a str,
    anomaly_type: &'a str,
    line: usize,
}

/// Writes `windows.jsonl` and `index.csv` into `dir`.
pub fn write_dataset(ds: &LabeledDataset, dir: &Path) -> Result<usize> {
    std::fs::create_dir_all(dir)?;
    let mut out = BufWriter::new(File::create(dir.join(WINDOWS_FILE))?);
    let mut index =
        csv::Writer::from_path(dir.join(INDEX_FILE)).map_err(|e| Error::config(e.to_string()))?;
    let mut n = 0;
    for (line, r) in ds.records().enumerate() {
        serde_json::to_writer(&mut out, &WindowLine::from_record(r))?;
        out.write_all(b"\n")?;
        index
            .serialize(IndexRow {
                id: &r.id,
                split: r.split.as_str(),
                cardinality: r.cardinality,
                rate: r.rate,
                label: r.window.label.as_str(),
                anomaly_type: r.window.anomaly.map_or("", AnomalyType::as_str),
                line: line + 1,
            })
            .map_err(|e| Error::config(e.to_string()))?;
        n += 1;
    }
    out.flush()?;
    index.flush()?;
    Ok(n)
}

/// Reads every record of a `windows.jsonl` file, in order.
pub fn read_windows(path: &Path) -> Result<Vec<WindowRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: WindowLine = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(parsed.into_record()?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchgen::{build_dataset, GenConfig, Protocol};

    #[test]
    fn round_trip_and_determinism() {
        let cfg = GenConfig {
            window_len: 16,
            train_per_c: 3,
            val_per_c: 2,
            test_per_c: 10,
            anomaly_rates: vec![0.2],
            seed: 5,
            ..GenConfig::default()
        };
        let ds = build_dataset(Protocol::HoldoutC, &cfg).unwrap();
        let base = std::env::temp_dir().join(format!("smkc-ds-{}", std::process::id()));
        let (a, b) = (base.join("a"), base.join("b"));
        let n = write_dataset(&ds, &a).unwrap();
        write_dataset(&build_dataset(Protocol::HoldoutC, &cfg).unwrap(), &b).unwrap();
        for f in [WINDOWS_FILE, INDEX_FILE] {
            assert_eq!(
                std::fs::read(a.join(f)).unwrap(),
                std::fs::read(b.join(f)).unwrap()
            );
        }
        let back = read_windows(&a.join(WINDOWS_FILE)).unwrap();
        assert_eq!(back.len(), n);
        for (x, y) in back.iter().zip(ds.records()) {
            assert_eq!(x, y);
        }
        std::fs::remove_dir_all(&base).unwrap();
    }
}
