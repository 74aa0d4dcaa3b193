use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::SeriesDataset;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// How missing observations are written.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Missing {
    /// A numeric value meaning "not observed", e.g. 0.0 for traffic speeds.
    Sentinel(f64),
    /// A literal token such as `NaN` or an empty cell.
    Token(String),
}

/// Column layout of a series CSV: a Unix-seconds time column plus one column per node.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvLayout {
    pub time_column: String,
    /// Node columns in order; every other column when absent.
    #[serde(default)]
    pub node_columns: Option<Vec<String>>,
    pub missing: Missing,
    pub steps_per_day: usize,
}

impl Default for CsvLayout {
    fn default() -> Self {
        Self {
            time_column: "timestamp".into(),
            node_columns: None,
            missing: Missing::Token("NaN".into()),
            steps_per_day: 288,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.position() {
        Some(p) => Error::Data(format!("line {}: {e}", p.line())),
        None => Error::Data(e.to_string()),
    }
}

pub fn read_csv<R: Read>(reader: R, layout: &CsvLayout, name: &str) -> Result<SeriesDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Data(format!("column `{name}` not in header")))
    };
    let time_idx = col(&layout.time_column)?;
    let node_idx: Vec<usize> = match &layout.node_columns {
        Some(cols) => cols.iter().map(|c| col(c)).collect::<Result<_>>()?,
        None => (0..header.len()).filter(|&i| i != time_idx).collect(),
    };
    if node_idx.is_empty() {
        return Err(Error::Data("no node columns".into()));
    }
    let (mut values, mut observed, mut stamps) = (Vec::new(), Vec::new(), Vec::<i64>::new());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| p.line());
        let ts: i64 = rec[time_idx]
            .parse()
            .map_err(|_| Error::Data(format!("line {line}: bad timestamp `{}`", &rec[time_idx])))?;
        if stamps.last().is_some_and(|&prev| ts <= prev) {
            return Err(Error::Data(format!("line {line}: timestamp {ts} is not after the previous row")));
        }
        stamps.push(ts);
        for &i in &node_idx {
            let cell = &rec[i];
            let (v, seen) = match &layout.missing {
                Missing::Token(tok) if cell == tok => (0.0, false),
                _ => {
                    let v: f64 = cell
                        .parse()
                        .map_err(|_| Error::Data(format!("line {line}: bad value `{cell}`")))?;
                    match layout.missing {
                        Missing::Sentinel(s) if v == s => (v, false),
                        _ if !v.is_finite() => (0.0, false),
                        _ => (v, true),
                    }
                }
            };
            values.push(v);
            observed.push(seen);
        }
    }
    let steps = stamps.len();
    let values = Tensor::new(&[steps, node_idx.len(), 1], values)?;
    SeriesDataset::new(name, values, observed, stamps, layout.steps_per_day)
}

pub fn load_csv(path: impl AsRef<Path>, layout: &CsvLayout) -> Result<SeriesDataset> {
    let path = path.as_ref();
    let name = path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    read_csv(std::fs::File::open(path)?, layout, &name)
}

/// Writes a single-feature dataset; node columns are named `0..N`.
pub fn write_csv<W: Write>(ds: &SeriesDataset, writer: W, layout: &CsvLayout) -> Result<()> {
    if ds.features() != 1 {
        return Err(Error::Data(format!("CSV holds one feature, dataset has {}", ds.features())));
    }
    let n = ds.nodes();
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![layout.time_column.clone()];
    match &layout.node_columns {
        Some(cols) if cols.len() == n => header.extend(cols.iter().cloned()),
        Some(cols) => return Err(Error::Data(format!("{} node columns for {n} nodes", cols.len()))),
        None => header.extend((0..n).map(|i| i.to_string())),
    }
    w.write_record(&header).map_err(csv_err)?;
    let missing = match &layout.missing {
        Missing::Sentinel(s) => s.to_string(),
        Missing::Token(t) => t.clone(),
    };
    for t in 0..ds.steps() {
        let mut row = vec![ds.timestamps()[t].to_string()];
        for ni in 0..n {
            row.push(if ds.observed()[t * n + ni] {
                ds.values().data()[t * n + ni].to_string()
            } else {
                missing.clone()
            });
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}
