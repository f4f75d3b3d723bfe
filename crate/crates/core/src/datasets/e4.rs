//! Wrist-device channel files: first row holds the start timestamp of every
//! column, second row the sample rate, then one reading per row.

use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct E4Channel {
    pub start_time: f64,
    pub sample_rate_hz: f64,
    /// One series per column.
    pub columns: Vec<Vec<f64>>,
}

fn parse_row(path: &Path, row: &csv::StringRecord, line: usize) -> Result<Vec<f64>> {
    row.iter()
        .map(|cell| {
            cell.trim().parse::<f64>().map_err(|_| Error::Dataset {
                path: path.to_path_buf(),
                msg: format!("line {line}: cannot parse {cell:?} as a number"),
            })
        })
        .collect()
}

pub fn read_e4_csv(path: &Path) -> Result<E4Channel> {
    let err = |msg: String| Error::Dataset {
        path: path.to_path_buf(),
        msg,
    };
    let file = std::fs::File::open(path).map_err(|e| err(e.to_string()))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(file);
    let mut rows = reader.records();
    let mut next = |line: usize| -> Result<Vec<f64>> {
        match rows.next() {
            Some(r) => parse_row(path, &r?, line),
            None => Err(err(format!("truncated: missing line {line}"))),
        }
    };
    let start = next(1)?;
    let rate = next(2)?;
    let width = start.len();
    if rate.len() != width || width == 0 {
        return Err(err("start and rate rows must have the same number of columns".into()));
    }
    let sample_rate_hz = rate[0];
    if !(sample_rate_hz > 0.0) {
        return Err(err(format!("invalid sample rate {sample_rate_hz}")));
    }
    let mut columns = vec![Vec::new(); width];
    for (i, r) in rows.enumerate() {
        let values = parse_row(path, &r?, i + 3)?;
        if values.len() != width {
            return Err(err(format!("line {}: expected {width} columns, found {}", i + 3, values.len())));
        }
        for (c, v) in values.into_iter().enumerate() {
            columns[c].push(v);
        }
    }
    Ok(E4Channel {
        start_time: start[0],
        sample_rate_hz,
        columns,
    })
}

pub fn write_e4_csv(path: &Path, channel: &E4Channel) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path)?;
    let width = channel.columns.len();
    w.write_record(vec![format!("{}", channel.start_time); width])?;
    w.write_record(vec![format!("{}", channel.sample_rate_hz); width])?;
    let n = channel.columns.first().map_or(0, Vec::len);
    for t in 0..n {
        w.write_record(channel.columns.iter().map(|c| format!("{}", c[t])))?;
    }
    w.flush()?;
    Ok(())
}
