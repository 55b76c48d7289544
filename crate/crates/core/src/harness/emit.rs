use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::runner::{Epoch, SummaryRow};
use crate::resolver::LocalizationResult;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    JsonLines,
}

/// One resolver iteration of one trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub trial: usize,
    pub iteration: usize,
    pub grid: Vec<f64>,
    pub u: Vec<f64>,
    pub h_ml: f64,
    pub state: [f64; 6],
}

pub fn trace_records(trial: usize, result: &LocalizationResult) -> Vec<TraceRecord> {
    result
        .trace
        .iter()
        .map(|r| TraceRecord {
            trial,
            iteration: r.iteration,
            grid: r.grid.clone(),
            u: r.u.clone(),
            h_ml: r.h_ml,
            state: r.state,
        })
        .collect()
}

/// Flat measurement row for the `synth` output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub time_s: f64,
    pub r10_m: f64,
    pub r20_m: f64,
    pub rdot10_mps: f64,
    pub rdot20_mps: f64,
    pub x_m: f64,
    pub y_m: f64,
    pub h_m: f64,
}

impl From<&Epoch> for EpochRecord {
    fn from(e: &Epoch) -> Self {
        Self {
            epoch: e.index,
            time_s: e.time,
            r10_m: e.measurement.r[0],
            r20_m: e.measurement.r[1],
            rdot10_mps: e.measurement.rdot[0],
            rdot20_mps: e.measurement.rdot[1],
            x_m: e.truth.x,
            y_m: e.truth.y,
            h_m: e.truth.h,
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Writes serialisable records as CSV (with header) or JSON lines.
pub fn write_records<T: Serialize>(records: &[T], header: &[&str], format: Format, out: impl Write) -> Result<()> {
    match format {
        Format::Csv => {
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
            let fail = |e: csv::Error| Error::Numerical(format!("csv output: {e}"));
            w.write_record(header).map_err(fail)?;
            for r in records {
                w.serialize(r).map_err(fail)?;
            }
            w.flush().map_err(|e| Error::Numerical(format!("csv output: {e}")))?;
        }
        Format::JsonLines => {
            let mut out = out;
            for r in records {
                let line = serde_json::to_string(r).map_err(|e| Error::Numerical(format!("json output: {e}")))?;
                writeln!(out, "{line}").map_err(|e| Error::Numerical(format!("json output: {e}")))?;
            }
            out.flush().map_err(|e| Error::Numerical(format!("json output: {e}")))?;
        }
    }
    Ok(())
}

pub const SUMMARY_HEADER: [&str; 5] = ["sigma2", "method", "rmse_3d_m", "rmse_alt_m", "converged_fraction"];

pub const EPOCH_HEADER: [&str; 9] = [
    "epoch",
    "time_s",
    "r10_m",
    "r20_m",
    "rdot10_mps",
    "rdot20_mps",
    "x_m",
    "y_m",
    "h_m",
];

/// Monte Carlo summary: one row per noise level and method.
pub fn write_summary(rows: &[SummaryRow], format: Format, path: &Path) -> Result<()> {
    write_summary_to(rows, format, create(path)?).map_err(|e| with_path(e, path))
}

pub fn write_summary_to(rows: &[SummaryRow], format: Format, out: impl Write) -> Result<()> {
    write_records(rows, &SUMMARY_HEADER, format, out)
}

pub fn read_summary(format: Format, path: &Path) -> Result<Vec<SummaryRow>> {
    match format {
        Format::Csv => {
            let mut r = csv::Reader::from_reader(open(path)?);
            r.deserialize().map(|row| row.map_err(csv_err(path))).collect()
        }
        Format::JsonLines => read_json_lines(path),
    }
}

pub fn write_epochs(epochs: &[Epoch], format: Format, path: &Path) -> Result<()> {
    write_epochs_to(epochs, format, create(path)?).map_err(|e| with_path(e, path))
}

pub fn write_epochs_to(epochs: &[Epoch], format: Format, out: impl Write) -> Result<()> {
    let rows: Vec<EpochRecord> = epochs.iter().map(EpochRecord::from).collect();
    write_records(&rows, &EPOCH_HEADER, format, out)
}

/// Per-iteration trace. JSON lines keep `grid`, `u` and `state` as arrays;
/// CSV flattens them into numbered columns.
pub fn write_trace(records: &[TraceRecord], format: Format, path: &Path) -> Result<()> {
    write_trace_to(records, format, create(path)?).map_err(|e| with_path(e, path))
}

pub fn write_trace_to(records: &[TraceRecord], format: Format, out: impl Write) -> Result<()> {
    match format {
        Format::JsonLines => write_records(records, &[], format, out),
        Format::Csv => write_trace_csv(records, out),
    }
}

fn write_trace_csv(records: &[TraceRecord], out: impl Write) -> Result<()> {
    let m = records.first().map_or(0, |r| r.grid.len());
    let mut header = vec!["trial".to_string(), "iteration".to_string()];
    header.extend((1..=m).map(|i| format!("h_{i}")));
    header.extend((1..=m).map(|i| format!("u_{i}")));
    header.push("h_ml".into());
    header.extend(["x", "y", "h", "vx", "vy", "vz"].map(String::from));
    let mut w = csv::Writer::from_writer(out);
    let fail = |e: csv::Error| Error::Numerical(format!("csv output: {e}"));
    w.write_record(&header).map_err(fail)?;
    for r in records {
        let mut row = vec![r.trial.to_string(), r.iteration.to_string()];
        row.extend(r.grid.iter().chain(&r.u).map(f64::to_string));
        row.push(r.h_ml.to_string());
        row.extend(r.state.iter().map(f64::to_string));
        w.write_record(&row).map_err(fail)?;
    }
    w.flush().map_err(|e| Error::Numerical(format!("csv output: {e}")))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    read_json_lines(path)
}

fn read_json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (n, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?);
    }
    Ok(out)
}

fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Numerical(message) => Error::Io {
            path: path.to_path_buf(),
            source: std::io::Error::other(message),
        },
        other => other,
    }
}

/// Iteration-by-hypothesis table of altitudes (km) and weights. Row 0 is the
/// initial grid with its uniform prior.
pub fn table1(result: &LocalizationResult) -> String {
    let m = result.initial_grid.len();
    let mut s = String::new();
    let _ = write!(s, "{:<10}{:<8}", "iteration", "");
    for i in 1..=m {
        let _ = write!(s, "{:>10}", format!("i = {i}"));
    }
    s.push('\n');
    let rows = std::iter::once((0, &result.initial_grid, &result.initial_u))
        .chain(result.trace.iter().map(|r| (r.iteration, &r.grid, &r.u)));
    for (k, grid, u) in rows {
        let _ = write!(s, "{:<10}{:<8}", k, "h (km)");
        for h in grid {
            let _ = write!(s, "{:>10.3}", h / 1_000.0);
        }
        s.push('\n');
        let _ = write!(s, "{:<10}{:<8}", "", "u");
        for v in u {
            let _ = write!(s, "{:>10.3}", v);
        }
        s.push('\n');
    }
    s
}

pub fn write_text(text: &str, path: &Path) -> Result<()> {
    let mut f = create(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(io_err(path))
}
