//! CSV readers and writers for signals, beats, lead subsets and embeddings.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::format::fmt_g;
use crate::signal::{beat_window, Beat, Lead, MultiLeadSignal};

/// Named lead columns read from a CSV with a lead-name header.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadTable {
    pub leads: Vec<Lead>,
    /// One vector per lead, in header order.
    pub columns: Vec<Vec<f64>>,
}

impl LeadTable {
    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn column(&self, lead: Lead) -> Option<&[f64]> {
        self.leads
            .iter()
            .position(|l| *l == lead)
            .map(|i| self.columns[i].as_slice())
    }

    /// The only column, or the requested one when several are present.
    pub fn select(&self, lead: Option<Lead>) -> Result<(Lead, &[f64])> {
        match lead {
            Some(l) => self
                .column(l)
                .map(|c| (l, c))
                .ok_or_else(|| Error::Invalid(format!("lead {l} not present in CSV"))),
            None if self.leads.len() == 1 => Ok((self.leads[0], &self.columns[0])),
            None => Err(Error::Invalid(
                "CSV has several lead columns; choose one with --lead".into(),
            )),
        }
    }

    /// All twelve leads as a matrix, in canonical order.
    pub fn to_matrix(&self) -> Result<Array2<f64>> {
        let n = self.len();
        let mut m = Array2::zeros((12, n));
        for lead in Lead::ALL {
            let col = self
                .column(lead)
                .ok_or_else(|| Error::Invalid(format!("lead {lead} missing from CSV")))?;
            for (j, v) in col.iter().enumerate() {
                m[[lead.index(), j]] = *v;
            }
        }
        Ok(m)
    }
}

fn parse_value(field: &str, path: &Path, row: usize, col: usize) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| {
        Error::parse(
            path.display().to_string(),
            format!("row {row}, column {col}: `{field}` is not a number"),
        )
    })?;
    if !v.is_finite() {
        return Err(Error::parse(
            path.display().to_string(),
            format!("row {row}, column {col}: non-finite value"),
        ));
    }
    Ok(v)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::parse(path.display().to_string(), format!("{other:?}")),
    }
}

/// Read a CSV whose header names leads (any subset, any order).
pub fn read_lead_csv(path: impl AsRef<Path>) -> Result<LeadTable> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    let mut leads = Vec::with_capacity(header.len());
    for name in header.iter() {
        let lead: Lead = name.trim().parse().map_err(|_| {
            Error::parse(path.display().to_string(), format!("unknown lead column `{name}`"))
        })?;
        if leads.contains(&lead) {
            return Err(Error::parse(
                path.display().to_string(),
                format!("duplicate lead column `{name}`"),
            ));
        }
        leads.push(lead);
    }
    if leads.is_empty() {
        return Err(Error::parse(path.display().to_string(), "empty header"));
    }
    let mut columns = vec![Vec::new(); leads.len()];
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        for (c, field) in record.iter().enumerate() {
            columns[c].push(parse_value(field, path, r + 1, c + 1)?);
        }
    }
    if columns[0].is_empty() {
        return Err(Error::parse(path.display().to_string(), "no data rows"));
    }
    Ok(LeadTable { leads, columns })
}

/// Write lead columns with a header; floats at 9 significant digits.
pub fn write_lead_csv<W: Write>(out: W, leads: &[Lead], columns: &[&[f64]]) -> Result<()> {
    let n = columns.first().map_or(0, |c| c.len());
    if leads.len() != columns.len() || columns.iter().any(|c| c.len() != n) {
        return Err(Error::ShapeMismatch("lead columns differ in length".into()));
    }
    let mut out = BufWriter::new(out);
    let io = |e| Error::io("output", e);
    let header: Vec<&str> = leads.iter().map(|l| l.name()).collect();
    writeln!(out, "{}", header.join(",")).map_err(io)?;
    for j in 0..n {
        let row: Vec<String> = columns.iter().map(|c| fmt_g(c[j])).collect();
        writeln!(out, "{}", row.join(",")).map_err(io)?;
    }
    out.flush().map_err(io)
}

pub fn write_lead_csv_file(path: impl AsRef<Path>, leads: &[Lead], columns: &[&[f64]]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_lead_csv(file, leads, columns)
}

pub fn read_signal_csv(path: impl AsRef<Path>, fs: f64) -> Result<MultiLeadSignal> {
    MultiLeadSignal::new(read_lead_csv(path)?.to_matrix()?, fs)
}

pub fn write_signal_csv<W: Write>(out: W, samples: &Array2<f64>) -> Result<()> {
    let rows: Vec<Vec<f64>> = samples.rows().into_iter().map(|r| r.to_vec()).collect();
    let cols: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    write_lead_csv(out, &Lead::ALL, &cols)
}

pub fn write_signal_csv_file(path: impl AsRef<Path>, samples: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_signal_csv(file, samples)
}

/// Read a 12-lead beat crop; the R-peak sits at the crop's fixed offset.
pub fn read_beat_csv(path: impl AsRef<Path>, fs: f64) -> Result<Beat> {
    let samples = read_lead_csv(path)?.to_matrix()?;
    Beat::new(samples, beat_window(fs).0, fs)
}

/// Embedding vectors, one per row. A non-numeric first row is a header.
pub fn read_embeddings_csv(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let is_header = r == 0 && record.iter().any(|f| f.trim().parse::<f64>().is_err());
        if is_header {
            continue;
        }
        let row = record
            .iter()
            .enumerate()
            .map(|(c, f)| parse_value(f, path, r + 1, c + 1))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    let d = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || d == 0 {
        return Err(Error::parse(path.display().to_string(), "no embedding rows"));
    }
    let mut m = Array2::zeros((rows.len(), d));
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(Error::parse(
                path.display().to_string(),
                format!("row {} has {} columns, expected {d}", i + 1, row.len()),
            ));
        }
        for (j, v) in row.iter().enumerate() {
            m[[i, j]] = *v;
        }
    }
    Ok(m)
}

/// A single column of reals, with an optional non-numeric header.
pub fn read_scalar_csv(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let m = read_embeddings_csv(path.as_ref())?;
    if m.ncols() != 1 {
        return Err(Error::parse(
            path.as_ref().display().to_string(),
            format!("expected one column, found {}", m.ncols()),
        ));
    }
    Ok(m.column(0).to_vec())
}

#[derive(Deserialize)]
struct Sidecar {
    fs: f64,
}

/// Sampling rate from a `{"fs": 500}` sidecar file.
pub fn read_fs_sidecar(path: impl AsRef<Path>) -> Result<f64> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let side: Sidecar = serde_json::from_str(&text)
        .map_err(|e| Error::parse(path.display().to_string(), e.to_string()))?;
    Ok(side.fs)
}

/// Parse a JSON file into `T`, mapping failures to I/O or parse errors.
pub fn read_json<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}
