//! Labeled feature sets and their CSV dump format.
//!
//! A dump is optional `#` comment lines followed by a `label,f0,...,f{D-1}`
//! header and one row per sample. Labels in files are 1-based; in memory they
//! are 0-based. Reals are written with 17 significant digits so that every
//! `f64` survives a round trip.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::math::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatures {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledFeatures {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimMismatch {
                expected: features.rows(),
                found: labels.len(),
            });
        }
        Ok(Self { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }
}

/// `x` with 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes `comments` as `# ` lines, then the header and rows.
pub fn write_features_csv<W: Write>(
    mut w: W,
    set: &LabeledFeatures,
    comments: &[String],
) -> Result<()> {
    for c in comments {
        writeln!(w, "# {c}")?;
    }
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["label".to_string()];
    header.extend((0..set.dim()).map(|d| format!("f{d}")));
    out.write_record(&header).map_err(csv_err)?;
    for (row, &label) in set.features.iter_rows().zip(&set.labels) {
        let mut rec = vec![(label + 1).to_string()];
        rec.extend(row.iter().map(|&x| format_real(x)));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_features_csv<R: Read>(r: R) -> Result<LabeledFeatures> {
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(r);
    let header = reader.headers().map_err(csv_err)?.clone();
    if header.get(0) != Some("label") {
        return Err(Error::format("feature csv", "first column must be `label`"));
    }
    for (d, name) in header.iter().skip(1).enumerate() {
        if name != format!("f{d}") {
            return Err(Error::format(
                "feature csv",
                format!("unexpected column `{name}`"),
            ));
        }
    }
    let dim = header.len() - 1;
    if dim == 0 {
        return Err(Error::format("feature csv", "no feature columns"));
    }
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if rec.len() != dim + 1 {
            return Err(Error::format(
                "feature csv",
                format!("row {line} has {} fields", rec.len()),
            ));
        }
        let label: usize = rec[0].trim().parse().map_err(|_| {
            Error::format(
                "feature csv",
                format!("row {line}: bad label `{}`", &rec[0]),
            )
        })?;
        if label == 0 {
            return Err(Error::format(
                "feature csv",
                format!("row {line}: labels start at 1"),
            ));
        }
        labels.push(label - 1);
        for field in rec.iter().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format("feature csv", format!("row {line}: bad value `{field}`"))
            })?;
            data.push(v);
        }
    }
    LabeledFeatures::new(Matrix::from_vec(labels.len(), dim, data)?, labels)
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::format("csv", format!("{other:?}")),
    }
}
