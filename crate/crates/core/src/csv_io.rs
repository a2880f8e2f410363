//! CSV conventions: a header row is required, missing values are an empty
//! field or the literal `NA`, and numbers are written in shortest
//! round-trip form.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::data::SampleData;
use crate::error::{Error, Result};

/// A numeric table read from CSV. `raw` keeps the original field text so
/// observed values can be echoed verbatim.
#[derive(Debug, Clone)]
pub struct CsvMatrix {
    pub header: Vec<String>,
    pub values: DMatrix<f64>,
    pub raw: Vec<Vec<String>>,
}

pub fn is_missing_field(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t == "NA"
}

pub fn read_matrix<R: Read>(reader: R) -> Result<CsvMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    let ncols = header.len();
    let mut raw = Vec::new();
    let mut flat = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != ncols {
            return Err(Error::Invalid(format!(
                "row {line} has {} fields, header has {ncols}",
                rec.len()
            )));
        }
        let mut fields = Vec::with_capacity(ncols);
        for (col, field) in rec.iter().enumerate() {
            let v = if is_missing_field(field) {
                f64::NAN
            } else {
                field.trim().parse::<f64>().map_err(|_| {
                    Error::Invalid(format!("row {line}, column '{}': not a number: {field:?}", header[col]))
                })?
            };
            flat.push(v);
            fields.push(field.to_owned());
        }
        raw.push(fields);
    }
    let values = DMatrix::from_row_slice(raw.len(), ncols, &flat);
    Ok(CsvMatrix { header, values, raw })
}

pub fn read_matrix_file(path: impl AsRef<Path>) -> Result<CsvMatrix> {
    let f = std::fs::File::open(path.as_ref())?;
    read_matrix(std::io::BufReader::new(f))
}

pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NA".to_owned()
    } else {
        format!("{v}")
    }
}

pub fn write_matrix<W: Write>(writer: W, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    if header.len() != m.ncols() {
        return Err(Error::Dimension(format!("{} header names for {} columns", header.len(), m.ncols())));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header)?;
    for i in 0..m.nrows() {
        w.write_record((0..m.ncols()).map(|j| format_value(m[(i, j)])))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_matrix_file(path: impl AsRef<Path>, header: &[String], m: &DMatrix<f64>) -> Result<()> {
    let f = std::fs::File::create(path.as_ref())?;
    write_matrix(std::io::BufWriter::new(f), header, m)
}

pub fn default_header(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|j| format!("{prefix}{j}")).collect()
}

/// Serialized form of a sample: outcome, covariate and inclusion-probability tables.
pub struct SampleCsv {
    pub y: Vec<u8>,
    pub x: Vec<u8>,
    pub pi: Vec<u8>,
}

pub fn write_sample(sample: &SampleData) -> Result<SampleCsv> {
    let masked = DMatrix::from_fn(sample.n_rows(), sample.n_items(), |i, j| {
        if sample.r[(i, j)] {
            sample.y[(i, j)]
        } else {
            f64::NAN
        }
    });
    let mut y = Vec::new();
    write_matrix(&mut y, &default_header("y", sample.n_items()), &masked)?;
    let mut x = Vec::new();
    write_matrix(&mut x, &default_header("x", sample.n_covariates()), &sample.x)?;
    let mut pi = Vec::new();
    let pi_m = DMatrix::from_column_slice(sample.n_rows(), 1, sample.pi.as_slice());
    write_matrix(&mut pi, &["pi".to_owned()], &pi_m)?;
    Ok(SampleCsv { y, x, pi })
}

pub fn read_sample(csv: &SampleCsv, n_hat: f64) -> Result<SampleData> {
    let y = read_matrix(csv.y.as_slice())?.values;
    let x = read_matrix(csv.x.as_slice())?.values;
    let pi = read_matrix(csv.pi.as_slice())?.values;
    let pi = DVector::from_column_slice(pi.column(0).as_slice());
    Ok(SampleData::from_nan_masked(x, y, pi, n_hat))
}
