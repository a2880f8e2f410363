//! Loading outcome, covariate and weight files into a sample.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use survey_mc::csv_io::{read_matrix_file, CsvMatrix};
use survey_mc::linalg::with_intercept;
use survey_mc::SampleData;

use crate::{DataArgs, Failure};

pub struct Loaded {
    /// Standardized covariates; used by the response model and the
    /// non-completion estimators.
    pub sample: SampleData,
    /// Same sample with an intercept column prepended, for completion.
    pub completion_sample: SampleData,
    pub y: CsvMatrix,
    pub covariates_used: Vec<String>,
    pub warnings: Vec<String>,
}

fn read(path: &Path, what: &str) -> Result<CsvMatrix, Failure> {
    read_matrix_file(path).map_err(|e| Failure::Input(format!("{what} file {}: {e}", path.display())))
}

/// Center and scale each column; constant columns are dropped.
pub fn standardize(x: &DMatrix<f64>, names: &[String]) -> (DMatrix<f64>, Vec<String>, Vec<String>) {
    let n = x.nrows() as f64;
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut cols = Vec::new();
    for (j, name) in names.iter().enumerate() {
        let c = x.column(j);
        let mean = c.sum() / n;
        let sd = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        if sd <= 1e-12 * mean.abs().max(1.0) {
            dropped.push(name.clone());
            continue;
        }
        cols.push(c.map(|v| (v - mean) / sd));
        kept.push(name.clone());
    }
    let out = if cols.is_empty() { DMatrix::zeros(x.nrows(), 0) } else { DMatrix::from_columns(&cols) };
    (out, kept, dropped)
}

pub fn load(args: &DataArgs) -> Result<Loaded, Failure> {
    let mut warnings = Vec::new();
    let y = read(&args.y, "outcome")?;
    let x = read(&args.x, "covariate")?;
    let n = y.values.nrows();
    if x.values.nrows() != n {
        return Err(Failure::Input(format!("row mismatch: {n} outcome rows, {} covariate rows", x.values.nrows())));
    }
    if let Some(pos) = x.values.iter().position(|v| !v.is_finite()) {
        let (row, col) = (pos % n, pos / n);
        return Err(Failure::Input(format!(
            "covariates must be fully observed; row {} column '{}' is missing",
            row + 1,
            x.header[col]
        )));
    }
    if let Some(p) = args.population_size {
        if !(p > 0.0) {
            return Err(Failure::Input(format!("--population-size must be positive (got {p})")));
        }
    }

    let (pi, n_hat) = match &args.weights {
        Some(path) => {
            let w = read(path, "weights")?;
            if w.values.nrows() != n {
                return Err(Failure::Input(format!("row mismatch: {n} outcome rows, {} weight rows", w.values.nrows())));
            }
            let col = w.values.column(0);
            if let Some(i) = col.iter().position(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(Failure::Input(format!("weight in row {} is not a positive number", i + 1)));
            }
            let pi = if args.weights_are_w { col.map(|w| 1.0 / w) } else { col.into_owned() };
            if !args.weights_are_w && pi.iter().any(|&p| p > 1.0) {
                warnings.push("inclusion probabilities above 1; pass --weights-are-w if the file holds weights".into());
            }
            let n_hat = args.population_size.unwrap_or_else(|| pi.iter().map(|p| 1.0 / p).sum());
            (pi, n_hat)
        }
        None => {
            let n_hat = args.population_size.unwrap_or_else(|| {
                warnings.push("no population size given; using the sample size".into());
                n as f64
            });
            warnings.push(format!("no weights file; using equal inclusion probabilities n/N = {}", n as f64 / n_hat));
            (DVector::from_element(n, n as f64 / n_hat), n_hat)
        }
    };

    let (xs, kept, dropped) = standardize(&x.values, &x.header);
    for name in &dropped {
        warnings.push(format!("covariate '{name}' is constant and was dropped"));
    }
    if kept.is_empty() {
        return Err(Failure::Input("no non-constant covariates".into()));
    }

    let sample = SampleData::from_nan_masked(xs.clone(), y.values.clone(), pi, n_hat);
    for j in 0..sample.n_items() {
        if sample.observed_count(j) == 0 {
            warnings.push(format!("item '{}' has no observed values", y.header[j]));
        }
    }
    let mut completion_sample = sample.clone();
    completion_sample.x = with_intercept(&xs);
    Ok(Loaded { sample, completion_sample, y, covariates_used: kept, warnings })
}
