//! Matrix containers shared by the sampling, fitting and estimation stages.
//!
//! Missing cells in `SampleData::y` hold `f64::NAN`; the response mask is the
//! authority on which cells are observed.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A finite population generated from the column-space-decomposition model
/// `Y = X·β* + B* + ε` with `Xᵀ B* = 0`.
#[derive(Debug, Clone)]
pub struct PopulationData {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub a: DMatrix<f64>,
    pub b_star: DMatrix<f64>,
    pub beta_star: DMatrix<f64>,
    /// Column means of `y`.
    pub theta: DVector<f64>,
    pub k: usize,
}

impl PopulationData {
    pub fn n_units(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }
}

/// A probability sample with (possibly) partially observed outcomes.
#[derive(Debug, Clone)]
pub struct SampleData {
    /// Covariates, n×d, fully observed.
    pub x: DMatrix<f64>,
    /// Outcomes, n×L; `NaN` on unobserved cells.
    pub y: DMatrix<f64>,
    /// Response mask, `true` where `y` is observed.
    pub r: DMatrix<bool>,
    /// Inclusion probabilities (or expected draw counts for with-replacement designs).
    pub pi: DVector<f64>,
    /// Population size, or its estimate `Σ wᵢ`.
    pub n_hat: f64,
}

impl SampleData {
    /// A fully observed sample.
    pub fn complete(x: DMatrix<f64>, y: DMatrix<f64>, pi: DVector<f64>, n_hat: f64) -> Self {
        let r = DMatrix::from_element(y.nrows(), y.ncols(), true);
        SampleData { x, y, r, pi, n_hat }
    }

    /// Build a sample from a matrix whose `NaN` cells are missing.
    pub fn from_nan_masked(x: DMatrix<f64>, y: DMatrix<f64>, pi: DVector<f64>, n_hat: f64) -> Self {
        let r = y.map(|v| !v.is_nan());
        SampleData { x, y, r, pi, n_hat }
    }

    pub fn n_rows(&self) -> usize {
        self.y.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.y.ncols()
    }

    pub fn n_covariates(&self) -> usize {
        self.x.ncols()
    }

    /// Copy of the sample with the mask replaced; cells the new mask hides become `NaN`.
    pub fn with_mask(&self, r: DMatrix<bool>) -> Self {
        let y = DMatrix::from_fn(self.y.nrows(), self.y.ncols(), |i, j| {
            if r[(i, j)] {
                self.y[(i, j)]
            } else {
                f64::NAN
            }
        });
        SampleData {
            x: self.x.clone(),
            y,
            r,
            pi: self.pi.clone(),
            n_hat: self.n_hat,
        }
    }

    pub fn observed_count(&self, col: usize) -> usize {
        self.r.column(col).iter().filter(|&&b| b).count()
    }

    pub fn response_rate(&self, col: usize) -> f64 {
        self.observed_count(col) as f64 / self.n_rows() as f64
    }

    /// Check the sample and return an error carrying every violation found.
    pub fn ensure_valid(&self) -> Result<()> {
        let report = validate_sample(self);
        if report.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = report.iter().map(|v| v.to_string()).collect();
            Err(Error::Invalid(msgs.join("; ")))
        }
    }
}

/// Regularization parameters `(τ₁, τ₂, α)` of the penalized completion.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TuningTriple {
    pub tau1: f64,
    pub tau2: f64,
    pub alpha: f64,
}

impl TuningTriple {
    pub fn new(tau1: f64, tau2: f64, alpha: f64) -> Result<Self> {
        let t = TuningTriple { tau1, tau2, alpha };
        if t.is_valid() {
            Ok(t)
        } else {
            Err(Error::Invalid(format!(
                "tuning triple out of range: tau1={tau1}, tau2={tau2}, alpha={alpha}"
            )))
        }
    }

    pub fn is_valid(&self) -> bool {
        self.tau1 >= 0.0 && self.tau2 >= 0.0 && (0.0..=1.0).contains(&self.alpha)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Shape(String),
    NonPositivePi { row: usize, value: f64 },
    MissingObserved { row: usize, col: usize },
    NonFiniteCovariate { row: usize, col: usize },
    PopulationTooSmall { n_hat: f64, n: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Shape(msg) => write!(f, "shape: {msg}"),
            Violation::NonPositivePi { row, value } => write!(f, "pi[{row}] not > 0 (got {value})"),
            Violation::MissingObserved { row, col } => {
                write!(f, "cell ({row},{col}) marked observed but value is missing")
            }
            Violation::NonFiniteCovariate { row, col } => {
                write!(f, "covariate ({row},{col}) is not finite")
            }
            Violation::PopulationTooSmall { n_hat, n } => {
                write!(f, "N_hat = {n_hat} is smaller than sample size {n}")
            }
        }
    }
}

/// List every invariant violation of `data`; empty means valid. Indices are 0-based.
pub fn validate_sample(data: &SampleData) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = data.y.nrows();
    if data.x.nrows() != n {
        out.push(Violation::Shape(format!("x has {} rows, y has {n}", data.x.nrows())));
    }
    if data.r.shape() != data.y.shape() {
        out.push(Violation::Shape(format!(
            "mask is {:?}, y is {:?}",
            data.r.shape(),
            data.y.shape()
        )));
    }
    if data.pi.len() != n {
        out.push(Violation::Shape(format!("pi has {} entries, y has {n} rows", data.pi.len())));
    }
    if !out.is_empty() {
        return out;
    }
    for (row, &p) in data.pi.iter().enumerate() {
        if !(p > 0.0 && p.is_finite()) {
            out.push(Violation::NonPositivePi { row, value: p });
        }
    }
    for col in 0..data.y.ncols() {
        for row in 0..n {
            if data.r[(row, col)] && !data.y[(row, col)].is_finite() {
                out.push(Violation::MissingObserved { row, col });
            }
        }
    }
    for col in 0..data.x.ncols() {
        for row in 0..n {
            if !data.x[(row, col)].is_finite() {
                out.push(Violation::NonFiniteCovariate { row, col });
            }
        }
    }
    // Only meaningful when pi are genuine inclusion probabilities.
    if data.pi.iter().all(|&p| p <= 1.0) && data.n_hat < n as f64 {
        out.push(Violation::PopulationTooSmall { n_hat: data.n_hat, n });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn valid() -> SampleData {
        let x = DMatrix::from_row_slice(3, 1, &[0.1, 0.2, 0.3]);
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        SampleData::complete(x, y, DVector::from_vec(vec![0.5, 0.5, 0.5]), 6.0)
    }

    #[test]
    fn valid_sample_has_empty_report() {
        assert!(validate_sample(&valid()).is_empty());
    }

    #[test]
    fn zero_pi_is_reported() {
        let mut s = valid();
        s.pi = DVector::from_vec(vec![0.5, 0.0, 0.5]);
        let report = validate_sample(&s);
        assert_eq!(report, vec![Violation::NonPositivePi { row: 1, value: 0.0 }]);
        assert!(report[0].to_string().contains("pi[1] not > 0"));
    }

    #[test]
    fn observed_sentinel_names_cell() {
        let mut s = valid();
        s.y[(1, 1)] = f64::NAN;
        let report = validate_sample(&s);
        assert_eq!(report, vec![Violation::MissingObserved { row: 1, col: 1 }]);
        assert!(report[0].to_string().contains("(1,1)"));
    }

    #[test]
    fn masked_sentinel_is_fine() {
        let s = valid();
        let mut r = s.r.clone();
        r[(2, 0)] = false;
        let masked = s.with_mask(r);
        assert!(masked.y[(2, 0)].is_nan());
        assert!(validate_sample(&masked).is_empty());
    }

    #[test]
    fn tuning_triple_bounds() {
        assert!(TuningTriple::new(0.0, 0.0, 1.0).is_ok());
        assert!(TuningTriple::new(-1.0, 0.0, 0.5).is_err());
        assert!(TuningTriple::new(0.0, 0.0, 1.5).is_err());
    }
}
