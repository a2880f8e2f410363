//! Probability sampling designs (Poisson, simple random sampling, PPS with
//! replacement), size measures, and logistic item-nonresponse generation.

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp1, Normal};
use serde::{Deserialize, Serialize};

use crate::data::{PopulationData, SampleData};
use crate::error::{Error, Result};
use crate::linalg::logistic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DesignKind {
    Poisson,
    Srs,
    #[serde(alias = "pps")]
    Ppswr,
}

impl DesignKind {
    pub fn label(self) -> &'static str {
        match self {
            DesignKind::Poisson => "POI",
            DesignKind::Srs => "SRS",
            DesignKind::Ppswr => "PPS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeMode {
    Informative,
    Noninformative,
}

#[derive(Debug, Clone)]
pub struct DesignSpec {
    pub kind: DesignKind,
    pub n_target: usize,
    /// Positive size measure per population unit; unused (may be empty) for SRS.
    pub size_measure: Vec<f64>,
}

/// Selected unit indices with their inclusion probabilities (expected draw
/// counts for PPSWR). PPSWR duplicates appear once per draw.
#[derive(Debug, Clone)]
pub struct SampleDraw {
    pub indices: Vec<usize>,
    pub pi: Vec<f64>,
}

/// `s_i` for informative sampling: mean of the first seven items, shifted so the minimum is 1.
pub fn informative_size_measure(y: &DMatrix<f64>) -> Result<Vec<f64>> {
    if y.ncols() < 7 {
        return Err(Error::InsufficientItems(y.ncols()));
    }
    let means: Vec<f64> = (0..y.nrows())
        .map(|i| (0..7).map(|j| y[(i, j)]).sum::<f64>() / 7.0)
        .collect();
    let m_s = means.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(means.into_iter().map(|m| m - m_s + 1.0).collect())
}

/// `s_i` for noninformative sampling: covariate row mean plus an Exp(1) draw plus 1.
pub fn noninformative_size_measure<R: Rng + ?Sized>(x: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    let d = x.ncols() as f64;
    (0..x.nrows())
        .map(|i| {
            let e: f64 = Exp1.sample(rng);
            x.row(i).sum() / d + e + 1.0
        })
        .collect()
}

pub fn compute_size_measure<R: Rng + ?Sized>(
    pop: &PopulationData,
    mode: SizeMode,
    rng: &mut R,
) -> Result<Vec<f64>> {
    match mode {
        SizeMode::Informative => informative_size_measure(&pop.y),
        SizeMode::Noninformative => Ok(noninformative_size_measure(&pop.x, rng)),
    }
}

fn check_sizes(spec: &DesignSpec, n_units: usize) -> Result<f64> {
    if spec.size_measure.len() != n_units {
        return Err(Error::Design(format!(
            "size measure has {} entries for {n_units} units",
            spec.size_measure.len()
        )));
    }
    if let Some(i) = spec.size_measure.iter().position(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Design(format!("size measure s[{i}] = {} is not positive", spec.size_measure[i])));
    }
    Ok(spec.size_measure.iter().sum())
}

/// Draw unit indices from a population of `n_units` under `spec`.
pub fn draw_design<R: Rng + ?Sized>(n_units: usize, spec: &DesignSpec, rng: &mut R) -> Result<SampleDraw> {
    let n = spec.n_target;
    if n == 0 {
        return Err(Error::Design("sample size must be positive".into()));
    }
    let draw = match spec.kind {
        DesignKind::Poisson => {
            if n > n_units {
                return Err(Error::Design(format!("n = {n} exceeds N = {n_units}")));
            }
            let total = check_sizes(spec, n_units)?;
            let mut indices = Vec::new();
            let mut pi = Vec::new();
            for (i, &s) in spec.size_measure.iter().enumerate() {
                let p = (n as f64 * s / total).min(1.0);
                if rng.random::<f64>() < p {
                    indices.push(i);
                    pi.push(p);
                }
            }
            SampleDraw { indices, pi }
        }
        DesignKind::Srs => {
            if n > n_units {
                return Err(Error::Design(format!("n = {n} exceeds N = {n_units}")));
            }
            let mut indices = rand::seq::index::sample(rng, n_units, n).into_vec();
            indices.sort_unstable();
            let p = n as f64 / n_units as f64;
            SampleDraw { pi: vec![p; indices.len()], indices }
        }
        DesignKind::Ppswr => {
            let total = check_sizes(spec, n_units)?;
            let dist = WeightedIndex::new(&spec.size_measure)
                .map_err(|e| Error::Design(format!("size measure: {e}")))?;
            let mut indices: Vec<usize> = (0..n).map(|_| dist.sample(rng)).collect();
            indices.sort_unstable();
            let pi = indices.iter().map(|&i| n as f64 * spec.size_measure[i] / total).collect();
            SampleDraw { indices, pi }
        }
    };
    if let Some(i) = draw.pi.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::Design(format!("inclusion probability for unit {} is zero", draw.indices[i])));
    }
    if draw.indices.is_empty() {
        return Err(Error::Design("realized sample is empty".into()));
    }
    Ok(draw)
}

impl SampleDraw {
    /// Subset the population rows; outcomes are fully observed at this stage.
    pub fn materialize(&self, pop: &PopulationData) -> SampleData {
        let x = pop.x.select_rows(&self.indices);
        let y = pop.y.select_rows(&self.indices);
        SampleData::complete(x, y, DVector::from_vec(self.pi.clone()), pop.n_units() as f64)
    }
}

pub fn draw_sample<R: Rng + ?Sized>(pop: &PopulationData, spec: &DesignSpec, rng: &mut R) -> Result<SampleData> {
    Ok(draw_design(pop.n_units(), spec, rng)?.materialize(pop))
}

/// Response probabilities `logistic((1, xᵢᵀ) γ_.j)` for every cell.
pub fn response_probabilities(x: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if gamma.nrows() != x.ncols() + 1 {
        return Err(Error::Dimension(format!(
            "gamma has {} rows, expected d + 1 = {}",
            gamma.nrows(),
            x.ncols() + 1
        )));
    }
    let mut eta = x * gamma.rows(1, x.ncols());
    for j in 0..gamma.ncols() {
        let b0 = gamma[(0, j)];
        eta.column_mut(j).apply(|v| *v = logistic(*v + b0));
    }
    Ok(eta)
}

/// A sample after MAR item nonresponse, with the true response probabilities.
#[derive(Debug, Clone)]
pub struct MaskedSample {
    pub sample: SampleData,
    pub true_p: DMatrix<f64>,
}

/// Mask cells independently with `r_ij ~ Bernoulli(p_ij)`.
pub fn apply_missingness<R: Rng + ?Sized>(
    sample: &SampleData,
    gamma: &DMatrix<f64>,
    rng: &mut R,
) -> Result<MaskedSample> {
    if gamma.ncols() != sample.n_items() {
        return Err(Error::Dimension(format!(
            "gamma has {} columns for {} items",
            gamma.ncols(),
            sample.n_items()
        )));
    }
    let true_p = response_probabilities(&sample.x, gamma)?;
    // Column-major draw order matches the storage order.
    let mut r = DMatrix::from_element(sample.n_rows(), sample.n_items(), false);
    for j in 0..sample.n_items() {
        for i in 0..sample.n_rows() {
            r[(i, j)] = sample.r[(i, j)] && rng.random::<f64>() < true_p[(i, j)];
        }
    }
    Ok(MaskedSample { sample: sample.with_mask(r), true_p })
}

/// Missingness model for simulation: slopes `N(0, slope_sd²)` on standardized
/// covariates, per-column intercept bisected so the population mean response
/// probability equals `target_rate`. Returned on the raw covariate scale.
pub fn calibrate_missingness<R: Rng + ?Sized>(
    x: &DMatrix<f64>,
    n_items: usize,
    target_rate: f64,
    slope_sd: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    if !(target_rate > 0.0 && target_rate < 1.0) {
        return Err(Error::Invalid(format!("target response rate {target_rate} not in (0,1)")));
    }
    let (n, d) = x.shape();
    let means: Vec<f64> = (0..d).map(|k| x.column(k).mean()).collect();
    let sds: Vec<f64> = (0..d)
        .map(|k| {
            let m = means[k];
            let v = x.column(k).iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
            v.sqrt().max(f64::MIN_POSITIVE)
        })
        .collect();
    let normal = Normal::new(0.0, slope_sd).map_err(|e| Error::Invalid(e.to_string()))?;
    let mut gamma = DMatrix::zeros(d + 1, n_items);
    for j in 0..n_items {
        let slopes: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        let lin: Vec<f64> = (0..n)
            .map(|i| (0..d).map(|k| slopes[k] * (x[(i, k)] - means[k]) / sds[k]).sum())
            .collect();
        let rate = |b0: f64| lin.iter().map(|&t| logistic(t + b0)).sum::<f64>() / n as f64;
        let (mut lo, mut hi) = (-50.0, 50.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if rate(mid) < target_rate {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let b0 = 0.5 * (lo + hi);
        let mut intercept = b0;
        for k in 0..d {
            gamma[(k + 1, j)] = slopes[k] / sds[k];
            intercept -= slopes[k] * means[k] / sds[k];
        }
        gamma[(0, j)] = intercept;
    }
    Ok(gamma)
}
