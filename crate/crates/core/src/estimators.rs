//! Finite-population mean estimators under item nonresponse.
//!
//! Every estimator returns one `θ̂_j` per item plus an `unreliable` flag for
//! items whose estimate rests on a degenerate fit (no observed cells, jittered
//! normal equations, or not covered at all).

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::completion::{fit_completion, CompletionFit, CompletionOptions};
use crate::data::SampleData;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{weighted_least_squares, with_intercept};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "Full")]
    Full,
    #[serde(rename = "HDI")]
    Hdi,
    #[serde(rename = "MI")]
    Mi,
    #[serde(rename = "IPM")]
    Ipm,
    #[serde(rename = "DRLR")]
    Drlr,
    #[serde(rename = "DRNI")]
    Drni,
    #[serde(rename = "DRMC")]
    Drmc,
}

impl Method {
    pub const ALL: [Method; 7] =
        [Method::Hdi, Method::Mi, Method::Ipm, Method::Drlr, Method::Drni, Method::Drmc, Method::Full];

    /// Whether the method uses the fitted response probabilities.
    pub fn needs_response_model(self) -> bool {
        matches!(self, Method::Ipm | Method::Drlr | Method::Drni | Method::Drmc)
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Full => "Full",
            Method::Hdi => "HDI",
            Method::Mi => "MI",
            Method::Ipm => "IPM",
            Method::Drlr => "DRLR",
            Method::Drni => "DRNI",
            Method::Drmc => "DRMC",
        }
    }

    pub fn valid_names() -> String {
        Method::ALL.iter().map(|m| m.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .iter()
            .copied()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Invalid(format!("unknown method '{s}'; valid methods: {}", Method::valid_names())))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateVector {
    pub method: Method,
    pub theta_hat: Vec<f64>,
    pub unreliable: Vec<bool>,
}

fn empty_columns(sample: &SampleData) -> Vec<bool> {
    (0..sample.n_items()).map(|j| sample.observed_count(j) == 0).collect()
}

/// `N̂⁻¹ Σᵢ yᵢⱼ/πᵢ` for each column of a fully observed matrix.
pub fn ht_means(y: &DMatrix<f64>, pi: &DVector<f64>, n_hat: f64) -> Vec<f64> {
    (0..y.ncols())
        .map(|j| y.column(j).iter().zip(pi.iter()).map(|(v, p)| v / p).sum::<f64>() / n_hat)
        .collect()
}

/// Horvitz–Thompson estimator on fully observed outcomes.
pub fn ht_estimator(sample: &SampleData, y_full: &DMatrix<f64>) -> Result<EstimateVector> {
    if y_full.nrows() != sample.n_rows() {
        return Err(Error::Dimension(format!("Y has {} rows, sample has {}", y_full.nrows(), sample.n_rows())));
    }
    let theta_hat = ht_means(y_full, &sample.pi, sample.n_hat);
    let unreliable = theta_hat.iter().map(|t| !t.is_finite()).collect();
    Ok(EstimateVector { method: Method::Full, theta_hat, unreliable })
}

/// Doubly robust estimator `N̂⁻¹ Σᵢ πᵢ⁻¹ {rᵢⱼ(yᵢⱼ − âᵢⱼ)/p̂ᵢⱼ + âᵢⱼ}`.
pub fn dr_estimator(sample: &SampleData, p_hat: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> Result<Vec<f64>> {
    if p_hat.shape() != sample.y.shape() || a_hat.shape() != sample.y.shape() {
        return Err(Error::Dimension("P_hat / A_hat shapes do not match Y".into()));
    }
    let (n, l) = sample.y.shape();
    Ok((0..l)
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..n {
                let a = a_hat[(i, j)];
                let mut term = a;
                if sample.r[(i, j)] {
                    term += (sample.y[(i, j)] - a) / p_hat[(i, j)];
                }
                acc += term / sample.pi[i];
            }
            acc / sample.n_hat
        })
        .collect())
}

fn dr_vector(method: Method, sample: &SampleData, p_hat: &DMatrix<f64>, a_hat: &DMatrix<f64>) -> Result<EstimateVector> {
    let theta_hat = dr_estimator(sample, p_hat, a_hat)?;
    Ok(EstimateVector { method, theta_hat, unreliable: empty_columns(sample) })
}

/// Inverse probability weighting. The design-weighted form is
/// `N̂⁻¹ Σ rᵢⱼ yᵢⱼ/(πᵢ p̂ᵢⱼ)`; `paper_literal` drops `πᵢ`.
pub fn ipw_estimator(sample: &SampleData, p_hat: &DMatrix<f64>, paper_literal: bool) -> Result<EstimateVector> {
    if p_hat.shape() != sample.y.shape() {
        return Err(Error::Dimension("P_hat shape does not match Y".into()));
    }
    let (n, l) = sample.y.shape();
    let theta_hat = (0..l)
        .map(|j| {
            let mut acc = 0.0;
            for i in 0..n {
                if sample.r[(i, j)] {
                    let w = if paper_literal { 1.0 } else { 1.0 / sample.pi[i] };
                    acc += w * sample.y[(i, j)] / p_hat[(i, j)];
                }
            }
            acc / sample.n_hat
        })
        .collect();
    Ok(EstimateVector { method: Method::Ipm, theta_hat, unreliable: empty_columns(sample) })
}

/// Columns rescaled to mean 0, sd 1 (constant columns are only centred).
pub fn standardize_columns(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.nrows() as f64;
    let mut out = x.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        let sd = if sd > 0.0 { sd } else { 1.0 };
        col.apply(|v| *v = (*v - mean) / sd);
    }
    out
}

/// Nearest-neighbour donor for each missing cell, on standardized covariates.
/// Ties go to the smallest donor index. Returns `donor[(i, j)]` (`None` for
/// observed cells or items without donors).
pub fn hot_deck_donors(sample: &SampleData, exec: Execution) -> DMatrix<Option<usize>> {
    let z = standardize_columns(&sample.x);
    let n = sample.n_rows();
    let l = sample.n_items();
    let mut dist = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in (a + 1)..n {
            let d2: f64 = (0..z.ncols()).map(|k| (z[(a, k)] - z[(b, k)]).powi(2)).sum();
            dist[(a, b)] = d2;
            dist[(b, a)] = d2;
        }
    }
    let cols = exec.map(l, |j| {
        let donors: Vec<usize> = (0..n).filter(|&k| sample.r[(k, j)]).collect();
        (0..n)
            .map(|i| {
                if sample.r[(i, j)] || donors.is_empty() {
                    return None;
                }
                let mut best = donors[0];
                for &k in &donors[1..] {
                    if dist[(i, k)] < dist[(i, best)] {
                        best = k;
                    }
                }
                Some(best)
            })
            .collect::<Vec<_>>()
    });
    DMatrix::from_fn(n, l, |i, j| cols[j][i])
}

pub fn hot_deck_impute(sample: &SampleData, exec: Execution) -> (DMatrix<f64>, EstimateVector) {
    let donors = hot_deck_donors(sample, exec);
    let imputed = DMatrix::from_fn(sample.n_rows(), sample.n_items(), |i, j| {
        if sample.r[(i, j)] {
            sample.y[(i, j)]
        } else {
            donors[(i, j)].map_or(f64::NAN, |k| sample.y[(k, j)])
        }
    });
    let unreliable = empty_columns(sample);
    let theta_hat = ht_means(&imputed, &sample.pi, sample.n_hat)
        .into_iter()
        .zip(&unreliable)
        .map(|(t, &bad)| if bad { f64::NAN } else { t })
        .collect();
    (imputed, EstimateVector { method: Method::Hdi, theta_hat, unreliable })
}

/// Per-item weighted linear fits `y ~ 1 + x` with weights `r/(π p̂)`.
pub fn weighted_linear_predictions(
    sample: &SampleData,
    p_hat: &DMatrix<f64>,
    exec: Execution,
) -> (DMatrix<f64>, Vec<DVector<f64>>, Vec<bool>) {
    let design = with_intercept(&sample.x);
    let n = sample.n_rows();
    let fits = exec.map(sample.n_items(), |j| {
        let y: Vec<f64> = (0..n).map(|i| if sample.r[(i, j)] { sample.y[(i, j)] } else { 0.0 }).collect();
        let w: Vec<f64> = (0..n)
            .map(|i| if sample.r[(i, j)] { 1.0 / (sample.pi[i] * p_hat[(i, j)]) } else { 0.0 })
            .collect();
        weighted_least_squares(&design, &y, &w)
    });
    let mut a_hat = DMatrix::zeros(n, sample.n_items());
    for (j, f) in fits.iter().enumerate() {
        a_hat.set_column(j, &(&design * &f.coef));
    }
    let jittered = fits.iter().map(|f| f.jittered).collect();
    (a_hat, fits.into_iter().map(|f| f.coef).collect(), jittered)
}

pub fn dr_linear(sample: &SampleData, p_hat: &DMatrix<f64>, exec: Execution) -> Result<EstimateVector> {
    let (a_hat, _, jittered) = weighted_linear_predictions(sample, p_hat, exec);
    let mut out = dr_vector(Method::Drlr, sample, p_hat, &a_hat)?;
    for (u, j) in out.unreliable.iter_mut().zip(jittered) {
        *u |= j;
    }
    Ok(out)
}

pub fn dr_matrix_completion<R: Rng + ?Sized>(
    sample: &SampleData,
    p_hat: &DMatrix<f64>,
    opts: &CompletionOptions,
    rng: &mut R,
) -> Result<(EstimateVector, CompletionFit)> {
    let fit = fit_completion(sample, p_hat, opts, rng)?;
    let est = dr_vector(Method::Drmc, sample, p_hat, &fit.a_hat)?;
    Ok((est, fit))
}

/// The naive (MCAR, unweighted) counterpart of a sample: constant
/// `π = n/N̂` and per-item constant response probability.
pub fn naive_completion_inputs(sample: &SampleData, p_clip: f64) -> (SampleData, DMatrix<f64>) {
    let n = sample.n_rows();
    let mut naive = sample.clone();
    naive.pi = DVector::from_element(n, n as f64 / sample.n_hat);
    let rates: Vec<f64> = (0..sample.n_items())
        .map(|j| sample.response_rate(j).clamp(p_clip, 1.0 - p_clip / 2.0))
        .collect();
    let p = DMatrix::from_fn(n, sample.n_items(), |_, j| rates[j]);
    (naive, p)
}

/// DR estimate whose outcome model is a completion fitted under MCAR with no
/// design weighting; the augmentation still uses the logistic `P̂`.
pub fn dr_naive_completion<R: Rng + ?Sized>(
    sample: &SampleData,
    p_hat: &DMatrix<f64>,
    p_clip: f64,
    opts: &CompletionOptions,
    rng: &mut R,
) -> Result<(EstimateVector, CompletionFit)> {
    let (naive, p_naive) = naive_completion_inputs(sample, p_clip);
    let fit = fit_completion(&naive, &p_naive, opts, rng)?;
    let est = dr_vector(Method::Drni, sample, p_hat, &fit.a_hat)?;
    Ok((est, fit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MiOptions {
    pub n_imputations: usize,
    pub max_items: usize,
    pub sweeps: usize,
    /// Bayesian-bootstrap weights and residual noise draws; off gives a
    /// deterministic regression imputation.
    pub stochastic: bool,
}

impl Default for MiOptions {
    fn default() -> Self {
        MiOptions { n_imputations: 5, max_items: 20, sweeps: 10, stochastic: true }
    }
}

/// Completed first-`max_items` block of one chained-equations chain.
pub fn mi_chain<R: Rng + ?Sized>(sample: &SampleData, opts: &MiOptions, rng: &mut R) -> DMatrix<f64> {
    let n = sample.n_rows();
    let d = sample.n_covariates();
    let m = opts.max_items.min(sample.n_items());
    let mut y = DMatrix::zeros(n, m);
    for j in 0..m {
        let obs: Vec<f64> = (0..n).filter(|&i| sample.r[(i, j)]).map(|i| sample.y[(i, j)]).collect();
        let fill = if obs.is_empty() { 0.0 } else { obs.iter().sum::<f64>() / obs.len() as f64 };
        for i in 0..n {
            y[(i, j)] = if sample.r[(i, j)] { sample.y[(i, j)] } else { fill };
        }
    }
    let p = 1 + d + m.saturating_sub(1);
    for _ in 0..opts.sweeps {
        for j in 0..m {
            let observed: Vec<usize> = (0..n).filter(|&i| sample.r[(i, j)]).collect();
            if observed.len() == n || observed.is_empty() {
                continue;
            }
            let design = DMatrix::from_fn(n, p, |i, c| {
                if c == 0 {
                    1.0
                } else if c <= d {
                    sample.x[(i, c - 1)]
                } else {
                    let k = c - 1 - d;
                    y[(i, if k >= j { k + 1 } else { k })]
                }
            });
            let target: Vec<f64> = (0..n).map(|i| y[(i, j)]).collect();
            let mut w = vec![0.0; n];
            for &i in &observed {
                w[i] = if opts.stochastic { Exp1.sample(rng) } else { 1.0 };
            }
            let fit = weighted_least_squares(&design, &target, &w);
            let pred = &design * &fit.coef;
            let sigma = if opts.stochastic {
                let wsum: f64 = observed.iter().map(|&i| w[i]).sum();
                let rss: f64 = observed.iter().map(|&i| w[i] * (target[i] - pred[i]).powi(2)).sum();
                let dof = (observed.len() as f64 - p as f64).max(1.0);
                (rss / wsum * observed.len() as f64 / dof).sqrt()
            } else {
                0.0
            };
            for i in 0..n {
                if !sample.r[(i, j)] {
                    let noise: f64 = if opts.stochastic { StandardNormal.sample(rng) } else { 0.0 };
                    y[(i, j)] = pred[i] + sigma * noise;
                }
            }
        }
    }
    y
}

/// Chained-equations multiple imputation on the first `max_items` items,
/// pooled by averaging the HT estimates over chains. Remaining items are
/// not estimated.
pub fn mi_chained<R: Rng + ?Sized>(sample: &SampleData, opts: &MiOptions, exec: Execution, rng: &mut R) -> EstimateVector {
    let l = sample.n_items();
    let m = opts.max_items.min(l);
    let chains = opts.n_imputations.max(1);
    let seeds: Vec<u64> = (0..chains).map(|_| rng.random()).collect();
    let per_chain = exec.map(chains, |c| {
        let mut chain_rng = rng::stream(seeds[c], &[]);
        let y = mi_chain(sample, opts, &mut chain_rng);
        ht_means(&y, &sample.pi, sample.n_hat)
    });
    let empty = empty_columns(sample);
    let mut theta_hat = vec![f64::NAN; l];
    let mut unreliable = vec![true; l];
    for j in 0..m {
        theta_hat[j] = per_chain.iter().map(|t| t[j]).sum::<f64>() / chains as f64;
        unreliable[j] = empty[j];
    }
    EstimateVector { method: Method::Mi, theta_hat, unreliable }
}

#[derive(Debug, Clone)]
pub struct EstimatorOptions {
    pub completion: CompletionOptions,
    pub mi: MiOptions,
    pub ipw_paper_literal: bool,
    pub p_clip: f64,
    pub exec: Execution,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            completion: CompletionOptions::default(),
            mi: MiOptions::default(),
            ipw_paper_literal: false,
            p_clip: 0.01,
            exec: Execution::Parallel,
        }
    }
}

/// Inputs shared by every estimator.
pub struct EstimationInput<'a> {
    pub sample: &'a SampleData,
    /// Complete outcomes, needed only by `Full` when the sample has gaps.
    pub y_full: Option<&'a DMatrix<f64>>,
    pub p_hat: &'a DMatrix<f64>,
}

/// Uniform entry point over the method enum.
pub fn estimate<R: Rng + ?Sized>(
    method: Method,
    input: &EstimationInput<'_>,
    opts: &EstimatorOptions,
    rng: &mut R,
) -> Result<EstimateVector> {
    let s = input.sample;
    match method {
        Method::Full => match input.y_full {
            Some(y) => ht_estimator(s, y),
            None if s.r.iter().all(|&b| b) => ht_estimator(s, &s.y),
            None => Err(Error::Invalid("Full requires completely observed outcomes".into())),
        },
        Method::Hdi => Ok(hot_deck_impute(s, opts.exec).1),
        Method::Mi => Ok(mi_chained(s, &opts.mi, opts.exec, rng)),
        Method::Ipm => ipw_estimator(s, input.p_hat, opts.ipw_paper_literal),
        Method::Drlr => dr_linear(s, input.p_hat, opts.exec),
        Method::Drni => Ok(dr_naive_completion(s, input.p_hat, opts.p_clip, &opts.completion, rng)?.0),
        Method::Drmc => Ok(dr_matrix_completion(s, input.p_hat, &opts.completion, rng)?.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn sample(n: usize, l: usize, seed: u64) -> SampleData {
        let mut rng = stream(seed, &[]);
        let x = DMatrix::from_fn(n, 2, |_, _| StandardNormal.sample(&mut rng));
        let y = DMatrix::from_fn(n, l, |_, _| StandardNormal.sample(&mut rng));
        let pi = DVector::from_fn(n, |_, _| 0.2 + 0.6 * rng.random::<f64>());
        SampleData::complete(x, y, pi, 4.0 * n as f64)
    }

    fn random_mask(s: &SampleData, rate: f64, seed: u64) -> SampleData {
        let mut rng = stream(seed, &[]);
        let r = DMatrix::from_fn(s.n_rows(), s.n_items(), |_, _| rng.random::<f64>() < rate);
        s.with_mask(r)
    }

    #[test]
    fn method_names_parse() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("drmc".parse::<Method>().unwrap(), Method::Drmc);
        let err = "XYZ".parse::<Method>().unwrap_err().to_string();
        assert!(err.contains("DRMC") && err.contains("HDI"));
    }

    #[test]
    fn ht_srs_is_sample_mean() {
        let mut s = sample(10, 2, 1);
        s.pi = DVector::from_element(10, 0.1);
        s.n_hat = 100.0;
        let est = ht_estimator(&s, &s.y).unwrap();
        for j in 0..2 {
            assert!((est.theta_hat[j] - s.y.column(j).mean()).abs() < 1e-12);
        }
    }

    #[test]
    fn ht_poisson_toy() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let y = DMatrix::from_column_slice(2, 1, &[2.0, 4.0]);
        let s = SampleData::complete(x, y.clone(), DVector::from_element(2, 0.5), 4.0);
        assert_eq!(ht_estimator(&s, &y).unwrap().theta_hat, vec![3.0]);
    }

    #[test]
    fn dr_toy_matches_hand_arithmetic() {
        let x = DMatrix::from_element(3, 1, 1.0);
        let y = DMatrix::from_column_slice(3, 1, &[2.0, f64::NAN, 4.0]);
        let s = SampleData::from_nan_masked(x, y, DVector::from_element(3, 0.5), 6.0);
        let p = DMatrix::from_column_slice(3, 1, &[0.8, 0.5, 0.8]);
        let a = DMatrix::from_element(3, 1, 1.0);
        let theta = dr_estimator(&s, &p, &a).unwrap()[0];
        // Brute-force: expand the sum term by term.
        let terms = [2.0 * ((2.0 - 1.0) / 0.8 + 1.0), 2.0 * 1.0, 2.0 * ((4.0 - 1.0) / 0.8 + 1.0)];
        let expected = terms.iter().sum::<f64>() / 6.0;
        assert!((theta - expected).abs() < 1e-14);
        assert!((theta - 16.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn dr_full_response_unit_p_is_ht() {
        let s = sample(15, 3, 2);
        let ones = DMatrix::from_element(15, 3, 1.0);
        let a = DMatrix::from_fn(15, 3, |i, j| (i * j) as f64 - 4.0);
        let dr = dr_estimator(&s, &ones, &a).unwrap();
        let ht = ht_estimator(&s, &s.y).unwrap().theta_hat;
        for j in 0..3 {
            assert!((dr[j] - ht[j]).abs() <= 1e-12 * ht[j].abs().max(1.0));
        }
    }

    #[test]
    fn ipw_cases() {
        let s = sample(12, 2, 3);
        let ones = DMatrix::from_element(12, 2, 1.0);
        let ipw = ipw_estimator(&s, &ones, false).unwrap();
        let ht = ht_estimator(&s, &s.y).unwrap().theta_hat;
        for j in 0..2 {
            assert!((ipw.theta_hat[j] - ht[j]).abs() <= 1e-12 * ht[j].abs().max(1.0));
        }
        let mut r = s.r.clone();
        r.column_mut(1).fill(false);
        let masked = s.with_mask(r);
        let ipw = ipw_estimator(&masked, &ones, false).unwrap();
        assert_eq!(ipw.theta_hat[1], 0.0);
        assert!(ipw.unreliable[1] && !ipw.unreliable[0]);
        let literal = ipw_estimator(&s, &ones, true).unwrap();
        assert!((literal.theta_hat[0] - s.y.column(0).sum() / s.n_hat).abs() < 1e-12);
    }

    #[test]
    fn hot_deck_toy_donors() {
        // x (already standardized up to affine change): 0, 1, 3, 10
        let x = DMatrix::from_column_slice(4, 1, &[0.0, 1.0, 3.0, 10.0]);
        let y = DMatrix::from_column_slice(4, 1, &[5.0, f64::NAN, 7.0, f64::NAN]);
        let s = SampleData::from_nan_masked(x.clone(), y, DVector::from_element(4, 0.5), 8.0);
        let donors = hot_deck_donors(&s, Execution::Sequential);
        // Brute force over donors {0, 2} with raw distances.
        let brute = |i: usize| {
            [0usize, 2].into_iter().min_by(|&a, &b| {
                (x[(i, 0)] - x[(a, 0)]).abs().partial_cmp(&(x[(i, 0)] - x[(b, 0)]).abs()).unwrap().then(a.cmp(&b))
            })
        };
        assert_eq!(donors[(1, 0)], brute(1));
        assert_eq!(donors[(3, 0)], brute(3));
        assert_eq!(donors[(1, 0)], Some(0));
        assert_eq!(donors[(3, 0)], Some(2));
        let (imp, est) = hot_deck_impute(&s, Execution::Sequential);
        assert_eq!(imp.column(0).as_slice(), &[5.0, 5.0, 7.0, 7.0]);
        assert_eq!(est.theta_hat[0], 24.0 / 0.5 / 8.0);
    }

    #[test]
    fn hot_deck_ties_and_single_donor() {
        let x = DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 2.0]);
        let y = DMatrix::from_column_slice(3, 1, &[4.0, f64::NAN, 6.0]);
        let s = SampleData::from_nan_masked(x.clone(), y, DVector::from_element(3, 1.0), 3.0);
        assert_eq!(hot_deck_donors(&s, Execution::Sequential)[(1, 0)], Some(0));
        let y = DMatrix::from_column_slice(3, 1, &[f64::NAN, f64::NAN, 6.0]);
        let s = SampleData::from_nan_masked(x, y, DVector::from_element(3, 1.0), 3.0);
        let (imp, _) = hot_deck_impute(&s, Execution::Sequential);
        assert!(imp.iter().all(|&v| v == 6.0));
    }

    #[test]
    fn dr_linear_exact_and_constant() {
        let mut s = sample(20, 2, 4);
        for i in 0..20 {
            s.y[(i, 0)] = 1.5 - 2.0 * s.x[(i, 0)] + 0.5 * s.x[(i, 1)];
            s.y[(i, 1)] = 3.0;
        }
        let ones = DMatrix::from_element(20, 2, 1.0);
        let est = dr_linear(&s, &ones, Execution::Sequential).unwrap();
        let ht = ht_estimator(&s, &s.y).unwrap().theta_hat;
        assert!((est.theta_hat[0] - ht[0]).abs() < 1e-10);
        let masked = random_mask(&s, 0.6, 5);
        let p = DMatrix::from_element(20, 2, 0.6);
        let est = dr_linear(&masked, &p, Execution::Sequential).unwrap();
        let inv_pi: f64 = s.pi.iter().map(|p| 1.0 / p).sum();
        assert!((est.theta_hat[1] - 3.0 * inv_pi / s.n_hat).abs() < 1e-10);
    }

    #[test]
    fn dr_linear_coefficients_match_normal_equations() {
        let s = random_mask(&sample(25, 1, 6), 0.7, 7);
        let mut rng = stream(8, &[]);
        let p = DMatrix::from_fn(25, 1, |_, _| 0.3 + 0.6 * rng.random::<f64>());
        let (_, coefs, _) = weighted_linear_predictions(&s, &p, Execution::Sequential);
        // Oracle: solve the weighted normal equations via an explicit 3x3 inverse.
        let mut g = DMatrix::<f64>::zeros(3, 3);
        let mut b = DVector::<f64>::zeros(3);
        for i in 0..25 {
            if !s.r[(i, 0)] {
                continue;
            }
            let w = 1.0 / (s.pi[i] * p[(i, 0)]);
            let z = DVector::from_vec(vec![1.0, s.x[(i, 0)], s.x[(i, 1)]]);
            g += &z * z.transpose() * w;
            b += &z * (w * s.y[(i, 0)]);
        }
        let oracle = g.try_inverse().unwrap() * b;
        assert!((&coefs[0] - oracle).amax() < 1e-8);
    }

    #[test]
    fn mi_covers_only_first_items() {
        let s = random_mask(&sample(40, 5, 9), 0.8, 10);
        let opts = MiOptions { max_items: 3, n_imputations: 2, ..MiOptions::default() };
        let est = mi_chained(&s, &opts, Execution::Sequential, &mut stream(11, &[]));
        assert!(est.theta_hat[..3].iter().all(|t| t.is_finite()));
        assert!(est.theta_hat[3..].iter().all(|t| t.is_nan()));
        assert_eq!(est.unreliable, vec![false, false, false, true, true]);
    }

    #[test]
    fn mi_without_missingness_is_ht() {
        let s = sample(30, 4, 12);
        let est = mi_chained(&s, &MiOptions::default(), Execution::Parallel, &mut stream(13, &[]));
        let ht = ht_estimator(&s, &s.y).unwrap().theta_hat;
        for j in 0..4 {
            assert!((est.theta_hat[j] - ht[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_mi_recovers_linear_truth() {
        let mut s = sample(60, 3, 14);
        for i in 0..60 {
            let (a, b) = (s.x[(i, 0)], s.x[(i, 1)]);
            s.y[(i, 0)] = 1.0 + a - b;
            s.y[(i, 1)] = -2.0 + 0.5 * a;
            s.y[(i, 2)] = 0.3 * b + 4.0;
        }
        let truth = s.y.clone();
        let masked = random_mask(&s, 0.7, 15);
        let opts = MiOptions { n_imputations: 1, max_items: 3, sweeps: 10, stochastic: false };
        let completed = mi_chain(&masked, &opts, &mut stream(16, &[]));
        assert!((&completed - &truth).amax() < 1e-6);
        let ones = DMatrix::from_element(60, 3, 1.0);
        let (lin, _, _) = weighted_linear_predictions(&masked, &ones, Execution::Sequential);
        for i in 0..60 {
            for j in 0..3 {
                if !masked.r[(i, j)] {
                    assert!((completed[(i, j)] - lin[(i, j)]).abs() < 1e-6);
                }
            }
        }
    }
}
