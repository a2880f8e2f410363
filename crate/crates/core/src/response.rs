//! Per-item logistic response models fitted by IRLS.
//!
//! The fit is the plain (unweighted) Bernoulli maximum likelihood estimate.
//! Degenerate items (all observed, all missing, or a diverging Newton path)
//! fall back to the intercept-only model. Fitted probabilities are clipped to
//! `[p_clip, 1 − p_clip/2]` so their inverses stay bounded.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::data::SampleData;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{logistic, logit, with_intercept};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResponseOptions {
    pub p_clip: f64,
    pub max_iter: usize,
    /// Convergence threshold on the max-abs score.
    pub score_tol: f64,
    /// `‖γ‖∞` beyond which the Newton path is treated as diverging.
    pub divergence_bound: f64,
}

impl Default for ResponseOptions {
    fn default() -> Self {
        ResponseOptions { p_clip: 0.01, max_iter: 100, score_tol: 1e-8, divergence_bound: 30.0 }
    }
}

#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// `(intercept, slopes…)`, length `d + 1`.
    pub gamma: DVector<f64>,
    pub converged: bool,
    /// Intercept-only fallback was used.
    pub fallback: bool,
    pub iterations: usize,
    /// Log-likelihood after each accepted iterate, starting from the initial point.
    pub loglik_trace: Vec<f64>,
}

fn loglik(eta: &DVector<f64>, r: &[bool]) -> f64 {
    eta.iter()
        .zip(r)
        .map(|(&t, &ri)| {
            // log p = -log(1 + e^{-t}), log(1-p) = -log(1 + e^{t})
            if ri {
                -softplus(-t)
            } else {
                -softplus(t)
            }
        })
        .sum()
}

fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn intercept_only(d: usize, rate: f64, p_clip: f64, iterations: usize) -> LogisticFit {
    let p = rate.clamp(p_clip, 1.0 - p_clip / 2.0);
    let mut gamma = DVector::zeros(d + 1);
    gamma[0] = logit(p);
    LogisticFit { gamma, converged: false, fallback: true, iterations, loglik_trace: Vec::new() }
}

/// Maximum likelihood logistic fit of `r` on `(1, x)`.
pub fn fit_logistic_column(x: &DMatrix<f64>, r: &[bool], opts: &ResponseOptions) -> Result<LogisticFit> {
    let (n, d) = x.shape();
    if r.len() != n {
        return Err(Error::Dimension(format!("{} responses for {n} rows", r.len())));
    }
    if n <= d + 1 {
        return Err(Error::Invalid(format!("logistic fit needs n > d + 1 (n = {n}, d = {d})")));
    }
    let observed = r.iter().filter(|&&b| b).count();
    if observed == 0 || observed == n {
        return Ok(intercept_only(d, observed as f64 / n as f64, opts.p_clip, 0));
    }
    let z = with_intercept(x);
    let target = DVector::from_iterator(n, r.iter().map(|&b| if b { 1.0 } else { 0.0 }));
    let mut gamma = DVector::zeros(d + 1);
    gamma[0] = logit(observed as f64 / n as f64);
    let mut eta = &z * &gamma;
    let mut ll = loglik(&eta, r);
    let mut trace = vec![ll];

    for iter in 0..opts.max_iter {
        let p = eta.map(logistic);
        let score = z.tr_mul(&(&target - &p));
        if score.amax() <= opts.score_tol {
            return Ok(LogisticFit { gamma, converged: true, fallback: false, iterations: iter, loglik_trace: trace });
        }
        let w = p.map(|v| v * (1.0 - v));
        let mut zw = z.clone();
        for (i, mut row) in zw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        let info = z.tr_mul(&zw);
        let step = match Cholesky::new(info) {
            Some(ch) => ch.solve(&score),
            None => break,
        };
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &gamma + &step * t;
            let cand_eta = &z * &cand;
            let cand_ll = loglik(&cand_eta, r);
            // Near the optimum the log-likelihood is flat to rounding.
            if cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                gamma = cand;
                eta = cand_eta;
                ll = cand_ll;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if gamma.amax() > opts.divergence_bound {
            return Ok(intercept_only(d, observed as f64 / n as f64, opts.p_clip, iter + 1));
        }
        if !accepted {
            break;
        }
        trace.push(ll);
    }
    let p = eta.map(logistic);
    let converged = z.tr_mul(&(&target - &p)).amax() <= opts.score_tol;
    let iterations = trace.len() - 1;
    Ok(LogisticFit { gamma, converged, fallback: false, iterations, loglik_trace: trace })
}

#[derive(Debug, Clone)]
pub struct ResponseModelFit {
    /// `(d+1)×L` coefficients, one column per item.
    pub gamma_hat: DMatrix<f64>,
    /// Fitted response probabilities after clipping, n×L.
    pub p_hat: DMatrix<f64>,
    pub clip_count: usize,
    pub converged: Vec<bool>,
    pub fallback: Vec<bool>,
}

/// Fit one logistic model per item and assemble the clipped `P̂`.
pub fn fit_response_matrix(
    sample: &SampleData,
    opts: &ResponseOptions,
    exec: Execution,
) -> Result<ResponseModelFit> {
    sample.ensure_valid()?;
    let (n, l) = sample.y.shape();
    let d = sample.n_covariates();
    let fits = exec.map(l, |j| {
        let r: Vec<bool> = sample.r.column(j).iter().copied().collect();
        fit_logistic_column(&sample.x, &r, opts)
    });
    let fits = fits.into_iter().collect::<Result<Vec<_>>>()?;
    let mut gamma_hat = DMatrix::zeros(d + 1, l);
    for (j, f) in fits.iter().enumerate() {
        gamma_hat.set_column(j, &f.gamma);
    }
    let raw = with_intercept(&sample.x) * &gamma_hat;
    let lo = opts.p_clip;
    let hi = 1.0 - opts.p_clip / 2.0;
    let mut clip_count = 0;
    let p_hat = DMatrix::from_fn(n, l, |i, j| {
        let p = logistic(raw[(i, j)]);
        if p < lo || p > hi {
            clip_count += 1;
        }
        p.clamp(lo, hi)
    });
    Ok(ResponseModelFit {
        gamma_hat,
        p_hat,
        clip_count,
        converged: fits.iter().map(|f| f.converged).collect(),
        fallback: fits.iter().map(|f| f.fallback).collect(),
    })
}
