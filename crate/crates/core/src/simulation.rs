//! Monte Carlo study: one finite population, repeated sampling and
//! nonresponse, every estimator per replicate, and Bias/SE/MSE summaries.
//!
//! Replicates run through [`Execution`] and each one draws from its own
//! seeded stream, so a summary is bit-identical for any thread count.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::completion::{CompletionOptions, GridSpec};
use crate::csv_io::format_value;
use crate::data::PopulationData;
use crate::error::{Error, Result};
use crate::estimators::{estimate, EstimationInput, EstimatorOptions, Method, MiOptions};
use crate::exec::Execution;
use crate::response::{fit_response_matrix, ResponseOptions};
use crate::rng;
use crate::sampling::{
    apply_missingness, calibrate_missingness, compute_size_measure, draw_sample, DesignKind, DesignSpec, SizeMode,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(alias = "N")]
    pub population_size: usize,
    #[serde(alias = "L")]
    pub items: usize,
    #[serde(alias = "d")]
    pub covariates: usize,
    #[serde(alias = "k")]
    pub rank: usize,
    #[serde(default = "default_snr")]
    pub snr: f64,
    #[serde(default = "default_designs")]
    pub designs: Vec<DesignKind>,
    /// Informative (`true`) and/or noninformative (`false`) size measures;
    /// a bare boolean is accepted too.
    #[serde(default = "default_informative", deserialize_with = "one_or_many")]
    pub informative: Vec<bool>,
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_rate")]
    pub response_rate_target: f64,
    #[serde(default = "default_slope_sd")]
    pub missingness_slope_sd: f64,
    #[serde(default = "default_p_clip")]
    pub p_clip: f64,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default)]
    pub ipw_paper_literal: bool,
    #[serde(default = "default_table1_items")]
    pub table1_items: usize,
    /// Largest tolerated fraction of failed replicates.
    #[serde(default = "default_max_failure_rate")]
    pub max_failure_rate: f64,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub mi: MiOptions,
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Vec<bool>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(bool),
        Many(Vec<bool>),
    }
    Ok(match OneOrMany::deserialize(de)? {
        OneOrMany::One(b) => vec![b],
        OneOrMany::Many(v) => v,
    })
}

fn default_snr() -> f64 {
    2.0
}
fn default_designs() -> Vec<DesignKind> {
    vec![DesignKind::Poisson, DesignKind::Srs, DesignKind::Ppswr]
}
fn default_informative() -> Vec<bool> {
    vec![false, true]
}
fn default_methods() -> Vec<Method> {
    vec![Method::Hdi, Method::Ipm, Method::Drlr, Method::Drni, Method::Drmc, Method::Full]
}
fn default_rate() -> f64 {
    0.6
}
fn default_slope_sd() -> f64 {
    0.3
}
fn default_p_clip() -> f64 {
    0.01
}
fn default_folds() -> usize {
    5
}
fn default_table1_items() -> usize {
    5
}
fn default_max_failure_rate() -> f64 {
    0.01
}

impl SimConfig {
    /// Small configuration used for smoke runs and tests.
    pub fn smoke() -> Self {
        SimConfig {
            population_size: 500,
            items: 20,
            covariates: 3,
            rank: 2,
            snr: 2.0,
            designs: vec![DesignKind::Srs],
            informative: vec![true],
            sample_sizes: vec![100],
            replicates: 5,
            methods: default_methods(),
            seed: 1,
            response_rate_target: 0.6,
            missingness_slope_sd: 0.3,
            p_clip: 0.01,
            folds: 5,
            ipw_paper_literal: false,
            table1_items: 5,
            max_failure_rate: 0.01,
            grid: GridSpec::default(),
            mi: MiOptions::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Invalid(msg));
        if self.covariates == 0 || self.covariates >= self.population_size {
            return bad(format!("need 0 < d < N (d = {}, N = {})", self.covariates, self.population_size));
        }
        if self.rank >= self.population_size.min(self.items) {
            return bad(format!("need k < min(N, L) (k = {})", self.rank));
        }
        if self.replicates == 0 {
            return bad("replicates must be at least 1".into());
        }
        if !(self.snr > 0.0) {
            return bad(format!("snr must be positive (got {})", self.snr));
        }
        if !(self.response_rate_target > 0.0 && self.response_rate_target < 1.0) {
            return bad(format!("response_rate_target must be in (0,1) (got {})", self.response_rate_target));
        }
        if self.informative.contains(&true) && self.items < 7 {
            return Err(Error::InsufficientItems(self.items));
        }
        if let Some(&n) = self.sample_sizes.iter().find(|&&n| n == 0 || n > self.population_size) {
            return bad(format!("sample size {n} out of range"));
        }
        Ok(())
    }

    fn estimator_options(&self, exec: Execution) -> EstimatorOptions {
        EstimatorOptions {
            completion: CompletionOptions { grid: self.grid.clone(), folds: self.folds, exec, ..Default::default() },
            mi: self.mi.clone(),
            ipw_paper_literal: self.ipw_paper_literal,
            p_clip: self.p_clip,
            exec,
        }
    }
}

/// Draw a population from the column-space-decomposition model.
pub fn generate_population<R: Rng + ?Sized>(cfg: &SimConfig, rng: &mut R) -> Result<PopulationData> {
    let (n, l, d, k) = (cfg.population_size, cfg.items, cfg.covariates, cfg.rank);
    let unit = Normal::new(0.5, 1.0).expect("valid normal");
    let wide = Normal::new(1.0, 3.0).expect("valid normal");
    let x = DMatrix::from_fn(n, d, |_, _| unit.sample(rng));
    let beta_star = DMatrix::from_fn(d, l, |_, _| unit.sample(rng));
    let b_left = DMatrix::from_fn(n, k, |_, _| wide.sample(rng));
    let b_right = DMatrix::from_fn(k, l, |_, _| wide.sample(rng));
    let chol = Cholesky::new(x.tr_mul(&x)).ok_or(Error::Collinear)?;
    let mut b_star = &b_left * &b_right;
    // Two passes keep Xᵀ B* at rounding level.
    for _ in 0..2 {
        let coef = chol.solve(&x.tr_mul(&b_star));
        b_star -= &x * coef;
    }
    let a = &x * &beta_star + &b_star;
    let count = (n * l) as f64;
    let mean_a = a.sum() / count;
    let sd_a = (a.iter().map(|v| (v - mean_a).powi(2)).sum::<f64>() / count).sqrt();
    let sigma_e = if cfg.snr.is_finite() { sd_a / cfg.snr } else { 0.0 };
    let y = if sigma_e > 0.0 {
        let noise = Normal::new(0.0, sigma_e).map_err(|e| Error::Invalid(e.to_string()))?;
        a.map(|v| v + noise.sample(rng))
    } else {
        a.clone()
    };
    let theta = DVector::from_fn(l, |j, _| y.column(j).mean());
    Ok(PopulationData { x, y, a, b_star, beta_star, theta, k })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StudyKey {
    pub informative: bool,
    pub design: DesignKind,
    pub n: usize,
}

impl StudyKey {
    pub fn informativeness_label(&self) -> &'static str {
        if self.informative {
            "IF"
        } else {
            "NIF"
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodStats {
    pub method: Method,
    pub bias: Vec<f64>,
    pub se: Vec<f64>,
    pub mse: Vec<f64>,
    /// Mean of the per-item MSEs (over items with an estimate).
    pub mean_mse: f64,
    /// Standard deviation of the per-item MSEs.
    pub se_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudySummary {
    pub key: StudyKey,
    pub replicates_used: usize,
    pub failures: usize,
    pub theta: Vec<f64>,
    pub methods: Vec<MethodStats>,
}

impl StudySummary {
    pub fn method(&self, m: Method) -> Option<&MethodStats> {
        self.methods.iter().find(|s| s.method == m)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub studies: Vec<StudySummary>,
}

/// Per-item Bias, SE and MSE over replicates (`estimates[m][j]`); replicates
/// with a non-finite estimate for an item are skipped for that item.
pub fn column_stats(estimates: &[Vec<f64>], theta: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let l = theta.len();
    let mut bias = vec![f64::NAN; l];
    let mut se = vec![f64::NAN; l];
    let mut mse = vec![f64::NAN; l];
    for j in 0..l {
        let vals: Vec<f64> = estimates.iter().map(|e| e[j]).filter(|v| v.is_finite()).collect();
        if vals.is_empty() {
            continue;
        }
        let m = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / m;
        bias[j] = vals.iter().map(|v| v - theta[j]).sum::<f64>() / m;
        se[j] = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
        mse[j] = vals.iter().map(|v| (v - theta[j]).powi(2)).sum::<f64>() / m;
    }
    (bias, se, mse)
}

fn mean_and_sd(values: &[f64]) -> (f64, f64) {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let m = finite.len() as f64;
    let mean = finite.iter().sum::<f64>() / m;
    let sd = (finite.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / m).sqrt();
    (mean, sd)
}

type ReplicateOutput = Vec<Vec<f64>>;

struct Study<'a> {
    cfg: &'a SimConfig,
    pop: &'a PopulationData,
    gamma: &'a DMatrix<f64>,
    spec: DesignSpec,
    index: u64,
    opts: EstimatorOptions,
}

impl Study<'_> {
    fn replicate(&self, m: usize) -> Result<ReplicateOutput> {
        let seed = self.cfg.seed;
        let mut draw_rng = rng::stream(seed, &[3, self.index, m as u64]);
        let full = draw_sample(self.pop, &self.spec, &mut draw_rng)?;
        let masked = apply_missingness(&full, self.gamma, &mut draw_rng)?;
        let resp_opts = ResponseOptions { p_clip: self.cfg.p_clip, ..Default::default() };
        let p_hat = if self.cfg.methods.iter().any(|m| m.needs_response_model()) {
            fit_response_matrix(&masked.sample, &resp_opts, self.opts.exec)?.p_hat
        } else {
            DMatrix::from_element(masked.sample.n_rows(), masked.sample.n_items(), 1.0)
        };
        let input = EstimationInput { sample: &masked.sample, y_full: Some(&full.y), p_hat: &p_hat };
        self.cfg
            .methods
            .iter()
            .map(|&method| {
                let mut method_rng = rng::stream(seed, &[4, self.index, m as u64, method as u64]);
                let est = estimate(method, &input, &self.opts, &mut method_rng)?;
                Ok(est
                    .theta_hat
                    .iter()
                    .zip(&est.unreliable)
                    .map(|(&t, &bad)| if bad { f64::NAN } else { t })
                    .collect())
            })
            .collect()
    }
}

/// Run every (informativeness × design × n) study in `cfg`.
pub fn run_monte_carlo(cfg: &SimConfig, exec: Execution) -> Result<McSummary> {
    cfg.validate()?;
    let mut studies = Vec::new();
    let mut index = 0u64;
    for &informative in &cfg.informative {
        let mode = if informative { SizeMode::Informative } else { SizeMode::Noninformative };
        for &design in &cfg.designs {
            for &n in &cfg.sample_sizes {
                let key = StudyKey { informative, design, n };
                // A fresh population per study, held fixed across its replicates.
                let pop = generate_population(cfg, &mut rng::stream(cfg.seed, &[0, index]))?;
                let gamma = calibrate_missingness(
                    &pop.x,
                    cfg.items,
                    cfg.response_rate_target,
                    cfg.missingness_slope_sd,
                    &mut rng::stream(cfg.seed, &[1, index]),
                )?;
                let size_measure = compute_size_measure(&pop, mode, &mut rng::stream(cfg.seed, &[2, index]))?;
                let theta: Vec<f64> = pop.theta.iter().copied().collect();
                let study = Study {
                    cfg,
                    pop: &pop,
                    gamma: &gamma,
                    spec: DesignSpec { kind: design, n_target: n, size_measure: size_measure.clone() },
                    index,
                    opts: cfg.estimator_options(exec),
                };
                index += 1;
                let outputs = exec.map(cfg.replicates, |m| study.replicate(m));
                let mut ok = Vec::with_capacity(outputs.len());
                let mut failures = 0;
                for (m, out) in outputs.into_iter().enumerate() {
                    match out {
                        Ok(v) => ok.push(v),
                        Err(e) => {
                            log::warn!("study {key:?} replicate {m} failed: {e}");
                            failures += 1;
                        }
                    }
                }
                if failures as f64 > cfg.max_failure_rate * cfg.replicates as f64 {
                    return Err(Error::TooManyFailures { failed: failures, total: cfg.replicates });
                }
                let methods = cfg
                    .methods
                    .iter()
                    .enumerate()
                    .map(|(mi, &method)| {
                        let per_rep: Vec<Vec<f64>> = ok.iter().map(|r| r[mi].clone()).collect();
                        let (bias, se, mse) = column_stats(&per_rep, &theta);
                        let (mean_mse, se_mse) = mean_and_sd(&mse);
                        MethodStats { method, bias, se, mse, mean_mse, se_mse }
                    })
                    .collect();
                studies.push(StudySummary {
                    key,
                    replicates_used: ok.len(),
                    failures,
                    theta,
                    methods,
                });
            }
        }
    }
    Ok(McSummary { studies })
}

/// Tidy per-item results: `design,informative,n,method,item,bias,se,mse`.
pub fn results_csv(summary: &McSummary) -> String {
    let mut out = String::from("design,informative,n,method,item,bias,se,mse\n");
    for st in &summary.studies {
        for ms in &st.methods {
            for j in 0..ms.bias.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{},{},{},{}",
                    st.key.design.label(),
                    st.key.informative,
                    st.key.n,
                    ms.method,
                    j + 1,
                    format_value(ms.bias[j]),
                    format_value(ms.se[j]),
                    format_value(ms.mse[j])
                );
            }
        }
    }
    out
}

fn roman(k: usize) -> String {
    const NUMERALS: [(usize, &str); 13] = [
        (1000, "M"),
        (900, "CM"),
        (500, "D"),
        (400, "CD"),
        (100, "C"),
        (90, "XC"),
        (50, "L"),
        (40, "XL"),
        (10, "X"),
        (9, "IX"),
        (5, "V"),
        (4, "IV"),
        (1, "I"),
    ];
    let mut k = k;
    let mut s = String::new();
    for &(v, sym) in &NUMERALS {
        while k >= v {
            s.push_str(sym);
            k -= v;
        }
    }
    s
}

fn fmt2(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.2}")
    } else {
        "-".to_owned()
    }
}

/// Bias and SE of the first `items` items, one block per study.
pub fn table1_text(summary: &McSummary, items: usize) -> String {
    let mut out = String::new();
    for st in &summary.studies {
        let shown = items.min(st.theta.len());
        let _ = writeln!(
            out,
            "Bias and SE, first {shown} items ({} {} n={}, {} replicates)",
            st.key.informativeness_label(),
            st.key.design.label(),
            st.key.n,
            st.replicates_used
        );
        let _ = write!(out, "{:<8}{:<6}", "Method", "Stat.");
        for j in 0..shown {
            let _ = write!(out, "{:>9}", roman(j + 1));
        }
        out.push('\n');
        for ms in &st.methods {
            for (label, vals) in [("Bias", &ms.bias), ("SE", &ms.se)] {
                let name = if label == "Bias" { ms.method.name() } else { "" };
                let _ = write!(out, "{name:<8}{label:<6}");
                for v in vals.iter().take(shown) {
                    let _ = write!(out, "{:>9}", fmt2(*v));
                }
                out.push('\n');
            }
        }
        out.push('\n');
    }
    out
}

fn table2_methods(summary: &McSummary) -> Vec<Method> {
    summary.studies.first().map(|s| s.methods.iter().map(|m| m.method).collect()).unwrap_or_default()
}

/// Mean and SD of the per-item MSEs for every study and method.
pub fn table2_text(summary: &McSummary) -> String {
    let methods = table2_methods(summary);
    let mut out = String::new();
    let _ = write!(out, "{:<6}{:<8}{:<8}{:<6}", "", "Design", "n", "Stat.");
    for m in &methods {
        let _ = write!(out, "{:>9}", m.name());
    }
    out.push('\n');
    for st in &summary.studies {
        for (label, pick) in [("Mean", 0), ("SE", 1)] {
            let (inf, design, n) = if pick == 0 {
                (st.key.informativeness_label().to_owned(), st.key.design.label().to_owned(), st.key.n.to_string())
            } else {
                (String::new(), String::new(), String::new())
            };
            let _ = write!(out, "{inf:<6}{design:<8}{n:<8}{label:<6}");
            for ms in &st.methods {
                let v = if pick == 0 { ms.mean_mse } else { ms.se_mse };
                let _ = write!(out, "{:>9}", fmt2(v));
            }
            out.push('\n');
        }
    }
    out
}

pub fn table2_csv(summary: &McSummary) -> String {
    let mut out = String::from("informative,design,n,method,mean_mse,se_mse,replicates,failures\n");
    for st in &summary.studies {
        for ms in &st.methods {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                st.key.informative,
                st.key.design.label(),
                st.key.n,
                ms.method,
                format_value(ms.mean_mse),
                format_value(ms.se_mse),
                st.replicates_used,
                st.failures
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::max_abs;

    #[test]
    fn population_invariants() {
        let mut cfg = SimConfig::smoke();
        for seed in 0..5 {
            let pop = generate_population(&cfg, &mut rng::stream(seed, &[])).unwrap();
            let scale = max_abs(&pop.x) * max_abs(&pop.b_star) * cfg.population_size as f64;
            assert!(max_abs(&pop.x.tr_mul(&pop.b_star)) <= 1e-8 * scale);
            let recon = &pop.x * &pop.beta_star + &pop.b_star;
            assert!(max_abs(&(recon - &pop.a)) <= 1e-10 * max_abs(&pop.a));
            for j in 0..cfg.items {
                let m = pop.y.column(j).mean();
                assert!((pop.theta[j] - m).abs() <= 1e-12 * m.abs().max(1.0));
            }
        }
        cfg.snr = f64::INFINITY;
        let pop = generate_population(&cfg, &mut rng::stream(9, &[])).unwrap();
        assert_eq!(pop.y, pop.a);
    }

    #[test]
    fn noise_level_matches_snr() {
        let cfg = SimConfig { population_size: 2000, items: 60, ..SimConfig::smoke() };
        let pop = generate_population(&cfg, &mut rng::stream(10, &[])).unwrap();
        let sd = |m: &DMatrix<f64>| {
            let c = m.len() as f64;
            let mean = m.sum() / c;
            (m.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c).sqrt()
        };
        let ratio = sd(&(&pop.y - &pop.a)) / sd(&pop.a);
        assert!((ratio - 0.5).abs() <= 0.02 * 0.5, "ratio {ratio}");
    }

    #[test]
    fn single_replicate_has_zero_se() {
        let cfg = SimConfig { replicates: 1, methods: vec![Method::Full, Method::Ipm], ..SimConfig::smoke() };
        let summary = run_monte_carlo(&cfg, Execution::Sequential).unwrap();
        for ms in &summary.studies[0].methods {
            assert!(ms.se.iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn empty_methods_give_header_only_tables() {
        let cfg = SimConfig { replicates: 1, methods: vec![], ..SimConfig::smoke() };
        let summary = run_monte_carlo(&cfg, Execution::Sequential).unwrap();
        assert_eq!(results_csv(&summary).lines().count(), 1);
        assert_eq!(table2_csv(&summary).lines().count(), 1);
        let t2 = table2_text(&summary);
        assert!(t2.lines().next().unwrap().contains("Stat."));
    }

    #[test]
    fn one_method_one_design_table2() {
        let cfg = SimConfig { replicates: 2, methods: vec![Method::Full], ..SimConfig::smoke() };
        let summary = run_monte_carlo(&cfg, Execution::Sequential).unwrap();
        assert_eq!(table2_csv(&summary).lines().count(), 2);
        let t1 = table1_text(&summary, 5);
        assert!(t1.contains("Full") && t1.contains("   V"));
    }

    #[test]
    fn column_stats_by_hand() {
        let est = vec![vec![1.0, f64::NAN], vec![3.0, 2.0]];
        let (bias, se, mse) = column_stats(&est, &[1.5, 2.0]);
        assert_eq!(bias, vec![0.5, 0.0]);
        assert_eq!(se, vec![1.0, 0.0]);
        assert_eq!(mse, vec![1.25, 0.0]);
    }

    #[test]
    fn roman_numerals() {
        assert_eq!(roman(4), "IV");
        assert_eq!(roman(19), "XIX");
    }
}
