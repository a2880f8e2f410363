//! Design-weighted, inverse-probability-weighted matrix completion with a
//! covariate column-space decomposition.
//!
//! With `W = D^{-1/2}(R∘P̂†∘Y)` and `Xw = D^{-1/2}X`, the penalized problem
//! separates into a ridge regression on the projection of `W` onto the span
//! of `Xw`, and a nuclear-plus-Frobenius penalized fit of the complement:
//!
//! ```text
//! β̂′ = (XwᵀXw + N̂Lτ₁I)⁻¹ XwᵀW
//! B̂′ = [1 + (1−α)N̂Lτ₂]⁻¹ 𝒯_{αN̂Lτ₂/2}((I − 𝒫) W)
//! Â  = Xβ̂′ + D^{1/2}B̂′
//! ```
//!
//! The projector `𝒫 = Xw(XwᵀXw)⁻¹Xwᵀ` is never formed; everything goes
//! through a Cholesky factor of the d×d gram matrix. For a fixed target the
//! complement is decomposed once and every tuning triple reuses that SVD.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SVD};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

use crate::data::{SampleData, TuningTriple};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::linalg::{eigen_ratio, max_abs};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Projection {
    Onto,
    Complement,
}

/// Weighted covariates and the factorized gram matrix `XᵀD⁻¹X`.
#[derive(Debug, Clone)]
pub struct ProjectionContext {
    pub xw: DMatrix<f64>,
    pub gram: DMatrix<f64>,
    gram_chol: Cholesky<f64, Dyn>,
    pub d_half: DVector<f64>,
    pub d_inv_half: DVector<f64>,
}

impl ProjectionContext {
    pub fn new(x: &DMatrix<f64>, pi: &DVector<f64>) -> Result<Self> {
        if x.nrows() != pi.len() {
            return Err(Error::Dimension(format!("x has {} rows, pi has {}", x.nrows(), pi.len())));
        }
        if x.ncols() == 0 {
            return Err(Error::Invalid("at least one covariate is required".into()));
        }
        if let Some(i) = pi.iter().position(|&p| !(p > 0.0)) {
            return Err(Error::Invalid(format!("pi[{i}] not > 0")));
        }
        let d_half = pi.map(f64::sqrt);
        let d_inv_half = d_half.map(|v| 1.0 / v);
        let xw = scale_rows(x, &d_inv_half);
        let gram = xw.tr_mul(&xw);
        if eigen_ratio(&gram) <= 1e-12 {
            return Err(Error::Collinear);
        }
        let gram_chol = Cholesky::new(gram.clone()).ok_or(Error::Collinear)?;
        Ok(ProjectionContext { xw, gram, gram_chol, d_half, d_inv_half })
    }

    pub fn n_rows(&self) -> usize {
        self.xw.nrows()
    }

    pub fn project(&self, m: &DMatrix<f64>, which: Projection) -> Result<DMatrix<f64>> {
        if m.nrows() != self.n_rows() {
            return Err(Error::Dimension(format!("matrix has {} rows, context has {}", m.nrows(), self.n_rows())));
        }
        let coef = self.gram_chol.solve(&self.xw.tr_mul(m));
        let onto = &self.xw * coef;
        Ok(match which {
            Projection::Onto => onto,
            Projection::Complement => m - onto,
        })
    }

    /// `(XwᵀXw + shift·I)⁻¹ rhs`.
    fn ridge_solve(&self, rhs: &DMatrix<f64>, shift: f64) -> DMatrix<f64> {
        if shift == 0.0 {
            return self.gram_chol.solve(rhs);
        }
        let mut a = self.gram.clone();
        for k in 0..a.nrows() {
            a[(k, k)] += shift;
        }
        Cholesky::new(a).expect("gram plus positive ridge is positive definite").solve(rhs)
    }
}

fn scale_rows(m: &DMatrix<f64>, s: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] * s[i])
}

/// `Z = R∘P̂†∘Y`; unobserved cells contribute exactly zero.
pub fn build_weighted_target(sample: &SampleData, p_hat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if p_hat.shape() != sample.y.shape() {
        return Err(Error::Dimension(format!("P_hat is {:?}, Y is {:?}", p_hat.shape(), sample.y.shape())));
    }
    let (n, l) = sample.y.shape();
    let mut z = DMatrix::zeros(n, l);
    for j in 0..l {
        for i in 0..n {
            if !sample.r[(i, j)] {
                continue;
            }
            let y = sample.y[(i, j)];
            if !y.is_finite() {
                return Err(Error::NonFiniteObserved { row: i, col: j });
            }
            let p = p_hat[(i, j)];
            if !(p > 0.0) {
                return Err(Error::Invalid(format!("P_hat[({i},{j})] = {p} is not positive")));
            }
            z[(i, j)] = y / p;
        }
    }
    Ok(z)
}

/// Singular value soft-thresholding `U diag((σ − c)₊) Vᵀ`.
pub fn soft_threshold_svd(m: &DMatrix<f64>, c: f64) -> DMatrix<f64> {
    assert!(c >= 0.0, "threshold must be nonnegative");
    if m.is_empty() {
        return m.clone();
    }
    let svd = SVD::new(m.clone(), true, true);
    let u = svd.u.expect("left singular vectors requested");
    let v_t = svd.v_t.expect("right singular vectors requested");
    let shrunk = svd.singular_values.map(|s| (s - c).max(0.0));
    reconstruct(&u, &shrunk, &v_t, 1.0)
}

fn reconstruct(u: &DMatrix<f64>, s: &DVector<f64>, v_t: &DMatrix<f64>, factor: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(u.nrows(), v_t.ncols());
    for (k, &sk) in s.iter().enumerate() {
        if sk > 0.0 {
            out.ger(sk * factor, &u.column(k), &v_t.row(k).transpose(), 1.0);
        }
    }
    out
}

/// Everything about a weighted target that does not depend on `(τ₁, τ₂, α)`.
#[derive(Debug, Clone)]
pub struct CompletionPath<'a> {
    ctx: &'a ProjectionContext,
    /// `XwᵀW`, d×L.
    xw_t_w: DMatrix<f64>,
    u: DMatrix<f64>,
    sigma: DVector<f64>,
    v_t: DMatrix<f64>,
    /// `N̂ · L`.
    nl: f64,
}

impl<'a> CompletionPath<'a> {
    pub fn new(ctx: &'a ProjectionContext, z: &DMatrix<f64>, n_hat: f64) -> Result<Self> {
        if z.nrows() != ctx.n_rows() {
            return Err(Error::Dimension(format!("target has {} rows, context has {}", z.nrows(), ctx.n_rows())));
        }
        let w = scale_rows(z, &ctx.d_inv_half);
        let xw_t_w = ctx.xw.tr_mul(&w);
        let complement = &w - &ctx.xw * ctx.gram_chol.solve(&xw_t_w);
        let svd = SVD::new(complement, true, true);
        Ok(CompletionPath {
            ctx,
            xw_t_w,
            u: svd.u.expect("left singular vectors requested"),
            sigma: svd.singular_values,
            v_t: svd.v_t.expect("right singular vectors requested"),
            nl: n_hat * z.ncols() as f64,
        })
    }

    /// Largest singular value of `(I − 𝒫)W`.
    pub fn sigma_max(&self) -> f64 {
        self.sigma.iter().copied().fold(0.0, f64::max)
    }

    pub fn beta_prime(&self, tau1: f64) -> DMatrix<f64> {
        self.ctx.ridge_solve(&self.xw_t_w, self.nl * tau1)
    }

    /// Shrunk singular values of `B̂′` (scale factor folded in).
    fn shrunk(&self, tau2: f64, alpha: f64) -> DVector<f64> {
        let c = alpha * self.nl * tau2 / 2.0;
        let factor = 1.0 / (1.0 + (1.0 - alpha) * self.nl * tau2);
        self.sigma.map(|s| (s - c).max(0.0) * factor)
    }

    pub fn b_prime(&self, tau2: f64, alpha: f64) -> DMatrix<f64> {
        reconstruct(&self.u, &self.shrunk(tau2, alpha), &self.v_t, 1.0)
    }

    /// `â_ij` for the listed cells only.
    fn a_hat_cells(&self, x: &DMatrix<f64>, t: &TuningTriple, cells: &[(usize, usize)]) -> Vec<f64> {
        let beta = self.beta_prime(t.tau1);
        let s = self.shrunk(t.tau2, t.alpha);
        let active: Vec<usize> = (0..s.len()).filter(|&k| s[k] > 0.0).collect();
        cells
            .iter()
            .map(|&(i, j)| {
                let xb = x.row(i).dot(&beta.column(j).transpose());
                let b: f64 = active.iter().map(|&k| self.u[(i, k)] * s[k] * self.v_t[(k, j)]).sum();
                xb + self.ctx.d_half[i] * b
            })
            .collect()
    }
}

/// Ridge closed form `(XᵀD⁻¹X + N̂Lτ₁I)⁻¹ XᵀD⁻¹Z`.
pub fn fit_beta_prime(ctx: &ProjectionContext, z: &DMatrix<f64>, tau1: f64, n_hat: f64) -> Result<DMatrix<f64>> {
    if z.nrows() != ctx.n_rows() {
        return Err(Error::Dimension(format!("target has {} rows, context has {}", z.nrows(), ctx.n_rows())));
    }
    let rhs = ctx.xw.tr_mul(&scale_rows(z, &ctx.d_inv_half));
    Ok(ctx.ridge_solve(&rhs, n_hat * z.ncols() as f64 * tau1))
}

/// `[1 + (1−α)N̂Lτ₂]⁻¹ 𝒯_{αN̂Lτ₂/2}((I − 𝒫) D^{-1/2} Z)`.
pub fn fit_b_prime(
    ctx: &ProjectionContext,
    z: &DMatrix<f64>,
    tau2: f64,
    alpha: f64,
    n_hat: f64,
) -> Result<DMatrix<f64>> {
    let w = scale_rows(z, &ctx.d_inv_half);
    let complement = ctx.project(&w, Projection::Complement)?;
    let nl = n_hat * z.ncols() as f64;
    let shrunk = soft_threshold_svd(&complement, alpha * nl * tau2 / 2.0);
    Ok(shrunk / (1.0 + (1.0 - alpha) * nl * tau2))
}

/// `Â = Xβ̂′ + D^{1/2}B̂′`, and the imputed matrix keeping observed values.
pub fn assemble_a_hat(
    sample: &SampleData,
    beta_prime: &DMatrix<f64>,
    b_prime: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (n, l) = sample.y.shape();
    if beta_prime.shape() != (sample.n_covariates(), l) || b_prime.shape() != (n, l) {
        return Err(Error::Dimension("beta_prime / B_prime shapes do not match the sample".into()));
    }
    let d_half = sample.pi.map(f64::sqrt);
    let a_hat = &sample.x * beta_prime + scale_rows(b_prime, &d_half);
    let imputed = DMatrix::from_fn(n, l, |i, j| if sample.r[(i, j)] { sample.y[(i, j)] } else { a_hat[(i, j)] });
    Ok((a_hat, imputed))
}

#[derive(Debug, Clone, Serialize)]
pub struct CvEntry {
    pub tuning: TuningTriple,
    pub fold_losses: Vec<f64>,
    pub mean_loss: f64,
}

#[derive(Debug, Clone)]
pub struct CompletionFit {
    pub beta_prime: DMatrix<f64>,
    pub b_prime: DMatrix<f64>,
    pub a_hat: DMatrix<f64>,
    pub imputed: DMatrix<f64>,
    pub tuning: TuningTriple,
    pub cv_trace: Vec<CvEntry>,
    /// Items with no observed cell; their column of `Z` is identically zero.
    pub empty_columns: Vec<usize>,
}

/// Axes of the default tuning grid. `tau2` values are placed so the
/// singular-value threshold `αN̂Lτ₂/2` is each fraction of `σ_max`.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub tau1: Vec<f64>,
    pub threshold_fractions: Vec<f64>,
    pub alpha: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            tau1: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1],
            threshold_fractions: geometric(0.05, 0.8, 6),
            alpha: vec![0.5, 0.9, 0.99, 1.0],
        }
    }
}

fn geometric(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let ratio = (hi / lo).powf(1.0 / (n - 1) as f64);
    (0..n).map(|k| if k == n - 1 { hi } else { lo * ratio.powi(k as i32) }).collect()
}

impl GridSpec {
    pub fn build(&self, sigma_max: f64, n_hat: f64, n_items: usize) -> Vec<TuningTriple> {
        let nl = n_hat * n_items as f64;
        let mut grid = Vec::new();
        for &alpha in &self.alpha {
            for &frac in &self.threshold_fractions {
                // alpha = 0 has no threshold; scale the ridge factor instead.
                let tau2 = if alpha > 0.0 { 2.0 * frac * sigma_max / (alpha * nl) } else { frac * sigma_max / nl };
                for &tau1 in &self.tau1 {
                    grid.push(TuningTriple { tau1, tau2, alpha });
                }
            }
        }
        grid
    }
}

#[derive(Debug, Clone)]
pub struct CompletionOptions {
    pub grid: GridSpec,
    /// Explicit grid; overrides `grid` when set.
    pub explicit_grid: Option<Vec<TuningTriple>>,
    pub folds: usize,
    pub max_partition_attempts: usize,
    pub exec: Execution,
}

impl Default for CompletionOptions {
    fn default() -> Self {
        CompletionOptions {
            grid: GridSpec::default(),
            explicit_grid: None,
            folds: 5,
            max_partition_attempts: 10,
            exec: Execution::Parallel,
        }
    }
}

fn assign_folds<R: Rng + ?Sized>(
    r: &DMatrix<bool>,
    folds: usize,
    attempts: usize,
    rng: &mut R,
) -> Result<Vec<Vec<(usize, usize)>>> {
    let (n, l) = r.shape();
    let mut cells: Vec<(usize, usize)> = Vec::new();
    for j in 0..l {
        for i in 0..n {
            if r[(i, j)] {
                cells.push((i, j));
            }
        }
    }
    let counts: Vec<usize> = (0..l).map(|j| r.column(j).iter().filter(|&&b| b).count()).collect();
    for _ in 0..attempts {
        cells.shuffle(rng);
        let mut groups = vec![Vec::new(); folds];
        for (pos, &cell) in cells.iter().enumerate() {
            groups[pos % folds].push(cell);
        }
        // Items with fewer observed cells than folds cannot avoid being emptied.
        let empties = groups.iter().any(|g| {
            let mut held = vec![0usize; l];
            for &(_, j) in g {
                held[j] += 1;
            }
            (0..l).any(|j| counts[j] >= folds && held[j] == counts[j])
        });
        if !empties {
            for g in &mut groups {
                g.sort_unstable_by_key(|&(i, j)| (j, i));
            }
            return Ok(groups);
        }
    }
    Err(Error::CrossValidation(format!(
        "could not partition observed cells into {folds} folds without emptying an item after {attempts} attempts"
    )))
}

/// Pick the triple with the smallest mean loss; ties go to larger τ₂, then
/// larger τ₁, then earlier grid position.
fn select(trace: &[CvEntry]) -> TuningTriple {
    let mut best = 0;
    for (idx, e) in trace.iter().enumerate().skip(1) {
        let b = &trace[best];
        let better = e.mean_loss < b.mean_loss
            || (e.mean_loss == b.mean_loss
                && (e.tuning.tau2 > b.tuning.tau2
                    || (e.tuning.tau2 == b.tuning.tau2 && e.tuning.tau1 > b.tuning.tau1)));
        if better {
            best = idx;
        }
    }
    trace[best].tuning
}

/// K-fold cross-validation over observed cells.
///
/// Each fold hides its cells from the mask and refits; since the hidden cells
/// are a uniform `1/K` subsample of the observed ones, the training response
/// probability is taken as `p̂·(K−1)/K`. Held-out residuals are weighted by
/// `(πᵢ p̂ᵢⱼ)⁻¹`.
pub fn cross_validate<R: Rng + ?Sized>(
    sample: &SampleData,
    p_hat: &DMatrix<f64>,
    grid: &[TuningTriple],
    opts: &CompletionOptions,
    rng: &mut R,
) -> Result<(TuningTriple, Vec<CvEntry>)> {
    if grid.is_empty() {
        return Err(Error::CrossValidation("tuning grid is empty".into()));
    }
    if let Some(t) = grid.iter().find(|t| !t.is_valid()) {
        return Err(Error::Invalid(format!("invalid tuning triple {t:?}")));
    }
    let folds = opts.folds;
    if folds < 2 {
        return Err(Error::CrossValidation("need at least 2 folds".into()));
    }
    let ctx = ProjectionContext::new(&sample.x, &sample.pi)?;
    let groups = assign_folds(&sample.r, folds, opts.max_partition_attempts, rng)?;
    let keep = (folds - 1) as f64 / folds as f64;
    let p_train = p_hat.map(|p| p * keep);

    let per_fold: Vec<Result<Vec<f64>>> = opts.exec.map(folds, |k| {
        let mut r_train = sample.r.clone();
        for &(i, j) in &groups[k] {
            r_train[(i, j)] = false;
        }
        let train = sample.with_mask(r_train);
        let z = build_weighted_target(&train, &p_train)?;
        let path = CompletionPath::new(&ctx, &z, sample.n_hat)?;
        let held = &groups[k];
        let weights: Vec<f64> = held.iter().map(|&(i, j)| 1.0 / (sample.pi[i] * p_hat[(i, j)])).collect();
        let losses = opts.exec.map(grid.len(), |g| {
            let a = path.a_hat_cells(&sample.x, &grid[g], held);
            held.iter()
                .zip(&a)
                .zip(&weights)
                .map(|((&(i, j), &ahat), &w)| w * (sample.y[(i, j)] - ahat).powi(2))
                .sum::<f64>()
        });
        Ok(losses)
    });
    let per_fold = per_fold.into_iter().collect::<Result<Vec<_>>>()?;
    let trace: Vec<CvEntry> = grid
        .iter()
        .enumerate()
        .map(|(g, &tuning)| {
            let fold_losses: Vec<f64> = per_fold.iter().map(|f| f[g]).collect();
            let mean_loss = fold_losses.iter().sum::<f64>() / folds as f64;
            CvEntry { tuning, fold_losses, mean_loss }
        })
        .collect();
    Ok((select(&trace), trace))
}

/// Full pipeline: build the weighted target, tune by cross-validation, refit
/// on all observed cells.
pub fn fit_completion<R: Rng + ?Sized>(
    sample: &SampleData,
    p_hat: &DMatrix<f64>,
    opts: &CompletionOptions,
    rng: &mut R,
) -> Result<CompletionFit> {
    let ctx = ProjectionContext::new(&sample.x, &sample.pi)?;
    let z = build_weighted_target(sample, p_hat)?;
    let path = CompletionPath::new(&ctx, &z, sample.n_hat)?;
    let grid = match &opts.explicit_grid {
        Some(g) => g.clone(),
        None => opts.grid.build(path.sigma_max(), sample.n_hat, sample.n_items()),
    };
    let (tuning, cv_trace) = if grid.len() == 1 {
        let t = grid[0];
        (t, vec![CvEntry { tuning: t, fold_losses: Vec::new(), mean_loss: f64::NAN }])
    } else {
        cross_validate(sample, p_hat, &grid, opts, rng)?
    };
    let beta_prime = path.beta_prime(tuning.tau1);
    let b_prime = path.b_prime(tuning.tau2, tuning.alpha);
    let (a_hat, imputed) = assemble_a_hat(sample, &beta_prime, &b_prime)?;
    let empty_columns = (0..sample.n_items()).filter(|&j| sample.observed_count(j) == 0).collect();
    Ok(CompletionFit { beta_prime, b_prime, a_hat, imputed, tuning, cv_trace, empty_columns })
}

/// `‖XwᵀB‖_max / ‖B‖_max`, the relative violation of the null-space constraint.
pub fn null_space_violation(ctx: &ProjectionContext, b_prime: &DMatrix<f64>) -> f64 {
    let scale = max_abs(b_prime);
    if scale == 0.0 {
        return 0.0;
    }
    max_abs(&ctx.xw.tr_mul(b_prime)) / scale
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;
    use rand_distr::{Distribution, StandardNormal};

    fn rand_matrix(r: usize, c: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = stream(seed, &[]);
        DMatrix::from_fn(r, c, |_, _| StandardNormal.sample(&mut rng))
    }

    fn rand_pi(n: usize, seed: u64) -> DVector<f64> {
        let mut rng = stream(seed, &[]);
        DVector::from_fn(n, |_, _| 0.1 + 0.8 * rng.random::<f64>())
    }

    #[test]
    fn weighted_target_formula() {
        let x = DMatrix::from_element(2, 1, 1.0);
        let y = DMatrix::from_row_slice(2, 2, &[2.0, 3.0, 5.0, 7.0]);
        let s = SampleData::complete(x, y.clone(), DVector::from_element(2, 1.0), 2.0);
        let ones = DMatrix::from_element(2, 2, 1.0);
        assert_eq!(build_weighted_target(&s, &ones).unwrap(), y);

        let mut r = s.r.clone();
        r[(1, 0)] = false;
        let masked = s.with_mask(r);
        let mut p = ones.clone();
        p[(0, 0)] = 0.5;
        let z = build_weighted_target(&masked, &p).unwrap();
        assert_eq!(z[(0, 0)], 4.0);
        assert_eq!(z[(1, 0)], 0.0);
    }

    #[test]
    fn weighted_target_rejects_nonfinite_observed() {
        let mut s = SampleData::complete(
            DMatrix::from_element(2, 1, 1.0),
            DMatrix::from_element(2, 1, 1.0),
            DVector::from_element(2, 1.0),
            2.0,
        );
        s.y[(1, 0)] = f64::INFINITY;
        assert!(matches!(
            build_weighted_target(&s, &DMatrix::from_element(2, 1, 1.0)),
            Err(Error::NonFiniteObserved { row: 1, col: 0 })
        ));
    }

    #[test]
    fn projection_identities() {
        let x = rand_matrix(9, 3, 1);
        let ctx = ProjectionContext::new(&x, &rand_pi(9, 2)).unwrap();
        let c = rand_matrix(3, 4, 3);
        let in_range = &ctx.xw * &c;
        let onto = ctx.project(&in_range, Projection::Onto).unwrap();
        assert!((onto - &in_range).amax() < 1e-10 * in_range.amax());

        let m = rand_matrix(9, 4, 4);
        let sum = ctx.project(&m, Projection::Onto).unwrap() + ctx.project(&m, Projection::Complement).unwrap();
        assert!((sum - &m).amax() < 1e-12 * m.amax().max(1.0));

        let p = ctx.project(&DMatrix::identity(9, 9), Projection::Onto).unwrap();
        assert!((&p * &p - &p).norm() <= 1e-8 * p.norm());
        assert!((&p - p.transpose()).amax() < 1e-12);
    }

    #[test]
    fn unit_basis_projector() {
        // d = 1, Xw = e₁ once unit weights are applied.
        let mut x = DMatrix::zeros(3, 1);
        x[(0, 0)] = 1.0;
        let ctx = ProjectionContext::new(&x, &DVector::from_element(3, 1.0)).unwrap();
        let m = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = ctx.project(&m, Projection::Onto).unwrap();
        assert_eq!(p, DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.0, 0.0, 0.0, 0.0]));
    }

    #[test]
    fn collinear_covariates_rejected() {
        let x = DMatrix::from_fn(5, 2, |i, j| (i as f64 + 1.0) * (j as f64 + 1.0));
        let err = ProjectionContext::new(&x, &DVector::from_element(5, 0.5)).unwrap_err();
        assert!(err.to_string().contains("covariates collinear"));
    }

    #[test]
    fn soft_threshold_cases() {
        let m = rand_matrix(6, 4, 5);
        let same = soft_threshold_svd(&m, 0.0);
        assert!((same - &m).amax() <= 1e-10 * m.amax());
        let smax = m.clone().svd(false, false).singular_values.max();
        assert!(soft_threshold_svd(&m, smax).amax() <= 1e-12 * smax);
        let c = 0.4 * smax;
        let t = soft_threshold_svd(&m, c);
        let tmax = t.svd(false, false).singular_values.max();
        assert!(tmax <= smax - c + 1e-10);

        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let out = soft_threshold_svd(&diag, 2.0);
        let expected = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        assert!((out - expected).amax() < 1e-12);
    }

    #[test]
    fn beta_prime_limits() {
        let x = rand_matrix(10, 2, 6);
        let pi = rand_pi(10, 7);
        let ctx = ProjectionContext::new(&x, &pi).unwrap();
        let c = rand_matrix(2, 3, 8);
        let z = &x * &c;
        let beta = fit_beta_prime(&ctx, &z, 0.0, 50.0).unwrap();
        assert!((beta - &c).amax() < 1e-8);
        let shrunk = fit_beta_prime(&ctx, &z, 1e12, 50.0).unwrap();
        assert!(shrunk.norm() <= 1e-6 * z.norm());
    }

    #[test]
    fn b_prime_limits() {
        let x = rand_matrix(8, 2, 9);
        let pi = rand_pi(8, 10);
        let ctx = ProjectionContext::new(&x, &pi).unwrap();
        let z = rand_matrix(8, 4, 11);
        let n_hat = 30.0;
        let w = scale_rows(&z, &ctx.d_inv_half);
        let comp = ctx.project(&w, Projection::Complement).unwrap();
        let b = fit_b_prime(&ctx, &z, 0.0, 1.0, n_hat).unwrap();
        assert!((b - &comp).amax() < 1e-12 * comp.amax());
        let smax = comp.svd(false, false).singular_values.max();
        let tau2 = 2.0 * smax / (0.7 * n_hat * 4.0);
        assert_eq!(fit_b_prime(&ctx, &z, tau2, 0.7, n_hat).unwrap().amax(), 0.0);
    }

    #[test]
    fn path_matches_closed_forms() {
        let x = rand_matrix(12, 3, 12);
        let pi = rand_pi(12, 13);
        let ctx = ProjectionContext::new(&x, &pi).unwrap();
        let z = rand_matrix(12, 5, 14);
        let path = CompletionPath::new(&ctx, &z, 40.0).unwrap();
        let t = TuningTriple { tau1: 0.01, tau2: 0.3 * path.sigma_max() / 200.0, alpha: 0.9 };
        let beta = fit_beta_prime(&ctx, &z, t.tau1, 40.0).unwrap();
        let b = fit_b_prime(&ctx, &z, t.tau2, t.alpha, 40.0).unwrap();
        assert!((path.beta_prime(t.tau1) - &beta).amax() < 1e-12);
        assert!((path.b_prime(t.tau2, t.alpha) - &b).amax() < 1e-10);
        let s = SampleData::complete(x.clone(), z.clone(), pi.clone(), 40.0);
        let (a, _) = assemble_a_hat(&s, &beta, &b).unwrap();
        let cells: Vec<(usize, usize)> = (0..12).flat_map(|i| (0..5).map(move |j| (i, j))).collect();
        let vals = path.a_hat_cells(&x, &t, &cells);
        for (&(i, j), v) in cells.iter().zip(vals) {
            assert!((a[(i, j)] - v).abs() < 1e-10);
        }
    }

    #[test]
    fn single_triple_grid() {
        let x = rand_matrix(30, 2, 15);
        let y = rand_matrix(30, 6, 16);
        let s = SampleData::complete(x, y, DVector::from_element(30, 0.5), 60.0);
        let p = DMatrix::from_element(30, 6, 1.0);
        let t = TuningTriple { tau1: 1e-3, tau2: 1e-2, alpha: 0.9 };
        let (sel, trace) = cross_validate(&s, &p, &[t], &CompletionOptions::default(), &mut stream(1, &[])).unwrap();
        assert_eq!(sel, t);
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].fold_losses.len(), 5);
    }

    #[test]
    fn duplicate_triples_deterministic() {
        let x = rand_matrix(30, 2, 17);
        let y = rand_matrix(30, 6, 18);
        let s = SampleData::complete(x, y, DVector::from_element(30, 0.5), 60.0);
        let p = DMatrix::from_element(30, 6, 1.0);
        let t = TuningTriple { tau1: 1e-3, tau2: 1e-2, alpha: 0.9 };
        let grid = vec![t, t, TuningTriple { tau1: 1e-3, tau2: 1e-2, alpha: 1.0 }];
        let opts = CompletionOptions::default();
        let (a, ta) = cross_validate(&s, &p, &grid, &opts, &mut stream(2, &[])).unwrap();
        let (b, tb) = cross_validate(&s, &p, &grid, &opts, &mut stream(2, &[])).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta[0].mean_loss, ta[1].mean_loss);
        assert_eq!(ta[0].mean_loss.to_bits(), tb[0].mean_loss.to_bits());
    }

    #[test]
    fn tie_break_prefers_stronger_regularization() {
        let mk = |tau1, tau2| CvEntry { tuning: TuningTriple { tau1, tau2, alpha: 1.0 }, fold_losses: vec![], mean_loss: 1.0 };
        let trace = vec![mk(0.1, 1.0), mk(0.01, 2.0), mk(0.2, 2.0), mk(0.2, 2.0)];
        assert_eq!(select(&trace), trace[2].tuning);
    }

    #[test]
    fn fold_partition_rules() {
        let r = DMatrix::from_element(5, 1, true);
        let groups = assign_folds(&r, 5, 1, &mut stream(3, &[])).unwrap();
        assert!(groups.iter().all(|g| g.len() == 1));
        // An item with fewer observed cells than folds is exempt from the check.
        let mut sparse = DMatrix::from_element(10, 2, true);
        for i in 1..10 {
            sparse[(i, 1)] = false;
        }
        assert!(assign_folds(&sparse, 5, 1, &mut stream(4, &[])).is_ok());
        assert!(matches!(assign_folds(&r, 5, 0, &mut stream(5, &[])), Err(Error::CrossValidation(_))));
    }
}
