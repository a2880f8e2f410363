//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

pub fn logistic(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// `[1, x]` design matrix.
pub fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    out.columns_mut(1, x.ncols()).copy_from(x);
    out
}

/// Ratio of smallest to largest eigenvalue of a symmetric matrix (0 for an empty matrix).
pub fn eigen_ratio(sym: &DMatrix<f64>) -> f64 {
    if sym.nrows() == 0 {
        return 0.0;
    }
    let eig = SymmetricEigen::new(sym.clone());
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if max <= 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Cholesky of a symmetric matrix after checking it is numerically positive definite.
pub fn spd_cholesky(sym: &DMatrix<f64>, rel_tol: f64) -> Option<Cholesky<f64, Dyn>> {
    if eigen_ratio(sym) <= rel_tol {
        return None;
    }
    Cholesky::new(sym.clone())
}

/// Solution of a weighted least-squares problem.
#[derive(Debug, Clone)]
pub struct WlsFit {
    pub coef: DVector<f64>,
    /// A ridge jitter had to be added to the normal equations.
    pub jittered: bool,
}

/// Minimize `Σ wᵢ (yᵢ − zᵢᵀ c)²` over rows with `wᵢ > 0` via the normal
/// equations; rank deficiency falls back to a `1e-8 · max diag` ridge.
pub fn weighted_least_squares(design: &DMatrix<f64>, y: &[f64], w: &[f64]) -> WlsFit {
    let p = design.ncols();
    let mut gram = DMatrix::zeros(p, p);
    let mut rhs = DVector::zeros(p);
    for i in 0..design.nrows() {
        let wi = w[i];
        if wi <= 0.0 {
            continue;
        }
        let row = design.row(i);
        for a in 0..p {
            let za = row[a] * wi;
            rhs[a] += za * y[i];
            for b in a..p {
                gram[(a, b)] += za * row[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
    }
    if let Some(ch) = spd_cholesky(&gram, 1e-12) {
        return WlsFit { coef: ch.solve(&rhs), jittered: false };
    }
    let scale = gram.diagonal().max().max(1.0);
    let mut ridged = gram;
    for a in 0..p {
        ridged[(a, a)] += 1e-8 * scale;
    }
    let coef = match Cholesky::new(ridged.clone()) {
        Some(ch) => ch.solve(&rhs),
        None => ridged.pseudo_inverse(1e-12).map(|pinv| pinv * rhs).unwrap_or_else(|_| DVector::zeros(p)),
    };
    WlsFit { coef, jittered: true }
}

/// Largest absolute entry.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}
