//! Small dense helpers shared by the tracker, whitening and diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// `(a + aᵀ) / 2`, in place.
pub fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

pub fn is_finite_mat(a: &DMatrix<f64>) -> bool {
    a.iter().all(|x| x.is_finite())
}

pub fn is_finite_vec(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Largest absolute asymmetry `max |a_ij - a_ji|`.
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

/// Symmetric eigendecomposition with eigenvalues sorted descending and each
/// eigenvector's first nonzero component made positive, so identical inputs
/// always produce identical factors.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

pub fn sym_eigen(a: &DMatrix<f64>) -> Result<SymEigen> {
    if a.nrows() != a.ncols() {
        return Err(Error::dim("sym_eigen", a.nrows(), a.ncols()));
    }
    if !is_finite_mat(a) {
        return Err(Error::NonFinite("symmetric eigendecomposition input"));
    }
    let mut sym = a.clone();
    symmetrize(&mut sym);
    let n = sym.nrows();
    let eig = SymmetricEigen::try_new(sym, f64::EPSILON, 0).ok_or_else(|| Error::Numerical {
        context: "sym_eigen",
        detail: format!("Jacobi/QR iteration did not converge for a {n}x{n} matrix"),
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));

    let mut values = DVector::zeros(n);
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[src];
        let mut col = eig.eigenvectors.column(src).into_owned();
        if let Some(first) = col.iter().find(|x| **x != 0.0) {
            if *first < 0.0 {
                col.neg_mut();
            }
        }
        vectors.set_column(k, &col);
    }
    if !is_finite_vec(&values) || !is_finite_mat(&vectors) {
        return Err(Error::Numerical {
            context: "sym_eigen",
            detail: "non-finite eigenpairs".into(),
        });
    }
    Ok(SymEigen { values, vectors })
}

/// `Q diag(f(λ)) Qᵀ`, symmetrized.
pub fn spectral_map(eig: &SymEigen, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let q = &eig.vectors;
    let scaled = DMatrix::from_fn(q.nrows(), q.ncols(), |i, j| q[(i, j)] * f(eig.values[j]));
    let mut out = scaled * q.transpose();
    symmetrize(&mut out);
    out
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_spectral_norm(a: &DMatrix<f64>) -> Result<f64> {
    if a.nrows() == 0 {
        return Ok(0.0);
    }
    let eig = sym_eigen(a)?;
    Ok(eig.values.iter().fold(0.0_f64, |m, x| m.max(x.abs())))
}

/// Frobenius inner product `⟨a, b⟩_F`.
pub fn frob_inner(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Sample covariance (divisor `n - 1`, or `1` for a single column) of the
/// columns of `x`.
pub fn column_covariance(x: &DMatrix<f64>) -> DMatrix<f64> {
    let n = x.ncols();
    let d = x.nrows();
    let mean = x.column_mean();
    let mut cov = DMatrix::zeros(d, d);
    for col in x.column_iter() {
        let c = col - &mean;
        cov.ger(1.0, &c, &c, 1.0);
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    cov /= denom;
    symmetrize(&mut cov);
    cov
}
