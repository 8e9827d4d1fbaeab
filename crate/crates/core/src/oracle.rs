//! Brute-force reference implementations for tests.
//!
//! Nothing here calls into the tracker, whitening or editor code paths.
//! Matrices are handled as plain row-major `Vec<Vec<f64>>` internally and
//! only converted at the boundary.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::niw::{DiagStats, NiwState};
use crate::sim::LinearTeacherSource;

type Rows = Vec<Vec<f64>>;

fn rows(m: &DMatrix<f64>) -> Rows {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn from_rows(r: &Rows, nrows: usize, ncols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(nrows, ncols, |i, j| r[i][j])
}

fn matmul(a: &Rows, b: &Rows) -> Rows {
    let n = a.len();
    let k = b.len();
    let m = if k == 0 { 0 } else { b[0].len() };
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for p in 0..k {
            let aip = a[i][p];
            for j in 0..m {
                out[i][j] += aip * b[p][j];
            }
        }
    }
    out
}

fn transpose(a: &Rows) -> Rows {
    if a.is_empty() {
        return Vec::new();
    }
    (0..a[0].len())
        .map(|j| a.iter().map(|r| r[j]).collect())
        .collect()
}

/// One-shot NIW posterior from every sample at once. The hidden-state
/// statistics of `prior` are carried through untouched.
pub fn batch_niw_posterior(prior: &NiwState, samples: &[DVector<f64>]) -> Result<NiwState> {
    let n = samples.len();
    if n == 0 {
        return Err(Error::Empty("oracle samples"));
    }
    let d = prior.m.len();
    for s in samples {
        if s.len() != d {
            return Err(Error::dim("batch_niw_posterior", d, s.len()));
        }
    }
    let nf = n as f64;
    let mut mean = vec![0.0; d];
    for s in samples {
        for i in 0..d {
            mean[i] += s[i];
        }
    }
    for x in &mut mean {
        *x /= nf;
    }
    let mut scatter = vec![vec![0.0; d]; d];
    for s in samples {
        for i in 0..d {
            for j in 0..d {
                scatter[i][j] += (s[i] - mean[i]) * (s[j] - mean[j]);
            }
        }
    }
    let kappa = prior.kappa + nf;
    let nu = prior.nu + nf;
    let m: Vec<f64> = (0..d)
        .map(|i| (prior.kappa * prior.m[i] + nf * mean[i]) / kappa)
        .collect();
    let c = prior.kappa * nf / kappa;
    let psi = DMatrix::from_fn(d, d, |i, j| {
        prior.psi[(i, j)] + scatter[i][j] + c * (mean[i] - prior.m[i]) * (mean[j] - prior.m[j])
    });
    let psi = DMatrix::from_fn(d, d, |i, j| 0.5 * (psi[(i, j)] + psi[(j, i)]));
    Ok(NiwState {
        m: DVector::from_vec(m),
        kappa,
        psi,
        nu,
        h_stats: prior.h_stats.clone(),
    })
}

/// `2(ΔH − V)Hᵀ + 2λΔ`
pub fn ridge_objective_gradient(
    delta: &DMatrix<f64>,
    h: &DMatrix<f64>,
    v: &DMatrix<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if delta.ncols() != h.nrows() || v.nrows() != delta.nrows() || v.ncols() != h.ncols() {
        return Err(Error::dim(
            "ridge_objective_gradient",
            delta.ncols(),
            h.nrows(),
        ));
    }
    let (dr, hr, vr) = (rows(delta), rows(h), rows(v));
    let mut resid = matmul(&dr, &hr);
    for (ri, vi) in resid.iter_mut().zip(&vr) {
        for (x, y) in ri.iter_mut().zip(vi) {
            *x -= y;
        }
    }
    let mut g = matmul(&resid, &transpose(&hr));
    for (gi, di) in g.iter_mut().zip(&dr) {
        for (x, y) in gi.iter_mut().zip(di) {
            *x = 2.0 * *x + 2.0 * lambda * y;
        }
    }
    Ok(from_rows(&g, delta.nrows(), delta.ncols()))
}

/// Solve `A X = B` by Gaussian elimination with partial pivoting.
pub fn gauss_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || b.nrows() != n {
        return Err(Error::dim("gauss_solve", n, b.nrows()));
    }
    let k = b.ncols();
    let mut aug: Rows = (0..n)
        .map(|i| {
            let mut r: Vec<f64> = (0..n).map(|j| a[(i, j)]).collect();
            r.extend((0..k).map(|j| b[(i, j)]));
            r
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| aug[x][col].abs().total_cmp(&aug[y][col].abs()))
            .unwrap_or(col);
        if aug[pivot][col] == 0.0 {
            return Err(Error::Numerical {
                context: "gauss_solve",
                detail: format!("singular at column {col}"),
            });
        }
        aug.swap(col, pivot);
        let (top, bottom) = aug.split_at_mut(col + 1);
        let pivot_row = &top[col];
        for row in bottom.iter_mut() {
            let f = row[col] / pivot_row[col];
            if f != 0.0 {
                for (x, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                    *x -= f * p;
                }
            }
        }
    }
    let mut x = vec![vec![0.0; k]; n];
    for i in (0..n).rev() {
        for j in 0..k {
            let mut s = aug[i][n + j];
            for p in i + 1..n {
                s -= aug[i][p] * x[p][j];
            }
            x[i][j] = s / aug[i][i];
        }
    }
    Ok(from_rows(&x, n, k))
}

fn gram_plus_ridge(h: &DMatrix<f64>, lambda: f64) -> DMatrix<f64> {
    let hr = rows(h);
    let mut g = matmul(&hr, &transpose(&hr));
    for (i, row) in g.iter_mut().enumerate() {
        row[i] += lambda;
    }
    from_rows(&g, h.nrows(), h.nrows())
}

/// `Δ = V Hᵀ(HHᵀ + λI)⁻¹` via a dense solve of the transposed system.
pub fn dense_ridge_solve(h: &DMatrix<f64>, v: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    if v.ncols() != h.ncols() {
        return Err(Error::dim("dense_ridge_solve", h.ncols(), v.ncols()));
    }
    let a = gram_plus_ridge(h, lambda);
    let rhs = from_rows(
        &matmul(&rows(h), &transpose(&rows(v))),
        h.nrows(),
        v.nrows(),
    );
    Ok(gauss_solve(&a, &rhs)?.transpose())
}

/// Projection factors `φⁱ = sqⁱ (hⁱ)ᵀ(HHᵀ + λI)⁻¹`, one row per edit.
pub fn dense_projection_factors(h: &DMatrix<f64>, sq: &[f64], lambda: f64) -> Result<DMatrix<f64>> {
    if sq.len() != h.ncols() {
        return Err(Error::dim("dense_projection_factors", h.ncols(), sq.len()));
    }
    let x = gauss_solve(&gram_plus_ridge(h, lambda), h)?;
    Ok(DMatrix::from_fn(h.ncols(), h.nrows(), |i, j| {
        sq[i] * x[(j, i)]
    }))
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration on
/// its square.
pub fn power_iteration_specnorm(a: &DMatrix<f64>, iters: usize, tol: f64) -> Result<f64> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(Error::dim("power_iteration_specnorm", n, a.ncols()));
    }
    if n == 0 {
        return Ok(0.0);
    }
    let ar = rows(a);
    let a2 = matmul(&ar, &ar);
    if a2.iter().flatten().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let apply = |x: &[f64]| -> Vec<f64> {
        a2.iter()
            .map(|r| r.iter().zip(x).map(|(p, q)| p * q).sum())
            .collect()
    };
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.37 * i as f64 / n as f64).collect();
    let mut residual = f64::INFINITY;
    for _ in 0..iters {
        let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Ok(0.0);
        }
        for v in &mut x {
            *v /= norm;
        }
        let y = apply(&x);
        let rho: f64 = x.iter().zip(&y).map(|(p, q)| p * q).sum();
        residual = x
            .iter()
            .zip(&y)
            .map(|(p, q)| (q - rho * p).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * rho.abs().max(1.0) {
            return Ok(rho.max(0.0).sqrt());
        }
        x = y;
    }
    Err(Error::Numerical {
        context: "power_iteration_specnorm",
        detail: format!("no convergence after {iters} iterations (residual {residual:e})"),
    })
}

/// Spectral distance of `w Σ wᵀ` from the identity, by power iteration.
pub fn whitening_reconstruction_error(w: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    let wr = rows(w);
    let mut m = matmul(&matmul(&wr, &rows(sigma)), &transpose(&wr));
    let d = m.len();
    for (i, row) in m.iter_mut().enumerate() {
        row[i] -= 1.0;
    }
    let m = DMatrix::from_fn(d, d, |i, j| 0.5 * (m[i][j] + m[j][i]));
    power_iteration_specnorm(&m, 100_000, 1e-13)
}

/// Two-pass mean and sum of squared deviations per row.
pub fn naive_moments(samples: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = samples.ncols() as f64;
    let mut mean = Vec::with_capacity(samples.nrows());
    let mut ssd = Vec::with_capacity(samples.nrows());
    for i in 0..samples.nrows() {
        let m = (0..samples.ncols()).map(|j| samples[(i, j)]).sum::<f64>() / n;
        let s = (0..samples.ncols())
            .map(|j| (samples[(i, j)] - m).powi(2))
            .sum();
        mean.push(m);
        ssd.push(s);
    }
    (mean, ssd)
}

/// Naive scatter `Σ (vⁱ − v̄)(vⁱ − v̄)ᵀ` by double loop.
pub fn naive_scatter(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let (mean, _) = naive_moments(samples);
    let d = samples.nrows();
    let mut s = DMatrix::zeros(d, d);
    for k in 0..samples.ncols() {
        for i in 0..d {
            for j in 0..d {
                s[(i, j)] += (samples[(i, k)] - mean[i]) * (samples[(j, k)] - mean[j]);
            }
        }
    }
    s
}

/// Unbiased sample covariance of column samples.
pub fn sample_covariance(samples: &DMatrix<f64>) -> DMatrix<f64> {
    let n = samples.ncols();
    naive_scatter(samples) / ((n.max(2) - 1) as f64)
}

/// Squared norms of hidden states standardized by the full-history
/// moments, recomputed from scratch. `history` holds every hidden state
/// seen so far (including the current batch); the last `current` columns
/// are the batch being edited.
pub fn naive_h_tilde_sq(history: &DMatrix<f64>, current: usize) -> Vec<f64> {
    let (mean, ssd) = naive_moments(history);
    let n = history.ncols();
    let denom = (n.max(2) - 1) as f64;
    let std: Vec<f64> = ssd
        .iter()
        .map(|s| (s / denom).sqrt().max(crate::ridge::H_STD_FLOOR))
        .collect();
    (n - current..n)
        .map(|k| {
            (0..history.nrows())
                .map(|i| ((history[(i, k)] - mean[i]) / std[i]).powi(2))
                .sum()
        })
        .collect()
}

/// Naive recompute of diagonal running statistics.
pub fn naive_diag_stats(history: &DMatrix<f64>) -> DiagStats {
    let (mean, ssd) = naive_moments(history);
    DiagStats {
        mean: DVector::from_vec(mean),
        ssd: DVector::from_vec(ssd),
        count: history.ncols() as u64,
    }
}

/// Empirical mean and standard error of `n_samples` teacher gradients.
pub fn monte_carlo_mean(
    source: &LinearTeacherSource,
    n_samples: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    if n_samples < 100 {
        return Err(Error::config("n_samples", "need at least 100 samples"));
    }
    let g = source.sample_gradients(1, n_samples);
    let (mean, ssd) = naive_moments(&g);
    let n = n_samples as f64;
    let se: Vec<f64> = ssd.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect();
    Ok((DVector::from_vec(mean), DVector::from_vec(se)))
}
