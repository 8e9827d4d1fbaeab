//! Centering-and-whitening transform `v ↦ Σ̂^{-1/2}(v − μ̂)`.
//!
//! `Σ̂^{-1/2}` comes from a symmetric eigendecomposition in which each
//! eigenvalue is raised to `max(λ, abs_floor, rel_floor·λ_max)` before the
//! inverse square root is taken.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, is_finite_mat, is_finite_vec, spectral_map, sym_eigen, symmetrize};

pub const DEFAULT_ABS_FLOOR: f64 = 1e-10;
pub const DEFAULT_REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorConfig {
    pub abs_floor: f64,
    pub rel_floor: f64,
}

impl Default for FloorConfig {
    fn default() -> Self {
        Self {
            abs_floor: DEFAULT_ABS_FLOOR,
            rel_floor: DEFAULT_REL_FLOOR,
        }
    }
}

impl FloorConfig {
    pub fn new(abs_floor: f64, rel_floor: f64) -> Result<Self> {
        let cfg = Self {
            abs_floor,
            rel_floor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_floor > 0.0 && self.abs_floor.is_finite()) {
            return Err(Error::config("abs_floor", "must be positive and finite"));
        }
        if !(self.rel_floor > 0.0 && self.rel_floor.is_finite()) {
            return Err(Error::config("rel_floor", "must be positive and finite"));
        }
        Ok(())
    }

    fn floor_for(&self, lambda_max: f64) -> f64 {
        self.abs_floor.max(self.rel_floor * lambda_max)
    }
}

/// A frozen whitening transform.
#[derive(Debug, Clone, PartialEq)]
pub struct WhiteningTransform {
    pub mu_hat: DVector<f64>,
    /// `Σ̂^{-1/2}` after flooring.
    pub w: DMatrix<f64>,
    pub floored_count: usize,
    pub lambda_max: f64,
    pub lambda_min_raw: f64,
}

impl WhiteningTransform {
    pub fn dim(&self) -> usize {
        self.mu_hat.len()
    }

    /// `w·(v − μ̂)`.
    pub fn whiten(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.dim() {
            return Err(Error::dim("whiten", self.dim(), v.len()));
        }
        Ok(&self.w * (v - &self.mu_hat))
    }

    /// Whiten every column of `v`.
    pub fn whiten_columns(&self, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if v.nrows() != self.dim() {
            return Err(Error::dim("whiten_columns", self.dim(), v.nrows()));
        }
        let mut centered = v.clone();
        for mut col in centered.column_iter_mut() {
            col -= &self.mu_hat;
        }
        Ok(&self.w * centered)
    }
}

fn condition_detail(sigma: &DMatrix<f64>) -> String {
    let diag: Vec<f64> = sigma.diagonal().iter().copied().collect();
    let (lo, hi) = diag
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    format!(
        "{}x{} matrix, diagonal range [{lo:e}, {hi:e}], asymmetry {:e}",
        sigma.nrows(),
        sigma.ncols(),
        asymmetry(sigma)
    )
}

/// Eigendecompose `sigma_hat`, floor the spectrum and form `Σ̂^{-1/2}`.
pub fn build_transform(
    mu_hat: &DVector<f64>,
    sigma_hat: &DMatrix<f64>,
    floor: FloorConfig,
) -> Result<WhiteningTransform> {
    floor.validate()?;
    let d = mu_hat.len();
    if sigma_hat.nrows() != d || sigma_hat.ncols() != d {
        return Err(Error::dim("build_transform", d, sigma_hat.nrows()));
    }
    if !is_finite_vec(mu_hat) {
        return Err(Error::NonFinite("whitening center"));
    }
    if !is_finite_mat(sigma_hat) {
        return Err(Error::NonFinite("whitening covariance"));
    }
    let mut sym = sigma_hat.clone();
    symmetrize(&mut sym);
    let eig = sym_eigen(&sym).map_err(|e| Error::Numerical {
        context: "build_transform",
        detail: format!("{e}; {}", condition_detail(&sym)),
    })?;

    let lambda_max = eig.values[0];
    let lambda_min_raw = eig.values[d - 1];
    let threshold = floor.floor_for(lambda_max);
    let floored_count = eig.values.iter().filter(|&&l| l < threshold).count();
    let w = spectral_map(&eig, |l| 1.0 / l.max(threshold).sqrt());
    if !is_finite_mat(&w) {
        return Err(Error::Numerical {
            context: "build_transform",
            detail: format!("non-finite inverse square root; {}", condition_detail(&sym)),
        });
    }
    Ok(WhiteningTransform {
        mu_hat: mu_hat.clone(),
        w,
        floored_count,
        lambda_max: lambda_max.max(threshold),
        lambda_min_raw,
    })
}

/// Diagonal counterpart: `w = diag(1/σ)` with each variance floored exactly
/// as [`build_transform`] floors eigenvalues.
pub fn build_diagonal_transform(
    mu_hat: &DVector<f64>,
    sigma_hat: &DMatrix<f64>,
    floor: FloorConfig,
) -> Result<WhiteningTransform> {
    floor.validate()?;
    let d = mu_hat.len();
    if sigma_hat.nrows() != d || sigma_hat.ncols() != d {
        return Err(Error::dim("build_diagonal_transform", d, sigma_hat.nrows()));
    }
    if !is_finite_mat(sigma_hat) || !is_finite_vec(mu_hat) {
        return Err(Error::NonFinite("diagonal whitening input"));
    }
    let var = sigma_hat.diagonal();
    let lambda_max = var.max();
    let lambda_min_raw = var.min();
    let threshold = floor.floor_for(lambda_max);
    let floored_count = var.iter().filter(|&&l| l < threshold).count();
    let w = DMatrix::from_diagonal(&var.map(|l| 1.0 / l.max(threshold).sqrt()));
    Ok(WhiteningTransform {
        mu_hat: mu_hat.clone(),
        w,
        floored_count,
        lambda_max: lambda_max.max(threshold),
        lambda_min_raw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralReport {
    pub condition_number: f64,
    pub lambda_max: f64,
    pub lambda_min: f64,
}

/// Extreme eigenvalues and condition number `λ_max / max(λ_min, abs_floor)`.
pub fn spectral_report(sigma_hat: &DMatrix<f64>, abs_floor: f64) -> Result<SpectralReport> {
    if sigma_hat.nrows() == 0 {
        return Err(Error::Empty("spectral_report matrix"));
    }
    if !is_finite_mat(sigma_hat) {
        return Err(Error::NonFinite("spectral_report matrix"));
    }
    let eig = sym_eigen(sigma_hat).map_err(|e| Error::Numerical {
        context: "spectral_report",
        detail: format!("{e}; {}", condition_detail(sigma_hat)),
    })?;
    let lambda_max = eig.values[0];
    let lambda_min = eig.values[eig.values.len() - 1];
    Ok(SpectralReport {
        condition_number: lambda_max / lambda_min.max(abs_floor),
        lambda_max,
        lambda_min,
    })
}
