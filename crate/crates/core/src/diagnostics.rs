//! Per-step measurements and run-level comparisons.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, frob_inner, sym_spectral_norm};
use crate::sim::Phase;

/// One row of `steps.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Global step, 1-based.
    pub step: usize,
    pub phase: Phase,
    /// Position within the phase, 1-based.
    pub phase_step: usize,
    pub mean_mse: Option<f64>,
    pub cov_spec_err: Option<f64>,
    /// `‖μ̂_t − μ̂_{t−1}‖₂`
    pub mu_drift: f64,
    /// `‖Σ̂_t − Σ̂_{t−1}‖_F`
    pub sigma_drift: f64,
    pub update_fro_norm: Option<f64>,
    pub cos_prev: Option<f64>,
    pub cond_number: f64,
    pub lambda_max: f64,
    pub whiten_identity_dev: f64,
    pub efficacy: Option<f64>,
    pub retention: Option<f64>,
    pub bias_norm: Option<f64>,
    pub spec_norm: Option<f64>,
}

/// `‖μ̂ − μ‖₂²`
pub fn mean_mse(mu_hat: &DVector<f64>, mu_true: &DVector<f64>) -> Result<f64> {
    if mu_hat.len() != mu_true.len() {
        return Err(Error::dim("mean_mse", mu_true.len(), mu_hat.len()));
    }
    Ok((mu_hat - mu_true).norm_squared())
}

/// Spectral norm of `Σ̂ − Σ`.
pub fn cov_spectral_error(sigma_hat: &DMatrix<f64>, sigma_true: &DMatrix<f64>) -> Result<f64> {
    if sigma_hat.shape() != sigma_true.shape() {
        return Err(Error::dim(
            "cov_spectral_error",
            sigma_true.nrows(),
            sigma_hat.nrows(),
        ));
    }
    let diff = sigma_hat - sigma_true;
    let asym = asymmetry(&diff);
    if asym > 1e-8 {
        return Err(Error::Numerical {
            context: "cov_spectral_error",
            detail: format!("difference is not symmetric (max asymmetry {asym:e})"),
        });
    }
    sym_spectral_norm(&diff)
}

/// Frobenius cosine between consecutive updates; `None` if either is zero.
pub fn cosine_adjacent(delta_t: &DMatrix<f64>, delta_prev: &DMatrix<f64>) -> Result<Option<f64>> {
    if delta_t.shape() != delta_prev.shape() {
        return Err(Error::dim(
            "cosine_adjacent",
            delta_prev.len(),
            delta_t.len(),
        ));
    }
    let a = delta_t.norm();
    let b = delta_prev.norm();
    if a == 0.0 || b == 0.0 {
        return Ok(None);
    }
    Ok(Some(
        (frob_inner(delta_t, delta_prev) / (a * b)).clamp(-1.0, 1.0),
    ))
}

/// Spectral distance of `w Σ wᵀ` from the identity.
pub fn whitened_identity_deviation(w: &DMatrix<f64>, sigma: &DMatrix<f64>) -> Result<f64> {
    if w.ncols() != sigma.nrows() || sigma.nrows() != sigma.ncols() {
        return Err(Error::dim(
            "whitened_identity_deviation",
            sigma.nrows(),
            w.ncols(),
        ));
    }
    let d = w.nrows();
    let mut m = w * sigma * w.transpose() - DMatrix::identity(d, d);
    crate::linalg::symmetrize(&mut m);
    sym_spectral_norm(&m)
}

/// Moving average over every run of `window` consecutive values.
/// Returns `len - window + 1` values.
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || xs.len() < window {
        return Vec::new();
    }
    xs.windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect()
}

pub fn median(xs: &[f64]) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len();
    Some(if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    })
}

/// Warm-start versus cold-start comparison of the mean-estimation error.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveShift {
    pub warmup_steps: usize,
    /// Target steps compared step-for-step.
    pub compared_steps: usize,
    /// Fraction of compared steps with `MSE_warm(t) ≤ MSE_cold(t)`.
    pub fraction_warm_le_cold: f64,
    /// `MSE_warm(t) / MSE_cold(r + t)` where the cold run reaches `r + t`.
    pub shifted_ratios: Vec<f64>,
    pub median_shifted_ratio: Option<f64>,
}

/// Target-phase mean MSE series, indexed by target step.
pub fn target_mse(records: &[StepRecord]) -> Result<Vec<f64>> {
    records
        .iter()
        .filter(|r| r.phase == Phase::Target)
        .map(|r| {
            r.mean_mse
                .ok_or(Error::Empty("mean_mse (stream has no ground truth)"))
        })
        .collect()
}

/// Compare the target-phase MSE curves of a warm-started and a cold-started
/// run. `warmup_steps` is the warm run's `r`.
pub fn warmup_curve_shift(warm: &[f64], cold: &[f64], warmup_steps: usize) -> Result<CurveShift> {
    let compared = warm.len().min(cold.len());
    if compared == 0 {
        return Err(Error::Empty("curve-shift target steps"));
    }
    let le = (0..compared).filter(|&t| warm[t] <= cold[t]).count();
    let shifted_ratios: Vec<f64> = (0..warm.len())
        .filter_map(|t| {
            let c = *cold.get(t + warmup_steps)?;
            let w = warm[t];
            if c > 0.0 {
                Some(w / c)
            } else if w == 0.0 {
                Some(1.0)
            } else {
                None
            }
        })
        .collect();
    Ok(CurveShift {
        warmup_steps,
        compared_steps: compared,
        fraction_warm_le_cold: le as f64 / compared as f64,
        median_shifted_ratio: median(&shifted_ratios),
        shifted_ratios,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn mse_examples() {
        let a = dvector![1.0, 2.0];
        assert_eq!(mean_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(
            mean_mse(&dvector![3.0, 4.0], &dvector![0.0, 0.0]).unwrap(),
            25.0
        );
        assert!(mean_mse(&a, &dvector![1.0]).is_err());
    }

    #[test]
    fn cov_error_examples() {
        let s = DMatrix::from_diagonal(&dvector![3.0, 1.0]);
        assert_eq!(cov_spectral_error(&s, &s).unwrap(), 0.0);
        let e = cov_spectral_error(&s, &DMatrix::identity(2, 2)).unwrap();
        assert!((e - 2.0).abs() < 1e-12);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!(cov_spectral_error(&asym, &DMatrix::identity(2, 2)).is_err());
    }

    #[test]
    fn cosine_examples() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        assert_eq!(cosine_adjacent(&a, &b).unwrap(), Some(0.0));
        assert_eq!(cosine_adjacent(&a, &a).unwrap(), Some(1.0));
        assert_eq!(cosine_adjacent(&a, &(-&a)).unwrap(), Some(-1.0));
        assert_eq!(cosine_adjacent(&a, &DMatrix::zeros(2, 2)).unwrap(), None);
    }

    #[test]
    fn identical_runs_shift_by_ties() {
        let curve = vec![4.0, 2.0, 1.0];
        let s = warmup_curve_shift(&curve, &curve, 0).unwrap();
        assert_eq!(s.fraction_warm_le_cold, 1.0);
        assert_eq!(s.median_shifted_ratio, Some(1.0));
    }

    #[test]
    fn moving_average_and_median() {
        assert_eq!(
            moving_average(&[1.0, 2.0, 3.0, 4.0], 2),
            vec![1.5, 2.5, 3.5]
        );
        assert!(moving_average(&[1.0], 2).is_empty());
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
