//! Recursive Normal–Inverse–Wishart tracking of the value-gradient
//! distribution, plus element-wise running statistics for hidden states.
//!
//! The tracker keeps the four conjugate hyperparameters `(m, κ, Ψ, ν)`. Each
//! batch of gradients is folded in with the closed-form conjugate update, so
//! the state after `T` batches is exactly the posterior given all samples
//! seen so far, starting from the prior `(0, 0, ε₀·I, 0)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// Running element-wise mean and sum of squared deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagStats {
    pub mean: DVector<f64>,
    pub ssd: DVector<f64>,
    pub count: u64,
}

impl DiagStats {
    pub fn zeros(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            ssd: DVector::zeros(dim),
            count: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fold in a batch whose samples are the columns of `batch`.
    ///
    /// `m ← m + (n/N)·δ` and `S ← S + n·Var(z) + (N_prev·n/N)·δ²`, where `δ` is
    /// the batch mean minus the previous running mean.
    pub fn update(&self, batch: &DMatrix<f64>) -> Result<Self> {
        let n = batch.ncols();
        if n == 0 {
            return Err(Error::Empty("diag_update batch"));
        }
        if batch.nrows() != self.dim() {
            return Err(Error::dim("diag_update", self.dim(), batch.nrows()));
        }
        let n_prev = self.count as f64;
        let n_f = n as f64;
        let total = n_prev + n_f;

        let batch_mean = batch.column_mean();
        let mut batch_ssd = DVector::zeros(self.dim());
        for col in batch.column_iter() {
            let dev = col - &batch_mean;
            batch_ssd += dev.component_mul(&dev);
        }
        let delta = &batch_mean - &self.mean;

        let mean = &self.mean + &delta * (n_f / total);
        let ssd = &self.ssd + batch_ssd + delta.component_mul(&delta) * (n_prev * n_f / total);
        Ok(Self {
            mean,
            ssd: ssd.map(|s| s.max(0.0)),
            count: self.count + n as u64,
        })
    }

    /// Running standard deviation `sqrt(S / max(N - 1, 1))`.
    pub fn std(&self) -> DVector<f64> {
        let denom = (self.count.saturating_sub(1)).max(1) as f64;
        self.ssd.map(|s| (s / denom).sqrt())
    }
}

/// Sufficient statistics of one batch of gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSummary {
    pub n: usize,
    pub v_bar: DVector<f64>,
    pub scatter: DMatrix<f64>,
}

/// Mean and scatter `Σ (v - v̄)(v - v̄)ᵀ` of the columns of `samples`.
pub fn summarize_batch(samples: &DMatrix<f64>) -> Result<BatchSummary> {
    let n = samples.ncols();
    if n == 0 {
        return Err(Error::Empty("summarize_batch samples"));
    }
    if samples.nrows() == 0 {
        return Err(Error::dim("summarize_batch", 1, 0));
    }
    let v_bar = samples.column_mean();
    let d = samples.nrows();
    let mut scatter = DMatrix::zeros(d, d);
    for col in samples.column_iter() {
        let dev = col - &v_bar;
        scatter.ger(1.0, &dev, &dev, 1.0);
    }
    symmetrize(&mut scatter);
    Ok(BatchSummary { n, v_bar, scatter })
}

/// Summarize a batch given as a list of vectors.
pub fn summarize_vectors(samples: &[DVector<f64>]) -> Result<BatchSummary> {
    let first = samples
        .first()
        .ok_or(Error::Empty("summarize_batch samples"))?;
    let d = first.len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::dim("summarize_batch", d, bad.len()));
    }
    summarize_batch(&DMatrix::from_columns(samples))
}

/// Posterior point estimates of the gradient mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimates {
    pub mu_hat: DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    /// Denominator applied to Ψ.
    pub denominator: f64,
    /// `true` when `ν - d - 1 < 1` and the denominator was clamped to 1.
    pub clamped: bool,
}

/// NIW hyperparameters plus element-wise hidden-state statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NiwState {
    pub m: DVector<f64>,
    pub kappa: f64,
    pub psi: DMatrix<f64>,
    pub nu: f64,
    pub h_stats: DiagStats,
}

impl NiwState {
    /// The non-informative prior `(0, 0, ε₀·I, 0)`.
    pub fn init_prior(d: usize, d_h: usize, epsilon_0: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::config("d", "must be at least 1"));
        }
        if d_h == 0 {
            return Err(Error::config("d_h", "must be at least 1"));
        }
        if !epsilon_0.is_finite() || epsilon_0 <= 0.0 {
            return Err(Error::config(
                "epsilon0",
                format!("must be a positive finite number, got {epsilon_0}"),
            ));
        }
        Ok(Self {
            m: DVector::zeros(d),
            kappa: 0.0,
            psi: DMatrix::identity(d, d) * epsilon_0,
            nu: 0.0,
            h_stats: DiagStats::zeros(d_h),
        })
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    pub fn hidden_dim(&self) -> usize {
        self.h_stats.dim()
    }

    /// Conjugate update with one batch summary. Hidden-state statistics are
    /// left untouched.
    pub fn niw_update(&self, batch: &BatchSummary) -> Result<Self> {
        let d = self.dim();
        if batch.v_bar.len() != d {
            return Err(Error::dim("niw_update", d, batch.v_bar.len()));
        }
        if batch.scatter.nrows() != d || batch.scatter.ncols() != d {
            return Err(Error::dim("niw_update scatter", d, batch.scatter.nrows()));
        }
        let n = batch.n as f64;
        let kappa = self.kappa + n;
        let nu = self.nu + n;
        let m = (&self.m * self.kappa + &batch.v_bar * n) / kappa;

        let shift = &batch.v_bar - &self.m;
        let mut psi = &self.psi + &batch.scatter;
        psi.ger(self.kappa * n / kappa, &shift, &shift, 1.0);
        symmetrize(&mut psi);

        Ok(Self {
            m,
            kappa,
            psi,
            nu,
            h_stats: self.h_stats.clone(),
        })
    }

    /// `μ̂ = m`, `Σ̂ = Ψ / max(ν - d - 1, 1)`.
    pub fn posterior_estimates(&self) -> PosteriorEstimates {
        let raw = self.nu - self.dim() as f64 - 1.0;
        let clamped = raw < 1.0;
        let denominator = if clamped { 1.0 } else { raw };
        let mut sigma_hat = &self.psi / denominator;
        symmetrize(&mut sigma_hat);
        PosteriorEstimates {
            mu_hat: self.m.clone(),
            sigma_hat,
            denominator,
            clamped,
        }
    }

    /// Fold one step's data in: gradients into the NIW block, hidden states
    /// into the element-wise statistics.
    pub fn ingest(&self, h: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<Self> {
        let summary = summarize_batch(v)?;
        let mut next = self.niw_update(&summary)?;
        next.h_stats = self.h_stats.update(h)?;
        Ok(next)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;

    #[test]
    fn prior_is_noninformative() {
        let s = NiwState::init_prior(2, 3, 1e-6).unwrap();
        assert_eq!(s.m, DVector::zeros(2));
        assert_eq!(s.kappa, 0.0);
        assert_eq!(s.nu, 0.0);
        assert_eq!(s.psi, DMatrix::identity(2, 2) * 1e-6);
        assert_eq!(s.h_stats.count, 0);

        let one = NiwState::init_prior(1, 1, 1.0).unwrap();
        assert_eq!(one.psi[(0, 0)], 1.0);
    }

    #[test]
    fn prior_rejects_bad_config() {
        assert!(matches!(
            NiwState::init_prior(2, 1, 0.0),
            Err(Error::Config { .. })
        ));
        assert!(NiwState::init_prior(2, 1, -1.0).is_err());
        assert!(NiwState::init_prior(0, 1, 1.0).is_err());
        assert!(NiwState::init_prior(2, 1, f64::NAN).is_err());
    }

    #[test]
    fn summary_of_symmetric_pair() {
        let b = summarize_vectors(&[dvector![1.0, 0.0], dvector![-1.0, 0.0]]).unwrap();
        assert_eq!(b.n, 2);
        assert_eq!(b.v_bar, dvector![0.0, 0.0]);
        assert_eq!(b.scatter, DMatrix::from_diagonal(&dvector![2.0, 0.0]));
    }

    #[test]
    fn single_sample_scatter_is_zero() {
        let b = summarize_vectors(&[dvector![3.0]]).unwrap();
        assert_eq!(b.v_bar, dvector![3.0]);
        assert_eq!(b.scatter[(0, 0)], 0.0);
    }

    #[test]
    fn summary_rejects_bad_input() {
        assert!(matches!(summarize_vectors(&[]), Err(Error::Empty(_))));
        assert!(matches!(
            summarize_vectors(&[dvector![1.0, 2.0], dvector![1.0]]),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn update_from_zero_strength_prior() {
        let prior = NiwState::init_prior(2, 1, 1e-6).unwrap();
        let b = summarize_vectors(&[dvector![1.0, 0.0], dvector![-1.0, 0.0]]).unwrap();
        let post = prior.niw_update(&b).unwrap();
        assert_eq!(post.kappa, 2.0);
        assert_eq!(post.nu, 2.0);
        assert_eq!(post.m, dvector![0.0, 0.0]);
        let expected = DMatrix::identity(2, 2) * 1e-6 + DMatrix::from_diagonal(&dvector![2.0, 0.0]);
        assert_eq!(post.psi, expected);
    }

    #[test]
    fn update_scalar_substitution() {
        let prior = NiwState {
            m: dvector![1.0],
            kappa: 1.0,
            psi: DMatrix::from_element(1, 1, 1.0),
            nu: 1.0,
            h_stats: DiagStats::zeros(1),
        };
        let post = prior
            .niw_update(&summarize_vectors(&[dvector![3.0]]).unwrap())
            .unwrap();
        assert_eq!(post.kappa, 2.0);
        assert_eq!(post.nu, 2.0);
        assert_eq!(post.m[0], 2.0);
        assert_eq!(post.psi[(0, 0)], 3.0);
    }

    #[test]
    fn update_rejects_dimension_mismatch() {
        let prior = NiwState::init_prior(3, 1, 1.0).unwrap();
        let b = summarize_vectors(&[dvector![1.0, 2.0]]).unwrap();
        assert!(matches!(prior.niw_update(&b), Err(Error::Dimension { .. })));
    }

    #[test]
    fn estimates_scale_and_clamp() {
        let mut s = NiwState::init_prior(2, 1, 1.0).unwrap();
        s.psi = DMatrix::identity(2, 2) * 2.0;
        s.nu = 4.0;
        let est = s.posterior_estimates();
        assert!(!est.clamped);
        assert_eq!(est.sigma_hat, DMatrix::identity(2, 2) * 2.0);

        let prior = NiwState::init_prior(2, 1, 1e-3).unwrap();
        let est = prior.posterior_estimates();
        assert!(est.clamped);
        assert_eq!(est.denominator, 1.0);
        assert_eq!(est.sigma_hat, DMatrix::identity(2, 2) * 1e-3);
    }

    #[test]
    fn diag_first_batch_and_two_points() {
        let s = DiagStats::zeros(2);
        let s1 = s
            .update(&DMatrix::from_column_slice(2, 1, &[2.0, 4.0]))
            .unwrap();
        assert_eq!(s1.mean, dvector![2.0, 4.0]);
        assert_eq!(s1.ssd, dvector![0.0, 0.0]);
        assert_eq!(s1.count, 1);

        let t = DiagStats::zeros(1);
        let t = t.update(&DMatrix::from_element(1, 1, 0.0)).unwrap();
        let t = t.update(&DMatrix::from_element(1, 1, 2.0)).unwrap();
        assert_eq!(t.mean[0], 1.0);
        assert_eq!(t.ssd[0], 2.0);
        assert_eq!(t.count, 2);
    }

    #[test]
    fn diag_rejects_empty() {
        let s = DiagStats::zeros(2);
        assert!(matches!(
            s.update(&DMatrix::zeros(2, 0)),
            Err(Error::Empty(_))
        ));
        assert!(s.update(&DMatrix::zeros(3, 1)).is_err());
    }
}
