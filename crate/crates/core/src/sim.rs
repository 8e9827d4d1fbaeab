//! Synthetic edit streams with known gradient distributions.
//!
//! Two sources are provided. [`ScheduledDriftSource`] draws gradients from a
//! Gaussian whose mean and covariance move by a bounded, decaying amount each
//! step. [`LinearTeacherSource`] holds an editable matrix `W`; its gradients
//! are `W h − y`, so every applied update moves the gradient distribution.
//!
//! Randomness is derived per `(seed, stream, index)` so that each phase draws
//! from its own stream and any step can be regenerated without replaying the
//! ones before it.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{spectral_map, sym_eigen, sym_spectral_norm, symmetrize};
use crate::ridge::EditBatch;

/// Which part of a run a batch belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    Warmup,
    Target,
}

impl Phase {
    pub fn as_str(&self) -> &'static str {
        match self {
            Phase::Warmup => "warmup",
            Phase::Target => "target",
        }
    }
}

const TAG_INIT: u64 = 0x1;
const TAG_TARGET: u64 = 0x2;
const TAG_WARMUP: u64 = 0x3;
const TAG_DRIFT: u64 = 0x4;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent RNG for `(seed, tag, index)`.
pub fn derived_rng(seed: u64, tag: u64, index: u64) -> ChaCha8Rng {
    let mixed = splitmix64(splitmix64(splitmix64(seed) ^ tag) ^ index);
    ChaCha8Rng::seed_from_u64(mixed)
}

fn phase_tag(phase: Phase) -> u64 {
    match phase {
        Phase::Warmup => TAG_WARMUP,
        Phase::Target => TAG_TARGET,
    }
}

fn gaussian_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn gaussian_mat(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

fn unit_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    loop {
        let v = gaussian_vec(rng, n);
        let norm = v.norm();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

fn random_orthogonal(rng: &mut impl Rng, n: usize) -> DMatrix<f64> {
    let qr = gaussian_mat(rng, n, n).qr();
    let q = qr.q();
    let r = qr.r();
    // fix column signs so the distribution is Haar
    let mut out = q.clone();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            out.column_mut(j).neg_mut();
        }
    }
    out
}

/// Analytically known gradient distribution for one batch.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduledDriftConfig {
    pub d: usize,
    pub d_h: usize,
    pub c_mu: f64,
    pub c_sigma: f64,
    pub eps_mu: f64,
    pub eps_sigma: f64,
    pub r_offset: u64,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub init_mu_scale: f64,
    pub init_eig_min: f64,
    pub init_eig_max: f64,
}

impl Default for ScheduledDriftConfig {
    fn default() -> Self {
        Self {
            d: 8,
            d_h: 16,
            c_mu: 0.0,
            c_sigma: 0.0,
            eps_mu: 0.5,
            eps_sigma: 0.5,
            r_offset: 0,
            sigma_min: 1e-3,
            sigma_max: 10.0,
            init_mu_scale: 1.0,
            init_eig_min: 0.1,
            init_eig_max: 4.0,
        }
    }
}

impl ScheduledDriftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("d", "must be at least 1"));
        }
        if self.d_h == 0 {
            return Err(Error::config("d_h", "must be at least 1"));
        }
        for (key, v) in [("c_mu", self.c_mu), ("c_sigma", self.c_sigma)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be nonnegative and finite"));
            }
        }
        for (key, v) in [("eps_mu", self.eps_mu), ("eps_sigma", self.eps_sigma)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be positive and finite"));
            }
        }
        if !(self.sigma_min > 0.0 && self.sigma_min < self.sigma_max && self.sigma_max.is_finite())
        {
            return Err(Error::config(
                "sigma_min",
                "need 0 < sigma_min < sigma_max < inf",
            ));
        }
        if !(self.init_eig_min > 0.0
            && self.init_eig_min <= self.init_eig_max
            && self.init_eig_max.is_finite())
        {
            return Err(Error::config(
                "init_eig_min",
                "need 0 < init_eig_min <= init_eig_max",
            ));
        }
        if !(self.init_mu_scale >= 0.0 && self.init_mu_scale.is_finite()) {
            return Err(Error::config(
                "init_mu_scale",
                "must be nonnegative and finite",
            ));
        }
        Ok(())
    }
}

/// Gaussian gradient source with bounded, decaying drift.
#[derive(Debug, Clone)]
pub struct ScheduledDriftSource {
    cfg: ScheduledDriftConfig,
    seed: u64,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    chol: DMatrix<f64>,
    /// Last global step whose drift has been applied.
    step: u64,
    warmup_shift: DVector<f64>,
}

impl ScheduledDriftSource {
    pub fn new(cfg: ScheduledDriftConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = derived_rng(seed, TAG_INIT, 0);
        let d = cfg.d;
        let mu = gaussian_vec(&mut rng, d) * cfg.init_mu_scale;
        let q = random_orthogonal(&mut rng, d);
        let eigs = DVector::from_fn(d, |i, _| {
            if d == 1 {
                cfg.init_eig_max
            } else {
                let frac = i as f64 / (d - 1) as f64;
                (cfg.init_eig_min.ln() + frac * (cfg.init_eig_max / cfg.init_eig_min).ln()).exp()
            }
        });
        let eigs = eigs.map(|l| l.clamp(cfg.sigma_min, cfg.sigma_max));
        let mut sigma = &q * DMatrix::from_diagonal(&eigs) * q.transpose();
        symmetrize(&mut sigma);
        let chol = sampling_factor(&sigma)?;
        Ok(Self {
            cfg,
            seed,
            mu,
            sigma,
            chol,
            step: 0,
            warmup_shift: DVector::zeros(d),
        })
    }

    /// Shift the mean of warm-up batches by `amount` along the all-ones
    /// direction.
    pub fn with_warmup_shift(mut self, amount: f64) -> Self {
        let d = self.cfg.d;
        self.warmup_shift = DVector::from_element(d, amount / (d as f64).sqrt());
        self
    }

    pub fn config(&self) -> &ScheduledDriftConfig {
        &self.cfg
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn current_step(&self) -> u64 {
        self.step
    }

    /// Bound on `‖μ_g − μ_{g−1}‖₂` at global step `g`.
    pub fn mu_drift_bound(&self, g: u64) -> f64 {
        self.cfg.c_mu * ((self.cfg.r_offset + g) as f64).powf(-(1.0 + self.cfg.eps_mu))
    }

    /// Bound on `‖Σ_g − Σ_{g−1}‖₂` at global step `g`.
    pub fn sigma_drift_bound(&self, g: u64) -> f64 {
        self.cfg.c_sigma * ((self.cfg.r_offset + g) as f64).powf(-(1.0 + self.cfg.eps_sigma))
    }

    /// Apply the drift of the next global step.
    pub fn advance(&mut self) -> Result<()> {
        let g = self.step + 1;
        let mut rng = derived_rng(self.seed, TAG_DRIFT, g);
        let d = self.cfg.d;
        let unit = unit_vec(&mut rng, d);
        let mu_bound = self.mu_drift_bound(g);
        if mu_bound > 0.0 {
            self.mu += unit * mu_bound;
        }
        let sigma_bound = self.sigma_drift_bound(g);
        if sigma_bound > 0.0 {
            let raw = gaussian_mat(&mut rng, d, d);
            let mut e = &raw + raw.transpose();
            let scale = sym_spectral_norm(&e)?;
            if scale > 0.0 {
                e *= sigma_bound / scale;
                let clipped =
                    clip_spectrum(&(&self.sigma + &e), self.cfg.sigma_min, self.cfg.sigma_max)?;
                let mut step = clipped - &self.sigma;
                let size = sym_spectral_norm(&step)?;
                if size > sigma_bound {
                    step *= sigma_bound / size;
                }
                self.sigma += step;
                symmetrize(&mut self.sigma);
                self.chol = sampling_factor(&self.sigma)?;
            }
        }
        self.step = g;
        Ok(())
    }

    /// Advance until the drift of global step `g` has been applied.
    pub fn advance_to(&mut self, g: u64) -> Result<()> {
        while self.step < g {
            self.advance()?;
        }
        Ok(())
    }

    pub fn ground_truth(&self, phase: Phase) -> GroundTruth {
        let mu = match phase {
            Phase::Warmup => &self.mu + &self.warmup_shift,
            Phase::Target => self.mu.clone(),
        };
        GroundTruth {
            mu,
            sigma: self.sigma.clone(),
        }
    }

    /// Draw the batch for global step `g`, the `index`-th batch of `phase`.
    /// Hidden states are standard normal and independent of the gradients.
    pub fn next_batch(
        &mut self,
        phase: Phase,
        index: u64,
        g: u64,
        n: usize,
    ) -> Result<(EditBatch, GroundTruth)> {
        if n == 0 {
            return Err(Error::Empty("batch size"));
        }
        self.advance_to(g)?;
        let truth = self.ground_truth(phase);
        let mut rng = derived_rng(self.seed, phase_tag(phase), index);
        let z = gaussian_mat(&mut rng, self.cfg.d, n);
        let mut v = &self.chol * z;
        for mut col in v.column_iter_mut() {
            col += &truth.mu;
        }
        let h = gaussian_mat(&mut rng, self.cfg.d_h, n);
        Ok((EditBatch::new(h, v)?, truth))
    }
}

fn sampling_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Cholesky::new(sigma.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Numerical {
            context: "sampling_factor",
            detail: "covariance not positive definite".into(),
        })
}

/// Clip every eigenvalue of a symmetric matrix into `[lo, hi]`.
pub fn clip_spectrum(a: &DMatrix<f64>, lo: f64, hi: f64) -> Result<DMatrix<f64>> {
    let eig = sym_eigen(a)?;
    Ok(spectral_map(&eig, |l| l.clamp(lo, hi)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearTeacherConfig {
    pub d: usize,
    pub d_h: usize,
    pub mu_h_norm: f64,
    pub b_norm: f64,
    pub noise_std: f64,
    pub w_init_scale: f64,
}

impl Default for LinearTeacherConfig {
    fn default() -> Self {
        Self {
            d: 8,
            d_h: 16,
            mu_h_norm: 1.0,
            b_norm: 1.0,
            noise_std: 0.1,
            w_init_scale: 0.5,
        }
    }
}

impl LinearTeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("d", "must be at least 1"));
        }
        if self.d_h == 0 {
            return Err(Error::config("d_h", "must be at least 1"));
        }
        for (key, v) in [
            ("mu_h_norm", self.mu_h_norm),
            ("b_norm", self.b_norm),
            ("noise_std", self.noise_std),
            ("w_init_scale", self.w_init_scale),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, "must be nonnegative and finite"));
            }
        }
        Ok(())
    }
}

/// A set of `(hⁱ, yⁱ)` edit pairs stored as matching columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EditSet {
    pub h: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl EditSet {
    pub fn len(&self) -> usize {
        self.h.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.h.ncols() == 0
    }

    /// Residual norms `‖W hⁱ − yⁱ‖₂` per edit.
    pub fn residuals(&self, w: &DMatrix<f64>) -> Vec<f64> {
        let r = w * &self.h - &self.y;
        r.column_iter().map(|c| c.norm()).collect()
    }
}

/// Editable linear model `u = W h` with squared loss `½‖u − y‖²`; the value
/// gradient of an edit is `W h − y`.
#[derive(Debug, Clone)]
pub struct LinearTeacherSource {
    cfg: LinearTeacherConfig,
    seed: u64,
    w_edit: DMatrix<f64>,
    mu_h: DVector<f64>,
    b_star: DVector<f64>,
    warmup_shift: DVector<f64>,
}

impl LinearTeacherSource {
    pub fn new(cfg: LinearTeacherConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = derived_rng(seed, TAG_INIT, 1);
        let w_edit =
            gaussian_mat(&mut rng, cfg.d, cfg.d_h) * (cfg.w_init_scale / (cfg.d_h as f64).sqrt());
        let mu_h = unit_vec(&mut rng, cfg.d_h) * cfg.mu_h_norm;
        let b_star = unit_vec(&mut rng, cfg.d) * cfg.b_norm;
        let d = cfg.d;
        Ok(Self {
            cfg,
            seed,
            w_edit,
            mu_h,
            b_star,
            warmup_shift: DVector::zeros(d),
        })
    }

    /// Build from explicit parameters.
    pub fn from_parts(
        w_edit: DMatrix<f64>,
        mu_h: DVector<f64>,
        b_star: DVector<f64>,
        noise_std: f64,
        seed: u64,
    ) -> Result<Self> {
        if mu_h.len() != w_edit.ncols() {
            return Err(Error::dim("teacher mu_h", w_edit.ncols(), mu_h.len()));
        }
        if b_star.len() != w_edit.nrows() {
            return Err(Error::dim("teacher b_star", w_edit.nrows(), b_star.len()));
        }
        let cfg = LinearTeacherConfig {
            d: w_edit.nrows(),
            d_h: w_edit.ncols(),
            mu_h_norm: mu_h.norm(),
            b_norm: b_star.norm(),
            noise_std,
            w_init_scale: 0.0,
        };
        cfg.validate()?;
        let d = cfg.d;
        Ok(Self {
            cfg,
            seed,
            w_edit,
            mu_h,
            b_star,
            warmup_shift: DVector::zeros(d),
        })
    }

    /// Shift warm-up targets by `amount` along the all-ones direction.
    pub fn with_warmup_shift(mut self, amount: f64) -> Self {
        let d = self.cfg.d;
        self.warmup_shift = DVector::from_element(d, amount / (d as f64).sqrt());
        self
    }

    pub fn config(&self) -> &LinearTeacherConfig {
        &self.cfg
    }

    pub fn w_edit(&self) -> &DMatrix<f64> {
        &self.w_edit
    }

    pub fn mu_h(&self) -> &DVector<f64> {
        &self.mu_h
    }

    pub fn b_star(&self) -> &DVector<f64> {
        &self.b_star
    }

    fn target_offset(&self, phase: Phase) -> DVector<f64> {
        match phase {
            Phase::Warmup => &self.b_star + &self.warmup_shift,
            Phase::Target => self.b_star.clone(),
        }
    }

    /// `μ = W μ_h − b*` for target-phase edits.
    pub fn true_mean(&self) -> DVector<f64> {
        &self.w_edit * &self.mu_h - &self.b_star
    }

    pub fn ground_truth(&self, phase: Phase) -> GroundTruth {
        let mu = &self.w_edit * &self.mu_h - self.target_offset(phase);
        let d = self.cfg.d;
        let sigma = &self.w_edit * self.w_edit.transpose()
            + DMatrix::identity(d, d) * (self.cfg.noise_std * self.cfg.noise_std);
        GroundTruth { mu, sigma }
    }

    /// Draw `n` edits: `h ~ N(μ_h, I)`, `y = b* + noise`.
    pub fn sample_edits(&self, phase: Phase, index: u64, n: usize) -> EditSet {
        let mut rng = derived_rng(self.seed, phase_tag(phase), index);
        self.sample_edits_with(&mut rng, phase, n)
    }

    fn sample_edits_with(&self, rng: &mut impl Rng, phase: Phase, n: usize) -> EditSet {
        let mut h = gaussian_mat(rng, self.cfg.d_h, n);
        for mut col in h.column_iter_mut() {
            col += &self.mu_h;
        }
        let offset = self.target_offset(phase);
        let mut y = gaussian_mat(rng, self.cfg.d, n) * self.cfg.noise_std;
        for mut col in y.column_iter_mut() {
            col += &offset;
        }
        EditSet { h, y }
    }

    /// Value gradients `W hⁱ − yⁱ` of an edit set under the current `W`.
    pub fn gradients(&self, edits: &EditSet) -> DMatrix<f64> {
        &self.w_edit * &edits.h - &edits.y
    }

    pub fn next_batch(
        &mut self,
        phase: Phase,
        index: u64,
        n: usize,
    ) -> Result<(EditBatch, GroundTruth, EditSet)> {
        if n == 0 {
            return Err(Error::Empty("batch size"));
        }
        let edits = self.sample_edits(phase, index, n);
        let v = self.gradients(&edits);
        let truth = self.ground_truth(phase);
        let mut batch = EditBatch::new(edits.h.clone(), v)?;
        batch.targets = Some(edits.y.clone());
        Ok((batch, truth, edits))
    }

    /// `W ← W + Δ`.
    pub fn apply_update(&mut self, delta: &DMatrix<f64>) -> Result<()> {
        if delta.shape() != self.w_edit.shape() {
            return Err(Error::dim("apply_update", self.w_edit.len(), delta.len()));
        }
        self.w_edit += delta;
        Ok(())
    }

    /// Monte-Carlo sampler used by the oracle: fresh edits from a dedicated
    /// stream, leaving the source untouched.
    pub fn sample_gradients(&self, stream: u64, n: usize) -> DMatrix<f64> {
        let mut rng = derived_rng(self.seed, 0xABCD ^ stream, stream);
        let edits = self.sample_edits_with(&mut rng, Phase::Target, n);
        self.gradients(&edits)
    }
}

/// Fraction of `current` edits whose residual strictly shrank, and fraction
/// of `held_out` edits whose residual grew by less than 10%.
pub fn efficacy_retention(
    w_before: &DMatrix<f64>,
    w_after: &DMatrix<f64>,
    current: &EditSet,
    held_out: &EditSet,
) -> Result<(f64, f64)> {
    if current.is_empty() {
        return Err(Error::Empty("current edits"));
    }
    if held_out.is_empty() {
        return Err(Error::Empty("held-out edits"));
    }
    if w_before.shape() != w_after.shape() {
        return Err(Error::dim(
            "efficacy_retention",
            w_before.len(),
            w_after.len(),
        ));
    }
    for set in [current, held_out] {
        if set.h.nrows() != w_before.ncols() || set.y.nrows() != w_before.nrows() {
            return Err(Error::dim(
                "efficacy_retention edits",
                w_before.ncols(),
                set.h.nrows(),
            ));
        }
    }
    let before = current.residuals(w_before);
    let after = current.residuals(w_after);
    let improved = before.iter().zip(&after).filter(|(b, a)| a < b).count();
    let efficacy = improved as f64 / current.len() as f64;

    let before = held_out.residuals(w_before);
    let after = held_out.residuals(w_after);
    let kept = before
        .iter()
        .zip(&after)
        .filter(|(b, a)| **a <= 1.1 * **b)
        .count();
    let retention = kept as f64 / held_out.len() as f64;
    Ok((efficacy, retention))
}
