//! Closed-form ridge edits.
//!
//! Given hidden states `H` (d_h×n) and normalized gradients `ṽ`, the update
//! minimizes `‖ΔH − V‖²_F + λ‖Δ‖²_F` with the target
//! `V = −γ[‖h̃¹‖²ṽ¹, …, ‖h̃ⁿ‖²ṽⁿ]`. The minimizer is
//! `Δ = V Hᵀ(HHᵀ + λI)⁻¹ = −γ Σᵢ ṽⁱ φⁱ` with projection factors
//! `φⁱ = ‖h̃ⁱ‖² (hⁱ)ᵀ(HHᵀ + λI)⁻¹`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::linalg::{is_finite_mat, is_finite_vec};
use crate::niw::{DiagStats, NiwState};
use crate::whitening::{
    build_diagonal_transform, build_transform, FloorConfig, WhiteningTransform,
};

/// Standard deviations below this are treated as this value when
/// standardizing hidden states.
pub const H_STD_FLOOR: f64 = 1e-8;

/// Relative tolerance for the internal sum-form / matrix-form agreement check.
const FORM_AGREEMENT_TOL: f64 = 1e-10;

/// One step of edits: columns of `h` and `v_raw` are paired.
#[derive(Debug, Clone, PartialEq)]
pub struct EditBatch {
    pub h: DMatrix<f64>,
    pub v_raw: DMatrix<f64>,
    /// Edit targets `yⁱ`, present for linear-teacher streams.
    pub targets: Option<DMatrix<f64>>,
}

impl EditBatch {
    pub fn new(h: DMatrix<f64>, v_raw: DMatrix<f64>) -> Result<Self> {
        let batch = Self {
            h,
            v_raw,
            targets: None,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn len(&self) -> usize {
        self.h.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.h.ncols() == 0
    }

    pub fn validate(&self) -> Result<()> {
        if self.h.ncols() == 0 {
            return Err(Error::Empty("edit batch"));
        }
        if self.h.ncols() != self.v_raw.ncols() {
            return Err(Error::dim(
                "edit batch columns",
                self.h.ncols(),
                self.v_raw.ncols(),
            ));
        }
        if let Some(y) = &self.targets {
            if y.ncols() != self.h.ncols() || y.nrows() != self.v_raw.nrows() {
                return Err(Error::dim("edit batch targets", self.h.ncols(), y.ncols()));
            }
        }
        Ok(())
    }
}

/// How raw gradients are normalized before the ridge solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EditorMode {
    /// `ṽ = v`, no centering or scaling.
    RawGradient,
    /// `ṽ = (v − m) / σ` element-wise, σ from the diagonal of `Σ̂`.
    DiagonalNorm,
    /// `ṽ = Σ̂^{-1/2}(v − μ̂)`.
    FullWhitening,
}

impl fmt::Display for EditorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EditorMode::RawGradient => "raw",
            EditorMode::DiagonalNorm => "diagonal",
            EditorMode::FullWhitening => "full",
        })
    }
}

impl FromStr for EditorMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "raw" => Ok(EditorMode::RawGradient),
            "diagonal" | "diag" => Ok(EditorMode::DiagonalNorm),
            "full" => Ok(EditorMode::FullWhitening),
            other => Err(format!(
                "unknown mode `{other}` (expected raw, diagonal or full)"
            )),
        }
    }
}

/// Fixed element-wise 1-Lipschitz map applied to the normalized gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LipschitzHook {
    Tanh,
    /// Clamp each entry to `[-c, c]`.
    Clip(f64),
}

impl LipschitzHook {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            LipschitzHook::Tanh => x.tanh(),
            LipschitzHook::Clip(c) => x.clamp(-c, c),
        }
    }

    pub fn apply_matrix(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        m.map(|x| self.apply(x))
    }
}

impl fmt::Display for LipschitzHook {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LipschitzHook::Tanh => f.write_str("tanh"),
            LipschitzHook::Clip(c) => write!(f, "clip:{c}"),
        }
    }
}

impl FromStr for LipschitzHook {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        if s == "tanh" {
            return Ok(LipschitzHook::Tanh);
        }
        if let Some(c) = s.strip_prefix("clip:") {
            let c: f64 = c.parse().map_err(|_| format!("bad clip bound `{c}`"))?;
            if !(c > 0.0 && c.is_finite()) {
                return Err(format!("clip bound must be positive, got {c}"));
            }
            return Ok(LipschitzHook::Clip(c));
        }
        Err(format!(
            "unknown hook `{s}` (expected none, tanh or clip:<c>)"
        ))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EditorConfig {
    pub gamma: f64,
    pub lambda: f64,
    pub mode: EditorMode,
    pub lipschitz_hook: Option<LipschitzHook>,
    pub floor: FloorConfig,
}

impl Default for EditorConfig {
    fn default() -> Self {
        Self {
            gamma: 1e-3,
            lambda: 10.0,
            mode: EditorMode::FullWhitening,
            lipschitz_hook: None,
            floor: FloorConfig::default(),
        }
    }
}

impl EditorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::config("gamma", "must be positive and finite"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::config("lambda", "must be positive and finite"));
        }
        self.floor.validate()
    }
}

/// A parameter increment and its norms.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateMatrix {
    pub delta: DMatrix<f64>,
    pub fro_norm: f64,
    /// `‖Δ^spec‖_F`, only when the true gradient mean is known.
    pub spec_component_norm: Option<f64>,
    /// `‖Δ^bias‖_F`, only when the true gradient mean is known.
    pub bias_component_norm: Option<f64>,
}

impl UpdateMatrix {
    pub fn from_delta(delta: DMatrix<f64>) -> Self {
        let fro_norm = delta.norm();
        Self {
            delta,
            fro_norm,
            spec_component_norm: None,
            bias_component_norm: None,
        }
    }

    pub fn zeros(d: usize, d_h: usize) -> Self {
        Self::from_delta(DMatrix::zeros(d, d_h))
    }
}

fn gram_factor(h: &DMatrix<f64>, lambda: f64) -> Result<Cholesky<f64, Dyn>> {
    let d_h = h.nrows();
    let gram = h * h.transpose() + DMatrix::identity(d_h, d_h) * lambda;
    Cholesky::new(gram).ok_or_else(|| Error::Numerical {
        context: "projection_factors",
        detail: format!("HHᵀ + λI not positive definite (λ = {lambda:e}, d_h = {d_h})"),
    })
}

/// Rows `φⁱ = ‖h̃ⁱ‖² (hⁱ)ᵀ (HHᵀ + λI)⁻¹`, returned as an n×d_h matrix.
pub fn projection_factors(
    h: &DMatrix<f64>,
    h_tilde_sq: &DVector<f64>,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::config("lambda", "must be positive and finite"));
    }
    if h.ncols() != h_tilde_sq.len() {
        return Err(Error::dim(
            "projection_factors",
            h.ncols(),
            h_tilde_sq.len(),
        ));
    }
    if !is_finite_mat(h) || !is_finite_vec(h_tilde_sq) {
        return Err(Error::NonFinite("projection_factors input"));
    }
    if h_tilde_sq.iter().any(|&x| x < 0.0) {
        return Err(Error::Numerical {
            context: "projection_factors",
            detail: "negative squared norm".into(),
        });
    }
    let solved = gram_factor(h, lambda)?.solve(h);
    let mut phi = solved.transpose();
    for (i, mut row) in phi.row_iter_mut().enumerate() {
        row *= h_tilde_sq[i];
    }
    Ok(phi)
}

/// Standardize each column of `h` with the running element-wise statistics.
/// Returns the standardized columns and their squared norms.
pub fn standardize_h(h: &DMatrix<f64>, stats: &DiagStats) -> Result<(DMatrix<f64>, DVector<f64>)> {
    if stats.count == 0 {
        return Err(Error::Empty("hidden-state statistics"));
    }
    if h.nrows() != stats.dim() {
        return Err(Error::dim("standardize_h", stats.dim(), h.nrows()));
    }
    let std = stats.std().map(|s| s.max(H_STD_FLOOR));
    let mut tilde = h.clone();
    for mut col in tilde.column_iter_mut() {
        col -= &stats.mean;
        col.component_div_assign(&std);
    }
    let sq = DVector::from_iterator(tilde.ncols(), tilde.column_iter().map(|c| c.norm_squared()));
    Ok((tilde, sq))
}

/// Output of one ridge solve.
#[derive(Debug, Clone)]
pub struct EditSolution {
    pub update: UpdateMatrix,
    /// Transform used to normalize the gradients (identity for raw mode).
    pub transform: WhiteningTransform,
    /// Normalized gradients after the hook, d×n.
    pub v_tilde: DMatrix<f64>,
    pub h_tilde_sq: DVector<f64>,
}

fn identity_transform(d: usize) -> WhiteningTransform {
    WhiteningTransform {
        mu_hat: DVector::zeros(d),
        w: DMatrix::identity(d, d),
        floored_count: 0,
        lambda_max: 1.0,
        lambda_min_raw: 1.0,
    }
}

/// The normalization transform selected by `cfg.mode` for the current
/// posterior (identity for raw gradients).
pub fn mode_transform(state: &NiwState, cfg: &EditorConfig) -> Result<WhiteningTransform> {
    let est = state.posterior_estimates();
    match cfg.mode {
        EditorMode::RawGradient => Ok(identity_transform(state.dim())),
        EditorMode::DiagonalNorm => {
            build_diagonal_transform(&est.mu_hat, &est.sigma_hat, cfg.floor)
        }
        EditorMode::FullWhitening => build_transform(&est.mu_hat, &est.sigma_hat, cfg.floor),
    }
}

/// `w·(v − c)` for every column, then the optional hook.
fn normalize(
    w: &DMatrix<f64>,
    center: &DVector<f64>,
    v: &DMatrix<f64>,
    hook: Option<LipschitzHook>,
) -> DMatrix<f64> {
    let mut centered = v.clone();
    for mut col in centered.column_iter_mut() {
        col -= center;
    }
    let out = w * centered;
    match hook {
        Some(hk) => hk.apply_matrix(&out),
        None => out,
    }
}

/// Solve for the update of one step. `state` must already include this
/// batch. When `true_mean` is given, `Δ` is split into the part driven by
/// instance-specific deviations `vⁱ − μ` and the remainder caused by the
/// mean-estimation error.
pub fn solve_update(
    batch: &EditBatch,
    state: &NiwState,
    cfg: &EditorConfig,
    true_mean: Option<&DVector<f64>>,
) -> Result<EditSolution> {
    cfg.validate()?;
    let transform = mode_transform(state, cfg)?;
    solve_with_transform(batch, state, cfg, transform, true_mean)
}

/// [`solve_update`] with a transform the caller already built.
pub fn solve_with_transform(
    batch: &EditBatch,
    state: &NiwState,
    cfg: &EditorConfig,
    transform: WhiteningTransform,
    true_mean: Option<&DVector<f64>>,
) -> Result<EditSolution> {
    cfg.validate()?;
    batch.validate()?;
    let d = state.dim();
    if batch.v_raw.nrows() != d {
        return Err(Error::dim("solve_update gradients", d, batch.v_raw.nrows()));
    }
    if batch.h.nrows() != state.hidden_dim() {
        return Err(Error::dim(
            "solve_update hidden states",
            state.hidden_dim(),
            batch.h.nrows(),
        ));
    }
    if transform.dim() != d {
        return Err(Error::dim("solve_update transform", d, transform.dim()));
    }
    if !is_finite_mat(&batch.h) || !is_finite_mat(&batch.v_raw) {
        return Err(Error::NonFinite("edit batch"));
    }

    let (_, h_tilde_sq) = standardize_h(&batch.h, &state.h_stats)?;
    let v_tilde = normalize(
        &transform.w,
        &transform.mu_hat,
        &batch.v_raw,
        cfg.lipschitz_hook,
    );
    let phi = projection_factors(&batch.h, &h_tilde_sq, cfg.lambda)?;

    // sum form: −γ Σᵢ ṽⁱ φⁱ
    let delta = &v_tilde * &phi * (-cfg.gamma);

    // matrix form: V Hᵀ (HHᵀ + λI)⁻¹
    let mut target = v_tilde.clone();
    for (i, mut col) in target.column_iter_mut().enumerate() {
        col *= -cfg.gamma * h_tilde_sq[i];
    }
    let factor = gram_factor(&batch.h, cfg.lambda)?;
    let matrix_form = factor.solve(&(&batch.h * target.transpose())).transpose();
    let gap = (&matrix_form - &delta).norm();
    if gap.is_nan() || gap > FORM_AGREEMENT_TOL * delta.norm().max(1.0) {
        return Err(Error::Numerical {
            context: "solve_update",
            detail: format!("sum and matrix forms disagree by {gap:e}"),
        });
    }
    if !is_finite_mat(&delta) {
        return Err(Error::NonFinite("update matrix"));
    }

    let mut update = UpdateMatrix::from_delta(delta);
    if let Some(mu) = true_mean {
        if mu.len() != d {
            return Err(Error::dim("solve_update true mean", d, mu.len()));
        }
        let spec_tilde = normalize(&transform.w, mu, &batch.v_raw, cfg.lipschitz_hook);
        let spec = &spec_tilde * &phi * (-cfg.gamma);
        let bias = &update.delta - &spec;
        update.spec_component_norm = Some(spec.norm());
        update.bias_component_norm = Some(bias.norm());
    }

    Ok(EditSolution {
        update,
        transform,
        v_tilde,
        h_tilde_sq,
    })
}
