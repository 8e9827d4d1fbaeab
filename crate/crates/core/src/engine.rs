//! The two-phase editing loop.
//!
//! Every step ingests one batch into the tracker, rebuilds the normalization
//! transform from the updated posterior, solves the ridge update and applies
//! it. Warm-up steps run the same body (optionally without applying the
//! update) and the tracker state carries straight into the target phase.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::checkpoint::load_checkpoint;
use crate::config::{ExperimentConfig, StreamKind, WarmupPlacement, WarmupSource, WarmupVariant};
use crate::diagnostics::{
    cosine_adjacent, cov_spectral_error, mean_mse, median, target_mse, warmup_curve_shift,
    whitened_identity_deviation, CurveShift, StepRecord,
};
use crate::error::{Error, Result};
use crate::linalg::column_covariance;
use crate::niw::NiwState;
use crate::ridge::{mode_transform, solve_with_transform, EditBatch};
use crate::sim::{
    efficacy_retention, EditSet, GroundTruth, LinearTeacherSource, Phase, ScheduledDriftSource,
};
use crate::trace::{ingest_trace, TraceSource};
use crate::whitening::spectral_report;

/// Where a run's batches come from.
#[derive(Debug, Clone)]
pub enum Source {
    Scheduled(ScheduledDriftSource),
    Teacher(LinearTeacherSource),
    Trace(TraceSource),
}

struct Drawn {
    batch: EditBatch,
    truth: Option<GroundTruth>,
    edits: Option<EditSet>,
}

impl Source {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<Self> {
        let shift = match cfg.warmup_source {
            WarmupSource::Same => 0.0,
            WarmupSource::Separate => cfg.warmup_shift,
        };
        Ok(match &cfg.stream {
            StreamKind::Scheduled => Source::Scheduled(
                ScheduledDriftSource::new(cfg.scheduled.clone(), cfg.seed)?
                    .with_warmup_shift(shift),
            ),
            StreamKind::LinearTeacher => Source::Teacher(
                LinearTeacherSource::new(cfg.teacher.clone(), cfg.seed)?.with_warmup_shift(shift),
            ),
            StreamKind::Trace(path) => {
                let t = ingest_trace(path)?;
                if t.d != cfg.d || t.d_h != cfg.d_h {
                    return Err(Error::config(
                        "stream",
                        format!(
                            "trace has d={}, d_h={}, config has d={}, d_h={}",
                            t.d, t.d_h, cfg.d, cfg.d_h
                        ),
                    ));
                }
                let needed = cfg.steps + cfg.effective_warmup();
                if t.remaining() < needed {
                    return Err(Error::config(
                        "steps",
                        format!("trace has {} steps, run needs {needed}", t.remaining()),
                    ));
                }
                Source::Trace(t)
            }
        })
    }

    fn draw(&mut self, phase: Phase, index: u64, global: u64, n: usize) -> Result<Drawn> {
        match self {
            Source::Scheduled(s) => {
                let (batch, truth) = s.next_batch(phase, index, global, n)?;
                Ok(Drawn {
                    batch,
                    truth: Some(truth),
                    edits: None,
                })
            }
            Source::Teacher(s) => {
                let (batch, truth, edits) = s.next_batch(phase, index, n)?;
                Ok(Drawn {
                    batch,
                    truth: Some(truth),
                    edits: Some(edits),
                })
            }
            Source::Trace(s) => {
                let batch = s.next_batch().ok_or(Error::Empty("trace exhausted"))?;
                Ok(Drawn {
                    batch,
                    truth: None,
                    edits: None,
                })
            }
        }
    }
}

/// Matrices behind one [`StepRecord`].
#[derive(Debug, Clone)]
pub struct StepLog {
    pub batch: EditBatch,
    pub prev_mu_hat: nalgebra::DVector<f64>,
    pub prev_sigma_hat: DMatrix<f64>,
    pub mu_hat: nalgebra::DVector<f64>,
    pub sigma_hat: DMatrix<f64>,
    /// Normalization matrix used this step (identity for raw gradients).
    pub transform_w: DMatrix<f64>,
    pub transform_center: nalgebra::DVector<f64>,
    pub delta: Option<DMatrix<f64>>,
    pub truth: Option<GroundTruth>,
}

/// Mutable state of a run between steps.
#[derive(Debug, Clone)]
pub struct Engine {
    cfg: ExperimentConfig,
    pub niw: NiwState,
    pub source: Source,
    /// Editable matrix: the teacher's `W`, or the running sum of updates for
    /// streams without a model.
    pub model: DMatrix<f64>,
    prev_delta: Option<DMatrix<f64>>,
    prev_edits: Option<EditSet>,
    steps_done: usize,
    warmup_done: usize,
    target_done: usize,
    pub warmup_updates_applied: usize,
}

impl Engine {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.validate()?;
        let niw = match &cfg.checkpoint_in {
            Some(path) => {
                let s = load_checkpoint(path)?;
                if s.dim() != cfg.d || s.hidden_dim() != cfg.d_h {
                    return Err(Error::config(
                        "checkpoint_in",
                        "checkpoint dimensions differ from d/d_h",
                    ));
                }
                s
            }
            None => NiwState::init_prior(cfg.d, cfg.d_h, cfg.epsilon0)?,
        };
        let source = Source::from_config(&cfg)?;
        Ok(Self::with_parts(cfg, niw, source))
    }

    pub fn with_parts(cfg: ExperimentConfig, niw: NiwState, source: Source) -> Self {
        let model = match &source {
            Source::Teacher(t) => t.w_edit().clone(),
            _ => DMatrix::zeros(cfg.d, cfg.d_h),
        };
        Self {
            cfg,
            niw,
            source,
            model,
            prev_delta: None,
            prev_edits: None,
            steps_done: 0,
            warmup_done: 0,
            target_done: 0,
            warmup_updates_applied: 0,
        }
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Run one edit step. On error nothing is committed.
    pub fn edit_step(&mut self, phase: Phase, stats_only: bool) -> Result<(StepRecord, StepLog)> {
        let global = self.cfg.start_step + self.steps_done as u64 + 1;
        let (index, phase_step) = match phase {
            Phase::Warmup => (self.warmup_done as u64 + 1, self.warmup_done + 1),
            Phase::Target => {
                let i = self.cfg.start_step + self.target_done as u64 + 1;
                (i, i as usize)
            }
        };
        let mut source = self.source.clone();
        let drawn = source.draw(phase, index, global, self.cfg.n)?;
        let batch = drawn.batch;
        if batch.v_raw.nrows() != self.cfg.d || batch.h.nrows() != self.cfg.d_h {
            return Err(Error::dim(
                "edit_step batch",
                self.cfg.d,
                batch.v_raw.nrows(),
            ));
        }

        let prev_est = self.niw.posterior_estimates();
        let niw = self.niw.ingest(&batch.h, &batch.v_raw)?;
        let est = niw.posterior_estimates();
        let editor = &self.cfg.editor;
        let spectrum = spectral_report(&est.sigma_hat, editor.floor.abs_floor)?;
        let transform = mode_transform(&niw, editor)?;

        let whiten_identity_dev = match &drawn.truth {
            Some(t) => whitened_identity_deviation(&transform.w, &t.sigma)?,
            None => {
                let whitened = transform.whiten_columns(&batch.v_raw)?;
                let cov = column_covariance(&whitened);
                whitened_identity_deviation(&DMatrix::identity(self.cfg.d, self.cfg.d), &cov)?
            }
        };
        let (mse, cov_err) = match &drawn.truth {
            Some(t) => (
                Some(mean_mse(&est.mu_hat, &t.mu)?),
                Some(cov_spectral_error(&est.sigma_hat, &t.sigma)?),
            ),
            None => (None, None),
        };

        let mut record = StepRecord {
            step: global as usize,
            phase,
            phase_step,
            mean_mse: mse,
            cov_spec_err: cov_err,
            mu_drift: (&est.mu_hat - &prev_est.mu_hat).norm(),
            sigma_drift: (&est.sigma_hat - &prev_est.sigma_hat).norm(),
            update_fro_norm: None,
            cos_prev: None,
            cond_number: spectrum.condition_number,
            lambda_max: spectrum.lambda_max,
            whiten_identity_dev,
            efficacy: None,
            retention: None,
            bias_norm: None,
            spec_norm: None,
        };
        let transform_w = transform.w.clone();
        let transform_center = transform.mu_hat.clone();

        let mut model = self.model.clone();
        let mut delta_out = None;
        if !stats_only {
            let true_mean = drawn.truth.as_ref().map(|t| &t.mu);
            let sol =
                solve_with_transform(&batch, &niw, editor, transform, true_mean).map_err(|e| {
                    match e {
                        Error::Numerical { context, detail } => Error::Numerical {
                            context,
                            detail: format!(
                                "{detail}; cond(Σ̂) = {:e}, λ_max = {:e}",
                                spectrum.condition_number, spectrum.lambda_max
                            ),
                        },
                        other => other,
                    }
                })?;
            let delta = sol.update.delta;
            record.update_fro_norm = Some(sol.update.fro_norm);
            record.bias_norm = sol.update.bias_component_norm;
            record.spec_norm = sol.update.spec_component_norm;
            if let Some(prev) = &self.prev_delta {
                record.cos_prev = cosine_adjacent(&delta, prev)?;
            }
            match &mut source {
                Source::Teacher(teacher) => {
                    let w_before = teacher.w_edit().clone();
                    teacher.apply_update(&delta)?;
                    let w_after = teacher.w_edit().clone();
                    if let Some(edits) = &drawn.edits {
                        let held_out = self.prev_edits.as_ref().unwrap_or(edits);
                        let (eff, ret) = efficacy_retention(&w_before, &w_after, edits, held_out)?;
                        record.efficacy = Some(eff);
                        record.retention = self.prev_edits.as_ref().map(|_| ret);
                    }
                    model = w_after;
                }
                _ => model += &delta,
            }
            delta_out = Some(delta);
        }

        let log = StepLog {
            batch,
            prev_mu_hat: prev_est.mu_hat,
            prev_sigma_hat: prev_est.sigma_hat,
            mu_hat: est.mu_hat,
            sigma_hat: est.sigma_hat,
            transform_w,
            transform_center,
            delta: delta_out.clone(),
            truth: drawn.truth,
        };

        // commit
        self.niw = niw;
        self.source = source;
        self.model = model;
        self.prev_delta = delta_out;
        if drawn.edits.is_some() {
            self.prev_edits = drawn.edits;
        }
        self.steps_done += 1;
        match phase {
            Phase::Warmup => {
                self.warmup_done += 1;
                if !stats_only {
                    self.warmup_updates_applied += 1;
                }
            }
            Phase::Target => self.target_done += 1,
        }
        Ok((record, log))
    }
}

/// Phase of every step, in order.
pub fn phase_schedule(cfg: &ExperimentConfig) -> Vec<Phase> {
    let r = cfg.effective_warmup();
    let t = cfg.steps;
    let before = match cfg.warmup_placement {
        WarmupPlacement::Start => 0,
        WarmupPlacement::Fraction(f) => ((f * t as f64).round() as usize).min(t),
    };
    let mut out = Vec::with_capacity(r + t);
    out.extend(std::iter::repeat_n(Phase::Target, before));
    out.extend(std::iter::repeat_n(Phase::Warmup, r));
    out.extend(std::iter::repeat_n(Phase::Target, t - before));
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct CurveShiftSummary {
    pub warmup_steps: usize,
    pub compared_steps: usize,
    pub fraction_warm_le_cold: f64,
    pub median_shifted_ratio: Option<f64>,
}

impl From<&CurveShift> for CurveShiftSummary {
    fn from(c: &CurveShift) -> Self {
        Self {
            warmup_steps: c.warmup_steps,
            compared_steps: c.compared_steps,
            fraction_warm_le_cold: c.fraction_warm_le_cold,
            median_shifted_ratio: c.median_shifted_ratio,
        }
    }
}

/// Aggregates written to `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub stream: String,
    pub mode: String,
    pub target_steps: usize,
    pub warmup_steps: usize,
    pub warmup_variant: String,
    pub warmup_updates_applied: usize,
    pub final_mse: Option<f64>,
    pub final_cov_spec_err: Option<f64>,
    pub mean_abs_cos_second_half: Option<f64>,
    pub max_update_norm: Option<f64>,
    pub median_update_norm: Option<f64>,
    pub curve_shift: Option<CurveShiftSummary>,
}

/// Everything a run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub records: Vec<StepRecord>,
    /// Per-step matrices; empty unless requested.
    pub logs: Vec<StepLog>,
    pub final_state: NiwState,
    pub final_model: DMatrix<f64>,
    pub summary: RunSummary,
}

impl RunReport {
    pub fn target_records(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(|r| r.phase == Phase::Target)
    }

    /// Updates in step order (`None` for statistics-only steps).
    pub fn deltas(&self) -> Vec<Option<&DMatrix<f64>>> {
        self.logs.iter().map(|l| l.delta.as_ref()).collect()
    }
}

/// Mean `|cos|` over the second half of the target phase.
pub fn mean_abs_cos_second_half(records: &[StepRecord]) -> Option<f64> {
    let target: Vec<&StepRecord> = records
        .iter()
        .filter(|r| r.phase == Phase::Target)
        .collect();
    let cos: Vec<f64> = target[target.len() / 2..]
        .iter()
        .filter_map(|r| r.cos_prev.map(f64::abs))
        .collect();
    if cos.is_empty() {
        None
    } else {
        Some(cos.iter().sum::<f64>() / cos.len() as f64)
    }
}

fn summarize(
    cfg: &ExperimentConfig,
    records: &[StepRecord],
    warmup_updates_applied: usize,
) -> RunSummary {
    let target: Vec<&StepRecord> = records
        .iter()
        .filter(|r| r.phase == Phase::Target)
        .collect();
    let norms: Vec<f64> = target.iter().filter_map(|r| r.update_fro_norm).collect();
    RunSummary {
        seed: cfg.seed,
        stream: cfg.stream.to_string(),
        mode: cfg.editor.mode.to_string(),
        target_steps: target.len(),
        warmup_steps: cfg.effective_warmup(),
        warmup_variant: cfg.warmup_variant.to_string(),
        warmup_updates_applied,
        final_mse: target.last().and_then(|r| r.mean_mse),
        final_cov_spec_err: target.last().and_then(|r| r.cov_spec_err),
        mean_abs_cos_second_half: mean_abs_cos_second_half(records),
        max_update_norm: norms.iter().copied().reduce(f64::max),
        median_update_norm: median(&norms),
        curve_shift: None,
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub keep_logs: bool,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunReport> {
    run_experiment_with(cfg, RunOptions::default())
}

/// Run warm-up and target phases. Configuration is validated before any
/// step executes.
pub fn run_experiment_with(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunReport> {
    let mut engine = Engine::new(cfg)?;
    let cfg = engine.config().clone();
    let stats_only_warmup = cfg.warmup_variant == WarmupVariant::StatsOnly;
    let schedule = phase_schedule(&cfg);
    let mut records = Vec::with_capacity(schedule.len());
    let mut logs = Vec::new();
    for phase in schedule {
        let stats_only = phase == Phase::Warmup && stats_only_warmup;
        let step = engine.steps_done + 1;
        let (record, log) = engine
            .edit_step(phase, stats_only)
            .map_err(|e| e.at_step(step))?;
        records.push(record);
        if opts.keep_logs {
            logs.push(log);
        }
    }
    let summary = summarize(&cfg, &records, engine.warmup_updates_applied);
    Ok(RunReport {
        config: cfg,
        records,
        logs,
        final_state: engine.niw,
        final_model: engine.model,
        summary,
    })
}

/// Run a warm-started and a cold-started configuration and compare their
/// target-phase MSE curves.
pub fn pair_runs(
    warm: &ExperimentConfig,
    cold: &ExperimentConfig,
) -> Result<(RunReport, RunReport, CurveShift)> {
    let mismatch = |key: &str| Error::config(key, "warm and cold configs must match");
    if warm.seed != cold.seed {
        return Err(mismatch("seed"));
    }
    if warm.d != cold.d || warm.d_h != cold.d_h {
        return Err(mismatch("d"));
    }
    if warm.n != cold.n {
        return Err(mismatch("n"));
    }
    if warm.stream != cold.stream
        || warm.scheduled != cold.scheduled
        || warm.teacher != cold.teacher
    {
        return Err(mismatch("stream"));
    }
    if warm.editor != cold.editor {
        return Err(mismatch("mode"));
    }
    if cold.effective_warmup() != 0 {
        return Err(Error::config(
            "warmup_steps",
            "cold config must not warm up",
        ));
    }
    let warm_report = run_experiment(warm)?;
    let mut cold_report = run_experiment(cold)?;
    let shift = warmup_curve_shift(
        &target_mse(&warm_report.records)?,
        &target_mse(&cold_report.records)?,
        warm.effective_warmup(),
    )?;
    cold_report.summary.curve_shift = Some((&shift).into());
    let mut warm_report = warm_report;
    warm_report.summary.curve_shift = Some((&shift).into());
    Ok((warm_report, cold_report, shift))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut c = ExperimentConfig {
            d: 3,
            d_h: 4,
            n: 20,
            steps: 10,
            ..ExperimentConfig::default()
        };
        c.validate().unwrap();
        c
    }

    #[test]
    fn schedule_places_warmup() {
        let mut c = small();
        c.warmup_steps = 2;
        c.steps = 4;
        assert_eq!(
            phase_schedule(&c),
            vec![
                Phase::Warmup,
                Phase::Warmup,
                Phase::Target,
                Phase::Target,
                Phase::Target,
                Phase::Target
            ]
        );
        c.warmup_placement = WarmupPlacement::Fraction(0.5);
        assert_eq!(
            phase_schedule(&c),
            vec![
                Phase::Target,
                Phase::Target,
                Phase::Warmup,
                Phase::Warmup,
                Phase::Target,
                Phase::Target
            ]
        );
        c.warmup_variant = WarmupVariant::None;
        assert_eq!(phase_schedule(&c).len(), 4);
    }

    #[test]
    fn first_step_is_finite_and_unclamped() {
        let c = small();
        let mut e = Engine::new(&c).unwrap();
        let (rec, log) = e.edit_step(Phase::Target, false).unwrap();
        assert!(e.niw.nu > (c.d + 1) as f64 + 1.0);
        assert!(!e.niw.posterior_estimates().clamped);
        assert!(rec.update_fro_norm.unwrap().is_finite());
        assert!(rec.cos_prev.is_none());
        assert!(log.delta.unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn stats_only_leaves_model_alone() {
        let mut c = small();
        c.stream = StreamKind::LinearTeacher;
        c.validate().unwrap();
        let mut e = Engine::new(&c).unwrap();
        let w0 = e.model.clone();
        let niw0 = e.niw.clone();
        let (rec, log) = e.edit_step(Phase::Warmup, true).unwrap();
        assert_eq!(e.model, w0);
        assert_ne!(e.niw, niw0);
        assert!(rec.update_fro_norm.is_none());
        assert!(log.delta.is_none());
        assert_eq!(e.warmup_updates_applied, 0);
    }

    #[test]
    fn failed_step_commits_nothing() {
        let c = small();
        let mut e = Engine::new(&c).unwrap();
        e.edit_step(Phase::Target, false).unwrap();
        let before = (e.niw.clone(), e.model.clone(), e.steps_done);
        // poison the editor so the solve fails after the tracker update
        e.cfg.editor.lambda = -1.0;
        assert!(e.edit_step(Phase::Target, false).is_err());
        assert_eq!((e.niw.clone(), e.model.clone(), e.steps_done), before);
    }

    #[test]
    fn repeated_runs_are_identical() {
        let c = small();
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn pair_rejects_mismatched_seeds() {
        let warm = small();
        let mut cold = small();
        cold.seed = 99;
        assert!(pair_runs(&warm, &cold).is_err());
    }
}
