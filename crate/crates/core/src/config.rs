//! Experiment configuration: flat `key = value` files plus overrides.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! errors. Overrides use the same syntax and are applied after the file.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::ridge::{EditorConfig, EditorMode, LipschitzHook};
use crate::sim::{LinearTeacherConfig, ScheduledDriftConfig};
use crate::whitening::FloorConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmupVariant {
    /// Warm-up edits update the statistics and apply their updates.
    Full,
    /// Warm-up edits update the statistics only.
    StatsOnly,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WarmupSource {
    Same,
    /// Warm-up batches come from a shifted distribution (see `warmup_shift`).
    Separate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WarmupPlacement {
    Start,
    /// Insert the warm-up after this fraction of the target steps.
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StreamKind {
    Scheduled,
    LinearTeacher,
    Trace(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub d: usize,
    pub d_h: usize,
    pub n: usize,
    pub steps: usize,
    pub warmup_steps: usize,
    pub warmup_variant: WarmupVariant,
    pub warmup_source: WarmupSource,
    pub warmup_shift: f64,
    pub warmup_placement: WarmupPlacement,
    pub editor: EditorConfig,
    pub epsilon0: f64,
    pub stream: StreamKind,
    pub scheduled: ScheduledDriftConfig,
    pub teacher: LinearTeacherConfig,
    pub seed: u64,
    /// Target steps already consumed by an earlier run whose checkpoint is
    /// used as the prior.
    pub start_step: u64,
    pub checkpoint_in: Option<PathBuf>,
    pub checkpoint_out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            d: 8,
            d_h: 16,
            n: 100,
            steps: 200,
            warmup_steps: 0,
            warmup_variant: WarmupVariant::Full,
            warmup_source: WarmupSource::Same,
            warmup_shift: 0.0,
            warmup_placement: WarmupPlacement::Start,
            editor: EditorConfig::default(),
            epsilon0: 1e-6,
            stream: StreamKind::Scheduled,
            scheduled: ScheduledDriftConfig::default(),
            teacher: LinearTeacherConfig::default(),
            seed: 0,
            start_step: 0,
            checkpoint_in: None,
            checkpoint_out: None,
        }
    }
}

fn parse_num<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

impl ExperimentConfig {
    /// Number of warm-up steps that will actually run.
    pub fn effective_warmup(&self) -> usize {
        match self.warmup_variant {
            WarmupVariant::None => 0,
            _ => self.warmup_steps,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "d" => self.d = parse_num(key, v)?,
            "d_h" => self.d_h = parse_num(key, v)?,
            "n" => self.n = parse_num(key, v)?,
            "steps" => self.steps = parse_num(key, v)?,
            "warmup_steps" => self.warmup_steps = parse_num(key, v)?,
            "warmup_variant" => {
                self.warmup_variant = match v {
                    "full" => WarmupVariant::Full,
                    "stats_only" => WarmupVariant::StatsOnly,
                    "none" => WarmupVariant::None,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected full, stats_only or none, got `{v}`"),
                        ))
                    }
                }
            }
            "warmup_source" => {
                self.warmup_source = match v {
                    "same" => WarmupSource::Same,
                    "separate" => WarmupSource::Separate,
                    _ => {
                        return Err(Error::config(
                            key,
                            format!("expected same or separate, got `{v}`"),
                        ))
                    }
                }
            }
            "warmup_shift" => self.warmup_shift = parse_num(key, v)?,
            "warmup_placement" => {
                self.warmup_placement = if v == "start" {
                    WarmupPlacement::Start
                } else {
                    WarmupPlacement::Fraction(parse_num(key, v)?)
                }
            }
            "mode" => {
                self.editor.mode = v.parse::<EditorMode>().map_err(|e| Error::config(key, e))?
            }
            "gamma" => self.editor.gamma = parse_num(key, v)?,
            "lambda" => self.editor.lambda = parse_num(key, v)?,
            "hook" => {
                self.editor.lipschitz_hook = if v == "none" {
                    None
                } else {
                    Some(
                        v.parse::<LipschitzHook>()
                            .map_err(|e| Error::config(key, e))?,
                    )
                }
            }
            "abs_floor" => self.editor.floor.abs_floor = parse_num(key, v)?,
            "rel_floor" => self.editor.floor.rel_floor = parse_num(key, v)?,
            "epsilon0" => self.epsilon0 = parse_num(key, v)?,
            "stream" => {
                self.stream = match v {
                    "scheduled" => StreamKind::Scheduled,
                    "linear_teacher" => StreamKind::LinearTeacher,
                    _ => match v.strip_prefix("trace:") {
                        Some(p) if !p.is_empty() => StreamKind::Trace(PathBuf::from(p)),
                        _ => {
                            return Err(Error::config(
                                key,
                                format!(
                                    "expected scheduled, linear_teacher or trace:<path>, got `{v}`"
                                ),
                            ))
                        }
                    },
                }
            }
            "seed" => self.seed = parse_num(key, v)?,
            "start_step" => self.start_step = parse_num(key, v)?,
            "checkpoint_in" => self.checkpoint_in = (!v.is_empty()).then(|| PathBuf::from(v)),
            "checkpoint_out" => self.checkpoint_out = (!v.is_empty()).then(|| PathBuf::from(v)),
            "c_mu" => self.scheduled.c_mu = parse_num(key, v)?,
            "c_sigma" => self.scheduled.c_sigma = parse_num(key, v)?,
            "eps_mu" => self.scheduled.eps_mu = parse_num(key, v)?,
            "eps_sigma" => self.scheduled.eps_sigma = parse_num(key, v)?,
            "drift_offset" => self.scheduled.r_offset = parse_num(key, v)?,
            "sigma_min" => self.scheduled.sigma_min = parse_num(key, v)?,
            "sigma_max" => self.scheduled.sigma_max = parse_num(key, v)?,
            "init_mu_scale" => self.scheduled.init_mu_scale = parse_num(key, v)?,
            "init_eig_min" => self.scheduled.init_eig_min = parse_num(key, v)?,
            "init_eig_max" => self.scheduled.init_eig_max = parse_num(key, v)?,
            "mu_h_norm" => self.teacher.mu_h_norm = parse_num(key, v)?,
            "b_norm" => self.teacher.b_norm = parse_num(key, v)?,
            "noise_std" => self.teacher.noise_std = parse_num(key, v)?,
            "w_init_scale" => self.teacher.w_init_scale = parse_num(key, v)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (k, v) = spec
            .split_once('=')
            .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
        self.set(k.trim(), v)?;
        Ok(())
    }

    /// Parse config text on top of the defaults, then validate.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.merge_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply every line of `text` without validating.
    pub fn merge_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::ConfigLine {
                line: i + 1,
                key: line.to_string(),
                reason: "expected key = value".into(),
            })?;
            let key = k.trim();
            self.set(key, v).map_err(|e| match e {
                Error::Config { key, reason } => Error::ConfigLine {
                    line: i + 1,
                    key,
                    reason,
                },
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::load_with_overrides(path, &[])
    }

    /// Read a config file, apply overrides, then validate once.
    pub fn load_with_overrides(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.merge_text(&text)?;
        for o in overrides {
            cfg.apply_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Check every parameter and push the shared dimensions into the
    /// per-stream configs.
    pub fn validate(&mut self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::config("d", "must be at least 1"));
        }
        if self.d_h == 0 {
            return Err(Error::config("d_h", "must be at least 1"));
        }
        if self.n == 0 {
            return Err(Error::config("n", "must be at least 1"));
        }
        if self.steps == 0 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if !self.warmup_shift.is_finite() {
            return Err(Error::config("warmup_shift", "must be finite"));
        }
        if let WarmupPlacement::Fraction(f) = self.warmup_placement {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::config(
                    "warmup_placement",
                    "fraction must lie in (0, 1)",
                ));
            }
        }
        if !(self.epsilon0 > 0.0 && self.epsilon0.is_finite()) {
            return Err(Error::config("epsilon0", "must be positive and finite"));
        }
        self.editor.validate()?;
        FloorConfig::new(self.editor.floor.abs_floor, self.editor.floor.rel_floor)?;
        self.scheduled.d = self.d;
        self.scheduled.d_h = self.d_h;
        self.teacher.d = self.d;
        self.teacher.d_h = self.d_h;
        match self.stream {
            StreamKind::Scheduled => self.scheduled.validate()?,
            StreamKind::LinearTeacher => self.teacher.validate()?,
            StreamKind::Trace(_) => {}
        }
        if self.start_step > 0 && self.checkpoint_in.is_none() {
            return Err(Error::config("start_step", "requires checkpoint_in"));
        }
        Ok(())
    }

    /// Same experiment with a different seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c
    }
}

impl fmt::Display for WarmupVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WarmupVariant::Full => "full",
            WarmupVariant::StatsOnly => "stats_only",
            WarmupVariant::None => "none",
        })
    }
}

impl fmt::Display for StreamKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamKind::Scheduled => f.write_str("scheduled"),
            StreamKind::LinearTeacher => f.write_str("linear_teacher"),
            StreamKind::Trace(p) => write!(f, "trace:{}", p.display()),
        }
    }
}
