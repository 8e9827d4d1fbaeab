//! `steps.csv` and float formatting.

use std::io::Write;

use crate::diagnostics::StepRecord;
use crate::error::{Error, Result};

/// Column order of `steps.csv`. `mu_drift` is a Euclidean norm,
/// `sigma_drift` a Frobenius norm and `cov_spec_err` a spectral norm.
pub const CSV_COLUMNS: [&str; 15] = [
    "step",
    "phase",
    "mean_mse",
    "cov_spec_err",
    "mu_drift",
    "sigma_drift",
    "update_fro_norm",
    "cos_prev",
    "cond_number",
    "lambda_max",
    "whiten_identity_dev",
    "efficacy",
    "retention",
    "bias_norm",
    "spec_norm",
];

/// Shortest decimal string that parses back to the same `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        ryu::Buffer::new().format_finite(x).to_string()
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

pub fn record_fields(r: &StepRecord) -> [String; 15] {
    [
        r.step.to_string(),
        r.phase.as_str().to_string(),
        opt(r.mean_mse),
        opt(r.cov_spec_err),
        fmt_f64(r.mu_drift),
        fmt_f64(r.sigma_drift),
        opt(r.update_fro_norm),
        opt(r.cos_prev),
        fmt_f64(r.cond_number),
        fmt_f64(r.lambda_max),
        fmt_f64(r.whiten_identity_dev),
        opt(r.efficacy),
        opt(r.retention),
        opt(r.bias_norm),
        opt(r.spec_norm),
    ]
}

pub fn write_steps_csv(out: impl Write, records: &[StepRecord]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Numerical {
        context: "write_steps_csv",
        detail: e.to_string(),
    };
    let mut wtr = csv::Writer::from_writer(out);
    wtr.write_record(CSV_COLUMNS).map_err(csv_err)?;
    for r in records {
        wtr.write_record(record_fields(r)).map_err(csv_err)?;
    }
    wtr.flush().map_err(|e| Error::io("steps.csv", e))?;
    Ok(())
}
