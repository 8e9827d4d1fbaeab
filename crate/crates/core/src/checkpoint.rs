//! JSON checkpoints of the tracker state (`version` 1).

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::niw::{DiagStats, NiwState};

pub const CHECKPOINT_VERSION: i64 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct CheckpointFile {
    version: i64,
    d: usize,
    d_h: usize,
    kappa: f64,
    nu: f64,
    m: Vec<f64>,
    psi: Vec<Vec<f64>>,
    h_mean: Vec<f64>,
    h_ssd: Vec<f64>,
    h_count: u64,
}

fn check_finite(field: &'static str, xs: impl IntoIterator<Item = f64>) -> Result<()> {
    if xs.into_iter().all(f64::is_finite) {
        Ok(())
    } else {
        Err(Error::CheckpointNonFinite(field))
    }
}

pub fn to_json(state: &NiwState) -> Result<String> {
    check_finite("kappa", [state.kappa])?;
    check_finite("nu", [state.nu])?;
    check_finite("m", state.m.iter().copied())?;
    check_finite("psi", state.psi.iter().copied())?;
    check_finite("h_mean", state.h_stats.mean.iter().copied())?;
    check_finite("h_ssd", state.h_stats.ssd.iter().copied())?;
    let d = state.dim();
    let file = CheckpointFile {
        version: CHECKPOINT_VERSION,
        d,
        d_h: state.hidden_dim(),
        kappa: state.kappa,
        nu: state.nu,
        m: state.m.iter().copied().collect(),
        psi: (0..d)
            .map(|i| state.psi.row(i).iter().copied().collect())
            .collect(),
        h_mean: state.h_stats.mean.iter().copied().collect(),
        h_ssd: state.h_stats.ssd.iter().copied().collect(),
        h_count: state.h_stats.count,
    };
    serde_json::to_string_pretty(&file).map_err(|e| Error::CheckpointMalformed(e.to_string()))
}

pub fn from_json(text: &str) -> Result<NiwState> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| Error::CheckpointMalformed(e.to_string()))?;
    let version = value
        .get("version")
        .and_then(serde_json::Value::as_i64)
        .ok_or_else(|| Error::CheckpointMalformed("missing integer field `version`".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion(version));
    }
    let file: CheckpointFile =
        serde_json::from_value(value).map_err(|e| Error::CheckpointMalformed(e.to_string()))?;

    let malformed = |what: String| Error::CheckpointMalformed(what);
    if file.d == 0 || file.d_h == 0 {
        return Err(malformed("d and d_h must be positive".into()));
    }
    if file.m.len() != file.d {
        return Err(malformed(format!(
            "m has {} entries, expected {}",
            file.m.len(),
            file.d
        )));
    }
    if file.psi.len() != file.d || file.psi.iter().any(|r| r.len() != file.d) {
        return Err(malformed(format!("psi must be {0}x{0}", file.d)));
    }
    if file.h_mean.len() != file.d_h || file.h_ssd.len() != file.d_h {
        return Err(malformed(format!(
            "h_mean/h_ssd must have {} entries",
            file.d_h
        )));
    }
    check_finite("kappa", [file.kappa])?;
    check_finite("nu", [file.nu])?;
    check_finite("m", file.m.iter().copied())?;
    check_finite("psi", file.psi.iter().flatten().copied())?;
    check_finite("h_mean", file.h_mean.iter().copied())?;
    check_finite("h_ssd", file.h_ssd.iter().copied())?;

    let psi = DMatrix::from_fn(file.d, file.d, |i, j| file.psi[i][j]);
    Ok(NiwState {
        m: DVector::from_vec(file.m),
        kappa: file.kappa,
        psi,
        nu: file.nu,
        h_stats: DiagStats {
            mean: DVector::from_vec(file.h_mean),
            ssd: DVector::from_vec(file.h_ssd),
            count: file.h_count,
        },
    })
}

pub fn save_checkpoint(state: &NiwState, path: &Path) -> Result<()> {
    let text = to_json(state)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<NiwState> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}
