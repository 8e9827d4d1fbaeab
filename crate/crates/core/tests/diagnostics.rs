mod common;

use common::*;
use lnedit::diagnostics::{cov_spectral_error, warmup_curve_shift};
use lnedit::engine::{run_experiment_with, RunOptions};
use lnedit::oracle;
use lnedit::ridge::LipschitzHook;
use lnedit::sim::Phase;
use nalgebra::DMatrix;

#[test]
fn cov_error_matches_power_iteration() {
    let mut rng = rng(40);
    for _ in 0..10 {
        let a = random_spd(&mut rng, 6, 0.1, 5.0);
        let b = random_spd(&mut rng, 6, 0.1, 5.0);
        let ours = cov_spectral_error(&a, &b).unwrap();
        let reference = oracle::power_iteration_specnorm(&(&a - &b), 100_000, 1e-14).unwrap();
        assert!((ours - reference).abs() < 1e-8);
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1.0)
}

fn naive_sq_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

/// Every streamed column recomputed from the logged matrices.
fn check_records(hook: Option<LipschitzHook>) {
    let mut cfg = teacher(40);
    cfg.d = 4;
    cfg.d_h = 6;
    cfg.n = 12;
    cfg.warmup_steps = 5;
    cfg.editor.lipschitz_hook = hook;
    cfg.validate().unwrap();
    let r = run_experiment_with(&cfg, RunOptions { keep_logs: true }).unwrap();
    let mut history = DMatrix::zeros(cfg.d_h, 0);
    let mut prev_delta: Option<DMatrix<f64>> = None;
    for (rec, log) in r.records.iter().zip(&r.logs) {
        let k = history.ncols();
        history = history.insert_columns(k, cfg.n, 0.0);
        history.columns_mut(k, cfg.n).copy_from(&log.batch.h);
        let truth = log.truth.as_ref().unwrap();

        let diff: Vec<f64> = (0..cfg.d).map(|i| log.mu_hat[i] - truth.mu[i]).collect();
        assert!(close(rec.mean_mse.unwrap(), naive_sq_norm(&diff), 1e-10));
        let cov_err =
            oracle::power_iteration_specnorm(&(&log.sigma_hat - &truth.sigma), 100_000, 1e-14)
                .unwrap();
        assert!(close(rec.cov_spec_err.unwrap(), cov_err, 1e-8));
        let dm: Vec<f64> = (0..cfg.d)
            .map(|i| log.mu_hat[i] - log.prev_mu_hat[i])
            .collect();
        assert!(close(rec.mu_drift, naive_sq_norm(&dm).sqrt(), 1e-10));
        let ds: Vec<f64> = (&log.sigma_hat - &log.prev_sigma_hat)
            .iter()
            .copied()
            .collect();
        assert!(close(rec.sigma_drift, naive_sq_norm(&ds).sqrt(), 1e-10));

        let lmax = oracle::power_iteration_specnorm(&log.sigma_hat, 100_000, 1e-14).unwrap();
        assert!(close(rec.lambda_max, lmax, 1e-10));
        let shifted = DMatrix::identity(cfg.d, cfg.d) * lmax - &log.sigma_hat;
        let lmin = lmax - oracle::power_iteration_specnorm(&shifted, 100_000, 1e-14).unwrap();
        assert!(close(rec.cond_number, lmax / lmin.max(1e-10), 1e-6));
        let dev = oracle::whitening_reconstruction_error(&log.transform_w, &truth.sigma).unwrap();
        assert!(close(rec.whiten_identity_dev, dev, 1e-8));

        let delta = log.delta.as_ref().unwrap();
        let flat: Vec<f64> = delta.iter().copied().collect();
        assert!(close(
            rec.update_fro_norm.unwrap(),
            naive_sq_norm(&flat).sqrt(),
            1e-10
        ));
        match (&prev_delta, rec.cos_prev) {
            (Some(p), Some(c)) => {
                let dot: f64 = p.iter().zip(delta.iter()).map(|(a, b)| a * b).sum();
                assert!(close(c, dot / (p.norm() * delta.norm()), 1e-10));
            }
            (None, None) => {}
            other => panic!("cos_prev presence mismatch at step {}: {other:?}", rec.step),
        }

        // split of the update into instance-specific and mean-error parts
        let sq = oracle::naive_h_tilde_sq(&history, cfg.n);
        let phi = oracle::dense_projection_factors(&log.batch.h, &sq, cfg.editor.lambda).unwrap();
        let mut spec = DMatrix::zeros(cfg.d, cfg.d_h);
        let mut full = DMatrix::zeros(cfg.d, cfg.d_h);
        for i in 0..cfg.n {
            let v = log.batch.v_raw.column(i);
            let mut a = &log.transform_w * (v - &truth.mu);
            let mut b = &log.transform_w * (v - &log.transform_center);
            if let Some(h) = hook {
                a = a.map(|x| h.apply(x));
                b = b.map(|x| h.apply(x));
            }
            spec -= a * phi.row(i) * cfg.editor.gamma;
            full -= b * phi.row(i) * cfg.editor.gamma;
        }
        assert!((&full - delta).norm() <= 1e-10 * delta.norm().max(1e-300));
        assert!(close(rec.spec_norm.unwrap(), spec.norm(), 1e-8));
        assert!(close(rec.bias_norm.unwrap(), (&full - &spec).norm(), 1e-8));
        prev_delta = Some(delta.clone());
        if rec.phase == Phase::Target {
            assert!(rec.efficacy.is_some());
        }
    }
}

#[test]
fn records_recompute_from_logs() {
    check_records(None);
}

#[test]
fn records_recompute_from_logs_with_hook() {
    check_records(Some(LipschitzHook::Clip(0.5)));
}

#[test]
fn curve_shift_of_identical_curves() {
    let xs: Vec<f64> = (1..=30).map(|t| 1.0 / t as f64).collect();
    let s = warmup_curve_shift(&xs, &xs, 0).unwrap();
    assert_eq!(s.fraction_warm_le_cold, 1.0);
    assert_eq!(s.median_shifted_ratio, Some(1.0));
}
