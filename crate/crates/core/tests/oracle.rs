mod common;

use common::*;
use lnedit::linalg::sym_eigen;
use lnedit::niw::{summarize_batch, NiwState};
use lnedit::oracle;
use lnedit::sim::{LinearTeacherConfig, LinearTeacherSource};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[test]
fn power_iteration_matches_eigendecomposition() {
    let mut rng = rng(50);
    for _ in 0..20 {
        let a = gaussian(&mut rng, 8, 8);
        let s = (&a + a.transpose()) * 0.5;
        let eig = sym_eigen(&s).unwrap().values;
        let expected = eig.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let got = oracle::power_iteration_specnorm(&s, 1_000_000, 1e-14).unwrap();
        assert!((got - expected).abs() < 1e-8, "{got} vs {expected}");
    }
}

#[test]
fn batch_posterior_single_batch_is_one_update() {
    let mut rng = rng(51);
    let prior = NiwState::init_prior(3, 1, 1e-3).unwrap();
    let x = gaussian(&mut rng, 3, 9);
    let seq = prior.niw_update(&summarize_batch(&x).unwrap()).unwrap();
    let cols: Vec<DVector<f64>> = x.column_iter().map(|c| c.into_owned()).collect();
    let one = oracle::batch_niw_posterior(&prior, &cols).unwrap();
    assert!(rel_err(&seq.psi, &one.psi) < 1e-12);
    assert!(rel_err_vec(&seq.m, &one.m) < 1e-12);
    assert!(oracle::batch_niw_posterior(&prior, &[]).is_err());
}

#[test]
fn monte_carlo_covers_analytic_mean() {
    let mut rng = rng(52);
    let mut covered = 0;
    let mut total = 0;
    for seed in 0..150 {
        let cfg = LinearTeacherConfig {
            d: 4,
            d_h: 6,
            mu_h_norm: rng.random_range(0.1..3.0),
            b_norm: rng.random_range(0.0..3.0),
            noise_std: rng.random_range(0.0..1.0),
            w_init_scale: rng.random_range(0.1..2.0),
        };
        let src = LinearTeacherSource::new(cfg, seed).unwrap();
        let (mean, se) = oracle::monte_carlo_mean(&src, 1000).unwrap();
        let mu = src.true_mean();
        for i in 0..4 {
            total += 1;
            if (mean[i] - mu[i]).abs() <= 3.0 * se[i] {
                covered += 1;
            }
        }
    }
    let frac = covered as f64 / total as f64;
    assert!(frac >= 0.99, "coverage {frac}");
}

#[test]
fn zero_gradient_teacher_has_zero_mean() {
    let src = LinearTeacherSource::from_parts(
        DMatrix::zeros(3, 4),
        DVector::from_element(4, 1.0),
        DVector::zeros(3),
        0.0,
        1,
    )
    .unwrap();
    let (mean, se) = oracle::monte_carlo_mean(&src, 200).unwrap();
    assert_eq!(mean, DVector::zeros(3));
    assert_eq!(se, DVector::zeros(3));
}

#[test]
fn noiseless_teacher_error_comes_from_hidden_states() {
    let mut rng = rng(53);
    let w = gaussian(&mut rng, 3, 5);
    let src = LinearTeacherSource::from_parts(
        w.clone(),
        DVector::from_element(5, 0.5),
        DVector::zeros(3),
        0.0,
        2,
    )
    .unwrap();
    let n = 20_000;
    let (mean, se) = oracle::monte_carlo_mean(&src, n).unwrap();
    let mu = src.true_mean();
    for i in 0..3 {
        let expected_se = (w.row(i).norm_squared() / n as f64).sqrt();
        assert!((se[i] / expected_se - 1.0).abs() < 0.05);
        assert!((mean[i] - mu[i]).abs() <= 4.0 * se[i]);
    }
    assert!(oracle::monte_carlo_mean(&src, 99).is_err());
}
