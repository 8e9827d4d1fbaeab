#![allow(dead_code)]

use lnedit::engine::{run_experiment_with, RunOptions, RunReport};
use lnedit::ExperimentConfig;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn gaussian_vec(rng: &mut impl Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal))
}

/// Random SPD matrix with eigenvalues drawn from `[lo, hi]`.
pub fn random_spd(rng: &mut impl Rng, d: usize, lo: f64, hi: f64) -> DMatrix<f64> {
    let q = gaussian(rng, d, d).qr().q();
    let eig = DVector::from_fn(d, |_, _| rng.random_range(lo..=hi));
    let m = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

pub fn rel_err_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1.0)
}

/// Run `cfg` once per seed, in parallel.
pub fn run_seeds(
    cfg: &ExperimentConfig,
    seeds: impl IntoIterator<Item = u64>,
    keep_logs: bool,
) -> Vec<RunReport> {
    let seeds: Vec<u64> = seeds.into_iter().collect();
    std::thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let c = cfg.with_seed(seed);
                s.spawn(move || {
                    run_experiment_with(&c, RunOptions { keep_logs }).expect("run failed")
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run panicked"))
            .collect()
    })
}

pub fn stationary(d: usize, n: usize, steps: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        d,
        n,
        steps,
        ..ExperimentConfig::default()
    };
    c.validate().unwrap();
    c
}

pub fn teacher(steps: usize) -> ExperimentConfig {
    let mut c = ExperimentConfig {
        steps,
        stream: lnedit::config::StreamKind::LinearTeacher,
        ..ExperimentConfig::default()
    };
    c.validate().unwrap();
    c
}
