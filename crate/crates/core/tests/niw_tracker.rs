mod common;

use common::*;
use lnedit::linalg::sym_eigen;
use lnedit::niw::{summarize_batch, summarize_vectors, DiagStats, NiwState};
use lnedit::oracle;
use lnedit::sim::derived_rng;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

#[test]
fn scatter_matches_naive_double_loop() {
    let mut rng = rng(1);
    let vs: Vec<DVector<f64>> = (0..50).map(|_| gaussian_vec(&mut rng, 4) * 2.0).collect();
    let s = summarize_vectors(&vs).unwrap();
    let cols = DMatrix::from_columns(&vs);
    let naive = oracle::naive_scatter(&cols);
    assert!((&s.scatter - &naive).amax() < 1e-10);
}

#[test]
fn twenty_sequential_batches_match_one_shot() {
    let mut rng = rng(2);
    let d = 5;
    let mut state = NiwState::init_prior(d, 2, 1e-6).unwrap();
    let prior = state.clone();
    let mut all = Vec::new();
    for t in 0..20 {
        let x = gaussian(&mut rng, d, 3 + t % 7).add_scalar(0.5);
        state = state.niw_update(&summarize_batch(&x).unwrap()).unwrap();
        all.extend(x.column_iter().map(|c| c.into_owned()));
    }
    let one = oracle::batch_niw_posterior(&prior, &all).unwrap();
    assert!(rel_err_vec(&state.m, &one.m) < 1e-9);
    assert!(rel_err(&state.psi, &one.psi) < 1e-9);
    assert_eq!(state.kappa, one.kappa);
    assert_eq!(state.nu, one.nu);
}

#[test]
fn stationary_stream_covariance_converges() {
    let mut rng = derived_rng(3, 99, 0);
    let sd = DVector::from_vec(vec![1.0, 2.0]);
    let mut state = NiwState::init_prior(2, 1, 1e-6).unwrap();
    let mut all = DMatrix::zeros(2, 0);
    for _ in 0..500 {
        let mut x = gaussian(&mut rng, 2, 50);
        for mut c in x.column_iter_mut() {
            c.component_mul_assign(&sd);
        }
        state = state.ingest(&DMatrix::zeros(1, 50), &x).unwrap();
        let k = all.ncols();
        all = all.insert_columns(k, 50, 0.0);
        all.columns_mut(k, 50).copy_from(&x);
    }
    let est = state.posterior_estimates();
    let truth = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]));
    let err = oracle::power_iteration_specnorm(&(&est.sigma_hat - &truth), 10_000, 1e-12).unwrap();
    assert!(err < 0.15, "spectral error {err}");
    // and it sits close to the plain sample covariance of everything seen
    let sample = oracle::sample_covariance(&all);
    assert!((&est.sigma_hat - &sample).amax() < 1e-3);
}

#[test]
fn diag_stats_match_naive_recompute() {
    let mut rng = rng(4);
    let mut stats = DiagStats::zeros(3);
    let mut hist = DMatrix::zeros(3, 0);
    for t in 0..10 {
        let x =
            gaussian(&mut rng, 3, 1 + t) * (1.0 + t as f64) + DMatrix::from_element(3, 1 + t, 10.0);
        stats = stats.update(&x).unwrap();
        let k = hist.ncols();
        hist = hist.insert_columns(k, x.ncols(), 0.0);
        hist.columns_mut(k, x.ncols()).copy_from(&x);
        let naive = oracle::naive_diag_stats(&hist);
        assert!((&stats.mean - &naive.mean).amax() < 1e-10);
        assert!(rel_err_vec(&stats.ssd, &naive.ssd) < 1e-10);
        assert_eq!(stats.count, naive.count);
    }
}

fn arb_batches() -> impl Strategy<Value = (usize, Vec<Vec<f64>>, u64)> {
    (
        1usize..=6,
        prop::collection::vec(1usize..=12, 1..=15),
        any::<u64>(),
    )
        .prop_map(|(d, sizes, seed)| {
            let mut rng = rng(seed);
            let batches = sizes
                .iter()
                .map(|&n| gaussian(&mut rng, d, n).as_slice().to_vec())
                .collect();
            (d, batches, seed)
        })
}

fn to_mats(d: usize, batches: &[Vec<f64>]) -> Vec<DMatrix<f64>> {
    batches
        .iter()
        .map(|b| DMatrix::from_column_slice(d, b.len() / d, b))
        .collect()
}

fn random_prior(d: usize, seed: u64) -> NiwState {
    let mut rng = rng(seed ^ 0x5eed);
    NiwState {
        m: gaussian_vec(&mut rng, d),
        kappa: 0.7,
        psi: random_spd(&mut rng, d, 0.2, 2.0),
        nu: d as f64 + 1.5,
        h_stats: DiagStats::zeros(1),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn recursion_equals_one_shot((d, batches, seed) in arb_batches()) {
        let prior = random_prior(d, seed);
        let mats = to_mats(d, &batches);
        let mut seq = prior.clone();
        let mut all = Vec::new();
        for x in &mats {
            seq = seq.niw_update(&summarize_batch(x).unwrap()).unwrap();
            all.extend(x.column_iter().map(|c| c.into_owned()));
        }
        let one = oracle::batch_niw_posterior(&prior, &all).unwrap();
        prop_assert!(rel_err_vec(&seq.m, &one.m) < 1e-9);
        prop_assert!(rel_err(&seq.psi, &one.psi) < 1e-9);
        prop_assert!((seq.kappa - one.kappa).abs() < 1e-9 * one.kappa);
        prop_assert!((seq.nu - one.nu).abs() < 1e-9 * one.nu);
    }

    #[test]
    fn kappa_nu_depend_only_on_count((d, batches, seed) in arb_batches()) {
        let prior = random_prior(d, seed);
        let mats = to_mats(d, &batches);
        let total: usize = mats.iter().map(|m| m.ncols()).sum();
        let mut seq = prior.clone();
        for x in mats.iter().rev() {
            seq = seq.niw_update(&summarize_batch(x).unwrap()).unwrap();
        }
        prop_assert_eq!(seq.kappa, prior.kappa + total as f64);
        prop_assert_eq!(seq.nu, prior.nu + total as f64);
    }

    #[test]
    fn psi_grows_and_mean_is_convex((d, batches, seed) in arb_batches()) {
        let mut state = random_prior(d, seed);
        for x in to_mats(d, &batches) {
            let s = summarize_batch(&x).unwrap();
            let next = state.niw_update(&s).unwrap();
            let diff = &next.psi - &state.psi;
            let min_eig = *sym_eigen(&diff).unwrap().values.as_slice().last().unwrap();
            prop_assert!(min_eig >= -1e-10 * next.psi.norm().max(1.0), "min eig {}", min_eig);
            // m' lies on the segment from m to the batch mean
            let w = s.n as f64 / next.kappa;
            let expect = &state.m * (1.0 - w) + &s.v_bar * w;
            prop_assert!(rel_err_vec(&next.m, &expect) < 1e-12);
            prop_assert!((0.0..=1.0).contains(&w));
            state = next;
        }
    }
}
