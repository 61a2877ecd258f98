use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sgkl::coder::{
    soft_threshold, solve_signal_coefficients, sweep_coefficients, CodingOperator, GraphProblem,
    SignalData,
};
use sgkl::experiments::{apply_mask, mean_fill, nmse};
use sgkl::graph::{build_knn_graph, eigendecompose, normalized_laplacian, SpectralDecomposition};
use sgkl::{build_dictionary, AdmmConfig, KernelParamVector, ObservedSignalSet, Weights};

fn spectrum(n: usize, seed: u64) -> (DMatrix<f64>, Arc<SpectralDecomposition>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random(), rng.random()]).collect();
    let g = build_knn_graph(&coords, 3.min(n - 1), 0.4).unwrap();
    let l = normalized_laplacian(&g).unwrap();
    let dec = Arc::new(eigendecompose(&l).unwrap());
    (l, dec)
}

fn arb_psi(j: usize) -> impl Strategy<Value = KernelParamVector> {
    (
        proptest::collection::vec(-0.5f64..2.5, j),
        proptest::collection::vec(1e-3f64..2.0, j),
    )
        .prop_map(|(mu, s)| KernelParamVector::new(mu, s).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn subdictionaries_symmetric_psd_contractive(n in 3usize..14, seed in 0u64..1000, psi in arb_psi(3)) {
        let (_, dec) = spectrum(n, seed);
        let d = build_dictionary(&dec, &psi).unwrap();
        for j in 0..3 {
            let b = d.block(j);
            prop_assert!((&b - b.transpose()).norm() <= 1e-10);
            let eig = b.symmetric_eigenvalues();
            prop_assert!(eig.min() >= -1e-9);
            prop_assert!(eig.max() <= 1.0 + 1e-9);
        }
    }

    #[test]
    fn laplacian_spectrum_in_range(n in 2usize..20, seed in 0u64..1000) {
        let (_, dec) = spectrum(n, seed);
        prop_assert!(dec.eigenvalues.iter().all(|&l| (-1e-10..=2.0 + 1e-10).contains(&l)));
        prop_assert!(dec.eigenvalues.as_slice().windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(dec.eigenvalues[0].abs() <= 1e-10);
    }

    #[test]
    fn soft_threshold_is_the_l1_prox(v in proptest::collection::vec(-5.0f64..5.0, 1..8), tau in 0.0f64..3.0,
                                     probe in proptest::collection::vec(-5.0f64..5.0, 8)) {
        let v = DVector::from_vec(v);
        let p = soft_threshold(&v, tau);
        let phi = |x: &DVector<f64>| 0.5 * (x - &v).norm_squared() + tau * x.lp_norm(1);
        let other = DVector::from_iterator(v.len(), probe.into_iter().take(v.len()));
        prop_assert!(phi(&p) <= phi(&other) + 1e-12);
    }

    #[test]
    fn nmse_is_scale_invariant(seed in 0u64..1000, c in 0.01f64..100.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let truth = DMatrix::from_fn(10, 4, |_, _| rng.random::<f64>() + 0.1);
        let est = DMatrix::from_fn(10, 4, |_, _| rng.random::<f64>());
        let masks = apply_mask(10, 4, 0.3, seed).unwrap();
        let a = nmse(&truth, &est, &masks).unwrap();
        let b = nmse(&(&truth * c), &(&est * c), &masks).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        prop_assert_eq!(nmse(&truth, &truth, &masks).unwrap(), 0.0);
    }

    #[test]
    fn masks_hide_exactly_the_requested_count(n in 2usize..60, k in 1usize..6, ratio in 0.0f64..0.9, seed in 0u64..100) {
        let hidden = (ratio * n as f64).round() as usize;
        prop_assume!(hidden < n);
        let masks = apply_mask(n, k, ratio, seed).unwrap();
        for m in &masks {
            prop_assert_eq!(m.iter().filter(|&&b| !b).count(), hidden);
        }
    }

    #[test]
    fn mean_fill_keeps_observed_entries(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y = DMatrix::from_fn(8, 3, |_, _| rng.random::<f64>());
        let obs = ObservedSignalSet::new(y, apply_mask(8, 3, 0.5, seed).unwrap()).unwrap();
        let filled = mean_fill(&obs);
        for c in 0..3 {
            let observed = obs.observed_indices(c);
            let mean = observed.iter().map(|&r| obs.values()[(r, c)]).sum::<f64>() / observed.len() as f64;
            for r in 0..8 {
                let expected = if obs.mask(c)[r] { obs.values()[(r, c)] } else { mean };
                prop_assert!((filled[(r, c)] - expected).abs() <= 1e-15);
            }
        }
    }

    #[test]
    fn admm_never_worse_than_zero(n in 4usize..12, seed in 0u64..1000, psi in arb_psi(2)) {
        let (l, dec) = spectrum(n, seed);
        let d = build_dictionary(&dec, &psi).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 7);
        let y = DMatrix::from_fn(n, 1, |_, _| rng.random::<f64>() - 0.5);
        let obs = ObservedSignalSet::new(y, apply_mask(n, 1, 0.25, seed).unwrap()).unwrap();
        let w = Weights { eta_s: 1.0, eta_x: 0.05, eta_w: 10.0, eta_y: 0.5, eta_c: 0.0 };
        let op = CodingOperator::new(&d, &l, w).unwrap();
        let data = SignalData::from_context(&obs, 0, &DMatrix::zeros(1, 1), &DMatrix::zeros(2 * n, 1));
        let cfg = AdmmConfig { rho: 2.0, max_iters: 50, ..AdmmConfig::default() };
        let sol = solve_signal_coefficients(&op, &data, &cfg, None, 0).unwrap();
        let zero = op.column_objective(&data, &DVector::zeros(2 * n));
        prop_assert!(op.column_objective(&data, &sol.coefficients) <= zero);
    }

    #[test]
    fn sweeps_never_increase_the_coding_objective(n in 4usize..10, k in 1usize..5, seed in 0u64..1000) {
        let (l, dec) = spectrum(n, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let psi = KernelParamVector::new(vec![rng.random_range(0.0..2.0)], vec![0.4]).unwrap();
        let d = build_dictionary(&dec, &psi).unwrap();
        let y = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() - 0.5);
        let obs = ObservedSignalSet::new(y, apply_mask(n, k, 0.25, seed).unwrap()).unwrap();
        let a = DMatrix::from_fn(k, k, |i, j| if i == j { 0.0 } else { 0.5 });
        let coupling = DMatrix::from_diagonal(&a.row_sum().transpose()) - &a;
        let w = Weights { eta_s: 1.0, eta_x: 0.02, eta_w: 5.0, eta_y: 0.2, eta_c: 0.3 };
        let op = CodingOperator::new(&d, &l, w).unwrap();
        let problem = GraphProblem { op: &op, signals: &obs, coupling: &coupling };
        let mut x = DMatrix::zeros(n, k);
        let cfg = AdmmConfig { rho: 1.0, max_iters: 30, ..AdmmConfig::default() };
        let mut last = problem.objective(&x);
        for _ in 0..3 {
            let (next, report) = sweep_coefficients(&problem, &x, &cfg).unwrap();
            x = next;
            prop_assert!(report.objective_after <= report.objective_before * (1.0 + 1e-12));
            prop_assert!(report.objective_after <= last * (1.0 + 1e-12));
            last = report.objective_after;
        }
    }
}
