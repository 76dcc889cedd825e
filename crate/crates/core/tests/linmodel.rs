mod common;

use common::*;
use proptest::prelude::*;
use traitlens::linmodel::{
    cv::fold_assignment, default_grid, fit_lasso, fit_ridge, kkt_violation, lasso_select_k, loocv_errors, select_lambda,
    CvOptions, CvPolicy, RidgeOptions, RidgePath, SolveForm,
};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn ridge_matches_augmented_normal_equations() {
    let mut rng = rng(10);
    for case in 0..30 {
        let (n, p) = if case % 2 == 0 { (8 + case, 40) } else { (50, 3 + case) };
        let x = random_design(&mut rng, n, p, 0.5);
        let y = gaussian_vec(&mut rng, n);
        let w = (case % 3 != 0).then(|| positive_weights(&mut rng, n));
        let lambda = 0.05 * (1 + case) as f64;
        let fit = fit_ridge(&csr(&x), &y, lambda, &RidgeOptions::weighted(w.as_deref())).unwrap();
        let (beta, b) = ridge_reference(&x, &y, w.as_deref(), lambda);
        assert!(max_abs_diff(&fit.weights, &beta) < 1e-9, "case {case}");
        assert!(close(fit.intercept, b, 1e-9), "case {case}");
    }
}

#[test]
fn loo_shortcut_matches_refits_on_wide_and_tall_designs() {
    let mut rng = rng(11);
    for (n, p, weighted) in [(12, 80, false), (12, 80, true), (45, 6, false), (45, 6, true), (30, 30, true)] {
        let x = random_design(&mut rng, n, p, 0.3);
        let y = gaussian_vec(&mut rng, n);
        let w = weighted.then(|| positive_weights(&mut rng, n));
        for lambda in [0.01, 1.0, 50.0] {
            let fast = loocv_errors(&csr(&x), &y, lambda, &RidgeOptions::weighted(w.as_deref())).unwrap();
            let slow = brute_force_loo(&x, &y, w.as_deref(), lambda);
            for (a, b) in fast.iter().zip(&slow) {
                assert!(close(*a, *b, 1e-8), "n={n} p={p} λ={lambda}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn path_reuses_one_decomposition_across_lambdas() {
    let mut rng = rng(12);
    let x = csr(&random_design(&mut rng, 25, 60, 0.4));
    let y = gaussian_vec(&mut rng, 25);
    let path = RidgePath::new(&x, &y, &RidgeOptions::default()).unwrap();
    for lambda in [0.001, 0.1, 10.0] {
        let direct = fit_ridge(&x, &y, lambda, &RidgeOptions::default()).unwrap();
        let from_path = path.model(lambda).unwrap();
        assert!(max_abs_diff(&direct.weights, &from_path.weights) < 1e-9);
        let lev = path.leverages(lambda).unwrap();
        assert!(lev.iter().all(|h| (0.0..1.0).contains(h)));
    }
}

#[test]
fn lasso_matches_enumeration_on_correlated_columns() {
    let mut rng = rng(13);
    for case in 0..10 {
        let p = 4 + case % 4;
        let n = 30;
        let base = gaussian_vec(&mut rng, n);
        let mut x = random_design(&mut rng, n, p, 1.0);
        for row in x.iter_mut().zip(&base) {
            row.0[0] += 2.0 * row.1;
            row.0[1] += 2.0 * row.1;
        }
        let y: Vec<f64> = x.iter().map(|r| r[0] - 0.5 * r[2]).zip(gaussian_vec(&mut rng, n)).map(|(a, e)| a + 0.3 * e).collect();
        let lambda = 2.0 + case as f64;
        let fit = fit_lasso(&csr(&x), &y, lambda).unwrap();
        let (beta, b) = lasso_reference(&x, &y, lambda);
        assert!(max_abs_diff(&fit.weights, &beta) < 1e-6, "case {case}");
        assert!((fit.intercept - b).abs() < 1e-6);
        let kkt = kkt_violation(&csr(&x), &y, &fit);
        assert!(kkt < 1e-6 * (1.0 + lambda), "case {case}: KKT violation {kkt:e}");
    }
}

#[test]
fn lasso_select_k_hits_requested_support() {
    let mut rng = rng(14);
    let n = 80;
    let x = random_design(&mut rng, n, 30, 0.6);
    let y: Vec<f64> = x
        .iter()
        .map(|r| (0..6).map(|j| r[j] * (6 - j) as f64).sum::<f64>())
        .zip(gaussian_vec(&mut rng, n))
        .map(|(a, e)| a + 0.1 * e)
        .collect();
    let m = csr(&x);
    for k in [1, 3, 6] {
        let sel = lasso_select_k(&m, &y, k).unwrap();
        if sel.warning.is_none() {
            assert_eq!(sel.nonzero, k);
        } else {
            assert!(sel.nonzero > k);
        }
        assert_eq!(sel.model.nonzero(), sel.nonzero);
        assert!(kkt_violation(&m, &y, &sel.model) < 1e-6 * (1.0 + sel.lambda));
    }
    assert!(lasso_select_k(&m, &y, 0).is_err());
    assert!(lasso_select_k(&m, &y, 31).is_err());
}

#[test]
fn cross_validation_picks_the_grid_minimum() {
    let mut rng = rng(15);
    let x = csr(&random_design(&mut rng, 40, 20, 0.5));
    let y = gaussian_vec(&mut rng, 40);
    let grid = default_grid(&x, None);
    assert_eq!(grid.len(), 25);
    for policy in [CvPolicy::Loocv, CvPolicy::Kfold(3), CvPolicy::Auto] {
        let opts = CvOptions {
            policy,
            ..Default::default()
        };
        let rep = select_lambda(&x, &y, &grid, &opts).unwrap();
        let best = rep.cv_error.iter().cloned().fold(f64::INFINITY, f64::min);
        let i = rep.grid.iter().position(|l| *l == rep.chosen).unwrap();
        assert_eq!(rep.cv_error[i], best);
    }
}

fn fold_sizes(folds: &[usize], k: usize, keep: impl Fn(usize) -> bool) -> Vec<usize> {
    let mut sizes = vec![0; k];
    for (i, f) in folds.iter().enumerate() {
        if keep(i) {
            sizes[*f] += 1;
        }
    }
    sizes
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn coefficient_norm_shrinks_with_lambda(seed in any::<u64>(), n in 4usize..30, p in 1usize..40, weighted in any::<bool>()) {
        let mut rng = rng(seed);
        let x = csr(&random_design(&mut rng, n, p, 0.5));
        let y = gaussian_vec(&mut rng, n);
        let w = weighted.then(|| positive_weights(&mut rng, n));
        let opts = RidgeOptions::weighted(w.as_deref());
        let mut last = f64::INFINITY;
        for lambda in [0.01, 0.1, 1.0, 10.0, 100.0] {
            let nrm = norm(&fit_ridge(&x, &y, lambda, &opts).unwrap().weights);
            prop_assert!(nrm <= last * (1.0 + 1e-9) + 1e-12);
            last = nrm;
        }
    }

    #[test]
    fn affine_target_maps_to_affine_fit(seed in any::<u64>(), n in 4usize..30, p in 1usize..30, c in -5.0f64..5.0, d in -5.0f64..5.0) {
        let mut rng = rng(seed);
        let x = csr(&random_design(&mut rng, n, p, 0.5));
        let y = gaussian_vec(&mut rng, n);
        let y2: Vec<f64> = y.iter().map(|v| c * v + d).collect();
        let opts = RidgeOptions::default();
        let a = fit_ridge(&x, &y, 0.5, &opts).unwrap();
        let b = fit_ridge(&x, &y2, 0.5, &opts).unwrap();
        for (u, v) in a.weights.iter().zip(&b.weights) {
            prop_assert!((c * u - v).abs() < 1e-8 * (1.0 + v.abs()));
        }
        prop_assert!((c * a.intercept + d - b.intercept).abs() < 1e-8 * (1.0 + b.intercept.abs()));
    }

    #[test]
    fn scaling_weights_and_lambda_together_is_neutral(seed in any::<u64>(), n in 4usize..30, p in 1usize..30, s in 0.1f64..10.0) {
        let mut rng = rng(seed);
        let x = csr(&random_design(&mut rng, n, p, 0.5));
        let y = gaussian_vec(&mut rng, n);
        let w = positive_weights(&mut rng, n);
        let ws: Vec<f64> = w.iter().map(|v| v * s).collect();
        let a = fit_ridge(&x, &y, 0.7, &RidgeOptions::weighted(Some(&w))).unwrap();
        let b = fit_ridge(&x, &y, 0.7 * s, &RidgeOptions::weighted(Some(&ws))).unwrap();
        prop_assert!(max_abs_diff(&a.weights, &b.weights) < 1e-8);
        prop_assert!((a.intercept - b.intercept).abs() < 1e-8);

        let ones = vec![1.0; n];
        let u = fit_ridge(&x, &y, 0.7, &RidgeOptions::weighted(Some(&ones))).unwrap();
        let plain = fit_ridge(&x, &y, 0.7, &RidgeOptions::default()).unwrap();
        prop_assert!(max_abs_diff(&u.weights, &plain.weights) < 1e-10);
    }

    #[test]
    fn primal_and_dual_agree(seed in any::<u64>(), n in 2usize..40, p in 1usize..60, weighted in any::<bool>()) {
        let mut rng = rng(seed);
        let x = csr(&random_design(&mut rng, n, p, 0.4));
        let y = gaussian_vec(&mut rng, n);
        let w = weighted.then(|| positive_weights(&mut rng, n));
        let fit = |form| fit_ridge(&x, &y, 0.3, &RidgeOptions { form, ..RidgeOptions::weighted(w.as_deref()) }).unwrap();
        let (a, b) = (fit(SolveForm::Primal), fit(SolveForm::Dual));
        prop_assert!(max_abs_diff(&a.weights, &b.weights) < 1e-8);
        prop_assert!((a.intercept - b.intercept).abs() < 1e-8 * (1.0 + a.intercept.abs()));
    }

    #[test]
    fn lasso_solutions_satisfy_kkt(seed in any::<u64>(), n in 10usize..40, p in 2usize..50, frac in 0.01f64..1.2) {
        let mut rng = rng(seed);
        let x = csr(&random_design(&mut rng, n, p, 0.3));
        let y = gaussian_vec(&mut rng, n);
        let probe = fit_lasso(&x, &y, 1e6).unwrap();
        prop_assert_eq!(probe.nonzero(), 0);
        // λ_max from the gradient at zero
        let g = kkt_violation(&x, &y, &traitlens::linmodel::LinearModel { lambda: 0.0, ..probe.clone() });
        if g > 0.0 {
            let lambda = g * frac;
            let fit = fit_lasso(&x, &y, lambda).unwrap();
            prop_assert!(kkt_violation(&x, &y, &fit) < 1e-6 * (1.0 + lambda));
            if frac >= 1.0 {
                prop_assert_eq!(fit.nonzero(), 0);
            }
        }
    }

    #[test]
    fn folds_are_balanced_and_stratified(n in 3usize..200, k in 2usize..6, seed in any::<u64>(), classes in 1usize..4) {
        prop_assume!(n >= k);
        let plain = fold_assignment(n, k, seed, None);
        prop_assert_eq!(&plain, &fold_assignment(n, k, seed, None));
        let sizes = fold_sizes(&plain, k, |_| true);
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);

        let strata: Vec<usize> = (0..n).map(|i| (i * 7 + i / 3) % classes).collect();
        let folds = fold_assignment(n, k, seed, Some(&strata));
        for c in 0..classes {
            let s = fold_sizes(&folds, k, |i| strata[i] == c);
            prop_assert!(s.iter().max().unwrap() - s.iter().min().unwrap() <= 1);
        }
    }
}
