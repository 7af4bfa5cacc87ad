mod common;

use common::*;
use ekp::combiner::{combiner_objective, fit_combiner, Loss, PredictionMatrix, WeightNorm};
use ekp::data::Task;
use ekp::kernel::{center_kernel_matrix, combine_kernels, gaussian_gram, quadratic_form, KernelMatrix};
use ekp::learners::{krr_objective, train_krr};
use ekp::mkl::{train_mkl, MklMethod};
use ekp::rademacher::{enumerate_complexity, estimate_complexity, margin_bound};
use ekp::report::{read_result, write_result, Envelope, ResultDoc};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn points(m: usize, d: usize, seed: u64) -> DMatrix<f64> {
    gaussian_points(m, d, &mut rng(seed))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn gaussian_grams_are_symmetric_bounded_and_psd(m in 2usize..40, d in 1usize..4, lg in -4i32..4, seed in 0u64..1000) {
        let k = gaussian_gram(&points(m, d, seed), 2f64.powi(lg)).unwrap();
        let v = &k.values;
        prop_assert!((v - v.transpose()).amax() <= 1e-10);
        prop_assert!(v.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert!((k.trace() - m as f64).abs() < 1e-12);
        let mut r = rng(seed + 1);
        for _ in 0..100 {
            let s = signs(m, &mut r);
            prop_assert!(quadratic_form(s.as_slice(), &k).unwrap() >= -1e-8 * m as f64);
        }
    }

    #[test]
    fn centering_is_idempotent(m in 2usize..30, seed in 0u64..1000) {
        let k = low_rank_psd(m, &mut rng(seed));
        let once = center_kernel_matrix(&k).unwrap();
        let twice = center_kernel_matrix(&once).unwrap();
        prop_assert!((&once.values - &twice.values).amax() <= 1e-9);
        prop_assert!((&once.values - center(&k.values)).amax() <= 1e-9);
    }

    #[test]
    fn quadratic_form_is_linear_in_the_weights(m in 2usize..30, p in 1usize..5, seed in 0u64..1000) {
        let mut r = rng(seed);
        let ks: Vec<KernelMatrix> = (0..p).map(|_| low_rank_psd(m, &mut r)).collect();
        let mu: Vec<f64> = (0..p).map(|_| rand::Rng::random_range(&mut r, 0.0..2.0)).collect();
        let s = signs(m, &mut r);
        let combined = quadratic_form(s.as_slice(), &combine_kernels(&mu, &ks).unwrap()).unwrap();
        let parts: f64 = ks.iter().zip(&mu).map(|(k, w)| w * quadratic_form(s.as_slice(), k).unwrap()).sum();
        prop_assert!((combined - parts).abs() <= 1e-9 * (1.0 + parts.abs()));
    }

    #[test]
    fn krr_matches_gradient_descent(m in 2usize..20, lg in -2i32..2, ll in -2i32..2, seed in 0u64..1000) {
        let k = gaussian_gram(&points(m, 2, seed), 2f64.powi(lg)).unwrap();
        let y = normal_vec(m, &mut rng(seed + 7));
        let lambda = 2f64.powi(ll);
        let h = train_krr(&k, &y, lambda).unwrap();
        let got = krr_objective(&k, &y, lambda, &h.alpha).unwrap();
        // plain gradient descent on λαᵀKα + ‖Kα − y‖² with step 1/L
        let kk = &k.values;
        let lmax = kk.symmetric_eigenvalues().max();
        let step = 1.0 / (2.0 * (lmax * lmax + lambda * lmax) + 1e-12);
        let mut a = DVector::zeros(m);
        let mut best = f64::INFINITY;
        for _ in 0..200_000 {
            let f = kk * &a;
            let grad = kk * (&a * (2.0 * lambda) + (&f - &y) * 2.0);
            a -= grad * step;
            let v = lambda * a.dot(&(kk * &a)) + (kk * &a - &y).norm_squared();
            if (best - v).abs() < 1e-14 * (1.0 + v) {
                best = best.min(v);
                break;
            }
            best = best.min(v);
        }
        prop_assert!(got <= best + 1e-6, "solver {got} vs descent {best}");
        let oracle = krr_optimum(kk, &y, lambda);
        prop_assert!((got - oracle).abs() <= 1e-6 * (1.0 + oracle));
    }

    #[test]
    fn krr_norm_decreases_with_lambda(m in 2usize..25, seed in 0u64..1000) {
        let k = gaussian_gram(&points(m, 2, seed), 0.5).unwrap();
        let y = normal_vec(m, &mut rng(seed + 3));
        let norms: Vec<f64> = [0.01, 0.1, 1.0, 10.0].iter().map(|l| train_krr(&k, &y, *l).unwrap().rkhs_norm).collect();
        for w in norms.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-9) + 1e-12, "{norms:?}");
        }
    }

    #[test]
    fn combiner_is_feasible_and_beats_zero(m in 3usize..40, p in 1usize..4, hinge in any::<bool>(), l2 in any::<bool>(), seed in 0u64..1000) {
        let mut r = rng(seed);
        let (loss, y) = if hinge { (Loss::Hinge, balanced_signs(m, &mut r)) } else { (Loss::Square, normal_vec(m, &mut r)) };
        let cols = DMatrix::from_fn(m, p, |i, _| 0.5 * y[i] + rand::Rng::random_range(&mut r, -1.0..1.0));
        let pm = PredictionMatrix::new(cols).unwrap();
        let norm = if l2 { WeightNorm::L2 } else { WeightNorm::L1 };
        let mut previous = f64::INFINITY;
        for cap in [0.1, 1.0, 10.0] {
            let w = fit_combiner(&pm, &y, norm, cap, loss).unwrap();
            prop_assert!(w.mu.iter().all(|v| *v >= -1e-12));
            prop_assert!(norm.norm(&w.mu) <= cap * (1.0 + 1e-9));
            let obj = combiner_objective(&pm, &y, &w.mu, loss).unwrap();
            let zero = combiner_objective(&pm, &y, &vec![0.0; p], loss).unwrap();
            prop_assert!(obj <= zero + 1e-12);
            prop_assert!(obj <= previous + 1e-6 * (1.0 + previous.abs()), "cap {cap}: {obj} after {previous}");
            previous = obj;
        }
    }

    #[test]
    fn estimate_grows_with_q_and_with_kernels(m in 2usize..10, p in 1usize..4, seed in 0u64..1000) {
        let mut r = rng(seed);
        let ks: Vec<KernelMatrix> = (0..=p).map(|_| low_rank_psd(m, &mut r)).collect();
        let lambdas: Vec<f64> = (0..=p).map(|_| rand::Rng::random_range(&mut r, 0.5..2.0)).collect();
        let q1 = estimate_complexity(&ks[..p], &lambdas[..p], 1.0, 500, seed).unwrap();
        let q2 = estimate_complexity(&ks[..p], &lambdas[..p], 2.0, 500, seed).unwrap();
        prop_assert!(q1.value <= q2.value + 1e-12);
        let small = enumerate_complexity(&ks[..p], &lambdas[..p], 1.0).unwrap().value;
        let large = enumerate_complexity(&ks, &lambdas, 1.0).unwrap().value;
        prop_assert!(large >= small - 1e-12);
    }

    #[test]
    fn reports_round_trip_exactly(loss in 0.0f64..1.0, complexity in 0.0f64..10.0, rho in 1e-3f64..10.0, delta in 1e-3f64..0.999, m in 1usize..100_000, seed in any::<u64>()) {
        let b = margin_bound(loss, complexity, rho, delta, m).unwrap();
        let env = Envelope::new(ResultDoc::Bound(b), Some(seed));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_result(&env, &path).unwrap();
        prop_assert_eq!(read_result(&path).unwrap(), env);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn kernel_learning_weights_are_feasible_and_deterministic(m in 6usize..25, p in 1usize..4, seed in 0u64..1000) {
        let mut r = rng(seed);
        let x = gaussian_points(m, 2, &mut r);
        let gammas: Vec<i32> = (0..p as i32).map(|g| g - 2).collect();
        let ks = gaussian_kernels(&x, &gammas);
        let y = balanced_signs(m, &mut r);
        let cap = 2.0;
        for method in [MklMethod::Unif, MklMethod::Align, MklMethod::Alignf, MklMethod::OsSvm, MklMethod::OsKrr] {
            let c = if method == MklMethod::OsSvm { cap * m as f64 } else { cap };
            let a = train_mkl(method, &ks, &y, Task::Classification, 1.0, c).unwrap();
            let b = train_mkl(method, &ks, &y, Task::Classification, 1.0, c).unwrap();
            prop_assert_eq!(
                a.mu.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.mu.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
            prop_assert!(a.mu.iter().all(|v| *v >= -1e-12));
            let used = match method {
                MklMethod::OsSvm => a.mu.iter().zip(&ks).map(|(w, k)| w * k.trace()).sum::<f64>(),
                MklMethod::OsKrr => a.mu.iter().map(|w| w * w).sum::<f64>().sqrt(),
                _ => a.mu.iter().sum::<f64>(),
            };
            prop_assert!(used <= c * (1.0 + 1e-9), "{method}: {used} > {c}");
        }
    }

    #[test]
    fn combiner_matches_grid_for_small_p(m in 5usize..25, p in 1usize..4, hinge in any::<bool>(), l2 in any::<bool>(), seed in 0u64..1000) {
        let mut r = rng(seed);
        let (loss, y) = if hinge { (Loss::Hinge, balanced_signs(m, &mut r)) } else { (Loss::Square, normal_vec(m, &mut r)) };
        let cols = DMatrix::from_fn(m, p, |i, _| 0.5 * y[i] + rand::Rng::random_range(&mut r, -1.0..1.0));
        let pm = PredictionMatrix::new(cols.clone()).unwrap();
        let (norm, q) = if l2 { (WeightNorm::L2, 2.0) } else { (WeightNorm::L1, 1.0) };
        let cap = 1.5;
        let w = fit_combiner(&pm, &y, norm, cap, loss).unwrap();
        let got = combiner_objective(&pm, &y, &w.mu, loss).unwrap();
        let obj = |mu: &[f64]| -> f64 { (0..m).map(|i| loss.value((0..p).map(|k| mu[k] * cols[(i, k)]).sum(), y[i])).sum() };
        let n = [0, 2000, 150, 40][p];
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; p];
        loop {
            let mu: Vec<f64> = idx.iter().map(|i| cap * *i as f64 / n as f64).collect();
            if lr_norm(&mu, q) <= cap * (1.0 + 1e-12) {
                best = best.min(obj(&mu));
            }
            let mut k = 0;
            while k < p && idx[k] == n {
                idx[k] = 0;
                k += 1;
            }
            if k == p {
                break;
            }
            idx[k] += 1;
        }
        prop_assert!(got <= best + 1e-3 * (1.0 + best), "solver {got} vs grid {best}");
    }
}
