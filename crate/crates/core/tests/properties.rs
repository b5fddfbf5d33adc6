use nalgebra::{DMatrix, DVector};
use prelog_core::discretization::{simulate_oversampled, simulate_symbol_rate, FrontendMatrices};
use prelog_core::fading::eval_h;
use prelog_core::identifiability::{full_spark_check, jacobian_report};
use prelog_core::info_metrics::{read_sweep_csv, write_sweep_csv, EstimatorKind, Frontend, MISweepPoint};
use prelog_core::linalg::log_det_gram;
use prelog_core::random::LabRng;
use prelog_core::{BlockSpec, Complex64, FadingCoeffs};
use proptest::prelude::*;

fn admissible() -> impl Strategy<Value = (usize, usize)> {
    (2usize..=8).prop_flat_map(|n| {
        let qs: Vec<usize> = (1..n).filter(|q| q % 2 == 1).collect();
        (Just(n), proptest::sample::select(qs))
    })
}

fn cvec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    proptest::collection::vec((-2.0f64..2.0, -2.0f64..2.0).prop_map(|(a, b)| Complex64::new(a, b)), len)
}

fn nonzero_cvec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    proptest::collection::vec(
        (0.1f64..2.0, -std::f64::consts::PI..std::f64::consts::PI).prop_map(|(r, t)| Complex64::from_polar(r, t)),
        len,
    )
}

fn spec_with_inputs() -> impl Strategy<Value = (BlockSpec, Vec<Complex64>, Vec<Complex64>)> {
    admissible().prop_flat_map(|(n, q)| (Just(BlockSpec::with_rank(n, q).unwrap()), nonzero_cvec(q), nonzero_cvec(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn eval_h_is_linear_in_coefficients(
        (spec, a, b) in admissible().prop_flat_map(|(n, q)| (Just(BlockSpec::with_rank(n, q).unwrap()), cvec(q), cvec(q))),
        alpha in (-2.0f64..2.0, -2.0f64..2.0),
        frac in 0.0f64..=1.0,
    ) {
        let alpha = Complex64::new(alpha.0, alpha.1);
        let t = frac * spec.t();
        let mix: Vec<Complex64> = a.iter().zip(&b).map(|(u, v)| alpha * u + v).collect();
        let f = |s: Vec<Complex64>| eval_h(&spec, &FadingCoeffs::from_normalized(&spec, s).unwrap(), t).unwrap();
        let lhs = f(mix);
        let rhs = alpha * f(a) + f(b);
        prop_assert!((lhs - rhs).norm() <= 1e-12 * (1.0 + rhs.norm()) * 10.0);
    }

    #[test]
    fn b_times_s_hat_is_the_noiseless_oversampled_block((spec, s_hat, x) in spec_with_inputs()) {
        let fm = FrontendMatrices::new(&spec);
        let coeffs = FadingCoeffs::from_normalized(&spec, s_hat.clone()).unwrap();
        let y = simulate_oversampled::<LabRng>(&spec, &coeffs, &x, 1.0, None).unwrap().stacked();
        let by = fm.b(&x).unwrap() * DVector::from_vec(s_hat);
        for (u, v) in y.iter().zip(by.iter()) {
            prop_assert!((u - v).norm() <= 1e-12 * (1.0 + v.norm()));
        }
    }

    #[test]
    fn noiseless_samples_scale_with_sqrt_rho((spec, s_hat, x) in spec_with_inputs(), rho in 0.01f64..1e4) {
        let coeffs = FadingCoeffs::from_normalized(&spec, s_hat).unwrap();
        let base = simulate_symbol_rate::<LabRng>(&spec, &coeffs, &x, 1.0, None).unwrap().stacked();
        let scaled = simulate_symbol_rate::<LabRng>(&spec, &coeffs, &x, rho, None).unwrap().stacked();
        for (u, v) in base.iter().zip(&scaled) {
            prop_assert!((u * rho.sqrt() - v).norm() <= 1e-12 * (1.0 + v.norm()));
        }
    }

    #[test]
    fn jacobian_is_nonsingular_off_the_zero_set((spec, s_hat, x) in spec_with_inputs()) {
        let fm = FrontendMatrices::new(&spec);
        let r = jacobian_report(&fm, x[0], &s_hat, &x[1..]).unwrap();
        prop_assert_eq!(r.dimension, spec.n() + spec.q() - 1);
        prop_assert!(r.log_scaled_abs_det <= 1e-9);
        prop_assert!(!r.singular, "scaled log det {}", r.log_scaled_abs_det);
    }

    #[test]
    fn log_det_gram_is_nonnegative_and_increasing(
        (spec, _s, x) in spec_with_inputs(),
        rho in 0.01f64..1e6,
        factor in 1.01f64..100.0,
    ) {
        let b: DMatrix<Complex64> = FrontendMatrices::new(&spec).b(&x).unwrap();
        let lo = log_det_gram(&b, rho);
        let hi = log_det_gram(&b, rho * factor);
        prop_assert!(lo >= 0.0);
        prop_assert!(hi > lo);
        prop_assert!(hi - lo <= spec.q() as f64 * factor.ln() + 1e-9);
    }

    #[test]
    fn sweep_csv_round_trips(
        rows in proptest::collection::vec((-10.0f64..60.0, -5.0f64..50.0, 0.0f64..1.0, any::<bool>(), any::<u64>()), 1..6)
    ) {
        let pts: Vec<MISweepPoint> = rows
            .iter()
            .map(|&(db, mi, se, os, seed)| MISweepPoint {
                rho_db: db,
                mi_nats: mi,
                mi_bits: mi / std::f64::consts::LN_2,
                stderr: se,
                estimator: EstimatorKind::DirectMixture,
                frontend: if os { Frontend::Oversampled } else { Frontend::SymbolRate },
                n_outer: 3,
                n_inner: 10_000,
                seed,
                n: 4,
                q: 3,
                min_ess: None,
                low_ess_count: 0,
            })
            .collect();
        let mut buf = Vec::new();
        write_sweep_csv(&pts, &mut buf).unwrap();
        let back = read_sweep_csv(buf.as_slice()).unwrap();
        prop_assert_eq!(back, pts);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_admissible_small_spec_has_full_spark((n, q) in admissible()) {
        let r = full_spark_check(&BlockSpec::with_rank(n, q).unwrap());
        prop_assert!(r.full_spark && r.exhaustive);
    }
}
