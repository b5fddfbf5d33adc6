//! Monte-Carlo examples checked against independent numerical oracles.

use prelog_core::discretization::{simulate_oversampled, FrontendMatrices};
use prelog_core::estimator::{recover_joint_oversampled_traced, Pilots, RecoveryOptions, Start};
use prelog_core::fading::{covariance_exact, make_block_spec};
use prelog_core::info_metrics::{db_to_linear, index_set_samples, mi_direct_mixture, mi_lower_bound_chain, Frontend};
use prelog_core::knn::{entropy_knn, DEFAULT_K};
use prelog_core::random::{complex_normal_vec, stream_rng};
use prelog_core::{BlockSpec, FadingCoeffs, PsdSpec};

/// Trapezoid rule on a uniform grid in `v = ln u`.
fn log_trapezoid(lo: f64, hi: f64, step: f64, f: impl Fn(f64) -> f64) -> f64 {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n)
        .map(|i| {
            let v = lo + i as f64 * step;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            w * f(v.exp()) * v.exp()
        })
        .sum::<f64>()
        * step
}

/// Density of `s x` with `s ~ CN(0,1)` and `x ~ CN(0, I_2)`, a function of
/// `t = ||y||^2`: `E_u[(pi u)^-2 exp(-t/u)]` with `u = |s|^2 ~ Exp(1)`.
fn product_density(t: f64) -> f64 {
    let pi2 = std::f64::consts::PI.powi(2);
    log_trapezoid(-40.0, 5.0, 0.01, |u| (-u - t / u).exp() / (pi2 * u * u))
}

#[test]
fn index_set_entropy_n2_q1_matches_radial_oracle() {
    // y_I = (x_1 g_0, x_2 g_1) s_hat with |g_0| = |g_1|; h = h(s x) + 2 ln|g_0|^2 + 2 ln|g_1|^2
    let spec = BlockSpec::with_rank(2, 1).unwrap();
    let fm = FrontendMatrices::new(&spec);
    let (g0, g1) = (fm.g[(0, 0)].norm_sqr(), fm.g[(1, 0)].norm_sqr());

    // C^2 is R^4; the shell at t = ||y||^2 has volume pi^2 t dt
    let pi2 = std::f64::consts::PI.powi(2);
    let mass = log_trapezoid(-30.0, 5.0, 0.01, |t| pi2 * t * product_density(t));
    assert!((mass - 1.0).abs() < 1e-6, "oracle density integrates to {mass}");
    let h_unit = log_trapezoid(-30.0, 5.0, 0.01, |t| {
        let f = product_density(t);
        -pi2 * t * f * f.ln()
    });
    let oracle = h_unit + g0.ln() + g1.ln();

    let est = entropy_knn(&index_set_samples(&spec, 100_000, 21).unwrap(), DEFAULT_K).unwrap();
    assert!((est - oracle).abs() <= 0.3, "kNN {est} vs radial oracle {oracle}");
}

#[test]
fn bound_chain_stays_below_the_direct_mixture() {
    let spec = BlockSpec::with_rank(4, 3).unwrap();
    for db in [20.0, 30.0] {
        let rho = db_to_linear(db);
        let (bound, _) = mi_lower_bound_chain(&spec, rho, 20_000, DEFAULT_K, 31).unwrap();
        let direct = mi_direct_mixture(&spec, rho, 32, 10_000, Frontend::Oversampled, 32).unwrap();
        assert!(
            bound.mi_nats <= direct.mi_nats + 3.0 * direct.stderr,
            "{db} dB: bound {} above mixture {} +- {}",
            bound.mi_nats,
            direct.mi_nats,
            direct.stderr
        );
    }
}

#[test]
fn flat_psd_off_diagonal_is_small_at_fifty_coherence_times() {
    // T = 50 T_coh with nu_max = 125 Hz and T_S = 1 ms
    let spec = make_block_spec(1e-3, 200, 125.0, PsdSpec::flat(1.0)).unwrap();
    let r = spec.correlation_function().unwrap();
    for (m, n) in [(0, 1), (-3, 2), (5, 7)] {
        let v = covariance_exact(&spec, m, n, &*r).unwrap().value.norm();
        let scale = spec.coefficient_variance(m);
        assert!(v < 0.05 * scale, "({m},{n}): {v:e} vs {:e}", 0.05 * scale);
    }
}

fn median_symbol_errors(rho_db: f64, truth_seeded: bool) -> f64 {
    let spec = BlockSpec::with_rank(8, 3).unwrap();
    let rho = db_to_linear(rho_db);
    let mut errs: Vec<f64> = (0..200u64)
        .map(|b| {
            let mut rng = stream_rng(41, b);
            let s_hat = complex_normal_vec(&mut rng, 3);
            let x = complex_normal_vec(&mut rng, 8);
            let truth = Start { s_hat: s_hat.clone(), x: x.clone() };
            let coeffs = FadingCoeffs::from_normalized(&spec, s_hat).unwrap();
            let y = simulate_oversampled(&spec, &coeffs, &x, rho, Some(&mut rng)).unwrap().stacked();
            let pilots = Pilots::from([(0, x[0])]);
            let mut opts = RecoveryOptions { noisy: true, seed: 1000 + b, ..Default::default() };
            let extra = if truth_seeded {
                opts.n_starts = 0;
                vec![truth]
            } else {
                Vec::new()
            };
            let (res, _) = recover_joint_oversampled_traced(&spec, &y, &pilots, rho, &opts, &extra).unwrap();
            let num: f64 = (1..8).map(|k| (res.x_est[k] - x[k]).norm_sqr()).sum();
            let den: f64 = (1..8).map(|k| x[k].norm_sqr()).sum();
            (num / den).sqrt()
        })
        .collect();
    errs.sort_by(f64::total_cmp);
    errs[100]
}

/// N = 8, Q = 3, 200 blocks. The 40 dB bound is recorded from the
/// reference run (median 4.14e-2); random starts must reach the error floor
/// of the truth-seeded fit, and the floor must fall as 1/sqrt(rho).
#[test]
fn noisy_recovery_error_floor() {
    let at40 = median_symbol_errors(40.0, false);
    let floor40 = median_symbol_errors(40.0, true);
    let at60 = median_symbol_errors(60.0, false);
    println!("median symbol relative error: 40 dB {at40:.3e} (truth-seeded {floor40:.3e}), 60 dB {at60:.3e}");
    assert!(at40 < 5e-2, "40 dB median {at40}");
    assert!(at40 <= 1.1 * floor40, "random starts {at40} above the truth-seeded floor {floor40}");
    let ratio = at40 / at60;
    assert!((ratio - 10.0).abs() < 2.0, "20 dB should shrink the error tenfold, got {ratio}");
    assert!(at60 < 1e-2);
}
