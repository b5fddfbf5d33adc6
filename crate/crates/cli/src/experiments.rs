//! One runner per subcommand. Each returns its artifacts, a one-line
//! verdict and, on failure, the name of the violated invariant.

use prelog_core::discretization::{covariance_rank, oracle_check, simulate_oversampled, FrontendMatrices};
use prelog_core::estimator::{
    cluster_solutions, recover_joint_oversampled_traced, Pilots, RecoveryOptions, Start,
    CLUSTER_DISTANCE,
};
use prelog_core::identifiability::{jacobian_witness, full_spark_check, jacobian_monte_carlo, JacobianMcOptions};
use prelog_core::info_metrics::{
    db_to_linear, log_det_jacobian_batches, Frontend, mi_direct_mixture_sweep, mi_lower_bound_chain, prelog_fit,
    write_sweep_csv, MISweepPoint,
};
use prelog_core::random::{complex_normal_vec, stream_rng, LabRng};
use prelog_core::FadingCoeffs;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::scenario::{Scenario, SweepEstimator};
use crate::CliError;

pub struct Outcome {
    pub artifacts: Vec<(String, Vec<u8>)>,
    pub summary: String,
    pub failed_invariant: Option<String>,
}

fn to_json<T: Serialize>(v: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(v).expect("report serializes");
    out.push(b'\n');
    out
}

pub fn validate(sc: &Scenario) -> Result<Outcome, CliError> {
    let opts = &sc.validate;
    let report = oracle_check(&sc.spec, opts.draws, 1.0, sc.seed)?;
    let ok = report.max_abs_err() <= opts.tol;
    Ok(Outcome {
        summary: format!(
            "validate: {} draws, max |closed form - oracle| symbol-rate {:.2e}, oversampled {:.2e} (tol {:.0e}) -> {}",
            report.draws,
            report.max_abs_err_symbol_rate,
            report.max_abs_err_oversampled,
            opts.tol,
            if ok { "pass" } else { "FAIL" }
        ),
        artifacts: vec![("validate.json".into(), to_json(&json!({ "tol": opts.tol, "report": report })))],
        failed_invariant: (!ok).then(|| "oracle_equivalence".to_string()),
    })
}

pub fn rank(sc: &Scenario) -> Result<Outcome, CliError> {
    let r = covariance_rank(&sc.spec);
    let ok = r.rank_equals_q();
    Ok(Outcome {
        summary: format!(
            "rank: N = {}, Q = {}, numerical rank {}, sigma_Q+1/sigma_1 = {:.2e} -> {}",
            r.n,
            r.q,
            r.numerical_rank,
            r.ratio_after_q,
            if ok { "pass" } else { "FAIL" }
        ),
        artifacts: vec![("rank.json".into(), to_json(&r))],
        failed_invariant: (!ok).then(|| "covariance_rank_equals_q".to_string()),
    })
}

pub fn spark(sc: &Scenario) -> Result<Outcome, CliError> {
    let r = full_spark_check(&sc.spec);
    Ok(Outcome {
        summary: format!(
            "spark: full_spark={} subsets={} of {} ({}) min_scaled_det={:.3e}",
            r.full_spark,
            r.n_subsets_checked,
            r.total_subsets,
            if r.exhaustive { "exhaustive" } else { "sampled" },
            r.min_abs_det
        ),
        artifacts: vec![("spark.json".into(), to_json(&r))],
        failed_invariant: (!r.full_spark).then(|| "full_spark".to_string()),
    })
}

const MC_CHUNK: usize = 1000;

pub fn jacobian_mc(sc: &Scenario) -> Result<Outcome, CliError> {
    let opts = &sc.jacobian_mc;
    if opts.trials == 0 {
        return Err(CliError::Config("jacobian_mc.trials must be positive".into()));
    }
    let chunks = opts.trials.div_ceil(MC_CHUNK);
    let parts = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = MC_CHUNK.min(opts.trials - c * MC_CHUNK);
            jacobian_monte_carlo(&sc.spec, len, &mut stream_rng(sc.seed, c as u64), JacobianMcOptions::default())
        })
        .collect::<Result<Vec<_>, _>>()?;
    let singular: usize = parts.iter().map(|p| p.singular_count).sum();
    let min_abs = parts.iter().map(|p| p.min_abs_det).fold(f64::INFINITY, f64::min);
    let min_scaled = parts.iter().map(|p| p.min_scaled_abs_det).fold(f64::INFINITY, f64::min);

    let fm = FrontendMatrices::new(&sc.spec);
    let mut worst_factor = 0.0f64;
    let mut witness_error = None;
    for d in 0..opts.witness_draws {
        let x = complex_normal_vec(&mut stream_rng(sc.seed ^ 0x3157, d as u64), sc.spec.n());
        match jacobian_witness(&fm, &x) {
            Ok(w) => worst_factor = worst_factor.max(w.factorization_rel_error),
            Err(e) => {
                witness_error = Some(e.to_string());
                break;
            }
        }
    }
    let batches = if opts.log_det_batches >= 2 {
        Some(log_det_jacobian_batches(&sc.spec, opts.log_det_batches, MC_CHUNK, sc.seed ^ 0x1d37)?)
    } else {
        None
    };
    let failed = if singular > 0 {
        Some("jacobian_nonsingular".to_string())
    } else if witness_error.is_some() {
        Some("witness_factorization".to_string())
    } else {
        None
    };
    Ok(Outcome {
        summary: format!(
            "jacobian-mc: {singular} of {} draws scaled-singular, min |det| {min_abs:.3e}, min scaled {min_scaled:.3e}; \
             witness factorization worst rel. error {worst_factor:.1e} over {} inputs -> {}",
            opts.trials,
            opts.witness_draws,
            if failed.is_none() { "pass" } else { "FAIL" }
        ),
        artifacts: vec![(
            "jacobian_mc.json".into(),
            to_json(&json!({
                "trials": opts.trials,
                "singular_count": singular,
                "singular_fraction": singular as f64 / opts.trials as f64,
                "min_abs_det": min_abs,
                "min_scaled_abs_det": min_scaled,
                "witness_draws": opts.witness_draws,
                "witness_worst_rel_error": worst_factor,
                "witness_error": witness_error,
                "log_det_batches": batches,
            })),
        )],
        failed_invariant: failed,
    })
}

#[derive(Debug, Serialize)]
struct IdentifyRow {
    block_id: usize,
    residual: f64,
    sym_err: f64,
    s_err: f64,
    n_starts: usize,
    classes: usize,
    converged: bool,
}

fn rel_err(a: &[prelog_core::Complex64], b: &[prelog_core::Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}

pub fn identify(sc: &Scenario) -> Result<Outcome, CliError> {
    let opts = &sc.identify;
    let spec = &sc.spec;
    let (n, q) = (spec.n(), spec.q());
    let noisy = opts.rho_db.is_some();
    let rho = opts.rho_db.map(db_to_linear).unwrap_or(1.0);
    let rows = (0..opts.n_blocks)
        .into_par_iter()
        .map(|b| -> Result<IdentifyRow, CliError> {
            let mut rng = stream_rng(sc.seed, b as u64);
            let truth = Start { s_hat: complex_normal_vec(&mut rng, q), x: complex_normal_vec(&mut rng, n) };
            let pilots = Pilots::from([(0, truth.x[0])]);
            let coeffs = FadingCoeffs::from_normalized(spec, truth.s_hat.clone())?;
            let obs = if noisy {
                simulate_oversampled(spec, &coeffs, &truth.x, rho, Some(&mut rng))?
            } else {
                simulate_oversampled::<LabRng>(spec, &coeffs, &truth.x, rho, None)?
            };
            let ropts = RecoveryOptions {
                n_starts: opts.n_starts,
                noisy,
                seed: sc.seed.wrapping_add(1 + b as u64),
                stop_at_first: false,
                ..Default::default()
            };
            let extra = if opts.truth_seeded { vec![truth.clone()] } else { Vec::new() };
            let (res, outcomes) = recover_joint_oversampled_traced(spec, &obs.stacked(), &pilots, rho, &ropts, &extra)?;
            let converged: Vec<Vec<_>> = outcomes
                .iter()
                .filter(|o| o.converged)
                .map(|o| o.s_hat.iter().chain(&o.x[1..]).copied().collect())
                .collect();
            let free: Vec<_> = (1..n).collect();
            let x_est: Vec<_> = free.iter().map(|&k| res.x_est[k]).collect();
            let x_true: Vec<_> = free.iter().map(|&k| truth.x[k]).collect();
            Ok(IdentifyRow {
                block_id: b,
                residual: res.residual,
                sym_err: rel_err(&x_est, &x_true),
                s_err: rel_err(&res.s_hat_est, &truth.s_hat),
                n_starts: outcomes.len(),
                classes: cluster_solutions(&converged, CLUSTER_DISTANCE).len(),
                converged: res.converged,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = csv_writer();
    for r in &rows {
        w.serialize(r).map_err(|e| CliError::Io(e.to_string()))?;
    }
    let csv = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    let mut errs: Vec<f64> = rows.iter().map(|r| r.sym_err).collect();
    errs.sort_by(f64::total_cmp);
    let median = if errs.is_empty() { f64::NAN } else { errs[errs.len() / 2] };
    let conv = rows.iter().filter(|r| r.converged).count();
    let summary = json!({
        "n_blocks": opts.n_blocks,
        "rho_db": opts.rho_db,
        "converged_blocks": conv,
        "median_sym_err": median,
        "max_classes": rows.iter().map(|r| r.classes).max(),
    });
    Ok(Outcome {
        summary: format!(
            "identify: {conv}/{} blocks converged, median symbol relative error {median:.3e}",
            opts.n_blocks
        ),
        artifacts: vec![("identify.csv".into(), csv), ("identify.json".into(), to_json(&summary))],
        failed_invariant: None,
    })
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::Writer::from_writer(Vec::new())
}

pub fn mi_sweep(sc: &Scenario) -> Result<Outcome, CliError> {
    let opts = &sc.mi_sweep;
    if sc.rho_grid_db.is_empty() {
        return Err(CliError::Config("rho_grid_db must be nonempty for mi-sweep".into()));
    }
    let rhos: Vec<f64> = sc.rho_grid_db.iter().map(|&d| db_to_linear(d)).collect();
    let mut points: Vec<MISweepPoint> = Vec::new();
    match opts.estimator {
        SweepEstimator::DirectMixture => {
            for &fe in &opts.frontends {
                points.extend(mi_direct_mixture_sweep(&sc.spec, &rhos, opts.n_outer, opts.n_inner, fe, sc.seed)?);
            }
        }
        SweepEstimator::BoundChain => {
            for &rho in &rhos {
                points.push(mi_lower_bound_chain(&sc.spec, rho, opts.n_samples, opts.knn_k, sc.seed)?.0);
            }
        }
    }
    let mut csv = Vec::new();
    write_sweep_csv(&points, &mut csv)?;
    let mut fits = Vec::new();
    let mut lines = Vec::new();
    for fe in [Frontend::SymbolRate, Frontend::Oversampled] {
        let subset: Vec<_> = points.iter().filter(|p| p.frontend == fe).cloned().collect();
        if subset.len() >= 3 {
            let fit = prelog_fit(&subset, sc.spec.n())?;
            lines.push(format!("{} slope {:.3} +- {:.3}", fe.as_str(), fit.slope_per_channel_use, fit.slope_stderr));
            fits.push(json!({ "frontend": fe, "fit": fit }));
        }
    }
    let low_ess: usize = points.iter().map(|p| p.low_ess_count).sum();
    Ok(Outcome {
        summary: format!(
            "mi-sweep: {} points{}{}",
            points.len(),
            if lines.is_empty() { String::new() } else { format!("; {}", lines.join("; ")) },
            if low_ess > 0 { format!("; {low_ess} low-ESS outer samples") } else { String::new() }
        ),
        artifacts: vec![
            ("mi_sweep.csv".into(), csv),
            ("mi_sweep.json".into(), to_json(&json!({ "points": points, "fits": fits }))),
        ],
        failed_invariant: None,
    })
}
