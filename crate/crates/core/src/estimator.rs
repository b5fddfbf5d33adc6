//! Pilot-based recovery of fading coefficients and data.
//!
//! Oversampled: nonlinear least squares over `(s_hat, non-pilot x)` with a
//! single pilot at position 1, solved by damped Gauss-Newton from several
//! starts. Symbol rate: linear least squares for `s` from the pilot
//! positions only.
//!
//! Pilots are keyed by 0-based symbol index.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discretization::{check_len, symbol_rate_matrix, FrontendMatrices};
use crate::error::{Error, Result};
use crate::fading::BlockSpec;
use crate::random::{complex_normal_vec, stream_rng};

pub type Pilots = BTreeMap<usize, Complex64>;

pub const MIN_PILOT_MAGNITUDE: f64 = 1e-9;
pub const CLUSTER_DISTANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryOptions {
    pub n_starts: usize,
    pub max_iter: usize,
    /// Noiseless acceptance level on the RMS residual.
    pub tol_abs: f64,
    /// Noisy mode uses the chi-square level `2N + 3 sqrt(4N)` on `||r||^2`.
    pub noisy: bool,
    pub seed: u64,
    /// Stop at the first converged start.
    pub stop_at_first: bool,
}

impl Default for RecoveryOptions {
    fn default() -> Self {
        Self {
            n_starts: 20,
            max_iter: 200,
            tol_abs: 1e-10,
            noisy: false,
            seed: 0,
            stop_at_first: true,
        }
    }
}

/// Initial point: `s_hat` (length Q) and the full `x` (pilot entries are
/// overwritten by the pilot values).
#[derive(Debug, Clone, PartialEq)]
pub struct Start {
    pub s_hat: Vec<Complex64>,
    pub x: Vec<Complex64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryResult {
    #[serde(with = "crate::serde_complex::vec")]
    pub s_hat_est: Vec<Complex64>,
    #[serde(with = "crate::serde_complex::vec")]
    pub x_est: Vec<Complex64>,
    /// RMS of `y - sqrt(rho) B(x) s_hat` over the `2N` samples.
    pub residual: f64,
    pub n_starts_used: usize,
    pub converged: bool,
    pub solution_class: String,
}

/// One Levenberg-Marquardt run.
#[derive(Debug, Clone, PartialEq)]
pub struct LmOutcome {
    pub s_hat: Vec<Complex64>,
    pub x: Vec<Complex64>,
    pub cost: f64,
    pub iterations: usize,
    /// Objective after each accepted step, starting with the initial value.
    pub accepted_costs: Vec<f64>,
    pub converged: bool,
}

impl LmOutcome {
    pub fn rms(&self) -> f64 {
        (self.cost / self.x.len() as f64 / 2.0).sqrt()
    }
}

pub fn validate_pilots(pilots: &Pilots, n: usize) -> Result<()> {
    let first = pilots.get(&0).ok_or(Error::MissingFirstPilot)?;
    if first.norm() < MIN_PILOT_MAGNITUDE {
        return Err(Error::DegeneratePilot(first.norm()));
    }
    if let Some((&index, _)) = pilots.range(n..).next() {
        return Err(Error::PilotOutOfRange { index, n });
    }
    Ok(())
}

/// Least-squares problem `min ||y - sqrt(rho) B(x) s_hat||^2`.
pub struct JointProblem<'a> {
    fm: &'a FrontendMatrices,
    y: DVector<Complex64>,
    pilots: &'a Pilots,
    free: Vec<usize>,
    sqrt_rho: f64,
}

impl<'a> JointProblem<'a> {
    pub fn new(fm: &'a FrontendMatrices, y: &[Complex64], pilots: &'a Pilots, rho: f64) -> Result<Self> {
        let n = fm.n();
        if fm.q() >= n {
            return Err(Error::RankNotBelowBlockLength {
                q: fm.q(),
                n,
                doppler_exceeds_signal_bandwidth: false,
            });
        }
        check_len("y", 2 * n, y.len())?;
        validate_pilots(pilots, n)?;
        if !(rho.is_finite() && rho > 0.0) {
            return Err(Error::InvalidParameter {
                field: "rho",
                reason: format!("SNR must be positive, got {rho}"),
            });
        }
        Ok(Self {
            fm,
            y: DVector::from_column_slice(y),
            pilots,
            free: (0..n).filter(|k| !pilots.contains_key(k)).collect(),
            sqrt_rho: rho.sqrt(),
        })
    }

    fn n(&self) -> usize {
        self.fm.n()
    }

    fn unpack(&self, theta: &DVector<Complex64>) -> (Vec<Complex64>, Vec<Complex64>) {
        let q = self.fm.q();
        let s: Vec<Complex64> = theta.rows(0, q).iter().copied().collect();
        let mut x = vec![Complex64::new(0.0, 0.0); self.n()];
        for (&k, &v) in self.pilots {
            x[k] = v;
        }
        for (i, &k) in self.free.iter().enumerate() {
            x[k] = theta[q + i];
        }
        (s, x)
    }

    fn pack(&self, s: &[Complex64], x: &[Complex64]) -> DVector<Complex64> {
        let q = self.fm.q();
        DVector::from_fn(q + self.free.len(), |i, _| if i < q { s[i] } else { x[self.free[i - q]] })
    }

    /// Residual `y - f(theta)` and the Jacobian of `f`.
    fn linearize(&self, theta: &DVector<Complex64>) -> (DVector<Complex64>, DMatrix<Complex64>) {
        let (n, q) = (self.n(), self.fm.q());
        let (s, x) = self.unpack(theta);
        let sr = Complex64::new(self.sqrt_rho, 0.0);
        let gs = &self.fm.g * DVector::from_column_slice(&s) * sr;
        let mut r = self.y.clone();
        let mut jac = DMatrix::zeros(2 * n, theta.len());
        for row in 0..2 * n {
            let xk = x[row % n];
            r[row] -= xk * gs[row];
            for m in 0..q {
                jac[(row, m)] = sr * xk * self.fm.g[(row, m)];
            }
        }
        for (i, &k) in self.free.iter().enumerate() {
            jac[(k, q + i)] = gs[k];
            jac[(n + k, q + i)] = gs[n + k];
        }
        (r, jac)
    }

    pub fn accept_level(&self, opts: &RecoveryOptions) -> f64 {
        let rows = 2.0 * self.n() as f64;
        if opts.noisy {
            rows + 3.0 * (2.0 * rows).sqrt()
        } else {
            opts.tol_abs * opts.tol_abs * rows
        }
    }

    /// Damped Gauss-Newton (Levenberg-Marquardt) from one start.
    ///
    /// The residual is holomorphic in the unknowns, so the complex normal
    /// equations are the realified `2x` system written in complex form.
    pub fn solve_from(&self, start: &Start, opts: &RecoveryOptions) -> Result<LmOutcome> {
        check_len("start s_hat", self.fm.q(), start.s_hat.len())?;
        check_len("start x", self.n(), start.x.len())?;
        let mut theta = self.pack(&start.s_hat, &start.x);
        let dim = theta.len();
        let (mut r, mut jac) = self.linearize(&theta);
        let mut cost = r.norm_squared();
        let mut costs = vec![cost];
        let mut lambda = 1e-3;
        let level = self.accept_level(opts);
        let mut iterations = 0;
        // stop once the fit is exact to rounding
        let floor = 1e-30 * self.y.norm_squared().max(1e-300);
        while iterations < opts.max_iter {
            iterations += 1;
            let jh = jac.adjoint();
            let grad = &jh * &r;
            if grad.norm() < 1e-12 || cost <= floor {
                break;
            }
            let jtj = &jh * &jac;
            let dmax = (0..dim).map(|i| jtj[(i, i)].re).fold(0.0, f64::max);
            let mut accepted = false;
            while lambda < 1e20 {
                let mut a = jtj.clone();
                for i in 0..dim {
                    a[(i, i)] += lambda * (jtj[(i, i)].re + 1e-12 * dmax);
                }
                let step = match a.clone().cholesky() {
                    Some(ch) => ch.solve(&grad),
                    None => match a.lu().solve(&grad) {
                        Some(s) => s,
                        None => {
                            lambda *= 10.0;
                            continue;
                        }
                    },
                };
                let cand = &theta + &step;
                let (r_new, jac_new) = self.linearize(&cand);
                let c_new = r_new.norm_squared();
                if c_new.is_finite() && c_new < cost {
                    let rel_step = step.norm() / (theta.norm() + 1e-300);
                    theta = cand;
                    r = r_new;
                    jac = jac_new;
                    cost = c_new;
                    costs.push(cost);
                    lambda = (lambda * 0.3).max(1e-15);
                    accepted = true;
                    if rel_step < 1e-15 {
                        lambda = f64::INFINITY;
                    }
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted || !lambda.is_finite() {
                break;
            }
        }
        let (s_hat, x) = self.unpack(&theta);
        Ok(LmOutcome {
            s_hat,
            x,
            cost,
            iterations,
            accepted_costs: costs,
            converged: cost <= level,
        })
    }

    /// Standard complex Gaussian initialization.
    pub fn random_start<R: Rng + ?Sized>(&self, rng: &mut R) -> Start {
        Start {
            s_hat: complex_normal_vec(rng, self.fm.q()),
            x: complex_normal_vec(rng, self.n()),
        }
    }
}

fn class_digest(s_hat: &[Complex64], x: &[Complex64]) -> String {
    let mut h = Sha256::new();
    for z in s_hat.iter().chain(x) {
        // 1e-6 grid, matching the clustering distance
        for part in [z.re, z.im] {
            h.update(((part * 1e6).round() as i64).to_le_bytes());
        }
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn to_result(out: &LmOutcome, used: usize) -> RecoveryResult {
    RecoveryResult {
        s_hat_est: out.s_hat.clone(),
        x_est: out.x.clone(),
        residual: out.rms(),
        n_starts_used: used,
        converged: out.converged,
        solution_class: class_digest(&out.s_hat, &out.x),
    }
}

/// Runs `extra_starts` first, then `opts.n_starts` random starts; returns
/// the best (or first converged) solution plus every per-start outcome.
pub fn recover_joint_oversampled_traced(
    spec: &BlockSpec,
    y_stacked: &[Complex64],
    pilots: &Pilots,
    rho: f64,
    opts: &RecoveryOptions,
    extra_starts: &[Start],
) -> Result<(RecoveryResult, Vec<LmOutcome>)> {
    let fm = FrontendMatrices::new(spec);
    let problem = JointProblem::new(&fm, y_stacked, pilots, rho)?;
    let mut rng = stream_rng(opts.seed, 0);
    let mut outcomes: Vec<LmOutcome> = Vec::new();
    let total = extra_starts.len() + opts.n_starts;
    for i in 0..total {
        let start = if i < extra_starts.len() {
            extra_starts[i].clone()
        } else {
            problem.random_start(&mut rng)
        };
        let out = problem.solve_from(&start, opts)?;
        let done = out.converged && opts.stop_at_first;
        outcomes.push(out);
        if done {
            break;
        }
    }
    let best = outcomes
        .iter()
        .min_by(|a, b| {
            // converged first, then lowest cost
            (!a.converged, a.cost).partial_cmp(&(!b.converged, b.cost)).unwrap()
        })
        .ok_or_else(|| Error::Invalid("no starts requested".into()))?;
    Ok((to_result(best, outcomes.len()), outcomes))
}

pub fn recover_joint_oversampled(
    spec: &BlockSpec,
    y_stacked: &[Complex64],
    pilots: &Pilots,
    rho: f64,
    opts: &RecoveryOptions,
) -> Result<RecoveryResult> {
    recover_joint_oversampled_traced(spec, y_stacked, pilots, rho, opts, &[]).map(|r| r.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearRecovery {
    /// Minimum-norm least-squares estimate of the unnormalized `s`.
    #[serde(with = "crate::serde_complex::vec")]
    pub s_est: Vec<Complex64>,
    pub n_pilots: usize,
    pub rank: usize,
    pub singular_values: Vec<f64>,
    pub rank_deficient: bool,
    /// A unit null-space direction when rank-deficient.
    #[serde(with = "crate::serde_complex::vec")]
    pub null_direction: Vec<Complex64>,
    /// RMS misfit on the pilot equations.
    pub residual: f64,
}

impl LinearRecovery {
    /// A different `s` that fits the pilot equations equally well.
    pub fn second_solution(&self, step: f64) -> Option<Vec<Complex64>> {
        if !self.rank_deficient {
            return None;
        }
        Some(
            self.s_est
                .iter()
                .zip(&self.null_direction)
                .map(|(s, v)| s + v * step)
                .collect(),
        )
    }
}

/// Relative singular-value cut for the rank diagnosis.
pub const LINEAR_RANK_TOL: f64 = 1e-10;

/// Pilot equations `y_k = sqrt(rho) x_k V_k s`, `k` in the pilot set.
pub fn pilot_system(spec: &BlockSpec, pilots: &Pilots, rho: f64) -> DMatrix<Complex64> {
    let v = symbol_rate_matrix(spec);
    let rows: Vec<usize> = pilots.keys().copied().collect();
    let sr = rho.sqrt();
    DMatrix::from_fn(rows.len(), spec.q(), |i, m| v[(rows[i], m)] * pilots[&rows[i]] * sr)
}

pub fn recover_linear_symbol_rate(
    spec: &BlockSpec,
    y: &[Complex64],
    pilots: &Pilots,
    rho: f64,
) -> Result<LinearRecovery> {
    let n = spec.n();
    let q = spec.q();
    check_len("y", n, y.len())?;
    if pilots.is_empty() {
        return Err(Error::Invalid("at least one pilot is required".into()));
    }
    if let Some((&index, _)) = pilots.range(n..).next() {
        return Err(Error::PilotOutOfRange { index, n });
    }
    let a = pilot_system(spec, pilots, rho);
    let b = DVector::from_iterator(pilots.len(), pilots.keys().map(|&k| y[k]));
    // pad to at least Q rows so the SVD exposes the full right null space
    let mut padded = DMatrix::zeros(a.nrows().max(q), q);
    padded.rows_mut(0, a.nrows()).copy_from(&a);
    let mut rhs = DVector::zeros(padded.nrows());
    rhs.rows_mut(0, b.len()).copy_from(&b);
    let svd = padded.svd(true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let cut = LINEAR_RANK_TOL * smax;
    let rank = svd.singular_values.iter().filter(|&&s| s > cut).count();
    let s_est = svd.solve(&rhs, cut).map_err(|e| Error::Invalid(e.to_string()))?;
    let vt = svd.v_t.as_ref().expect("requested V^H");
    let null_direction = match svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= cut)
        .map(|(i, _)| i)
        .next()
    {
        Some(i) => vt.row(i).adjoint().iter().copied().collect(),
        None => Vec::new(),
    };
    let fit = &a * &s_est - &b;
    let mut sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(LinearRecovery {
        s_est: s_est.iter().copied().collect(),
        n_pilots: pilots.len(),
        rank,
        singular_values: sv,
        rank_deficient: rank < q,
        null_direction,
        residual: fit.norm() / (pilots.len() as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityReport {
    pub distinct_solution_classes: usize,
    pub converged_starts: usize,
    pub n_starts: usize,
    pub truth_found: bool,
}

/// Greedy clustering of `(s_hat, x)` vectors at Euclidean distance `tol`.
pub fn cluster_solutions(points: &[Vec<Complex64>], tol: f64) -> Vec<Vec<Complex64>> {
    let mut reps: Vec<Vec<Complex64>> = Vec::new();
    for p in points {
        let close = reps.iter().any(|r| {
            r.iter().zip(p).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() < tol
        });
        if !close {
            reps.push(p.clone());
        }
    }
    reps
}

/// Noiseless solution multiplicity seen from `n_starts` random starts plus
/// one truth-seeded start.
pub fn multiplicity_probe<R: Rng + ?Sized>(
    spec: &BlockSpec,
    truth: &Start,
    pilots: &Pilots,
    rho: f64,
    n_starts: usize,
    rng: &mut R,
) -> Result<MultiplicityReport> {
    let fm = FrontendMatrices::new(spec);
    check_len("truth x", spec.n(), truth.x.len())?;
    let mut x = truth.x.clone();
    for (&k, &v) in pilots {
        if k < x.len() {
            x[k] = v;
        }
    }
    let y = fm.b(&x)? * DVector::from_column_slice(&truth.s_hat) * Complex64::new(rho.sqrt(), 0.0);
    let y: Vec<Complex64> = y.iter().copied().collect();
    let problem = JointProblem::new(&fm, &y, pilots, rho)?;
    let opts = RecoveryOptions::default();
    let truth_start = Start { s_hat: truth.s_hat.clone(), x: x.clone() };
    let free: Vec<usize> = (0..spec.n()).filter(|k| !pilots.contains_key(k)).collect();
    let flatten = |s: &[Complex64], xs: &[Complex64]| -> Vec<Complex64> {
        s.iter().copied().chain(free.iter().map(|&k| xs[k])).collect()
    };
    let mut solutions = Vec::new();
    for i in 0..=n_starts {
        let start = if i == 0 { truth_start.clone() } else { problem.random_start(rng) };
        let out = problem.solve_from(&start, &opts)?;
        if out.converged {
            solutions.push(flatten(&out.s_hat, &out.x));
        }
    }
    let truth_vec = flatten(&truth.s_hat, &x);
    let classes = cluster_solutions(&solutions, CLUSTER_DISTANCE);
    let truth_found = classes.iter().any(|c| {
        c.iter().zip(&truth_vec).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt() < CLUSTER_DISTANCE
    });
    Ok(MultiplicityReport {
        distinct_solution_classes: classes.len(),
        converged_starts: solutions.len(),
        n_starts: n_starts + 1,
        truth_found,
    })
}

/// Relative error `||(s_hat, x_free) - truth|| / ||truth||`.
pub fn relative_parameter_error(
    est_s: &[Complex64],
    est_x: &[Complex64],
    truth: &Start,
    pilots: &Pilots,
) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in est_s.iter().zip(&truth.s_hat) {
        num += (a - b).norm_sqr();
        den += b.norm_sqr();
    }
    for k in (0..truth.x.len()).filter(|k| !pilots.contains_key(k)) {
        num += (est_x[k] - truth.x[k]).norm_sqr();
        den += truth.x[k].norm_sqr();
    }
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::simulate_oversampled;
    use crate::fading::FadingCoeffs;
    use crate::random::complex_normal_vec;
    use crate::random::LabRng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn instance(n: usize, q: usize, seed: u64) -> (BlockSpec, Start, Pilots) {
        let spec = BlockSpec::with_rank(n, q).unwrap();
        let mut rng = stream_rng(seed, 0);
        let truth = Start {
            s_hat: complex_normal_vec(&mut rng, q),
            x: complex_normal_vec(&mut rng, n),
        };
        let pilots = Pilots::from([(0, truth.x[0])]);
        (spec, truth, pilots)
    }

    fn observe(spec: &BlockSpec, truth: &Start, rho: f64, rng: Option<&mut LabRng>) -> Vec<Complex64> {
        let coeffs = FadingCoeffs::from_normalized(spec, truth.s_hat.clone()).unwrap();
        simulate_oversampled(spec, &coeffs, &truth.x, rho, rng).unwrap().stacked()
    }

    #[test]
    fn pilot_validation() {
        let one = c(1.0, 0.0);
        assert_eq!(validate_pilots(&Pilots::from([(1, one)]), 4), Err(Error::MissingFirstPilot));
        assert!(matches!(
            validate_pilots(&Pilots::from([(0, c(1e-10, 0.0))]), 4),
            Err(Error::DegeneratePilot(_))
        ));
        assert!(matches!(
            validate_pilots(&Pilots::from([(0, one), (4, one)]), 4),
            Err(Error::PilotOutOfRange { index: 4, n: 4 })
        ));
    }

    #[test]
    fn noiseless_round_trip_truth_seeded() {
        for (n, q) in [(2, 1), (4, 1), (4, 3), (8, 3), (8, 5), (10, 3)] {
            let (spec, truth, pilots) = instance(n, q, (n * 10 + q) as u64);
            let y = observe(&spec, &truth, 1.0, None);
            let opts = RecoveryOptions { n_starts: 0, ..Default::default() };
            let (res, _) =
                recover_joint_oversampled_traced(&spec, &y, &pilots, 1.0, &opts, std::slice::from_ref(&truth)).unwrap();
            assert!(res.converged && res.residual < 1e-10, "({n},{q}) residual {}", res.residual);
        }
    }

    #[test]
    fn noiseless_recovery_from_perturbed_start() {
        let (spec, truth, pilots) = instance(4, 3, 7);
        let y = observe(&spec, &truth, 10.0, None);
        let mut rng = stream_rng(8, 0);
        let start = Start {
            s_hat: truth.s_hat.iter().map(|v| v + 0.05 * crate::random::complex_normal(&mut rng)).collect(),
            x: truth.x.iter().map(|v| v + 0.05 * crate::random::complex_normal(&mut rng)).collect(),
        };
        let opts = RecoveryOptions { n_starts: 0, ..Default::default() };
        let (res, _) = recover_joint_oversampled_traced(&spec, &y, &pilots, 10.0, &opts, &[start]).unwrap();
        assert!(res.converged);
        let err = relative_parameter_error(&res.s_hat_est, &res.x_est, &truth, &pilots);
        assert!(err < 1e-6, "relative error {err:e}");
    }

    #[test]
    fn zero_data_is_linear_in_s_hat() {
        // only the two samples of symbol 1 see s_hat, so it is pinned down
        // for Q <= 2 and only up to a null direction beyond that
        for (q, unique) in [(1, true), (3, false)] {
            let spec = BlockSpec::with_rank(4, q).unwrap();
            let mut rng = stream_rng(3, 0);
            let s_hat = complex_normal_vec(&mut rng, q);
            let mut x = vec![c(0.0, 0.0); 4];
            x[0] = c(0.8, 0.6);
            let truth = Start { s_hat, x };
            let y = observe(&spec, &truth, 1.0, None);
            let pilots: Pilots = (0..4).map(|k| (k, truth.x[k])).collect();
            let start = Start { s_hat: vec![c(0.0, 0.0); q], x: truth.x.clone() };
            let opts = RecoveryOptions { n_starts: 0, ..Default::default() };
            let (res, _) = recover_joint_oversampled_traced(&spec, &y, &pilots, 1.0, &opts, &[start]).unwrap();
            assert!(res.converged && res.residual < 1e-12);
            let err = relative_parameter_error(&res.s_hat_est, &res.x_est, &truth, &pilots);
            assert_eq!(err < 1e-10, unique, "Q = {q}: relative error {err:e}");
        }
    }

    #[test]
    fn accepted_costs_never_increase() {
        let (spec, truth, pilots) = instance(8, 3, 11);
        let mut rng = stream_rng(12, 0);
        let y = observe(&spec, &truth, 100.0, Some(&mut rng));
        let fm = FrontendMatrices::new(&spec);
        let problem = JointProblem::new(&fm, &y, &pilots, 100.0).unwrap();
        for _ in 0..10 {
            let start = problem.random_start(&mut rng);
            let out = problem.solve_from(&start, &RecoveryOptions { noisy: true, ..Default::default() }).unwrap();
            for w in out.accepted_costs.windows(2) {
                assert!(w[1] <= w[0]);
            }
        }
    }

    #[test]
    fn phase_equivariance() {
        let (spec, truth, pilots) = instance(8, 3, 21);
        let mut rng = stream_rng(22, 0);
        let y = observe(&spec, &truth, 50.0, Some(&mut rng));
        let rot = Complex64::from_polar(1.0, 0.7);
        let y_rot: Vec<_> = y.iter().map(|v| v * rot).collect();
        let fm = FrontendMatrices::new(&spec);
        let opts = RecoveryOptions { noisy: true, ..Default::default() };
        let p1 = JointProblem::new(&fm, &y, &pilots, 50.0).unwrap();
        let p2 = JointProblem::new(&fm, &y_rot, &pilots, 50.0).unwrap();
        for _ in 0..5 {
            let start = p1.random_start(&mut rng);
            let rotated = Start { s_hat: start.s_hat.iter().map(|v| v * rot).collect(), x: start.x.clone() };
            let a = p1.solve_from(&start, &opts).unwrap();
            let b = p2.solve_from(&rotated, &opts).unwrap();
            assert!((a.rms() - b.rms()).abs() < 1e-10);
            if a.converged && b.converged {
                for (sa, sb) in a.s_hat.iter().zip(&b.s_hat) {
                    assert!((sa * rot - sb).norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn linear_recovery_with_q_pilots_is_exact() {
        let spec = BlockSpec::with_rank(8, 3).unwrap();
        let mut rng = stream_rng(31, 0);
        let coeffs = crate::fading::sample_fading(&spec, &mut rng);
        let x = complex_normal_vec(&mut rng, 8);
        let obs = crate::discretization::simulate_symbol_rate::<LabRng>(&spec, &coeffs, &x, 4.0, None).unwrap();
        let y = obs.stacked();
        for positions in [[0, 1, 2], [0, 3, 7], [2, 5, 6]] {
            let pilots: Pilots = positions.iter().map(|&k| (k, x[k])).collect();
            let lin = recover_linear_symbol_rate(&spec, &y, &pilots, 4.0).unwrap();
            assert!(!lin.rank_deficient);
            let err = lin.s_est.iter().zip(&coeffs.s).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt()
                / coeffs.s.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            assert!(err < 1e-9);
        }
        let pilots: Pilots = [0, 4].iter().map(|&k| (k, x[k])).collect();
        let lin = recover_linear_symbol_rate(&spec, &y, &pilots, 4.0).unwrap();
        assert!(lin.rank_deficient);
        assert_eq!(lin.rank, 2);
        let other = lin.second_solution(1.0).unwrap();
        let a = pilot_system(&spec, &pilots, 4.0);
        let fit = &a * DVector::from_column_slice(&other);
        for (i, &k) in pilots.keys().enumerate() {
            assert!((fit[i] - y[k]).norm() < 1e-10);
        }
        let gap: f64 = other.iter().zip(&lin.s_est).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        assert!((gap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn all_pilot_residual_scales_with_snr() {
        let spec = BlockSpec::with_rank(8, 3).unwrap();
        let mut errs = Vec::new();
        let rhos = [1e2, 1e4, 1e6];
        for &rho in &rhos {
            let mut rng = stream_rng(41, 0);
            let mut acc = 0.0;
            for _ in 0..200 {
                let coeffs = crate::fading::sample_fading(&spec, &mut rng);
                let x = complex_normal_vec(&mut rng, 8);
                let y = crate::discretization::simulate_symbol_rate(&spec, &coeffs, &x, rho, Some(&mut rng))
                    .unwrap()
                    .stacked();
                let pilots: Pilots = (0..8).map(|k| (k, x[k])).collect();
                let lin = recover_linear_symbol_rate(&spec, &y, &pilots, rho).unwrap();
                acc += lin.s_est.iter().zip(&coeffs.s).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
            }
            errs.push(acc / 200.0);
        }
        // estimation error falls as rho^{-1/2}: a decade per 20 dB
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 10.0).abs() < 1.0, "ratio {ratio}");
        }
    }

    #[test]
    fn multiplicity_n2_q1_single_class() {
        let (spec, truth, pilots) = instance(2, 1, 51);
        let r = multiplicity_probe(&spec, &truth, &pilots, 1.0, 20, &mut stream_rng(52, 0)).unwrap();
        assert_eq!(r.distinct_solution_classes, 1);
        assert!(r.truth_found);
    }

    #[test]
    fn multiplicity_n4_q3_is_stable() {
        let (spec, truth, pilots) = instance(4, 3, 61);
        let a = multiplicity_probe(&spec, &truth, &pilots, 1.0, 50, &mut stream_rng(62, 0)).unwrap();
        let b = multiplicity_probe(&spec, &truth, &pilots, 1.0, 50, &mut stream_rng(62, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.truth_found);
        assert!(a.distinct_solution_classes >= 1);
    }

    #[test]
    fn clustering() {
        let a = vec![c(1.0, 0.0), c(0.0, 1.0)];
        let b = vec![c(1.0 + 1e-8, 0.0), c(0.0, 1.0)];
        let d = vec![c(2.0, 0.0), c(0.0, 1.0)];
        assert_eq!(cluster_solutions(&[a, b, d], CLUSTER_DISTANCE).len(), 2);
    }
}
