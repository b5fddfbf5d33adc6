//! Entropy and mutual-information estimates for both front-ends.
//!
//! All quantities are in nats unless a field says otherwise. Monte Carlo
//! loops draw sample `i` from `stream_rng(seed, i)` so results do not depend
//! on how the work is split across threads.

use std::f64::consts::{E, PI};
use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::discretization::{symbol_rate_matrix_normalized, FrontendMatrices};
use crate::error::{Error, Result};
use crate::fading::BlockSpec;
use crate::identifiability::build_jacobian;
use crate::knn::{entropy_knn, PointSet};
use crate::linalg::{log_abs_det, log_det_gram};
use crate::quadrature::integrate_real;
use crate::random::{complex_normal, complex_normal_vec, stream_rng, LabRng};

pub const MIN_INNER_SAMPLES: usize = 10_000;
pub const MAX_MIXTURE_N: usize = 8;
pub const MAX_MIXTURE_RHO_DB: f64 = 40.0;
pub const LOW_ESS: f64 = 50.0;

/// Share of inner draws taken from the prior-induced density.
const DEFENSIVE_WEIGHT: f64 = 0.2;
/// Covariance inflation of the Gaussian proposal component.
const PROPOSAL_INFLATION: f64 = 2.0;
const IRLS_STEPS: usize = 4;
/// Trapezoid grid in `u = ln r` for the radial integral.
const RADIAL_U_MIN: f64 = -9.5;
const RADIAL_U_MAX: f64 = 2.5;
const RADIAL_STEP: f64 = 0.15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frontend {
    SymbolRate,
    Oversampled,
}

impl Frontend {
    pub fn as_str(self) -> &'static str {
        match self {
            Frontend::SymbolRate => "symbol_rate",
            Frontend::Oversampled => "oversampled",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    BoundChain,
    DirectMixture,
    CoherentControl,
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(rho: f64) -> f64 {
    10.0 * rho.log10()
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.is_finite() && rho > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { field: "rho", reason: format!("SNR must be positive, got {rho}") })
    }
}

/// Mean and standard error of i.i.d. samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl McEstimate {
    pub fn from_samples(v: &[f64]) -> Self {
        let n = v.len();
        let mean = v.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self { mean, stderr: (var / n as f64).sqrt(), n }
    }
}

/// `f(rng_i, i)` for `i in 0..n`, each sample on its own stream.
fn per_sample<T: Send>(n: usize, seed: u64, f: impl Fn(&mut LabRng, usize) -> T + Sync) -> Vec<T> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            f(&mut rng, i)
        })
        .collect()
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `(pi e)^{2N}` in log form: entropy of the `2N` unit noise samples.
pub fn noise_entropy(rows: usize) -> f64 {
    rows as f64 * (PI * E).ln()
}

/// `h(y|x)` at each `rho`, sharing the input draws across the grid.
pub fn cond_entropy_sweep(spec: &BlockSpec, rhos: &[f64], n_x_samples: usize, seed: u64) -> Result<Vec<McEstimate>> {
    for &r in rhos {
        check_rho(r)?;
    }
    if n_x_samples == 0 {
        return Err(Error::Invalid("n_x_samples must be positive".into()));
    }
    let fm = FrontendMatrices::new(spec);
    let n = spec.n();
    let c = noise_entropy(2 * n);
    let per: Vec<Vec<f64>> = per_sample(n_x_samples, seed, |rng, _| {
        let x = complex_normal_vec(rng, n);
        let b = fm.b(&x).expect("length N");
        rhos.iter().map(|&rho| c + log_det_gram(&b, rho)).collect()
    });
    Ok((0..rhos.len())
        .map(|j| McEstimate::from_samples(&per.iter().map(|v| v[j]).collect::<Vec<_>>()))
        .collect())
}

/// `E_x[log((pi e)^{2N} det(rho B^H B + I_Q))]`.
pub fn cond_entropy_mc(spec: &BlockSpec, rho: f64, n_x_samples: usize, seed: u64) -> Result<McEstimate> {
    Ok(cond_entropy_sweep(spec, &[rho], n_x_samples, seed)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JensenReport {
    /// `log E[det(B^H B + I)]`.
    pub value: f64,
    /// `E[log det(B^H B + I)]`, never above `value`.
    pub mean_log_det: f64,
    pub n_samples: usize,
}

pub fn jensen_const(spec: &BlockSpec, n_samples: usize, seed: u64) -> Result<JensenReport> {
    if n_samples == 0 {
        return Err(Error::Invalid("n_samples must be positive".into()));
    }
    let fm = FrontendMatrices::new(spec);
    let logs: Vec<f64> = per_sample(n_samples, seed, |rng, _| {
        let x = complex_normal_vec(rng, spec.n());
        log_det_gram(&fm.b(&x).expect("length N"), 1.0)
    });
    let value = log_sum_exp(&logs) - (n_samples as f64).ln();
    if !value.is_finite() {
        return Err(Error::NonFinite("Jensen constant".into()));
    }
    Ok(JensenReport {
        value,
        mean_log_det: logs.iter().sum::<f64>() / n_samples as f64,
        n_samples,
    })
}

/// Noiseless `[y_bar]_I = [B(x) s_hat]_{1:N+Q-1}` for Gaussian `(x, s_hat)`,
/// as real vectors of dimension `2(N+Q-1)`.
pub fn index_set_samples(spec: &BlockSpec, n_samples: usize, seed: u64) -> Result<PointSet> {
    let fm = FrontendMatrices::new(spec);
    let (n, q) = (spec.n(), spec.q());
    let len = n + q - 1;
    let rows: Vec<Vec<f64>> = per_sample(n_samples, seed, |rng, _| {
        let x = complex_normal_vec(rng, n);
        let s = DVector::from_vec(complex_normal_vec(rng, q));
        let y = fm.b(&x).expect("length N") * s;
        y.iter().take(len).flat_map(|z| [z.re, z.im]).collect()
    });
    PointSet::new(2 * len, rows.concat())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MISweepPoint {
    pub rho_db: f64,
    /// Per block.
    pub mi_nats: f64,
    pub mi_bits: f64,
    pub stderr: f64,
    pub estimator: EstimatorKind,
    pub frontend: Frontend,
    pub n_outer: usize,
    pub n_inner: usize,
    pub seed: u64,
    pub n: usize,
    pub q: usize,
    /// Smallest importance-sampling effective sample size (mixture only).
    #[serde(default)]
    pub min_ess: Option<f64>,
    #[serde(default)]
    pub low_ess_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundChainTerms {
    pub h_ybar_index_set: f64,
    pub jensen_const: f64,
    /// `(N - Q + 1) log(pi e) - 2N log(pi e)`.
    pub noise_terms: f64,
    /// `(N - 1) log rho`.
    pub rho_term: f64,
}

/// `(N+Q-1) log rho + h + h(w_J) - [Q log rho + J + 2N log(pi e)]`.
pub fn assemble_lower_bound(spec: &BlockSpec, rho: f64, h_index_set: f64, jensen: f64) -> (f64, BoundChainTerms) {
    let (n, q) = (spec.n(), spec.q());
    let terms = BoundChainTerms {
        h_ybar_index_set: h_index_set,
        jensen_const: jensen,
        noise_terms: noise_entropy(n + 1 - q) - noise_entropy(2 * n),
        rho_term: (n as f64 - 1.0) * rho.ln(),
    };
    let value = terms.rho_term + terms.h_ybar_index_set + terms.noise_terms - terms.jensen_const;
    (value, terms)
}

/// Lower bound on `I(x; y)` assembled from a kNN estimate of `h([y_bar]_I)`
/// and a Monte Carlo Jensen constant. `stderr` is 0: kNN bias is not
/// quantified.
pub fn mi_lower_bound_chain(
    spec: &BlockSpec,
    rho: f64,
    n_samples: usize,
    k: usize,
    seed: u64,
) -> Result<(MISweepPoint, BoundChainTerms)> {
    check_rho(rho)?;
    if rho <= 1.0 {
        return Err(Error::InvalidParameter { field: "rho", reason: "the bound chain assumes rho > 1".into() });
    }
    let h = entropy_knn(&index_set_samples(spec, n_samples, seed)?, k)?;
    if !h.is_finite() {
        return Err(Error::NonFinite("h([y_bar]_I)".into()));
    }
    let j = jensen_const(spec, n_samples, seed ^ 0x1e75e9)?;
    let (value, terms) = assemble_lower_bound(spec, rho, h, j.value);
    Ok((
        MISweepPoint {
            rho_db: linear_to_db(rho),
            mi_nats: value,
            mi_bits: value / 2f64.ln(),
            stderr: 0.0,
            estimator: EstimatorKind::BoundChain,
            frontend: Frontend::Oversampled,
            n_outer: n_samples,
            n_inner: 0,
            seed,
            n: spec.n(),
            q: spec.q(),
            min_ess: None,
            low_ess_count: 0,
        },
        terms,
    ))
}

/// Observation model `y = sqrt(rho) diag(x_rep) A s_hat + w`, `s_hat ~ CN(0, I)`;
/// `A` is `V diag(sigma)` (symbol rate) or `G` (oversampled).
pub struct MixtureModel {
    frontend: Frontend,
    n: usize,
    q: usize,
    a: DMatrix<Complex64>,
}

impl MixtureModel {
    pub fn new(spec: &BlockSpec, frontend: Frontend) -> Self {
        let a = match frontend {
            Frontend::SymbolRate => symbol_rate_matrix_normalized(spec),
            Frontend::Oversampled => FrontendMatrices::new(spec).g,
        };
        Self { frontend, n: spec.n(), q: spec.q(), a }
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    /// `diag(x_rep) A`.
    pub fn channel(&self, x: &[Complex64]) -> DMatrix<Complex64> {
        let mut b = self.a.clone();
        for (r, mut row) in b.row_iter_mut().enumerate() {
            row *= x[r % self.n];
        }
        b
    }

    /// `log CN(y; 0, I + rho B B^H)` via the `Q x Q` form.
    pub fn log_f_y_given_x(&self, x: &[Complex64], y: &[Complex64], rho: f64) -> f64 {
        let b = self.channel(x);
        let yv = DVector::from_column_slice(y);
        let bhy = b.adjoint() * &yv;
        let m = b.adjoint() * &b * Complex64::new(rho, 0.0) + DMatrix::identity(self.q, self.q);
        let ch = m.cholesky().expect("I + rho B^H B is positive definite");
        let log_det = 2.0 * ch.l().diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
        let quad = yv.norm_squared() - rho * bhy.dotc(&ch.solve(&bhy)).re;
        -(self.rows() as f64) * PI.ln() - log_det - quad
    }

    /// `log f(y | s_hat)` with `x` integrated out in closed form.
    pub fn log_f_y_given_s(&self, y: &[Complex64], rho: f64, s_hat: &[Complex64]) -> f64 {
        let g = &self.a * DVector::from_column_slice(s_hat);
        let (a, b) = self.radial_coefficients(y, &g);
        log_f_radial_terms(&a, &b, &self.symbol_energy(y), rho, 1.0, self.frontend)
    }

    /// Per-symbol `(a_k, b_k)` with `||g_k||^2 = a_k` and
    /// `|g_o y_e - g_e y_o|^2 = b_k` (`b_k = 0` at symbol rate), for the
    /// stacked `g = A w`.
    fn radial_coefficients(&self, y: &[Complex64], g: &DVector<Complex64>) -> (Vec<f64>, Vec<f64>) {
        let n = self.n;
        match self.frontend {
            Frontend::SymbolRate => ((0..n).map(|k| g[k].norm_sqr()).collect(), vec![0.0; n]),
            Frontend::Oversampled => {
                let a = (0..n).map(|k| g[k].norm_sqr() + g[n + k].norm_sqr()).collect();
                let b = (0..n).map(|k| (g[k] * y[n + k] - g[n + k] * y[k]).norm_sqr()).collect();
                (a, b)
            }
        }
    }

    fn symbol_energy(&self, y: &[Complex64]) -> Vec<f64> {
        let n = self.n;
        match self.frontend {
            Frontend::SymbolRate => y.iter().map(|v| v.norm_sqr()).collect(),
            Frontend::Oversampled => (0..n).map(|k| y[k].norm_sqr() + y[n + k].norm_sqr()).collect(),
        }
    }
}

/// `log f(y | r w)` given per-symbol `a_k(w)`, `b_k(w)`, energies `Y_k` and
/// `t = r^2`.
fn log_f_radial_terms(a: &[f64], b: &[f64], energy: &[f64], rho: f64, t: f64, frontend: Frontend) -> f64 {
    let dim = match frontend {
        Frontend::SymbolRate => 1.0,
        Frontend::Oversampled => 2.0,
    };
    let mut acc = 0.0;
    for k in 0..a.len() {
        let den = 1.0 + rho * t * a[k];
        acc -= dim * PI.ln() + den.ln() + (energy[k] + rho * t * b[k]) / den;
    }
    acc
}

/// Importance-sampling design for one observation.
struct Proposal {
    v: DVector<Complex64>,
    u: DMatrix<Complex64>,
    /// Gaussian component `CN(z0, kappa P^{-1})`, absent at symbol rate.
    gauss: Option<(DVector<Complex64>, DMatrix<Complex64>, f64)>,
}

fn orthonormal_complement(v: &DVector<Complex64>) -> DMatrix<Complex64> {
    let q = v.len();
    let pivot = v.icamax();
    let mut basis = DMatrix::zeros(q, q);
    basis.set_column(0, v);
    let mut col = 1;
    for j in 0..q {
        if j != pivot {
            basis[(j, col)] = Complex64::new(1.0, 0.0);
            col += 1;
        }
    }
    let qr = basis.qr();
    qr.q().columns(1, q - 1).into_owned()
}

/// `log` of the density of `z = U^H s / (v^H s)` for `s ~ CN(0, I_Q)`.
fn log_prior_z(z2: f64, q: usize) -> f64 {
    ln_gamma(q as f64) + (1.0 - q as f64) * PI.ln() - q as f64 * (1.0 + z2).ln()
}

impl MixtureModel {
    fn proposal(&self, y: &[Complex64]) -> Proposal {
        let q = self.q;
        let n = self.n;
        let e0 = DVector::from_fn(q, |i, _| Complex64::new(if i == 0 { 1.0 } else { 0.0 }, 0.0));
        if self.frontend == Frontend::SymbolRate || q == 1 {
            return Proposal { u: if q > 1 { orthonormal_complement(&e0) } else { DMatrix::zeros(1, 0) }, v: e0, gauss: None };
        }
        // rows y_e,k G_o,k - y_o,k G_e,k vanish on the true direction
        let m = DMatrix::from_fn(n, q, |k, j| y[n + k] * self.a[(k, j)] - y[k] * self.a[(n + k, j)]);
        let go = self.a.rows(0, n).into_owned();
        let ge = self.a.rows(n, n).into_owned();
        let mut v = crate::linalg::smallest_right_singular_vector(&m).0;
        let weights = |v: &DVector<Complex64>| -> Vec<f64> {
            let a: Vec<f64> = (0..n)
                .map(|k| (go.row(k) * v)[0].norm_sqr() + (ge.row(k) * v)[0].norm_sqr())
                .collect();
            let mean = a.iter().sum::<f64>() / n as f64;
            a.iter().map(|ak| 1.0 / (ak + 1e-6 * mean + 1e-300)).collect()
        };
        for _ in 0..IRLS_STEPS {
            let w = weights(&v);
            let mw = DMatrix::from_fn(n, q, |k, j| m[(k, j)] * w[k].sqrt());
            v = crate::linalg::smallest_right_singular_vector(&mw).0;
        }
        let w = weights(&v);
        let u = orthonormal_complement(&v);
        // Gaussian approximation of the z-posterior at high SNR, plus the
        // curvature of the prior-induced density
        let mu = DMatrix::from_fn(n, q - 1, |k, j| (m.row(k) * u.column(j))[0] * w[k].sqrt());
        let mv = DVector::from_fn(n, |k, _| (m.row(k) * &v)[0] * w[k].sqrt());
        let mut prec = mu.adjoint() * &mu;
        let z0 = match prec.clone().cholesky() {
            Some(ch) => -ch.solve(&(mu.adjoint() * &mv)),
            None => DVector::zeros(q - 1),
        };
        let z2 = z0.norm_squared();
        for i in 0..q - 1 {
            prec[(i, i)] += Complex64::new(q as f64 / (1.0 + z2), 0.0);
        }
        let gauss = prec.cholesky().map(|ch| {
            let l = ch.l();
            let log_det_p = 2.0 * l.diagonal().iter().map(|d| d.re.ln()).sum::<f64>();
            (z0, l, log_det_p)
        });
        Proposal { v, u, gauss }
    }

    /// `log f(y)` by importance sampling over the direction of `s_hat`
    /// and trapezoid integration over its magnitude. Returns `(log f, ess)`.
    pub fn log_f_y<R: Rng + ?Sized>(&self, y: &[Complex64], rho: f64, n_inner: usize, rng: &mut R) -> (f64, f64) {
        let q = self.q;
        let prop = self.proposal(y);
        let energy = self.symbol_energy(y);
        let grid: Vec<f64> = {
            let steps = ((RADIAL_U_MAX - RADIAL_U_MIN) / RADIAL_STEP).round() as usize;
            (0..=steps).map(|i| RADIAL_U_MIN + i as f64 * RADIAL_STEP).collect()
        };
        let log_radial = |w: &DVector<Complex64>| -> f64 {
            let g = &self.a * w;
            let (a, b) = self.radial_coefficients(y, &g);
            let wn2 = w.norm_squared();
            let mut vals = Vec::with_capacity(grid.len());
            for (i, &u) in grid.iter().enumerate() {
                let t = (2.0 * u).exp();
                let mut lg = (2.0 * PI).ln() - q as f64 * PI.ln() + 2.0 * q as f64 * u - t * wn2
                    + log_f_radial_terms(&a, &b, &energy, rho, t, self.frontend);
                if i == 0 || i + 1 == grid.len() {
                    lg -= 2f64.ln();
                }
                vals.push(lg);
            }
            log_sum_exp(&vals) + RADIAL_STEP.ln()
        };
        if q == 1 {
            // no direction to integrate over; consume the same draws anyway
            for _ in 0..n_inner {
                let _: f64 = rng.random();
                let _ = complex_normal(rng);
            }
            return (log_radial(&prop.v), n_inner as f64);
        }
        let mut logw = Vec::with_capacity(n_inner);
        let alpha = if prop.gauss.is_some() { DEFENSIVE_WEIGHT } else { 1.0 };
        for _ in 0..n_inner {
            let pick: f64 = rng.random();
            let s = DVector::from_vec(complex_normal_vec(rng, q));
            let e = DVector::from_vec(complex_normal_vec(rng, q - 1));
            let z = match &prop.gauss {
                Some((z0, l, _)) if pick >= alpha => {
                    // z = z0 + sqrt(kappa) L^{-H} e
                    let step = l.adjoint().solve_upper_triangular(&e).expect("nonsingular");
                    z0 + step * Complex64::new(PROPOSAL_INFLATION.sqrt(), 0.0)
                }
                _ => {
                    let c = prop.v.dotc(&s);
                    prop.u.adjoint() * &s / c
                }
            };
            let z2 = z.norm_squared();
            let mut log_q = log_prior_z(z2, q) + alpha.ln();
            if let Some((z0, l, log_det_p)) = &prop.gauss {
                let d = l.adjoint() * (&z - z0);
                let dim = (q - 1) as f64;
                let lg = -dim * PI.ln() + log_det_p - dim * PROPOSAL_INFLATION.ln()
                    - d.norm_squared() / PROPOSAL_INFLATION
                    + (1.0 - alpha).ln();
                log_q = log_sum_exp(&[log_q, lg]);
            }
            let w = &prop.v + &prop.u * &z;
            logw.push(log_radial(&w) - log_q);
        }
        let lse = log_sum_exp(&logw);
        let log_f = lse - (n_inner as f64).ln();
        let sq = log_sum_exp(&logw.iter().map(|l| 2.0 * l).collect::<Vec<_>>());
        let ess = (2.0 * lse - sq).exp();
        (log_f, ess)
    }
}

fn check_mixture_regime(spec: &BlockSpec, rhos: &[f64], n_outer: usize, n_inner: usize) -> Result<()> {
    if spec.n() > MAX_MIXTURE_N {
        return Err(Error::UnsupportedRegime(format!(
            "direct mixture supports N <= {MAX_MIXTURE_N}, got N = {}",
            spec.n()
        )));
    }
    for &rho in rhos {
        check_rho(rho)?;
        if linear_to_db(rho) > MAX_MIXTURE_RHO_DB + 1e-9 {
            return Err(Error::UnsupportedRegime(format!(
                "direct mixture supports rho <= {MAX_MIXTURE_RHO_DB} dB, got {:.2} dB",
                linear_to_db(rho)
            )));
        }
    }
    if n_inner < MIN_INNER_SAMPLES {
        return Err(Error::InvalidParameter {
            field: "n_inner",
            reason: format!("need at least {MIN_INNER_SAMPLES}, got {n_inner}"),
        });
    }
    if n_outer < 2 {
        return Err(Error::InvalidParameter { field: "n_outer", reason: "need at least 2 outer samples".into() });
    }
    Ok(())
}

/// `E[log f(y|x) - log f(y)]` per block at each `rho`. Outer draws
/// `(x, s_hat, w)` and inner draws are shared across the grid.
pub fn mi_direct_mixture_sweep(
    spec: &BlockSpec,
    rhos: &[f64],
    n_outer: usize,
    n_inner: usize,
    frontend: Frontend,
    seed: u64,
) -> Result<Vec<MISweepPoint>> {
    check_mixture_regime(spec, rhos, n_outer, n_inner)?;
    let model = MixtureModel::new(spec, frontend);
    let (n, q) = (spec.n(), spec.q());
    let rows = model.rows();
    let per: Vec<Vec<(f64, f64)>> = per_sample(n_outer, seed, |_, i| {
        rhos.iter()
            .map(|&rho| {
                // same stream at every rho
                let mut rng = stream_rng(seed, i as u64);
                let x = complex_normal_vec(&mut rng, n);
                let s = DVector::from_vec(complex_normal_vec(&mut rng, q));
                let w = complex_normal_vec(&mut rng, rows);
                let clean = model.channel(&x) * s;
                let y: Vec<Complex64> = clean.iter().zip(&w).map(|(c, w)| c * rho.sqrt() + w).collect();
                let (log_f, ess) = model.log_f_y(&y, rho, n_inner, &mut rng);
                (model.log_f_y_given_x(&x, &y, rho) - log_f, ess)
            })
            .collect()
    });
    let mut out = Vec::with_capacity(rhos.len());
    for (j, &rho) in rhos.iter().enumerate() {
        let vals: Vec<f64> = per.iter().map(|v| v[j].0).collect();
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("mixture MI sample at {:.1} dB", linear_to_db(rho))));
        }
        let ess: Vec<f64> = per.iter().map(|v| v[j].1).collect();
        let low = ess.iter().filter(|&&e| e < LOW_ESS).count();
        if low > 0 {
            log::warn!(
                "{low} of {n_outer} outer samples at {:.1} dB have effective sample size below {LOW_ESS}",
                linear_to_db(rho)
            );
        }
        let est = McEstimate::from_samples(&vals);
        out.push(MISweepPoint {
            rho_db: linear_to_db(rho),
            mi_nats: est.mean,
            mi_bits: est.mean / 2f64.ln(),
            stderr: est.stderr,
            estimator: EstimatorKind::DirectMixture,
            frontend,
            n_outer,
            n_inner,
            seed,
            n,
            q,
            min_ess: Some(ess.iter().copied().fold(f64::INFINITY, f64::min)),
            low_ess_count: low,
        });
    }
    Ok(out)
}

pub fn mi_direct_mixture(
    spec: &BlockSpec,
    rho: f64,
    n_outer: usize,
    n_inner: usize,
    frontend: Frontend,
    seed: u64,
) -> Result<MISweepPoint> {
    Ok(mi_direct_mixture_sweep(spec, &[rho], n_outer, n_inner, frontend, seed)?.remove(0))
}

/// `E[sum_k log(1 + rho |h_k|^2)]` for the symbol-rate channel with known
/// fading, by 1-D quadrature over the exponential law of `|h_k|^2`.
pub fn coherent_mi_oracle(spec: &BlockSpec, rho: f64) -> Result<f64> {
    check_rho(rho)?;
    let v = symbol_rate_matrix_normalized(spec);
    let mut total = 0.0;
    for k in 0..spec.n() {
        let var = v.row(k).norm_squared();
        let f = |t: f64| (1.0 + rho * var * t).ln() * (-t).exp();
        total += integrate_real(&f, 0.0, 60.0, 1e-12)?;
    }
    Ok(total)
}

/// Mixture estimator with the fading revealed: per symbol, `log f(y_k)` is
/// estimated from `n_inner` fresh inputs. Returns the estimate and the
/// closed-form oracle.
pub fn mi_coherent_control(
    spec: &BlockSpec,
    rho: f64,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
) -> Result<(MISweepPoint, f64)> {
    check_rho(rho)?;
    let v = symbol_rate_matrix_normalized(spec);
    let (n, q) = (spec.n(), spec.q());
    let sr = rho.sqrt();
    let vals: Vec<f64> = per_sample(n_outer, seed, |rng, _| {
        let x = complex_normal_vec(rng, n);
        let s = DVector::from_vec(complex_normal_vec(rng, q));
        let h = &v * s;
        let mut acc = 0.0;
        for k in 0..n {
            let y = sr * h[k] * x[k] + complex_normal(rng);
            let cond = -PI.ln() - (y - sr * h[k] * x[k]).norm_sqr();
            let logs: Vec<f64> = (0..n_inner)
                .map(|_| -PI.ln() - (y - sr * h[k] * complex_normal(rng)).norm_sqr())
                .collect();
            acc += cond - (log_sum_exp(&logs) - (n_inner as f64).ln());
        }
        acc
    });
    let est = McEstimate::from_samples(&vals);
    let oracle = coherent_mi_oracle(spec, rho)?;
    Ok((
        MISweepPoint {
            rho_db: linear_to_db(rho),
            mi_nats: est.mean,
            mi_bits: est.mean / 2f64.ln(),
            stderr: est.stderr,
            estimator: EstimatorKind::CoherentControl,
            frontend: Frontend::SymbolRate,
            n_outer,
            n_inner,
            seed,
            n,
            q,
            min_ess: None,
            low_ess_count: 0,
        },
        oracle,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrelogFit {
    pub slope_per_channel_use: f64,
    pub slope_stderr: f64,
    /// Per block, in nats.
    pub intercept: f64,
    pub rho_range_db: [f64; 2],
    pub r_squared: f64,
    pub n_points: usize,
}

/// Ordinary least squares of `mi_nats` against `ln rho`; the slope is
/// divided by `n` to give a per-channel-use pre-log.
pub fn prelog_fit(points: &[MISweepPoint], n: usize) -> Result<PrelogFit> {
    let xs: Vec<f64> = points.iter().map(|p| db_to_linear(p.rho_db).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.mi_nats).collect();
    let fit = ols(&xs, &ys)?;
    let lo = points.iter().map(|p| p.rho_db).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.rho_db).fold(f64::NEG_INFINITY, f64::max);
    Ok(PrelogFit {
        slope_per_channel_use: fit.slope / n as f64,
        slope_stderr: fit.slope_stderr / n as f64,
        intercept: fit.intercept,
        rho_range_db: [lo, hi],
        r_squared: fit.r_squared,
        n_points: points.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OlsFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_stderr: f64,
    pub r_squared: f64,
}

pub fn ols(xs: &[f64], ys: &[f64]) -> Result<OlsFit> {
    if xs.len() != ys.len() {
        return Err(Error::DimensionMismatch { what: "ys", expected: xs.len(), got: ys.len() });
    }
    let mut distinct = xs.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
    if distinct.len() < 3 {
        return Err(Error::TooFewPoints(distinct.len()));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - intercept - slope * x).powi(2)).sum();
    let r_squared = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    let dof = xs.len() as f64 - 2.0;
    Ok(OlsFit {
        slope,
        intercept,
        slope_stderr: (ss_res / dof / sxx).sqrt(),
        r_squared,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogDetBatches {
    pub batch_means: Vec<f64>,
    pub mean: f64,
    /// Sample variance of the batch means.
    pub batch_mean_variance: f64,
    pub batch_size: usize,
}

/// Batch means of `log |det J_{phi_{x_1}}|` at Gaussian
/// `(x_1, s_hat, x_{2:N})`.
pub fn log_det_jacobian_batches(
    spec: &BlockSpec,
    n_batches: usize,
    batch_size: usize,
    seed: u64,
) -> Result<LogDetBatches> {
    if n_batches < 2 || batch_size == 0 {
        return Err(Error::Invalid("need at least 2 non-empty batches".into()));
    }
    let fm = FrontendMatrices::new(spec);
    let (n, q) = (spec.n(), spec.q());
    let vals: Vec<f64> = per_sample(n_batches * batch_size, seed, |rng, _| {
        let x1 = complex_normal(rng);
        let s = complex_normal_vec(rng, q);
        let xr = complex_normal_vec(rng, n - 1);
        build_jacobian(&fm, x1, &s, &xr).map(|j| log_abs_det(&j)).unwrap_or(f64::NAN)
    });
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("log |det J|".into()));
    }
    let batch_means: Vec<f64> = vals.chunks(batch_size).map(|c| c.iter().sum::<f64>() / c.len() as f64).collect();
    let est = McEstimate::from_samples(&batch_means);
    Ok(LogDetBatches {
        mean: est.mean,
        batch_mean_variance: est.stderr.powi(2) * n_batches as f64,
        batch_means,
        batch_size,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepRow {
    rho_db: f64,
    mi_nats: f64,
    mi_bits: f64,
    stderr: f64,
    estimator: EstimatorKind,
    frontend: Frontend,
    n_outer: usize,
    n_inner: usize,
    seed: u64,
    n: usize,
    q: usize,
}

pub fn write_sweep_csv<W: Write>(points: &[MISweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for p in points {
        w.serialize(SweepRow {
            rho_db: p.rho_db,
            mi_nats: p.mi_nats,
            mi_bits: p.mi_bits,
            stderr: p.stderr,
            estimator: p.estimator,
            frontend: p.frontend,
            n_outer: p.n_outer,
            n_inner: p.n_inner,
            seed: p.seed,
            n: p.n,
            q: p.q,
        })
        .map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Invalid(format!("csv: {e}")))?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<MISweepPoint>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize::<SweepRow>()
        .map(|row| {
            let row = row.map_err(|e| Error::Invalid(format!("csv: {e}")))?;
            Ok(MISweepPoint {
                rho_db: row.rho_db,
                mi_nats: row.mi_nats,
                mi_bits: row.mi_bits,
                stderr: row.stderr,
                estimator: row.estimator,
                frontend: row.frontend,
                n_outer: row.n_outer,
                n_inner: row.n_inner,
                seed: row.seed,
                n: row.n,
                q: row.q,
                min_ess: None,
                low_ess_count: 0,
            })
        })
        .collect()
}
