//! Identifiability of the oversampled model with one pilot.
//!
//! With `x_1` known, the noiseless map
//! `(s_hat, x_2..x_N) -> [y_bar]_I`, `I` = all `N` odd samples followed by the
//! first `Q - 1` even samples, is a square polynomial map on `C^{N+Q-1}`. Its
//! Jacobian determinant is nonzero almost everywhere, which is what this
//! module checks numerically: directly, through an explicit witness point
//! whose determinant factorizes, and through the full-spark property of
//! `[Qo^T Qe^T]`.
//!
//! Jacobian layout: rows `0..N` are odd samples `k = 1..N`, rows
//! `N..N+Q-1` are even samples `k = 1..Q-1`. Columns `0..Q` are `s_hat_{-M..M}`,
//! column `Q + j - 2` is `x_j` for `j = 2..N`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discretization::{check_len, FrontendMatrices};
use crate::error::{Error, Result};
use crate::fading::BlockSpec;
use crate::linalg::{det_in_place, log_abs_det, log_row_norm_product, smallest_right_singular_vector};
use crate::random::{complex_normal, complex_normal_vec, stream_rng};

/// Hadamard-scaled singularity threshold: `|det| < 1e-12 * prod ||row||`.
pub const SINGULAR_THRESHOLD: f64 = 1e-12;

/// Full-spark threshold on `|det| / prod ||column||`.
pub const SPARK_THRESHOLD: f64 = 1e-12;

/// Largest subset count that is enumerated exhaustively.
pub const EXHAUSTIVE_SUBSET_LIMIT: u64 = 10_000_000;
const SAMPLED_SUBSETS: u64 = 1_000_000;

/// Row-relative size below which a witness diagonal entry counts as zero.
const WITNESS_ENTRY_TOL: f64 = 1e-10;
const WITNESS_FACTOR_TOL: f64 = 1e-8;
const NULLSPACE_RATIO: f64 = 1e-10;

fn check_square(fm: &FrontendMatrices) -> Result<()> {
    if fm.q() >= fm.n() {
        return Err(Error::RankNotBelowBlockLength {
            q: fm.q(),
            n: fm.n(),
            doppler_exceeds_signal_bandwidth: false,
        });
    }
    Ok(())
}

fn full_input(x1: Complex64, x_rest: &[Complex64]) -> Vec<Complex64> {
    std::iter::once(x1).chain(x_rest.iter().copied()).collect()
}

/// Jacobian of `(s_hat, x_2..x_N) -> [y_bar]_I` for fixed `x_1`.
pub fn build_jacobian(
    fm: &FrontendMatrices,
    x1: Complex64,
    s_hat: &[Complex64],
    x_rest: &[Complex64],
) -> Result<DMatrix<Complex64>> {
    check_square(fm)?;
    let (n, q) = (fm.n(), fm.q());
    check_len("s_hat", q, s_hat.len())?;
    check_len("x_rest", n - 1, x_rest.len())?;
    let x = full_input(x1, x_rest);
    let gs = &fm.g * DVector::from_column_slice(s_hat);
    let dim = n + q - 1;
    let mut j = DMatrix::zeros(dim, dim);
    for k in 0..n {
        for m in 0..q {
            j[(k, m)] = x[k] * fm.g[(k, m)];
        }
        if k >= 1 {
            j[(k, q + k - 1)] = gs[k];
        }
    }
    for k in 0..q - 1 {
        let row = n + k;
        for m in 0..q {
            j[(row, m)] = x[k] * fm.g[(n + k, m)];
        }
        if k >= 1 {
            j[(row, q + k - 1)] = gs[n + k];
        }
    }
    Ok(j)
}

/// Noiseless outputs on the index set `I`.
pub fn forward_map(
    fm: &FrontendMatrices,
    x1: Complex64,
    s_hat: &[Complex64],
    x_rest: &[Complex64],
) -> Result<DVector<Complex64>> {
    check_square(fm)?;
    let (n, q) = (fm.n(), fm.q());
    check_len("s_hat", q, s_hat.len())?;
    check_len("x_rest", n - 1, x_rest.len())?;
    let x = full_input(x1, x_rest);
    let ybar = fm.b(&x)? * DVector::from_column_slice(s_hat);
    Ok(ybar.rows(0, n + q - 1).into_owned())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianReport {
    pub dimension: usize,
    pub abs_det: f64,
    pub log_abs_det: f64,
    /// `ln(|det| / prod ||row||)`, at most 0 by Hadamard's inequality.
    pub log_scaled_abs_det: f64,
    pub singular: bool,
    pub inputs_digest: String,
}

fn digest(parts: &[&[Complex64]]) -> String {
    let mut h = Sha256::new();
    for part in parts {
        for z in *part {
            h.update(z.re.to_le_bytes());
            h.update(z.im.to_le_bytes());
        }
        h.update([0xff]);
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Scale-invariant singularity verdict for a square matrix.
pub fn is_scaled_singular(log_abs_det: f64, log_row_norms: f64) -> bool {
    !(log_abs_det.is_finite() && log_row_norms.is_finite())
        || log_abs_det - log_row_norms < SINGULAR_THRESHOLD.ln()
}

pub fn jacobian_report(
    fm: &FrontendMatrices,
    x1: Complex64,
    s_hat: &[Complex64],
    x_rest: &[Complex64],
) -> Result<JacobianReport> {
    let j = build_jacobian(fm, x1, s_hat, x_rest)?;
    let lad = log_abs_det(&j);
    let lrn = log_row_norm_product(&j);
    let log_scaled = if lad.is_finite() && lrn.is_finite() {
        lad - lrn
    } else {
        f64::NEG_INFINITY
    };
    Ok(JacobianReport {
        dimension: j.nrows(),
        abs_det: lad.exp(),
        log_abs_det: lad,
        log_scaled_abs_det: log_scaled,
        singular: is_scaled_singular(lad, lrn),
        inputs_digest: digest(&[&[x1], s_hat, x_rest]),
    })
}

/// Explicit nonsingular point and the factors of its Jacobian determinant,
/// `|det J| = |det A| |det D1| |det D2|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WitnessReport {
    #[serde(with = "crate::serde_complex::vec")]
    pub s_hat: Vec<Complex64>,
    pub abs_det_a: f64,
    pub abs_det_d1: f64,
    pub abs_det_d2: f64,
    pub abs_det_j: f64,
    /// `| |A||D1||D2| / |J| - 1 |`.
    pub factorization_rel_error: f64,
}

/// Builds the witness: `diag(p) s_hat` orthogonal to the first `Q - 1` rows
/// of `Qo`, which zeroes those rows in the `x`-block and leaves a block
/// structure with diagonal blocks `D1`, `D2` and the `Q x Q` block `A`.
///
/// For `Q = 1` the orthogonality condition is void, `s_hat_0 = 1`, `D1` is
/// empty and `A = x_1 p_0`.
pub fn jacobian_witness(fm: &FrontendMatrices, x: &[Complex64]) -> Result<WitnessReport> {
    check_square(fm)?;
    let (n, q) = (fm.n(), fm.q());
    check_len("x", n, x.len())?;
    if let Some(k) = x.iter().position(|v| v.norm() == 0.0) {
        return Err(Error::Witness(format!("x_{} is zero", k + 1)));
    }
    let p = &fm.p;
    let pscale = DMatrix::from_diagonal(p);

    let s_hat: DVector<Complex64> = if q == 1 {
        DVector::from_element(1, Complex64::new(1.0, 0.0))
    } else {
        let k = fm.qo.rows(0, q - 1) * &pscale;
        let (v, smin, smax) = smallest_right_singular_vector(&k);
        if smin >= NULLSPACE_RATIO * smax {
            return Err(Error::Witness(format!(
                "no null vector: sigma_min/sigma_max = {:e}",
                smin / smax
            )));
        }
        v
    };
    let ps = p.component_mul(&s_hat);
    let odd = &fm.qo * &ps;
    let even = &fm.qe * &ps;
    let scale = ps.norm();

    // the construction implies nonzero odd outputs for k >= Q and nonzero
    // even outputs everywhere; check rather than assume
    let odd_from = if q == 1 { 1 } else { q - 1 };
    for (k, v) in odd.iter().enumerate().skip(odd_from) {
        if v.norm() < WITNESS_ENTRY_TOL * scale {
            return Err(Error::Witness(format!("odd output {} vanishes: {:e}", k + 1, v.norm())));
        }
    }
    if q > 1 {
        for (k, v) in even.iter().enumerate() {
            if v.norm() < WITNESS_ENTRY_TOL * scale {
                return Err(Error::Witness(format!("even output {} vanishes: {:e}", k + 1, v.norm())));
            }
        }
    }

    let (abs_det_a, abs_det_d1, abs_det_d2) = if q == 1 {
        let d2: f64 = odd.iter().skip(1).map(|v| v.norm()).product();
        ((x[0] * p[0]).norm(), 1.0, d2)
    } else {
        let mut a = DMatrix::zeros(q, q);
        for m in 0..q {
            a[(0, m)] = x[0] * fm.qe[(0, m)] * p[m];
            for k in 0..q - 1 {
                a[(k + 1, m)] = x[k] * fm.qo[(k, m)] * p[m];
            }
        }
        let d1: f64 = even.iter().skip(1).take(q - 2).map(|v| v.norm()).product();
        let d2: f64 = odd.iter().skip(q - 1).map(|v| v.norm()).product();
        (log_abs_det(&a).exp(), d1, d2)
    };

    let s_vec: Vec<Complex64> = s_hat.iter().copied().collect();
    let j = build_jacobian(fm, x[0], &s_vec, &x[1..])?;
    let abs_det_j = log_abs_det(&j).exp();
    let product = abs_det_a * abs_det_d1 * abs_det_d2;
    let rel = (product / abs_det_j - 1.0).abs();
    if abs_det_j.is_nan() || abs_det_j <= 0.0 {
        return Err(Error::Witness("Jacobian determinant vanishes at the witness".into()));
    }
    if rel.is_nan() || rel > WITNESS_FACTOR_TOL {
        return Err(Error::Witness(format!("factorization mismatch: relative error {rel:e}")));
    }
    Ok(WitnessReport {
        s_hat: s_vec,
        abs_det_a,
        abs_det_d1,
        abs_det_d2,
        abs_det_j,
        factorization_rel_error: rel,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparkReport {
    pub n_subsets_checked: u64,
    pub total_subsets: u64,
    pub exhaustive: bool,
    /// Smallest `|det| / prod ||column||` over the checked subsets.
    pub min_abs_det: f64,
    pub full_spark: bool,
}

/// `[Qo^T Qe^T]`, a `Q x 2N` matrix.
pub fn spark_matrix(fm: &FrontendMatrices) -> DMatrix<Complex64> {
    let n = fm.n();
    let mut m = DMatrix::zeros(fm.q(), 2 * n);
    m.columns_mut(0, n).copy_from(&fm.qo.transpose());
    m.columns_mut(n, n).copy_from(&fm.qe.transpose());
    m
}

pub fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n.saturating_sub(k));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > u64::MAX as u128 {
            return u64::MAX;
        }
    }
    acc as u64
}

pub fn full_spark_check(spec: &BlockSpec) -> SparkReport {
    full_spark_check_matrix(&spark_matrix(&FrontendMatrices::new(spec)))
}

/// Checks that every `rows`-column subset of `m` is nonsingular; enumerates
/// when feasible, otherwise samples subsets from a fixed-seed stream.
pub fn full_spark_check_matrix(m: &DMatrix<Complex64>) -> SparkReport {
    let (r, c) = m.shape();
    let total = binomial(c as u64, r as u64);
    let norms: Vec<f64> = m.column_iter().map(|col| col.norm()).collect();
    let mut buf = vec![Complex64::new(0.0, 0.0); r * r];
    let mut scaled_det = |cols: &[usize]| -> f64 {
        for (j, &col) in cols.iter().enumerate() {
            for i in 0..r {
                buf[i * r + j] = m[(i, col)];
            }
        }
        let d = det_in_place(&mut buf, r).norm();
        let denom: f64 = cols.iter().map(|&c| norms[c]).product();
        if denom == 0.0 {
            0.0
        } else {
            d / denom
        }
    };
    let mut min_det = f64::INFINITY;
    let mut checked = 0u64;
    let exhaustive = total <= EXHAUSTIVE_SUBSET_LIMIT;
    if r == 0 || r > c {
        return SparkReport {
            n_subsets_checked: 0,
            total_subsets: total,
            exhaustive: true,
            min_abs_det: 0.0,
            full_spark: false,
        };
    }
    if exhaustive {
        let mut idx: Vec<usize> = (0..r).collect();
        loop {
            min_det = min_det.min(scaled_det(&idx));
            checked += 1;
            // next combination in lexicographic order
            let mut i = r;
            while i > 0 && idx[i - 1] == c - r + i - 1 {
                i -= 1;
            }
            if i == 0 {
                break;
            }
            idx[i - 1] += 1;
            for j in i..r {
                idx[j] = idx[j - 1] + 1;
            }
        }
    } else {
        let mut rng = stream_rng(0x5eed, 0);
        let mut pool: Vec<usize> = (0..c).collect();
        for _ in 0..SAMPLED_SUBSETS {
            // partial Fisher-Yates
            for i in 0..r {
                let j = rng.random_range(i..c);
                pool.swap(i, j);
            }
            let mut cols = pool[..r].to_vec();
            cols.sort_unstable();
            min_det = min_det.min(scaled_det(&cols));
            checked += 1;
        }
    }
    SparkReport {
        n_subsets_checked: checked,
        total_subsets: total,
        exhaustive,
        min_abs_det: min_det,
        full_spark: min_det > SPARK_THRESHOLD,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobianMcReport {
    pub trials: usize,
    pub singular_count: usize,
    pub singular_fraction: f64,
    pub min_abs_det: f64,
    /// Smallest `|det| / prod ||row||`.
    pub min_scaled_abs_det: f64,
    /// Average of `ln |det J|` (the integrand of the finiteness argument).
    pub mean_log_abs_det: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct JacobianMcOptions {
    /// Pin `x_1 = 0` in every trial (sanity control).
    pub force_x1_zero: bool,
}

/// Draws `(x_1, s_hat, x_2..x_N)` i.i.d. CN(0, 1) and counts scaled-singular
/// Jacobians.
pub fn jacobian_monte_carlo<R: Rng + ?Sized>(
    spec: &BlockSpec,
    trials: usize,
    rng: &mut R,
    opts: JacobianMcOptions,
) -> Result<JacobianMcReport> {
    if trials == 0 {
        return Err(Error::Invalid("trials must be at least 1".into()));
    }
    let fm = FrontendMatrices::new(spec);
    let (n, q) = (fm.n(), fm.q());
    let mut singular = 0;
    let mut min_lad = f64::INFINITY;
    let mut min_scaled = f64::INFINITY;
    let mut sum_lad = 0.0;
    for _ in 0..trials {
        let mut x1 = complex_normal(rng);
        let s_hat = complex_normal_vec(rng, q);
        let x_rest = complex_normal_vec(rng, n - 1);
        if opts.force_x1_zero {
            x1 = Complex64::new(0.0, 0.0);
        }
        let j = build_jacobian(&fm, x1, &s_hat, &x_rest)?;
        let lad = log_abs_det(&j);
        let lrn = log_row_norm_product(&j);
        if is_scaled_singular(lad, lrn) {
            singular += 1;
        }
        min_lad = min_lad.min(lad);
        let ls = if lad.is_finite() && lrn.is_finite() { lad - lrn } else { f64::NEG_INFINITY };
        min_scaled = min_scaled.min(ls);
        sum_lad += lad;
    }
    Ok(JacobianMcReport {
        trials,
        singular_count: singular,
        singular_fraction: singular as f64 / trials as f64,
        min_abs_det: min_lad.exp(),
        min_scaled_abs_det: min_scaled.exp(),
        mean_log_abs_det: sum_lad / trials as f64,
    })
}
