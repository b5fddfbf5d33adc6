//! The two discrete-time front-ends: symbol matched filtering and
//! half-symbol integrate-and-dump at twice the symbol rate.
//!
//! Index conventions: frequency `m = -M..M` lives in column `m + M`; symbol
//! index `k` and oversampled index `n` are 1-based in the formulas and 0-based
//! in storage, so row `k - 1` holds symbol `k`.
//!
//! Noise samples are unit-variance CN(0, 1); `rho` is the SNR.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fading::{eval_h_unchecked, BlockSpec, FadingCoeffs};
use crate::quadrature;
use crate::random::complex_normal;
use crate::serde_complex;

/// Absolute tolerance of the continuous-time oracle.
pub const ORACLE_TOL: f64 = 1e-10;

/// `sin(pi x) / (pi x)` with `sinc(0) = 1`.
pub fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = PI * x;
        px.sin() / px
    }
}

/// `p_m = e^{-j pi m/(2N)} sinc(m/(2N)) sqrt(S_h(m/T)/T) / sqrt(2)`.
pub fn build_p(spec: &BlockSpec) -> DVector<Complex64> {
    let n = spec.n() as f64;
    DVector::from_iterator(
        spec.q(),
        spec.indices().map(|m| {
            let mf = m as f64;
            Complex64::from_polar(
                std::f64::consts::FRAC_1_SQRT_2 * sinc(mf / (2.0 * n)) * spec.coefficient_variance(m).sqrt(),
                -PI * mf / (2.0 * n),
            )
        }),
    )
}

fn phase_matrix(spec: &BlockSpec, offset: f64) -> DMatrix<Complex64> {
    let n = spec.n();
    let nf = n as f64;
    let cols: Vec<i64> = spec.indices().collect();
    DMatrix::from_fn(n, spec.q(), |row, col| {
        let k = (row + 1) as f64;
        Complex64::from_polar(1.0, PI * cols[col] as f64 * (2.0 * k + offset) / nf)
    })
}

/// `[Qo]_{k,m} = e^{j pi m (2k - 1)/N}`.
pub fn build_qo(spec: &BlockSpec) -> DMatrix<Complex64> {
    phase_matrix(spec, -1.0)
}

/// `[Qe]_{k,m} = e^{j pi m 2k/N}`.
pub fn build_qe(spec: &BlockSpec) -> DMatrix<Complex64> {
    phase_matrix(spec, 0.0)
}

/// `p`, `Qo`, `Qe` for one block geometry. `B` depends on the input and is
/// built on demand.
#[derive(Debug, Clone, PartialEq)]
pub struct FrontendMatrices {
    pub p: DVector<Complex64>,
    pub qo: DMatrix<Complex64>,
    pub qe: DMatrix<Complex64>,
    /// `[Qo; Qe] diag(p)`, the input-independent part of `B`.
    pub g: DMatrix<Complex64>,
}

impl FrontendMatrices {
    pub fn new(spec: &BlockSpec) -> Self {
        let p = build_p(spec);
        let qo = build_qo(spec);
        let qe = build_qe(spec);
        let n = spec.n();
        let mut g = DMatrix::zeros(2 * n, spec.q());
        g.rows_mut(0, n).copy_from(&qo);
        g.rows_mut(n, n).copy_from(&qe);
        for (mut col, pm) in g.column_iter_mut().zip(p.iter()) {
            col *= *pm;
        }
        Self { p, qo, qe, g }
    }

    pub fn n(&self) -> usize {
        self.qo.nrows()
    }

    pub fn q(&self) -> usize {
        self.p.len()
    }

    /// `B = [diag(x) Qo; diag(x) Qe] diag(p)`.
    pub fn b(&self, x: &[Complex64]) -> Result<DMatrix<Complex64>> {
        let n = self.n();
        check_len("x", n, x.len())?;
        let mut b = self.g.clone();
        for (r, mut row) in b.row_iter_mut().enumerate() {
            row *= x[r % n];
        }
        Ok(b)
    }
}

pub fn build_b(fm: &FrontendMatrices, x: &[Complex64]) -> Result<DMatrix<Complex64>> {
    fm.b(x)
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        Err(Error::DimensionMismatch { what, expected, got })
    } else {
        Ok(())
    }
}

/// Symbol-rate channel matrix `V_{k,m} = e^{j2pi m (k - 1/2)/N} sinc(m/N)`
/// acting on the unnormalized coefficients `s`.
pub fn symbol_rate_matrix(spec: &BlockSpec) -> DMatrix<Complex64> {
    let nf = spec.n() as f64;
    let cols: Vec<i64> = spec.indices().collect();
    DMatrix::from_fn(spec.n(), spec.q(), |row, col| {
        let k = (row + 1) as f64;
        let m = cols[col] as f64;
        Complex64::from_polar(sinc(m / nf), 2.0 * PI * m * (k - 0.5) / nf)
    })
}

/// `V diag(sqrt(S_h(m/T)/T))`, acting on the normalized coefficients.
pub fn symbol_rate_matrix_normalized(spec: &BlockSpec) -> DMatrix<Complex64> {
    let mut v = symbol_rate_matrix(spec);
    for (mut col, m) in v.column_iter_mut().zip(spec.indices()) {
        col *= Complex64::new(spec.coefficient_variance(m).sqrt(), 0.0);
    }
    v
}

/// Matched-filter channel gains `h_1..h_N`.
pub fn symbol_rate_gains(spec: &BlockSpec, coeffs: &FadingCoeffs) -> Vec<Complex64> {
    let v = symbol_rate_matrix(spec);
    (&v * DVector::from_column_slice(&coeffs.s)).iter().copied().collect()
}

/// Received samples of one block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "frontend", rename_all = "snake_case")]
pub enum Samples {
    SymbolRate {
        #[serde(with = "serde_complex::vec")]
        y: Vec<Complex64>,
    },
    Oversampled {
        #[serde(with = "serde_complex::vec")]
        y_odd: Vec<Complex64>,
        #[serde(with = "serde_complex::vec")]
        y_even: Vec<Complex64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockObservation {
    #[serde(with = "serde_complex::vec")]
    pub x: Vec<Complex64>,
    pub rho: f64,
    pub samples: Samples,
    /// Noise realization in the same (odd, even) stacking as the samples;
    /// all zeros in noiseless mode.
    #[serde(with = "serde_complex::vec")]
    pub noise: Vec<Complex64>,
}

impl BlockObservation {
    /// Samples stacked as `[y_odd; y_even]` (or `y` for symbol rate).
    pub fn stacked(&self) -> Vec<Complex64> {
        match &self.samples {
            Samples::SymbolRate { y } => y.clone(),
            Samples::Oversampled { y_odd, y_even } => y_odd.iter().chain(y_even).copied().collect(),
        }
    }
}

fn check_input(spec: &BlockSpec, x: &[Complex64], rho: f64) -> Result<()> {
    check_len("x", spec.n(), x.len())?;
    if !(rho.is_finite() && rho > 0.0) {
        return Err(Error::InvalidParameter {
            field: "rho",
            reason: format!("SNR must be positive, got {rho}"),
        });
    }
    Ok(())
}

fn draw_noise<R: Rng + ?Sized>(rng: Option<&mut R>, len: usize) -> Vec<Complex64> {
    match rng {
        Some(r) => (0..len).map(|_| complex_normal(r)).collect(),
        None => vec![Complex64::new(0.0, 0.0); len],
    }
}

/// `y_k = sqrt(rho) h_k x_k + w_k`; `rng = None` gives the noiseless output.
pub fn simulate_symbol_rate<R: Rng + ?Sized>(
    spec: &BlockSpec,
    coeffs: &FadingCoeffs,
    x: &[Complex64],
    rho: f64,
    rng: Option<&mut R>,
) -> Result<BlockObservation> {
    check_input(spec, x, rho)?;
    let h = symbol_rate_gains(spec, coeffs);
    let noise = draw_noise(rng, spec.n());
    let sr = rho.sqrt();
    let y = h
        .iter()
        .zip(x)
        .zip(&noise)
        .map(|((h, x), w)| sr * h * x + w)
        .collect();
    Ok(BlockObservation {
        x: x.to_vec(),
        rho,
        samples: Samples::SymbolRate { y },
        noise,
    })
}

/// `y_n = sqrt(rho) x_{ceil(n/2)} sum_m p_m s_hat_m e^{j pi m n/N} + w_n`,
/// split into odd and even samples.
pub fn simulate_oversampled<R: Rng + ?Sized>(
    spec: &BlockSpec,
    coeffs: &FadingCoeffs,
    x: &[Complex64],
    rho: f64,
    rng: Option<&mut R>,
) -> Result<BlockObservation> {
    check_input(spec, x, rho)?;
    let n = spec.n();
    let p = build_p(spec);
    let nf = n as f64;
    let sr = rho.sqrt();
    let noise = draw_noise(rng, 2 * n);
    let sample = |idx: usize| -> Complex64 {
        let sum: Complex64 = spec
            .indices()
            .zip(p.iter().zip(&coeffs.s_hat))
            .map(|(m, (pm, sm))| pm * sm * Complex64::from_polar(1.0, PI * (m * idx as i64) as f64 / nf))
            .sum();
        sr * x[(idx - 1) / 2] * sum
    };
    // symbol k (0-based) owns samples n = 2k+1 (odd) and n = 2k+2 (even)
    let y_odd = (0..n).map(|k| sample(2 * k + 1) + noise[k]).collect();
    let y_even = (0..n).map(|k| sample(2 * k + 2) + noise[n + k]).collect();
    Ok(BlockObservation {
        x: x.to_vec(),
        rho,
        samples: Samples::Oversampled { y_odd, y_even },
        noise,
    })
}

/// `gain * int_a^b h(tau) x(tau) dtau` with `x(tau) = x_l` on the `l`-th
/// symbol interval (rectangular pulse, amplitude folded into `gain`).
///
/// The window is split at symbol boundaries so each piece is smooth.
pub fn oracle_integrate(
    spec: &BlockSpec,
    coeffs: &FadingCoeffs,
    x: &[Complex64],
    window: (f64, f64),
    gain: f64,
) -> Result<Complex64> {
    check_len("x", spec.n(), x.len())?;
    let (a, b) = window;
    let t = spec.t();
    if !(a >= 0.0 && b <= t * (1.0 + 1e-12) && a <= b) {
        return Err(Error::InvalidWindow { a, b, block: t });
    }
    let b = b.min(t);
    let ts = spec.t_s();
    let mut acc = Complex64::new(0.0, 0.0);
    let mut lo = a;
    while lo < b {
        let l = ((lo / ts) * (1.0 + 1e-12)).floor() as usize;
        let l = l.min(spec.n() - 1);
        let hi = (((l + 1) as f64) * ts).min(b);
        if hi <= lo {
            break;
        }
        let xl = x[l];
        let f = |tau: f64| eval_h_unchecked(spec, &coeffs.s, tau) * xl;
        acc += quadrature::integrate(&f, lo, hi, ORACLE_TOL)?.value;
        lo = hi;
    }
    Ok(acc * gain)
}

/// Noiseless symbol-rate sample `k` (0-based) from the matched-filter
/// integral.
pub fn oracle_symbol_rate_sample(
    spec: &BlockSpec,
    coeffs: &FadingCoeffs,
    x: &[Complex64],
    rho: f64,
    k: usize,
) -> Result<Complex64> {
    let ts = spec.t_s();
    let window = (k as f64 * ts, (k + 1) as f64 * ts);
    oracle_integrate(spec, coeffs, x, window, rho.sqrt() / ts)
}

/// Noiseless oversampled sample `n` (0-based, natural order) from the
/// half-symbol integrate-and-dump.
pub fn oracle_oversampled_sample(
    spec: &BlockSpec,
    coeffs: &FadingCoeffs,
    x: &[Complex64],
    rho: f64,
    n: usize,
) -> Result<Complex64> {
    let half = 0.5 * spec.t_s();
    let window = (n as f64 * half, (n + 1) as f64 * half);
    oracle_integrate(spec, coeffs, x, window, (2.0 * rho).sqrt() / spec.t_s())
}

/// `C_{kl} = E[h_k h_l^*] = sum_m S_h(m/T)/T sinc^2(m/N) e^{j2pi m (k-l)/N}`.
pub fn symbol_rate_covariance(spec: &BlockSpec) -> DMatrix<Complex64> {
    let v = symbol_rate_matrix_normalized(spec);
    &v * v.adjoint()
}

/// Singular-value profile of the symbol-rate fading covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub n: usize,
    pub q: usize,
    pub singular_values: Vec<f64>,
    /// `sigma_Q / sigma_1`.
    pub ratio_at_q: f64,
    /// `sigma_{Q+1} / sigma_1` (0 when `Q = N`).
    pub ratio_after_q: f64,
    pub numerical_rank: usize,
}

/// Thresholds for declaring the numerical rank equal to `Q`.
pub const RANK_KEEP_RATIO: f64 = 1e-6;
pub const RANK_DROP_RATIO: f64 = 1e-9;

pub fn covariance_rank(spec: &BlockSpec) -> RankReport {
    let c = symbol_rate_covariance(spec);
    let mut sv: Vec<f64> = c.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    let s1 = sv[0];
    let q = spec.q();
    let ratio_at_q = sv[q - 1] / s1;
    let ratio_after_q = sv.get(q).map_or(0.0, |s| s / s1);
    let numerical_rank = sv.iter().filter(|s| **s / s1 > RANK_DROP_RATIO).count();
    RankReport {
        n: spec.n(),
        q,
        singular_values: sv,
        ratio_at_q,
        ratio_after_q,
        numerical_rank,
    }
}

impl RankReport {
    pub fn rank_equals_q(&self) -> bool {
        self.ratio_at_q > RANK_KEEP_RATIO && self.ratio_after_q < RANK_DROP_RATIO
    }
}

/// `E[sum_n |y_n - w_n|^2]` for unit-power inputs and CN(0, I) coefficients:
/// `rho * 2N * sum_m |p_m|^2`.
pub fn expected_oversampled_signal_energy(spec: &BlockSpec, rho: f64) -> f64 {
    let p = build_p(spec);
    rho * 2.0 * spec.n() as f64 * p.iter().map(|z| z.norm_sqr()).sum::<f64>()
}

/// Largest deviation between closed-form noiseless samples and the
/// continuous-time oracle over random `(coeffs, x)` draws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub draws: usize,
    pub max_abs_err_symbol_rate: f64,
    pub max_abs_err_oversampled: f64,
}

impl OracleReport {
    pub fn max_abs_err(&self) -> f64 {
        self.max_abs_err_symbol_rate.max(self.max_abs_err_oversampled)
    }
}

pub fn oracle_check(spec: &BlockSpec, draws: usize, rho: f64, seed: u64) -> Result<OracleReport> {
    let n = spec.n();
    let mut report = OracleReport { draws, max_abs_err_symbol_rate: 0.0, max_abs_err_oversampled: 0.0 };
    for d in 0..draws {
        let mut rng = crate::random::stream_rng(seed, d as u64);
        let coeffs = crate::fading::sample_fading(spec, &mut rng);
        let x = crate::random::complex_normal_vec(&mut rng, n);
        let sr = simulate_symbol_rate::<crate::random::LabRng>(spec, &coeffs, &x, rho, None)?;
        let os = simulate_oversampled::<crate::random::LabRng>(spec, &coeffs, &x, rho, None)?;
        let (Samples::SymbolRate { y }, Samples::Oversampled { y_odd, y_even }) = (&sr.samples, &os.samples) else {
            unreachable!("simulators return their own front-end")
        };
        for k in 0..n {
            let e = (y[k] - oracle_symbol_rate_sample(spec, &coeffs, &x, rho, k)?).norm();
            report.max_abs_err_symbol_rate = report.max_abs_err_symbol_rate.max(e);
            let eo = (y_odd[k] - oracle_oversampled_sample(spec, &coeffs, &x, rho, 2 * k)?).norm();
            let ee = (y_even[k] - oracle_oversampled_sample(spec, &coeffs, &x, rho, 2 * k + 1)?).norm();
            report.max_abs_err_oversampled = report.max_abs_err_oversampled.max(eo).max(ee);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fading::{make_block_spec, sample_fading, PsdSpec};
    use crate::random::{complex_normal_vec, stream_rng, LabRng};
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn sinc_values() {
        assert_eq!(sinc(0.0), 1.0);
        assert_abs_diff_eq!(sinc(1.0), 0.0, epsilon = 1e-16);
        assert_abs_diff_eq!(sinc(0.5), 2.0 / PI, epsilon = 1e-15);
        assert_eq!(sinc(0.3), sinc(-0.3));
    }

    #[test]
    fn p_vector_values() {
        let spec = make_block_spec(1e-3, 10, 120.0, PsdSpec::flat(1.0)).unwrap();
        let p = build_p(&spec);
        let var0 = spec.coefficient_variance(0);
        // p_0 is real: (1/sqrt 2) sqrt(S_h(0)/T)
        assert_abs_diff_eq!((p[1] - c((var0 / 2.0).sqrt(), 0.0)).norm(), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[0].norm(), p[2].norm(), epsilon = 1e-15);
        assert_abs_diff_eq!(p[0].arg(), PI / 20.0, epsilon = 1e-14);
        // |p_1|/|p_0| = sinc(1/20); series 1 - (pi x)^2/6 + (pi x)^4/120 - ...
        let x = PI / 20.0;
        let series = 1.0 - x * x / 6.0 + x.powi(4) / 120.0 - x.powi(6) / 5040.0;
        assert_abs_diff_eq!(p[2].norm() / p[1].norm(), series, epsilon = 1e-9);
        assert_abs_diff_eq!(p[2].norm() / p[1].norm(), 0.99589, epsilon = 1e-5);
    }

    #[test]
    fn q_matrices_structure() {
        let spec = BlockSpec::with_rank(8, 3).unwrap();
        let qo = build_qo(&spec);
        let qe = build_qe(&spec);
        let n = 8.0;
        for k in 0..8 {
            assert_eq!(qo[(k, 1)], c(1.0, 0.0));
            assert_eq!(qe[(k, 1)], c(1.0, 0.0));
            let kk = (k + 1) as f64;
            let e = Complex64::from_polar(1.0, 2.0 * PI * kk / n);
            assert_abs_diff_eq!((qe[(k, 0)] - e.conj()).norm(), 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!((qe[(k, 2)] - e).norm(), 0.0, epsilon = 1e-14);
            let ratio = Complex64::from_polar(1.0, PI * (2.0 * kk - 1.0) / n);
            assert_abs_diff_eq!((qo[(k, 1)] / qo[(k, 0)] - ratio).norm(), 0.0, epsilon = 1e-14);
            assert_abs_diff_eq!((qo[(k, 2)] / qo[(k, 1)] - ratio).norm(), 0.0, epsilon = 1e-14);
            for z in qo.row(k).iter().chain(qe.row(k).iter()) {
                assert_abs_diff_eq!(z.norm(), 1.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn b_matrix_cases() {
        let spec = BlockSpec::with_rank(4, 1).unwrap();
        let fm = FrontendMatrices::new(&spec);
        let b = fm.b(&[c(1.0, 0.0); 4]).unwrap();
        assert_eq!(b.shape(), (8, 1));
        for z in b.iter() {
            assert_abs_diff_eq!((z - fm.p[0]).norm(), 0.0, epsilon = 1e-15);
        }
        assert!(fm.b(&[c(1.0, 0.0); 3]).is_err());

        let spec = BlockSpec::with_rank(8, 5).unwrap();
        let fm = FrontendMatrices::new(&spec);
        let mut rng = stream_rng(1, 0);
        let x = complex_normal_vec(&mut rng, 8);
        let scale = c(0.3, -1.2);
        let xs: Vec<_> = x.iter().map(|v| v * scale).collect();
        let diff = fm.b(&xs).unwrap() - fm.b(&x).unwrap() * scale;
        assert!(diff.norm() < 1e-13);
    }

    #[test]
    fn b_times_s_hat_is_noiseless_oversampled_output() {
        let spec = BlockSpec::with_rank(8, 5).unwrap();
        let fm = FrontendMatrices::new(&spec);
        let mut rng = stream_rng(2, 0);
        for _ in 0..20 {
            let coeffs = sample_fading(&spec, &mut rng);
            let x = complex_normal_vec(&mut rng, 8);
            let rho = 7.5;
            let obs = simulate_oversampled::<LabRng>(&spec, &coeffs, &x, rho, None).unwrap();
            let ybar = fm.b(&x).unwrap() * DVector::from_column_slice(&coeffs.s_hat) * Complex64::new(rho.sqrt(), 0.0);
            let y = obs.stacked();
            for (a, b) in y.iter().zip(ybar.iter()) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn single_coefficient_front_ends() {
        let spec = BlockSpec::with_rank(6, 1).unwrap();
        let mut rng = stream_rng(3, 0);
        let coeffs = sample_fading(&spec, &mut rng);
        let x = complex_normal_vec(&mut rng, 6);
        let rho = 4.0;
        let obs = simulate_symbol_rate::<LabRng>(&spec, &coeffs, &x, rho, None).unwrap();
        let Samples::SymbolRate { y } = &obs.samples else { panic!() };
        for (yk, xk) in y.iter().zip(&x) {
            assert!((yk - 2.0 * coeffs.s[0] * xk).norm() < 1e-14);
        }
        let obs = simulate_oversampled::<LabRng>(&spec, &coeffs, &x, rho, None).unwrap();
        let Samples::Oversampled { y_odd, y_even } = &obs.samples else { panic!() };
        for k in 0..6 {
            assert!((y_odd[k] - y_even[k]).norm() < 1e-14);
            // sqrt(rho/2) x_k s_0
            assert!((y_odd[k] - (rho / 2.0).sqrt() * x[k] * coeffs.s[0]).norm() < 1e-14);
        }
    }

    #[test]
    fn noise_is_unit_variance_and_recorded() {
        let spec = BlockSpec::with_rank(8, 3).unwrap();
        let mut rng = stream_rng(4, 0);
        let coeffs = sample_fading(&spec, &mut rng);
        let x = complex_normal_vec(&mut rng, 8);
        let mut acc = 0.0;
        let blocks = 5000;
        for _ in 0..blocks {
            let obs = simulate_oversampled(&spec, &coeffs, &x, 1.0, Some(&mut rng)).unwrap();
            let clean = simulate_oversampled::<LabRng>(&spec, &coeffs, &x, 1.0, None).unwrap();
            for ((y, y0), w) in obs.stacked().iter().zip(clean.stacked()).zip(&obs.noise) {
                assert!((y - y0 - w).norm() < 1e-13);
            }
            acc += obs.noise.iter().map(|w| w.norm_sqr()).sum::<f64>();
        }
        let var = acc / (blocks * 16) as f64;
        assert!((var - 1.0).abs() < 0.02, "noise variance {var}");
    }

    #[test]
    fn oracle_constant_fading() {
        // s = e_center with unit value and flat unit variance: h == s_0 == 1
        let spec = BlockSpec::with_rank(4, 3).unwrap();
        let mut s_hat = vec![c(0.0, 0.0); 3];
        s_hat[1] = c((3.0f64).sqrt(), 0.0); // variance 1/3 => s_0 = 1
        let coeffs = FadingCoeffs::from_normalized(&spec, s_hat).unwrap();
        let cx = c(0.5, 2.0);
        let x = vec![cx; 4];
        let (a, b) = (0.2e-3, 3.1e-3);
        let v = oracle_integrate(&spec, &coeffs, &x, (a, b), 3.0).unwrap();
        assert!((v - cx * (b - a) * 3.0).norm() < 1e-12);
        assert!(oracle_integrate(&spec, &coeffs, &x, (-1.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn oracle_reproduces_both_front_ends() {
        let spec = BlockSpec::with_rank(8, 5).unwrap();
        let mut rng = stream_rng(5, 0);
        for _ in 0..5 {
            let coeffs = sample_fading(&spec, &mut rng);
            let x = complex_normal_vec(&mut rng, 8);
            let rho = 3.0;
            let sym = simulate_symbol_rate::<LabRng>(&spec, &coeffs, &x, rho, None).unwrap();
            for (k, y) in sym.stacked().iter().enumerate() {
                let o = oracle_symbol_rate_sample(&spec, &coeffs, &x, rho, k).unwrap();
                assert!((o - y).norm() < 1e-8);
            }
            let over = simulate_oversampled::<LabRng>(&spec, &coeffs, &x, rho, None).unwrap();
            let Samples::Oversampled { y_odd, y_even } = &over.samples else { panic!() };
            for k in 0..8 {
                let o = oracle_oversampled_sample(&spec, &coeffs, &x, rho, 2 * k).unwrap();
                let e = oracle_oversampled_sample(&spec, &coeffs, &x, rho, 2 * k + 1).unwrap();
                assert!((o - y_odd[k]).norm() < 1e-8);
                assert!((e - y_even[k]).norm() < 1e-8);
            }
        }
    }

    #[test]
    fn symbol_rate_gain_power() {
        let spec = BlockSpec::with_rank(8, 5).unwrap();
        let mut rng = stream_rng(6, 0);
        let draws = 100_000;
        let mut acc = vec![0.0; 8];
        for _ in 0..draws {
            let coeffs = sample_fading(&spec, &mut rng);
            for (a, h) in acc.iter_mut().zip(symbol_rate_gains(&spec, &coeffs)) {
                *a += h.norm_sqr();
            }
        }
        let analytic: f64 = spec
            .indices()
            .map(|m| spec.coefficient_variance(m) * sinc(m as f64 / 8.0).powi(2))
            .sum();
        for a in acc {
            assert!((a / draws as f64 - analytic).abs() < 0.02 * analytic);
        }
    }

    #[test]
    fn covariance_rank_is_q() {
        for (n, q) in [(4, 1), (4, 3), (8, 3), (8, 5), (10, 3), (10, 9)] {
            let r = covariance_rank(&BlockSpec::with_rank(n, q).unwrap());
            assert!(r.rank_equals_q(), "{n},{q}: {r:?}");
            assert_eq!(r.numerical_rank, q);
        }
    }

    #[test]
    fn stacked_q_has_full_column_rank() {
        for (n, q) in [(4, 1), (4, 3), (8, 3), (8, 5), (10, 3), (10, 9)] {
            let fm = FrontendMatrices::new(&BlockSpec::with_rank(n, q).unwrap());
            let mut stacked = DMatrix::zeros(2 * n, q);
            stacked.rows_mut(0, n).copy_from(&fm.qo);
            stacked.rows_mut(n, n).copy_from(&fm.qe);
            assert_eq!(stacked.rank(1e-9), q);
        }
    }

    #[test]
    fn oversampled_energy_bookkeeping() {
        let spec = BlockSpec::with_rank(8, 3).unwrap();
        let mut rng = stream_rng(8, 0);
        let rho = 2.0;
        let blocks = 20_000;
        let mut acc = 0.0;
        for _ in 0..blocks {
            let coeffs = sample_fading(&spec, &mut rng);
            let x = complex_normal_vec(&mut rng, 8);
            let obs = simulate_oversampled(&spec, &coeffs, &x, rho, Some(&mut rng)).unwrap();
            acc += obs
                .stacked()
                .iter()
                .zip(&obs.noise)
                .map(|(y, w)| (y - w).norm_sqr())
                .sum::<f64>();
        }
        let want = expected_oversampled_signal_energy(&spec, rho);
        assert!((acc / blocks as f64 - want).abs() < 0.02 * want);
    }

    #[test]
    fn observation_json_uses_pairs() {
        let spec = BlockSpec::with_rank(4, 1).unwrap();
        let coeffs = FadingCoeffs::from_normalized(&spec, vec![c(1.0, 0.0)]).unwrap();
        let obs = simulate_symbol_rate::<LabRng>(&spec, &coeffs, &[c(1.0, -1.0); 4], 1.0, None).unwrap();
        let v = serde_json::to_value(&obs).unwrap();
        assert_eq!(v["x"][0], serde_json::json!([1.0, -1.0]));
        assert_eq!(v["samples"]["frontend"], "symbol_rate");
        let back: BlockObservation = serde_json::from_value(v).unwrap();
        assert_eq!(back, obs);
    }
}
