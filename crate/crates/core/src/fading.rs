//! Block-memoryless band-limited Rayleigh fading via a truncated Fourier
//! series.
//!
//! Within one block `[0, T]` the fading is `h(t) = sum_{m=-M..M} s_m e^{j2pi m t/T}`
//! with independent `s_m ~ CN(0, S_h(m/T)/T)`. Coefficient index `m` is stored
//! at position `m + M`.

use std::cell::RefCell;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::random::complex_normal;

/// Absolute tolerance of the outer covariance integral.
pub const COVARIANCE_TOL: f64 = 1e-9;
const INNER_COVARIANCE_TOL: f64 = 1e-12;
const PSD_POWER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PsdKind {
    /// `S_h(nu) = P / (2 nu_max)` on `[-nu_max, nu_max]`.
    #[serde(alias = "flat")]
    FlatBandLimited,
    /// T-periodic correlation `r_h(tau) = sum_k c_k e^{j2pi k tau/T}`, i.e. a
    /// line spectrum at `k/T` with powers `c_k`.
    Periodic,
    /// Piecewise-linear density through user-supplied `[nu, S]` points.
    #[serde(alias = "table")]
    UserTable,
}

fn default_power() -> f64 {
    1.0
}

/// Doppler power spectral density descriptor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PsdSpec {
    pub kind: PsdKind,
    #[serde(default = "default_power")]
    pub total_power: f64,
    /// Line powers `c_{-M..M}` for [`PsdKind::Periodic`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coeffs: Option<Vec<f64>>,
    /// `[nu, S_h(nu)]` knots for [`PsdKind::UserTable`], increasing in `nu`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<Vec<[f64; 2]>>,
}

impl PsdSpec {
    pub fn flat(total_power: f64) -> Self {
        Self {
            kind: PsdKind::FlatBandLimited,
            total_power,
            coeffs: None,
            table: None,
        }
    }

    /// Line spectrum with powers `c_{-M..M}`; total power is their sum.
    pub fn periodic(coeffs: Vec<f64>) -> Self {
        Self {
            kind: PsdKind::Periodic,
            total_power: coeffs.iter().sum(),
            coeffs: Some(coeffs),
            table: None,
        }
    }

    pub fn table(points: Vec<[f64; 2]>) -> Self {
        let total_power = trapezoid_power(&points);
        Self {
            kind: PsdKind::UserTable,
            total_power,
            coeffs: None,
            table: Some(points),
        }
    }

    fn validate(&self, nu_max: f64, q: usize) -> Result<()> {
        if !(self.total_power.is_finite() && self.total_power > 0.0) {
            return Err(Error::InvalidPsd(format!(
                "total_power must be positive, got {}",
                self.total_power
            )));
        }
        let power_tol = PSD_POWER_TOL * self.total_power.max(1.0);
        match self.kind {
            PsdKind::FlatBandLimited => Ok(()),
            PsdKind::Periodic => {
                let c = self
                    .coeffs
                    .as_ref()
                    .ok_or_else(|| Error::InvalidPsd("periodic PSD requires `coeffs`".into()))?;
                if c.len() != q {
                    return Err(Error::InvalidPsd(format!(
                        "periodic PSD needs Q = {q} coefficients, got {}",
                        c.len()
                    )));
                }
                if c.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::InvalidPsd("line powers must be finite and >= 0".into()));
                }
                let sum: f64 = c.iter().sum();
                if (sum - self.total_power).abs() > power_tol {
                    return Err(Error::InvalidPsd(format!(
                        "line powers sum to {sum}, total_power is {}",
                        self.total_power
                    )));
                }
                Ok(())
            }
            PsdKind::UserTable => {
                let t = self
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::InvalidPsd("user table PSD requires `table`".into()))?;
                if t.len() < 2 {
                    return Err(Error::InvalidPsd("table needs at least two knots".into()));
                }
                if t.windows(2).any(|w| w[1][0] <= w[0][0]) {
                    return Err(Error::InvalidPsd("table frequencies must increase".into()));
                }
                if t.iter().any(|p| !p[1].is_finite() || p[1] < 0.0) {
                    return Err(Error::InvalidPsd("table densities must be finite and >= 0".into()));
                }
                if t[0][0] < -nu_max || t[t.len() - 1][0] > nu_max {
                    return Err(Error::InvalidPsd(format!(
                        "table support exceeds [-{nu_max}, {nu_max}]"
                    )));
                }
                let power = trapezoid_power(t);
                if (power - self.total_power).abs() > power_tol {
                    return Err(Error::InvalidPsd(format!(
                        "table integrates to {power}, total_power is {}",
                        self.total_power
                    )));
                }
                Ok(())
            }
        }
    }
}

fn trapezoid_power(points: &[[f64; 2]]) -> f64 {
    points
        .windows(2)
        .map(|w| 0.5 * (w[0][1] + w[1][1]) * (w[1][0] - w[0][0]))
        .sum()
}

fn table_density(points: &[[f64; 2]], nu: f64) -> f64 {
    if nu < points[0][0] || nu > points[points.len() - 1][0] {
        return 0.0;
    }
    let idx = points.partition_point(|p| p[0] <= nu);
    if idx == 0 {
        return points[0][1];
    }
    if idx >= points.len() {
        return points[points.len() - 1][1];
    }
    let (a, b) = (points[idx - 1], points[idx]);
    a[1] + (b[1] - a[1]) * (nu - a[0]) / (b[0] - a[0])
}

/// On-disk form of [`BlockSpec`]; derived quantities are recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockSpecConfig {
    pub t_s: f64,
    pub n: usize,
    pub nu_max: f64,
    #[serde(default = "unit_flat_psd")]
    pub psd: PsdSpec,
}

fn unit_flat_psd() -> PsdSpec {
    PsdSpec::flat(1.0)
}

/// Deterministic parameters of one fading block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BlockSpecConfig", into = "BlockSpecConfig")]
pub struct BlockSpec {
    t_s: f64,
    n: usize,
    t: f64,
    nu_max: f64,
    m: usize,
    q: usize,
    psd: PsdSpec,
}

impl TryFrom<BlockSpecConfig> for BlockSpec {
    type Error = Error;

    fn try_from(c: BlockSpecConfig) -> Result<Self> {
        make_block_spec(c.t_s, c.n, c.nu_max, c.psd)
    }
}

impl From<BlockSpec> for BlockSpecConfig {
    fn from(s: BlockSpec) -> Self {
        Self {
            t_s: s.t_s,
            n: s.n,
            nu_max: s.nu_max,
            psd: s.psd,
        }
    }
}

/// Validates the block geometry and derives `T`, `M` and `Q`.
pub fn make_block_spec(t_s: f64, n: usize, nu_max: f64, psd: PsdSpec) -> Result<BlockSpec> {
    if !(t_s.is_finite() && t_s > 0.0) {
        return Err(Error::InvalidParameter {
            field: "t_s",
            reason: format!("symbol duration must be positive, got {t_s}"),
        });
    }
    if n < 2 {
        return Err(Error::InvalidParameter {
            field: "n",
            reason: format!("need at least 2 symbols per block, got {n}"),
        });
    }
    if !(nu_max.is_finite() && nu_max > 0.0) {
        return Err(Error::InvalidParameter {
            field: "nu_max",
            reason: format!("maximum Doppler must be positive, got {nu_max}"),
        });
    }
    let t = n as f64 * t_s;
    // relative guard so that products landing a few ulps under an integer
    // still floor to it
    let m = (t * nu_max * (1.0 + 4.0 * f64::EPSILON)).floor() as usize;
    let q = 2 * m + 1;
    let exceeds_bandwidth = nu_max >= 1.0 / (2.0 * t_s);
    if exceeds_bandwidth {
        log::warn!(
            "nu_max = {nu_max} Hz is not below the signal bandwidth 1/(2 T_S) = {} Hz",
            1.0 / (2.0 * t_s)
        );
    }
    if q >= n {
        return Err(Error::RankNotBelowBlockLength {
            q,
            n,
            doppler_exceeds_signal_bandwidth: exceeds_bandwidth,
        });
    }
    psd.validate(nu_max, q)?;
    Ok(BlockSpec {
        t_s,
        n,
        t,
        nu_max,
        m,
        q,
        psd,
    })
}

impl BlockSpec {
    /// Flat-PSD block with unit power, `T_S = 1 ms`, and `nu_max` placed in
    /// the middle of the interval that yields the requested `Q`.
    ///
    /// Every coefficient then has variance `1/Q`.
    pub fn with_rank(n: usize, q: usize) -> Result<Self> {
        if q.is_multiple_of(2) {
            return Err(Error::InvalidParameter {
                field: "q",
                reason: format!("Q must be odd, got {q}"),
            });
        }
        let t_s = 1e-3;
        let m = (q - 1) / 2;
        let nu_max = (m as f64 + 0.5) / (n as f64 * t_s);
        make_block_spec(t_s, n, nu_max, PsdSpec::flat(1.0))
    }

    pub fn t_s(&self) -> f64 {
        self.t_s
    }
    pub fn n(&self) -> usize {
        self.n
    }
    /// Block duration `N * T_S`.
    pub fn t(&self) -> f64 {
        self.t
    }
    pub fn nu_max(&self) -> f64 {
        self.nu_max
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn q(&self) -> usize {
        self.q
    }
    pub fn psd(&self) -> &PsdSpec {
        &self.psd
    }
    /// Coherence time `1 / (2 nu_max)`.
    pub fn t_coh(&self) -> f64 {
        1.0 / (2.0 * self.nu_max)
    }

    /// Frequency indices `-M..=M` in storage order.
    pub fn indices(&self) -> impl Iterator<Item = i64> + Clone {
        let m = self.m as i64;
        -m..=m
    }

    /// PSD value `S_h(nu)`; `None` for line spectra.
    pub fn psd_density(&self, nu: f64) -> Option<f64> {
        match self.psd.kind {
            PsdKind::FlatBandLimited => Some(if nu.abs() <= self.nu_max {
                self.psd.total_power / (2.0 * self.nu_max)
            } else {
                0.0
            }),
            PsdKind::Periodic => None,
            PsdKind::UserTable => Some(table_density(self.psd.table.as_deref().unwrap(), nu)),
        }
    }

    /// Variance of `s_m`, i.e. `S_h(m/T)/T` (the line power for periodic
    /// correlations).
    pub fn coefficient_variance(&self, m: i64) -> f64 {
        match self.psd.kind {
            PsdKind::Periodic => {
                let idx = m + self.m as i64;
                if idx < 0 || idx as usize >= self.q {
                    0.0
                } else {
                    self.psd.coeffs.as_ref().unwrap()[idx as usize]
                }
            }
            _ => self.psd_density(m as f64 / self.t).unwrap() / self.t,
        }
    }

    /// Closed-form correlation function `r_h(tau)` where one exists.
    pub fn correlation_function(&self) -> Result<Box<dyn Fn(f64) -> Complex64 + Send + Sync>> {
        match self.psd.kind {
            PsdKind::FlatBandLimited => {
                let p = self.psd.total_power;
                let bw = 2.0 * self.nu_max;
                Ok(Box::new(move |tau| {
                    Complex64::new(p * crate::discretization::sinc(bw * tau), 0.0)
                }))
            }
            PsdKind::Periodic => {
                let c = self.psd.coeffs.clone().unwrap();
                let m = self.m as i64;
                let t = self.t;
                Ok(Box::new(move |tau| {
                    c.iter()
                        .zip(-m..=m)
                        .map(|(ck, k)| Complex64::from_polar(*ck, 2.0 * PI * k as f64 * tau / t))
                        .sum()
                }))
            }
            PsdKind::UserTable => Err(Error::NoClosedFormCorrelation),
        }
    }
}

/// Fourier coefficients of one block realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadingCoeffs {
    /// Normalized coefficients, i.i.d. CN(0, 1).
    pub s_hat: Vec<Complex64>,
    /// `s_m = s_hat_m * sqrt(S_h(m/T)/T)`.
    pub s: Vec<Complex64>,
}

impl FadingCoeffs {
    pub fn from_normalized(spec: &BlockSpec, s_hat: Vec<Complex64>) -> Result<Self> {
        if s_hat.len() != spec.q {
            return Err(Error::DimensionMismatch {
                what: "s_hat",
                expected: spec.q,
                got: s_hat.len(),
            });
        }
        let s = s_hat
            .iter()
            .zip(spec.indices())
            .map(|(z, m)| z * spec.coefficient_variance(m).sqrt())
            .collect();
        Ok(Self { s_hat, s })
    }
}

pub fn sample_fading<R: Rng + ?Sized>(spec: &BlockSpec, rng: &mut R) -> FadingCoeffs {
    let s_hat = (0..spec.q).map(|_| complex_normal(rng)).collect();
    FadingCoeffs::from_normalized(spec, s_hat).expect("length matches Q")
}

/// `h(t)` for `0 <= t <= T`.
pub fn eval_h(spec: &BlockSpec, coeffs: &FadingCoeffs, t: f64) -> Result<Complex64> {
    if !(0.0..=spec.t).contains(&t) {
        return Err(Error::OutOfBlock { t, block: spec.t });
    }
    Ok(eval_h_unchecked(spec, &coeffs.s, t))
}

pub(crate) fn eval_h_unchecked(spec: &BlockSpec, s: &[Complex64], t: f64) -> Complex64 {
    let base = Complex64::from_polar(1.0, 2.0 * PI * t / spec.t);
    // s_{-M} e^{-jM..} + ... accumulated as a geometric progression
    let mut phasor = base.powi(-(spec.m as i32));
    let mut acc = Complex64::new(0.0, 0.0);
    for sm in s {
        acc += sm * phasor;
        phasor *= base;
    }
    acc
}

/// `E[s_m s_n^*]` from the exact double integral of the correlation
/// function, by nested adaptive quadrature.
pub fn covariance_exact(
    spec: &BlockSpec,
    m: i64,
    n: i64,
    r_h: &(dyn Fn(f64) -> Complex64 + Sync),
) -> Result<quadrature::Integral> {
    let t = spec.t;
    let w = 2.0 * PI / t;
    let failure: RefCell<Option<Error>> = RefCell::new(None);
    let inner = |alpha: f64| -> Complex64 {
        let f = |tau: f64| r_h(tau) * Complex64::from_polar(1.0, -w * m as f64 * tau) / t;
        match quadrature::integrate(&f, -alpha, t - alpha, INNER_COVARIANCE_TOL) {
            Ok(r) => r.value,
            Err(e) => {
                failure.borrow_mut().get_or_insert(e);
                Complex64::new(0.0, 0.0)
            }
        }
    };
    let outer = |alpha: f64| -> Complex64 {
        inner(alpha) * Complex64::from_polar(1.0, w * (n - m) as f64 * alpha) / t
    };
    let res = quadrature::integrate(&outer, 0.0, t, COVARIANCE_TOL);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    res
}

/// Diagonal approximation `E[s_m s_n^*] ~ delta_{mn} S_h(m/T)/T`.
pub fn covariance_approx(spec: &BlockSpec, m: i64, n: i64) -> Complex64 {
    if m == n {
        Complex64::new(spec.coefficient_variance(m), 0.0)
    } else {
        Complex64::new(0.0, 0.0)
    }
}
