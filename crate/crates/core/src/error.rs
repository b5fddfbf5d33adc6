use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid block parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    #[error(
        "Q = {q} must be smaller than N = {n} (Q = 2*floor(T*nu_max) + 1){}",
        if *.doppler_exceeds_signal_bandwidth { "; nu_max also exceeds the signal bandwidth 1/(2 T_S)" } else { "" }
    )]
    RankNotBelowBlockLength {
        q: usize,
        n: usize,
        doppler_exceeds_signal_bandwidth: bool,
    },

    #[error("invalid PSD: {0}")]
    InvalidPsd(String),

    #[error("time {t} lies outside the fading block [0, {block}]")]
    OutOfBlock { t: f64, block: f64 },

    #[error("quadrature did not converge: achieved {achieved:e}, requested {requested:e}")]
    QuadratureNonConvergence { achieved: f64, requested: f64 },

    #[error("no closed-form correlation function for this PSD kind")]
    NoClosedFormCorrelation,

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("window [{a}, {b}] is not contained in the block [0, {block}]")]
    InvalidWindow { a: f64, b: f64, block: f64 },

    #[error("degenerate pilot: |x_1| = {0:e}")]
    DegeneratePilot(f64),

    #[error("pilot at the first symbol position is required")]
    MissingFirstPilot,

    #[error("pilot index {index} out of range for block length {n}")]
    PilotOutOfRange { index: usize, n: usize },

    #[error("witness construction failed: {0}")]
    Witness(String),

    #[error("need at least {needed} samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },

    #[error("non-finite estimate: {0}")]
    NonFinite(String),

    #[error("estimator outside its supported regime: {0}")]
    UnsupportedRegime(String),

    #[error("need at least 3 sweep points with distinct SNR, got {0}")]
    TooFewPoints(usize),

    #[error("{0}")]
    Invalid(String),
}
