//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input lies outside its mathematical domain.
    #[error("{name} = {value} is outside {domain}")]
    Domain {
        name: &'static str,
        value: f64,
        domain: &'static str,
    },

    /// A requested conclusive probability exceeds the achievable maximum.
    #[error("target conclusive probability {target} exceeds the achievable maximum {max}")]
    InfeasibleTarget { target: f64, max: f64 },

    /// Every class is blocked or carries zero weight; the weighted mean is undefined.
    #[error("no conclusive events: all classes are blocked or have zero weight")]
    NoConclusiveEvents,

    /// An entropy argument reached zero, so the derivative log-ratio diverges.
    #[error("singular derivative: entropy argument is zero ({what})")]
    SingularDerivative { what: &'static str },

    /// A Z-weight derivative vanishes (forwarded intensity sits at the
    /// conclusive-probability maximum), so the stationarity quotient is undefined.
    #[error("degenerate point: {what} derivative is within {tol:e} of zero at mu = {mu}")]
    DegenerateDerivative {
        what: &'static str,
        mu: f64,
        tol: f64,
    },

    /// A class index is outside the range the operation is defined on.
    #[error("class index {k} outside [{lo}, {hi}]")]
    ClassIndex { k: usize, lo: usize, hi: usize },

    /// No attack parameters satisfy the rate constraint at this channel length.
    #[error("no feasible attack parameters for channel length {length_km} km")]
    InfeasibleLength { length_km: f64 },

    /// No Alice intensity in the scanned range produced a positive key rate.
    #[error("no Alice intensity in [{min}, {max}] yields a positive key rate at {length_km} km")]
    NoPositiveRate { min: f64, max: f64, length_km: f64 },

    /// A sweep or simulation configuration violates its invariants.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, Error>;
