//! Analysis toolkit for the active beam splitting (ABS) attack on the
//! differential phase shift (DPS) quantum key distribution protocol.
//!
//! The library models the legitimate protocol (coherent-pulse trains, fiber
//! attenuation, threshold-detector click statistics), the eavesdropper's
//! soft-filtering attack with its per-success-count intensity schedule, the
//! Holevo lower bound on the eavesdropper's information, and the constrained
//! optimization of the attack parameters per channel length. A Monte-Carlo
//! simulator of the click statistics serves as an independent cross-check of
//! every analytic probability used by the optimizer.
//!
//! Modules:
//! - [`math`] — binary entropy, its inverse, coherent-state overlap, Holevo value
//! - [`protocol`] — fiber attenuation and Bob's conclusive-outcome probability
//! - [`attack`] — soft filtering, intensity schedule, Eve's information bounds
//! - [`stationarity`] — closed-form derivatives and the interior-optimum certificate
//! - [`optimizer`] — constrained per-length optimization, critical error, key rate
//! - [`mc`] — Monte-Carlo train simulation and estimators

pub mod attack;
pub mod error;
pub mod math;
pub mod mc;
pub mod optimizer;
pub mod protocol;
pub mod stationarity;

pub use error::{Error, Result};
pub use math::{InformationBits, Probability};
