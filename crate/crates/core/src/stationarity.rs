//! Closed-form partial derivatives of the objective pieces with respect to
//! the two free intensities, and the stationarity residual that certifies an
//! interior optimum.
//!
//! At an interior optimum the two quotient expressions
//! `I_K + Z_K dI_K/dZ_K` and `I_N + Z_N dI_N/dZ_N` coincide; their
//! difference is the residual reported here. Each closed form is
//! cross-checked against a central finite difference at the evaluation
//! point, and those discrepancies ride along in the report for audit.

use serde::Serialize;

use crate::attack::{
    info_threshold_unclamped, info_top_unclamped, mu_top_upper_bound, resolve_schedule,
    AttackParams, ResolvedAttack,
};
use crate::error::{Error, Result};
use crate::protocol::{pconc, ProtocolParams};

/// Z-derivative magnitudes below this are treated as degenerate (the
/// forwarded intensity sits at the conclusive-probability maximum).
pub const DEGENERATE_Z_TOL: f64 = 1e-12;

/// Central finite-difference step for the audit discrepancies.
const FD_STEP: f64 = 1e-6;

/// Both sides of the interior-optimum equality plus audit data.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StationarityReport {
    /// Threshold-class side, `I_K + Z_K (dI_K/dmu) / (dZ_K/dmu)`.
    pub lhs: f64,
    /// All-success-class side, `I_N + Z_N (dI_N/dmu) / (dZ_N/dmu)`.
    pub rhs: f64,
    /// `lhs - rhs`; vanishes at an interior optimum.
    pub residual: f64,
    /// Relative error of each closed-form derivative against a central
    /// finite difference at this point, in order
    /// `[dI_K, dZ_K, dI_N, dZ_N]`.
    pub fd_discrepancies: Vec<f64>,
}

#[inline]
fn log2_ratio(x: f64) -> f64 {
    ((1.0 + x) / (1.0 - x)).log2()
}

/// `dI_K/dmu_K` as a function of the threshold intensity.
pub(crate) fn d_info_threshold_scalar(
    n: usize,
    k_thr: usize,
    t: f64,
    fp: f64,
    mu_a: f64,
    mu: f64,
) -> Result<f64> {
    let ov_success = fp * (-2.0 * (mu_a - mu)).exp();
    let ov_failure = (-2.0 * ((1.0 - t) * mu_a - mu)).exp();
    if ov_success >= 1.0 || ov_failure >= 1.0 {
        return Err(Error::SingularDerivative {
            what: "threshold-class entropy argument",
        });
    }
    let nm1 = (n - 1) as f64;
    let mut out = 0.0;
    // The fp factor kills the first term in the discrimination limit.
    if ov_success > 0.0 {
        out -= k_thr as f64 / nm1 * ov_success * log2_ratio(ov_success);
    }
    out -= (n - k_thr) as f64 / nm1 * ov_failure * log2_ratio(ov_failure);
    Ok(out)
}

/// `dI_N/dmu_N` as a function of the all-success intensity.
pub(crate) fn d_info_top_scalar(n: usize, fp: f64, mu_a: f64, mu: f64) -> Result<f64> {
    let ov = fp * (-2.0 * (mu_a - mu)).exp();
    if ov >= 1.0 {
        return Err(Error::SingularDerivative {
            what: "all-success entropy argument",
        });
    }
    if ov == 0.0 {
        return Ok(0.0);
    }
    Ok(-(n as f64) / (n - 1) as f64 * ov * log2_ratio(ov))
}

/// `dZ_k/dmu` for a class carrying binomial mass `pk`:
/// `pk (n-1) e^{-n mu} (n - (n-1) e^{mu})`. Zero exactly at `mu = ln(n/(n-1))`.
pub(crate) fn d_weight_scalar(n: usize, pk: f64, mu: f64) -> f64 {
    let nf = n as f64;
    pk * (nf - 1.0) * (-nf * mu).exp() * (nf - (nf - 1.0) * mu.exp())
}

/// Closed-form `dI_K/dmu_K` at the resolved attack point.
pub fn d_info_threshold_d_mu(
    a: &AttackParams,
    r: &ResolvedAttack,
    p: &ProtocolParams,
) -> Result<f64> {
    d_info_threshold_scalar(
        p.n() as usize,
        r.threshold,
        a.t(),
        a.fp(),
        p.mu_a(),
        r.mu_threshold(),
    )
}

/// Closed-form `dZ_K/dmu_K` at the resolved attack point.
pub fn d_weight_threshold_d_mu(r: &ResolvedAttack, p: &ProtocolParams) -> f64 {
    d_weight_scalar(
        p.n() as usize,
        r.count_dist[r.threshold].value(),
        r.mu_threshold(),
    )
}

/// Closed-form `dI_N/dmu_N` at the resolved attack point.
pub fn d_info_top_d_mu(a: &AttackParams, r: &ResolvedAttack, p: &ProtocolParams) -> Result<f64> {
    d_info_top_scalar(p.n() as usize, a.fp(), p.mu_a(), r.mu_top())
}

/// Closed-form `dZ_N/dmu_N` at the resolved attack point.
pub fn d_weight_top_d_mu(r: &ResolvedAttack, p: &ProtocolParams) -> f64 {
    let n = p.n() as usize;
    d_weight_scalar(n, r.count_dist[n].value(), r.mu_top())
}

fn central_fd(f: impl Fn(f64) -> f64, x: f64, lo: f64, hi: f64) -> f64 {
    let h = FD_STEP.min(0.45 * (x - lo)).min(0.45 * (hi - x));
    debug_assert!(h > 0.0);
    (f(x + h) - f(x - h)) / (2.0 * h)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Evaluates both sides of the interior-optimum equality at the given
/// parameters, with finite-difference audit of all four derivatives.
///
/// Requires both free intensities strictly interior and both Z-derivatives
/// away from zero; boundary or degenerate points return an error instead of
/// a guessed limit.
pub fn stationarity_residual(a: &AttackParams, p: &ProtocolParams) -> Result<StationarityReport> {
    let r = resolve_schedule(a, p);
    let n = p.n() as usize;
    let (t, fp, mu_a) = (a.t(), a.fp(), p.mu_a());
    let forwarded = (1.0 - t) * mu_a;
    let mu_k = r.mu_threshold();
    let mu_n = r.mu_top();
    let upper = mu_top_upper_bound(fp, p);

    if !(mu_k > 0.0 && mu_k < forwarded) {
        return Err(Error::Domain {
            name: "mu_K",
            value: mu_k,
            domain: "(0, (1-t) mu_A)",
        });
    }
    if !(mu_n > forwarded && mu_n < upper) {
        return Err(Error::Domain {
            name: "mu_N",
            value: mu_n,
            domain: "((1-t) mu_A, min(mu_A - ln(fp)/2, mu_opt))",
        });
    }

    let k_thr = r.threshold;
    let pk_k = r.count_dist[k_thr].value();
    let pk_n = r.count_dist[n].value();

    let dzk = d_weight_scalar(n, pk_k, mu_k);
    if dzk.abs() < DEGENERATE_Z_TOL {
        return Err(Error::DegenerateDerivative {
            what: "threshold-class weight",
            mu: mu_k,
            tol: DEGENERATE_Z_TOL,
        });
    }
    let dzn = d_weight_scalar(n, pk_n, mu_n);
    if dzn.abs() < DEGENERATE_Z_TOL {
        return Err(Error::DegenerateDerivative {
            what: "all-success weight",
            mu: mu_n,
            tol: DEGENERATE_Z_TOL,
        });
    }

    let dik = d_info_threshold_scalar(n, k_thr, t, fp, mu_a, mu_k)?;
    let din = d_info_top_scalar(n, fp, mu_a, mu_n)?;

    let info_k = info_threshold_unclamped(n, k_thr, t, fp, mu_a, mu_k);
    let info_n = info_top_unclamped(n, fp, mu_a, mu_n);
    let zk = r.weights[k_thr];
    let zn = r.weights[n];

    let lhs = info_k + zk * dik / dzk;
    let rhs = info_n + zn * din / dzn;

    let n_u32 = p.n();
    let fd_discrepancies = vec![
        rel_err(
            dik,
            central_fd(
                |mu| info_threshold_unclamped(n, k_thr, t, fp, mu_a, mu),
                mu_k,
                0.0,
                forwarded,
            ),
        ),
        rel_err(
            dzk,
            central_fd(|mu| pk_k * pconc(mu, n_u32), mu_k, 0.0, forwarded),
        ),
        rel_err(
            din,
            central_fd(
                |mu| info_top_unclamped(n, fp, mu_a, mu),
                mu_n,
                forwarded,
                upper,
            ),
        ),
        rel_err(
            dzn,
            central_fd(|mu| pk_n * pconc(mu, n_u32), mu_n, forwarded, upper),
        ),
    ];

    Ok(StationarityReport {
        lhs,
        rhs,
        residual: lhs - rhs,
        fd_discrepancies,
    })
}
