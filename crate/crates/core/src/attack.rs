//! The active beam splitting attack: soft-filtering statistics, the
//! per-success-count intensity schedule Eve forwards to Bob, and the Holevo
//! lower bounds on Eve's information per conclusive position.
//!
//! Eve taps a fraction `t` of each pulse, applies soft filtering with
//! parameter `fp` to her share, counts the `k` successes across the train,
//! and forwards the remainder at an intensity `mu_k` that depends on `k`:
//! zero below the blocking threshold `K`, a reduced value at `K`, the
//! untouched `(1-t) mu_A` in between, and a possibly amplified value when
//! every position succeeded. `fp = 0` encodes the unambiguous state
//! discrimination limit; all formulas evaluate it analytically.

use serde::Serialize;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::math::{h2, InformationBits, Probability};
use crate::protocol::{optimal_bob_intensity, pconc, ProtocolParams};

/// Eve's four-dimensional control vector `(t, fp, p1, p2)`.
///
/// `t` is the beam-splitter tap fraction, `fp` the filtering parameter
/// (`0` = unambiguous discrimination limit, `1` = identity), `p1` in
/// `[0, N]` the blocking/threshold control, and `p2` in `[0, 1]` the
/// top-class amplification control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AttackParams {
    t: f64,
    fp: f64,
    p1: f64,
    p2: f64,
}

/// Smallest admissible tap fraction: forwarding `(1-t) mu_A` must not
/// exceed the intensity that maximizes Bob's conclusive probability.
pub fn t_lower_bound(p: &ProtocolParams) -> f64 {
    (1.0 - optimal_bob_intensity(p.n()) / p.mu_a()).max(0.0)
}

impl AttackParams {
    pub fn new(t: f64, fp: f64, p1: f64, p2: f64, p: &ProtocolParams) -> Result<Self> {
        let t_lo = t_lower_bound(p);
        if !(t >= t_lo && t <= 1.0) {
            return Err(Error::Domain {
                name: "tap fraction t",
                value: t,
                domain: "[max(0, 1 - mu_opt/mu_A), 1]",
            });
        }
        if !(0.0..=1.0).contains(&fp) {
            return Err(Error::Domain {
                name: "filtering parameter fp",
                value: fp,
                domain: "[0, 1]",
            });
        }
        if !(p1 >= 0.0 && p1 <= p.n() as f64) {
            return Err(Error::Domain {
                name: "threshold control p1",
                value: p1,
                domain: "[0, N]",
            });
        }
        if !(0.0..=1.0).contains(&p2) {
            return Err(Error::Domain {
                name: "amplification control p2",
                value: p2,
                domain: "[0, 1]",
            });
        }
        Ok(AttackParams { t, fp, p1, p2 })
    }

    #[inline]
    pub fn t(&self) -> f64 {
        self.t
    }

    #[inline]
    pub fn fp(&self) -> f64 {
        self.fp
    }

    #[inline]
    pub fn p1(&self) -> f64 {
        self.p1
    }

    #[inline]
    pub fn p2(&self) -> f64 {
        self.p2
    }

    /// `fp = 0` is stored as the unambiguous-state-discrimination flag.
    #[inline]
    pub fn is_usd(&self) -> bool {
        self.fp == 0.0
    }
}

/// Everything derived from `(t, fp, p1, p2)`: the threshold `K`, the
/// intensity schedule, the filtering success probability, the binomial
/// success-count distribution and the conclusive-outcome weights.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedAttack {
    /// Blocking threshold `K`: trains with fewer successes never reach Bob.
    pub threshold: usize,
    /// `mu_k` for `k = 0..=N`.
    pub intensity_schedule: Vec<f64>,
    /// Soft-filtering success probability `p_s`.
    pub filter_success: Probability,
    /// Binomial law of the success count, `C(N,k) p_s^k (1-p_s)^(N-k)`.
    pub count_dist: Vec<Probability>,
    /// `Z_k = count_dist[k] * conclusive_prob(mu_k)`; Bob's conclusive
    /// probability is their sum.
    pub weights: Vec<f64>,
}

impl ResolvedAttack {
    /// Forwarded intensity of the threshold class `K`.
    #[inline]
    pub fn mu_threshold(&self) -> f64 {
        self.intensity_schedule[self.threshold]
    }

    /// Forwarded intensity of the all-success class `N`.
    #[inline]
    pub fn mu_top(&self) -> f64 {
        self.intensity_schedule[self.intensity_schedule.len() - 1]
    }
}

/// Soft-filtering success probability
/// `p_s = (1 - e^{-2 t mu_A}) / (1 - fp e^{-2 t mu_A})`.
///
/// Exactly 1 at `fp = 1`; the `fp = 0` flag gives the discrimination limit
/// `1 - e^{-2 t mu_A}`. The `t mu_A = 0, fp = 1` corner is 0/0 and is
/// defined as 1 by continuity; [`filter_is_degenerate`] reports it.
pub fn filter_success_prob(t: f64, fp: f64, mu_a: f64) -> Result<Probability> {
    check_filter_inputs(t, fp, mu_a)?;
    if fp == 1.0 {
        return Ok(Probability::ONE);
    }
    let overlap = (-2.0 * t * mu_a).exp();
    let numer = -(-2.0 * t * mu_a).exp_m1();
    Probability::new_clamped(numer / (1.0 - fp * overlap))
}

/// True on the 0/0 input corner where [`filter_success_prob`] falls back to
/// its continuity value of 1 (no tap, identity filter).
pub fn filter_is_degenerate(t: f64, fp: f64, mu_a: f64) -> bool {
    t * mu_a == 0.0 && fp == 1.0
}

/// Output intensity of a successful filtering, `|beta|^2 = t mu_A - ln(fp)/2`.
/// The `fp = 0` flag maps to positive infinity (orthogonal output states).
pub fn filter_output_intensity(t: f64, fp: f64, mu_a: f64) -> Result<f64> {
    check_filter_inputs(t, fp, mu_a)?;
    if fp == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(t * mu_a - 0.5 * fp.ln())
}

fn check_filter_inputs(t: f64, fp: f64, mu_a: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain {
            name: "tap fraction t",
            value: t,
            domain: "[0, 1]",
        });
    }
    if !(0.0..=1.0).contains(&fp) {
        return Err(Error::Domain {
            name: "filtering parameter fp",
            value: fp,
            domain: "[0, 1]",
        });
    }
    if mu_a <= 0.0 || mu_a.is_nan() {
        return Err(Error::Domain {
            name: "Alice intensity",
            value: mu_a,
            domain: "(0, inf)",
        });
    }
    Ok(())
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma((n + 1) as f64) - ln_gamma((k + 1) as f64) - ln_gamma((n - k + 1) as f64)
}

/// Binomial law of the filtering success count over a train of `n` pulses.
/// Computed in log space so it stays finite for `n` up to 64.
pub fn success_count_dist(ps: Probability, n: u32) -> Vec<Probability> {
    let p = ps.value();
    let n_us = n as usize;
    let mut out = vec![0.0_f64; n_us + 1];
    if p == 0.0 {
        out[0] = 1.0;
    } else if p == 1.0 {
        out[n_us] = 1.0;
    } else {
        let lp = p.ln();
        let lq = (-p).ln_1p();
        for (k, slot) in out.iter_mut().enumerate() {
            let ln_pk = ln_choose(n as u64, k as u64) + k as f64 * lp + (n_us - k) as f64 * lq;
            *slot = ln_pk.exp();
        }
    }
    out.into_iter()
        .map(|v| Probability::new_clamped(v).expect("binomial mass in range"))
        .collect()
}

/// Upper bound of the all-success forwarded intensity: everything Eve holds
/// after successful filtering, capped at the conclusive-probability maximizer.
pub(crate) fn mu_top_upper_bound(fp: f64, p: &ProtocolParams) -> f64 {
    let mu_tilde = optimal_bob_intensity(p.n());
    if fp == 0.0 {
        return mu_tilde;
    }
    (p.mu_a() - 0.5 * fp.ln()).min(mu_tilde)
}

/// Resolves `(t, fp, p1, p2)` into the full attack description: threshold,
/// intensity schedule, success law and conclusive weights.
pub fn resolve_schedule(a: &AttackParams, p: &ProtocolParams) -> ResolvedAttack {
    let n = p.n() as usize;
    let forwarded = (1.0 - a.t()) * p.mu_a();
    let threshold = (a.p1().floor() as usize).min(n - 1);
    let mu_threshold = (threshold as f64 + 1.0 - a.p1()) * forwarded;

    let mut schedule = vec![0.0_f64; n + 1];
    schedule[threshold] = mu_threshold;
    for mu in schedule.iter_mut().take(n).skip(threshold + 1) {
        *mu = forwarded;
    }
    let upper = mu_top_upper_bound(a.fp(), p);
    schedule[n] = forwarded + a.p2() * (upper - forwarded);

    let filter_success =
        filter_success_prob(a.t(), a.fp(), p.mu_a()).expect("validated attack params");
    let count_dist = success_count_dist(filter_success, p.n());
    let weights = schedule
        .iter()
        .zip(count_dist.iter())
        .map(|(&mu, &pk)| pk.value() * pconc(mu, p.n()))
        .collect();

    ResolvedAttack {
        threshold,
        intensity_schedule: schedule,
        filter_success,
        count_dist,
        weights,
    }
}

/// Bob's conclusive-outcome probability under the attack: the sum of the
/// per-class weights `Z_k` (classes below the threshold contribute zero).
pub fn bob_conclusive_under_attack(r: &ResolvedAttack) -> Probability {
    Probability::new_clamped(r.weights.iter().sum()).expect("weights sum to a probability")
}

/// Overlap `fp e^{-2 delta}` clipped into `[0, 1]` against floating drift.
#[inline]
fn clipped_overlap(fp: f64, delta: f64) -> f64 {
    (fp * (-2.0 * delta).exp()).min(1.0)
}

/// Unclamped threshold-class bound: Eve combines her filtered share with the
/// part she diverted below `(1-t) mu_A`, so two entropy terms appear.
pub(crate) fn info_threshold_unclamped(
    n: usize,
    k_thr: usize,
    t: f64,
    fp: f64,
    mu_a: f64,
    mu_k: f64,
) -> f64 {
    let ov_success = clipped_overlap(fp, mu_a - mu_k);
    let ov_failure = clipped_overlap(1.0, (1.0 - t) * mu_a - mu_k);
    (k_thr as f64 * h2(0.5 * (1.0 - ov_success))
        + (n - k_thr) as f64 * h2(0.5 * (1.0 - ov_failure))
        - 1.0)
        / (n - 1) as f64
}

/// Unclamped mid-class bound: `k` successful filterings of the tapped share.
pub(crate) fn info_mid_unclamped(n: usize, k: usize, t: f64, fp: f64, mu_a: f64) -> f64 {
    let ov = clipped_overlap(fp, t * mu_a);
    (k as f64 * h2(0.5 * (1.0 - ov)) - 1.0) / (n - 1) as f64
}

/// Unclamped all-success bound: Eve gave `mu_N` back to Bob.
pub(crate) fn info_top_unclamped(n: usize, fp: f64, mu_a: f64, mu_n: f64) -> f64 {
    let ov = clipped_overlap(fp, mu_a - mu_n);
    (n as f64 * h2(0.5 * (1.0 - ov)) - 1.0) / (n - 1) as f64
}

/// Eve's information lower bound for the threshold class `k = K`, clamped at
/// zero (a negative lower bound is vacuous).
pub fn eve_info_class_threshold(
    a: &AttackParams,
    r: &ResolvedAttack,
    p: &ProtocolParams,
) -> InformationBits {
    let v = info_threshold_unclamped(
        p.n() as usize,
        r.threshold,
        a.t(),
        a.fp(),
        p.mu_a(),
        r.mu_threshold(),
    );
    InformationBits::new(v.max(0.0)).expect("finite info bound")
}

/// Eve's information lower bound for a mid class `K < k < N`, clamped at zero.
pub fn eve_info_class_mid(
    k: usize,
    a: &AttackParams,
    p: &ProtocolParams,
) -> Result<InformationBits> {
    let n = p.n() as usize;
    if k == 0 || k >= n {
        return Err(Error::ClassIndex {
            k,
            lo: 1,
            hi: n - 1,
        });
    }
    let v = info_mid_unclamped(n, k, a.t(), a.fp(), p.mu_a());
    InformationBits::new(v.max(0.0))
}

/// Eve's information lower bound for the all-success class `k = N`, clamped
/// at zero.
pub fn eve_info_class_top(
    a: &AttackParams,
    r: &ResolvedAttack,
    p: &ProtocolParams,
) -> InformationBits {
    let v = info_top_unclamped(p.n() as usize, a.fp(), p.mu_a(), r.mu_top());
    InformationBits::new(v.max(0.0)).expect("finite info bound")
}

/// Clamped per-class information values for `k = 0..=N`; blocked classes
/// hold zero. Shared by the total bound and the Monte-Carlo estimator.
pub fn class_infos(a: &AttackParams, r: &ResolvedAttack, p: &ProtocolParams) -> Vec<f64> {
    let n = p.n() as usize;
    let mut out = vec![0.0_f64; n + 1];
    for (k, slot) in out.iter_mut().enumerate() {
        if k < r.threshold {
            continue;
        }
        *slot = if k == r.threshold {
            eve_info_class_threshold(a, r, p).value()
        } else if k < n {
            info_mid_unclamped(n, k, a.t(), a.fp(), p.mu_a()).max(0.0)
        } else {
            eve_info_class_top(a, r, p).value()
        };
    }
    out
}

/// Eve's total information lower bound: the `Z_k`-weighted mean of the
/// per-class bounds over the classes Bob can detect.
pub fn eve_info_total(a: &AttackParams, p: &ProtocolParams) -> Result<InformationBits> {
    let r = resolve_schedule(a, p);
    eve_info_total_resolved(a, &r, p)
}

/// As [`eve_info_total`], reusing an already resolved schedule.
pub fn eve_info_total_resolved(
    a: &AttackParams,
    r: &ResolvedAttack,
    p: &ProtocolParams,
) -> Result<InformationBits> {
    let total_weight: f64 = r.weights.iter().sum();
    if total_weight <= 0.0 {
        return Err(Error::NoConclusiveEvents);
    }
    let infos = class_infos(a, r, p);
    let weighted: f64 = r
        .weights
        .iter()
        .zip(infos.iter())
        .map(|(&z, &i)| z * i)
        .sum();
    InformationBits::new(weighted / total_weight)
}
