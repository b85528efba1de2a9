//! Per-channel-length optimization of the attack parameters subject to the
//! detection-rate equality constraint, plus the derived quantities: critical
//! error, secret key rate, and the Alice intensity that maximizes the rate.
//!
//! The constraint (Bob's conclusive rate must equal the no-attack value for
//! the channel length) is eliminated by solving for `p1` with bisection —
//! the conclusive rate is continuous and non-increasing in `p1` — which
//! reduces the search to `(t, fp, p2)`. A coarse grid seeds bounded
//! polytope descent with per-axis line searches; because the objective is
//! only piecewise-smooth across integer blocking thresholds, each threshold
//! branch is additionally searched on its own, with the feasible `fp`
//! interval resolved exactly per `(t, p2)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::attack::{
    bob_conclusive_under_attack, eve_info_total_resolved, filter_success_prob,
    info_threshold_unclamped, info_top_unclamped, mu_top_upper_bound, resolve_schedule,
    t_lower_bound, AttackParams, ResolvedAttack,
};
use crate::error::{Error, Result};
use crate::math::{h2, h2_inv, InformationBits, Probability};
use crate::protocol::{
    conclusive_prob, expected_bob_intensity, pconc, ChannelParams, ProtocolParams, MAX_BLOCK_LEN,
};
use crate::stationarity::{
    d_weight_scalar, stationarity_residual, StationarityReport, DEGENERATE_Z_TOL,
};

/// Matching tolerance for the rate-equality constraint.
pub const CONSTRAINT_TOL: f64 = 1e-10;
/// Slack when testing the constraint interval endpoints for feasibility.
const FEAS_EPS: f64 = 1e-12;
/// Bracket width at which the p1 bisection stops.
const P1_BRACKET_TOL: f64 = 1e-13;
/// Relative margin below which a parameter counts as sitting on a bound.
const BOUND_MARGIN: f64 = 1e-9;

/// Sweep configuration: protocol and channel constants, the length list,
/// grid resolutions and refinement tolerance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepConfig {
    pub protocol: ProtocolParams,
    pub delta_db_per_km: f64,
    pub lengths_km: Vec<f64>,
    /// Grid points along `t` (linear over its valid interval).
    pub t_points: usize,
    /// Grid points along `fp` (log-spaced in `[fp_min, 1]`); the
    /// discrimination-limit plane `fp = 0` is always added on top.
    pub fp_points: usize,
    /// Grid points along `p2` (linear in `[0, 1]`).
    pub p2_points: usize,
    pub fp_min: f64,
    /// Domain tolerance of the polytope refinement.
    pub refine_tol: f64,
    /// Error rate assumed when converting the information gap to a key rate.
    pub qber: Probability,
    /// Log-spaced scan range and resolution for the optimal Alice intensity.
    pub mua_min: f64,
    pub mua_max: f64,
    pub mua_points: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let lengths_km = (0..=125).map(|i| 2.0 * i as f64).collect();
        SweepConfig {
            protocol: ProtocolParams::new(10, 0.1).expect("valid default protocol"),
            delta_db_per_km: 0.2,
            lengths_km,
            t_points: 33,
            fp_points: 33,
            p2_points: 33,
            fp_min: 1e-6,
            refine_tol: 1e-8,
            qber: Probability::ZERO,
            mua_min: 1e-3,
            mua_max: 1.0,
            mua_points: 25,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lengths_km.is_empty() {
            return Err(Error::InvalidConfig("length list is empty".into()));
        }
        if !self
            .lengths_km
            .windows(2)
            .all(|w| w[0] < w[1] && w[0].is_finite())
            || self.lengths_km.iter().any(|l| !l.is_finite() || *l < 0.0)
        {
            return Err(Error::InvalidConfig(
                "lengths must be non-negative, finite and strictly increasing".into(),
            ));
        }
        if self.delta_db_per_km <= 0.0 || self.delta_db_per_km.is_nan() {
            return Err(Error::InvalidConfig("attenuation must be positive".into()));
        }
        if self.t_points < 2 || self.fp_points < 2 || self.p2_points < 2 {
            return Err(Error::InvalidConfig(
                "grid resolutions must be at least 2".into(),
            ));
        }
        if !(self.fp_min > 0.0 && self.fp_min < 1.0) {
            return Err(Error::InvalidConfig("fp_min must lie in (0, 1)".into()));
        }
        if self.refine_tol <= 0.0 || self.refine_tol.is_nan() {
            return Err(Error::InvalidConfig(
                "refinement tolerance must be positive".into(),
            ));
        }
        if self.qber.value() > 0.5 {
            return Err(Error::InvalidConfig("QBER above 1/2".into()));
        }
        if !(self.mua_min > 0.0 && self.mua_min < self.mua_max) || self.mua_points < 2 {
            return Err(Error::InvalidConfig(
                "Alice-intensity scan range is invalid".into(),
            ));
        }
        Ok(())
    }

    fn channel(&self, length_km: f64) -> Result<ChannelParams> {
        ChannelParams::new(self.delta_db_per_km, length_km)
    }
}

/// Outcome of eliminating `p1` at a fixed `(t, fp, p2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintSolution {
    /// A `p1` in `[0, N]` matches the target rate to [`CONSTRAINT_TOL`].
    Feasible(f64),
    /// Even `p1 = 0` (no blocking) leaves the rate below the target.
    RateTooLow,
    /// Even `p1 = N` (maximal blocking) leaves the rate above the target.
    RateTooHigh,
}

/// Natural logarithms of the small integers used by the binomial
/// recurrence.
fn ln_int(k: usize) -> f64 {
    use std::sync::OnceLock;
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| (0..=MAX_BLOCK_LEN + 1).map(|i| (i as f64).ln()).collect())[k]
}

/// Everything derived from `(t, fp, p2)` that the constraint solver and the
/// objective need, precomputed once and held on the stack.
struct AttackPoint {
    n: usize,
    mu_a: f64,
    t: f64,
    fp: f64,
    forwarded: f64,
    /// Binomial law of the success count.
    pk: [f64; MAX_BLOCK_LEN + 1],
    /// `suffix_mid[k]` = mass of the classes `k..n` (excluding `n`).
    suffix_mid: [f64; MAX_BLOCK_LEN + 2],
    pconc_forwarded: f64,
    /// `pk[n] * pconc(mu_top)`.
    top_term: f64,
    /// Per-success entropy of the mid classes, `h2((1 - fp e^{-2 t mu_A})/2)`.
    h_mid: f64,
    /// Clamped information of the all-success class at `mu_top`.
    info_top: f64,
}

impl AttackPoint {
    fn new(t: f64, fp: f64, p2: f64, p: &ProtocolParams) -> AttackPoint {
        let n = p.n() as usize;
        let mu_a = p.mu_a();
        let forwarded = (1.0 - t) * mu_a;
        let upper = mu_top_upper_bound(fp, p);
        let mu_top = forwarded + p2 * (upper - forwarded);

        let ps = filter_success_prob(t, fp, mu_a)
            .expect("validated filter inputs")
            .value();

        let mut pk = [0.0_f64; MAX_BLOCK_LEN + 1];
        if ps <= 0.0 {
            pk[0] = 1.0;
        } else if ps >= 1.0 {
            pk[n] = 1.0;
        } else {
            // Log-domain binomial with the coefficient built by recurrence.
            let lp = ps.ln();
            let lq = (-ps).ln_1p();
            let mut ln_coeff = 0.0;
            for (k, slot) in pk.iter_mut().enumerate().take(n + 1) {
                *slot = (ln_coeff + k as f64 * lp + (n - k) as f64 * lq).exp();
                ln_coeff += ln_int(n - k) - ln_int(k + 1);
            }
        }
        let mut suffix_mid = [0.0_f64; MAX_BLOCK_LEN + 2];
        for k in (0..n).rev() {
            suffix_mid[k] = suffix_mid[k + 1] + pk[k];
        }

        let ov_mid = (fp * (-2.0 * t * mu_a).exp()).min(1.0);
        AttackPoint {
            n,
            mu_a,
            t,
            fp,
            forwarded,
            pk,
            suffix_mid,
            pconc_forwarded: pconc(forwarded, p.n()),
            top_term: pk[n] * pconc(mu_top, p.n()),
            h_mid: h2(0.5 * (1.0 - ov_mid)),
            info_top: info_top_unclamped(n, fp, mu_a, mu_top).max(0.0),
        }
    }

    /// Bob's conclusive rate at a given blocking control.
    #[inline]
    fn conclusive(&self, p1: f64) -> f64 {
        let k = (p1.floor() as usize).min(self.n - 1);
        let mu_k = (k as f64 + 1.0 - p1) * self.forwarded;
        self.pk[k] * pconc(mu_k, self.n as u32)
            + self.suffix_mid[k + 1] * self.pconc_forwarded
            + self.top_term
    }

    /// Bisects the non-increasing rate curve for `p1` inside
    /// `[lo_p1, hi_p1]`; endpoint matches are preferred, `lo_p1` first.
    fn solve_p1_in(&self, target: f64, lo_p1: f64, hi_p1: f64) -> Option<f64> {
        let v_lo = self.conclusive(lo_p1);
        if target > v_lo + FEAS_EPS {
            return None;
        }
        let v_hi = self.conclusive(hi_p1);
        if target < v_hi - FEAS_EPS {
            return None;
        }
        if (v_lo - target).abs() <= CONSTRAINT_TOL {
            return Some(lo_p1);
        }
        if (v_hi - target).abs() <= CONSTRAINT_TOL {
            return Some(hi_p1);
        }
        let (mut lo, mut hi) = (lo_p1, hi_p1);
        while hi - lo > P1_BRACKET_TOL {
            let mid = 0.5 * (lo + hi);
            if self.conclusive(mid) >= target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let p1 = 0.5 * (lo + hi);
        ((self.conclusive(p1) - target).abs() <= CONSTRAINT_TOL).then_some(p1)
    }

    /// Eve's total information bound at a given blocking control; `None`
    /// when every class carries zero weight.
    fn info(&self, p1: f64) -> Option<f64> {
        let n = self.n;
        let k_thr = (p1.floor() as usize).min(n - 1);
        let mu_k = (k_thr as f64 + 1.0 - p1) * self.forwarded;

        let z_thr = self.pk[k_thr] * pconc(mu_k, n as u32);
        let z_mid = self.suffix_mid[k_thr + 1] * self.pconc_forwarded;
        let total = z_thr + z_mid + self.top_term;
        if total <= 0.0 {
            return None;
        }

        let nm1 = (n - 1) as f64;
        let info_thr =
            info_threshold_unclamped(n, k_thr, self.t, self.fp, self.mu_a, mu_k).max(0.0);
        let mut acc = z_thr * info_thr + self.top_term * self.info_top;
        for k in (k_thr + 1)..n {
            let ik = (k as f64 * self.h_mid - 1.0) / nm1;
            if ik > 0.0 {
                acc += self.pk[k] * self.pconc_forwarded * ik;
            }
        }
        Some(acc / total)
    }
}

/// Finds the `p1` at which Bob's conclusive rate equals `target`, by
/// bisection on the non-increasing rate curve. Endpoint matches are
/// preferred (`p1 = 0` first, the least invasive choice), so flat segments
/// resolve deterministically.
pub fn solve_constraint_p1(
    t: f64,
    fp: f64,
    p2: f64,
    target: Probability,
    p: &ProtocolParams,
) -> ConstraintSolution {
    let point = AttackPoint::new(t, fp, p2, p);
    let tgt = target.value();
    let nn = point.n as f64;
    if tgt > point.conclusive(0.0) + FEAS_EPS {
        return ConstraintSolution::RateTooLow;
    }
    if tgt < point.conclusive(nn) - FEAS_EPS {
        return ConstraintSolution::RateTooHigh;
    }
    match point.solve_p1_in(tgt, 0.0, nn) {
        Some(p1) => ConstraintSolution::Feasible(p1),
        // Monotone and continuous, so the bracket always verifies; the
        // fallback is classified by the residual sign.
        None => {
            if point.conclusive(0.5 * nn) < tgt {
                ConstraintSolution::RateTooLow
            } else {
                ConstraintSolution::RateTooHigh
            }
        }
    }
}

/// A feasible search point with its objective value.
#[derive(Debug, Clone, Copy)]
struct Candidate {
    t: f64,
    fp: f64,
    p1: f64,
    p2: f64,
    info: f64,
}

/// Objective differences below this are ties: the constraint is only
/// matched to 1e-10 in rate, so finer information differences are solver
/// noise, not signal.
const INFO_TIE_TOL: f64 = 1e-9;

/// Improvement comparison with the deterministic tie-break: smallest `t`,
/// then largest `fp` (the least invasive attack). A candidate never wins
/// with a lower objective value.
fn better(c: &Candidate, incumbent: &Candidate) -> bool {
    if c.info > incumbent.info + INFO_TIE_TOL {
        return true;
    }
    if c.info < incumbent.info {
        return false;
    }
    if c.t != incumbent.t {
        return c.t < incumbent.t;
    }
    c.fp > incumbent.fp
}

fn evaluate(t: f64, fp: f64, p2: f64, target: f64, p: &ProtocolParams) -> Option<Candidate> {
    let point = AttackPoint::new(t, fp, p2, p);
    let p1 = point.solve_p1_in(target, 0.0, point.n as f64)?;
    let info = point.info(p1)?;
    Some(Candidate { t, fp, p1, p2, info })
}

fn evaluate_in_branch(
    t: f64,
    fp: f64,
    p2: f64,
    target: f64,
    p: &ProtocolParams,
    branch: usize,
) -> Option<Candidate> {
    let point = AttackPoint::new(t, fp, p2, p);
    let hi = ((branch + 1) as f64).min(point.n as f64);
    let p1 = point.solve_p1_in(target, branch as f64, hi)?;
    let info = point.info(p1)?;
    Some(Candidate { t, fp, p1, p2, info })
}

fn linspace(lo: f64, hi: f64, m: usize) -> Vec<f64> {
    debug_assert!(m >= 2);
    (0..m)
        .map(|i| lo + (hi - lo) * i as f64 / (m - 1) as f64)
        .collect()
}

fn log_spaced_fp(fp_min: f64, m: usize) -> Vec<f64> {
    let ln_min = fp_min.ln();
    let mut out: Vec<f64> = (0..m)
        .map(|i| (ln_min * (1.0 - i as f64 / (m - 1) as f64)).exp())
        .collect();
    out[0] = fp_min;
    out[m - 1] = 1.0;
    out
}

/// Best candidate of `eval` over the cartesian grid, in deterministic scan
/// order with the tie-break of [`better`].
fn scan_grid(
    eval: &dyn Fn(f64, f64, f64) -> Option<Candidate>,
    t_vals: &[f64],
    fp_vals: &[f64],
    p2_vals: &[f64],
) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for &t in t_vals {
        for &fp in fp_vals {
            for &p2 in p2_vals {
                if let Some(c) = eval(t, fp, p2) {
                    if best.as_ref().is_none_or(|b| better(&c, b)) {
                        best = Some(c);
                    }
                }
            }
        }
    }
    best
}

/// Feasible `fp` interval of one blocking branch at fixed `(t, p2)`.
///
/// Branch `K` is feasible when the rate at `p1 = K` is at least the target
/// and the rate at `p1 = K+1` at most; both edge rates grow with `fp`
/// (higher success probability shifts mass to brighter classes), so the
/// window edges come from bisection. Windows can be far thinner than any
/// grid step — at short lengths they hug `fp = 1`.
fn branch_fp_window(
    t: f64,
    p2: f64,
    target: f64,
    p: &ProtocolParams,
    branch: usize,
    fp_min: f64,
) -> Option<(f64, f64)> {
    let n = p.n() as f64;
    let k0 = branch as f64;
    let k1 = (k0 + 1.0).min(n);
    let rate = |fp: f64, p1: f64| AttackPoint::new(t, fp, p2, p).conclusive(p1);

    // Smallest fp whose rate at this p1 reaches the target.
    let bisect_edge = |p1: f64| -> f64 {
        let (mut lo, mut hi) = (fp_min, 1.0);
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if rate(mid, p1) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };

    let lo = if rate(fp_min, k0) >= target - FEAS_EPS {
        fp_min
    } else if rate(1.0, k0) < target - FEAS_EPS {
        return None;
    } else {
        bisect_edge(k0)
    };
    let hi = if rate(1.0, k1) <= target + FEAS_EPS {
        1.0
    } else if rate(fp_min, k1) > target + FEAS_EPS {
        return None;
    } else {
        bisect_edge(k1)
    };
    (lo <= hi).then_some((lo, hi))
}

/// Best candidate of one blocking branch: a `(t, p2)` grid with the `fp`
/// interval resolved exactly and line-optimized inside, then polytope
/// descent over `(t, p2)` with the same inner solve.
fn best_in_branch(cfg: &SweepConfig, target: f64, branch: usize) -> Option<Candidate> {
    let p = &cfg.protocol;
    let half = |m: usize| (m / 2 + 1).max(5);
    let t_vals = linspace(t_lower_bound(p), 1.0, half(cfg.t_points));
    let p2_vals = linspace(0.0, 1.0, half(cfg.p2_points));

    let inner = |t: f64, p2: f64, polish: bool| -> Option<Candidate> {
        let (lo, hi) = branch_fp_window(t, p2, target, p, branch, cfg.fp_min)?;
        let mut best: Option<Candidate> = None;
        let probes = 6;
        for i in 0..=probes {
            let fp = (lo + (hi - lo) * i as f64 / probes as f64).min(1.0);
            if let Some(c) = evaluate_in_branch(t, fp, p2, target, p, branch) {
                if best.as_ref().is_none_or(|b| better(&c, b)) {
                    best = Some(c);
                }
            }
        }
        if polish {
            let center = best.as_ref()?.fp;
            let w = (hi - lo) / probes as f64;
            let (a, b) = ((center - w).max(lo), (center + w).min(hi));
            if b - a > 1e-15 {
                let mut slice = |fp: f64| {
                    evaluate_in_branch(t, fp, p2, target, p, branch)
                        .map(|c| -c.info)
                        .unwrap_or(f64::INFINITY)
                };
                let (fp, _) = golden_min(&mut slice, a, b, 1e-10);
                if let Some(c) = evaluate_in_branch(t, fp, p2, target, p, branch) {
                    if best.as_ref().is_none_or(|bi| better(&c, bi)) {
                        best = Some(c);
                    }
                }
            }
        }
        best
    };

    let mut best: Option<Candidate> = None;
    for &t in &t_vals {
        for &p2 in &p2_vals {
            if let Some(c) = inner(t, p2, false) {
                if best.as_ref().is_none_or(|b| better(&c, b)) {
                    best = Some(c);
                }
            }
        }
    }
    let start = best?;

    // Polytope descent over (t, p2) with fp line-optimized per probe (the
    // envelope objective keeps the interior-optimum certificate valid).
    let mut obj = |x: &[f64]| -> f64 {
        inner(x[0], x[1], true)
            .map(|c| -c.info)
            .unwrap_or(f64::INFINITY)
    };
    let t_step = (1.0 - t_lower_bound(p)).max(1e-12) / (half(cfg.t_points) - 1) as f64;
    let p2_step = 1.0 / (half(cfg.p2_points) - 1) as f64;
    let x = nelder_mead(
        &mut obj,
        &[start.t, start.p2],
        &[t_step, p2_step],
        &[(t_lower_bound(p), 1.0), (0.0, 1.0)],
        cfg.refine_tol,
        120,
    );
    let mut best = Some(start);
    if let Some(c) = inner(x[0], x[1], true) {
        if best.as_ref().is_none_or(|b| better(&c, b)) {
            best = Some(c);
        }
    }
    best
}

/// Bounded Nelder-Mead on `dim` coordinates; probes are clamped into the
/// box. Minimizes `f`; deterministic for deterministic `f`.
fn nelder_mead(
    f: &mut impl FnMut(&[f64]) -> f64,
    x0: &[f64],
    steps: &[f64],
    bounds: &[(f64, f64)],
    tol: f64,
    max_iter: usize,
) -> Vec<f64> {
    let dim = x0.len();
    let clamp = |x: &mut Vec<f64>| {
        for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
            *xi = xi.clamp(lo, hi);
        }
    };
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let mut x = x0.to_vec();
    clamp(&mut x);
    let fx = f(&x);
    simplex.push((x, fx));
    for i in 0..dim {
        let mut xi = x0.to_vec();
        // Step away from a bound if the forward step would leave the box.
        if xi[i] + steps[i] <= bounds[i].1 {
            xi[i] += steps[i];
        } else {
            xi[i] -= steps[i];
        }
        clamp(&mut xi);
        let fxi = f(&xi);
        simplex.push((xi, fxi));
    }

    for _ in 0..max_iter {
        simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("no NaN objective"));
        let spread = (0..dim)
            .map(|i| {
                let vals: Vec<f64> = simplex.iter().map(|(x, _)| x[i]).collect();
                let mx = vals.iter().cloned().fold(f64::MIN, f64::max);
                let mn = vals.iter().cloned().fold(f64::MAX, f64::min);
                mx - mn
            })
            .fold(0.0_f64, f64::max);
        if spread < tol {
            break;
        }

        let worst = simplex[dim].clone();
        let mut centroid = vec![0.0; dim];
        for (xs, _) in simplex.iter().take(dim) {
            for (c, &v) in centroid.iter_mut().zip(xs) {
                *c += v / dim as f64;
            }
        }
        let probe = |coef: f64| {
            let mut x: Vec<f64> = centroid
                .iter()
                .zip(&worst.0)
                .map(|(&c, &w)| c + coef * (c - w))
                .collect();
            for (xi, &(lo, hi)) in x.iter_mut().zip(bounds) {
                *xi = xi.clamp(lo, hi);
            }
            x
        };

        let xr = probe(1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = probe(2.0);
            let fe = f(&xe);
            simplex[dim] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[dim - 1].1 {
            simplex[dim] = (xr, fr);
        } else {
            let xc = probe(-0.5);
            let fc = f(&xc);
            if fc < simplex[dim].1 {
                simplex[dim] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let x: Vec<f64> = entry
                        .0
                        .iter()
                        .zip(&best)
                        .map(|(&v, &b)| b + 0.5 * (v - b))
                        .collect();
                    let fx = f(&x);
                    *entry = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.partial_cmp(&b.1).expect("no NaN objective"));
    simplex[0].0.clone()
}

/// Golden-section minimization over `[a, b]`; returns the best probed point.
fn golden_min(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let mut c = b - INVPHI * (b - a);
    let mut d = a + INVPHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INVPHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INVPHI * (b - a);
            fd = f(d);
        }
    }
    if fc < fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Polytope descent interleaved with full-axis line searches from a grid
/// incumbent, under an arbitrary (free or branch-restricted) evaluator.
/// `p2` is polished last so the interior-optimum certificate comes out
/// tight. Never regresses below the starting candidate.
fn refine(
    start: Candidate,
    cfg: &SweepConfig,
    eval: &dyn Fn(f64, f64, f64) -> Option<Candidate>,
) -> Candidate {
    let p = &cfg.protocol;
    let t_lo = t_lower_bound(p);
    let usd = start.fp == 0.0;

    let value = |x: &[f64]| -> f64 {
        let (t, fp, p2) = if usd {
            (x[0], 0.0, x[1])
        } else {
            (x[0], x[1], x[2])
        };
        match eval(t, fp, p2) {
            Some(c) => -c.info,
            None => f64::INFINITY,
        }
    };

    let t_step = (1.0 - t_lo).max(1e-12) / (cfg.t_points - 1) as f64;
    let p2_step = 1.0 / (cfg.p2_points - 1) as f64;
    let fp_ratio = (1.0 / cfg.fp_min).powf(1.0 / (cfg.fp_points - 1) as f64);

    let (x0, steps, bounds): (Vec<f64>, Vec<f64>, Vec<(f64, f64)>) = if usd {
        (
            vec![start.t, start.p2],
            vec![t_step, p2_step],
            vec![(t_lo, 1.0), (0.0, 1.0)],
        )
    } else {
        // Two-scale step: the geometric grid step far from 1, but inside a
        // feasibility sliver hugging fp = 1 the simplex must stay local.
        let fp_step = (start.fp * (fp_ratio - 1.0))
            .min(0.5 * (1.0 - start.fp).max(2e-9))
            .max(1e-9);
        (
            vec![start.t, start.fp, start.p2],
            vec![t_step, fp_step, p2_step],
            vec![(t_lo, 1.0), (cfg.fp_min, 1.0), (0.0, 1.0)],
        )
    };

    // `fp` lives on a log scale with a second accumulation point at 1;
    // scan probes for the fp axis cover both.
    let fp_axis = if usd { usize::MAX } else { 1 };
    let axis_probes = |axis: usize, lo: f64, hi: f64| -> Vec<f64> {
        let mut v = if axis == fp_axis {
            let mut v: Vec<f64> = (0..17)
                .map(|i| (lo.ln() * (1.0 - i as f64 / 16.0)).exp())
                .collect();
            v.extend((1..=8).map(|i| 1.0 - 0.3 * (1e-6_f64).powf(i as f64 / 8.0)));
            v
        } else {
            linspace(lo, hi, 17)
        };
        v.retain(|x| (lo..=hi).contains(x));
        v
    };

    let mut obj = |x: &[f64]| value(x);
    let mut x = x0.clone();
    let mut fx = value(&x);

    for pass in 0..2 {
        let nm_steps: Vec<f64> = steps.iter().map(|s| s / (1.0 + 4.0 * pass as f64)).collect();
        let xn = nelder_mead(&mut obj, &x, &nm_steps, &bounds, cfg.refine_tol, 400);
        let fxn = value(&xn);
        if fxn < fx {
            x = xn;
            fx = fxn;
        }

        // Full-axis line searches: a coarse scan to pick the basin, then a
        // golden refinement around it. Handles hops that the local
        // polytope cannot cross.
        for axis in 0..x.len() {
            let (lo, hi) = bounds[axis];
            let mut slice_x = x.clone();
            let mut slice = |v: f64| {
                slice_x[axis] = v;
                value(&slice_x)
            };
            let probes = axis_probes(axis, lo, hi);
            let mut best_probe = (x[axis], fx);
            let mut spacing = (hi - lo) / 16.0;
            for &v in &probes {
                let fv = slice(v);
                if fv < best_probe.1 {
                    best_probe = (v, fv);
                }
            }
            if axis == fp_axis {
                spacing = best_probe.0 * 0.3;
            }
            let a = (best_probe.0 - spacing).max(lo);
            let b = (best_probe.0 + spacing).min(hi);
            if b - a > 1e-14 {
                let (v, fv) = golden_min(&mut slice, a, b, 1e-10);
                if fv < best_probe.1 {
                    best_probe = (v, fv);
                }
            }
            if best_probe.1 < fx {
                x[axis] = best_probe.0;
                fx = best_probe.1;
            }
        }
    }

    let refined = if usd {
        eval(x[0], 0.0, x[1])
    } else {
        eval(x[0], x[1], x[2])
    };
    match refined {
        Some(c) if better(&c, &start) => c,
        _ => start,
    }
}

/// Either a stationarity report (fully interior optimum) or the list of
/// active bounds, with the residual attached when it is still computable.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum OptimumCertificate {
    Interior(StationarityReport),
    Boundary {
        active: Vec<String>,
        residual: Option<f64>,
    },
}

impl OptimumCertificate {
    pub fn residual(&self) -> Option<f64> {
        match self {
            OptimumCertificate::Interior(rep) => Some(rep.residual),
            OptimumCertificate::Boundary { residual, .. } => *residual,
        }
    }

    pub fn boundary_flags(&self) -> Vec<String> {
        match self {
            OptimumCertificate::Interior(_) => Vec::new(),
            OptimumCertificate::Boundary { active, .. } => active.clone(),
        }
    }
}

/// Per-length optimum: parameters, resolved schedule, information bound,
/// critical error, key rate and the optimality certificate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackOptimum {
    pub length_km: f64,
    pub target_pconc: Probability,
    pub params: AttackParams,
    pub resolved: ResolvedAttack,
    pub info_eve: InformationBits,
    pub critical_qber: Probability,
    pub key_rate: f64,
    pub certificate: OptimumCertificate,
}

fn certify(a: &AttackParams, r: &ResolvedAttack, cfg: &SweepConfig) -> OptimumCertificate {
    let p = &cfg.protocol;
    let n = p.n() as usize;
    let t_lo = t_lower_bound(p);
    let forwarded = (1.0 - a.t()) * p.mu_a();
    let mut active = Vec::new();

    if a.t() - t_lo <= BOUND_MARGIN {
        active.push("t=min".to_string());
    }
    if 1.0 - a.t() <= BOUND_MARGIN {
        active.push("t=max".to_string());
    }
    if a.is_usd() {
        active.push("fp=usd".to_string());
    } else {
        if a.fp() - cfg.fp_min <= BOUND_MARGIN * cfg.fp_min {
            active.push("fp=min".to_string());
        }
        if 1.0 - a.fp() <= BOUND_MARGIN {
            active.push("fp=max".to_string());
        }
    }
    let mu_margin = BOUND_MARGIN * forwarded.max(1e-12);
    if r.mu_threshold() <= mu_margin {
        active.push("muK=min".to_string());
    }
    if forwarded - r.mu_threshold() <= mu_margin {
        active.push("muK=max".to_string());
    }
    if a.p2() <= BOUND_MARGIN {
        active.push("p2=min".to_string());
    }
    if 1.0 - a.p2() <= BOUND_MARGIN {
        active.push("p2=max".to_string());
    }
    let dzk = d_weight_scalar(n, r.count_dist[r.threshold].value(), r.mu_threshold());
    if dzk.abs() < DEGENERATE_Z_TOL {
        active.push("dZK=0".to_string());
    }
    let dzn = d_weight_scalar(n, r.count_dist[n].value(), r.mu_top());
    if dzn.abs() < DEGENERATE_Z_TOL {
        active.push("dZN=0".to_string());
    }
    // A clamped class bound makes the objective kinked at this point, so
    // the smooth interior certificate does not apply.
    if info_threshold_unclamped(n, r.threshold, a.t(), a.fp(), p.mu_a(), r.mu_threshold()) < 0.0 {
        active.push("IK_clamped".to_string());
    }
    if info_top_unclamped(n, a.fp(), p.mu_a(), r.mu_top()) < 0.0 {
        active.push("IN_clamped".to_string());
    }

    if active.is_empty() {
        match stationarity_residual(a, p) {
            Ok(rep) => OptimumCertificate::Interior(rep),
            Err(_) => OptimumCertificate::Boundary {
                active: vec!["degenerate".to_string()],
                residual: None,
            },
        }
    } else {
        let residual = stationarity_residual(a, p).ok().map(|rep| rep.residual);
        OptimumCertificate::Boundary { active, residual }
    }
}

fn build_optimum(
    c: Candidate,
    cfg: &SweepConfig,
    target: Probability,
    length_km: f64,
) -> Result<AttackOptimum> {
    let p = &cfg.protocol;
    let a = AttackParams::new(c.t, c.fp, c.p1, c.p2, p)?;
    let r = resolve_schedule(&a, p);
    let achieved = bob_conclusive_under_attack(&r).value();
    assert!(
        (achieved - target.value()).abs() < 1e-9,
        "constraint violated: achieved {achieved}, target {}",
        target.value()
    );
    let info_eve = eve_info_total_resolved(&a, &r, p)?;
    let critical_qber = critical_error(info_eve)?;
    let key_rate = key_rate(target, info_eve, cfg.qber)?;
    let certificate = certify(&a, &r, cfg);
    Ok(AttackOptimum {
        length_km,
        target_pconc: target,
        params: a,
        resolved: r,
        info_eve,
        critical_qber,
        key_rate,
        certificate,
    })
}

fn optimum_as_candidate(o: &AttackOptimum) -> Candidate {
    Candidate {
        t: o.params.t(),
        fp: o.params.fp(),
        p1: o.params.p1(),
        p2: o.params.p2(),
        info: o.info_eve.value(),
    }
}

/// Target conclusive probability for a channel length: the clean-channel
/// value the legitimate users expect.
pub fn target_conclusive(cfg: &SweepConfig, length_km: f64) -> Result<Probability> {
    let channel = cfg.channel(length_km)?;
    let mu_b = expected_bob_intensity(&cfg.protocol, &channel);
    conclusive_prob(mu_b, cfg.protocol.n())
}

/// Grid axes used by the main unrestricted scan.
fn main_axes(cfg: &SweepConfig) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let t_lo = t_lower_bound(&cfg.protocol);
    let mut fp_vals = vec![0.0];
    fp_vals.extend(log_spaced_fp(cfg.fp_min, cfg.fp_points));
    (
        linspace(t_lo, 1.0, cfg.t_points),
        fp_vals,
        linspace(0.0, 1.0, cfg.p2_points),
    )
}

/// Maximizes Eve's information at one channel length.
///
/// Search scheme: a coarse grid over `(t, fp, p2)` with `p1` eliminated by
/// the constraint, refined by bounded polytope descent plus line searches;
/// the same machinery is rerun per blocking branch `K` (the objective is
/// only piecewise-smooth across thresholds) with the feasible `fp` window
/// resolved exactly, and on the discrimination-limit plane. The best
/// incumbent under the deterministic tie-break wins.
pub fn optimize_for_length(cfg: &SweepConfig, length_km: f64) -> Result<AttackOptimum> {
    cfg.validate()?;
    let target = target_conclusive(cfg, length_km)?;
    let tgt = target.value();
    let p = &cfg.protocol;
    let n = p.n() as usize;

    let mut incumbent: Option<Candidate> = None;
    let consider = |c: Candidate, incumbent: &mut Option<Candidate>| {
        if incumbent.as_ref().is_none_or(|b| better(&c, b)) {
            *incumbent = Some(c);
        }
    };

    let free_eval = |t: f64, fp: f64, p2: f64| evaluate(t, fp, p2, tgt, p);
    let (t_vals, fp_vals, p2_vals) = main_axes(cfg);
    if let Some(g) = scan_grid(&free_eval, &t_vals, &fp_vals, &p2_vals) {
        consider(refine(g, cfg, &free_eval), &mut incumbent);
    }

    // Per-branch passes with the fp window resolved exactly; the winner
    // gets a final free polish.
    for branch in 0..n {
        if let Some(c) = best_in_branch(cfg, tgt, branch) {
            let branch_eval =
                move |t: f64, fp: f64, p2: f64| evaluate_in_branch(t, fp, p2, tgt, p, branch);
            consider(refine(c, cfg, &branch_eval), &mut incumbent);
        }
    }
    if let Some(c) = incumbent {
        consider(refine(c, cfg, &free_eval), &mut incumbent);
    }

    // The discrimination limit is part of the feasible set; refining it
    // separately keeps the dominance guarantee structural.
    if let Some(g) = scan_grid(&free_eval, &t_vals, &[0.0], &p2_vals) {
        consider(refine(g, cfg, &free_eval), &mut incumbent);
    }

    let incumbent = incumbent.ok_or(Error::InfeasibleLength { length_km })?;
    build_optimum(incumbent, cfg, target, length_km)
}

/// The same optimization with `fp` pinned to the discrimination limit;
/// returns the resulting information bound (the USD-attack baseline).
pub fn usd_baseline_for_length(cfg: &SweepConfig, length_km: f64) -> Result<InformationBits> {
    cfg.validate()?;
    let target = target_conclusive(cfg, length_km)?;
    let tgt = target.value();
    let p = &cfg.protocol;
    let free_eval = |t: f64, fp: f64, p2: f64| evaluate(t, fp, p2, tgt, p);
    let (t_vals, _, p2_vals) = main_axes(cfg);
    let grid = scan_grid(&free_eval, &t_vals, &[0.0], &p2_vals)
        .ok_or(Error::InfeasibleLength { length_km })?;
    let refined = refine(grid, cfg, &free_eval);
    InformationBits::new(refined.info)
}

/// Error rate at which Eve's information equals Bob's:
/// `Q_c = h2_inv(1 - I_AE)`, on `[0, 1/2]`.
pub fn critical_error(info_eve: InformationBits) -> Result<Probability> {
    let v = info_eve.value();
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::Domain {
            name: "Eve information",
            value: v,
            domain: "[0, 1]",
        });
    }
    Probability::new(h2_inv(1.0 - v))
}

/// Secret key rate per train, `p_conc (1 - h2(Q) - I_AE)`, floored at zero.
pub fn key_rate(pconc: Probability, info_eve: InformationBits, q: Probability) -> Result<f64> {
    let qv = q.value();
    if qv > 0.5 {
        return Err(Error::Domain {
            name: "QBER",
            value: qv,
            domain: "[0, 1/2]",
        });
    }
    Ok((pconc.value() * (1.0 - h2(qv) - info_eve.value())).max(0.0))
}

/// The Alice intensity maximizing the key rate at one length, with the
/// attack re-optimized against every probed intensity.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AliceOptimum {
    pub length_km: f64,
    pub mu_a: f64,
    pub key_rate: f64,
    pub info_eve: InformationBits,
    pub critical_qber: Probability,
}

/// Scans Alice's intensity over a log-spaced grid, re-optimizing the attack
/// at each point, then golden-refines around the grid argmax. Errors if no
/// intensity yields a positive rate.
pub fn optimal_alice_intensity(
    cfg: &SweepConfig,
    length_km: f64,
    q: Probability,
) -> Result<AliceOptimum> {
    cfg.validate()?;
    let eval = |mu_a: f64| -> Option<(f64, InformationBits, Probability)> {
        let mut c = cfg.clone();
        c.protocol = cfg.protocol.with_mu_a(mu_a).ok()?;
        let opt = optimize_for_length(&c, length_km).ok()?;
        let rate = key_rate(opt.target_pconc, opt.info_eve, q).ok()?;
        Some((rate, opt.info_eve, opt.critical_qber))
    };

    let ln_lo = cfg.mua_min.ln();
    let ln_hi = cfg.mua_max.ln();
    let grid = linspace(ln_lo, ln_hi, cfg.mua_points);
    let mut best: Option<(f64, (f64, InformationBits, Probability))> = None;
    let mut best_idx = 0;
    for (i, &lx) in grid.iter().enumerate() {
        let mu = lx.exp();
        if let Some(out) = eval(mu) {
            if out.0 > 0.0 && best.as_ref().map(|(_, b)| out.0 > b.0).unwrap_or(true) {
                best = Some((mu, out));
                best_idx = i;
            }
        }
    }
    let (mut mu_best, mut out_best) = best.ok_or(Error::NoPositiveRate {
        min: cfg.mua_min,
        max: cfg.mua_max,
        length_km,
    })?;

    // Golden refinement in log-intensity between the neighbouring grid points.
    let lo = grid[best_idx.saturating_sub(1)];
    let hi = grid[(best_idx + 1).min(grid.len() - 1)];
    if hi - lo > 1e-12 {
        let mut slice = |lx: f64| eval(lx.exp()).map(|o| -o.0).unwrap_or(f64::INFINITY);
        let (lx, neg_rate) = golden_min(&mut slice, lo, hi, 1e-3);
        if -neg_rate > out_best.0 {
            if let Some(out) = eval(lx.exp()) {
                mu_best = lx.exp();
                out_best = out;
            }
        }
    }

    Ok(AliceOptimum {
        length_km,
        mu_a: mu_best,
        key_rate: out_best.0,
        info_eve: out_best.1,
        critical_qber: out_best.2,
    })
}

/// Runs [`optimize_for_length`] for every configured length in parallel,
/// then makes one ascending warm-start pass: each length also tries the
/// previous optimum's `(t, fp, p2)` re-solved at its own target, keeping
/// whichever is better. The pass is sequential and deterministic, so serial
/// and parallel executions produce identical results.
pub fn run_length_sweep(cfg: &SweepConfig) -> Result<Vec<(f64, Result<AttackOptimum>)>> {
    cfg.validate()?;
    let mut rows: Vec<(f64, Result<AttackOptimum>)> = cfg
        .lengths_km
        .par_iter()
        .map(|&l| (l, optimize_for_length(cfg, l)))
        .collect();

    for i in 1..rows.len() {
        let prev = match &rows[i - 1].1 {
            Ok(o) => o.params,
            Err(_) => continue,
        };
        let length_km = rows[i].0;
        let target = match target_conclusive(cfg, length_km) {
            Ok(t) => t,
            Err(_) => continue,
        };
        let p = &cfg.protocol;
        let tgt = target.value();
        let Some(seed) = evaluate(prev.t(), prev.fp(), prev.p2(), tgt, p) else {
            continue;
        };
        let free_eval = |t: f64, fp: f64, p2: f64| evaluate(t, fp, p2, tgt, p);
        let warm = refine(seed, cfg, &free_eval);
        let replace = match &rows[i].1 {
            Ok(cur) => better(&warm, &optimum_as_candidate(cur)),
            Err(_) => true,
        };
        if replace {
            if let Ok(new_opt) = build_optimum(warm, cfg, target, length_km) {
                rows[i].1 = Ok(new_opt);
            }
        }
    }
    Ok(rows)
}
