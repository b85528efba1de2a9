//! Samplers and reusable check helpers shared by the validate command and
//! the acceptance suite.

use rand::Rng;

use dps_abs::attack::{
    bob_conclusive_under_attack, resolve_schedule, t_lower_bound, AttackParams,
};
use dps_abs::protocol::ProtocolParams;

/// A random attack satisfying every parameter invariant; the filtering
/// parameter is the discrimination flag with probability 0.1, otherwise
/// log-uniform in `[1e-4, 1]`.
pub fn sample_valid_attack<R: Rng>(rng: &mut R, p: &ProtocolParams) -> AttackParams {
    let t_lo = t_lower_bound(p);
    let t = rng.gen_range(t_lo..=1.0);
    let fp = if rng.gen_bool(0.1) {
        0.0
    } else {
        (10.0_f64).powf(rng.gen_range(-4.0..=0.0))
    };
    let p1 = rng.gen_range(0.0..=p.n() as f64);
    let p2 = rng.gen_range(0.0..=1.0);
    AttackParams::new(t, fp, p1, p2, p).expect("sampled within invariants")
}

/// A random valid attack whose conclusive probability is at least `floor`,
/// so Monte-Carlo estimators see enough events. Resamples deterministically.
pub fn sample_detectable_attack<R: Rng>(
    rng: &mut R,
    p: &ProtocolParams,
    floor: f64,
) -> AttackParams {
    loop {
        let a = sample_valid_attack(rng, p);
        let r = resolve_schedule(&a, p);
        if bob_conclusive_under_attack(&r).value() >= floor {
            return a;
        }
    }
}

/// A random attack strictly interior in both free intensities, with margins
/// wide enough for the 1e-6 finite-difference step: the fractional part of
/// `p1` lies in [0.1, 0.9], `p2` in [0.1, 0.9], `fp` in [0.05, 0.95], and
/// `t` keeps 2% of its interval from both ends. Draws whose Z-weight
/// derivatives are nearly degenerate are rejected.
pub fn sample_interior_attack<R: Rng>(rng: &mut R, p: &ProtocolParams) -> AttackParams {
    use dps_abs::stationarity::stationarity_residual;
    let t_lo = t_lower_bound(p);
    let span = 1.0 - t_lo;
    loop {
        let t = rng.gen_range(t_lo + 0.02 * span..=1.0 - 0.02 * span);
        let fp = rng.gen_range(0.05..=0.95);
        let k = rng.gen_range(0..p.n()) as f64;
        let p1 = (k + rng.gen_range(0.1..=0.9)).min(p.n() as f64);
        let p2 = rng.gen_range(0.1..=0.9);
        let a = AttackParams::new(t, fp, p1, p2, p).expect("sampled within invariants");
        if stationarity_residual(&a, p).is_ok() {
            return a;
        }
    }
}
