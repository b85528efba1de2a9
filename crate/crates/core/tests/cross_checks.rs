//! Cross-module checks built on independent re-implementations: the class
//! information bounds recomputed from scratch, the quotient-rule gradient
//! of the weighted objective tied to the two sides of the interior-optimum
//! equality, and the equivalent-length reporting path.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use dps_abs::attack::{
    eve_info_class_mid, eve_info_class_threshold, eve_info_class_top, resolve_schedule,
    t_lower_bound, AttackParams,
};
use dps_abs::math::{binary_entropy, Probability};
use dps_abs::optimizer::{optimize_for_length, OptimumCertificate, SweepConfig};
use dps_abs::protocol::{
    conclusive_prob_inverse, expected_bob_intensity, optimal_bob_intensity, ChannelParams,
    ProtocolParams,
};
use dps_abs::stationarity::{
    d_info_threshold_d_mu, d_info_top_d_mu, d_weight_threshold_d_mu, d_weight_top_d_mu,
    stationarity_residual,
};

fn proto() -> ProtocolParams {
    ProtocolParams::new(10, 0.1).unwrap()
}

fn h2v(x: f64) -> f64 {
    binary_entropy(Probability::new(x).unwrap()).value()
}

// Class bounds rewritten from scratch, used as the independent oracle.
fn thr_bound(n: usize, k: usize, t: f64, fp: f64, mu_a: f64, mu: f64) -> f64 {
    let a = fp * (-2.0 * (mu_a - mu)).exp();
    let b = (-2.0 * ((1.0 - t) * mu_a - mu)).exp();
    (k as f64 * h2v(0.5 * (1.0 - a.min(1.0))) + (n - k) as f64 * h2v(0.5 * (1.0 - b.min(1.0)))
        - 1.0)
        / (n as f64 - 1.0)
}

fn mid_bound(n: usize, k: usize, t: f64, fp: f64, mu_a: f64) -> f64 {
    let a = fp * (-2.0 * t * mu_a).exp();
    (k as f64 * h2v(0.5 * (1.0 - a.min(1.0))) - 1.0) / (n as f64 - 1.0)
}

fn top_bound(n: usize, fp: f64, mu_a: f64, mu: f64) -> f64 {
    let a = fp * (-2.0 * (mu_a - mu)).exp();
    (n as f64 * h2v(0.5 * (1.0 - a.min(1.0))) - 1.0) / (n as f64 - 1.0)
}

fn sample_attack(rng: &mut ChaCha8Rng, p: &ProtocolParams) -> AttackParams {
    let t = rng.gen_range(t_lower_bound(p)..=1.0);
    let fp = if rng.gen_bool(0.1) {
        0.0
    } else {
        (10.0_f64).powf(rng.gen_range(-4.0..=0.0))
    };
    let p1 = rng.gen_range(0.0..=p.n() as f64);
    let p2 = rng.gen_range(0.0..=1.0);
    AttackParams::new(t, fp, p1, p2, p).unwrap()
}

#[test]
fn class_bounds_match_independent_reimplementation() {
    let p = proto();
    let n = 10usize;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..200 {
        let a = sample_attack(&mut rng, &p);
        let r = resolve_schedule(&a, &p);
        let k = r.threshold;

        let expect_thr = thr_bound(n, k, a.t(), a.fp(), 0.1, r.mu_threshold()).max(0.0);
        let got_thr = eve_info_class_threshold(&a, &r, &p).value();
        assert!((expect_thr - got_thr).abs() < 1e-13);

        for kk in (k + 1).max(1)..n {
            let expect_mid = mid_bound(n, kk, a.t(), a.fp(), 0.1).max(0.0);
            let got_mid = eve_info_class_mid(kk, &a, &p).unwrap().value();
            assert!((expect_mid - got_mid).abs() < 1e-13);
        }

        let expect_top = top_bound(n, a.fp(), 0.1, r.mu_top()).max(0.0);
        let got_top = eve_info_class_top(&a, &r, &p).value();
        assert!((expect_top - got_top).abs() < 1e-13);
    }
}

/// Unclamped weighted objective assembled from scratch, as a function of
/// the attack parameters.
fn total_unclamped(a: &AttackParams, p: &ProtocolParams) -> f64 {
    let n = p.n() as usize;
    let r = resolve_schedule(a, p);
    let mut num = 0.0;
    let mut den = 0.0;
    for k in r.threshold..=n {
        let z = r.weights[k];
        let info = if k == r.threshold {
            thr_bound(n, k, a.t(), a.fp(), p.mu_a(), r.mu_threshold())
        } else if k < n {
            mid_bound(n, k, a.t(), a.fp(), p.mu_a())
        } else {
            top_bound(n, a.fp(), p.mu_a(), r.mu_top())
        };
        num += z * info;
        den += z;
    }
    num / den
}

fn mu_upper_top(fp: f64, p: &ProtocolParams) -> f64 {
    let mu_tilde = optimal_bob_intensity(p.n());
    if fp == 0.0 {
        mu_tilde
    } else {
        (p.mu_a() - 0.5 * fp.ln()).min(mu_tilde)
    }
}

/// Attack with the two free intensities set directly.
fn attack_from_intensities(
    t: f64,
    fp: f64,
    k: usize,
    mu_k: f64,
    mu_n: f64,
    p: &ProtocolParams,
) -> AttackParams {
    let forwarded = (1.0 - t) * p.mu_a();
    let p1 = k as f64 + 1.0 - mu_k / forwarded;
    let p2 = (mu_n - forwarded) / (mu_upper_top(fp, p) - forwarded);
    AttackParams::new(t, fp, p1, p2, p).unwrap()
}

#[test]
fn quotient_rule_gradient_matches_equality_sides() {
    // d(total)/d(mu_K) = Z_K' (lhs - total) / sum(Z), and the analogous
    // relation for mu_N: verified against central finite differences of the
    // from-scratch objective.
    let p = proto();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut tested = 0;
    while tested < 50 {
        let t = rng.gen_range(0.1..0.95);
        let fp = rng.gen_range(0.05..0.95);
        let k = rng.gen_range(1..9usize);
        let forwarded = (1.0 - t) * 0.1;
        let mu_k = rng.gen_range(0.15..0.85) * forwarded;
        let upper = mu_upper_top(fp, &p);
        let mu_n = forwarded + rng.gen_range(0.15..0.85) * (upper - forwarded);
        let a = attack_from_intensities(t, fp, k, mu_k, mu_n, &p);
        let r = resolve_schedule(&a, &p);
        if r.threshold != k {
            continue;
        }
        let Ok(rep) = stationarity_residual(&a, &p) else {
            continue;
        };
        tested += 1;

        let total: f64 = r.weights.iter().sum();
        let i_tot = total_unclamped(&a, &p);
        let dzk = d_weight_threshold_d_mu(&r, &p);
        let dzn = d_weight_top_d_mu(&r, &p);
        let grad_k_alg = dzk * (rep.lhs - i_tot) / total;
        let grad_n_alg = dzn * (rep.rhs - i_tot) / total;

        let h = 1e-5;
        let fd_k = {
            let plus = total_unclamped(&attack_from_intensities(t, fp, k, mu_k + h, mu_n, &p), &p);
            let minus = total_unclamped(&attack_from_intensities(t, fp, k, mu_k - h, mu_n, &p), &p);
            (plus - minus) / (2.0 * h)
        };
        let fd_n = {
            let plus = total_unclamped(&attack_from_intensities(t, fp, k, mu_k, mu_n + h, &p), &p);
            let minus = total_unclamped(&attack_from_intensities(t, fp, k, mu_k, mu_n - h, &p), &p);
            (plus - minus) / (2.0 * h)
        };
        let scale_k = grad_k_alg.abs().max(fd_k.abs()).max(1e-4);
        let scale_n = grad_n_alg.abs().max(fd_n.abs()).max(1e-4);
        assert!(
            (grad_k_alg - fd_k).abs() / scale_k < 1e-4,
            "grad_K mismatch: alg {grad_k_alg} vs fd {fd_k} (t={t}, fp={fp}, k={k})"
        );
        assert!(
            (grad_n_alg - fd_n).abs() / scale_n < 1e-4,
            "grad_N mismatch: alg {grad_n_alg} vs fd {fd_n} (t={t}, fp={fp}, k={k})"
        );
    }
}

#[test]
fn residual_vanishes_at_jointly_stationary_points() {
    // Alternate 1D solves of d(total)/d(mu_K) = 0 and d(total)/d(mu_N) = 0;
    // where both components vanish, the two equality sides coincide.
    let p = proto();
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut converged = 0;
    for _ in 0..60 {
        let t = rng.gen_range(0.3..0.95);
        let fp = rng.gen_range(0.1..0.9);
        let k = rng.gen_range(3..9usize);
        let forwarded = (1.0 - t) * 0.1;
        let upper = mu_upper_top(fp, &p);

        let grad = |mu_k: f64, mu_n: f64, which: usize| -> Option<f64> {
            let a = attack_from_intensities(t, fp, k, mu_k, mu_n, &p);
            let r = resolve_schedule(&a, &p);
            if r.threshold != k {
                return None;
            }
            let total: f64 = r.weights.iter().sum();
            let i_tot = total_unclamped(&a, &p);
            Some(if which == 0 {
                let dik = d_info_threshold_d_mu(&a, &r, &p).ok()?;
                let dzk = d_weight_threshold_d_mu(&r, &p);
                let i_k = thr_bound(10, k, t, fp, 0.1, mu_k);
                (dzk * i_k + r.weights[k] * dik - i_tot * dzk) / total
            } else {
                let din = d_info_top_d_mu(&a, &r, &p).ok()?;
                let dzn = d_weight_top_d_mu(&r, &p);
                let i_n = top_bound(10, fp, 0.1, mu_n);
                (dzn * i_n + r.weights[10] * din - i_tot * dzn) / total
            })
        };

        // 1D sign-change bisection for one gradient component.
        let solve = |which: usize, other: f64, lo: f64, hi: f64| -> Option<f64> {
            let eval = |x: f64| {
                if which == 0 {
                    grad(x, other, 0)
                } else {
                    grad(other, x, 1)
                }
            };
            let m = 32;
            let mut bracket = None;
            let mut prev: Option<(f64, f64)> = None;
            for i in 0..=m {
                let x = lo + (hi - lo) * (0.02 + 0.96 * i as f64 / m as f64);
                let g = eval(x)?;
                if let Some((px, pg)) = prev {
                    if pg.signum() != g.signum() {
                        bracket = Some((px, x));
                        break;
                    }
                }
                prev = Some((x, g));
            }
            let (mut a, mut b) = bracket?;
            let ga = eval(a)?;
            for _ in 0..60 {
                let mid = 0.5 * (a + b);
                let gm = eval(mid)?;
                if gm.signum() == ga.signum() {
                    a = mid;
                } else {
                    b = mid;
                }
            }
            Some(0.5 * (a + b))
        };

        let mut mu_k = 0.5 * forwarded;
        let mut mu_n = 0.5 * (forwarded + upper);
        let mut ok = true;
        for _ in 0..20 {
            match solve(0, mu_n, 0.0, forwarded) {
                Some(x) => mu_k = x,
                None => {
                    ok = false;
                    break;
                }
            }
            match solve(1, mu_k, forwarded, upper) {
                Some(x) => mu_n = x,
                None => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            continue;
        }
        let (Some(gk), Some(gn)) = (grad(mu_k, mu_n, 0), grad(mu_k, mu_n, 1)) else {
            continue;
        };
        if gk.abs() > 1e-7 || gn.abs() > 1e-7 {
            continue;
        }
        let a = attack_from_intensities(t, fp, k, mu_k, mu_n, &p);
        // Vanishing class mass makes the gradient trivially small without
        // the point being stationary; such draws carry no information.
        let r = resolve_schedule(&a, &p);
        if d_weight_threshold_d_mu(&r, &p).abs() < 1e-9
            || d_weight_top_d_mu(&r, &p).abs() < 1e-9
        {
            continue;
        }
        let rep = stationarity_residual(&a, &p).expect("interior stationary point");
        assert!(
            rep.residual.abs() < 1e-4 * rep.lhs.abs().max(1.0),
            "residual {} at joint stationary point (t={t}, fp={fp}, k={k})",
            rep.residual
        );
        converged += 1;
    }
    assert!(converged >= 5, "only {converged} joint solves converged");
}

#[test]
fn interior_optimum_has_vanishing_full_gradient() {
    let cfg = SweepConfig {
        lengths_km: vec![120.0],
        t_points: 9,
        fp_points: 9,
        p2_points: 9,
        ..SweepConfig::default()
    };
    let opt = optimize_for_length(&cfg, 120.0).unwrap();
    let OptimumCertificate::Interior(rep) = &opt.certificate else {
        panic!("expected an interior optimum at 120 km");
    };
    // Constrained stationarity: the two equality sides coincide.
    assert!(rep.residual.abs() < 1e-4 * rep.lhs.abs().max(1.0));
}

#[test]
fn achieved_rate_maps_back_to_equivalent_length() {
    // The inverse of the conclusive probability reports the equivalent
    // channel: feeding it the no-attack target at length l recovers the
    // expected Bob intensity, hence l itself.
    let p = proto();
    for l in [0.0, 40.0, 120.0, 200.0] {
        let ch = ChannelParams::new(0.2, l).unwrap();
        let mu_b = expected_bob_intensity(&p, &ch);
        let target = conclusive_prob_inverse(
            dps_abs::protocol::conclusive_prob(mu_b, 10).unwrap(),
            10,
        )
        .unwrap();
        assert!((target - mu_b).abs() < 1e-10, "l={l}");
        let back_l = -10.0 * (target / 0.1).log10() / 0.2;
        assert!((back_l - l).abs() < 1e-6, "l={l} back={back_l}");
    }
}
