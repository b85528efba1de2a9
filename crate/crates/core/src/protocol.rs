//! The legitimate DPS protocol: fiber attenuation, Bob's conclusive-outcome
//! probability for a clean train, and the intensity that maximizes it.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::Probability;

/// Largest supported block length; keeps click masks in a `u64` and the
/// binomial law within f64 range.
pub const MAX_BLOCK_LEN: usize = 64;

/// Protocol constants chosen by the legitimate users.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProtocolParams {
    n: u32,
    mu_a: f64,
}

impl ProtocolParams {
    /// `n` is the pulses-per-train block length (3 to 64); `mu_a` is
    /// Alice's per-pulse intensity (mean photon number), strictly positive.
    pub fn new(n: u32, mu_a: f64) -> Result<Self> {
        if n < 3 || n as usize > MAX_BLOCK_LEN {
            return Err(Error::Domain {
                name: "block length",
                value: n as f64,
                domain: "[3, 64]",
            });
        }
        if mu_a <= 0.0 || !mu_a.is_finite() {
            return Err(Error::Domain {
                name: "Alice intensity",
                value: mu_a,
                domain: "(0, inf)",
            });
        }
        Ok(ProtocolParams { n, mu_a })
    }

    #[inline]
    pub fn n(&self) -> u32 {
        self.n
    }

    #[inline]
    pub fn mu_a(&self) -> f64 {
        self.mu_a
    }

    /// Same block length with a different Alice intensity.
    pub fn with_mu_a(&self, mu_a: f64) -> Result<Self> {
        ProtocolParams::new(self.n, mu_a)
    }
}

/// Fiber channel: attenuation in dB/km and length in km.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ChannelParams {
    delta_db_per_km: f64,
    length_km: f64,
}

impl ChannelParams {
    pub fn new(delta_db_per_km: f64, length_km: f64) -> Result<Self> {
        if delta_db_per_km <= 0.0 || !delta_db_per_km.is_finite() {
            return Err(Error::Domain {
                name: "attenuation",
                value: delta_db_per_km,
                domain: "(0, inf)",
            });
        }
        if length_km < 0.0 || !length_km.is_finite() {
            return Err(Error::Domain {
                name: "channel length",
                value: length_km,
                domain: "[0, inf)",
            });
        }
        Ok(ChannelParams {
            delta_db_per_km,
            length_km,
        })
    }

    #[inline]
    pub fn delta_db_per_km(&self) -> f64 {
        self.delta_db_per_km
    }

    #[inline]
    pub fn length_km(&self) -> f64 {
        self.length_km
    }
}

/// Intensity reaching Bob through the fiber: `mu_A * 10^(-delta l / 10)`.
pub fn expected_bob_intensity(p: &ProtocolParams, c: &ChannelParams) -> f64 {
    p.mu_a() * 10f64.powf(-c.delta_db_per_km() * c.length_km() / 10.0)
}

/// Raw conclusive-outcome probability `(n-1) e^{-(n-1) mu} (1 - e^{-mu})`
/// for a clean train of per-pulse intensity `mu`. Unchecked hot-path form.
#[inline]
pub(crate) fn pconc(mu: f64, n: u32) -> f64 {
    debug_assert!(mu >= 0.0);
    let nm1 = (n - 1) as f64;
    // 1 - e^{-mu} via expm1 keeps full precision for small intensities.
    nm1 * (-nm1 * mu).exp() * (-(-mu).exp_m1())
}

/// Probability that Bob registers exactly one click in the `n - 1` central
/// slots and none on the four edge modes, for a clean train of intensity `mu`.
pub fn conclusive_prob(mu: f64, n: u32) -> Result<Probability> {
    if n < 3 {
        return Err(Error::Domain {
            name: "block length",
            value: n as f64,
            domain: "[3, inf)",
        });
    }
    if mu < 0.0 || mu.is_nan() {
        return Err(Error::Domain {
            name: "intensity",
            value: mu,
            domain: "[0, inf)",
        });
    }
    Probability::new_clamped(pconc(mu, n))
}

/// The central-slot factor of the conclusive probability,
/// `(n-1) e^{-(n-2) mu} (1 - e^{-mu})`: exactly one click among the
/// central slots with the edge modes ignored.
pub fn pconc_edge_free(mu: f64, n: u32) -> f64 {
    let nm1 = (n - 1) as f64;
    nm1 * (-((n - 2) as f64) * mu).exp() * (-(-mu).exp_m1())
}

/// The unique maximizer `ln(n / (n-1))` of [`conclusive_prob`] over intensity.
pub fn optimal_bob_intensity(n: u32) -> f64 {
    debug_assert!(n >= 2);
    (n as f64 / (n - 1) as f64).ln()
}

/// Inverts [`conclusive_prob`] on its increasing branch `[0, ln(n/(n-1))]`.
///
/// The smaller-intensity root is the physically relevant one: it maps an
/// achieved conclusive rate to the longest equivalent channel. Errors if
/// `target` exceeds the unimodal maximum.
pub fn conclusive_prob_inverse(target: Probability, n: u32) -> Result<f64> {
    if n < 3 {
        return Err(Error::Domain {
            name: "block length",
            value: n as f64,
            domain: "[3, inf)",
        });
    }
    let t = target.value();
    let mu_peak = optimal_bob_intensity(n);
    let max = pconc(mu_peak, n);
    if t > max * (1.0 + 1e-12) {
        return Err(Error::InfeasibleTarget { target: t, max });
    }
    if t >= max {
        return Ok(mu_peak);
    }
    if t == 0.0 {
        return Ok(0.0);
    }
    let (mut lo, mut hi) = (0.0_f64, mu_peak);
    // pconc is strictly increasing on [0, mu_peak]; 200 halvings take the
    // bracket far below the 1e-12 tolerance.
    for _ in 0..200 {
        if hi - lo <= 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if pconc(mid, n) < t {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn proto() -> ProtocolParams {
        ProtocolParams::new(10, 0.1).unwrap()
    }

    #[test]
    fn params_reject_invalid() {
        assert!(ProtocolParams::new(2, 0.1).is_err());
        assert!(ProtocolParams::new(10, 0.0).is_err());
        assert!(ChannelParams::new(0.0, 10.0).is_err());
        assert!(ChannelParams::new(0.2, -1.0).is_err());
    }

    #[test]
    fn attenuation_decades() {
        let p = proto();
        let at = |l| expected_bob_intensity(&p, &ChannelParams::new(0.2, l).unwrap());
        assert_eq!(at(0.0), 0.1);
        assert_abs_diff_eq!(at(50.0), 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(at(100.0), 0.001, epsilon = 1e-16);
    }

    #[test]
    fn conclusive_prob_values() {
        assert_eq!(conclusive_prob(0.0, 10).unwrap().value(), 0.0);
        assert_abs_diff_eq!(
            conclusive_prob(0.1, 10).unwrap().value(),
            0.348211967122411,
            epsilon = 1e-14
        );
        assert!(conclusive_prob(-0.1, 10).is_err());
        assert!(conclusive_prob(0.1, 2).is_err());
    }

    #[test]
    fn optimal_intensity_closed_form() {
        assert_abs_diff_eq!(
            optimal_bob_intensity(10),
            0.105360515657826,
            epsilon = 1e-14
        );
        assert_abs_diff_eq!(optimal_bob_intensity(3), 0.405465108108164, epsilon = 1e-14);
        // First-order expansion: ln(n/(n-1)) ~ 1/n for large n.
        let n = 10_000;
        assert_abs_diff_eq!(
            optimal_bob_intensity(n) * n as f64,
            1.0,
            epsilon = 1e-4
        );
    }

    #[test]
    fn optimal_intensity_is_argmax_on_grid() {
        for n in [3u32, 5, 10, 20] {
            let mu_star = optimal_bob_intensity(n);
            let p_star = pconc(mu_star, n);
            for i in 1..=400 {
                let mu = mu_star * 3.0 * i as f64 / 400.0;
                assert!(pconc(mu, n) <= p_star + 1e-15, "n={n} mu={mu}");
            }
        }
    }

    #[test]
    fn unimodal_increasing_then_decreasing() {
        let n = 10;
        let mu_star = optimal_bob_intensity(n);
        let mut prev = -1.0;
        for i in 0..=200 {
            let mu = mu_star * i as f64 / 200.0;
            let v = pconc(mu, n);
            assert!(v >= prev, "not increasing at mu={mu}");
            prev = v;
        }
        prev = f64::INFINITY;
        for i in 1..=200 {
            let mu = mu_star + (5.0 * mu_star - mu_star) * i as f64 / 200.0;
            let v = pconc(mu, n);
            assert!(v <= prev, "not decreasing at mu={mu}");
            prev = v;
        }
    }

    #[test]
    fn algebraic_identity_forms() {
        // (n-1) e^{-(n-1)mu} (1-e^{-mu}) = (n-1) e^{-n mu} (e^{mu}-1)
        // = (n-1) e^{-(n-2)mu} (1-e^{-mu}) * (e^{-mu/4})^4
        for n in [3u32, 10, 64] {
            for i in 0..=100 {
                let mu = 5.0 * i as f64 / 100.0;
                let a = pconc(mu, n);
                let nm1 = (n - 1) as f64;
                let b = nm1 * (-(n as f64) * mu).exp() * (mu.exp() - 1.0);
                let edge = (-mu / 4.0).exp().powi(4);
                let c = nm1 * (-((n - 2) as f64) * mu).exp() * (-(-mu).exp_m1()) * edge;
                let scale = a.abs().max(b.abs()).max(1e-300);
                assert!((a - b).abs() <= 1e-14 * scale.max(1.0), "mu={mu} n={n}");
                assert!((a - c).abs() <= 1e-14 * scale.max(1.0), "mu={mu} n={n}");
            }
        }
    }

    #[test]
    fn inverse_roundtrip_and_errors() {
        let n = 10;
        let p = conclusive_prob(0.05, n).unwrap();
        let mu = conclusive_prob_inverse(p, n).unwrap();
        assert_abs_diff_eq!(mu, 0.05, epsilon = 1e-12);

        assert_eq!(
            conclusive_prob_inverse(Probability::ZERO, n).unwrap(),
            0.0
        );

        let max = conclusive_prob(optimal_bob_intensity(n), n).unwrap();
        let above = Probability::new(max.value() * 1.01).unwrap();
        assert!(matches!(
            conclusive_prob_inverse(above, n),
            Err(Error::InfeasibleTarget { .. })
        ));
    }

    proptest! {
        #[test]
        fn inverse_is_left_inverse_on_increasing_branch(frac in 0.0_f64..=1.0) {
            let n = 10;
            let mu = frac * optimal_bob_intensity(n);
            let p = conclusive_prob(mu, n).unwrap();
            let back = conclusive_prob_inverse(p, n).unwrap();
            prop_assert!((back - mu).abs() <= 1e-10);
        }
    }
}
