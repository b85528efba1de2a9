//! Scalar primitives: binary entropy and its inverse, coherent-state overlap,
//! and the Holevo value of a binary symmetric coherent ensemble.
//!
//! Everything here is a pure function of its arguments; information is
//! measured in bits (base-2 logarithms throughout).

use serde::Serialize;

use crate::error::{Error, Result};

/// Iteration cap for the entropy-inverse bisection.
const BISECT_MAX_ITER: usize = 200;

/// Bracket width at which the entropy-inverse bisection stops. Well below
/// the 1e-12 absolute tolerance the inverse promises.
const BISECT_X_TOL: f64 = 1e-15;

/// A real number constrained to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const HALF: Probability = Probability(0.5);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&value) {
            return Err(Error::Domain {
                name: "probability",
                value,
                domain: "[0, 1]",
            });
        }
        Ok(Probability(value))
    }

    /// Accepts values that left `[0, 1]` by at most 1e-9 of floating-point
    /// drift and clamps them back; larger excursions are real errors.
    pub(crate) fn new_clamped(value: f64) -> Result<Self> {
        if value.is_nan() || !(-1e-9..=1.0 + 1e-9).contains(&value) {
            return Err(Error::Domain {
                name: "probability",
                value,
                domain: "[0, 1]",
            });
        }
        Ok(Probability(value.clamp(0.0, 1.0)))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// An information quantity in bits per position. Finite by construction.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct InformationBits(f64);

impl InformationBits {
    pub const ZERO: InformationBits = InformationBits(0.0);
    pub const ONE: InformationBits = InformationBits(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() {
            return Err(Error::Domain {
                name: "information",
                value,
                domain: "finite reals",
            });
        }
        Ok(InformationBits(value))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl From<InformationBits> for f64 {
    fn from(i: InformationBits) -> f64 {
        i.0
    }
}

/// Raw binary Shannon entropy, `-x log2 x - (1-x) log2(1-x)`, with the
/// explicit convention `0 log 0 = 0`. Assumes `x` already lies in `[0, 1]`.
#[inline]
pub(crate) fn h2(x: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&x));
    let mut out = 0.0;
    if x > 0.0 {
        out -= x * x.log2();
    }
    let y = 1.0 - x;
    if y > 0.0 {
        out -= y * y.log2();
    }
    out
}

/// Inverse of [`h2`] on the increasing branch `[0, 1/2]`. Assumes `h` in `[0, 1]`.
pub(crate) fn h2_inv(h: f64) -> f64 {
    debug_assert!((0.0..=1.0).contains(&h));
    if h <= 0.0 {
        return 0.0;
    }
    if h >= 1.0 {
        return 0.5;
    }
    let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
    for _ in 0..BISECT_MAX_ITER {
        if hi - lo <= BISECT_X_TOL {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if h2(mid) < h {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Binary Shannon entropy of a probability, in bits.
pub fn binary_entropy(x: Probability) -> InformationBits {
    InformationBits(h2(x.value()))
}

/// The unique `x` in `[0, 1/2]` with `binary_entropy(x) = h`, to absolute
/// tolerance 1e-12. Errors if `h` lies outside `[0, 1]`.
pub fn binary_entropy_inv(h: InformationBits) -> Result<Probability> {
    let hv = h.value();
    if !(0.0..=1.0).contains(&hv) {
        return Err(Error::Domain {
            name: "entropy",
            value: hv,
            domain: "[0, 1]",
        });
    }
    Ok(Probability(h2_inv(hv)))
}

/// Overlap `<gamma|-gamma> = exp(-2 mu)` of two opposite-phase coherent
/// states of intensity `mu`. Errors if `mu < 0`.
pub fn coherent_overlap(mu: f64) -> Result<f64> {
    if mu < 0.0 || mu.is_nan() {
        return Err(Error::Domain {
            name: "intensity",
            value: mu,
            domain: "[0, inf)",
        });
    }
    Ok((-2.0 * mu).exp())
}

/// Holevo value of a binary symmetric coherent ensemble with the given
/// state overlap: `h2((1 - overlap) / 2)`. Monotone decreasing in overlap.
pub fn holevo_binary(overlap: f64) -> Result<InformationBits> {
    if !(0.0..=1.0).contains(&overlap) {
        return Err(Error::Domain {
            name: "overlap",
            value: overlap,
            domain: "[0, 1]",
        });
    }
    Ok(InformationBits(h2(0.5 * (1.0 - overlap))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn entropy_endpoints_and_maximum() {
        assert_eq!(binary_entropy(Probability::HALF).value(), 1.0);
        assert_eq!(binary_entropy(Probability::ZERO).value(), 0.0);
        assert_eq!(binary_entropy(Probability::ONE).value(), 0.0);
    }

    #[test]
    fn entropy_quarter_point() {
        let h = binary_entropy(Probability::new(0.25).unwrap()).value();
        assert_abs_diff_eq!(h, 0.811278124459133, epsilon = 1e-14);
    }

    #[test]
    fn entropy_symmetric_on_grid() {
        for i in 0..=1000 {
            let x = i as f64 / 1000.0;
            assert_abs_diff_eq!(h2(x), h2(1.0 - x), epsilon = 1e-14);
        }
    }

    #[test]
    fn entropy_inverse_endpoints() {
        assert_eq!(
            binary_entropy_inv(InformationBits::ONE).unwrap().value(),
            0.5
        );
        assert_eq!(
            binary_entropy_inv(InformationBits::ZERO).unwrap().value(),
            0.0
        );
    }

    #[test]
    fn entropy_inverse_half_bit() {
        let x = binary_entropy_inv(InformationBits::new(0.5).unwrap())
            .unwrap()
            .value();
        assert_abs_diff_eq!(x, 0.110027864438360, epsilon = 1e-12);
    }

    #[test]
    fn entropy_inverse_rejects_out_of_range() {
        assert!(binary_entropy_inv(InformationBits::new(1.5).unwrap()).is_err());
        assert!(binary_entropy_inv(InformationBits::new(-0.1).unwrap()).is_err());
    }

    #[test]
    fn entropy_roundtrip_on_grid() {
        for i in 0..=500 {
            let x = 0.5 * i as f64 / 500.0;
            let h = h2(x);
            assert_abs_diff_eq!(h2_inv(h), x, epsilon = 1e-10);
        }
    }

    #[test]
    fn overlap_values() {
        assert_eq!(coherent_overlap(0.0).unwrap(), 1.0);
        assert_abs_diff_eq!(
            coherent_overlap(0.1).unwrap(),
            0.818730753077982,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(
            coherent_overlap(0.5).unwrap(),
            0.367879441171442,
            epsilon = 1e-15
        );
        assert!(coherent_overlap(-1e-12).is_err());
    }

    #[test]
    fn holevo_endpoints_and_midpoint() {
        assert_eq!(holevo_binary(0.0).unwrap().value(), 1.0);
        assert_eq!(holevo_binary(1.0).unwrap().value(), 0.0);
        assert_abs_diff_eq!(
            holevo_binary(0.5).unwrap().value(),
            0.811278124459133,
            epsilon = 1e-14
        );
        assert!(holevo_binary(1.1).is_err());
    }

    #[test]
    fn holevo_monotone_nonincreasing() {
        let mut prev = f64::INFINITY;
        for i in 0..=1000 {
            let ov = i as f64 / 1000.0;
            let chi = holevo_binary(ov).unwrap().value();
            assert!(chi <= prev + 1e-15, "not monotone at overlap {ov}");
            prev = chi;
        }
    }

    #[test]
    fn probability_constructor_bounds() {
        assert!(Probability::new(0.0).is_ok());
        assert!(Probability::new(1.0).is_ok());
        assert!(Probability::new(-1e-12).is_err());
        assert!(Probability::new(1.0 + 1e-12).is_err());
        assert!(Probability::new(f64::NAN).is_err());
        assert_eq!(Probability::new_clamped(-1e-12).unwrap().value(), 0.0);
        assert!(Probability::new_clamped(-1e-6).is_err());
    }

    proptest! {
        #[test]
        fn overlap_exponential_law(a in 0.0_f64..30.0, b in 0.0_f64..30.0) {
            let lhs = coherent_overlap(a).unwrap() * coherent_overlap(b).unwrap();
            let rhs = coherent_overlap(a + b).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-14);
        }

        #[test]
        fn entropy_inverse_is_left_inverse(x in 0.0_f64..=0.5) {
            let h = h2(x);
            prop_assert!((h2_inv(h) - x).abs() <= 1e-10);
        }
    }
}
