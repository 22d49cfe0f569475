//! Points of the real projective line and the handful of arithmetic rules
//! the construction needs: `q/∞ = 0`, `q/0 = ∞` for `q ≠ 0`, `p + ∞ = ∞`.
//!
//! `∞` is a tagged variant rather than `f64::INFINITY` so that every branch
//! on it is explicit.

use std::fmt;
use std::str::FromStr;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rp1 {
    Finite(f64),
    Infinity,
}

impl Rp1 {
    /// Wraps a real. Non-finite floats are mapped to `Infinity`.
    pub fn from_real(x: f64) -> Self {
        if x.is_finite() {
            Rp1::Finite(x)
        } else {
            Rp1::Infinity
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, Rp1::Infinity)
    }

    pub fn finite(&self) -> Option<f64> {
        match *self {
            Rp1::Finite(x) => Some(x),
            Rp1::Infinity => None,
        }
    }

    /// Angle of the point on the circle ℝP¹ ≅ ℝ/πℤ, via `x ↦ atan(x)`,
    /// with `∞ ↦ π/2`.
    pub fn angle(&self) -> f64 {
        match *self {
            Rp1::Finite(x) => x.atan(),
            Rp1::Infinity => std::f64::consts::FRAC_PI_2,
        }
    }

    /// Chordal distance on ℝP¹: the angle difference modulo π, folded into
    /// `[0, π/2]`. `∞` is an ordinary point for this metric.
    pub fn chordal_distance(&self, other: &Rp1) -> f64 {
        let d = (self.angle() - other.angle()).rem_euclid(std::f64::consts::PI);
        d.min(std::f64::consts::PI - d)
    }

    /// `∞` lies in no bounded interval.
    pub fn in_closed_interval(&self, lo: f64, hi: f64) -> bool {
        match *self {
            Rp1::Finite(x) => lo <= x && x <= hi,
            Rp1::Infinity => false,
        }
    }

    /// `p + q` for real `q`; `∞ + q = ∞`.
    pub fn add_real(&self, q: f64) -> Rp1 {
        match *self {
            Rp1::Finite(x) => Rp1::Finite(x + q),
            Rp1::Infinity => Rp1::Infinity,
        }
    }
}

impl fmt::Display for Rp1 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Rp1::Finite(x) => write!(f, "{x}"),
            Rp1::Infinity => f.write_str("inf"),
        }
    }
}

impl FromStr for Rp1 {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == "inf" {
            return Ok(Rp1::Infinity);
        }
        match t.parse::<f64>() {
            Ok(x) if x.is_finite() => Ok(Rp1::Finite(x)),
            _ => Err(Error::config("", format!("expected a finite number or \"inf\", got {t:?}"))),
        }
    }
}

impl Serialize for Rp1 {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match *self {
            Rp1::Finite(x) => s.serialize_f64(x),
            Rp1::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Rp1 {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct Rp1Visitor;

        impl Visitor<'_> for Rp1Visitor {
            type Value = Rp1;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a finite number or the string \"inf\"")
            }

            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Rp1, E> {
                if v.is_finite() {
                    Ok(Rp1::Finite(v))
                } else {
                    Err(E::custom("non-finite number; use \"inf\""))
                }
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Rp1, E> {
                Ok(Rp1::Finite(v as f64))
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Rp1, E> {
                Ok(Rp1::Finite(v as f64))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Rp1, E> {
                if v == "inf" {
                    Ok(Rp1::Infinity)
                } else {
                    Err(E::custom(format!("expected \"inf\", got {v:?}")))
                }
            }
        }

        d.deserialize_any(Rp1Visitor)
    }
}

/// `q / p` with the ℝP¹ conventions. `0/0` is the one undefined case.
pub fn rp1_div(q: f64, p: Rp1) -> Result<Rp1> {
    match p {
        Rp1::Infinity => Ok(Rp1::Finite(0.0)),
        Rp1::Finite(x) if x == 0.0 => {
            if q == 0.0 {
                Err(Error::UndefinedOperation("0/0 in RP1"))
            } else {
                Ok(Rp1::Infinity)
            }
        }
        Rp1::Finite(x) => Ok(Rp1::Finite(q / x)),
    }
}

/// Conformal factor `(τ−γ)/(τ*−γ)` of the horizontal block; `1` when `γ = ∞`.
pub fn beta_factor(tau: f64, tau_star: f64, gamma: Rp1) -> Result<f64> {
    match gamma {
        Rp1::Infinity => Ok(1.0),
        Rp1::Finite(g) => {
            if g == tau || g == tau_star {
                return Err(Error::SingularFactor {
                    tau,
                    tau_star,
                    gamma: g,
                });
            }
            Ok((tau - g) / (tau_star - g))
        }
    }
}

/// `∂β/∂τ` and `∂β/∂γ` (the latter zero for `γ = ∞`).
pub fn beta_partials(tau: f64, tau_star: f64, gamma: Rp1) -> (f64, f64) {
    match gamma {
        Rp1::Infinity => (0.0, 0.0),
        Rp1::Finite(g) => {
            let d = tau_star - g;
            (1.0 / d, (tau - tau_star) / (d * d))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn division_conventions() {
        assert_eq!(rp1_div(5.0, Rp1::Infinity).unwrap(), Rp1::Finite(0.0));
        assert_eq!(rp1_div(3.0, Rp1::Finite(0.0)).unwrap(), Rp1::Infinity);
        assert_eq!(rp1_div(6.0, Rp1::Finite(2.0)).unwrap(), Rp1::Finite(3.0));
        assert!(matches!(
            rp1_div(0.0, Rp1::Finite(0.0)),
            Err(Error::UndefinedOperation(_))
        ));
    }

    #[test]
    fn beta_examples() {
        assert_eq!(beta_factor(0.5, 0.5, Rp1::Finite(3.0)).unwrap(), 1.0);
        assert_eq!(beta_factor(0.2, 0.5, Rp1::Infinity).unwrap(), 1.0);
        let b = beta_factor(0.0, 0.5, Rp1::Finite(3.0)).unwrap();
        assert!((b - 1.2).abs() < 1e-15);
        assert!(matches!(
            beta_factor(0.3, 0.5, Rp1::Finite(0.3)),
            Err(Error::SingularFactor { .. })
        ));
    }

    #[test]
    fn serde_literal_inf() {
        let v: Vec<Rp1> = serde_json::from_str(r#"[1.5, "inf", 2]"#).unwrap();
        assert_eq!(v, vec![Rp1::Finite(1.5), Rp1::Infinity, Rp1::Finite(2.0)]);
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"[1.5,"inf",2.0]"#);
        assert!(serde_json::from_str::<Rp1>(r#""infinity""#).is_err());
        assert_eq!("inf".parse::<Rp1>().unwrap(), Rp1::Infinity);
        assert!("nan".parse::<Rp1>().is_err());
    }

    #[test]
    fn chordal_distance_wraps_through_infinity() {
        let big = Rp1::Finite(1e12);
        let neg_big = Rp1::Finite(-1e12);
        assert!(big.chordal_distance(&Rp1::Infinity) < 1e-11);
        assert!(neg_big.chordal_distance(&Rp1::Infinity) < 1e-11);
        assert!(Rp1::Infinity.in_closed_interval(-1e300, 1e300) == false);
    }

    proptest! {
        #[test]
        fn div_is_an_involution(q in -1e3f64..1e3, p in -1e3f64..1e3) {
            prop_assume!(q.abs() > 1e-6 && p.abs() > 1e-6);
            let once = rp1_div(q, Rp1::Finite(p)).unwrap();
            let twice = rp1_div(q, once).unwrap();
            let back = twice.finite().unwrap();
            prop_assert!((back - p).abs() <= 1e-12 * p.abs().max(1.0));
        }

        #[test]
        fn div_by_infinity_round_trips(q in -1e3f64..1e3) {
            prop_assume!(q != 0.0);
            let zero = rp1_div(q, Rp1::Infinity).unwrap();
            prop_assert_eq!(rp1_div(q, zero).unwrap(), Rp1::Infinity);
        }

        #[test]
        fn beta_positive_off_gamma(t in 0.0f64..1.0, ts in 0.0f64..1.0, g in 1.01f64..50.0, below in any::<bool>()) {
            let gamma = if below { -g } else { g };
            let b = beta_factor(t, ts, Rp1::Finite(gamma)).unwrap();
            prop_assert!(b > 0.0);
            prop_assert!((beta_factor(ts, ts, Rp1::Finite(gamma)).unwrap() - 1.0).abs() < 1e-15);
        }
    }
}
