//! Exact positive rationals for delays, horizons and step sizes.
//!
//! Grid compatibility (`step = horizon / M = delay / m` for integers `M`, `m`)
//! is an exact arithmetic statement, so these quantities never pass through
//! floating point until a scheme actually runs.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rational(Ratio<i64>);

impl Rational {
    pub fn new(numer: i64, denom: i64) -> Result<Self> {
        if denom == 0 {
            return Err(Error::ParameterOutOfRange("zero denominator".into()));
        }
        Ok(Rational(Ratio::new(numer, denom)))
    }

    pub fn integer(n: i64) -> Self {
        Rational(Ratio::from_integer(n))
    }

    /// `2^{-k}`.
    pub fn dyadic(k: u32) -> Self {
        assert!(k < 62, "dyadic exponent {k} overflows i64");
        Rational(Ratio::new(1, 1i64 << k))
    }

    pub fn numer(&self) -> i64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> i64 {
        *self.0.denom()
    }

    pub fn to_f64(&self) -> f64 {
        self.numer() as f64 / self.denom() as f64
    }

    pub fn is_positive(&self) -> bool {
        self.numer() > 0
    }

    /// `self / step` when it is a positive integer, `None` otherwise.
    pub fn steps_of(&self, step: Rational) -> Option<usize> {
        if !step.is_positive() {
            return None;
        }
        let q = self.0 / step.0;
        if q.is_integer() && *q.numer() > 0 {
            usize::try_from(*q.numer()).ok()
        } else {
            None
        }
    }

    /// `2^j` such that `self = finer * 2^j`, if one exists.
    pub fn dyadic_ratio_to(&self, finer: Rational) -> Option<u32> {
        let n = self.steps_of(finer)?;
        if n.is_power_of_two() {
            Some(n.trailing_zeros())
        } else {
            None
        }
    }

    pub fn checked_mul_int(&self, k: i64) -> Option<Self> {
        self.numer()
            .checked_mul(k)
            .map(|n| Rational(Ratio::new(n, self.denom())))
    }
}

impl fmt::Display for Rational {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl FromStr for Rational {
    type Err = Error;

    /// Accepts `"p/q"`, integers, and decimal literals whose value is exactly
    /// dyadic (`"0.0625"` is accepted, `"0.3"` is not).
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = |why: &str| Error::ParameterOutOfRange(format!("cannot parse `{s}` as an exact rational: {why}"));
        if let Some((p, q)) = s.split_once('/') {
            let p: i64 = p.trim().parse().map_err(|_| bad("bad numerator"))?;
            let q: i64 = q.trim().parse().map_err(|_| bad("bad denominator"))?;
            return Rational::new(p, q).map_err(|_| bad("zero denominator"));
        }
        if let Some((int_part, frac_part)) = s.split_once('.') {
            let negative = int_part.starts_with('-');
            let int_digits = int_part.trim_start_matches(['-', '+']);
            if frac_part.is_empty() || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad("bad fractional digits"));
            }
            if frac_part.len() > 18 {
                return Err(bad("too many fractional digits"));
            }
            let int_val: i64 = if int_digits.is_empty() {
                0
            } else {
                int_digits.parse().map_err(|_| bad("bad integer part"))?
            };
            let frac_val: i64 = frac_part.parse().map_err(|_| bad("bad fractional digits"))?;
            let scale = 10i64.pow(frac_part.len() as u32);
            let numer = int_val
                .checked_mul(scale)
                .and_then(|v| v.checked_add(frac_val))
                .ok_or_else(|| bad("overflow"))?;
            let r = Ratio::new(if negative { -numer } else { numer }, scale);
            let den = *r.denom();
            if !(den as u64).is_power_of_two() {
                return Err(bad("decimal value is not exactly dyadic; write it as p/q"));
            }
            return Ok(Rational(r));
        }
        let n: i64 = s.parse().map_err(|_| bad("not a number"))?;
        Ok(Rational::integer(n))
    }
}

impl Serialize for Rational {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Rational {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
