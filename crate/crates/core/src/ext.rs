//! Extended reals for interval endpoints and scale limits.
//!
//! Infinity is a first-class value and is serialized as the strings `"inf"`
//! and `"-inf"` rather than as a large float.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum ExtReal {
    NegInf,
    Finite(f64),
    PosInf,
}

impl ExtReal {
    pub fn from_f64(v: f64) -> Self {
        if v == f64::INFINITY {
            ExtReal::PosInf
        } else if v == f64::NEG_INFINITY {
            ExtReal::NegInf
        } else {
            ExtReal::Finite(v)
        }
    }

    pub fn to_f64(self) -> f64 {
        match self {
            ExtReal::NegInf => f64::NEG_INFINITY,
            ExtReal::Finite(v) => v,
            ExtReal::PosInf => f64::INFINITY,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, ExtReal::Finite(_))
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            ExtReal::Finite(v) => Some(v),
            _ => None,
        }
    }
}

impl From<f64> for ExtReal {
    fn from(v: f64) -> Self {
        ExtReal::from_f64(v)
    }
}

impl fmt::Display for ExtReal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExtReal::NegInf => write!(f, "-inf"),
            ExtReal::Finite(v) => write!(f, "{v}"),
            ExtReal::PosInf => write!(f, "inf"),
        }
    }
}

impl Serialize for ExtReal {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            ExtReal::NegInf => s.serialize_str("-inf"),
            ExtReal::Finite(v) => s.serialize_f64(*v),
            ExtReal::PosInf => s.serialize_str("inf"),
        }
    }
}

struct ExtRealVisitor;

impl<'de> Visitor<'de> for ExtRealVisitor {
    type Value = ExtReal;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("a number or one of \"inf\", \"-inf\"")
    }

    fn visit_f64<E: de::Error>(self, v: f64) -> Result<ExtReal, E> {
        Ok(ExtReal::from_f64(v))
    }

    fn visit_i64<E: de::Error>(self, v: i64) -> Result<ExtReal, E> {
        Ok(ExtReal::Finite(v as f64))
    }

    fn visit_u64<E: de::Error>(self, v: u64) -> Result<ExtReal, E> {
        Ok(ExtReal::Finite(v as f64))
    }

    fn visit_str<E: de::Error>(self, v: &str) -> Result<ExtReal, E> {
        match v {
            "inf" | "+inf" | "infinity" => Ok(ExtReal::PosInf),
            "-inf" | "-infinity" => Ok(ExtReal::NegInf),
            other => other
                .parse::<f64>()
                .map(ExtReal::from_f64)
                .map_err(|_| E::custom(format!("not an extended real: {other:?}"))),
        }
    }
}

impl<'de> Deserialize<'de> for ExtReal {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        d.deserialize_any(ExtRealVisitor)
    }
}

/// Open interval `(lo, hi)` with extended-real endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[ExtReal; 2]", into = "[ExtReal; 2]")]
pub struct Interval {
    pub lo: ExtReal,
    pub hi: ExtReal,
}

impl Interval {
    pub fn new(lo: impl Into<ExtReal>, hi: impl Into<ExtReal>) -> Self {
        Self {
            lo: lo.into(),
            hi: hi.into(),
        }
    }

    pub fn positive_half_line() -> Self {
        Self::new(0.0, f64::INFINITY)
    }

    pub fn contains(&self, x: f64) -> bool {
        x > self.lo.to_f64() && x < self.hi.to_f64()
    }

    pub fn contains_interval(&self, other: &Interval) -> bool {
        self.lo.to_f64() <= other.lo.to_f64() && other.hi.to_f64() <= self.hi.to_f64()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.lo.to_f64(), self.hi.to_f64())
    }
}

impl From<[ExtReal; 2]> for Interval {
    fn from(v: [ExtReal; 2]) -> Self {
        Interval { lo: v[0], hi: v[1] }
    }
}

impl From<Interval> for [ExtReal; 2] {
    fn from(i: Interval) -> Self {
        [i.lo, i.hi]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinity_is_a_string_on_the_wire() {
        let i = Interval::positive_half_line();
        let s = serde_json::to_string(&i).unwrap();
        assert_eq!(s, r#"[0.0,"inf"]"#);
        let back: Interval = serde_json::from_str(&s).unwrap();
        assert_eq!(back, i);
        let neg: ExtReal = serde_json::from_str(r#""-inf""#).unwrap();
        assert_eq!(neg, ExtReal::NegInf);
        let int: ExtReal = serde_json::from_str("3").unwrap();
        assert_eq!(int, ExtReal::Finite(3.0));
    }

    #[test]
    fn ordering_places_infinities_at_the_ends() {
        assert!(ExtReal::NegInf < ExtReal::Finite(-1e300));
        assert!(ExtReal::Finite(1e300) < ExtReal::PosInf);
    }
}
