//! Catalogued positive densities `coef * x^power * exp(rate * x)` on `(0, inf)`.
//!
//! Speed measures, Revuz densities, radial profiles and integrated scale
//! densities are all drawn from this family; it is closed under products,
//! reciprocals and positive scalings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

const QUAD_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "density", content = "params", rename_all = "kebab-case")]
pub enum Density {
    Zero,
    Constant { value: f64 },
    Power { coef: f64, exponent: f64 },
    Exp { coef: f64, rate: f64 },
    PowerExp { coef: f64, power: f64, rate: f64 },
}

impl Density {
    pub fn constant(value: f64) -> Self {
        Density::Constant { value }
    }

    pub fn power(coef: f64, exponent: f64) -> Self {
        Density::Power { coef, exponent }
    }

    pub fn exp(coef: f64, rate: f64) -> Self {
        Density::Exp { coef, rate }
    }

    /// `(coef, power, rate)`.
    pub fn params(&self) -> (f64, f64, f64) {
        match *self {
            Density::Zero => (0.0, 0.0, 0.0),
            Density::Constant { value } => (value, 0.0, 0.0),
            Density::Power { coef, exponent } => (coef, exponent, 0.0),
            Density::Exp { coef, rate } => (coef, 0.0, rate),
            Density::PowerExp { coef, power, rate } => (coef, power, rate),
        }
    }

    /// Canonical constructor from `(coef, power, rate)`, picking the simplest variant.
    pub fn from_params(coef: f64, power: f64, rate: f64) -> Self {
        if coef == 0.0 {
            Density::Zero
        } else if power == 0.0 && rate == 0.0 {
            Density::Constant { value: coef }
        } else if rate == 0.0 {
            Density::Power {
                coef,
                exponent: power,
            }
        } else if power == 0.0 {
            Density::Exp { coef, rate }
        } else {
            Density::PowerExp { coef, power, rate }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (c, k, r) = self.params();
        if !(c.is_finite() && k.is_finite() && r.is_finite()) {
            return Err(Error::Param(format!("non-finite density parameters {self:?}")));
        }
        if c < 0.0 {
            return Err(Error::Param(format!("negative density coefficient {c}")));
        }
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.params().0 == 0.0
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Density::Zero => 0.0,
            Density::Constant { value } => value,
            Density::Power { coef, exponent } => coef * x.powf(exponent),
            Density::Exp { coef, rate } => coef * (rate * x).exp(),
            Density::PowerExp { coef, power, rate } => coef * x.powf(power) * (rate * x).exp(),
        }
    }

    pub fn mul(&self, other: &Density) -> Density {
        let (c1, k1, r1) = self.params();
        let (c2, k2, r2) = other.params();
        Density::from_params(c1 * c2, k1 + k2, r1 + r2)
    }

    pub fn scaled(&self, factor: f64) -> Density {
        let (c, k, r) = self.params();
        Density::from_params(c * factor, k, r)
    }

    pub fn reciprocal(&self) -> Result<Density> {
        let (c, k, r) = self.params();
        if c == 0.0 {
            return Err(Error::Param("reciprocal of the zero density".into()));
        }
        Ok(Density::from_params(1.0 / c, -k, -r))
    }

    /// Whether `int_0^c density` is finite for `c > 0`.
    pub fn finite_near_zero(&self) -> bool {
        let (c, k, _) = self.params();
        c == 0.0 || k > -1.0
    }

    /// Whether `int_c^inf density` is finite.
    pub fn finite_near_infinity(&self) -> bool {
        let (c, k, r) = self.params();
        c == 0.0 || r < 0.0 || (r == 0.0 && k < -1.0)
    }

    /// `int_a^b density(x) dx` for `0 <= a <= b <= inf`; may be `+inf`.
    pub fn mass(&self, a: f64, b: f64) -> Result<f64> {
        if b < a {
            return Ok(-self.mass(b, a)?);
        }
        if a == b {
            return Ok(0.0);
        }
        let (c, k, r) = self.params();
        if c == 0.0 {
            return Ok(0.0);
        }
        if a == 0.0 && !self.finite_near_zero() {
            return Ok(f64::INFINITY);
        }
        if b == f64::INFINITY && !self.finite_near_infinity() {
            return Ok(f64::INFINITY);
        }
        if r == 0.0 {
            let v = if k == -1.0 {
                (b / a).ln()
            } else {
                let e = k + 1.0;
                b.powf(e) - a.powf(e)
            };
            return Ok(if k == -1.0 { c * v } else { c * v / (k + 1.0) });
        }
        if k == 0.0 {
            return Ok(c * ((r * b).exp() - (r * a).exp()) / r);
        }
        // General case: split at 1 and integrate each piece numerically.
        let split = if a < 1.0 && b > 1.0 { 1.0 } else { a };
        let mut total = 0.0;
        if split > a {
            total += self.mass(a, split)?;
        }
        let (lo, hi) = (split, b);
        if lo == 0.0 {
            // x = u^(1/(k+1)) removes the endpoint singularity.
            let e = k + 1.0;
            let upper = hi.powf(e);
            let v = quad::integrate(|u| (r * u.powf(1.0 / e)).exp(), 0.0, upper, QUAD_TOL)?;
            total += c * v / e;
        } else if hi == f64::INFINITY {
            total += quad::integrate_to_infinity(|x| self.eval(x), lo, QUAD_TOL)?;
        } else {
            total += quad::integrate(|x| self.eval(x), lo, hi, QUAD_TOL)?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_masses() {
        let l = Density::power(1.0, 2.0);
        assert!((l.mass(1.0, 2.0).unwrap() - 7.0 / 3.0).abs() < 1e-14);
        assert!(l.mass(1.0, f64::INFINITY).unwrap().is_infinite());
        let e = Density::exp(2.0, -2.0);
        assert!((e.mass(0.0, f64::INFINITY).unwrap() - 1.0).abs() < 1e-14);
        let inv = Density::power(1.0, -1.0);
        assert!((inv.mass(1.0, std::f64::consts::E).unwrap() - 1.0).abs() < 1e-14);
        assert!(inv.mass(0.0, 1.0).unwrap().is_infinite());
    }

    #[test]
    fn general_mass_matches_series() {
        // int_0^1 x^{-1/2} e^{x} dx = sum_n 1/(n! (n + 1/2))
        let d = Density::PowerExp {
            coef: 1.0,
            power: -0.5,
            rate: 1.0,
        };
        let mut series = 0.0;
        let mut fact = 1.0;
        for n in 0..30 {
            if n > 0 {
                fact *= n as f64;
            }
            series += 1.0 / (fact * (n as f64 + 0.5));
        }
        assert!((d.mass(0.0, 1.0).unwrap() - series).abs() < 1e-10);
        // int_1^inf x e^{-x} dx = 2/e
        let d = Density::PowerExp {
            coef: 1.0,
            power: 1.0,
            rate: -1.0,
        };
        assert!((d.mass(1.0, f64::INFINITY).unwrap() - 2.0 / std::f64::consts::E).abs() < 1e-9);
    }

    #[test]
    fn algebra() {
        let m = Density::power(1.0, 2.0);
        let f = Density::power(1.0, -2.0);
        assert_eq!(m.mul(&f), Density::constant(1.0));
        assert_eq!(m.reciprocal().unwrap(), Density::power(1.0, -2.0));
        assert_eq!(
            Density::exp(2.0, -2.0).mul(&Density::power(3.0, 1.0)),
            Density::PowerExp {
                coef: 6.0,
                power: 1.0,
                rate: -2.0
            }
        );
    }

    #[test]
    fn json_shape() {
        let s = serde_json::to_string(&Density::power(1.0, 2.0)).unwrap();
        assert_eq!(s, r#"{"density":"power","params":{"coef":1.0,"exponent":2.0}}"#);
    }
}
