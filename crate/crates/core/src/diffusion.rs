//! Minimal diffusions given by a scale function and a speed measure, and
//! their boundary and global classification.

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::ext::{ExtReal, Interval};
use crate::quad::{self, ShellRule, ShellVerdict};
use crate::scale::{ScaleFunction, VerdictSource};

const SHELL_QUAD_TOL: f64 = 1e-10;

/// Absolutely continuous speed measure `l(dx) = m(x) dx`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SpeedMeasure {
    pub density: Density,
}

impl SpeedMeasure {
    pub fn new(density: Density) -> Self {
        Self { density }
    }

    pub fn validate(&self) -> Result<()> {
        self.density.validate()?;
        if self.density.is_zero() {
            return Err(Error::Param("speed density must be strictly positive".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn density_at(&self, x: f64) -> f64 {
        self.density.eval(x)
    }

    /// `l((a, b))`.
    pub fn mass(&self, a: f64, b: f64) -> Result<f64> {
        self.density.mass(a, b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSpec {
    pub interval: Interval,
    pub scale: ScaleFunction,
    pub speed: SpeedMeasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryReport {
    pub endpoint: Endpoint,
    pub scale_limit: ExtReal,
    pub approachable: bool,
    pub approachable_finite_time: bool,
    pub verdict_source: VerdictSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GlobalProperties {
    pub irreducible: bool,
    pub recurrent: bool,
    pub transient: bool,
    pub conservative: bool,
}

impl DiffusionSpec {
    pub fn new(interval: Interval, scale: ScaleFunction, speed: SpeedMeasure) -> Result<Self> {
        let s = Self {
            interval,
            scale,
            speed,
        };
        s.validate()?;
        Ok(s)
    }

    /// Spec on the scale's natural domain.
    pub fn on_domain(scale: ScaleFunction, speed: SpeedMeasure) -> Result<Self> {
        Self::new(scale.domain(), scale, speed)
    }

    pub fn validate(&self) -> Result<()> {
        self.scale.validate()?;
        self.speed.validate()?;
        let (lo, hi) = self.interval.bounds();
        if !(lo < hi) {
            return Err(Error::Param(format!("empty interval ({lo}, {hi})")));
        }
        if !self.scale.domain().contains_interval(&self.interval) {
            return Err(Error::Domain {
                x: if lo < 0.0 { lo } else { hi },
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        Ok(())
    }

    pub fn check_point(&self, x: f64) -> Result<()> {
        if self.interval.contains(x) {
            Ok(())
        } else {
            let (lo, hi) = self.interval.bounds();
            Err(Error::Domain { x, lo, hi })
        }
    }

    pub fn endpoint(&self, e: Endpoint) -> f64 {
        match e {
            Endpoint::Lower => self.interval.lo.to_f64(),
            Endpoint::Upper => self.interval.hi.to_f64(),
        }
    }

    /// `p(e0+)` or `p(e1-)`, with its provenance.
    pub fn scale_limit(&self, e: Endpoint) -> Result<(ExtReal, VerdictSource)> {
        let x = self.endpoint(e);
        if x > 0.0 && x.is_finite() {
            return Ok((ExtReal::Finite(self.scale.eval(x)?), VerdictSource::Analytic));
        }
        let lim = match e {
            Endpoint::Lower => self.scale.lower_limit()?,
            Endpoint::Upper => self.scale.upper_limit()?,
        };
        Ok((lim.value, lim.source))
    }

    /// Reference point used when none is supplied.
    pub fn reference_point(&self) -> f64 {
        let (lo, hi) = self.interval.bounds();
        if lo < 1.0 && hi > 1.0 {
            1.0
        } else if hi.is_finite() {
            0.5 * (lo + hi)
        } else {
            2.0 * lo
        }
    }

    /// Whether the walk absorbs at this endpoint: approachable in finite time.
    pub fn absorbing(&self, e: Endpoint) -> Result<bool> {
        Ok(classify_endpoint(self, e, self.reference_point())?.approachable_finite_time)
    }
}

/// Closed-form finite-time verdict for catalogued scales with power-type speeds.
fn analytic_finite_time(spec: &DiffusionSpec, e: Endpoint) -> Option<bool> {
    let (_, k, rate) = spec.speed.density.params();
    match (e, &spec.scale) {
        // p(y) - p(0+) ~ y^alpha, so the integrand behaves like y^(alpha + k)
        (Endpoint::Lower, ScaleFunction::Power { alpha }) => Some(alpha + k > -1.0),
        // p(y) - p(0+) ~ const * y
        (Endpoint::Lower, ScaleFunction::Exp { .. } | ScaleFunction::Affine { .. }) => Some(k > -2.0),
        (Endpoint::Upper, ScaleFunction::NegPower { alpha }) => Some(if rate == 0.0 {
            k - alpha < -1.0
        } else {
            rate < 0.0
        }),
        _ => None,
    }
}

/// Remark-3 integral `int l((x, c)) dp(x)` toward `e`, summed over dyadic shells.
fn numeric_finite_time(spec: &DiffusionSpec, e: Endpoint, c: f64, limit: f64, rule: ShellRule) -> Result<bool> {
    let p = &spec.scale;
    let m = &spec.speed;
    let end = spec.endpoint(e);
    let integrand = |y: f64| {
        let gap = match e {
            Endpoint::Lower => p.eval_unchecked(y) - limit,
            Endpoint::Upper => limit - p.eval_unchecked(y),
        };
        gap.max(0.0) * m.density_at(y)
    };
    let shell = |k: usize| -> Result<f64> {
        let (lo, hi) = match e {
            Endpoint::Lower => {
                let w = c - end;
                (end + w * 0.5f64.powi(k as i32 + 1), end + w * 0.5f64.powi(k as i32))
            }
            Endpoint::Upper if end.is_infinite() => (c * 2f64.powi(k as i32), c * 2f64.powi(k as i32 + 1)),
            Endpoint::Upper => {
                let w = end - c;
                (end - w * 0.5f64.powi(k as i32), end - w * 0.5f64.powi(k as i32 + 1))
            }
        };
        if !(hi > lo) {
            return Ok(0.0);
        }
        let est = quad::integrate_estimate(integrand, lo, hi, 0.0, SHELL_QUAD_TOL, quad::MAX_SEGMENTS);
        Ok(est.value)
    };
    match quad::dyadic_shell_test(shell, rule)? {
        ShellVerdict::Convergent(_) => Ok(true),
        ShellVerdict::Divergent => Ok(false),
    }
}

fn endpoint_report(spec: &DiffusionSpec, e: Endpoint, c: f64, force_numeric: bool) -> Result<BoundaryReport> {
    spec.validate()?;
    spec.check_point(c)?;
    let (limit, limit_source) = spec.scale_limit(e)?;
    let approachable = limit.is_finite();
    let end = spec.endpoint(e);
    let interior = end > 0.0 && end.is_finite();
    let (finite_time, source) = if !approachable {
        (false, limit_source)
    } else if interior {
        (true, VerdictSource::Analytic)
    } else {
        match analytic_finite_time(spec, e).filter(|_| !force_numeric) {
            Some(v) => (v, VerdictSource::Analytic),
            None => {
                let lim = limit.finite().expect("approachable");
                (
                    numeric_finite_time(spec, e, c, lim, ShellRule::default())?,
                    VerdictSource::Numeric,
                )
            }
        }
    };
    let source = if limit_source == VerdictSource::Numeric {
        VerdictSource::Numeric
    } else {
        source
    };
    Ok(BoundaryReport {
        endpoint: e,
        scale_limit: limit,
        approachable,
        approachable_finite_time: finite_time,
        verdict_source: source,
    })
}

pub fn classify_endpoint(spec: &DiffusionSpec, endpoint: Endpoint, c: f64) -> Result<BoundaryReport> {
    endpoint_report(spec, endpoint, c, false)
}

/// Same as [`classify_endpoint`] but bypasses the closed-form shortcuts.
pub fn classify_endpoint_numeric(spec: &DiffusionSpec, endpoint: Endpoint, c: f64) -> Result<BoundaryReport> {
    endpoint_report(spec, endpoint, c, true)
}

pub fn classify_global(spec: &DiffusionSpec) -> Result<GlobalProperties> {
    let c = spec.reference_point();
    let lo = classify_endpoint(spec, Endpoint::Lower, c)?;
    let hi = classify_endpoint(spec, Endpoint::Upper, c)?;
    let transient = lo.approachable || hi.approachable;
    Ok(GlobalProperties {
        irreducible: true,
        recurrent: !transient,
        transient,
        conservative: !(lo.approachable_finite_time || hi.approachable_finite_time),
    })
}

/// Probability of hitting `b` before `a` from `x`.
pub fn hitting_probability(spec: &DiffusionSpec, x: f64, a: f64, b: f64) -> Result<f64> {
    spec.check_point(a)?;
    spec.check_point(b)?;
    if !(a < b) {
        return Err(Error::Domain { x: a, lo: a, hi: b });
    }
    if !(a <= x && x <= b) {
        return Err(Error::Domain { x, lo: a, hi: b });
    }
    if x == a {
        return Ok(0.0);
    }
    if x == b {
        return Ok(1.0);
    }
    let pa = spec.scale.eval(a)?;
    let pb = spec.scale.eval(b)?;
    let px = spec.scale.eval(x)?;
    Ok(((px - pa) / (pb - pa)).clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bessel(d: u32) -> DiffusionSpec {
        let scale = if d == 2 {
            ScaleFunction::Log
        } else {
            ScaleFunction::NegPower { alpha: d as f64 - 2.0 }
        };
        DiffusionSpec::on_domain(scale, SpeedMeasure::new(Density::power(1.0, d as f64 - 1.0))).unwrap()
    }

    fn example2() -> DiffusionSpec {
        DiffusionSpec::on_domain(ScaleFunction::Exp { gamma: 1.0 }, SpeedMeasure::new(Density::exp(2.0, -2.0))).unwrap()
    }

    #[test]
    fn bessel_two_unapproachable() {
        let r = classify_endpoint(&bessel(2), Endpoint::Lower, 1.0).unwrap();
        assert!(!r.approachable && !r.approachable_finite_time);
        let g = classify_global(&bessel(2)).unwrap();
        assert!(g.recurrent && g.conservative && !g.transient);
    }

    #[test]
    fn bessel_three_upper_numeric() {
        let s = bessel(3);
        for c in [1.0, 3.0] {
            let r = classify_endpoint_numeric(&s, Endpoint::Upper, c).unwrap();
            assert!(r.approachable);
            assert!(!r.approachable_finite_time);
            assert_eq!(r.verdict_source, VerdictSource::Numeric);
        }
        let g = classify_global(&s).unwrap();
        assert!(g.transient && g.conservative);
    }

    #[test]
    fn example2_regular_origin() {
        let s = example2();
        for c in [0.5, 2.0] {
            let r = classify_endpoint(&s, Endpoint::Lower, c).unwrap();
            assert!(r.approachable && r.approachable_finite_time);
            let n = classify_endpoint_numeric(&s, Endpoint::Lower, c).unwrap();
            assert!(n.approachable_finite_time);
        }
        let g = classify_global(&s).unwrap();
        assert!(g.transient && !g.conservative);
    }

    #[test]
    fn hitting_examples() {
        let h = hitting_probability(&bessel(3), 1.0, 0.5, 2.0).unwrap();
        assert!((h - 2.0 / 3.0).abs() < 1e-15);
        let e = std::f64::consts::E;
        let h = hitting_probability(&bessel(2), 1.0, 1.0 / e, e).unwrap();
        assert!((h - 0.5).abs() < 1e-15);
        assert_eq!(hitting_probability(&bessel(2), 0.5, 0.5, 2.0).unwrap(), 0.0);
        assert!(hitting_probability(&bessel(2), 3.0, 0.5, 2.0).is_err());
    }

    #[test]
    fn json_wire_form() {
        let s = serde_json::to_value(bessel(3)).unwrap();
        assert_eq!(s["interval"], serde_json::json!([0.0, "inf"]));
        assert_eq!(s["scale"]["kind"], "neg-power");
        assert_eq!(s["speed"]["density"], "power");
        let back: DiffusionSpec = serde_json::from_value(s).unwrap();
        assert_eq!(back, bessel(3));
    }
}
