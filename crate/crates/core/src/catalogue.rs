//! Named fixtures: `bessel(d)`, `example2(gamma)`, `brownian-skew(d)`,
//! `example2-skew(gamma)` and `svc-subspace(d, ratio, a, b)`.

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::diffusion::{DiffusionSpec, SpeedMeasure};
use crate::error::{Error, Result};
use crate::scale::{thin_scale, ScaleFunction};
use crate::selector::svc_selector;
use crate::skew::{AngularMeasure, SkewProductSpec};

pub const FIXTURE_NAMES: [&str; 5] = ["bessel", "example2", "brownian-skew", "example2-skew", "svc-subspace"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "spec", rename_all = "kebab-case")]
pub enum Fixture {
    Diffusion(DiffusionSpec),
    Skew(SkewProductSpec),
    Subspace {
        candidate: SkewProductSpec,
        base: SkewProductSpec,
    },
}

impl Fixture {
    /// The radial diffusion, or the candidate's radial part for a subspace pair.
    pub fn diffusion(&self) -> &DiffusionSpec {
        match self {
            Fixture::Diffusion(s) => s,
            Fixture::Skew(s) => &s.radial,
            Fixture::Subspace { candidate, .. } => &candidate.radial,
        }
    }

    pub fn skew(&self) -> Option<&SkewProductSpec> {
        match self {
            Fixture::Diffusion(_) => None,
            Fixture::Skew(s) => Some(s),
            Fixture::Subspace { candidate, .. } => Some(candidate),
        }
    }
}

/// Bessel process of dimension `d`: `p = log x` (`d = 2`) or `-x^(2-d)/(d-2)`, `l = x^(d-1) dx`.
pub fn bessel(d: usize) -> Result<DiffusionSpec> {
    if d < 2 {
        return Err(Error::Param(format!("bessel needs d >= 2, got {d}")));
    }
    let scale = if d == 2 {
        ScaleFunction::Log
    } else {
        ScaleFunction::NegPower { alpha: d as f64 - 2.0 }
    };
    DiffusionSpec::on_domain(scale, SpeedMeasure::new(Density::power(1.0, d as f64 - 1.0)))
}

/// Brownian motion with drift `-gamma`: `s = e^(2 gamma x)/(4 gamma^2)`, `l = 2 gamma e^(-2 gamma x) dx`.
pub fn example2(gamma: f64) -> Result<DiffusionSpec> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::Param(format!("gamma must be positive, got {gamma}")));
    }
    DiffusionSpec::on_domain(
        ScaleFunction::Exp { gamma },
        SpeedMeasure::new(Density::exp(2.0 * gamma, -2.0 * gamma)),
    )
}

/// `d`-dimensional Brownian motion as a skew product.
pub fn brownian_skew(d: usize) -> Result<SkewProductSpec> {
    SkewProductSpec::new(bessel(d)?, d, Density::power(1.0, -2.0))
}

/// Skew product of `example2(gamma)` with the normalized sphere in `R^3`.
pub fn example2_skew(gamma: f64) -> Result<SkewProductSpec> {
    let s = SkewProductSpec {
        radial: example2(gamma)?,
        d: 3,
        revuz_density: Density::power(1.0, -2.0),
        sphere_time_scale: 1.0,
        angular_measure: AngularMeasure::Normalized,
    };
    s.validate()?;
    Ok(s)
}

/// Brownian skew product with its radial scale thinned on `(a, b)`, paired with the base.
pub fn svc_subspace(d: usize, ratio: f64, a: f64, b: f64) -> Result<(SkewProductSpec, SkewProductSpec)> {
    let base = brownian_skew(d)?;
    let f = svc_selector(a, b, ratio)?;
    let mut candidate = base.clone();
    candidate.radial.scale = thin_scale(&base.radial.scale, &f)?;
    candidate.validate()?;
    Ok((candidate, base))
}

fn int_arg(name: &str, v: f64) -> Result<usize> {
    if v.fract() == 0.0 && v >= 0.0 && v < 1e6 {
        Ok(v as usize)
    } else {
        Err(Error::Param(format!("{name}: dimension must be a whole number, got {v}")))
    }
}

/// Looks up a fixture by name with positional parameters; missing ones take defaults.
pub fn catalogue_lookup(name: &str, params: &[f64]) -> Result<Fixture> {
    let arg = |i: usize, default: f64| params.get(i).copied().unwrap_or(default);
    let max_args = match name {
        "bessel" | "example2" | "brownian-skew" | "example2-skew" => 1,
        "svc-subspace" => 4,
        _ => return Err(Error::UnknownFixture(name.to_string())),
    };
    if params.len() > max_args {
        return Err(Error::Param(format!(
            "{name} takes at most {max_args} parameters, got {}",
            params.len()
        )));
    }
    Ok(match name {
        "bessel" => Fixture::Diffusion(bessel(int_arg(name, arg(0, 3.0))?)?),
        "example2" => Fixture::Diffusion(example2(arg(0, 1.0))?),
        "brownian-skew" => Fixture::Skew(brownian_skew(int_arg(name, arg(0, 3.0))?)?),
        "example2-skew" => Fixture::Skew(example2_skew(arg(0, 1.0))?),
        _ => {
            let (candidate, base) = svc_subspace(int_arg(name, arg(0, 2.0))?, arg(1, 0.5), arg(2, 1.0), arg(3, 2.0))?;
            Fixture::Subspace { candidate, base }
        }
    })
}

/// Parses `name`, `name(a, b, ..)` or `name(gamma=1)` and looks it up.
pub fn parse_fixture(text: &str) -> Result<Fixture> {
    let text = text.trim();
    let (name, params) = match text.find('(') {
        None => (text, Vec::new()),
        Some(i) => {
            let inner = text[i + 1..]
                .strip_suffix(')')
                .ok_or_else(|| Error::Param(format!("unbalanced parentheses in `{text}`")))?;
            let params = inner
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    let v = s.rsplit('=').next().unwrap_or(s).trim();
                    v.parse::<f64>()
                        .map_err(|_| Error::Param(format!("bad fixture parameter `{s}` in `{text}`")))
                })
                .collect::<Result<Vec<f64>>>()?;
            (text[..i].trim(), params)
        }
    };
    catalogue_lookup(name, &params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel2_entries() {
        let s = bessel(2).unwrap();
        assert_eq!(s.scale, ScaleFunction::Log);
        assert_eq!(s.speed.density_at(3.0), 3.0);
    }

    #[test]
    fn example2_entries() {
        let s = example2(1.0).unwrap();
        let e = 1f64.exp();
        assert!((s.scale.eval(1.0).unwrap() - e * e / 4.0).abs() < 1e-14);
        assert!((s.speed.density_at(1.0) - 2.0 / (e * e)).abs() < 1e-15);
    }

    #[test]
    fn brownian_skew_entries() {
        let s = brownian_skew(3).unwrap();
        assert_eq!(s.radial, bessel(3).unwrap());
        assert_eq!(s.d, 3);
        assert_eq!(s.sphere_time_scale, 1.0);
        assert_eq!(s.revuz_density.eval(2.0), 0.25);
    }

    #[test]
    fn parse_forms() {
        assert_eq!(parse_fixture("bessel(2)").unwrap(), Fixture::Diffusion(bessel(2).unwrap()));
        assert_eq!(parse_fixture("example2(gamma=1)").unwrap(), parse_fixture("example2").unwrap());
        assert!(matches!(parse_fixture("svc-subspace(2, 0.5, 1, 2)").unwrap(), Fixture::Subspace { .. }));
        assert!(matches!(parse_fixture("nope(1)"), Err(Error::UnknownFixture(_))));
        assert!(matches!(parse_fixture("bessel(2.5)"), Err(Error::Param(_))));
        assert!(matches!(parse_fixture("bessel(2"), Err(Error::Param(_))));
    }

    #[test]
    fn json_round_trip() {
        for name in ["bessel(2)", "bessel(3)", "example2(1)", "brownian-skew(2)", "example2-skew(1)", "svc-subspace(2,0.5,1,2)"] {
            let f = parse_fixture(name).unwrap();
            let text = serde_json::to_string(&f).unwrap();
            let back: Fixture = serde_json::from_str(&text).unwrap();
            assert_eq!(back, f, "{name}");
        }
    }
}
