//! Rotationally invariant skew products `[r, theta, mu]` on `(0, inf) x S^{d-1}`:
//! Dirichlet energy on tensor test functions, radial data from a density
//! `rho_hat(|x|)`, and the regular-subspace criterion.

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::diffusion::{classify_global, DiffusionSpec, GlobalProperties, SpeedMeasure};
use crate::error::{Error, Result};
use crate::quad;
use crate::scale::ScaleFunction;

const ENERGY_TOL: f64 = 1e-12;
const SPEED_REL_TOL: f64 = 1e-8;

/// Surface area of `S^{d-1}`.
pub fn sphere_area(d: usize) -> f64 {
    use std::f64::consts::PI;
    match d {
        0 => 0.0,
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 2.0 * PI / (d as f64 - 2.0) * sphere_area(d - 2),
    }
}

/// Reference measure on the sphere.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AngularMeasure {
    /// Surface measure `sigma`.
    #[default]
    Surface,
    /// `sigma / |S^{d-1}|`.
    Normalized,
}

fn default_time_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkewProductSpec {
    pub radial: DiffusionSpec,
    pub d: usize,
    /// `f = d mu / d l`.
    pub revuz_density: Density,
    #[serde(default = "default_time_scale")]
    pub sphere_time_scale: f64,
    #[serde(default)]
    pub angular_measure: AngularMeasure,
}

impl SkewProductSpec {
    pub fn new(radial: DiffusionSpec, d: usize, revuz_density: Density) -> Result<Self> {
        let s = Self {
            radial,
            d,
            revuz_density,
            sphere_time_scale: 1.0,
            angular_measure: AngularMeasure::Surface,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        self.radial.validate()?;
        if self.d < 2 {
            return Err(Error::Param(format!("sphere dimension needs d >= 2, got {}", self.d)));
        }
        self.revuz_density.validate()?;
        if !(self.sphere_time_scale > 0.0 && self.sphere_time_scale.is_finite()) {
            return Err(Error::Param(format!(
                "sphere_time_scale must be positive, got {}",
                self.sphere_time_scale
            )));
        }
        // f l must be finite on compacts; the catalogue is continuous on (0, inf)
        let mu = self.revuz_density.mul(&self.radial.speed.density);
        let (lo, hi) = self.radial.interval.bounds();
        let a = if lo > 0.0 { lo } else { 0.5f64.min(0.5 * hi) };
        let b = if hi.is_finite() { hi } else { 2.0 * a.max(1.0) };
        let m = mu.mass(a.max(lo), b)?;
        if !m.is_finite() {
            return Err(Error::Integrability(format!("revuz measure infinite on ({a}, {b})")));
        }
        Ok(())
    }

    /// Total mass of the angular reference measure.
    pub fn angular_mass(&self) -> f64 {
        match self.angular_measure {
            AngularMeasure::Surface => sphere_area(self.d),
            AngularMeasure::Normalized => 1.0,
        }
    }

    pub fn revuz_measure(&self) -> Density {
        self.revuz_density.mul(&self.radial.speed.density)
    }
}

/// Radial profile `rho_hat` of a density `rho(x) = rho_hat(|x|)` on `R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RotInvariantDensity {
    pub rho_hat: Density,
    pub d: usize,
}

impl RotInvariantDensity {
    /// `rho_hat = psi_gamma^2` with `psi_gamma(x) = sqrt(gamma / 2 pi) e^(-gamma x) / x`.
    pub fn psi_squared(gamma: f64, d: usize) -> Self {
        Self {
            rho_hat: Density::PowerExp {
                coef: gamma / (2.0 * std::f64::consts::PI),
                power: -2.0,
                rate: -2.0 * gamma,
            },
            d,
        }
    }
}

/// Radial data `dp = dx / (|S| rho_hat x^(d-1))`, `l = |S| rho_hat x^(d-1) dx`, `f = x^-2`,
/// with the sphere carrying its normalized measure.
pub fn radial_spec_from_density(rho: &RotInvariantDensity) -> Result<SkewProductSpec> {
    rho.rho_hat.validate()?;
    if rho.d < 2 {
        return Err(Error::Param(format!("dimension must be at least 2, got {}", rho.d)));
    }
    if rho.rho_hat.is_zero() {
        return Err(Error::Integrability("1/rho_hat is not locally integrable".into()));
    }
    // rho_hat and 1/rho_hat on a compact
    for dens in [rho.rho_hat, rho.rho_hat.reciprocal()?] {
        let m = dens.mass(0.5, 2.0)?;
        if !(m.is_finite() && m > 0.0) {
            return Err(Error::Integrability(format!("{dens:?} not integrable on [0.5, 2]")));
        }
    }
    let area = sphere_area(rho.d);
    let l = rho.rho_hat.mul(&Density::power(area, rho.d as f64 - 1.0));
    let dp = l.reciprocal()?;
    let scale = ScaleFunction::IntegratedDensity { density: dp, anchor: 1.0 };
    let radial = DiffusionSpec::on_domain(scale, SpeedMeasure::new(l))?;
    let spec = SkewProductSpec {
        radial,
        d: rho.d,
        revuz_density: Density::power(1.0, -2.0),
        sphere_time_scale: 1.0,
        angular_measure: AngularMeasure::Normalized,
    };
    spec.validate()?;
    Ok(spec)
}

/// Compactly supported radial factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RadialTest {
    /// `exp(-1 / (1 - s^2))` with `s` the affine map of `(a, b)` onto `(-1, 1)`.
    Bump { a: f64, b: f64 },
    /// `(1 - s^2)^3`.
    PolyBump { a: f64, b: f64 },
}

impl RadialTest {
    pub fn support(&self) -> (f64, f64) {
        match *self {
            RadialTest::Bump { a, b } | RadialTest::PolyBump { a, b } => (a, b),
        }
    }

    fn validate(&self) -> Result<()> {
        let (a, b) = self.support();
        if a > 0.0 && a < b && b.is_finite() {
            Ok(())
        } else {
            Err(Error::Param(format!("test support ({a}, {b}) must lie inside (0, inf)")))
        }
    }

    /// `(u(x), u'(x))`.
    pub fn eval(&self, x: f64) -> (f64, f64) {
        let (a, b) = self.support();
        if x <= a || x >= b {
            return (0.0, 0.0);
        }
        let ds = 2.0 / (b - a);
        let s = (2.0 * x - a - b) / (b - a);
        let q = 1.0 - s * s;
        match self {
            RadialTest::Bump { .. } => {
                let v = (-1.0 / q).exp();
                (v, v * (-2.0 * s / (q * q)) * ds)
            }
            RadialTest::PolyBump { .. } => (q * q * q, -6.0 * s * q * q * ds),
        }
    }
}

/// Spherical factor from a small harmonic catalogue.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AngularTest {
    Constant,
    /// `theta_i`
    Coordinate { i: usize },
    /// `theta_i theta_j`, `i != j`
    Product { i: usize, j: usize },
    /// `theta_i^2 - theta_j^2`, `i != j`
    DiffSquares { i: usize, j: usize },
}

impl AngularTest {
    fn validate(&self, d: usize) -> Result<()> {
        let ok = match *self {
            AngularTest::Constant => true,
            AngularTest::Coordinate { i } => i < d,
            AngularTest::Product { i, j } | AngularTest::DiffSquares { i, j } => i < d && j < d && i != j,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Param(format!("{self:?} is not defined on S^{}", d - 1)))
        }
    }

    pub fn degree(&self) -> usize {
        match self {
            AngularTest::Constant => 0,
            AngularTest::Coordinate { .. } => 1,
            _ => 2,
        }
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        match *self {
            AngularTest::Constant => 1.0,
            AngularTest::Coordinate { i } => theta[i],
            AngularTest::Product { i, j } => theta[i] * theta[j],
            AngularTest::DiffSquares { i, j } => theta[i] * theta[i] - theta[j] * theta[j],
        }
    }

    /// `int u^2 d sigma` on the unit sphere with surface measure.
    pub fn l2_surface(&self, d: usize) -> f64 {
        let s = sphere_area(d);
        let dd = d as f64;
        match self {
            AngularTest::Constant => s,
            AngularTest::Coordinate { .. } => s / dd,
            AngularTest::Product { .. } => s / (dd * (dd + 2.0)),
            AngularTest::DiffSquares { .. } => 4.0 * s / (dd * (dd + 2.0)),
        }
    }

    /// `int |grad_S u|^2 d sigma`, via the eigenvalue `l (l + d - 2)`.
    pub fn gradient_surface(&self, d: usize) -> f64 {
        let l = self.degree() as f64;
        l * (l + d as f64 - 2.0) * self.l2_surface(d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TensorTestFunction {
    pub radial_part: RadialTest,
    pub angular_part: AngularTest,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_amplitude() -> f64 {
    1.0
}

impl TensorTestFunction {
    pub fn new(radial_part: RadialTest, angular_part: AngularTest) -> Self {
        Self {
            radial_part,
            angular_part,
            amplitude: 1.0,
        }
    }
}

/// Radial `p'` on the support of a test function; thinned scales qualify only
/// when the support avoids every construction block.
fn radial_derivative<'a>(scale: &'a ScaleFunction, a: f64, b: f64) -> Result<&'a ScaleFunction> {
    match scale {
        ScaleFunction::SelectorThinned(t) => {
            let sel = t.selector();
            let hits_block = sel.blocks().iter().any(|blk| blk.a < b && blk.b > a);
            let hits_tail = sel.tail().is_some_and(|tail| a < tail.top);
            if hits_block || hits_tail {
                return Err(Error::Structural(format!(
                    "test support ({a}, {b}) meets the thinned region of the scale"
                )));
            }
            Ok(t.base())
        }
        other => Ok(other),
    }
}

/// `E(u, u) = 1/2 int (u1')^2 / p' dx * int u2^2 dsigma + c/2 int |grad u2|^2 dsigma * int u1^2 f dl`.
pub fn energy_tensor(skew: &SkewProductSpec, u: &TensorTestFunction) -> Result<f64> {
    skew.validate()?;
    u.radial_part.validate()?;
    u.angular_part.validate(skew.d)?;
    let (a, b) = u.radial_part.support();
    let (lo, hi) = skew.radial.interval.bounds();
    if a < lo || b > hi {
        return Err(Error::Domain { x: if a < lo { a } else { b }, lo, hi });
    }
    let p = radial_derivative(&skew.radial.scale, a, b)?;
    let radial_energy = quad::integrate(
        |x| {
            let (_, du) = u.radial_part.eval(x);
            let dp = p.derivative(x).expect("smooth base");
            du * du / dp
        },
        a,
        b,
        ENERGY_TOL,
    )?;
    let mu = skew.revuz_measure();
    let radial_l2_mu = if mu.is_zero() {
        0.0
    } else {
        quad::integrate(
            |x| {
                let (v, _) = u.radial_part.eval(x);
                v * v * mu.eval(x)
            },
            a,
            b,
            ENERGY_TOL,
        )?
    };
    let norm = skew.angular_mass() / sphere_area(skew.d);
    let ang_l2 = u.angular_part.l2_surface(skew.d) * norm;
    let ang_grad = u.angular_part.gradient_surface(skew.d) * norm;
    let amp2 = u.amplitude * u.amplitude;
    Ok(amp2 * (0.5 * radial_energy * ang_l2 + 0.5 * skew.sphere_time_scale * ang_grad * radial_l2_mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionEvidence {
    /// Largest relative speed-density mismatch on the comparison grid.
    pub speed_residual: f64,
    /// Relative spread of `f~ m~ / (f m)` on the grid.
    pub revuz_ratio_spread: f64,
    /// `|c_base / c~ - kappa|` relative to `kappa`.
    pub clock_residual: f64,
    pub grid_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriterionReport {
    pub is_subspace: bool,
    pub c: Option<f64>,
    pub proper: Option<bool>,
    /// Set when the candidate differs from the base only by a rescaled clock.
    pub equivalent_representation: bool,
    pub evidence: CriterionEvidence,
}

fn comparison_grid(spec: &DiffusionSpec) -> Vec<f64> {
    (-48..=48)
        .map(|k| 2f64.powf(k as f64 / 4.0))
        .filter(|&x| spec.interval.contains(x))
        .collect()
}

/// Whether `candidate` is a regular subspace of `base`, with the constant `c` of `mu~ = c mu`.
pub fn check_subspace_criterion(candidate: &SkewProductSpec, base: &SkewProductSpec) -> Result<CriterionReport> {
    candidate.validate()?;
    base.validate()?;
    if candidate.d != base.d {
        return Err(Error::Structural(format!(
            "sphere dimensions differ: {} vs {}",
            candidate.d, base.d
        )));
    }
    if candidate.radial.interval != base.radial.interval {
        return Err(Error::Structural("radial intervals differ".into()));
    }
    let proper = match &candidate.radial.scale {
        s if *s == base.radial.scale => false,
        ScaleFunction::SelectorThinned(t) if *t.base() == base.radial.scale => t.selector().report().proper,
        _ => {
            return Err(Error::Structural(
                "candidate scale is not a thinning of the base scale".into(),
            ))
        }
    };
    let grid = comparison_grid(&base.radial);
    let speed_residual = if candidate.radial.speed == base.radial.speed {
        0.0
    } else {
        grid.iter()
            .map(|&x| {
                let m = base.radial.speed.density_at(x);
                ((candidate.radial.speed.density_at(x) - m) / m).abs()
            })
            .fold(0.0, f64::max)
    };
    let mu_c = candidate.revuz_measure();
    let mu_b = base.revuz_measure();
    let (kappa, spread) = if mu_b.is_zero() || mu_c.is_zero() {
        if mu_b.is_zero() && mu_c.is_zero() {
            (1.0, 0.0)
        } else {
            (f64::NAN, f64::INFINITY)
        }
    } else {
        let ratios: Vec<f64> = grid.iter().map(|&x| mu_c.eval(x) / mu_b.eval(x)).collect();
        let k = ratios[ratios.len() / 2];
        let spread = ratios.iter().map(|r| ((r - k) / k).abs()).fold(0.0, f64::max);
        (k, spread)
    };
    let clock_residual = ((base.sphere_time_scale / candidate.sphere_time_scale - kappa) / kappa).abs();
    let same_sphere = candidate.angular_measure == base.angular_measure;
    let is_subspace = speed_residual <= SPEED_REL_TOL
        && spread <= SPEED_REL_TOL
        && clock_residual <= SPEED_REL_TOL
        && same_sphere;
    let evidence = CriterionEvidence {
        speed_residual,
        revuz_ratio_spread: spread,
        clock_residual: if clock_residual.is_finite() { clock_residual } else { f64::MAX },
        grid_points: grid.len(),
    };
    Ok(CriterionReport {
        is_subspace,
        c: is_subspace.then_some(kappa),
        proper: is_subspace.then_some(proper),
        equivalent_representation: is_subspace && (kappa - 1.0).abs() > 1e-12,
        evidence,
    })
}

/// Global properties of the skew product; they are those of the radial part.
pub fn classify_skew(skew: &SkewProductSpec) -> Result<GlobalProperties> {
    skew.validate()?;
    let g = classify_global(&skew.radial)?;
    Ok(GlobalProperties { irreducible: true, ..g })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brownian(d: usize) -> SkewProductSpec {
        let scale = if d == 2 {
            ScaleFunction::Log
        } else {
            ScaleFunction::NegPower { alpha: d as f64 - 2.0 }
        };
        let radial =
            DiffusionSpec::on_domain(scale, SpeedMeasure::new(Density::power(1.0, d as f64 - 1.0))).unwrap();
        SkewProductSpec::new(radial, d, Density::power(1.0, -2.0)).unwrap()
    }

    #[test]
    fn sphere_areas() {
        use std::f64::consts::PI;
        assert!((sphere_area(2) - 2.0 * PI).abs() < 1e-14);
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-14);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-13);
    }

    #[test]
    fn constant_angular_part_has_no_angular_energy() {
        let s = brownian(3);
        let bump = RadialTest::Bump { a: 1.0, b: 2.0 };
        let u = TensorTestFunction::new(bump, AngularTest::Constant);
        let e = energy_tensor(&s, &u).unwrap();
        let radial = quad::integrate(|x| bump.eval(x).1.powi(2) * x * x, 1.0, 2.0, 1e-13).unwrap();
        assert!((e - sphere_area(3) * 0.5 * radial).abs() < 1e-12 * e);
    }

    #[test]
    fn energy_is_quadratic() {
        let s = brownian(3);
        let mut u = TensorTestFunction::new(RadialTest::PolyBump { a: 0.5, b: 3.0 }, AngularTest::Coordinate { i: 0 });
        let e1 = energy_tensor(&s, &u).unwrap();
        u.amplitude = 3.0;
        let e3 = energy_tensor(&s, &u).unwrap();
        assert!((e3 - 9.0 * e1).abs() < 1e-12 * e3);
    }

    #[test]
    fn radial_spec_from_constant_density() {
        use std::f64::consts::PI;
        let s = radial_spec_from_density(&RotInvariantDensity {
            rho_hat: Density::constant(1.0),
            d: 3,
        })
        .unwrap();
        assert_eq!(s.radial.speed.density, Density::power(4.0 * PI, 2.0));
        // p(x) - p(1) = (1 - 1/x) / (4 pi)
        let v = s.radial.scale.eval(2.0).unwrap();
        assert!((v - 0.5 / (4.0 * PI)).abs() < 1e-14);
        let s2 = radial_spec_from_density(&RotInvariantDensity {
            rho_hat: Density::constant(1.0),
            d: 2,
        })
        .unwrap();
        let v = s2.radial.scale.eval(std::f64::consts::E).unwrap();
        assert!((v - 1.0 / (2.0 * PI)).abs() < 1e-14);
    }

    #[test]
    fn psi_density_reproduces_example_two_pair() {
        let s = radial_spec_from_density(&RotInvariantDensity::psi_squared(1.0, 3)).unwrap();
        assert_eq!(s.radial.speed.density, Density::exp(2.0, -2.0));
        for x in [0.1, 0.7, 2.5] {
            let want = ((2.0 * x as f64).exp() - 2f64.exp()) / 4.0;
            let got = s.radial.scale.eval(x).unwrap();
            assert!((got - want).abs() < 1e-12 * want.abs().max(1.0), "{x}: {got} vs {want}");
        }
    }

    #[test]
    fn criterion_identity_and_scaling() {
        let base = brownian(2);
        let r = check_subspace_criterion(&base, &base).unwrap();
        assert!(r.is_subspace && r.c == Some(1.0) && r.proper == Some(false));
        let mut doubled = base.clone();
        doubled.revuz_density = doubled.revuz_density.scaled(2.0);
        doubled.sphere_time_scale = 0.5;
        let r = check_subspace_criterion(&doubled, &base).unwrap();
        assert!(r.is_subspace && r.equivalent_representation);
        assert!((r.c.unwrap() - 2.0).abs() < 1e-9);
        doubled.sphere_time_scale = 1.0;
        assert!(!check_subspace_criterion(&doubled, &base).unwrap().is_subspace);
        let mut slow = base.clone();
        slow.radial.speed = SpeedMeasure::new(Density::power(2.0, 1.0));
        let r = check_subspace_criterion(&slow, &base).unwrap();
        assert!(!r.is_subspace && r.c.is_none());
        let mut other = base.clone();
        other.radial.scale = ScaleFunction::Power { alpha: 2.0 };
        assert!(matches!(check_subspace_criterion(&other, &base), Err(Error::Structural(_))));
    }

    #[test]
    fn skew_classification_follows_radial() {
        let g = classify_skew(&brownian(2)).unwrap();
        assert!(g.recurrent && g.irreducible);
        let g = classify_skew(&brownian(3)).unwrap();
        assert!(g.transient && g.conservative);
    }
}
