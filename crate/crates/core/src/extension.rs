//! Regular extension of a skew product whose radial scale is a thinned one.
//!
//! Work in `r = p~(x)` (shifted so that `p~(0+) = 0` when finite). With
//! `q~ = p~^{-1}` and `g(r) = 1 / p'_base(q~(r))` the density of the
//! absolutely continuous part of `q~`, the new radial coordinate is
//!
//! `q^(r) = int_{r0}^{r} min(g(t), cap(t)) dt`, `cap(t) = e^t` (polar origin) or `t`,
//!
//! and `h = q^ o p~` maps `(0, inf)` onto `(0, L)` with `L = q^(M)`, `M = p~(inf-)`.
//! `q^` is tabulated at knots uniform in `asinh r`, grown on demand.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::Rng;

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::diffusion::{hitting_probability, DiffusionSpec, Endpoint, SpeedMeasure};
use crate::error::{Error, Result};
use crate::ext::{ExtReal, Interval};
use crate::montecarlo::{chunk_rng, McConfig, McSummary};
use crate::quad::{self, ShellRule, ShellVerdict};
use crate::scale::{ScaleFunction, BISECTION_TOL};
use crate::sim::{estimate_absorption, estimate_hitting, speed_cell, Cell, NaturalScaleModel};
use crate::skew::SkewProductSpec;

const KNOT_DU: f64 = 1.0 / 32.0;
/// Below this `r` the polar-origin integral is under `e^r` and is dropped from the table.
const POLAR_FLOOR: f64 = -700.0;
const SEG_TOL: f64 = 1e-13;
const SEG_MAX: usize = 400;
const MAX_KNOTS: usize = 200_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtensionCase {
    /// `p~(0+) = -inf`
    PolarOrigin,
    /// `p~(0+)` finite
    RegularOrigin,
}

/// Radial data of the skew product to extend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionInput {
    pub p_tilde: ScaleFunction,
    pub l: SpeedMeasure,
    pub revuz_density: Density,
    pub d: usize,
}

impl ExtensionInput {
    pub fn from_skew(skew: &SkewProductSpec) -> Result<Self> {
        if skew.radial.interval != Interval::positive_half_line() {
            return Err(Error::Structural("extension needs a radial part on (0, inf)".into()));
        }
        let s = Self {
            p_tilde: skew.radial.scale.clone(),
            l: skew.radial.speed,
            revuz_density: skew.revuz_density,
            d: skew.d,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d < 2 {
            return Err(Error::Param(format!("sphere dimension needs d >= 2, got {}", self.d)));
        }
        self.p_tilde.validate()?;
        self.l.validate()?;
        self.revuz_density.validate()?;
        let near_zero = self.l.mass(0.0, 1.0)?;
        if !near_zero.is_finite() {
            return Err(Error::Integrability("speed measure is infinite near the origin".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<DiffusionSpec> {
        DiffusionSpec::on_domain(self.p_tilde.clone(), self.l)
    }
}

pub fn classify_extension_case(input: &ExtensionInput) -> Result<ExtensionCase> {
    Ok(match input.p_tilde.lower_limit()?.value {
        ExtReal::NegInf => ExtensionCase::PolarOrigin,
        ExtReal::Finite(_) => ExtensionCase::RegularOrigin,
        ExtReal::PosInf => return Err(Error::Structural("scale tends to +inf at the origin".into())),
    })
}

/// `q~` split into its absolutely continuous density `g` and its singular part.
#[derive(Debug, Clone)]
pub struct Decomposition {
    scale: ScaleFunction,
    shift: f64,
    lower: f64,
    top: f64,
}

impl Decomposition {
    /// Shift applied to `p~` so that a finite `p~(0+)` becomes `0`.
    pub fn shift(&self) -> f64 {
        self.shift
    }

    /// `(r_lo, M)`: range of the shifted `p~`.
    pub fn range(&self) -> (f64, f64) {
        (self.lower, self.top)
    }

    /// Shifted `p~(x)`.
    pub fn p_tilde(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(self.lower);
        }
        if x == f64::INFINITY {
            return Ok(self.top);
        }
        Ok(self.scale.eval(x)? - self.shift)
    }

    pub fn q_tilde(&self, r: f64) -> Result<f64> {
        if r <= self.lower {
            return Ok(0.0);
        }
        if r >= self.top {
            return Ok(f64::INFINITY);
        }
        self.scale.invert(r + self.shift, BISECTION_TOL)
    }

    fn base_derivative(&self, x: f64) -> f64 {
        let d = match self.scale.thinned() {
            Some(t) => t.base().derivative(x),
            None => self.scale.derivative(x),
        };
        d.expect("thinning base is differentiable")
    }

    /// `g(r) = 1 / p'_base(q~(r))`.
    pub fn g(&self, r: f64) -> Result<f64> {
        Ok(1.0 / self.base_derivative(self.q_tilde(r)?))
    }

    /// Whether `q~(r)` lies in the removed set, where `q~` grows singularly.
    pub fn is_singular(&self, r: f64) -> Result<bool> {
        Ok(match self.scale.thinned() {
            Some(t) => !t.selector().contains(self.q_tilde(r)?),
            None => false,
        })
    }

    /// `int phi(g(r)) dr` over the regular part of `(p~(x1), p~(x2))`, computed in `x` as
    /// `int_{F cap (x1, x2)} phi(1/p') p' dx`.
    pub fn lebesgue_integral<P: Fn(f64) -> f64>(&self, phi: P, x1: f64, x2: f64) -> Result<f64> {
        if !(x1 > 0.0 && x2 >= x1 && x2.is_finite()) {
            return Err(Error::Param(format!("need 0 < x1 <= x2 < inf, got ({x1}, {x2})")));
        }
        let psi = |x: f64| {
            let d = self.base_derivative(x);
            phi(1.0 / d) * d
        };
        let whole = quad::integrate(psi, x1, x2, 1e-12)?;
        let removed = match self.scale.thinned() {
            Some(t) => t.selector().removed_integral(&psi, x1, x2, 1e-14),
            None => 0.0,
        };
        Ok(whole - removed)
    }
}

pub fn decompose_qtilde(input: &ExtensionInput) -> Result<Decomposition> {
    input.validate()?;
    let lo = input.p_tilde.lower_limit()?.value;
    let hi = input.p_tilde.upper_limit()?.value.to_f64();
    let (shift, lower) = match lo {
        ExtReal::Finite(v) => (v, 0.0),
        _ => (0.0, f64::NEG_INFINITY),
    };
    Ok(Decomposition {
        scale: input.p_tilde.clone(),
        shift,
        lower,
        top: hi - shift,
    })
}

/// `q^` with its knot table.
#[derive(Debug)]
pub struct QHat {
    decomp: Decomposition,
    case: ExtensionCase,
    u0: f64,
    table: Mutex<Vec<f64>>,
}

impl QHat {
    pub fn case(&self) -> ExtensionCase {
        self.case
    }

    pub fn decomposition(&self) -> &Decomposition {
        &self.decomp
    }

    pub fn cap(&self, t: f64) -> f64 {
        match self.case {
            ExtensionCase::PolarOrigin => t.exp(),
            ExtensionCase::RegularOrigin => t.max(0.0),
        }
    }

    /// `q^'(t) = min(g(t), cap(t))`; NaN where `g` cannot be evaluated.
    pub fn derivative(&self, t: f64) -> f64 {
        let c = self.cap(t);
        match self.decomp.g(t) {
            Ok(g) => g.min(c),
            // q~(t) underflows; the cap bounds the integrand below the normal range
            Err(_) if c < f64::MIN_POSITIVE => c,
            Err(_) => f64::NAN,
        }
    }

    fn segment(&self, a: f64, b: f64) -> Result<f64> {
        let v = quad::integrate_estimate(|t| self.derivative(t), a, b, 0.0, SEG_TOL, SEG_MAX).value;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Quadrature(format!("q^ integrand not finite on ({a}, {b})")))
        }
    }

    fn last_index(&self) -> Option<usize> {
        let top = self.decomp.top;
        top.is_finite()
            .then(|| ((top.asinh() - self.u0) / KNOT_DU).ceil().max(1.0) as usize)
    }

    fn knot(&self, k: usize) -> f64 {
        if Some(k) == self.last_index() {
            return self.decomp.top;
        }
        (self.u0 + k as f64 * KNOT_DU).sinh()
    }

    /// `q^` at knot `k`, growing the table as needed.
    fn knot_value(&self, k: usize) -> Result<f64> {
        if let Some(last) = self.last_index() {
            if k > last {
                return Err(Error::Range {
                    y: self.knot(k),
                    lo: self.decomp.lower,
                    hi: self.decomp.top,
                });
            }
        }
        if k > MAX_KNOTS {
            return Err(Error::NonConvergence {
                tol: SEG_TOL,
                iterations: MAX_KNOTS,
                residual: f64::NAN,
            });
        }
        let mut table = self.table.lock().expect("q^ table poisoned");
        while table.len() <= k {
            let j = table.len();
            let next = table[j - 1] + self.segment(self.knot(j - 1), self.knot(j))?;
            table.push(next);
        }
        Ok(table[k])
    }

    /// Index `k` with `knot(k) <= r < knot(k + 1)`.
    fn bracket(&self, r: f64) -> usize {
        let mut k = ((r.asinh() - self.u0) / KNOT_DU).floor().max(0.0) as usize;
        if let Some(last) = self.last_index() {
            k = k.min(last.saturating_sub(1));
        }
        while k > 0 && self.knot(k) > r {
            k -= 1;
        }
        while Some(k + 1) != self.last_index() && self.knot(k + 1) <= r {
            k += 1;
        }
        k
    }

    pub fn eval(&self, r: f64) -> Result<f64> {
        let (lo, top) = self.decomp.range();
        if r.is_nan() || r < lo || r > top {
            return Err(Error::Range { y: r, lo, hi: top });
        }
        if r == lo {
            return Ok(0.0);
        }
        if r == top {
            return Ok(self.knot_value(self.last_index().expect("finite top"))?);
        }
        if self.case == ExtensionCase::PolarOrigin && r < POLAR_FLOOR {
            return self.segment(r - 50.0, r);
        }
        let k = self.bracket(r);
        Ok(self.knot_value(k)? + self.segment(self.knot(k), r)?)
    }

    /// `L = q^(M-)`, `+inf` when the integral diverges.
    fn length(&self) -> Result<ExtReal> {
        if let Some(last) = self.last_index() {
            return Ok(ExtReal::Finite(self.knot_value(last)?));
        }
        // in x, q^' dr = min(1, cap(p~) p') dx on F; bounded below far out means divergence
        let lower_bounded = (10..=30).filter_map(|k| {
            let x = 2f64.powi(k);
            let r = self.decomp.p_tilde(x).ok()?;
            if self.decomp.is_singular(r).unwrap_or(true) {
                return None;
            }
            Some((self.cap(r) * self.decomp.base_derivative(x)).min(1.0))
        });
        let samples: Vec<f64> = lower_bounded.collect();
        if samples.len() >= 10 && samples.iter().all(|&v| v >= 1e-3) {
            return Ok(ExtReal::PosInf);
        }
        // same test in r
        let r0 = self.decomp.lower.max(0.0);
        if (4..=9).all(|k| self.derivative(r0 + 2f64.powi(k)) >= 1e-3) {
            return Ok(ExtReal::PosInf);
        }
        let start = self.decomp.lower.max(0.0) + 1.0;
        let head = self.eval(start)?;
        let verdict = quad::dyadic_shell_test(
            |k| {
                let a = start * 2f64.powi(k as i32);
                self.segment(a, 2.0 * a)
            },
            ShellRule::default(),
        )?;
        Ok(match verdict {
            ShellVerdict::Convergent(s) => ExtReal::Finite(head + s),
            ShellVerdict::Divergent => ExtReal::PosInf,
        })
    }

    /// `p^(s) = q^^{-1}(s)` for `0 < s < L`.
    pub fn inverse(&self, s: f64) -> Result<f64> {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Range {
                y: s,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let (mut k, mut qk) = (0usize, self.knot_value(0)?);
        if s < qk || (self.case == ExtensionCase::PolarOrigin && s <= qk) {
            // deep in the polar tail, where q^ <= e^r
            let hi = self.knot(0);
            let lo = s.ln() - 60.0;
            return Ok(quad::bisect_increasing(|r| self.eval(r).unwrap_or(f64::NAN), s, lo, hi));
        }
        loop {
            let next = self.knot_value(k + 1).map_err(|e| match e {
                Error::Range { .. } => Error::Range {
                    y: s,
                    lo: 0.0,
                    hi: qk,
                },
                e => e,
            })?;
            if next >= s {
                break;
            }
            k += 1;
            qk = next;
        }
        let (mut lo, mut hi) = (self.knot(k), self.knot(k + 1));
        let q_hi = self.knot_value(k + 1)?;
        let mut r = if q_hi > qk { lo + (hi - lo) * (s - qk) / (q_hi - qk) } else { 0.5 * (lo + hi) };
        for _ in 0..200 {
            let f = qk + self.segment(lo.min(self.knot(k)), r)? - s;
            if f == 0.0 {
                return Ok(r);
            }
            if f < 0.0 {
                lo = r;
            } else {
                hi = r;
            }
            if (hi - lo) <= 4.0 * f64::EPSILON * r.abs().max(1e-300) || f.abs() <= 1e-15 * s {
                return Ok(r);
            }
            let d = self.derivative(r);
            let newton = r - f / d;
            r = if d > 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        Ok(r)
    }
}

pub fn build_qhat(decomp: Decomposition, case: ExtensionCase) -> QHat {
    let u0 = match case {
        ExtensionCase::PolarOrigin => POLAR_FLOOR.asinh(),
        ExtensionCase::RegularOrigin => 0.0,
    };
    QHat {
        decomp,
        case,
        u0,
        table: Mutex::new(vec![0.0]),
    }
}

/// The extension `(X^, Theta)` on the ball of radius `L`.
#[derive(Debug)]
pub struct Extension {
    input: ExtensionInput,
    spec: DiffusionSpec,
    case: ExtensionCase,
    identity_case: bool,
    qhat: QHat,
    length: ExtReal,
    absorbing: [bool; 2],
    cells: Mutex<HashMap<(u64, u64), Cell>>,
}

pub fn build_extension(input: &ExtensionInput) -> Result<Extension> {
    input.validate()?;
    let case = classify_extension_case(input)?;
    let decomp = decompose_qtilde(input)?;
    let qhat = build_qhat(decomp, case);
    let length = qhat.length()?;
    let spec = input.spec()?;
    let absorbing = [spec.absorbing(Endpoint::Lower)?, spec.absorbing(Endpoint::Upper)?];
    let identity_case = case == ExtensionCase::PolarOrigin
        && input.p_tilde.thinned().map_or(true, |t| t.selector().is_full());
    let ext = Extension {
        input: input.clone(),
        spec,
        case,
        identity_case,
        qhat,
        length,
        absorbing,
        cells: Mutex::new(HashMap::new()),
    };
    let quick = ext.check_invariants_with(&default_grid(40), 10)?;
    if !quick.passed {
        return Err(Error::InvariantViolation(format!("extension invariants failed: {quick:?}")));
    }
    Ok(ext)
}

/// Geometric grid on `[0.01, 10]`.
pub fn default_grid(n: usize) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| 0.01 * 1000f64.powf(i as f64 / (n - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtensionRow {
    pub x: f64,
    /// shifted `p~(x)`
    pub r: f64,
    pub h: f64,
    /// `p^(h(x))`, equal to `r`
    pub p_hat_of_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtensionReport {
    pub case: ExtensionCase,
    /// The subspace is already regular on the full space: the extension is the input itself.
    pub identity_case: bool,
    pub unique: bool,
    pub shift: f64,
    /// `M = p~(inf-)`, shifted.
    pub top: ExtReal,
    /// Radius `L` of the extended state space.
    pub length: ExtReal,
    pub table: Vec<ExtensionRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub points: usize,
    /// `max |p^(h(x)) - p~(x)| / max(1, |p~(x)|)`
    pub identity_error: f64,
    /// `q^ <= q~`, i.e. `h(x) <= x`.
    pub dominated: bool,
    pub monotone: bool,
    /// `l^((-inf, r]) <= e^(2r)/2`; absent for a regular origin.
    pub polar_bound: Option<bool>,
    /// `int_0^{h^-1(t)} (h(x)/x)^2 l(dx) <= l((0, h^-1(t)])` at the grid points.
    pub finiteness: bool,
    /// Largest relative mismatch of pushed-forward speed cells between the two routes.
    pub pushforward_error: f64,
    /// `(l o h^{-1})((0, t])` against quadrature of `l` up to `h^{-1}(t)` at random `t`.
    pub pushforward_quadrature_error: f64,
    pub passed: bool,
}

impl Extension {
    pub fn input(&self) -> &ExtensionInput {
        &self.input
    }

    pub fn spec(&self) -> &DiffusionSpec {
        &self.spec
    }

    pub fn case(&self) -> ExtensionCase {
        self.case
    }

    pub fn identity_case(&self) -> bool {
        self.identity_case
    }

    /// The construction has a unique output for each input.
    pub fn unique(&self) -> bool {
        true
    }

    pub fn length(&self) -> ExtReal {
        self.length
    }

    pub fn shift(&self) -> f64 {
        self.qhat.decomp.shift
    }

    /// Shifted `M`.
    pub fn top(&self) -> f64 {
        self.qhat.decomp.top
    }

    pub fn qhat(&self) -> &QHat {
        &self.qhat
    }

    pub fn q_hat(&self, r: f64) -> Result<f64> {
        self.qhat.eval(r)
    }

    pub fn p_hat(&self, s: f64) -> Result<f64> {
        let l = self.length.to_f64();
        if s >= l {
            return Err(Error::Range { y: s, lo: 0.0, hi: l });
        }
        self.qhat.inverse(s)
    }

    pub fn h(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(0.0);
        }
        if x == f64::INFINITY {
            return Ok(self.length.to_f64());
        }
        self.q_hat(self.qhat.decomp.p_tilde(x)?)
    }

    pub fn h_inv(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Ok(0.0);
        }
        if s >= self.length.to_f64() {
            return Ok(f64::INFINITY);
        }
        self.qhat.decomp.q_tilde(self.p_hat(s)?)
    }

    /// `(l o h^{-1})((s1, s2))`.
    pub fn pushed_speed(&self, s1: f64, s2: f64) -> Result<f64> {
        self.input.l.mass(self.h_inv(s1)?, self.h_inv(s2)?)
    }

    /// `(mu o h^{-1})((s1, s2))`.
    pub fn pushed_revuz(&self, s1: f64, s2: f64) -> Result<f64> {
        let mu = self.input.revuz_density.mul(&self.input.l.density);
        mu.mass(self.h_inv(s1)?, self.h_inv(s2)?)
    }

    /// `int_{-inf}^r q^'(t)^2 dt`.
    pub fn polar_energy_below(&self, r: f64) -> Result<f64> {
        let f = |t: f64| {
            let v = self.qhat.derivative(t);
            v * v
        };
        Ok(quad::integrate_estimate(f, r - 40.0, r, 0.0, 1e-12, quad::MAX_SEGMENTS).value)
    }

    /// `(int_0^{h^-1(t)} (h(x)/x)^2 l(dx), l((0, h^-1(t)]))`; the first entry is
    /// an upper bound (estimate plus quadrature error).
    pub fn finiteness_pair(&self, t: f64) -> Result<(f64, f64)> {
        let x = self.h_inv(t)?;
        let m = &self.input.l;
        // h <= x bounds the piece below eps by l((0, eps))
        let eps = 1e-8 * x;
        let lhs = quad::integrate_estimate(
            |y: f64| {
                let r = self.h(y).unwrap_or(f64::NAN) / y;
                r * r * m.density_at(y)
            },
            eps,
            x,
            0.0,
            1e-10,
            60,
        );
        Ok((lhs.value + lhs.error + m.mass(0.0, eps)?, m.mass(0.0, x)?))
    }

    pub fn table(&self, grid: &[f64]) -> Result<Vec<ExtensionRow>> {
        grid.iter()
            .map(|&x| {
                let r = self.qhat.decomp.p_tilde(x)?;
                let h = self.q_hat(r)?;
                Ok(ExtensionRow {
                    x,
                    r,
                    h,
                    p_hat_of_h: self.p_hat(h)?,
                })
            })
            .collect()
    }

    pub fn report(&self, grid: &[f64]) -> Result<ExtensionReport> {
        Ok(ExtensionReport {
            case: self.case,
            identity_case: self.identity_case,
            unique: self.unique(),
            shift: self.shift(),
            top: ExtReal::from_f64(self.top()),
            length: self.length,
            table: self.table(grid)?,
        })
    }

    pub fn check_invariants(&self, grid: &[f64]) -> Result<InvariantReport> {
        self.check_invariants_with(grid, 100)
    }

    /// As [`Extension::check_invariants`] with `random_points` pushforward samples.
    pub fn check_invariants_with(&self, grid: &[f64], random_points: usize) -> Result<InvariantReport> {
        let rows = self.table(grid)?;
        let identity_error = rows
            .iter()
            .map(|w| (w.p_hat_of_h - w.r).abs() / w.r.abs().max(1.0))
            .fold(0.0, f64::max);
        let dominated = rows.iter().all(|w| w.h <= w.x * (1.0 + 1e-9) && w.h >= 0.0);
        let monotone = rows.windows(2).all(|p| p[1].h >= p[0].h);
        let polar_bound = match self.case {
            ExtensionCase::PolarOrigin => {
                let mut ok = true;
                for k in -10..=10 {
                    let r = k as f64 * 0.5;
                    if r >= self.top() {
                        break;
                    }
                    let lhs = self.polar_energy_below(r)?;
                    ok &= lhs <= 0.5 * (2.0 * r).exp() * (1.0 + 1e-9);
                }
                Some(ok)
            }
            ExtensionCase::RegularOrigin => None,
        };
        let mut finiteness = true;
        for w in rows.iter().step_by((rows.len() / 8).max(1)) {
            let (lhs, rhs) = self.finiteness_pair(w.h)?;
            finiteness &= lhs.is_finite() && lhs <= rhs * (1.0 + 1e-8);
        }
        let mut pushforward_error: f64 = 0.0;
        for p in rows.windows(2).step_by((rows.len() / 8).max(1)) {
            let (z1, z2) = (p[0].r, p[1].r);
            let mapped = self.natural_cell(z1, z2)?;
            let direct = self.direct_cell(z1, z2)?;
            let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
            pushforward_error = pushforward_error
                .max(rel(mapped.mass, direct.mass))
                .max(rel(mapped.moment, direct.moment).min((mapped.moment - direct.moment).abs() / direct.mass.max(1e-300) / (z2 - z1)));
        }
        let pushforward_quadrature_error = self.pushforward_quadrature(&rows, random_points)?;
        let passed = identity_error <= 1e-9
            && pushforward_quadrature_error <= 1e-8
            && dominated
            && monotone
            && polar_bound != Some(false)
            && finiteness
            && pushforward_error <= 1e-6;
        Ok(InvariantReport {
            points: rows.len(),
            identity_error,
            dominated,
            monotone,
            polar_bound,
            finiteness,
            pushforward_error,
            pushforward_quadrature_error,
            passed,
        })
    }

    fn pushforward_quadrature(&self, rows: &[ExtensionRow], n: usize) -> Result<f64> {
        let (Some(first), Some(last)) = (rows.first(), rows.last()) else {
            return Ok(0.0);
        };
        let mut rng = chunk_rng(0, 0);
        let m = &self.input.l;
        let mut worst: f64 = 0.0;
        for _ in 0..n {
            let t = first.h + (last.h - first.h) * rng.gen::<f64>();
            let pushed = self.pushed_speed(0.0, t)?;
            let x = self.h_inv(t)?;
            let direct = quad::integrate(|y| m.density_at(y), 0.0, x, 1e-12)?;
            worst = worst.max((pushed - direct).abs() / direct.abs().max(1e-300));
        }
        Ok(worst)
    }

    fn direct_cell(&self, z1: f64, z2: f64) -> Result<Cell> {
        let shift = self.shift();
        let x1 = self.spec.from_natural(z1 + shift)?;
        let x2 = self.spec.from_natural(z2 + shift)?;
        speed_cell(&self.spec, x1, x2, z1 + shift)
    }

    /// The extension's radial part as a natural-scale model on `(0, L)`.
    pub fn mapped_model(&self) -> MappedModel<'_> {
        MappedModel { ext: self }
    }
}

impl NaturalScaleModel for Extension {
    fn natural_range(&self) -> Result<(f64, f64)> {
        Ok((self.qhat.decomp.lower, self.top()))
    }

    fn absorbing(&self) -> Result<[bool; 2]> {
        Ok(self.absorbing)
    }

    fn state_bounds(&self) -> (f64, f64) {
        (0.0, self.length.to_f64())
    }

    fn to_natural(&self, s: f64) -> Result<f64> {
        let l = self.length.to_f64();
        if s <= 0.0 {
            return Ok(self.qhat.decomp.lower);
        }
        if s >= l {
            return Ok(self.top());
        }
        self.p_hat(s)
    }

    fn from_natural(&self, z: f64) -> Result<f64> {
        let (lo, top) = self.natural_range()?;
        if z <= lo {
            return Ok(0.0);
        }
        if z >= top {
            return Ok(self.length.to_f64());
        }
        self.q_hat(z)
    }

    /// Cell of `l o h^{-1}` pulled back through `h^{-1} = q~ o p^`.
    fn natural_cell(&self, z1: f64, z2: f64) -> Result<Cell> {
        let key = (z1.to_bits(), z2.to_bits());
        if let Some(c) = self.cells.lock().expect("cell cache poisoned").get(&key) {
            return Ok(*c);
        }
        let x1 = self.h_inv(self.from_natural(z1)?)?;
        let x2 = self.h_inv(self.from_natural(z2)?)?;
        let c = speed_cell(&self.spec, x1, x2, z1 + self.shift())?;
        self.cells.lock().expect("cell cache poisoned").insert(key, c);
        Ok(c)
    }
}

/// Borrowed handle on an extension used as a natural-scale model.
pub struct MappedModel<'a> {
    ext: &'a Extension,
}

impl NaturalScaleModel for MappedModel<'_> {
    fn natural_range(&self) -> Result<(f64, f64)> {
        self.ext.natural_range()
    }
    fn absorbing(&self) -> Result<[bool; 2]> {
        NaturalScaleModel::absorbing(self.ext)
    }
    fn state_bounds(&self) -> (f64, f64) {
        self.ext.state_bounds()
    }
    fn to_natural(&self, x: f64) -> Result<f64> {
        self.ext.to_natural(x)
    }
    fn from_natural(&self, z: f64) -> Result<f64> {
        self.ext.from_natural(z)
    }
    fn natural_cell(&self, z1: f64, z2: f64) -> Result<Cell> {
        self.ext.natural_cell(z1, z2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingRoundtrip {
    pub x: f64,
    pub a: f64,
    pub b: f64,
    pub closed_form: f64,
    pub direct: McSummary,
    pub mapped: McSummary,
    pub agree: bool,
}

/// `P(hit b before a)` from `x` in the original model and from `h(x)` in the extension.
pub fn roundtrip_hitting(ext: &Extension, x: f64, a: f64, b: f64, h: f64, mc: &McConfig) -> Result<HittingRoundtrip> {
    let closed_form = hitting_probability(&ext.spec, x, a, b)?;
    let direct = estimate_hitting(&ext.spec, x, a, b, h, mc)?;
    let mapped = estimate_hitting(&ext.mapped_model(), ext.h(x)?, ext.h(a)?, ext.h(b)?, h, mc)?;
    Ok(HittingRoundtrip {
        x,
        a,
        b,
        closed_form,
        direct,
        mapped,
        agree: direct.within(closed_form, 3.0) && mapped.within(closed_form, 3.0),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbsorptionRoundtrip {
    pub x: f64,
    pub horizon: f64,
    pub direct: McSummary,
    pub mapped: McSummary,
    pub agree: bool,
}

/// Absorption at the origin before `horizon`, from `x` and from `h(x)`.
pub fn roundtrip_absorption(
    ext: &Extension,
    x: f64,
    horizon: f64,
    h: f64,
    max_steps: u64,
    mc: &McConfig,
) -> Result<AbsorptionRoundtrip> {
    let direct = estimate_absorption(&ext.spec, x, horizon, h, max_steps, mc)?;
    let mapped = estimate_absorption(&ext.mapped_model(), ext.h(x)?, horizon, h, max_steps, mc)?;
    let se = (direct.stderr.powi(2) + mapped.stderr.powi(2)).sqrt();
    let diff = (direct.estimate - mapped.estimate).abs();
    Ok(AbsorptionRoundtrip {
        x,
        horizon,
        direct,
        mapped,
        agree: diff <= 3.0 * se || diff <= 1e-12,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scale::thin_scale;
    use crate::selector::{dyadic_selector, svc_selector};

    fn bessel(d: usize, scale: ScaleFunction) -> ExtensionInput {
        ExtensionInput {
            p_tilde: scale,
            l: SpeedMeasure::new(Density::power(1.0, d as f64 - 1.0)),
            revuz_density: Density::power(1.0, -2.0),
            d,
        }
    }

    fn example2() -> ExtensionInput {
        ExtensionInput {
            p_tilde: ScaleFunction::Exp { gamma: 1.0 },
            l: SpeedMeasure::new(Density::exp(2.0, -2.0)),
            revuz_density: Density::power(1.0, -2.0),
            d: 3,
        }
    }

    fn thinned_bessel2() -> ExtensionInput {
        let f = svc_selector(1.0, 2.0, 0.5).unwrap();
        bessel(2, thin_scale(&ScaleFunction::Log, &f).unwrap())
    }

    #[test]
    fn cases() {
        assert_eq!(
            classify_extension_case(&bessel(3, ScaleFunction::NegPower { alpha: 1.0 })).unwrap(),
            ExtensionCase::PolarOrigin
        );
        assert_eq!(classify_extension_case(&example2()).unwrap(), ExtensionCase::RegularOrigin);
        let tail = dyadic_selector(1.0, 0.5, 0.5).unwrap();
        let regular = bessel(2, thin_scale(&ScaleFunction::Log, &tail).unwrap());
        assert_eq!(classify_extension_case(&regular).unwrap(), ExtensionCase::RegularOrigin);
    }

    #[test]
    fn lebesgue_part_of_linear_thinning() {
        let f = svc_selector(1.0, 2.0, 0.5).unwrap();
        let input = bessel(2, thin_scale(&ScaleFunction::Affine { a: 1.0, b: 0.0 }, &f).unwrap());
        let dec = decompose_qtilde(&input).unwrap();
        let v = dec.lebesgue_integral(|g| g, 1.0, 2.0).unwrap();
        assert!((v - 0.5).abs() < 1e-9, "{v}");
        // 1.5 is the centre of the first removed gap, so it lies in F
        for x in [0.5, 1.5, 3.0] {
            assert!(!dec.is_singular(dec.p_tilde(x).unwrap()).unwrap());
        }
    }

    #[test]
    fn bessel3_closed_form() {
        let ext = build_extension(&bessel(3, ScaleFunction::NegPower { alpha: 1.0 })).unwrap();
        assert!(ext.identity_case());
        let l = ext.length().to_f64();
        assert!((l - 1.0).abs() < 1e-12, "{l}");
        for &x in &[0.05, 0.3, 1.0, 4.0, 50.0] {
            let h = ext.h(x).unwrap();
            let want = (-1.0 / x).exp();
            assert!((h - want).abs() <= 1e-10 * want, "{x}: {h} vs {want}");
        }
    }

    #[test]
    fn example2_closed_form() {
        let ext = build_extension(&example2()).unwrap();
        assert_eq!(ext.case(), ExtensionCase::RegularOrigin);
        assert_eq!(ext.length(), ExtReal::PosInf);
        let ts = (-1.0 + 33f64.sqrt()) / 8.0;
        let want = |r: f64| {
            if r <= ts {
                0.5 * r * r
            } else {
                0.5 * ts * ts + 0.5 * ((4.0 * r + 1.0) / (4.0 * ts + 1.0)).ln()
            }
        };
        for &r in &[0.1, 0.4, ts, 1.0, 10.0, 1e4] {
            let v = ext.q_hat(r).unwrap();
            assert!((v - want(r)).abs() <= 1e-10 * want(r).max(1.0), "{r}: {v} vs {}", want(r));
        }
    }

    #[test]
    fn thinned_bessel2_closed_form() {
        let ext = build_extension(&thinned_bessel2()).unwrap();
        assert_eq!(ext.case(), ExtensionCase::PolarOrigin);
        assert!(!ext.identity_case());
        assert_eq!(ext.length(), ExtReal::PosInf);
        let p = &ext.input().p_tilde;
        for &x in &[0.2, 1.0, 1.3, 1.7, 2.0, 5.0] {
            let want = p.eval(x).unwrap().exp();
            let h = ext.h(x).unwrap();
            assert!((h - want).abs() <= 1e-9 * want, "{x}: {h} vs {want}");
        }
    }

    #[test]
    fn invariants_on_fine_grid() {
        for input in [example2(), thinned_bessel2()] {
            let ext = build_extension(&input).unwrap();
            let rep = ext.check_invariants(&default_grid(200)).unwrap();
            assert!(rep.passed, "{rep:?}");
        }
    }

    #[test]
    fn regular_thinned_origin() {
        let tail = dyadic_selector(1.0, 0.5, 0.5).unwrap();
        let ext = build_extension(&bessel(2, thin_scale(&ScaleFunction::Log, &tail).unwrap())).unwrap();
        assert_eq!(ext.case(), ExtensionCase::RegularOrigin);
        assert!((ext.shift() + 0.68168).abs() < 1e-4);
        let rep = ext.check_invariants(&default_grid(30)).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn hitting_roundtrip() {
        let ext = build_extension(&thinned_bessel2()).unwrap();
        let r = roundtrip_hitting(&ext, 1.5, 0.5, 3.0, 0.02, &McConfig::new(4000, 9)).unwrap();
        assert!(r.agree, "{r:?}");
    }
}
