//! Acceptance suite: nine checks with closed-form or independent oracles.
//!
//! The report holds estimates, oracles and verdicts only, so two runs with the
//! same configuration serialize to identical bytes.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::catalogue::{bessel, brownian_skew, example2, svc_subspace};
use crate::diffusion::{classify_endpoint, classify_global, hitting_probability, DiffusionSpec, Endpoint};
use crate::error::{Error, Result};
use crate::extension::{build_extension, default_grid, roundtrip_absorption, roundtrip_hitting, ExtensionInput};
use crate::montecarlo::{run_chunks, McConfig, McSummary};
use crate::quad::gauss_legendre;
use crate::sim::{estimate_hitting, NaturalScaleModel, SkewSampler};
use crate::skew::{check_subspace_criterion, energy_tensor, AngularTest, RadialTest, TensorTestFunction};
use crate::sphere::SphereWalker;
use crate::ExitFlag;

/// Standard errors allowed between an estimate and its oracle.
pub const Z_TOL: f64 = 3.0;
pub const CRITERION_TOL: f64 = 1e-9;
pub const ENERGY_TOL: f64 = 1e-4;
pub const IDENTITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerifyConfig {
    pub n: usize,
    pub seed: u64,
    pub chunks: usize,
    /// Grid size of the extension identity check.
    pub grid_points: usize,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n: 100_000,
            seed: 42,
            chunks: crate::montecarlo::DEFAULT_CHUNKS,
            grid_points: 1000,
        }
    }
}

impl VerifyConfig {
    fn mc(&self, salt: u64) -> McConfig {
        McConfig {
            n: self.n,
            seed: self.seed.wrapping_add(salt),
            chunks: self.chunks,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Check {
    Hitting,
    Classification,
    SubspaceHitting,
    SubspaceCriterion,
    Energy,
    Sphere,
    SkewProduct,
    Extension,
    Determinism,
}

impl Check {
    pub const ALL: [Check; 9] = [
        Check::Hitting,
        Check::Classification,
        Check::SubspaceHitting,
        Check::SubspaceCriterion,
        Check::Energy,
        Check::Sphere,
        Check::SkewProduct,
        Check::Extension,
        Check::Determinism,
    ];

    pub fn id(self) -> usize {
        Check::ALL.iter().position(|&c| c == self).expect("listed") + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            Check::Hitting => "hitting",
            Check::Classification => "classification",
            Check::SubspaceHitting => "subspace-hitting",
            Check::SubspaceCriterion => "subspace-criterion",
            Check::Energy => "energy",
            Check::Sphere => "sphere",
            Check::SkewProduct => "skew-product",
            Check::Extension => "extension",
            Check::Determinism => "determinism",
        }
    }

    pub fn parse(s: &str) -> Result<Check> {
        Check::ALL
            .into_iter()
            .find(|c| c.name() == s || c.id().to_string() == s)
            .ok_or_else(|| Error::Param(format!("unknown check `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub id: usize,
    pub name: String,
    pub passed: bool,
    pub details: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub config: VerifyConfig,
    pub checks: Vec<CheckResult>,
    pub passed: bool,
}

impl VerifyReport {
    /// One `criterion N name: PASS|FAIL` line per check.
    pub fn summary_lines(&self) -> Vec<String> {
        self.checks
            .iter()
            .map(|c| format!("criterion {} {}: {}", c.id, c.name, if c.passed { "PASS" } else { "FAIL" }))
            .collect()
    }
}

fn mc_json(s: &McSummary, target: f64) -> Value {
    json!({
        "estimate": s.estimate,
        "stderr": s.stderr,
        "target": target,
        "z": s.z_score(target),
    })
}

fn result(check: Check, passed: bool, details: Value) -> CheckResult {
    CheckResult {
        id: check.id(),
        name: check.name().into(),
        passed,
        details,
    }
}

/// Step giving `cells` natural-scale cells across `(p(a), p(b))`.
fn step_for<M: NaturalScaleModel + ?Sized>(model: &M, a: f64, b: f64, cells: f64) -> Result<f64> {
    Ok((model.to_natural(b)? - model.to_natural(a)?) / cells)
}

fn hitting_check(check: Check, spec: &DiffusionSpec, (a, x, b): (f64, f64, f64), cfg: &VerifyConfig, target: Option<f64>) -> Result<CheckResult> {
    let formula = hitting_probability(spec, x, a, b)?;
    let h = step_for(spec, a, b, 96.0)?;
    let est = estimate_hitting(spec, x, a, b, h, &cfg.mc(check.id() as u64))?;
    let target = target.unwrap_or(formula);
    let passed = est.within(target, Z_TOL) && (formula - target).abs() <= 1e-12;
    Ok(result(
        check,
        passed,
        json!({
            "interval": [a, b],
            "x": x,
            "step": h,
            "cells": 96,
            "formula": formula,
            "mc": mc_json(&est, target),
        }),
    ))
}

pub fn check_hitting(cfg: &VerifyConfig) -> Result<CheckResult> {
    hitting_check(Check::Hitting, &bessel(3)?, (0.5, 1.0, 2.0), cfg, Some(2.0 / 3.0))
}

pub fn check_classification() -> Result<CheckResult> {
    let b2 = classify_global(&bessel(2)?)?;
    let b3 = classify_global(&bessel(3)?)?;
    let e2 = example2(1.0)?;
    let g2 = classify_global(&e2)?;
    let lower = classify_endpoint(&e2, Endpoint::Lower, 1.0)?;
    let passed = b2.recurrent
        && b2.conservative
        && !b2.transient
        && b3.transient
        && b3.conservative
        && !b3.recurrent
        && g2.transient
        && !g2.conservative
        && lower.approachable_finite_time;
    Ok(result(
        Check::Classification,
        passed,
        json!({
            "bessel(2)": b2,
            "bessel(3)": b3,
            "example2(1)": g2,
            "example2(1) lower": lower,
        }),
    ))
}

pub fn check_subspace_hitting(cfg: &VerifyConfig) -> Result<CheckResult> {
    let (candidate, _) = svc_subspace(2, 0.5, 1.0, 2.0)?;
    hitting_check(Check::SubspaceHitting, &candidate.radial, (0.5, 1.5, 3.0), cfg, None)
}

pub fn check_subspace_criterion_suite() -> Result<CheckResult> {
    let (candidate, base) = svc_subspace(2, 0.5, 1.0, 2.0)?;
    let thinned = check_subspace_criterion(&candidate, &base)?;
    let mut doubled = candidate.clone();
    doubled.revuz_density = doubled.revuz_density.scaled(2.0);
    doubled.sphere_time_scale = 0.5;
    let twice = check_subspace_criterion(&doubled, &base)?;
    let mut other_speed = candidate.clone();
    other_speed.radial.speed.density = other_speed.radial.speed.density.scaled(1.5);
    let differ = check_subspace_criterion(&other_speed, &base)?;
    let near = |c: Option<f64>, t: f64| c.is_some_and(|c| (c - t).abs() <= CRITERION_TOL);
    let passed = thinned.is_subspace
        && near(thinned.c, 1.0)
        && thinned.proper == Some(true)
        && twice.is_subspace
        && near(twice.c, 2.0)
        && twice.equivalent_representation
        && !differ.is_subspace;
    Ok(result(
        Check::SubspaceCriterion,
        passed,
        json!({ "thinned": thinned, "doubled_revuz": twice, "different_speed": differ }),
    ))
}

/// `1/2 int |grad u|^2 dx` over the shell `a < |x| < b` in `R^3` for `u = u1(|x|) x_1/|x|`,
/// with central-difference gradients and a product Gauss rule.
pub fn brute_force_energy(radial: &RadialTest) -> f64 {
    let (a, b) = radial.support();
    let u = |p: [f64; 3]| {
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        radial.eval(r).0 * p[0] / r
    };
    let (gx, gw) = gauss_legendre(12);
    let (cx, cw) = gauss_legendre(24);
    let panels = 24;
    let n_phi = 48;
    let step = 1e-5;
    let mut total = 0.0;
    for k in 0..panels {
        let lo = a + (b - a) * k as f64 / panels as f64;
        let half = 0.5 * (b - a) / panels as f64;
        for (&t, &wt) in gx.iter().zip(&gw) {
            let r = lo + half * (1.0 + t);
            for (&c, &wc) in cx.iter().zip(&cw) {
                let s = (1.0 - c * c).sqrt();
                for j in 0..n_phi {
                    let phi = 2.0 * std::f64::consts::PI * j as f64 / n_phi as f64;
                    let p = [r * c, r * s * phi.cos(), r * s * phi.sin()];
                    let mut g2 = 0.0;
                    for i in 0..3 {
                        let (mut up, mut dn) = (p, p);
                        up[i] += step;
                        dn[i] -= step;
                        let d = (u(up) - u(dn)) / (2.0 * step);
                        g2 += d * d;
                    }
                    let w = wt * half * wc * (2.0 * std::f64::consts::PI / n_phi as f64) * r * r;
                    total += w * g2;
                }
            }
        }
    }
    0.5 * total
}

pub fn check_energy() -> Result<CheckResult> {
    let skew = brownian_skew(3)?;
    let radial = RadialTest::Bump { a: 1.0, b: 2.0 };
    let u = TensorTestFunction::new(radial, AngularTest::Coordinate { i: 0 });
    let formula = energy_tensor(&skew, &u)?;
    let brute = brute_force_energy(&radial);
    let rel = (formula - brute).abs() / brute.abs();
    Ok(result(
        Check::Energy,
        rel <= ENERGY_TOL,
        json!({ "energy_tensor": formula, "brute_force": brute, "relative_error": rel }),
    ))
}

pub const SPHERE_TIMES: [f64; 3] = [0.25, 0.5, 1.0];

pub fn check_sphere(cfg: &VerifyConfig) -> Result<CheckResult> {
    let theta0 = [0.0, 0.0, 1.0];
    let dt = 1e-3;
    let est = run_chunks(
        &cfg.mc(Check::Sphere.id() as u64),
        SPHERE_TIMES.len(),
        || SphereWalker::new(&theta0, dt).expect("unit start"),
        |w, rng, out| {
            w.reset(&theta0);
            for (o, &t) in out.iter_mut().zip(&SPHERE_TIMES) {
                w.advance_to(rng, t);
                *o = w.theta()[2];
            }
            Ok(())
        },
    )?;
    let rows: Vec<Value> = SPHERE_TIMES
        .iter()
        .zip(&est)
        .map(|(&t, s)| json!({ "t": t, "mc": mc_json(s, (-t).exp()) }))
        .collect();
    let passed = SPHERE_TIMES.iter().zip(&est).all(|(&t, s)| s.within((-t).exp(), Z_TOL));
    Ok(result(Check::Sphere, passed, json!({ "dt": dt, "times": rows })))
}

pub const SKEW_HORIZON: f64 = 0.25;

pub fn check_skew_product(cfg: &VerifyConfig) -> Result<CheckResult> {
    let skew = brownian_skew(2)?;
    let h = 0.02;
    let sampler = SkewSampler::new(&skew, 1.0, &[1.0, 0.0], SKEW_HORIZON, h, 1e-3, 10_000_000)?;
    let walk = run_chunks(
        &cfg.mc(Check::SkewProduct.id() as u64),
        4,
        || sampler.scratch(),
        |scratch, rng, out| {
            let (r, flag, _) = sampler.sample(rng, scratch)?;
            if flag == ExitFlag::BudgetExhausted {
                return Err(Error::InvariantViolation("skew walk exhausted its step budget".into()));
            }
            let th = scratch.1.theta();
            let (x1, x2) = (r * th[0], r * th[1]);
            out.copy_from_slice(&[x1, x2, x1 * x1, x2 * x2]);
            Ok(())
        },
    )?;
    let sd = SKEW_HORIZON.sqrt();
    let direct = run_chunks(&cfg.mc(Check::SkewProduct.id() as u64 + 1000), 4, || (), |_, rng, out| {
        let x1 = 1.0 + sd * rng.sample::<f64, _>(StandardNormal);
        let x2 = sd * rng.sample::<f64, _>(StandardNormal);
        out.copy_from_slice(&[x1, x2, x1 * x1, x2 * x2]);
        Ok(())
    })?;
    let names = ["E X1", "E X2", "E X1^2", "E X2^2"];
    let exact = [1.0, 0.0, 1.0 + SKEW_HORIZON, SKEW_HORIZON];
    let mut passed = true;
    let mut rows = Vec::new();
    for i in 0..4 {
        let (w, d) = (walk[i], direct[i]);
        let se = (w.stderr.powi(2) + d.stderr.powi(2)).sqrt();
        let z = (w.estimate - d.estimate).abs() / se;
        passed &= z <= Z_TOL;
        rows.push(json!({
            "moment": names[i],
            "skew": w.estimate,
            "skew_stderr": w.stderr,
            "direct": d.estimate,
            "direct_stderr": d.stderr,
            "z": z,
            "exact": exact[i],
        }));
    }
    Ok(result(Check::SkewProduct, passed, json!({ "t": SKEW_HORIZON, "step": h, "moments": rows })))
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(tau_0 <= T)` for Brownian motion with drift `-gamma` started at `x`.
pub fn drifted_absorption(gamma: f64, x: f64, horizon: f64) -> f64 {
    let s = horizon.sqrt();
    normal_cdf((gamma * horizon - x) / s) + (2.0 * gamma * x).exp() * normal_cdf((-x - gamma * horizon) / s)
}

pub fn check_extension(cfg: &VerifyConfig) -> Result<CheckResult> {
    let e2 = example2(1.0)?;
    let e2_input = ExtensionInput {
        p_tilde: e2.scale.clone(),
        l: e2.speed,
        revuz_density: crate::Density::power(1.0, -2.0),
        d: 3,
    };
    let (candidate, _) = svc_subspace(2, 0.5, 1.0, 2.0)?;
    let thin_input = ExtensionInput::from_skew(&candidate)?;
    let grid = default_grid(cfg.grid_points);
    let mut passed = true;
    let mut rows = Vec::new();
    for (k, (name, input, (a, x, b))) in [
        ("example2(1)", e2_input, (0.5, 1.0, 1.5)),
        ("svc-subspace(2,0.5,1,2)", thin_input, (0.5, 1.5, 3.0)),
    ]
    .into_iter()
    .enumerate()
    {
        let ext = build_extension(&input)?;
        let inv = ext.check_invariants(&grid)?;
        let h = step_for(ext.spec(), a, b, 96.0)?;
        let trip = roundtrip_hitting(&ext, x, a, b, h, &cfg.mc(Check::Extension.id() as u64 + k as u64))?;
        passed &= inv.passed && inv.identity_error <= IDENTITY_TOL && trip.agree;
        rows.push(json!({
            "input": name,
            "case": ext.case(),
            "length": ext.length(),
            "invariants": inv,
            "roundtrip": trip,
        }));
        if k == 0 {
            let (x0, horizon) = (0.5, 0.5);
            let mc = McConfig {
                n: (cfg.n / 5).max(1),
                ..cfg.mc(Check::Extension.id() as u64 + 10)
            };
            let abs = roundtrip_absorption(&ext, x0, horizon, 0.02, 100_000_000, &mc)?;
            passed &= abs.agree;
            rows.push(json!({
                "input": name,
                "absorption": abs,
                "closed_form": drifted_absorption(1.0, x0, horizon),
            }));
        }
    }
    Ok(result(Check::Extension, passed, Value::Array(rows)))
}

fn run_checks(cfg: &VerifyConfig, checks: &[Check]) -> Result<Vec<CheckResult>> {
    checks
        .iter()
        .map(|c| match c {
            Check::Hitting => check_hitting(cfg),
            Check::Classification => check_classification(),
            Check::SubspaceHitting => check_subspace_hitting(cfg),
            Check::SubspaceCriterion => check_subspace_criterion_suite(),
            Check::Energy => check_energy(),
            Check::Sphere => check_sphere(cfg),
            Check::SkewProduct => check_skew_product(cfg),
            Check::Extension => check_extension(cfg),
            Check::Determinism => Err(Error::Param("determinism wraps the other checks".into())),
        })
        .collect()
}

/// Runs `checks`; the determinism check reruns the others on a two-worker pool
/// and compares the serialized results byte for byte.
pub fn run_verify(cfg: &VerifyConfig, checks: &[Check]) -> Result<VerifyReport> {
    let inner: Vec<Check> = checks.iter().copied().filter(|&c| c != Check::Determinism).collect();
    let mut results = run_checks(cfg, &inner)?;
    if checks.contains(&Check::Determinism) {
        let first = serde_json::to_vec(&results).map_err(|e| Error::ReportFailure(e.to_string()))?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(2)
            .build()
            .map_err(|e| Error::ReportFailure(e.to_string()))?;
        let again = pool.install(|| run_checks(cfg, &inner))?;
        let second = serde_json::to_vec(&again).map_err(|e| Error::ReportFailure(e.to_string()))?;
        results.push(result(
            Check::Determinism,
            first == second,
            json!({ "rerun_threads": 2, "bytes": first.len(), "identical": first == second }),
        ));
    }
    let passed = results.iter().all(|r| r.passed);
    Ok(VerifyReport {
        config: *cfg,
        checks: results,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn absorption_formula_limits() {
        assert!(drifted_absorption(1.0, 1.0, 1e-6) < 1e-12);
        assert!((drifted_absorption(1.0, 1.0, 1e6) - 1.0).abs() < 1e-9);
        let v = drifted_absorption(1.0, 1.0, 1.0);
        assert!((v - (0.5 + 1f64.exp().powi(2) * normal_cdf(-2.0))).abs() < 1e-15);
    }

    #[test]
    fn check_names_round_trip() {
        for c in Check::ALL {
            assert_eq!(Check::parse(c.name()).unwrap(), c);
            assert_eq!(Check::parse(&c.id().to_string()).unwrap(), c);
        }
    }

    #[test]
    fn brute_force_matches_formula_for_poly_bump() {
        let radial = RadialTest::PolyBump { a: 0.5, b: 1.5 };
        let u = TensorTestFunction::new(radial, AngularTest::Coordinate { i: 0 });
        let f = energy_tensor(&brownian_skew(3).unwrap(), &u).unwrap();
        let b = brute_force_energy(&radial);
        assert!((f - b).abs() <= 1e-6 * b, "{f} vs {b}");
    }
}
