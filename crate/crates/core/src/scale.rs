//! Scale functions on the half-line `(0, inf)`.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::error::{Error, Result};
use crate::ext::{ExtReal, Interval};
use crate::quad::{self, ShellRule, ShellVerdict};
use crate::selector::{BlockGeometry, DyadicTail, SubspaceSelector, SvcBlock};

/// Default relative tolerance of [`ScaleFunction::invert`].
pub const BISECTION_TOL: f64 = 1e-12;
/// Default tolerance for thinned-scale evaluation.
pub const EPS_TAIL: f64 = 1e-10;

/// Depth of the cached node-integral tree of each construction block.
const CACHE_DEPTH: usize = 10;
/// Dyadic-tail blocks kept in cache; deeper blocks are built on demand.
const TAIL_CACHE: usize = 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "kebab-case")]
pub enum ScaleFunction {
    /// `log x`
    Log,
    /// `x^alpha`
    Power { alpha: f64 },
    /// `-x^(-alpha) / alpha`
    NegPower { alpha: f64 },
    /// `exp(2 gamma x) / (4 gamma^2)`
    Exp { gamma: f64 },
    /// `a x + b`
    Affine { a: f64, b: f64 },
    /// `int_anchor^x density`
    IntegratedDensity { density: Density, anchor: f64 },
    /// `p~` with `dp~ = 1_F dp_base`.
    SelectorThinned(Arc<ThinnedScale>),
}

/// Whether a boundary verdict came from a closed form or from numerics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictSource {
    Analytic,
    Numeric,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaleLimit {
    pub value: ExtReal,
    pub source: VerdictSource,
}

impl ScaleLimit {
    fn analytic(v: f64) -> Self {
        Self {
            value: ExtReal::from_f64(v),
            source: VerdictSource::Analytic,
        }
    }
}

impl ScaleFunction {
    pub fn domain(&self) -> Interval {
        Interval::positive_half_line()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Param(format!("{what} in {self:?}")));
        match self {
            ScaleFunction::Log => Ok(()),
            ScaleFunction::Power { alpha } | ScaleFunction::NegPower { alpha } => {
                if *alpha > 0.0 && alpha.is_finite() {
                    Ok(())
                } else {
                    bad("exponent must be positive")
                }
            }
            ScaleFunction::Exp { gamma } => {
                if *gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    bad("gamma must be positive")
                }
            }
            ScaleFunction::Affine { a, b } => {
                if *a > 0.0 && a.is_finite() && b.is_finite() {
                    Ok(())
                } else {
                    bad("slope must be positive")
                }
            }
            ScaleFunction::IntegratedDensity { density, anchor } => {
                density.validate()?;
                if density.is_zero() {
                    return bad("density must be positive");
                }
                if *anchor > 0.0 && anchor.is_finite() {
                    Ok(())
                } else {
                    bad("anchor must be positive")
                }
            }
            ScaleFunction::SelectorThinned(t) => t.base.validate(),
        }
    }

    /// Families whose boundary behaviour is known in closed form.
    pub fn is_catalogued_family(&self) -> bool {
        matches!(
            self,
            ScaleFunction::Log
                | ScaleFunction::Power { .. }
                | ScaleFunction::NegPower { .. }
                | ScaleFunction::Exp { .. }
                | ScaleFunction::Affine { .. }
        )
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        if x > 0.0 && x < f64::INFINITY {
            Ok(())
        } else {
            Err(Error::Domain {
                x,
                lo: 0.0,
                hi: f64::INFINITY,
            })
        }
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.eval_unchecked(x))
    }

    pub(crate) fn eval_unchecked(&self, x: f64) -> f64 {
        match self {
            ScaleFunction::Log => x.ln(),
            ScaleFunction::Power { alpha } => x.powf(*alpha),
            ScaleFunction::NegPower { alpha } => -x.powf(-alpha) / alpha,
            ScaleFunction::Exp { gamma } => (2.0 * gamma * x).exp() / (4.0 * gamma * gamma),
            ScaleFunction::Affine { a, b } => a * x + b,
            ScaleFunction::IntegratedDensity { density, anchor } => {
                density.mass(*anchor, x).unwrap_or(f64::NAN)
            }
            ScaleFunction::SelectorThinned(t) => t.eval(x),
        }
    }

    /// `p'(x)`; `None` for thinned scales, which are not differentiable on the Cantor part.
    pub fn derivative(&self, x: f64) -> Option<f64> {
        Some(match self {
            ScaleFunction::Log => 1.0 / x,
            ScaleFunction::Power { alpha } => alpha * x.powf(alpha - 1.0),
            ScaleFunction::NegPower { alpha } => x.powf(-alpha - 1.0),
            ScaleFunction::Exp { gamma } => (2.0 * gamma * x).exp() / (2.0 * gamma),
            ScaleFunction::Affine { a, .. } => *a,
            ScaleFunction::IntegratedDensity { density, .. } => density.eval(x),
            ScaleFunction::SelectorThinned(_) => return None,
        })
    }

    /// `p(0+)`.
    pub fn lower_limit(&self) -> Result<ScaleLimit> {
        Ok(match self {
            ScaleFunction::Log | ScaleFunction::NegPower { .. } => ScaleLimit::analytic(f64::NEG_INFINITY),
            ScaleFunction::Power { .. } => ScaleLimit::analytic(0.0),
            ScaleFunction::Exp { gamma } => ScaleLimit::analytic(1.0 / (4.0 * gamma * gamma)),
            ScaleFunction::Affine { b, .. } => ScaleLimit::analytic(*b),
            ScaleFunction::IntegratedDensity { density, anchor } => {
                if density.finite_near_zero() {
                    ScaleLimit::analytic(-density.mass(0.0, *anchor)?)
                } else {
                    ScaleLimit::analytic(f64::NEG_INFINITY)
                }
            }
            ScaleFunction::SelectorThinned(t) => t.lower_limit()?,
        })
    }

    /// `p(inf-)`.
    pub fn upper_limit(&self) -> Result<ScaleLimit> {
        Ok(match self {
            ScaleFunction::Log
            | ScaleFunction::Power { .. }
            | ScaleFunction::Exp { .. }
            | ScaleFunction::Affine { .. } => ScaleLimit::analytic(f64::INFINITY),
            ScaleFunction::NegPower { .. } => ScaleLimit::analytic(0.0),
            ScaleFunction::IntegratedDensity { density, anchor } => {
                if density.finite_near_infinity() {
                    ScaleLimit::analytic(density.mass(*anchor, f64::INFINITY)?)
                } else {
                    ScaleLimit::analytic(f64::INFINITY)
                }
            }
            ScaleFunction::SelectorThinned(t) => t.upper_limit()?,
        })
    }

    /// Value at an interval endpoint: the one-sided limit at `0`/`inf`, the value inside the domain.
    pub fn value_at(&self, x: f64) -> Result<ExtReal> {
        if x <= 0.0 {
            return Ok(self.lower_limit()?.value);
        }
        if x == f64::INFINITY {
            return Ok(self.upper_limit()?.value);
        }
        Ok(ExtReal::Finite(self.eval_unchecked(x)))
    }

    /// `q(y) = p^{-1}(y)` by monotone bisection, `|p(x) - y| <= tol (1 + |y|)`.
    pub fn invert(&self, y: f64, tol: f64) -> Result<f64> {
        let lo_lim = self.lower_limit()?.value.to_f64();
        let hi_lim = self.upper_limit()?.value.to_f64();
        if !(y > lo_lim && y < hi_lim) {
            return Err(Error::Range {
                y,
                lo: lo_lim,
                hi: hi_lim,
            });
        }
        let f = |x: f64| self.eval_unchecked(x);
        let (mut lo, mut hi) = (1.0, 1.0);
        if f(1.0) < y {
            hi = 2.0;
            while f(hi) < y {
                lo = hi;
                hi *= 2.0;
                if !hi.is_finite() {
                    return Err(Error::NonConvergence {
                        tol,
                        iterations: 1024,
                        residual: y - f(lo),
                    });
                }
            }
        } else {
            lo = 0.5;
            while f(lo) >= y {
                hi = lo;
                lo *= 0.5;
                if lo == 0.0 {
                    return Err(Error::NonConvergence {
                        tol,
                        iterations: 1075,
                        residual: f(hi) - y,
                    });
                }
            }
        }
        let x = quad::bisect_increasing(f, y, lo, hi);
        let residual = (f(x) - y).abs();
        if residual > tol * (1.0 + y.abs()) {
            return Err(Error::NonConvergence {
                tol,
                iterations: 2000,
                residual,
            });
        }
        Ok(x)
    }

    pub fn thinned(&self) -> Option<&ThinnedScale> {
        match self {
            ScaleFunction::SelectorThinned(t) => Some(t),
            _ => None,
        }
    }
}

pub fn eval_scale(p: &ScaleFunction, x: f64) -> Result<f64> {
    p.eval(x)
}

pub fn invert_scale(p: &ScaleFunction, y: f64, tol: f64) -> Result<f64> {
    p.invert(y, tol)
}

/// `p~` with `dp~ = 1_F dp`. Thinning a thinned scale intersects the selectors.
pub fn thin_scale(p: &ScaleFunction, f: &SubspaceSelector) -> Result<ScaleFunction> {
    let t = match p.thinned() {
        Some(t) => ThinnedScale::new(t.base().clone(), t.selector().intersect(f)?)?,
        None if f.is_full() => return Ok(p.clone()),
        None => ThinnedScale::new(p.clone(), f.clone())?,
    };
    Ok(ScaleFunction::SelectorThinned(Arc::new(t)))
}

/// Node-integral cache of `int_C p'_base` for one construction block.
#[derive(Debug)]
struct BlockCache {
    geom: BlockGeometry,
    /// Heap-ordered whole-node integrals for levels `0..=depth`.
    full: Vec<f64>,
    depth: usize,
    /// `p(b) - p(a)` of the base.
    drop: f64,
}

impl BlockCache {
    fn build(base: &ScaleFunction, block: &SvcBlock, depth: usize) -> Self {
        let geom = block.geometry();
        let drop = base.eval_unchecked(block.b) - base.eval_unchecked(block.a);
        let w = |x: f64| base.derivative(x).expect("thinning base is differentiable");
        let n = (1usize << (depth + 1)) - 1;
        let mut full = vec![0.0; n];
        let first = (1usize << depth) - 1;
        let tol = 1e-14 * drop.abs().max(1e-300) * 0.5f64.powi(depth as i32);
        for (k, s) in geom.node_starts(depth).into_iter().enumerate() {
            full[first + k] = geom.full(&w, s, depth, tol);
        }
        for j in (0..depth).rev() {
            let off = (1usize << j) - 1;
            let child = (1usize << (j + 1)) - 1;
            for k in 0..(1usize << j) {
                full[off + k] = full[child + 2 * k] + full[child + 2 * k + 1];
            }
        }
        Self {
            geom,
            full,
            depth,
            drop,
        }
    }

    fn total(&self) -> f64 {
        self.full[0]
    }

    /// `int_{C cap (a, x]} p'_base`.
    fn partial(&self, base: &ScaleFunction, x: f64) -> f64 {
        let w = |y: f64| base.derivative(y).expect("thinning base is differentiable");
        let tol = 1e-3 * EPS_TAIL.min(1e-12 * self.drop.abs().max(1.0));
        self.geom.partial_with(&w, x, tol, |s, level, index| {
            if level <= self.depth {
                self.full[(1usize << level) - 1 + index]
            } else {
                self.geom.full(&w, s, level, tol * 0.5f64.powi(level as i32))
            }
        })
    }

    /// `p_base`-measure of `F` inside the block.
    fn f_mass(&self) -> f64 {
        self.drop - self.total()
    }
}

/// A scale function thinned by a selector.
#[derive(Debug, Serialize, Deserialize)]
#[serde(try_from = "ThinnedWire", into = "ThinnedWire")]
pub struct ThinnedScale {
    base: ScaleFunction,
    selector: SubspaceSelector,
    blocks: Vec<BlockCache>,
    tail: Vec<BlockCache>,
    /// `prefix[k] = sum_{i<k} F-mass(tail block i)`.
    tail_prefix: Vec<f64>,
    lower: OnceLock<Result<ScaleLimit>>,
    upper: OnceLock<Result<ScaleLimit>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ThinnedWire {
    base: ScaleFunction,
    selector: SubspaceSelector,
}

impl TryFrom<ThinnedWire> for ThinnedScale {
    type Error = Error;
    fn try_from(w: ThinnedWire) -> Result<Self> {
        ThinnedScale::new(w.base, w.selector)
    }
}

impl From<ThinnedScale> for ThinnedWire {
    fn from(t: ThinnedScale) -> Self {
        ThinnedWire {
            base: t.base,
            selector: t.selector,
        }
    }
}

impl Clone for ThinnedScale {
    fn clone(&self) -> Self {
        ThinnedScale::new(self.base.clone(), self.selector.clone()).expect("already validated")
    }
}

impl PartialEq for ThinnedScale {
    fn eq(&self, other: &Self) -> bool {
        self.base == other.base && self.selector == other.selector
    }
}

impl ThinnedScale {
    pub fn new(base: ScaleFunction, selector: SubspaceSelector) -> Result<Self> {
        if base.thinned().is_some() {
            return Err(Error::Structural(
                "thinning base must be differentiable; merge selectors instead".into(),
            ));
        }
        base.validate()?;
        let domain = base.domain();
        for b in selector.blocks() {
            if !(domain.contains(b.a) && domain.contains(b.b)) {
                return Err(Error::Domain {
                    x: if domain.contains(b.a) { b.b } else { b.a },
                    lo: domain.lo.to_f64(),
                    hi: domain.hi.to_f64(),
                });
            }
        }
        let blocks = selector
            .blocks()
            .iter()
            .map(|b| BlockCache::build(&base, b, CACHE_DEPTH))
            .collect();
        let (tail, tail_prefix) = match selector.tail() {
            Some(t) => {
                let caches: Vec<BlockCache> = (0..TAIL_CACHE)
                    .map(|k| BlockCache::build(&base, &t.block(k), CACHE_DEPTH))
                    .collect();
                let mut prefix = vec![0.0];
                for c in &caches {
                    let last = *prefix.last().expect("non-empty");
                    prefix.push(last + c.f_mass());
                }
                (caches, prefix)
            }
            None => (Vec::new(), Vec::new()),
        };
        Ok(Self {
            base,
            selector,
            blocks,
            tail,
            tail_prefix,
            lower: OnceLock::new(),
            upper: OnceLock::new(),
        })
    }

    pub fn base(&self) -> &ScaleFunction {
        &self.base
    }

    pub fn selector(&self) -> &SubspaceSelector {
        &self.selector
    }

    fn tail_spec(&self) -> Option<&DyadicTail> {
        self.selector.tail()
    }

    fn tail_block(&self, k: usize) -> std::borrow::Cow<'_, BlockCache> {
        match self.tail.get(k) {
            Some(c) => std::borrow::Cow::Borrowed(c),
            None => {
                let t = self.tail_spec().expect("tail present");
                std::borrow::Cow::Owned(BlockCache::build(&self.base, &t.block(k), 4))
            }
        }
    }

    /// Sum of `F`-masses of tail blocks `0..k`.
    fn tail_prefix(&self, k: usize) -> f64 {
        if k < self.tail_prefix.len() {
            return self.tail_prefix[k];
        }
        let mut s = *self.tail_prefix.last().unwrap_or(&0.0);
        for i in self.tail.len()..k {
            s += self.tail_block(i).f_mass();
        }
        s
    }

    pub(crate) fn eval(&self, x: f64) -> f64 {
        if let Some(t) = self.tail_spec() {
            if x < t.top {
                let k = t.block_index(x);
                let blk = self.tail_block(k);
                let b = blk.geom.block.b;
                let f_above =
                    (self.base.eval_unchecked(b) - self.base.eval_unchecked(x)) - (blk.total() - blk.partial(&self.base, x));
                return self.base.eval_unchecked(t.top) - self.tail_prefix(k) - f_above;
            }
        }
        let mut v = self.base.eval_unchecked(x);
        for c in &self.blocks {
            let blk = &c.geom.block;
            if x >= blk.b {
                v -= c.total();
            } else if x > blk.a {
                v -= c.partial(&self.base, x);
            } else {
                break;
            }
        }
        v
    }

    fn lower_limit(&self) -> Result<ScaleLimit> {
        self.lower.get_or_init(|| self.compute_lower_limit()).clone()
    }

    fn upper_limit(&self) -> Result<ScaleLimit> {
        self.upper.get_or_init(|| self.compute_upper_limit()).clone()
    }

    fn compute_lower_limit(&self) -> Result<ScaleLimit> {
        let base = self.base.lower_limit()?;
        let Some(t) = self.tail_spec() else {
            return Ok(base);
        };
        let top = self.base.eval_unchecked(t.top);
        if base.value.is_finite() {
            // F-masses of the tail are dominated by the base increments.
            let total = (0..)
                .map(|k| self.tail_block(k).f_mass())
                .take(4096)
                .scan(0.0, |s, v| {
                    *s += v;
                    Some((*s, v))
                })
                .find(|&(s, v)| v <= 1e-16 * s.abs().max(1.0))
                .map(|(s, _)| s)
                .unwrap_or(f64::NAN);
            return Ok(ScaleLimit {
                value: ExtReal::Finite(top - total),
                source: VerdictSource::Numeric,
            });
        }
        let verdict = quad::dyadic_shell_test(|k| Ok(self.tail_block(k).f_mass()), ShellRule::default())?;
        Ok(ScaleLimit {
            value: match verdict {
                ShellVerdict::Convergent(s) => ExtReal::Finite(top - s),
                ShellVerdict::Divergent => ExtReal::NegInf,
            },
            source: VerdictSource::Numeric,
        })
    }

    fn compute_upper_limit(&self) -> Result<ScaleLimit> {
        let base = self.base.upper_limit()?;
        Ok(match base.value {
            ExtReal::Finite(v) => ScaleLimit {
                value: ExtReal::Finite(v - self.blocks.iter().map(BlockCache::total).sum::<f64>()),
                source: base.source,
            },
            other => ScaleLimit {
                value: other,
                source: base.source,
            },
        })
    }
}

impl Clone for BlockCache {
    fn clone(&self) -> Self {
        Self {
            geom: self.geom.clone(),
            full: self.full.clone(),
            depth: self.depth,
            drop: self.drop,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::selector::{dyadic_selector, svc_selector};

    #[test]
    fn catalogue_values() {
        assert_eq!(eval_scale(&ScaleFunction::Log, 1.0).unwrap(), 0.0);
        assert_eq!(eval_scale(&ScaleFunction::NegPower { alpha: 1.0 }, 2.0).unwrap(), -0.5);
        let ex = ScaleFunction::Exp { gamma: 1.0 };
        assert!((ex.eval(0.5).unwrap() - 1f64.exp() / 4.0).abs() < 1e-15);
    }

    #[test]
    fn inversion_examples() {
        assert!((invert_scale(&ScaleFunction::Log, 0.0, BISECTION_TOL).unwrap() - 1.0).abs() < 1e-15);
        let x = invert_scale(&ScaleFunction::NegPower { alpha: 1.0 }, -2.0, BISECTION_TOL).unwrap();
        assert!((x - 0.5).abs() < 1e-15);
    }

    #[test]
    fn domain_and_range_errors() {
        assert!(matches!(ScaleFunction::Log.eval(0.0), Err(Error::Domain { .. })));
        assert!(matches!(ScaleFunction::Log.eval(-1.0), Err(Error::Domain { .. })));
        let e = invert_scale(&ScaleFunction::NegPower { alpha: 1.0 }, 0.5, BISECTION_TOL);
        assert!(matches!(e, Err(Error::Range { .. })));
        let e = invert_scale(&ScaleFunction::Power { alpha: 2.0 }, -1.0, BISECTION_TOL);
        assert!(matches!(e, Err(Error::Range { .. })));
    }

    #[test]
    fn limits() {
        assert_eq!(ScaleFunction::Log.lower_limit().unwrap().value, ExtReal::NegInf);
        assert_eq!(ScaleFunction::NegPower { alpha: 1.0 }.upper_limit().unwrap().value, ExtReal::Finite(0.0));
        assert_eq!(ScaleFunction::Exp { gamma: 1.0 }.lower_limit().unwrap().value, ExtReal::Finite(0.25));
        let id = ScaleFunction::IntegratedDensity {
            density: Density::power(1.0, -2.0),
            anchor: 1.0,
        };
        assert_eq!(id.upper_limit().unwrap().value, ExtReal::Finite(1.0));
        assert_eq!(id.lower_limit().unwrap().value, ExtReal::NegInf);
    }

    fn thinned_linear() -> ScaleFunction {
        ScaleFunction::SelectorThinned(Arc::new(
            ThinnedScale::new(ScaleFunction::Affine { a: 1.0, b: -1.0 }, svc_selector(1.0, 2.0, 0.5).unwrap())
                .unwrap(),
        ))
    }

    #[test]
    fn thinned_linear_increment_is_removed_measure() {
        let p = thinned_linear();
        assert!(p.eval(2.0).unwrap().abs() - 0.5 < 1e-12);
        assert!((p.eval(2.0).unwrap() - 0.5).abs() < 1e-12);
        assert!((p.eval(1.0).unwrap() - 0.0).abs() < 1e-15);
        assert!((p.eval(3.0).unwrap() - p.eval(2.0).unwrap() - 1.0).abs() < 1e-12);
        // first removed interval is (1.375, 1.625); half of it lies below 1.5
        let mid = p.eval(1.5).unwrap();
        let below = p.eval(1.375).unwrap();
        assert!((mid - below - 0.125).abs() < 1e-12);
    }

    #[test]
    fn thinned_inversion_hits_value() {
        let p = thinned_linear();
        let x = p.invert(0.25, BISECTION_TOL).unwrap();
        assert!(x > 1.0 && x < 2.0);
        assert!((p.eval(x).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn dyadic_tail_gives_finite_origin_limit_for_log() {
        let p = ScaleFunction::SelectorThinned(Arc::new(
            ThinnedScale::new(ScaleFunction::Log, dyadic_selector(1.0, 0.5, 0.5).unwrap()).unwrap(),
        ));
        let lim = p.lower_limit().unwrap();
        let v = lim.value.finite().expect("finite limit");
        // F-mass of block k lies in [r_k ln... ] bounded by r_k = 0.5^(k+1), so the sum is below 1
        assert!(v < 0.0 && v > -1.0, "limit {v}");
        assert!(p.eval(1e-6).unwrap() > v);
        assert!((p.eval(1e-6).unwrap() - v) < 1e-5);
        assert_eq!(p.eval(2.0).unwrap(), 2f64.ln());
    }

    #[test]
    fn json_shape_and_roundtrip() {
        let s = serde_json::to_string(&ScaleFunction::NegPower { alpha: 1.0 }).unwrap();
        assert_eq!(s, r#"{"kind":"neg-power","params":{"alpha":1.0}}"#);
        let log: ScaleFunction = serde_json::from_str(r#"{"kind":"log"}"#).unwrap();
        assert_eq!(log, ScaleFunction::Log);
        let t = thinned_linear();
        let j = serde_json::to_string(&t).unwrap();
        let back: ScaleFunction = serde_json::from_str(&j).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.eval(1.7).unwrap(), t.eval(1.7).unwrap());
    }
}
