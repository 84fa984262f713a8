//! Selector sets `F` for regular-subspace scale surgery.
//!
//! A selector is a union of open intervals removed from fat (Smith-Volterra-
//! Cantor) constructions, together with everything outside the construction
//! blocks. The thinned scale function `p~` satisfies `dp~ = 1_F dp`; since the
//! complement of `F` is closed, nowhere dense and of positive Lebesgue measure
//! inside each block, `p~` is strictly increasing and the subspace is proper.
//!
//! Integrals over the fat Cantor set `C` of a block are evaluated by an
//! adaptive two-point Gauss rule matched to the exact mass and second moment
//! of Lebesgue measure restricted to `C` on every construction node.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ext::Interval;

/// Deepest construction level represented explicitly.
pub const MAX_DEPTH: usize = 60;

/// One Smith-Volterra-Cantor block on `(a, b)`: generation `n >= 1` removes
/// `2^(n-1)` open middle intervals of length `2 * ratio * (b - a) * 4^-n`,
/// so the removed total is `ratio * (b - a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvcBlock {
    pub a: f64,
    pub b: f64,
    pub ratio: f64,
}

/// Precomputed node geometry of a block.
#[derive(Debug, Clone)]
pub struct BlockGeometry {
    pub block: SvcBlock,
    /// `len[j]`: length of every level-`j` node.
    len: Vec<f64>,
    /// `gap[j]`: length of generation-`j` removed intervals (`gap[0] = 0`).
    gap: Vec<f64>,
    /// Standard deviation of Lebesgue-on-`C` (normalized) within a level-`j` node.
    sigma: Vec<f64>,
    /// Lebesgue measure of `C` inside a level-`j` node.
    cantor_mass: Vec<f64>,
}

impl SvcBlock {
    pub fn new(a: f64, b: f64, ratio: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Param(format!("svc block needs finite a < b, got ({a}, {b})")));
        }
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::Param(format!("removal ratio {ratio} not in (0, 1)")));
        }
        Ok(Self { a, b, ratio })
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn removed_measure(&self) -> f64 {
        self.ratio * self.width()
    }

    pub fn cantor_measure(&self) -> f64 {
        (1.0 - self.ratio) * self.width()
    }

    /// All removed intervals of generation `gen >= 1`, left to right.
    pub fn gaps(&self, gen: usize) -> Vec<(f64, f64)> {
        let geom = self.geometry();
        let mut starts = vec![self.a];
        for j in 1..gen {
            let shift = geom.len[j] + geom.gap[j];
            starts = starts.iter().flat_map(|&s| [s, s + shift]).collect();
        }
        starts
            .into_iter()
            .map(|s| {
                let g0 = s + geom.len[gen];
                (g0, g0 + geom.gap[gen])
            })
            .collect()
    }

    pub fn geometry(&self) -> BlockGeometry {
        let w = self.width();
        let mut len = vec![w];
        let mut gap = vec![0.0];
        for j in 1..=MAX_DEPTH + 1 {
            let g = 2.0 * self.ratio * w * 0.25f64.powi(j as i32);
            gap.push(g);
            len.push(0.5 * (len[j - 1] - g));
        }
        // Children sit at +-(len[j+1] + gap[j+1]) / 2 from the parent centre,
        // so the variance of the level-j node is the sum of squared offsets below it.
        let mut var = vec![0.0; MAX_DEPTH + 2];
        for j in (0..=MAX_DEPTH).rev() {
            let d = 0.5 * (len[j + 1] + gap[j + 1]);
            var[j] = var[j + 1] + d * d;
        }
        let sigma = var.iter().map(|v| v.sqrt()).collect();
        let c = self.cantor_measure();
        let cantor_mass = (0..=MAX_DEPTH + 1).map(|j| c * 0.5f64.powi(j as i32)).collect();
        BlockGeometry {
            block: self.clone(),
            len,
            gap,
            sigma,
            cantor_mass,
        }
    }
}

impl BlockGeometry {
    pub fn node_len(&self, level: usize) -> f64 {
        self.len[level]
    }

    pub fn gap_len(&self, level: usize) -> f64 {
        self.gap[level]
    }

    /// Left endpoints of all level-`level` nodes, left to right.
    pub fn node_starts(&self, level: usize) -> Vec<f64> {
        let mut starts = vec![self.block.a];
        for j in 1..=level {
            let shift = self.len[j] + self.gap[j];
            starts = starts.iter().flat_map(|&s| [s, s + shift]).collect();
        }
        starts
    }

    fn right_shift(&self, level: usize) -> f64 {
        // offset of the right child of a level-`level` node
        self.len[level + 1] + self.gap[level + 1]
    }

    #[inline]
    fn two_point<W: Fn(f64) -> f64>(&self, w: &W, start: f64, level: usize) -> f64 {
        let m = start + 0.5 * self.len[level];
        let s = self.sigma[level];
        0.5 * self.cantor_mass[level] * (w(m - s) + w(m + s))
    }

    /// `int_{C cap node} w dx` for the level-`level` node starting at `start`.
    pub fn full<W: Fn(f64) -> f64>(&self, w: &W, start: f64, level: usize, tol: f64) -> f64 {
        let coarse = self.two_point(w, start, level);
        self.refine(w, start, level, coarse, tol)
    }

    fn refine<W: Fn(f64) -> f64>(&self, w: &W, start: f64, level: usize, coarse: f64, tol: f64) -> f64 {
        let right = start + self.right_shift(level);
        let l = self.two_point(w, start, level + 1);
        let r = self.two_point(w, right, level + 1);
        let fine = l + r;
        if (fine - coarse).abs() <= tol.max(1e-14 * fine.abs()) || level + 1 >= MAX_DEPTH {
            return fine;
        }
        self.refine(w, start, level + 1, l, 0.5 * tol) + self.refine(w, right, level + 1, r, 0.5 * tol)
    }

    /// `int_{C cap (a, x]} w dx`. `full_node(start, level, index)` supplies whole-node
    /// integrals (possibly from a cache).
    pub fn partial_with<W, N>(&self, w: &W, x: f64, tol: f64, full_node: N) -> f64
    where
        W: Fn(f64) -> f64,
        N: Fn(f64, usize, usize) -> f64,
    {
        let mut acc = 0.0;
        let mut start = self.block.a;
        let mut level = 0usize;
        let mut index = 0usize;
        loop {
            let len = self.len[level];
            if x <= start {
                return acc;
            }
            if x >= start + len {
                return acc + full_node(start, level, index);
            }
            let wx = w(x).abs();
            if level + 1 >= MAX_DEPTH || 2.0 * self.cantor_mass[level] * wx <= tol {
                return acc + full_node(start, level, index) * (x - start) / len;
            }
            let left_end = start + self.len[level + 1];
            let right_start = left_end + self.gap[level + 1];
            if x <= left_end {
                level += 1;
                index *= 2;
            } else {
                acc += full_node(start, level + 1, 2 * index);
                if x < right_start {
                    return acc;
                }
                start = right_start;
                level += 1;
                index = 2 * index + 1;
            }
        }
    }

    pub fn partial<W: Fn(f64) -> f64>(&self, w: &W, x: f64, tol: f64) -> f64 {
        self.partial_with(w, x, tol, |s, l, _| self.full(w, s, l, tol * 0.5f64.powi(l as i32)))
    }

    /// Lebesgue measure of `C cap (a, x]`.
    pub fn cantor_measure_below(&self, x: f64) -> f64 {
        let one = |_: f64| 1.0;
        self.partial_with(&one, x, 1e-15, |_, l, _| self.cantor_mass[l])
    }

    /// Some removed interval of generation at most `max_gen` contained in `(x, y)`.
    pub fn gap_inside(&self, x: f64, y: f64, max_gen: usize) -> Option<(f64, f64, usize)> {
        self.search_gap(self.block.a, 0, x, y, max_gen)
    }

    fn search_gap(&self, start: f64, level: usize, x: f64, y: f64, max_gen: usize) -> Option<(f64, f64, usize)> {
        let end = start + self.len[level];
        if level >= max_gen || end <= x || start >= y {
            return None;
        }
        let g0 = start + self.len[level + 1];
        let g1 = g0 + self.gap[level + 1];
        if g0 >= x && g1 <= y {
            return Some((g0, g1, level + 1));
        }
        self.search_gap(start, level + 1, x, y, max_gen)
            .or_else(|| self.search_gap(g1, level + 1, x, y, max_gen))
    }
}

/// Blocks `(top 2^-(k+1), top 2^-k)` for `k >= 0` with removal ratio
/// `ratio * decay^k`, accumulating at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DyadicTail {
    pub top: f64,
    pub ratio: f64,
    pub decay: f64,
}

impl DyadicTail {
    pub fn block(&self, k: usize) -> SvcBlock {
        let b = self.top * 0.5f64.powi(k as i32);
        SvcBlock {
            a: 0.5 * b,
            b,
            ratio: self.ratio * self.decay.powi(k as i32),
        }
    }

    /// Index of the block containing `x in (0, top)`.
    pub fn block_index(&self, x: f64) -> usize {
        let mut k = (self.top / x).log2().floor().max(0.0) as usize;
        // guard against rounding at block edges
        while k > 0 && x > self.block(k).b {
            k -= 1;
        }
        while x <= self.block(k).a {
            k += 1;
        }
        k
    }
}

/// Wire form of one selector piece.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SelectorPiece {
    Full,
    Svc { a: f64, b: f64, ratio: f64 },
    DyadicSvc { top: f64, ratio: f64, decay: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SelectorWire {
    One(SelectorPiece),
    Many(Vec<SelectorPiece>),
}

/// The set `F = {dp~/dp = 1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SelectorWire", into = "SelectorWire")]
pub struct SubspaceSelector {
    blocks: Vec<SvcBlock>,
    tail: Option<DyadicTail>,
    span: Option<Interval>,
}

impl TryFrom<SelectorWire> for SubspaceSelector {
    type Error = Error;

    fn try_from(w: SelectorWire) -> Result<Self> {
        let pieces = match w {
            SelectorWire::One(p) => vec![p],
            SelectorWire::Many(v) => v,
        };
        let mut blocks = Vec::new();
        let mut tail = None;
        for p in pieces {
            match p {
                SelectorPiece::Full => {}
                SelectorPiece::Svc { a, b, ratio } => blocks.push(SvcBlock::new(a, b, ratio)?),
                SelectorPiece::DyadicSvc { top, ratio, decay } => {
                    if tail.is_some() {
                        return Err(Error::Param("at most one dyadic tail per selector".into()));
                    }
                    tail = Some(DyadicTail { top, ratio, decay });
                }
            }
        }
        Self::from_parts(blocks, tail)
    }
}

impl From<SubspaceSelector> for SelectorWire {
    fn from(s: SubspaceSelector) -> Self {
        let mut pieces: Vec<SelectorPiece> = Vec::new();
        if let Some(t) = &s.tail {
            pieces.push(SelectorPiece::DyadicSvc {
                top: t.top,
                ratio: t.ratio,
                decay: t.decay,
            });
        }
        pieces.extend(s.blocks.iter().map(|b| SelectorPiece::Svc {
            a: b.a,
            b: b.b,
            ratio: b.ratio,
        }));
        match pieces.len() {
            0 => SelectorWire::One(SelectorPiece::Full),
            1 => SelectorWire::One(pieces.pop().expect("one piece")),
            _ => SelectorWire::Many(pieces),
        }
    }
}

/// Measures of `F` and of its complement inside the selector's blocks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorReport {
    pub lebesgue_measure_f: f64,
    pub lebesgue_measure_complement: f64,
    pub proper: bool,
}

/// Smith-Volterra-Cantor selector on `(a, b)`; `F` also contains everything outside `[a, b]`.
pub fn svc_selector(a: f64, b: f64, removal_ratio: f64) -> Result<SubspaceSelector> {
    SubspaceSelector::from_parts(vec![SvcBlock::new(a, b, removal_ratio)?], None)
}

/// The identity selector `F = interval`.
pub fn full_selector(interval: Interval) -> SubspaceSelector {
    SubspaceSelector {
        blocks: Vec::new(),
        tail: None,
        span: Some(interval),
    }
}

/// Dyadic blocks accumulating at the origin below `top`.
pub fn dyadic_selector(top: f64, ratio: f64, decay: f64) -> Result<SubspaceSelector> {
    SubspaceSelector::from_parts(Vec::new(), Some(DyadicTail { top, ratio, decay }))
}

pub fn selector_report(f: &SubspaceSelector) -> SelectorReport {
    f.report()
}

impl SubspaceSelector {
    pub fn from_parts(mut blocks: Vec<SvcBlock>, tail: Option<DyadicTail>) -> Result<Self> {
        blocks.sort_by(|x, y| x.a.total_cmp(&y.a));
        for pair in blocks.windows(2) {
            if pair[1].a < pair[0].b {
                return Err(Error::Param(format!(
                    "selector blocks ({}, {}) and ({}, {}) overlap",
                    pair[0].a, pair[0].b, pair[1].a, pair[1].b
                )));
            }
        }
        if let Some(t) = &tail {
            if !(t.top > 0.0 && t.top.is_finite()) {
                return Err(Error::Param(format!("dyadic tail top {} must be positive", t.top)));
            }
            if !(t.ratio > 0.0 && t.ratio < 1.0) {
                return Err(Error::Param(format!("dyadic tail ratio {} not in (0, 1)", t.ratio)));
            }
            if !(t.decay > 0.0 && t.decay <= 1.0) {
                return Err(Error::Param(format!("dyadic tail decay {} not in (0, 1]", t.decay)));
            }
            if let Some(first) = blocks.first() {
                if first.a < t.top {
                    return Err(Error::Param("svc blocks must lie above the dyadic tail".into()));
                }
            }
        }
        Ok(Self {
            blocks,
            tail,
            span: None,
        })
    }

    pub fn is_full(&self) -> bool {
        self.blocks.is_empty() && self.tail.is_none()
    }

    pub fn blocks(&self) -> &[SvcBlock] {
        &self.blocks
    }

    pub fn tail(&self) -> Option<&DyadicTail> {
        self.tail.as_ref()
    }

    /// Smallest interval containing every block (the given interval for `full`).
    pub fn base_interval(&self) -> Option<Interval> {
        if let Some(span) = self.span {
            return Some(span);
        }
        let lo = match &self.tail {
            Some(_) => Some(0.0),
            None => self.blocks.first().map(|b| b.a),
        }?;
        let hi = self
            .blocks
            .last()
            .map(|b| b.b)
            .or_else(|| self.tail.as_ref().map(|t| t.top))?;
        Some(Interval::new(lo, hi))
    }

    /// Upper bound on the Lebesgue measure of removed intervals of generation `> n`.
    pub fn tail_bound(&self, n: usize) -> f64 {
        self.removed_measure() * 0.5f64.powi(n as i32)
    }

    fn removed_measure(&self) -> f64 {
        let mut m: f64 = self.blocks.iter().map(SvcBlock::removed_measure).sum();
        if let Some(t) = &self.tail {
            // sum_k ratio decay^k top 2^-(k+1)
            m += t.ratio * t.top * 0.5 / (1.0 - 0.5 * t.decay);
        }
        m
    }

    fn complement_measure(&self) -> f64 {
        let mut m: f64 = self.blocks.iter().map(SvcBlock::cantor_measure).sum();
        if let Some(t) = &self.tail {
            let total = t.top;
            m += total - t.ratio * t.top * 0.5 / (1.0 - 0.5 * t.decay);
        }
        m
    }

    pub fn report(&self) -> SelectorReport {
        if self.is_full() {
            let len = self
                .span
                .map(|i| {
                    let (lo, hi) = i.bounds();
                    hi - lo
                })
                .unwrap_or(f64::INFINITY);
            return SelectorReport {
                lebesgue_measure_f: len,
                lebesgue_measure_complement: 0.0,
                proper: false,
            };
        }
        let comp = self.complement_measure();
        SelectorReport {
            lebesgue_measure_f: self.removed_measure(),
            lebesgue_measure_complement: comp,
            proper: comp > 0.0,
        }
    }

    /// Membership in `F` (points of the fat Cantor sets are excluded).
    pub fn contains(&self, x: f64) -> bool {
        if let Some(b) = self.blocks.iter().find(|b| x >= b.a && x <= b.b) {
            return point_in_gap(b, x);
        }
        if let Some(t) = &self.tail {
            if x > 0.0 && x <= t.top {
                let b = t.block(t.block_index(x));
                return point_in_gap(&b, x);
            }
        }
        true
    }

    /// Selector whose complement is the union of both complements; requires
    /// the two block families to be disjoint.
    /// `int_{(x1, x2) minus F} w dx` for `0 < x1 <= x2`.
    pub fn removed_integral<W: Fn(f64) -> f64>(&self, w: &W, x1: f64, x2: f64, tol: f64) -> f64 {
        let piece = |b: &SvcBlock| {
            if x2 <= b.a || x1 >= b.b {
                return 0.0;
            }
            let g = b.geometry();
            let hi = if x2 >= b.b { g.partial(w, b.b, tol) } else { g.partial(w, x2, tol) };
            let lo = if x1 <= b.a { 0.0 } else { g.partial(w, x1, tol) };
            hi - lo
        };
        let mut acc: f64 = self.blocks.iter().map(piece).sum();
        if let Some(t) = &self.tail {
            if x1 < t.top {
                let k_hi = t.block_index(x2.min(t.top));
                let k_lo = t.block_index(x1);
                acc += (k_hi..=k_lo).map(|k| piece(&t.block(k))).sum::<f64>();
            }
        }
        acc
    }

    pub fn intersect(&self, other: &SubspaceSelector) -> Result<SubspaceSelector> {
        if self.tail.is_some() && other.tail.is_some() {
            return Err(Error::Structural("cannot intersect two dyadic tails".into()));
        }
        let mut blocks = self.blocks.clone();
        blocks.extend(other.blocks.iter().cloned());
        let tail = self.tail.clone().or_else(|| other.tail.clone());
        SubspaceSelector::from_parts(blocks, tail)
            .map_err(|e| Error::Structural(format!("selectors are not interval-representable together: {e}")))
    }
}

fn point_in_gap(b: &SvcBlock, x: f64) -> bool {
    let g = b.geometry();
    let mut start = b.a;
    for level in 0..MAX_DEPTH {
        let left_end = start + g.node_len(level + 1);
        let right_start = left_end + g.gap_len(level + 1);
        if x <= left_end {
            continue;
        }
        if x < right_start {
            return true;
        }
        start = right_start;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svc_half_has_half_complement() {
        let s = svc_selector(1.0, 2.0, 0.5).unwrap();
        let r = selector_report(&s);
        assert!((r.lebesgue_measure_complement - 0.5).abs() < 1e-15);
        assert!((r.lebesgue_measure_f - 0.5).abs() < 1e-15);
        assert!(r.proper);
    }

    #[test]
    fn svc_quarter() {
        let r = selector_report(&svc_selector(1.0, 2.0, 0.25).unwrap());
        assert!((r.lebesgue_measure_complement - 0.75).abs() < 1e-15);
        assert!(r.proper);
    }

    #[test]
    fn ratio_must_be_open_unit() {
        assert!(matches!(svc_selector(1.0, 2.0, 1.0), Err(Error::Param(_))));
        assert!(matches!(svc_selector(1.0, 2.0, 0.0), Err(Error::Param(_))));
        assert!(matches!(svc_selector(2.0, 1.0, 0.5), Err(Error::Param(_))));
    }

    #[test]
    fn ratio_near_one_fills_the_block() {
        let r = selector_report(&svc_selector(1.0, 2.0, 1.0 - 1e-9).unwrap());
        assert!((r.lebesgue_measure_f - 1.0).abs() < 1e-8);
    }

    #[test]
    fn full_selector_is_not_proper() {
        let r = selector_report(&full_selector(Interval::positive_half_line()));
        assert!(!r.proper);
        assert_eq!(r.lebesgue_measure_complement, 0.0);
    }

    #[test]
    fn generation_gaps_sum_geometrically() {
        let b = SvcBlock::new(1.0, 2.0, 0.5).unwrap();
        let mut total = 0.0;
        for n in 1..=14 {
            let gaps = b.gaps(n);
            assert_eq!(gaps.len(), 1 << (n - 1));
            for w in gaps.windows(2) {
                assert!(w[0].1 < w[1].0);
            }
            total += gaps.iter().map(|(s, e)| e - s).sum::<f64>();
        }
        let expected: f64 = (1..=14).map(|n| 2f64.powi(n - 1) * 4f64.powi(-n)).sum();
        assert!((total - expected).abs() < 1e-14);
    }

    #[test]
    fn cantor_measure_below_is_monotone_and_complete() {
        let g = SvcBlock::new(1.0, 2.0, 0.5).unwrap().geometry();
        assert!((g.cantor_measure_below(2.0) - 0.5).abs() < 1e-15);
        assert!((g.cantor_measure_below(1.5) - 0.25).abs() < 1e-12);
        let mut prev = 0.0;
        for i in 0..=200 {
            let x = 1.0 + i as f64 / 200.0;
            let v = g.cantor_measure_below(x);
            assert!(v >= prev - 1e-15);
            prev = v;
        }
    }

    #[test]
    fn two_point_rule_is_exact_on_cubics() {
        let g = SvcBlock::new(1.0, 2.0, 0.5).unwrap().geometry();
        let w = |x: f64| x * x * x - 2.0 * x;
        let coarse = g.two_point(&w, 1.0, 0);
        let fine = g.full(&w, 1.0, 0, 1e-14);
        assert!((coarse - fine).abs() < 1e-12);
    }

    #[test]
    fn nowhere_dense_depth_bound() {
        // every subinterval of (1,2) longer than 2^-10 meets a gap of generation <= 12
        let s = svc_selector(1.0, 2.0, 0.5).unwrap();
        let g = SvcBlock::new(1.0, 2.0, 0.5).unwrap().geometry();
        let len = 2f64.powi(-10) * 1.0001;
        for i in 0..2000 {
            let x = 1.0 + (1.0 - len) * i as f64 / 1999.0;
            let found = g.gap_inside(x, x + len, 12);
            let in_gap = s.contains(x + 0.5 * len);
            assert!(found.is_some() || in_gap, "no gap meets ({x}, {})", x + len);
        }
    }

    #[test]
    fn membership() {
        let s = svc_selector(1.0, 2.0, 0.5).unwrap();
        assert!(s.contains(0.5));
        assert!(s.contains(1.5)); // centre of the first removed interval
        assert!(!s.contains(1.0 + 1e-12)); // left edge belongs to the Cantor part
        assert!(s.contains(3.0));
    }

    #[test]
    fn wire_format() {
        let s = svc_selector(1.0, 2.0, 0.5).unwrap();
        let j = serde_json::to_string(&s).unwrap();
        assert_eq!(j, r#"{"kind":"svc","a":1.0,"b":2.0,"ratio":0.5}"#);
        let full: SubspaceSelector = serde_json::from_str(r#"{"kind":"full"}"#).unwrap();
        assert!(full.is_full());
        let many: SubspaceSelector = serde_json::from_str(
            r#"[{"kind":"svc","a":1,"b":2,"ratio":0.5},{"kind":"svc","a":3,"b":4,"ratio":0.25}]"#,
        )
        .unwrap();
        assert_eq!(many.blocks().len(), 2);
        let overlapping: std::result::Result<SubspaceSelector, _> = serde_json::from_str(
            r#"[{"kind":"svc","a":1,"b":2,"ratio":0.5},{"kind":"svc","a":1.5,"b":4,"ratio":0.25}]"#,
        );
        assert!(overlapping.is_err());
    }
}
