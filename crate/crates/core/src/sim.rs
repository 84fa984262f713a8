//! Speed-measure random walk in natural scale.
//!
//! The walk lives on the grid `z_j = anchor + j h` in the coordinate
//! `z = p(x)`. From `z` with neighbours `alpha < z < beta` it moves up with
//! probability `(z - alpha) / (beta - alpha)` after the expected exit time of
//! `(alpha, beta)`, computed from speed-measure integrals only:
//!
//! `2 (beta - z)/(beta - alpha) int_(alpha,z) (u - alpha) m(du) + 2 (z - alpha)/(beta - alpha) int_(z,beta) (beta - u) m(du)`
//!
//! where `m` is the speed measure pushed to natural scale. On the interior
//! grid this is `int (h - |u - z|) m(du)`. No derivative of the scale
//! function is needed, so singular (thinned) scales are handled as well.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::density::Density;
use crate::diffusion::{DiffusionSpec, Endpoint};
use crate::error::{Error, Result};
use crate::montecarlo::{chunk_rng, run_scalar, McConfig, McSummary};
use crate::quad;
use crate::scale::BISECTION_TOL;
use crate::skew::SkewProductSpec;
use crate::sphere::SphereWalker;

const CELL_TOL: f64 = 1e-10;

/// Speed-measure integrals of the natural-scale cell `(z1, z2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    /// `m((z1, z2))`
    pub mass: f64,
    /// `int_(z1, z2) (u - z1) m(du)`
    pub moment: f64,
}

/// A diffusion seen through its natural scale.
pub trait NaturalScaleModel: Sync {
    /// `(p(e0+), p(e1-))`.
    fn natural_range(&self) -> Result<(f64, f64)>;
    /// Whether each endpoint is absorbing (approachable in finite time).
    fn absorbing(&self) -> Result<[bool; 2]>;
    /// State-space endpoints `(e0, e1)`.
    fn state_bounds(&self) -> (f64, f64);
    fn to_natural(&self, x: f64) -> Result<f64>;
    fn from_natural(&self, z: f64) -> Result<f64>;
    fn natural_cell(&self, z1: f64, z2: f64) -> Result<Cell>;
}

impl NaturalScaleModel for DiffusionSpec {
    fn natural_range(&self) -> Result<(f64, f64)> {
        Ok((
            self.scale_limit(Endpoint::Lower)?.0.to_f64(),
            self.scale_limit(Endpoint::Upper)?.0.to_f64(),
        ))
    }

    fn absorbing(&self) -> Result<[bool; 2]> {
        Ok([self.absorbing(Endpoint::Lower)?, self.absorbing(Endpoint::Upper)?])
    }

    fn state_bounds(&self) -> (f64, f64) {
        self.interval.bounds()
    }

    fn to_natural(&self, x: f64) -> Result<f64> {
        let (lo, hi) = self.interval.bounds();
        if x == lo || x == hi {
            return Ok(self.scale.value_at(x)?.to_f64());
        }
        self.check_point(x)?;
        self.scale.eval(x)
    }

    fn from_natural(&self, z: f64) -> Result<f64> {
        let (zlo, zhi) = self.natural_range()?;
        let (lo, hi) = self.interval.bounds();
        if z <= zlo {
            return Ok(lo);
        }
        if z >= zhi {
            return Ok(hi);
        }
        match self.scale.invert(z, BISECTION_TOL) {
            Ok(x) => Ok(x.clamp(lo, hi)),
            // beyond the floating-point range of the state coordinate
            Err(Error::NonConvergence { .. }) if z < self.scale.eval_unchecked(f64::MIN_POSITIVE) => Ok(lo),
            Err(Error::NonConvergence { .. }) if z > self.scale.eval_unchecked(f64::MAX) => Ok(hi),
            Err(e) => Err(e),
        }
    }

    fn natural_cell(&self, z1: f64, z2: f64) -> Result<Cell> {
        let x1 = self.from_natural(z1)?;
        let x2 = self.from_natural(z2)?;
        speed_cell(self, x1, x2, z1)
    }
}

/// `l((x1, x2))` and `int_(x1,x2) (p(y) - z1) l(dy)` for a spec.
pub(crate) fn speed_cell(spec: &DiffusionSpec, x1: f64, x2: f64, z1: f64) -> Result<Cell> {
    if !(x2 > x1) {
        return Ok(Cell { mass: 0.0, moment: 0.0 });
    }
    let mass = spec.speed.mass(x1, x2)?;
    if !mass.is_finite() {
        return Ok(Cell {
            mass: f64::INFINITY,
            moment: f64::INFINITY,
        });
    }
    let p = &spec.scale;
    let m = &spec.speed;
    let f = |y: f64| {
        if y <= 0.0 {
            return 0.0;
        }
        let v = (p.eval_unchecked(y) - z1).max(0.0) * m.density_at(y);
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let moment = if x2.is_finite() {
        quad::integrate_estimate(f, x1, x2, 0.0, CELL_TOL, quad::MAX_SEGMENTS).value
    } else {
        let v = quad::integrate_estimate(
            |t: f64| if t >= 1.0 { 0.0 } else { f(x1 + t / (1.0 - t)) / ((1.0 - t) * (1.0 - t)) },
            0.0,
            1.0,
            0.0,
            CELL_TOL,
            quad::MAX_SEGMENTS,
        );
        v.value
    };
    Ok(Cell { mass, moment })
}

/// Natural-scale pushforward `m^((z1, z2]) = l((q(z1), q(z2)])`.
pub struct PushforwardSpeed<'a, M: NaturalScaleModel + ?Sized> {
    model: &'a M,
}

pub fn pushforward_speed<M: NaturalScaleModel + ?Sized>(model: &M) -> PushforwardSpeed<'_, M> {
    PushforwardSpeed { model }
}

impl<M: NaturalScaleModel + ?Sized> PushforwardSpeed<'_, M> {
    pub fn mass(&self, z1: f64, z2: f64) -> Result<f64> {
        if z2 < z1 {
            return Ok(-self.mass(z2, z1)?);
        }
        Ok(self.model.natural_cell(z1, z2)?.mass)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TimeHorizon {
    Time(f64),
    UntilExit {
        #[serde(rename = "until-exit")]
        until_exit: [f64; 2],
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkConfig {
    pub step_h: f64,
    pub max_steps: u64,
    pub seed: u64,
    pub time_horizon: TimeHorizon,
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_h > 0.0 && self.step_h.is_finite()) {
            return Err(Error::Param(format!("step_h must be positive, got {}", self.step_h)));
        }
        if self.max_steps == 0 {
            return Err(Error::Param("max_steps must be positive".into()));
        }
        match self.time_horizon {
            TimeHorizon::Time(t) if !(t > 0.0) => Err(Error::Param(format!("horizon must be positive, got {t}"))),
            TimeHorizon::UntilExit { until_exit: [a, b] } if !(a < b) => {
                Err(Error::Param(format!("until-exit needs a < b, got ({a}, {b})")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExitFlag {
    Horizon,
    HitLower,
    HitUpper,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub pcaf: Option<Vec<f64>>,
    pub exit_flag: ExitFlag,
}

impl PathSample {
    /// CSV with header `t,x0,x1,...[,A]`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let dim = self.states.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((0..dim).map(|i| format!("x{i}")));
        if self.pcaf.is_some() {
            header.push("A".into());
        }
        writeln!(w, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t}")];
            row.extend(self.states[k].iter().map(|v| format!("{v}")));
            if let Some(a) = &self.pcaf {
                row.push(format!("{}", a[k]));
            }
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    pub fn final_state(&self) -> &[f64] {
        self.states.last().map_or(&[], Vec::as_slice)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Pos {
    Grid(i64),
    Lower,
    Upper,
    Start,
}

#[derive(Debug, Clone, Copy)]
struct Move {
    z: f64,
    to: Pos,
}

/// Outcome of one walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkOutcome {
    pub time: f64,
    pub state: f64,
    pub pcaf: f64,
    pub flag: ExitFlag,
    pub steps: u64,
}

#[derive(Debug, Clone, Copy)]
struct Entry {
    x: f64,
    dt: f64,
}

/// Per-worker lazily filled table of holding times and states.
#[derive(Debug, Default, Clone)]
pub struct WalkCache {
    offset: i64,
    entries: Vec<Option<Entry>>,
}

impl WalkCache {
    fn slot(&mut self, j: i64) -> &mut Option<Entry> {
        if self.entries.is_empty() {
            self.offset = j - 64;
            self.entries = vec![None; 129];
        }
        if j < self.offset {
            let grow = ((self.offset - j) as usize).max(self.entries.len());
            let mut v = vec![None; grow];
            v.extend(self.entries.drain(..));
            self.entries = v;
            self.offset -= grow as i64;
        }
        let idx = (j - self.offset) as usize;
        if idx >= self.entries.len() {
            let grow = (idx + 1 - self.entries.len()).max(self.entries.len());
            self.entries.extend(std::iter::repeat(None).take(grow));
        }
        &mut self.entries[(j - self.offset) as usize]
    }
}

/// Immutable description of a walk: grid, boundaries and start.
pub struct WalkPlan<'m, M: NaturalScaleModel + ?Sized> {
    model: &'m M,
    h: f64,
    anchor: f64,
    zlo: f64,
    zhi: f64,
    absorb: [bool; 2],
    /// Interior grid indices `ilo..=ihi` (unbounded as `i64::MIN`/`MAX`).
    ilo: i64,
    ihi: i64,
    xlo: f64,
    xhi: f64,
    horizon: f64,
    max_steps: u64,
    x0: f64,
    start: Pos,
    start_z: f64,
    /// Indices beyond which spacing grows by `GRADE_RATIO` per cell.
    grade_lo: i64,
    grade_hi: i64,
}

/// Cells whose holding time falls below this fraction of the start cell's are graded.
const GRADE_THRESHOLD: f64 = 1e-9;
const GRADE_RATIO: f64 = 1.1;

impl<'m, M: NaturalScaleModel + ?Sized> WalkPlan<'m, M> {
    pub fn new(model: &'m M, x0: f64, cfg: &WalkConfig) -> Result<Self> {
        cfg.validate()?;
        let (mut xlo, mut xhi) = model.state_bounds();
        if !(x0 >= xlo && x0 <= xhi) || !x0.is_finite() {
            return Err(Error::Domain { x: x0, lo: xlo, hi: xhi });
        }
        let (mut zlo, mut zhi) = model.natural_range()?;
        let mut absorb = model.absorbing()?;
        let mut h = cfg.step_h;
        let z0 = model.to_natural(x0)?;
        let (anchor, horizon) = match cfg.time_horizon {
            TimeHorizon::UntilExit { until_exit: [a, b] } => {
                if !(a <= x0 && x0 <= b) {
                    return Err(Error::Domain { x: x0, lo: a, hi: b });
                }
                let za = model.to_natural(a)?;
                let zb = model.to_natural(b)?;
                if !(za.is_finite() && zb.is_finite()) {
                    return Err(Error::Param("until-exit endpoints must map to finite natural scale".into()));
                }
                let n = ((zb - za) / h).ceil().max(1.0);
                h = (zb - za) / n;
                (zlo, zhi, xlo, xhi, absorb) = (za, zb, a, b, [true, true]);
                (za, f64::INFINITY)
            }
            TimeHorizon::Time(t) => {
                let lo_abs = absorb[0] && zlo.is_finite();
                let hi_abs = absorb[1] && zhi.is_finite();
                if lo_abs && hi_abs {
                    let n = ((zhi - zlo) / h).ceil().max(1.0);
                    h = (zhi - zlo) / n;
                }
                let anchor = if lo_abs {
                    zlo
                } else if hi_abs {
                    zhi
                } else {
                    z0
                };
                (anchor, t)
            }
        };
        let tol = 1e-9 * h;
        let ilo = if zlo.is_finite() {
            ((zlo + tol - anchor) / h).floor() as i64 + 1
        } else {
            i64::MIN
        };
        let ihi = if zhi.is_finite() {
            ((zhi - tol - anchor) / h).ceil() as i64 - 1
        } else {
            i64::MAX
        };
        let mut plan = Self {
            model,
            h,
            anchor,
            zlo,
            zhi,
            absorb,
            ilo,
            ihi,
            xlo,
            xhi,
            horizon,
            max_steps: cfg.max_steps,
            x0,
            start: Pos::Start,
            start_z: z0,
            grade_lo: i64::MIN,
            grade_hi: i64::MAX,
        };
        plan.start = plan.locate(z0);
        if plan.horizon.is_finite() {
            plan.grade();
        }
        Ok(plan)
    }

    pub fn step(&self) -> f64 {
        self.h
    }

    /// Number of grid points spanning the natural-scale range, when finite.
    pub fn grid_points(&self) -> Option<u64> {
        (self.ilo != i64::MIN && self.ihi != i64::MAX).then(|| (self.ihi - self.ilo + 3).max(0) as u64)
    }

    fn z(&self, j: i64) -> f64 {
        let graded = |k: i64| self.h * GRADE_RATIO * (GRADE_RATIO.powi(k as i32) - 1.0) / (GRADE_RATIO - 1.0);
        if j < self.grade_lo {
            self.anchor + self.grade_lo as f64 * self.h - graded(self.grade_lo - j)
        } else if j > self.grade_hi {
            self.anchor + self.grade_hi as f64 * self.h + graded(j - self.grade_hi)
        } else {
            self.anchor + j as f64 * self.h
        }
    }

    /// On an unbounded side, finds where holding times become negligible and
    /// lets the spacing grow from there. Deep excursions of a martingale have
    /// probability of order `1/depth` but cost `depth^2` uniform steps.
    fn grade(&mut self) {
        let j0 = ((self.start_z - self.anchor) / self.h).round() as i64;
        let dt_at = |plan: &Self, j: i64| -> Option<f64> {
            let z = plan.z(j);
            let dt = plan.holding_time(z - plan.h, z, z + plan.h).ok()?;
            dt.is_finite().then_some(dt)
        };
        let Some(reference) = dt_at(self, j0).filter(|d| *d > 0.0) else {
            return;
        };
        let search = |plan: &Self, sign: i64| -> i64 {
            for k in 0..40 {
                let j = j0 + sign * (1i64 << k);
                match dt_at(plan, j) {
                    Some(dt) if dt <= GRADE_THRESHOLD * reference => return j,
                    Some(_) => {}
                    None => break,
                }
            }
            if sign < 0 {
                i64::MIN
            } else {
                i64::MAX
            }
        };
        if self.ilo == i64::MIN {
            self.grade_lo = search(self, -1);
        }
        if self.ihi == i64::MAX {
            self.grade_hi = search(self, 1);
        }
    }

    fn locate(&self, z: f64) -> Pos {
        let tol = 1e-9 * self.h;
        if z <= self.zlo + tol {
            return Pos::Lower;
        }
        if z >= self.zhi - tol {
            return Pos::Upper;
        }
        let j = ((z - self.anchor) / self.h).round() as i64;
        if (z - self.z(j)).abs() <= tol && j >= self.ilo && j <= self.ihi {
            Pos::Grid(j)
        } else {
            Pos::Start
        }
    }

    fn down(&self, j: i64) -> Move {
        if j <= self.ilo {
            Move {
                z: self.zlo,
                to: Pos::Lower,
            }
        } else {
            Move {
                z: self.z(j - 1),
                to: Pos::Grid(j - 1),
            }
        }
    }

    fn up(&self, j: i64) -> Move {
        if j >= self.ihi {
            Move {
                z: self.zhi,
                to: Pos::Upper,
            }
        } else {
            Move {
                z: self.z(j + 1),
                to: Pos::Grid(j + 1),
            }
        }
    }

    /// Neighbours of the current position and its natural coordinate.
    fn neighbours(&self, pos: Pos) -> (f64, Move, Move) {
        match pos {
            Pos::Grid(j) => (self.z(j), self.down(j), self.up(j)),
            Pos::Start => {
                let z = self.start_z;
                let j = ((z - self.anchor) / self.h).floor() as i64;
                let below = if j < self.ilo {
                    Move {
                        z: self.zlo,
                        to: Pos::Lower,
                    }
                } else {
                    Move {
                        z: self.z(j),
                        to: Pos::Grid(j),
                    }
                };
                let above = if j + 1 > self.ihi {
                    Move {
                        z: self.zhi,
                        to: Pos::Upper,
                    }
                } else {
                    Move {
                        z: self.z(j + 1),
                        to: Pos::Grid(j + 1),
                    }
                };
                (z, below, above)
            }
            Pos::Lower | Pos::Upper => unreachable!("boundary has no neighbours"),
        }
    }

    /// Expected exit time of `(alpha, beta)` from `z`.
    fn holding_time(&self, alpha: f64, z: f64, beta: f64) -> Result<f64> {
        let down = self.model.natural_cell(alpha, z)?;
        let up = self.model.natural_cell(z, beta)?;
        if !(down.mass.is_finite() && up.mass.is_finite()) {
            return Ok(f64::INFINITY);
        }
        let w = beta - alpha;
        let up_term = ((beta - z) * up.mass - up.moment).max(0.0);
        Ok(2.0 * (beta - z) / w * down.moment + 2.0 * (z - alpha) / w * up_term)
    }

    fn entry(&self, pos: Pos, cache: &mut WalkCache) -> Result<Entry> {
        let compute = |pos: Pos| -> Result<Entry> {
            let (z, a, b) = self.neighbours(pos);
            Ok(Entry {
                x: if matches!(pos, Pos::Start) {
                    self.x0
                } else {
                    self.model.from_natural(z)?
                },
                dt: self.holding_time(a.z, z, b.z)?,
            })
        };
        match pos {
            Pos::Grid(j) => {
                let slot = cache.slot(j);
                if let Some(e) = slot {
                    return Ok(*e);
                }
                let e = compute(pos)?;
                *cache.slot(j) = Some(e);
                Ok(e)
            }
            _ => compute(pos),
        }
    }

    fn boundary_state(&self, pos: Pos) -> f64 {
        match pos {
            Pos::Lower => self.xlo,
            _ => self.xhi,
        }
    }

    /// Full walk. `f` is the Revuz density of the accumulated PCAF; `observe`
    /// receives `(t, x, A)` after every jump.
    pub fn run<R, O>(&self, rng: &mut R, cache: &mut WalkCache, f: Option<&Density>, mut observe: O) -> Result<WalkOutcome>
    where
        R: Rng + ?Sized,
        O: FnMut(f64, f64, f64),
    {
        let mut pos = self.start;
        let mut t = 0.0;
        let mut a = 0.0;
        let mut steps = 0u64;
        loop {
            if let Pos::Lower | Pos::Upper = pos {
                let state = self.boundary_state(pos);
                let (absorbed, flag) = match pos {
                    Pos::Lower => (self.absorb[0], ExitFlag::HitLower),
                    _ => (self.absorb[1], ExitFlag::HitUpper),
                };
                if absorbed || !self.horizon.is_finite() {
                    return Ok(WalkOutcome {
                        time: t,
                        state,
                        pcaf: a,
                        flag,
                        steps,
                    });
                }
                // reached an endpoint that is not absorbing: the path stays there
                let rate = f.map_or(0.0, |d| d.eval(state));
                a += if rate == 0.0 { 0.0 } else { (self.horizon - t) * rate };
                return Ok(WalkOutcome {
                    time: self.horizon,
                    state,
                    pcaf: a,
                    flag: ExitFlag::Horizon,
                    steps,
                });
            }
            let e = self.entry(pos, cache)?;
            let rate = f.map_or(0.0, |d| d.eval(e.x));
            if t + e.dt > self.horizon {
                a += (self.horizon - t) * rate;
                return Ok(WalkOutcome {
                    time: self.horizon,
                    state: e.x,
                    pcaf: a,
                    flag: ExitFlag::Horizon,
                    steps,
                });
            }
            if steps >= self.max_steps {
                return Ok(WalkOutcome {
                    time: t,
                    state: e.x,
                    pcaf: a,
                    flag: ExitFlag::BudgetExhausted,
                    steps,
                });
            }
            t += e.dt;
            if e.dt > 0.0 {
                a += e.dt * rate;
            }
            steps += 1;
            let (z, lo, hi) = self.neighbours(pos);
            let p_up = (z - lo.z) / (hi.z - lo.z);
            pos = if rng.gen::<f64>() < p_up { hi.to } else { lo.to };
            if let Pos::Lower | Pos::Upper = pos {
                observe(t, self.boundary_state(pos), a);
            } else {
                observe(t, self.entry(pos, cache)?.x, a);
            }
        }
    }

    /// Hitting-only walk: which end of the natural-scale range is reached first.
    /// Holding times are skipped. `None` when the step budget runs out.
    pub fn hits_upper<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<bool> {
        let mut pos = self.start;
        if let Pos::Start = pos {
            let (z, lo, hi) = self.neighbours(pos);
            pos = if rng.gen::<f64>() < (z - lo.z) / (hi.z - lo.z) { hi.to } else { lo.to };
        }
        let mut j = match pos {
            Pos::Lower => return Some(false),
            Pos::Upper => return Some(true),
            Pos::Grid(j) => j,
            Pos::Start => unreachable!(),
        };
        let mut steps = 1u64;
        let mut bits = 0u64;
        let mut left = 0u32;
        loop {
            if j == self.ilo || j == self.ihi {
                // edge nodes may have an uneven neighbour spacing
                let (z, lo, hi) = self.neighbours(Pos::Grid(j));
                let next = if rng.gen::<f64>() < (z - lo.z) / (hi.z - lo.z) { hi.to } else { lo.to };
                match next {
                    Pos::Lower => return Some(false),
                    Pos::Upper => return Some(true),
                    Pos::Grid(k) => j = k,
                    Pos::Start => unreachable!(),
                }
            } else {
                if left == 0 {
                    bits = rng.gen();
                    left = 64;
                }
                j += if bits & 1 == 1 { 1 } else { -1 };
                bits >>= 1;
                left -= 1;
            }
            steps += 1;
            if steps > self.max_steps {
                return None;
            }
        }
    }
}

/// Single recorded path; the PCAF is filled when `revuz` is given.
pub fn simulate_path_with<M: NaturalScaleModel + ?Sized>(
    model: &M,
    x0: f64,
    cfg: &WalkConfig,
    revuz: Option<&Density>,
) -> Result<PathSample> {
    let plan = WalkPlan::new(model, x0, cfg)?;
    let mut rng = chunk_rng(cfg.seed, 0);
    let mut cache = WalkCache::default();
    let mut times = vec![0.0];
    let mut states = vec![vec![x0]];
    let mut pcaf = vec![0.0];
    let out = plan.run(&mut rng, &mut cache, revuz, |t, x, a| {
        times.push(t);
        states.push(vec![x]);
        pcaf.push(a);
    })?;
    if out.time > *times.last().expect("non-empty") {
        times.push(out.time);
        states.push(vec![out.state]);
        pcaf.push(out.pcaf);
    }
    Ok(PathSample {
        times,
        states,
        pcaf: revuz.map(|_| pcaf),
        exit_flag: out.flag,
    })
}

pub fn simulate_path<M: NaturalScaleModel + ?Sized>(model: &M, x0: f64, cfg: &WalkConfig) -> Result<PathSample> {
    simulate_path_with(model, x0, cfg, None)
}

/// Adds the PCAF with Revuz density `f` (against the speed measure) to a radial path.
pub fn simulate_pcaf(path: &PathSample, f: &Density) -> Result<PathSample> {
    let mut a = Vec::with_capacity(path.times.len());
    let mut acc = 0.0;
    for (k, t) in path.times.iter().enumerate() {
        if k > 0 {
            let x = path.states[k - 1]
                .first()
                .copied()
                .ok_or_else(|| Error::Param("empty state in path".into()))?;
            let rate = f.eval(x);
            if rate != 0.0 {
                acc += (t - path.times[k - 1]) * rate;
            }
        }
        a.push(acc);
    }
    Ok(PathSample {
        pcaf: Some(a),
        ..path.clone()
    })
}

/// Monte Carlo estimate of `P(hit b before a)` from `x`.
pub fn estimate_hitting<M: NaturalScaleModel + ?Sized>(
    model: &M,
    x: f64,
    a: f64,
    b: f64,
    h: f64,
    mc: &McConfig,
) -> Result<McSummary> {
    let cfg = WalkConfig {
        step_h: h,
        max_steps: u64::MAX,
        seed: mc.seed,
        time_horizon: TimeHorizon::UntilExit { until_exit: [a, b] },
    };
    let plan = WalkPlan::new(model, x, &cfg)?;
    run_scalar(mc, || (), |_, rng| {
        plan.hits_upper(rng)
            .map(|up| if up { 1.0 } else { 0.0 })
            .ok_or_else(|| Error::InvariantViolation("hitting walk exhausted its budget".into()))
    })
}

/// Probability of absorption at the lower endpoint before time `horizon`.
pub fn estimate_absorption<M: NaturalScaleModel + ?Sized>(
    model: &M,
    x: f64,
    horizon: f64,
    h: f64,
    max_steps: u64,
    mc: &McConfig,
) -> Result<McSummary> {
    let cfg = WalkConfig {
        step_h: h,
        max_steps,
        seed: mc.seed,
        time_horizon: TimeHorizon::Time(horizon),
    };
    let plan = WalkPlan::new(model, x, &cfg)?;
    run_scalar(mc, WalkCache::default, |cache, rng| {
        let out = plan.run(rng, cache, None, |_, _, _| {})?;
        match out.flag {
            ExitFlag::BudgetExhausted => Err(Error::InvariantViolation("walk exhausted its step budget".into())),
            ExitFlag::HitLower => Ok(1.0),
            _ => Ok(0.0),
        }
    })
}

/// Walk settings for the radial part and the step of the spherical part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewConfig {
    pub walk: WalkConfig,
    pub sphere_dt: f64,
}

/// Skew-product path `(r_t, theta_{c A_t})`; states are `[r, theta_0, .., theta_{d-1}]`.
pub fn simulate_skew(skew: &SkewProductSpec, r0: f64, theta0: &[f64], cfg: &SkewConfig) -> Result<PathSample> {
    skew.validate()?;
    if theta0.len() != skew.d {
        return Err(Error::Param(format!("direction has {} components, expected {}", theta0.len(), skew.d)));
    }
    if !(cfg.sphere_dt > 0.0) {
        return Err(Error::Param(format!("sphere_dt must be positive, got {}", cfg.sphere_dt)));
    }
    let plan = WalkPlan::new(&skew.radial, r0, &cfg.walk)?;
    let mut sphere = SphereWalker::new(theta0, cfg.sphere_dt)?;
    let mut rng = chunk_rng(cfg.walk.seed, 0);
    let mut radial_rng = chunk_rng(cfg.walk.seed, 1);
    let mut cache = WalkCache::default();
    let c = skew.sphere_time_scale;
    let row = |r: f64, th: &[f64]| {
        let mut v = vec![r];
        v.extend_from_slice(th);
        v
    };
    let mut times = vec![0.0];
    let mut states = vec![row(r0, theta0)];
    let mut pcaf = vec![0.0];
    let out = plan.run(&mut radial_rng, &mut cache, Some(&skew.revuz_density), |t, x, a| {
        sphere.advance_to(&mut rng, c * a);
        times.push(t);
        states.push(row(x, sphere.theta()));
        pcaf.push(a);
    })?;
    if out.time > *times.last().expect("non-empty") {
        sphere.advance_to(&mut rng, c * out.pcaf);
        times.push(out.time);
        states.push(row(out.state, sphere.theta()));
        pcaf.push(out.pcaf);
    }
    Ok(PathSample {
        times,
        states,
        pcaf: Some(pcaf),
        exit_flag: out.flag,
    })
}

/// Sampler for the skew-product marginal at a fixed time; yields `(r, theta, A, flag)`.
pub struct SkewSampler<'a> {
    skew: &'a SkewProductSpec,
    plan: WalkPlan<'a, DiffusionSpec>,
    theta0: Vec<f64>,
    sphere_dt: f64,
}

impl<'a> SkewSampler<'a> {
    pub fn new(skew: &'a SkewProductSpec, r0: f64, theta0: &[f64], horizon: f64, h: f64, sphere_dt: f64, max_steps: u64) -> Result<Self> {
        skew.validate()?;
        crate::sphere::check_unit(theta0)?;
        if theta0.len() != skew.d {
            return Err(Error::Param(format!("direction has {} components, expected {}", theta0.len(), skew.d)));
        }
        let cfg = WalkConfig {
            step_h: h,
            max_steps,
            seed: 0,
            time_horizon: TimeHorizon::Time(horizon),
        };
        Ok(Self {
            skew,
            plan: WalkPlan::new(&skew.radial, r0, &cfg)?,
            theta0: theta0.to_vec(),
            sphere_dt,
        })
    }

    pub fn scratch(&self) -> (WalkCache, SphereWalker) {
        (WalkCache::default(), SphereWalker::new(&self.theta0, self.sphere_dt).expect("validated direction"))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut (WalkCache, SphereWalker)) -> Result<(f64, ExitFlag, f64)> {
        let (cache, sphere) = scratch;
        let out = self.plan.run(rng, cache, Some(&self.skew.revuz_density), |_, _, _| {})?;
        sphere.reset(&self.theta0);
        sphere.advance_to(rng, self.skew.sphere_time_scale * out.pcaf);
        Ok((out.state, out.flag, out.pcaf))
    }
}
