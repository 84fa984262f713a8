//! Brownian motion on `S^{d-1}` by tangent Gaussian steps and renormalization.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::montecarlo::chunk_rng;
use crate::sim::{ExitFlag, PathSample};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SphereConfig {
    /// Ambient dimension `d`; the sphere is `S^{d-1}`.
    pub dim_ambient: usize,
    pub dt: f64,
    pub seed: u64,
}

impl SphereConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim_ambient < 2 {
            return Err(Error::Param(format!("sphere needs d >= 2, got {}", self.dim_ambient)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Param(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }
}

pub fn check_unit(theta: &[f64]) -> Result<()> {
    let n = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
    if (n - 1.0).abs() > 1e-12 {
        return Err(Error::Param(format!("initial direction has norm {n}, expected 1")));
    }
    Ok(())
}

/// Incremental spherical walk driven by an external clock.
#[derive(Debug, Clone)]
pub struct SphereWalker {
    theta: Vec<f64>,
    clock: f64,
    dt: f64,
    scratch: Vec<f64>,
}

impl SphereWalker {
    pub fn new(theta0: &[f64], dt: f64) -> Result<Self> {
        check_unit(theta0)?;
        if theta0.len() < 2 {
            return Err(Error::Param("sphere needs d >= 2".into()));
        }
        Ok(Self {
            theta: theta0.to_vec(),
            clock: 0.0,
            dt,
            scratch: vec![0.0; theta0.len()],
        })
    }

    pub fn reset(&mut self, theta0: &[f64]) {
        self.theta.copy_from_slice(theta0);
        self.clock = 0.0;
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    fn draw_uniform<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut norm = 0.0;
        while norm == 0.0 {
            norm = 0.0;
            for t in &mut self.theta {
                *t = rng.sample::<f64, _>(StandardNormal);
                norm += *t * *t;
            }
        }
        let inv = norm.sqrt().recip();
        for t in &mut self.theta {
            *t *= inv;
        }
    }

    fn step<R: Rng + ?Sized>(&mut self, rng: &mut R, dt: f64) {
        let s = dt.sqrt();
        let mut dot = 0.0;
        for (x, t) in self.scratch.iter_mut().zip(&self.theta) {
            *x = rng.sample::<f64, _>(StandardNormal);
            dot += *x * t;
        }
        let mut norm = 0.0;
        for (t, x) in self.theta.iter_mut().zip(&self.scratch) {
            // remove the normal component before stepping
            *t += s * (x - dot * *t);
            norm += *t * *t;
        }
        let inv = norm.sqrt().recip();
        for t in &mut self.theta {
            *t *= inv;
        }
    }

    /// Advances to `clock`, ending with a partial step if needed. Durations past
    /// the mixing horizon (every harmonic damped below `e^-40`) draw from the
    /// uniform law instead of stepping.
    pub fn advance_to<R: Rng + ?Sized>(&mut self, rng: &mut R, clock: f64) {
        if clock - self.clock > 80.0 / (self.theta.len() - 1) as f64 {
            self.draw_uniform(rng);
            self.clock = clock;
            return;
        }
        while self.clock + self.dt <= clock {
            self.step(rng, self.dt);
            self.clock += self.dt;
        }
        let rest = clock - self.clock;
        if rest > 1e-15 * clock.max(1.0) {
            self.step(rng, rest);
            self.clock = clock;
        }
    }
}

/// Sphere path on the grid `k dt`, with a final partial step at `duration`.
pub fn simulate_sphere(cfg: &SphereConfig, theta0: &[f64], duration: f64) -> Result<PathSample> {
    cfg.validate()?;
    if theta0.len() != cfg.dim_ambient {
        return Err(Error::Param(format!(
            "direction has {} components, expected {}",
            theta0.len(),
            cfg.dim_ambient
        )));
    }
    let mut rng = chunk_rng(cfg.seed, 0);
    let mut w = SphereWalker::new(theta0, cfg.dt)?;
    let mut times = vec![0.0];
    let mut states = vec![theta0.to_vec()];
    let mut k = 1u64;
    loop {
        let t = (k as f64 * cfg.dt).min(duration);
        w.advance_to(&mut rng, t);
        times.push(t);
        states.push(w.theta().to_vec());
        if t >= duration {
            break;
        }
        k += 1;
    }
    Ok(PathSample {
        times,
        states,
        pcaf: None,
        exit_flag: ExitFlag::Horizon,
    })
}
