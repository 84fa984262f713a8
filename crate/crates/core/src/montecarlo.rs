//! Chunked Monte Carlo with deterministic reduction.
//!
//! Chunk `i` draws from a ChaCha8 stream `i` keyed by the master seed, so the
//! result depends only on `(seed, n, chunks)` and not on the worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;

pub const DEFAULT_CHUNKS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McConfig {
    pub n: usize,
    pub seed: u64,
    #[serde(default = "default_chunks")]
    pub chunks: usize,
}

fn default_chunks() -> usize {
    DEFAULT_CHUNKS
}

impl McConfig {
    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            chunks: DEFAULT_CHUNKS,
        }
    }

    fn chunk_range(&self, i: usize) -> std::ops::Range<usize> {
        let c = self.chunks.max(1);
        (self.n * i / c)..(self.n * (i + 1) / c)
    }
}

/// Random stream of chunk `i`.
pub fn chunk_rng(seed: u64, i: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(i as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub estimate: f64,
    pub stderr: f64,
    pub n: usize,
    pub seed: u64,
}

impl McSummary {
    /// `|estimate - target|` in units of the standard error.
    pub fn z_score(&self, target: f64) -> f64 {
        let d = (self.estimate - target).abs();
        if self.stderr > 0.0 {
            d / self.stderr
        } else if d == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }

    pub fn within(&self, target: f64, k: f64) -> bool {
        self.z_score(target) <= k
    }
}

/// Running mean and centred second moment.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }
}

/// Runs `cfg.n` samples of a `dim`-vector observable; `init` builds per-chunk scratch state.
pub fn run_chunks<S, I, F>(cfg: &McConfig, dim: usize, init: I, sample: F) -> Result<Vec<McSummary>>
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, &mut ChaCha8Rng, &mut [f64]) -> Result<()> + Sync,
{
    let chunks = cfg.chunks.max(1);
    let parts: Vec<Result<Vec<Moments>>> = (0..chunks)
        .into_par_iter()
        .map(|i| {
            let mut rng = chunk_rng(cfg.seed, i);
            let mut state = init();
            let mut acc = vec![Moments::default(); dim];
            let mut buf = vec![0.0; dim];
            for _ in cfg.chunk_range(i) {
                sample(&mut state, &mut rng, &mut buf)?;
                for (m, &v) in acc.iter_mut().zip(&buf) {
                    m.push(v);
                }
            }
            Ok(acc)
        })
        .collect();
    let mut total = vec![Moments::default(); dim];
    for part in parts {
        for (t, m) in total.iter_mut().zip(part?.iter()) {
            t.merge(m);
        }
    }
    Ok(total
        .iter()
        .map(|m| {
            let var = if m.n > 1.0 { m.m2 / (m.n - 1.0) } else { 0.0 };
            McSummary {
                estimate: m.mean,
                stderr: (var / m.n.max(1.0)).sqrt(),
                n: cfg.n,
                seed: cfg.seed,
            }
        })
        .collect())
}

/// Scalar convenience wrapper around [`run_chunks`].
pub fn run_scalar<S, I, F>(cfg: &McConfig, init: I, sample: F) -> Result<McSummary>
where
    I: Fn() -> S + Sync,
    F: Fn(&mut S, &mut ChaCha8Rng) -> Result<f64> + Sync,
{
    let v = run_chunks(cfg, 1, init, |s, rng, out| {
        out[0] = sample(s, rng)?;
        Ok(())
    })?;
    Ok(v[0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn uniform_mean_and_stderr() {
        let s = run_scalar(&McConfig::new(100_000, 7), || (), |_, rng| Ok(rng.gen::<f64>())).unwrap();
        assert!(s.within(0.5, 4.0));
        assert!((s.stderr - (1.0f64 / 12.0 / 1e5).sqrt()).abs() < 1e-5);
    }

    #[test]
    fn deterministic_across_thread_counts() {
        let cfg = McConfig::new(10_000, 3);
        let f = |_: &mut (), rng: &mut ChaCha8Rng| Ok(rng.gen::<f64>());
        let a = run_scalar(&cfg, || (), f).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| run_scalar(&cfg, || (), f)).unwrap();
        assert_eq!(a.estimate.to_bits(), b.estimate.to_bits());
        assert_eq!(a.stderr.to_bits(), b.stderr.to_bits());
    }

    #[test]
    fn chunks_partition_the_sample() {
        let cfg = McConfig {
            n: 1003,
            seed: 0,
            chunks: 64,
        };
        let total: usize = (0..64).map(|i| cfg.chunk_range(i).len()).sum();
        assert_eq!(total, 1003);
    }
}
