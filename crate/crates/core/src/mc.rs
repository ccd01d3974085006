//! Reproducible parallel Monte Carlo.
//!
//! Samples are split into fixed-size batches; batch `k` draws from ChaCha8
//! stream `k` of the run seed, and batch results are reduced in batch order.
//! The output therefore depends only on `(seed, samples)`, never on the
//! worker count or on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type McRng = ChaCha8Rng;

/// Samples per batch; also the granularity of the RNG substreams.
pub const BATCH: u64 = 1 << 14;

/// RNG for substream `stream` of `seed`.
pub fn substream(seed: u64, stream: u64) -> McRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct McPlan {
    pub samples: u64,
    pub seed: u64,
    pub workers: usize,
}

impl McPlan {
    pub fn new(samples: u64, seed: u64) -> Self {
        Self { samples, seed, workers: 1 }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    /// Same sample budget on an independent family of streams, so several
    /// estimates inside one run do not share random numbers.
    pub fn derived(&self, salt: u64) -> Self {
        let mixed = self.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
        Self { seed: mixed, ..*self }
    }

    fn batches(&self) -> Vec<(u64, u64)> {
        let full = self.samples / BATCH;
        let rest = self.samples % BATCH;
        let mut v: Vec<(u64, u64)> = (0..full).map(|k| (k, BATCH)).collect();
        if rest > 0 {
            v.push((full, rest));
        }
        v
    }

    /// Runs `batch(rng, count)` for every batch and returns the results in
    /// batch order.
    pub fn run<T, F>(&self, batch: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(&mut McRng, u64) -> T + Sync,
    {
        let jobs = self.batches();
        let seed = self.seed;
        let work = || jobs.par_iter().map(|&(k, count)| batch(&mut substream(seed, k), count)).collect();
        if self.workers <= 1 {
            return Ok(jobs.iter().map(|&(k, count)| batch(&mut substream(seed, k), count)).collect());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(work))
    }
}

/// Streaming mean/variance accumulator (Welford), mergeable in a fixed order.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct MeanVar {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl MeanVar {
    /// A known value with zero uncertainty.
    pub fn exact(value: f64) -> MeanVar {
        MeanVar { count: 1, mean: value, m2: 0.0 }
    }

    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &MeanVar) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }

    pub fn merged<'a, I: IntoIterator<Item = &'a MeanVar>>(parts: I) -> MeanVar {
        let mut acc = MeanVar::default();
        for p in parts {
            acc.merge(p);
        }
        acc
    }
}
