//! Seeded Monte Carlo fan-out.
//!
//! Samples are grouped into fixed-size chunks. Chunk `k` draws from its own
//! ChaCha stream (`seed`, stream `k`), and chunk partial sums are combined in
//! chunk order with compensated summation. Results therefore do not depend on
//! the number of worker threads or on whether the `parallel` feature is on.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Samples per independent random stream.
pub const CHUNK_SIZE: usize = 256;

/// How independent work items are scheduled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Execution {
    Sequential,
    /// Rayon work stealing; falls back to sequential without the `parallel` feature.
    #[default]
    Parallel,
}

pub type SampleRng = ChaCha8Rng;

/// Random stream for chunk `chunk` of a run seeded with `seed`.
pub fn stream_rng(seed: u64, chunk: u64) -> SampleRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk);
    rng
}

/// Maps `f` over `0..count`, preserving index order in the output.
pub fn map_indexed<R, F>(exec: Execution, count: usize, f: F) -> Vec<R>
where
    R: Send,
    F: Fn(usize) -> R + Sync + Send,
{
    match exec {
        #[cfg(feature = "parallel")]
        Execution::Parallel => (0..count).into_par_iter().map(f).collect(),
        _ => (0..count).map(f).collect(),
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Sample moments accumulated with compensated sums.
#[derive(Debug, Clone, Copy, Default)]
pub struct Moments {
    pub count: usize,
    sum: CompensatedSum,
    sum_sq: CompensatedSum,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        self.sum.add(x);
        self.sum_sq.add(x * x);
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum.add(other.sum.sum);
        self.sum.add(other.sum.comp);
        self.sum_sq.add(other.sum_sq.sum);
        self.sum_sq.add(other.sum_sq.comp);
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum.value() / self.count as f64
        }
    }

    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = self.sum.value() / n;
        ((self.sum_sq.value() - n * m * m) / (n - 1.0)).max(0.0)
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Outcome of a Monte Carlo mean estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: usize,
    pub rejected: usize,
}

/// Derives an independent seed for sub-experiment `tag` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Estimates `E[f]` from `samples` draws. `f` may reject a draw by returning
/// `None`; it is then redrawn from the same stream. A chunk gives up after
/// `max_rejections` consecutive rejections and reports fewer samples.
pub fn estimate_mean<F>(
    exec: Execution,
    seed: u64,
    samples: usize,
    max_rejections: usize,
    f: F,
) -> MeanEstimate
where
    F: Fn(&mut SampleRng) -> Option<f64> + Sync + Send,
{
    try_estimate_mean::<_, std::convert::Infallible>(exec, seed, samples, max_rejections, |rng| {
        Ok(f(rng))
    })
    .unwrap_or_else(|e| match e {})
}

/// Fallible form of [`estimate_mean`]: the first error in chunk order is returned.
pub fn try_estimate_mean<F, E>(
    exec: Execution,
    seed: u64,
    samples: usize,
    max_rejections: usize,
    f: F,
) -> Result<MeanEstimate, E>
where
    F: Fn(&mut SampleRng) -> Result<Option<f64>, E> + Sync + Send,
    E: Send,
{
    let chunks = samples.div_ceil(CHUNK_SIZE);
    let parts = map_indexed(exec, chunks, |k| -> Result<(Moments, usize), E> {
        let mut rng = stream_rng(seed, k as u64);
        let want = CHUNK_SIZE.min(samples - k * CHUNK_SIZE);
        let mut m = Moments::default();
        let mut rejected = 0usize;
        let mut streak = 0usize;
        while m.count < want {
            match f(&mut rng)? {
                Some(x) => {
                    m.push(x);
                    streak = 0;
                }
                None => {
                    rejected += 1;
                    streak += 1;
                    if streak > max_rejections {
                        break;
                    }
                }
            }
        }
        Ok((m, rejected))
    });
    let mut total = Moments::default();
    let mut rejected = 0;
    for part in parts {
        let (m, r) = part?;
        total.merge(&m);
        rejected += r;
    }
    Ok(MeanEstimate {
        mean: total.mean(),
        std_error: total.std_error(),
        samples: total.count,
        rejected,
    })
}
