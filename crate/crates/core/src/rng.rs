//! Counter-based Gaussian noise keyed by `(seed, path, index)`.
//!
//! Each path owns a ChaCha stream; normal number `index` of a path always
//! consumes the same two 64-bit words, so draws are independent of the order
//! and the thread they are generated on. Brownian increments on coarser time
//! grids are exact sums of the finest increments.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// 32-bit words consumed per normal draw.
const WORDS_PER_NORMAL: u128 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseSource {
    seed: u64,
}

fn unit_open(bits: u64) -> f64 {
    // (0, 1]
    ((bits >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn unit_half_open(bits: u64) -> f64 {
    // [0, 1)
    (bits >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = unit_open(rng.next_u64());
    let u2 = unit_half_open(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn stream(&self, path: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path);
        rng
    }

    /// Standard normal number `index` of `path`.
    pub fn normal(&self, path: u64, index: u64) -> f64 {
        let mut rng = self.stream(path);
        rng.set_word_pos(u128::from(index) * WORDS_PER_NORMAL);
        box_muller(&mut rng)
    }

    /// Normals `start..start + count` of `path`, identical to calling
    /// [`NoiseSource::normal`] for each index.
    pub fn normals(&self, path: u64, start: u64, count: usize) -> Vec<f64> {
        let mut rng = self.stream(path);
        rng.set_word_pos(u128::from(start) * WORDS_PER_NORMAL);
        (0..count).map(|_| box_muller(&mut rng)).collect()
    }

    /// Brownian increments `[step][factor]` on `n_steps` steps of size `dt`.
    /// Step `k`, factor `j` uses normal `k * n_factors + j`.
    pub fn increments(
        &self,
        path: u64,
        n_steps: usize,
        n_factors: usize,
        dt: f64,
    ) -> Vec<Vec<f64>> {
        let z = self.normals(path, 0, n_steps * n_factors);
        let s = dt.sqrt();
        if n_factors == 0 {
            return vec![vec![]; n_steps];
        }
        z.chunks(n_factors)
            .map(|c| c.iter().map(|v| v * s).collect())
            .collect()
    }
}

/// Sums consecutive blocks of `factor` fine increments into coarse ones.
pub fn aggregate(fine: &[Vec<f64>], factor: usize) -> Vec<Vec<f64>> {
    assert!(
        factor > 0 && fine.len().is_multiple_of(factor),
        "fine steps must divide evenly"
    );
    fine.chunks(factor)
        .map(|block| {
            let mut acc = vec![0.0; block[0].len()];
            for inc in block {
                for (a, v) in acc.iter_mut().zip(inc) {
                    *a += v;
                }
            }
            acc
        })
        .collect()
}
