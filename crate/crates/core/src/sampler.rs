//! Seeded Gaussian sampling.
//!
//! Every random draw in the crate goes through [`SeededSampler`]. The
//! generator is ChaCha8 keyed by the 64-bit seed with the ChaCha stream
//! counter set to the stream id, so `(seed, stream)` pairs are
//! reproducible bit-for-bit and distinct stream ids never share a
//! keystream. Standard normals use the Ziggurat method from `rand_distr`.
//! Matrices are filled row by row.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{invalid, Result};

#[derive(Clone, Debug)]
pub struct SeededSampler {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl SeededSampler {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Child sampler on a stream derived from this one's stream and `id`.
    ///
    /// Derivation is independent of how many draws the parent has made.
    pub fn substream(&self, id: u64) -> Self {
        Self::new(self.seed, splitmix64(splitmix64(self.stream) ^ id))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in `0..bound`.
    pub fn below(&mut self, bound: usize) -> usize {
        self.rng.random_range(0..bound)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `rows x cols` matrix of i.i.d. N(0, variance) entries.
pub fn gaussian_matrix(rows: usize, cols: usize, variance: f64, sampler: &mut SeededSampler) -> Result<DMatrix<f64>> {
    if !variance.is_finite() || variance < 0.0 {
        return Err(invalid(format!("variance must be finite and >= 0, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(DMatrix::zeros(rows, cols));
    }
    let sd = variance.sqrt();
    let draws: Vec<f64> = (0..rows * cols).map(|_| sd * sampler.standard_normal()).collect();
    Ok(DMatrix::from_row_slice(rows, cols, &draws))
}
