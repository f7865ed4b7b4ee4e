//! Seeded Brownian increments with exact dyadic coarsening.
//!
//! A path is identified by `(seed, path_index)`; the generator for it is a
//! ChaCha8 stream keyed by the seed with the path index as stream id, so a
//! path can be regenerated in isolation regardless of which worker draws it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rational::Rational;

#[derive(Debug, Clone, PartialEq)]
pub struct BrownianGrid {
    pub noise_dim: usize,
    pub step: Rational,
    pub n_steps: usize,
    /// Row-major `n_steps x noise_dim`.
    pub increments: Vec<f64>,
    pub seed: u64,
    pub path_index: u64,
}

impl BrownianGrid {
    /// `W(t_{k+1}) - W(t_k)`.
    #[inline]
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.noise_dim..(k + 1) * self.noise_dim]
    }

    /// Sum of increments per noise component, in pairwise order.
    pub fn total_displacement(&self) -> Vec<f64> {
        (0..self.noise_dim)
            .map(|j| {
                let col: Vec<f64> = (0..self.n_steps).map(|k| self.increments[k * self.noise_dim + j]).collect();
                pairwise_sum(&col)
            })
            .collect()
    }
}

pub fn path_rng(seed: u64, path_index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_index);
    rng
}

pub fn generate(seed: u64, path_index: u64, noise_dim: usize, step: Rational, n_steps: usize) -> Result<BrownianGrid> {
    if n_steps == 0 || noise_dim == 0 {
        return Err(Error::ParameterOutOfRange("Brownian grid needs n_steps >= 1 and noise_dim >= 1".into()));
    }
    if !step.is_positive() {
        return Err(Error::ParameterOutOfRange(format!("step must be positive, got {step}")));
    }
    let sd = step.to_f64().sqrt();
    let mut rng = path_rng(seed, path_index);
    let increments = (0..n_steps * noise_dim)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z * sd
        })
        .collect();
    Ok(BrownianGrid {
        noise_dim,
        step,
        n_steps,
        increments,
        seed,
        path_index,
    })
}

/// Sum with a fixed binary tree: split at the largest power of two strictly
/// below the length. Repeated halving of a block then reproduces the tree of
/// the whole block, so dyadic coarsenings compose exactly.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let split = if n.is_power_of_two() { n / 2 } else { 1 << (usize::BITS - 1 - n.leading_zeros()) };
            pairwise_sum(&xs[..split]) + pairwise_sum(&xs[split..])
        }
    }
}

pub fn coarsen(fine: &BrownianGrid, factor: usize) -> Result<BrownianGrid> {
    if factor < 2 {
        return Err(Error::GridMismatch(format!("coarsening factor must be at least 2, got {factor}")));
    }
    if !fine.n_steps.is_multiple_of(factor) {
        return Err(Error::GridMismatch(format!(
            "coarsening factor {factor} does not divide {} steps",
            fine.n_steps
        )));
    }
    let step = fine
        .step
        .checked_mul_int(factor as i64)
        .ok_or_else(|| Error::GridMismatch("coarse step overflows".into()))?;
    let d = fine.noise_dim;
    let n_steps = fine.n_steps / factor;
    let mut increments = vec![0.0; n_steps * d];
    let mut block = vec![0.0; factor];
    for j in 0..n_steps {
        for c in 0..d {
            for (i, b) in block.iter_mut().enumerate() {
                *b = fine.increments[(j * factor + i) * d + c];
            }
            increments[j * d + c] = pairwise_sum(&block);
        }
    }
    Ok(BrownianGrid {
        noise_dim: d,
        step,
        n_steps,
        increments,
        seed: fine.seed,
        path_index: fine.path_index,
    })
}
