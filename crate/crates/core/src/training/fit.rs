//! Deterministic mini-batch training loop.
//!
//! Each batch is cut into at most [`MAX_CHUNKS`] contiguous chunks. Every
//! chunk accumulates gradients into its own copy of the model, and the copies
//! are merged in chunk order, so serial and parallel runs add the same
//! numbers in the same order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::optim::AdaGradMomentum;
use crate::error::{Error, Result};
use crate::neural::Module;

pub const MAX_CHUNKS: usize = 8;

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub name: &'static str,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub parallel: bool,
    /// Draw fresh negatives every epoch instead of fixing them per sample.
    pub resample_negatives: bool,
}

/// Randomness handed to the per-sample loss.
pub struct SampleRng {
    /// Dropout masks.
    pub dropout: ChaCha8Rng,
    /// Negative sampling.
    pub negatives: ChaCha8Rng,
}

fn chunk_bounds(len: usize) -> Vec<(usize, usize)> {
    let k = MAX_CHUNKS.min(len);
    (0..k).map(|c| (c * len / k, (c + 1) * len / k)).collect()
}

/// Trains `model` and returns the mean per-sample loss of every epoch.
/// `loss` must accumulate gradients into the model it is given.
pub fn fit<M, S, F>(model: &mut M, samples: &[S], opts: &FitOptions, rng: &mut ChaCha8Rng, loss: F) -> Result<Vec<f64>>
where
    M: Module<f32> + Clone + Send + Sync,
    S: Sync,
    F: Fn(&mut M, &S, &mut SampleRng) -> Result<f32> + Sync,
{
    if samples.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if opts.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    model.zero_grad();
    let mut opt = AdaGradMomentum::new(model, opts.learning_rate, opts.momentum);
    let fixed_negatives: u64 = rng.gen();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    // One gradient buffer per chunk, reused across batches.
    let mut replicas: Vec<M> = (0..MAX_CHUNKS.min(opts.batch_size)).map(|_| model.clone()).collect();
    let mut curve = Vec::with_capacity(opts.epochs);

    for epoch in 0..opts.epochs {
        order.shuffle(rng);
        let mut total = 0.0f64;
        for batch in order.chunks(opts.batch_size) {
            let seeds: Vec<(u64, u64)> = batch
                .iter()
                .map(|&i| {
                    let dropout = rng.gen();
                    let neg = if opts.resample_negatives {
                        rng.gen()
                    } else {
                        fixed_negatives ^ (i as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    };
                    (dropout, neg)
                })
                .collect();
            let bounds = chunk_bounds(batch.len());
            let current: &M = model;
            let run_chunk = |(local, &(lo, hi)): (&mut M, &(usize, usize))| -> Result<f64> {
                local.sync_from(current);
                let mut sum = 0.0f64;
                for k in lo..hi {
                    let mut r = SampleRng {
                        dropout: ChaCha8Rng::seed_from_u64(seeds[k].0),
                        negatives: ChaCha8Rng::seed_from_u64(seeds[k].1),
                    };
                    sum += loss(local, &samples[batch[k]], &mut r)? as f64;
                }
                Ok(sum)
            };
            let workers = &mut replicas[..bounds.len()];
            let sums: Vec<Result<f64>> = if opts.parallel {
                workers.par_iter_mut().zip(bounds.par_iter()).map(run_chunk).collect()
            } else {
                workers.iter_mut().zip(bounds.iter()).map(run_chunk).collect()
            };
            for (local, sum) in workers.iter().zip(sums) {
                model.accumulate_grads_from(local);
                total += sum?;
            }
            opt.step(model)?;
        }
        let mean = total / samples.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Numerical(format!("{}: loss diverged at epoch {}", opts.name, epoch + 1)));
        }
        log::info!("{} epoch {}/{}: mean loss {mean:.6}", opts.name, epoch + 1, opts.epochs);
        curve.push(mean);
    }
    Ok(curve)
}

/// CSV `epoch,meanLoss` with 1-based epochs.
pub fn loss_csv(curve: &[f64]) -> String {
    let mut s = String::from("epoch,meanLoss\n");
    for (i, v) in curve.iter().enumerate() {
        s.push_str(&format!("{},{v}\n", i + 1));
    }
    s
}
