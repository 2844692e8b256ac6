//! Seeded RNG streams.
//!
//! Each worker draws its mini-batches from a stream derived from
//! `(seed, stream id)`, so the sample sequence a worker sees does not depend
//! on thread interleaving. Stream 0 is the one the serial reference runners
//! use, which is what makes single-worker asynchronous runs replay the serial
//! trajectory exactly.

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::svrg::MiniBatch;

/// Stream used for mini-batch sampling by worker `w`.
pub fn batch_stream(seed: u64, worker: usize) -> Xoshiro256PlusPlus {
    derive(seed, worker as u64, 0x42a7)
}

/// Stream used for coordinate-block sampling by worker `w`.
pub fn block_stream(seed: u64, worker: usize) -> Xoshiro256PlusPlus {
    derive(seed, worker as u64, 0xb10c)
}

/// Stream used by schedule and delay-model generators.
pub fn model_stream(seed: u64) -> Xoshiro256PlusPlus {
    derive(seed, 0, 0xde1a)
}

/// Stream used for parameter initialization and probe points.
pub fn init_stream(seed: u64) -> Xoshiro256PlusPlus {
    derive(seed, 0, 0x1217)
}

/// Stream used by the synthetic data generators.
pub fn data_stream(seed: u64) -> Xoshiro256PlusPlus {
    derive(seed, 0, 0xda7a)
}

fn derive(seed: u64, stream: u64, tag: u64) -> Xoshiro256PlusPlus {
    // splitmix64 over (seed, stream, tag) gives well-spread 64-bit seeds.
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(tag.wrapping_mul(0xbf58_476d_1ce4_e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^= z >> 31;
    Xoshiro256PlusPlus::seed_from_u64(z)
}

/// Uniform-with-replacement mini-batch of size `b` from `(0..n)`. A batch of
/// the full size is the whole dataset in index order, deterministically, and
/// consumes no randomness.
pub fn sample_batch(rng: &mut Xoshiro256PlusPlus, n: usize, b: usize) -> MiniBatch {
    if b == n {
        return MiniBatch::new_unchecked((0..n).collect());
    }
    let indices = (0..b).map(|_| rng.gen_range(0..n)).collect();
    MiniBatch::new_unchecked(indices)
}

/// Uniform random subset of `block_size` distinct coordinates from `(0..d)`,
/// by partial Fisher-Yates.
pub fn sample_block(rng: &mut Xoshiro256PlusPlus, d: usize, block_size: usize) -> Vec<usize> {
    debug_assert!(block_size >= 1 && block_size <= d);
    if block_size == d {
        return (0..d).collect();
    }
    let mut pool: Vec<usize> = (0..d).collect();
    for i in 0..block_size {
        let j = rng.gen_range(i..d);
        pool.swap(i, j);
    }
    pool.truncate(block_size);
    pool
}
