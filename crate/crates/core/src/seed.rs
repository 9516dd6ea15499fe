//! Reproducible per-task random streams.
//!
//! Every block of users in every run of every perturbation group gets its
//! own generator, seeded from the master seed and the three indices. The
//! indices are packed into one 64-bit word (20 + 20 + 24 bits) and passed
//! through the SplitMix64 finalizer, a bijection, so for a fixed master seed
//! distinct index triples always receive distinct seeds.

use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type StreamRng = Xoshiro256PlusPlus;

pub const CELL_BITS: u32 = 20;
pub const RUN_BITS: u32 = 20;
pub const BLOCK_BITS: u32 = 24;

/// Users sharing one random stream. Chunks are built from whole blocks, so
/// outputs do not depend on the chunk count.
pub const USER_BLOCK: usize = 4096;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// SplitMix64 output function.
#[inline]
pub fn mix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPlan {
    pub master_seed: u64,
    /// Number of parallel tasks a run's population is split into.
    pub chunk_count: usize,
}

impl SeedPlan {
    pub fn new(master_seed: u64, chunk_count: usize) -> Result<Self> {
        if chunk_count == 0 {
            return Err(Error::param("chunk_count must be at least 1"));
        }
        Ok(Self {
            master_seed,
            chunk_count,
        })
    }

    pub fn derive(&self, cell: usize, run: usize, block: usize) -> Result<u64> {
        if cell >= 1 << CELL_BITS || run >= 1 << RUN_BITS || block >= 1 << BLOCK_BITS {
            return Err(Error::param(format!(
                "seed indices (cell={cell}, run={run}, block={block}) exceed the packing limits"
            )));
        }
        let packed = ((cell as u64) << (RUN_BITS + BLOCK_BITS))
            | ((run as u64) << BLOCK_BITS)
            | block as u64;
        Ok(mix64(mix64(packed) ^ mix64(self.master_seed)))
    }

    pub fn rng(&self, cell: usize, run: usize, block: usize) -> Result<StreamRng> {
        Ok(StreamRng::seed_from_u64(self.derive(cell, run, block)?))
    }

    /// Population-resampling stream for a run; disjoint from user blocks
    /// because it uses the top block index.
    pub fn population_seed(&self, cell: usize, run: usize) -> Result<u64> {
        self.derive(cell, run, (1 << BLOCK_BITS) - 1)
    }
}
