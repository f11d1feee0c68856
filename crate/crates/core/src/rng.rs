//! Deterministic random streams.
//!
//! Every Monte Carlo job draws from child streams keyed by
//! `(root seed, module tag, block index)`. Replicas are partitioned into
//! fixed-size blocks; each block owns one stream, so results depend only on
//! the seed and the block size, never on how many workers ran the blocks.

use rand::SeedableRng;
use rand_pcg::Pcg64Mcg;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type SimRng = Pcg64Mcg;

/// Default number of replicas per block.
pub const DEFAULT_BLOCK_SIZE: u64 = 1 << 14;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// `hash64(root seed, module tag, block index)`.
pub fn derive_seed(root: u64, tag: &str, block: u64) -> u64 {
    let a = splitmix64(root);
    let b = splitmix64(a ^ fnv1a(tag.as_bytes()));
    splitmix64(b ^ splitmix64(block.wrapping_add(0x632b_e59b_d9b4_e019)))
}

/// A named stream family rooted at a seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub seed: u64,
    pub tag: String,
}

impl StreamSpec {
    pub fn new(seed: u64, tag: impl Into<String>) -> Self {
        Self {
            seed,
            tag: tag.into(),
        }
    }

    /// A sibling family with a suffixed tag.
    pub fn child(&self, suffix: &str) -> Self {
        Self {
            seed: self.seed,
            tag: format!("{}/{}", self.tag, suffix),
        }
    }

    pub fn block_rng(&self, block: u64) -> SimRng {
        SimRng::seed_from_u64(derive_seed(self.seed, &self.tag, block))
    }

    pub fn rng(&self) -> SimRng {
        self.block_rng(0)
    }
}

/// Partition of `reps` replicas into fixed-size blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPlan {
    pub reps: u64,
    pub block_size: u64,
}

impl BlockPlan {
    pub fn new(reps: u64) -> Self {
        Self::with_block_size(reps, DEFAULT_BLOCK_SIZE)
    }

    pub fn with_block_size(reps: u64, block_size: u64) -> Self {
        assert!(block_size > 0, "block size must be positive");
        Self { reps, block_size }
    }

    pub fn blocks(&self) -> u64 {
        self.reps.div_ceil(self.block_size)
    }

    pub fn block_len(&self, block: u64) -> u64 {
        let start = block * self.block_size;
        self.block_size.min(self.reps - start)
    }

    /// Run `job(block_index, rng, block_len)` on every block in parallel and
    /// return the per-block results in block order.
    pub fn run<T, F>(&self, streams: &StreamSpec, job: F) -> Vec<T>
    where
        T: Send,
        F: Fn(u64, &mut SimRng, u64) -> T + Sync,
    {
        (0..self.blocks())
            .into_par_iter()
            .map(|b| {
                let mut rng = streams.block_rng(b);
                job(b, &mut rng, self.block_len(b))
            })
            .collect()
    }

    /// Like [`run`](Self::run) but folds block results into `acc` in block
    /// order, holding at most a bounded window of results in memory.
    pub fn fold<T, A, F, M>(&self, streams: &StreamSpec, mut acc: A, job: F, mut merge: M) -> A
    where
        T: Send,
        F: Fn(u64, &mut SimRng, u64) -> T + Sync,
        M: FnMut(&mut A, T),
    {
        let window = (4 * rayon::current_num_threads() as u64).max(FOLD_WINDOW);
        let total = self.blocks();
        let mut start = 0;
        while start < total {
            let end = (start + window).min(total);
            let part: Vec<T> = (start..end)
                .into_par_iter()
                .map(|b| {
                    let mut rng = streams.block_rng(b);
                    job(b, &mut rng, self.block_len(b))
                })
                .collect();
            for t in part {
                merge(&mut acc, t);
            }
            start = end;
        }
        acc
    }
}

const FOLD_WINDOW: u64 = 32;
