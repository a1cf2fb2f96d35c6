//! Labeled deterministic sub-streams derived from one master seed.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Sub-stream labels. Each party draws only from its own stream so results
/// do not depend on scheduling.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Client = 1,
    Server = 2,
    Mask = 3,
    Data = 4,
    Partition = 5,
    Shift = 6,
    Request = 7,
    Reference = 8,
    Decoder = 9,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a label and a path of indices.
pub fn derive(master: u64, stream: Stream, path: &[u64]) -> u64 {
    let mut h = splitmix(master ^ splitmix(stream as u64));
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream_rng(master: u64, stream: Stream, path: &[u64]) -> ChaCha8Rng {
    rng_from(derive(master, stream, path))
}

/// A ChaCha stream that can be checkpointed as `(seed, word position)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RngCheckpoint", into = "RngCheckpoint")]
pub struct ResumableRng {
    seed: u64,
    rng: ChaCha8Rng,
}

#[derive(Serialize, Deserialize)]
struct RngCheckpoint {
    seed: u64,
    word_pos: u128,
}

impl From<RngCheckpoint> for ResumableRng {
    fn from(c: RngCheckpoint) -> Self {
        let mut rng = rng_from(c.seed);
        rng.set_word_pos(c.word_pos);
        Self { seed: c.seed, rng }
    }
}

impl From<ResumableRng> for RngCheckpoint {
    fn from(r: ResumableRng) -> Self {
        RngCheckpoint { seed: r.seed, word_pos: r.rng.get_word_pos() }
    }
}

impl ResumableRng {
    pub fn new(seed: u64) -> Self {
        Self { seed, rng: rng_from(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }
}

impl RngCore for ResumableRng {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Wraps a generator and counts the 32-bit words it hands out.
#[derive(Debug)]
pub struct CountingRng<'a, R: RngCore + ?Sized> {
    inner: &'a mut R,
    words: u64,
}

impl<'a, R: RngCore + ?Sized> CountingRng<'a, R> {
    pub fn new(inner: &'a mut R) -> Self {
        Self { inner, words: 0 }
    }

    pub fn words(&self) -> u64 {
        self.words
    }
}

impl<R: RngCore + ?Sized> RngCore for CountingRng<'_, R> {
    fn next_u32(&mut self) -> u32 {
        self.words += 1;
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.words += 2;
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.words += dst.len().div_ceil(4) as u64;
        self.inner.fill_bytes(dst)
    }
}
