//! Seed derivation. Every random stream in the engine is a pure function of a
//! master seed and a label, so runs reproduce bit-for-bit across processes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// Child seed for `label` under `parent`: `splitmix64(parent ^ splitmix64(fnv1a(label)))`.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    splitmix64(parent ^ splitmix64(fnv1a(label.as_bytes())))
}

pub fn rng(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Named sub-streams of one master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStreams {
    pub master: u64,
}

impl SeedStreams {
    pub fn new(master: u64) -> Self {
        Self { master }
    }

    pub fn synth(&self) -> u64 {
        derive_seed(self.master, "synth")
    }

    pub fn sampling(&self) -> u64 {
        derive_seed(self.master, "sampling")
    }

    pub fn mock(&self) -> u64 {
        derive_seed(self.master, "mock")
    }

    /// Per-block stream inside the synth stream.
    pub fn block(&self, block_id: &str) -> u64 {
        derive_seed(self.synth(), block_id)
    }

    /// Per-state stream inside the sampling stream.
    pub fn state(&self, code: &str) -> u64 {
        derive_seed(self.sampling(), code)
    }
}
