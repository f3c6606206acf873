//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 (a counter-based stream cipher) keyed by
//! `ChaCha8Rng::seed_from_u64(seed)` and separated by `set_stream(stream)`.
//! ChaCha output is specified bit-for-bit and independent of host endianness,
//! so identical seeds reproduce identical data on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids used across the crate; distinct purposes never share a stream.
pub mod streams {
    pub const BLOB_CENTERS: u64 = 0x0b10_b000;
    pub const BLOB_SAMPLES: u64 = 0x0b10_b001;
    pub const INIT: u64 = 0x1417_0000;
    pub const SHUFFLE: u64 = 0x5a0f_f1e0;
    pub const SEARCH: u64 = 0x5ea2_c400;
    pub const LAB: u64 = 0x1ab0_0000;
}

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
