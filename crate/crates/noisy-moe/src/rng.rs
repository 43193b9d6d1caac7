//! Seed derivation and per-task random streams.
//!
//! Every parallel unit of work (GMM restart, LTS elemental start, benchmark
//! replication) owns a ChaCha stream derived from a seed and a stream index,
//! so results do not depend on thread scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; decorrelates related seed values.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from a base seed and a tag.
pub fn derive_seed(base: u64, tag: u64) -> u64 {
    splitmix64(base ^ splitmix64(tag))
}

/// A reproducible RNG for stream `stream` of the generator seeded by `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
