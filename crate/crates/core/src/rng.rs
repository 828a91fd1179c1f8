//! Counter-based random streams.
//!
//! Every random draw in a run is taken from a ChaCha stream keyed by the
//! master seed and addressed by `(purpose, step, user)`. Streams never
//! overlap, so per-user work can run in any order or on any thread and
//! still produce the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes. Kept as distinct tags so unrelated consumers never
/// share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Purpose {
    Step = 1,
    UserInit = 2,
    Catalog = 3,
    Links = 4,
    PairSample = 5,
}

/// SplitMix64 finalizer.
pub fn mix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn key_for(master: u64, purpose: Purpose) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = master ^ ((purpose as u64) << 56);
    for chunk in key.chunks_exact_mut(8) {
        state = mix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// Returns the generator for `(purpose, major, minor)` under `master`.
///
/// `major` is typically the step index and `minor` the user index; both are
/// packed into the 64-bit ChaCha stream id, so `major` must stay below 2^32.
pub fn stream(master: u64, purpose: Purpose, major: u64, minor: u64) -> ChaCha8Rng {
    debug_assert!(major < (1 << 32) && minor < (1 << 32));
    let mut rng = ChaCha8Rng::from_seed(key_for(master, purpose));
    rng.set_stream((major << 32) | (minor & 0xFFFF_FFFF));
    rng
}
