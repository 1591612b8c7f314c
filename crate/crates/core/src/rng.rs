//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream keyed by a
//! master seed, a domain tag, and a point index, with the chunk index as
//! the ChaCha stream id. Work split into chunks therefore sees the same
//! numbers no matter how many threads run it. Gaussian samples use the
//! ziggurat method of `rand_distr::StandardNormal`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Domain tags keep unrelated consumers of one master seed apart.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    MutualInformation = 1,
    UncodedBer = 2,
    BicmBer = 3,
    Interleaver = 4,
    SymbolErrors = 5,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream for chunk `chunk` of point `point` under `seed`.
pub fn stream(seed: u64, domain: Domain, point: u64, chunk: u64) -> ChaCha8Rng {
    let mut state = seed;
    let mut key = [0u8; 32];
    let words = [
        splitmix64(&mut state),
        splitmix64(&mut state) ^ domain as u64,
        splitmix64(&mut state) ^ point,
        splitmix64(&mut state),
    ];
    for (dst, w) in key.chunks_exact_mut(8).zip(words) {
        dst.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(chunk);
    rng
}
