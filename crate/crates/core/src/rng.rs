//! Deterministic random-stream derivation.
//!
//! One base seed drives a whole experiment. Every stochastic subsystem
//! (topology, fading, selection, power draws, data partition, ANN
//! initialization) gets its own independent substream so that two
//! experiments sharing a seed observe identical channel realizations
//! even when they consume different numbers of selection or power
//! draws (common random numbers).
//!
//! Fading and power streams are additionally re-keyed per round, so a
//! `ChannelState` is a pure function of `(seed, round)`.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent random substreams of one experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Topology,
    Fading,
    Selection,
    Power,
    Partition,
    AnnInit,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Topology => 1,
            Stream::Fading => 2,
            Stream::Selection => 3,
            Stream::Power => 4,
            Stream::Partition => 5,
            Stream::AnnInit => 6,
        }
    }
}

/// SplitMix64 step; the standard seed-expansion mixer.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn chacha_from_words(words: &[u64]) -> ChaCha8Rng {
    let mut state: u64 = 0x243f_6a88_85a3_08d3; // pi fraction, arbitrary non-zero start
    for &w in words {
        state ^= w;
        splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// RNG for a whole-experiment substream.
pub fn substream(seed: u64, stream: Stream) -> ChaCha8Rng {
    chacha_from_words(&[seed, stream.id()])
}

/// RNG re-keyed per round: bit-identical draws for a given
/// `(seed, stream, round)` regardless of what happened in other rounds.
pub fn round_substream(seed: u64, stream: Stream, round: usize) -> ChaCha8Rng {
    chacha_from_words(&[seed, stream.id(), round as u64])
}
