//! Counter-derived random streams.
//!
//! Every consumer of randomness gets its own ChaCha stream keyed by the
//! master seed and a stream id, so draws never depend on the order in which
//! agents are visited or on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type StreamRng = ChaCha12Rng;

const TRAJECTORY_STREAM: u64 = 0;
const AUX_BASE: u64 = 1 << 62;

/// Stream used to generate the target trajectory.
pub fn trajectory_rng(seed: u64) -> StreamRng {
    stream(seed, TRAJECTORY_STREAM)
}

/// Stream owned by agent `agent` in round `round` (1-based rounds).
pub fn agent_round_rng(seed: u64, agent: usize, round: usize) -> StreamRng {
    let id = 1 + ((round as u64) << 24 | agent as u64);
    debug_assert!(id < AUX_BASE);
    stream(seed, id)
}

/// Auxiliary streams (constant estimation, probes); disjoint from the above.
pub fn aux_rng(seed: u64, tag: u64) -> StreamRng {
    stream(seed, AUX_BASE + tag)
}

fn stream(seed: u64, id: u64) -> StreamRng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
