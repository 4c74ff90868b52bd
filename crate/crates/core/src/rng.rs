//! Seeded random streams. Every user, channel and auxiliary consumer gets
//! its own ChaCha stream derived from the master seed, so results do not
//! depend on evaluation order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const CHANNEL_BASE: u64 = 1 << 32;
const AUX_BASE: u64 = 1 << 40;

/// Streams for scenario construction (graph sampling, rate tables, ...).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aux {
    Graph = 0,
    Rates = 1,
    Clustering = 2,
    Optimum = 3,
}

pub fn user_stream(seed: u64, user: usize) -> Stream {
    stream(seed, user as u64)
}

pub fn channel_stream(seed: u64, channel: usize) -> Stream {
    stream(seed, CHANNEL_BASE + channel as u64)
}

pub fn aux_stream(seed: u64, which: Aux) -> Stream {
    stream(seed, AUX_BASE + which as u64)
}

fn stream(seed: u64, id: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = user_stream(7, 0).random();
        let b: u64 = user_stream(7, 1).random();
        let c: u64 = channel_stream(7, 0).random();
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, user_stream(7, 0).random::<u64>());
    }
}
