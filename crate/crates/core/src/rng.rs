//! Deterministic random streams.
//!
//! Every simulation draws from a `ChaCha8Rng` seeded from the run seed, with a
//! distinct stream id per independent component (signal, noise, asset...).
//! Same seed and stream id give the same numbers on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: Vec<u64> = (0..8).map(|_| 0).scan(stream(7, 1), |r, _| Some(r.random())).collect();
        let b: Vec<u64> = (0..8).map(|_| 0).scan(stream(7, 1), |r, _| Some(r.random())).collect();
        let c: Vec<u64> = (0..8).map(|_| 0).scan(stream(7, 2), |r, _| Some(r.random())).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
