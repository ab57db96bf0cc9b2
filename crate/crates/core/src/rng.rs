//! Seeded random streams.
//!
//! Every random draw in the crate goes through [`stream`], which returns a
//! ChaCha8 generator keyed by the user seed and positioned on a fixed
//! stream id. Distinct consumers (initialization, data, SGD batches, probe
//! directions) use distinct stream ids, so a run's randomness does not depend
//! on which other runs were executed or in what order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fixed stream ids. Values are part of the reproducibility contract.
pub mod streams {
    pub const INIT: u64 = 1;
    pub const DATA: u64 = 2;
    pub const SPLIT: u64 = 3;
    pub const BATCH: u64 = 4;
    pub const PROBE: u64 = 5;
    pub const GQM: u64 = 6;
}

/// Generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
