//! Counter-keyed random streams.
//!
//! Every draw in a connectivity update comes from a ChaCha8 stream whose key
//! is built from `(seed, step, purpose, a, b, c)`. Results therefore do not
//! depend on the order in which neurons are processed or on which rank
//! processes them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    Descent = 1,
    Resolve = 2,
    Oracle = 3,
    Population = 4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KeyedRng {
    pub seed: u64,
    pub step: u64,
}

impl KeyedRng {
    pub fn new(seed: u64, step: u64) -> Self {
        Self { seed, step }
    }

    pub fn stream(&self, purpose: Purpose, a: u64, b: u64, c: u64) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&self.step.to_le_bytes());
        key[16..24].copy_from_slice(&a.to_le_bytes());
        key[24..32].copy_from_slice(&b.to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream((purpose as u64) << 48 ^ c);
        rng
    }

    /// A single uniform draw in `[0, 1)` for one descent of one search.
    pub fn descent_draw(&self, neuron: u64, search: u32, descent: u32) -> f64 {
        let c = u64::from(search) << 32 | u64::from(descent);
        self.stream(Purpose::Descent, neuron, 0, c).random::<f64>()
    }
}
