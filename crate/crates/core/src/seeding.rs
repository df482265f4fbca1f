//! Seed-derived random streams. Every random quantity in a run comes from
//! `(seed, stream, index)`, so any batch or initialization can be
//! regenerated independently.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    GeneratorInit,
    DiscriminatorInit,
    EpochOrder,
    TrainLatent,
    EvalLatent,
    SyntheticData,
    Extractor,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::GeneratorInit => 1,
            Stream::DiscriminatorInit => 2,
            Stream::EpochOrder => 3,
            Stream::TrainLatent => 4,
            Stream::EvalLatent => 5,
            Stream::SyntheticData => 6,
            Stream::Extractor => 7,
        }
    }
}

pub fn rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    rng_at(seed, stream, 0)
}

/// Independent generator for item `index` of `stream`.
pub fn rng_at(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream((stream.id() << 48) ^ index);
    r
}
