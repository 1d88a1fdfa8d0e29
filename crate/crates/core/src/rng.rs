//! Seeded random streams.
//!
//! Every consumer of randomness in a run gets its own ChaCha stream derived
//! from the run seed, so adding a draw in one place never shifts the draws
//! seen by another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named substreams of a run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Dictionary = 1,
    Corpus = 2,
    MotInit = 3,
    MultiHeadInit = 4,
    MoeFfnInit = 5,
    Routing = 6,
    ProbeCorpus = 7,
    Histogram = 8,
    GradCheck = 9,
}

impl Stream {
    pub const ALL: [Stream; 9] = [
        Stream::Dictionary,
        Stream::Corpus,
        Stream::MotInit,
        Stream::MultiHeadInit,
        Stream::MoeFfnInit,
        Stream::Routing,
        Stream::ProbeCorpus,
        Stream::Histogram,
        Stream::GradCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Dictionary => "dictionary",
            Stream::Corpus => "corpus",
            Stream::MotInit => "mot_init",
            Stream::MultiHeadInit => "multihead_init",
            Stream::MoeFfnInit => "moe_ffn_init",
            Stream::Routing => "routing",
            Stream::ProbeCorpus => "probe_corpus",
            Stream::Histogram => "histogram",
            Stream::GradCheck => "gradcheck",
        }
    }
}

pub fn stream(seed: u64, which: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

pub fn seeded(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
