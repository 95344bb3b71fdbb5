//! Named random sub-streams derived from one root seed.
//!
//! Each pipeline stage draws from its own ChaCha stream, so changing how many
//! numbers one stage consumes never shifts the numbers another stage sees.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Data = 1,
    Init = 2,
    Batching = 3,
    EvalSplit = 4,
    Augment = 5,
    Partition = 6,
}

impl Stream {
    pub const ALL: [Stream; 6] =
        [Stream::Data, Stream::Init, Stream::Batching, Stream::EvalSplit, Stream::Augment, Stream::Partition];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Data => "data",
            Stream::Init => "init",
            Stream::Batching => "batching",
            Stream::EvalSplit => "eval-split",
            Stream::Augment => "augment",
            Stream::Partition => "partition",
        }
    }
}

pub fn stream(root_seed: u64, which: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(root_seed);
    rng.set_stream(which as u64);
    rng
}

/// Serializable position of a ChaCha generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}
