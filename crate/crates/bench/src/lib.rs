//! Fixtures shared by the benchmarks.

use mot_core::rng::{stream, Stream};
use mot_core::{Corpus, ModelState, Result, SignalDictionary};

/// Dictionary, corpus and freshly initialized model at the default scale.
pub fn fixture(dim: usize, num_classes: usize, num_experts: usize, num_tokens: usize) -> Result<(Corpus, ModelState)> {
    let dict = SignalDictionary::build(dim, num_classes, &mut stream(0, Stream::Dictionary))?;
    let corpus = Corpus::build(&dict, num_tokens, 0.05, 4, 0)?;
    let model = ModelState::init(dim, num_experts, 0.1, &mut stream(0, Stream::MotInit))?;
    Ok((corpus, model))
}
