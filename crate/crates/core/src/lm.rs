//! Interfaces between generators, likelihood models and the rest of the pipeline.

use crate::error::Result;
use crate::sampling::SamplingStrategy;

/// Something that continues a prefix.
///
/// Sample `j` of a call must come from its own seeded stream so that it does not depend on
/// `num_samples`. A returned sample shorter than `num_new_tokens` means the generator
/// emitted end-of-sequence; the end marker itself is not returned.
pub trait Generator: Send + Sync {
    fn generate(
        &self,
        prefix: &[String],
        num_new_tokens: usize,
        num_samples: usize,
        strategy: &SamplingStrategy,
        seed: u64,
    ) -> Result<Vec<Vec<String>>>;

    /// Position of `token` in the generator's vocabulary, used for tie-breaking.
    fn token_order(&self, _token: &str) -> Option<u32> {
        None
    }

    /// Whether identical seeds are known to reproduce identical samples.
    fn seed_attested(&self) -> bool {
        true
    }
}

/// Exact conditional log-likelihood (natural log) of a continuation given a prefix.
pub trait LanguageModel: Send + Sync {
    fn sequence_logprob(&self, prefix: &[String], continuation: &[String]) -> Result<f64>;
}
