//! Beam search with reranking.
//!
//! Starting from one empty beam, every round extends each live beam with `N` sampled blocks
//! of `L` tokens (generated from `prefix + beam`), scores every hypothesis against the
//! **original prefix**, and keeps the best `B`. Scoring never sees the growing context.
//! Over-generation followed by reranking is the special case `L = max_length, B = 1`.
//!
//! Beam slot `b` asks the generator for samples with seed `beam_seed(seed, b)`; slot 0 uses
//! `seed` itself, so with `B = 1` the search consumes exactly the draws of a plain
//! `generate(prefix, max_length, N, strategy, seed)` call.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_terminator, is_word};
use crate::error::{Error, Result};
use crate::lm::Generator;
use crate::rng;
use crate::sampling::SamplingStrategy;
use crate::scorers::Scorer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub rerank_length: usize,
    pub beam_size: usize,
    pub samples_per_beam: usize,
    pub max_length: usize,
    pub strategy: SamplingStrategy,
    pub seed: u64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            rerank_length: 20,
            beam_size: 2,
            samples_per_beam: 10,
            max_length: 128,
            strategy: SamplingStrategy::Nucleus(crate::sampling::DEFAULT_TOP_P),
            seed: 0,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rerank_length == 0 {
            return Err(Error::invalid("rerank_length", "must be >= 1"));
        }
        if self.beam_size == 0 {
            return Err(Error::invalid("beam_size", "must be >= 1"));
        }
        if self.samples_per_beam == 0 {
            return Err(Error::invalid("samples_per_beam", "must be >= 1"));
        }
        if self.max_length < self.rerank_length {
            return Err(Error::invalid("max_length", "must be >= rerank_length"));
        }
        self.strategy.validate()
    }

    pub fn rounds(&self) -> usize {
        self.max_length.div_ceil(self.rerank_length)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Beam {
    pub tokens: Vec<String>,
    /// Score against the original prefix.
    pub score: f64,
    /// The generator emitted end-of-sequence.
    pub finished: bool,
}

pub fn beam_seed(seed: u64, slot: usize) -> u64 {
    if slot == 0 {
        seed
    } else {
        rng::derive(seed, slot as u64)
    }
}

/// Ranking order: higher score first, then the lexicographically smaller token sequence,
/// comparing tokens by the generator's vocabulary order (strings when it has none).
fn rank_order(generator: &dyn Generator) -> impl Fn(&Beam, &Beam) -> Ordering + '_ {
    move |a, b| {
        b.score.total_cmp(&a.score).then_with(|| {
            let key = |t: &String| (generator.token_order(t).unwrap_or(u32::MAX), t.clone());
            a.tokens.iter().map(key).cmp(b.tokens.iter().map(key))
        })
    }
}

/// Scores hypotheses against the prefix; empty hypotheses get `-inf`.
fn score_hypotheses(
    scorer: &dyn Scorer,
    prefix: &[String],
    hyps: &[Vec<String>],
) -> Result<Vec<f64>> {
    let live: Vec<usize> = (0..hyps.len()).filter(|&i| !hyps[i].is_empty()).collect();
    let batch: Vec<Vec<String>> = live.iter().map(|&i| hyps[i].clone()).collect();
    let scored = scorer.score_many(prefix, &batch)?;
    let mut out = vec![f64::NEG_INFINITY; hyps.len()];
    for (i, s) in live.into_iter().zip(scored) {
        out[i] = s;
    }
    Ok(out)
}

pub fn rankgen_search(
    prefix: &[String],
    generator: &dyn Generator,
    scorer: &dyn Scorer,
    cfg: &DecodeConfig,
) -> Result<Vec<Beam>> {
    cfg.validate()?;
    if prefix.is_empty() {
        return Err(Error::invalid("prefix", "must be non-empty"));
    }
    let order = rank_order(generator);
    let mut beams = vec![Beam {
        tokens: Vec::new(),
        score: f64::NEG_INFINITY,
        finished: false,
    }];
    for round in 0..cfg.rounds() {
        if beams.iter().all(|b| b.finished) {
            break;
        }
        let wrap = |e: Error| Error::Round {
            round,
            source: Box::new(e),
        };
        let expansions: Vec<Vec<Beam>> = beams
            .par_iter()
            .enumerate()
            .map(|(slot, beam)| {
                if beam.finished {
                    return Ok(vec![beam.clone()]);
                }
                let want = cfg.rerank_length.min(cfg.max_length - beam.tokens.len());
                let ctx: Vec<String> = prefix.iter().chain(&beam.tokens).cloned().collect();
                let samples = generator.generate(
                    &ctx,
                    want,
                    cfg.samples_per_beam,
                    &cfg.strategy,
                    beam_seed(cfg.seed, slot),
                )?;
                Ok(samples
                    .into_iter()
                    .map(|s| Beam {
                        finished: s.len() < want,
                        tokens: beam.tokens.iter().cloned().chain(s).collect(),
                        score: f64::NAN,
                    })
                    .collect())
            })
            .collect::<Result<_>>()
            .map_err(wrap)?;
        let mut hyps: Vec<Beam> = expansions.into_iter().flatten().collect();
        let fresh: Vec<usize> = (0..hyps.len())
            .filter(|&i| hyps[i].score.is_nan())
            .collect();
        let texts: Vec<Vec<String>> = fresh.iter().map(|&i| hyps[i].tokens.clone()).collect();
        let scores = score_hypotheses(scorer, prefix, &texts).map_err(wrap)?;
        for (i, s) in fresh.into_iter().zip(scores) {
            hyps[i].score = s;
        }
        hyps.sort_by(&order);
        hyps.truncate(cfg.beam_size);
        beams = hyps;
    }
    Ok(beams)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSample {
    pub tokens: Vec<String>,
    pub score: f64,
    /// 1-based.
    pub rank: usize,
}

/// Draws `num_samples` full-length samples and ranks them all by score.
pub fn rerank_full(
    prefix: &[String],
    generator: &dyn Generator,
    scorer: &dyn Scorer,
    num_samples: usize,
    max_length: usize,
    strategy: &SamplingStrategy,
    seed: u64,
) -> Result<Vec<RankedSample>> {
    let cfg = DecodeConfig {
        rerank_length: max_length,
        beam_size: num_samples,
        samples_per_beam: num_samples,
        max_length,
        strategy: *strategy,
        seed,
    };
    Ok(rankgen_search(prefix, generator, scorer, &cfg)?
        .into_iter()
        .enumerate()
        .map(|(i, b)| RankedSample {
            tokens: b.tokens,
            score: b.score,
            rank: i + 1,
        })
        .collect())
}

/// Longest prefix ending with a sentence terminator and holding at most `max_words` words.
/// Inputs without any terminator are returned unchanged.
pub fn truncate_to_sentence(tokens: &[String], max_words: usize) -> Vec<String> {
    if !tokens.iter().any(|t| is_terminator(t)) {
        return tokens.to_vec();
    }
    let mut words = 0;
    let mut best = 0;
    for (i, t) in tokens.iter().enumerate() {
        if is_word(t) {
            words += 1;
            if words > max_words {
                break;
            }
        }
        if is_terminator(t) {
            best = i + 1;
        }
    }
    tokens[..best].to_vec()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_to_sentence(&s("a b . c d"), 3), s("a b ."));
        assert_eq!(truncate_to_sentence(&s("a b c"), 1), s("a b c"));
        assert_eq!(truncate_to_sentence(&[], 5), Vec::<String>::new());
        assert_eq!(
            truncate_to_sentence(&s("a . b ! c d ?"), 10),
            s("a . b ! c d ?")
        );
        assert_eq!(truncate_to_sentence(&s("a . b ! c d ?"), 3), s("a . b !"));
    }

    #[test]
    fn config_validation() {
        assert!(DecodeConfig::default().validate().is_ok());
        let bad = DecodeConfig {
            max_length: 10,
            rerank_length: 20,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        assert_eq!(DecodeConfig::default().rounds(), 7);
    }

    #[test]
    fn default_hyperparameters() {
        let d = DecodeConfig::default();
        assert_eq!(
            (d.beam_size, d.rerank_length, d.samples_per_beam),
            (2, 20, 10)
        );
    }
}
