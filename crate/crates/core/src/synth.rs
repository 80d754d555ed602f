//! Seeded generator for a topic-structured toy corpus.
//!
//! Every topic owns a disjoint set of content words; a shared pool of function words fills
//! the rest of each sentence. Topics form a fixed cycle `0 → 1 → … → T-1 → 0`, and a
//! document walks a run of consecutive topics from a random starting point, one segment of
//! a few sentences per topic, never revisiting a topic. Content and function words are
//! drawn with Zipf-like weights, so a short prefix sees only part of a topic's vocabulary.

use std::collections::HashSet;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::corpus::{is_punctuation, Document, RawDocument};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_docs: usize,
    pub num_topics: usize,
    pub words_per_topic: usize,
    pub function_words: usize,
    /// Inclusive range of topic segments per document.
    pub segments: (usize, usize),
    /// Inclusive range of sentences per segment.
    pub sentences_per_segment: (usize, usize),
    /// Inclusive range of word tokens per sentence.
    pub sentence_words: (usize, usize),
    /// Probability that a word slot holds a content word.
    pub content_share: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_docs: 200,
            num_topics: 20,
            words_per_topic: 22,
            function_words: 40,
            segments: (12, 18),
            sentences_per_segment: (5, 8),
            sentence_words: (6, 10),
            content_share: 0.5,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let range = |name: &'static str, (lo, hi): (usize, usize)| {
            if lo == 0 || lo > hi {
                Err(Error::invalid(name, format!("bad range ({lo}, {hi})")))
            } else {
                Ok(())
            }
        };
        range("segments", self.segments)?;
        range("sentences_per_segment", self.sentences_per_segment)?;
        range("sentence_words", self.sentence_words)?;
        if self.num_docs == 0 || self.words_per_topic == 0 || self.function_words == 0 {
            return Err(Error::invalid("synth", "counts must be positive"));
        }
        if self.segments.1 > self.num_topics {
            return Err(Error::invalid(
                "segments",
                "cannot exceed num_topics without repeating a topic",
            ));
        }
        if !(0.0..=1.0).contains(&self.content_share) {
            return Err(Error::invalid("content_share", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// The generated lexicon: `topics[k]` are the content words of topic `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lexicon {
    pub function: Vec<String>,
    pub topics: Vec<Vec<String>>,
}

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "st",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];

fn pseudo_word(rng: &mut impl RngCore, syllables: usize) -> String {
    (0..syllables)
        .map(|_| {
            let o = ONSETS[rng::below(rng, ONSETS.len())];
            let v = VOWELS[rng::below(rng, VOWELS.len())];
            format!("{o}{v}")
        })
        .collect()
}

pub fn lexicon(cfg: &SynthConfig) -> Lexicon {
    let mut rng = rng::seeded(rng::derive(cfg.seed, 0x1e));
    let mut seen = HashSet::new();
    let mut fresh = |syllables: usize| loop {
        let w = pseudo_word(&mut rng, syllables);
        if seen.insert(w.clone()) {
            return w;
        }
    };
    let function = (0..cfg.function_words).map(|i| fresh(1 + i % 2)).collect();
    let topics = (0..cfg.num_topics)
        .map(|_| (0..cfg.words_per_topic).map(|i| fresh(2 + i % 2)).collect())
        .collect();
    Lexicon { function, topics }
}

/// Zipf-like pick with weights `1 / (rank + 1)`.
fn zipf(rng: &mut impl RngCore, n: usize) -> usize {
    let h: f64 = (1..=n).map(|r| 1.0 / r as f64).sum();
    let mut u = rng::unit(rng) * h;
    for r in 0..n {
        u -= 1.0 / (r + 1) as f64;
        if u < 0.0 {
            return r;
        }
    }
    n - 1
}

fn between(rng: &mut impl RngCore, (lo, hi): (usize, usize)) -> usize {
    lo + rng::below(rng, hi - lo + 1)
}

/// Topic sequence of document `i`: a run of consecutive topics on the cycle.
pub fn topic_walk(cfg: &SynthConfig, doc: usize) -> Vec<usize> {
    let mut rng = rng::seeded(rng::derive(cfg.seed, 2 * doc as u64 + 1));
    let start = rng::below(&mut rng, cfg.num_topics);
    let n = between(&mut rng, cfg.segments);
    (0..n).map(|s| (start + s) % cfg.num_topics).collect()
}

fn sentence(rng: &mut impl RngCore, lex: &Lexicon, topic: usize, cfg: &SynthConfig) -> Vec<String> {
    let n = between(rng, cfg.sentence_words);
    let mut out = Vec::with_capacity(n + 2);
    for i in 0..n {
        let w = if rng::unit(rng) < cfg.content_share {
            &lex.topics[topic][zipf(rng, lex.topics[topic].len())]
        } else {
            &lex.function[zipf(rng, lex.function.len())]
        };
        out.push(w.clone());
        if i + 1 < n && i >= 2 && rng::unit(rng) < 0.08 {
            out.push(",".to_string());
        }
    }
    let end = match rng::below(rng, 20) {
        0 => "?",
        1 => "!",
        _ => ".",
    };
    out.push(end.to_string());
    out
}

pub fn synth_corpus(cfg: &SynthConfig) -> Result<Vec<Document>> {
    cfg.validate()?;
    let lex = lexicon(cfg);
    Ok((0..cfg.num_docs)
        .map(|d| {
            let mut rng = rng::seeded(rng::derive(cfg.seed, 2 * d as u64 + 2));
            let mut tokens = Vec::new();
            for topic in topic_walk(cfg, d) {
                for _ in 0..between(&mut rng, cfg.sentences_per_segment) {
                    tokens.extend(sentence(&mut rng, &lex, topic, cfg));
                }
            }
            Document::from_tokens(format!("synth-{d:04}"), tokens)
        })
        .collect())
}

/// Joins tokens so that [`crate::corpus::tokenize`] gives them back.
pub fn render(tokens: &[String]) -> String {
    let mut s = String::new();
    for t in tokens {
        if !s.is_empty() && !is_punctuation(t) {
            s.push(' ');
        }
        s.push_str(t);
    }
    s
}

pub fn write_corpus_jsonl(path: &Path, docs: &[Document]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for d in docs {
        let raw = RawDocument {
            doc_id: d.doc_id.clone(),
            text: render(&d.tokens),
        };
        serde_json::to_writer(&mut w, &raw)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::tokenize;

    #[test]
    fn deterministic_and_round_trips_through_text() {
        let cfg = SynthConfig {
            num_docs: 5,
            seed: 9,
            ..Default::default()
        };
        let a = synth_corpus(&cfg).unwrap();
        assert_eq!(a, synth_corpus(&cfg).unwrap());
        for d in &a {
            let (toks, starts) = tokenize(&render(&d.tokens));
            assert_eq!(toks, d.tokens);
            assert_eq!(starts, d.sentence_starts);
        }
    }

    #[test]
    fn vocabulary_size_and_disjoint_topics() {
        let cfg = SynthConfig::default();
        let lex = lexicon(&cfg);
        let all: HashSet<&String> = lex
            .function
            .iter()
            .chain(lex.topics.iter().flatten())
            .collect();
        assert_eq!(all.len(), 40 + 20 * 22);
    }

    #[test]
    fn walks_never_repeat_topics() {
        let cfg = SynthConfig::default();
        for d in 0..50 {
            let w = topic_walk(&cfg, d);
            let set: HashSet<_> = w.iter().collect();
            assert_eq!(set.len(), w.len());
            assert!(w.windows(2).all(|p| p[1] == (p[0] + 1) % cfg.num_topics));
        }
    }
}
