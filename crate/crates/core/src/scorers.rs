//! Scoring functions `score(prefix, candidate) -> f64` used for reranking and evaluation.

use std::collections::HashSet;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;

use crate::bridge::{BridgeClient, BridgeEndpoint};
use crate::encoder::{EmbeddingVector, EncoderParams, Role};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::ngram::NGramModel;
use crate::rng;
use crate::scalar::Scalar;

/// Higher is better.
pub trait Scorer: Send + Sync {
    fn score(&self, prefix: &[String], candidate: &[String]) -> Result<f64>;

    fn score_many(&self, prefix: &[String], candidates: &[Vec<String>]) -> Result<Vec<f64>> {
        candidates.iter().map(|c| self.score(prefix, c)).collect()
    }

    /// `out[i][j] = score(prefixes[i], candidates[j])`.
    fn score_matrix(
        &self,
        prefixes: &[Vec<String>],
        candidates: &[Vec<String>],
    ) -> Result<Vec<Vec<f64>>> {
        prefixes
            .iter()
            .map(|p| self.score_many(p, candidates))
            .collect()
    }

    fn name(&self) -> String;
}

/// Dot product between the prefix and candidate encodings of a trained dual encoder.
#[derive(Debug, Clone)]
pub struct RankGenScorer<T> {
    params: Arc<EncoderParams<T>>,
}

impl<T: Scalar> RankGenScorer<T> {
    pub fn new(params: impl Into<Arc<EncoderParams<T>>>) -> Self {
        RankGenScorer {
            params: params.into(),
        }
    }

    pub fn params(&self) -> &EncoderParams<T> {
        &self.params
    }

    fn encode_all(&self, seqs: &[Vec<String>], role: Role) -> Result<Vec<EmbeddingVector<T>>> {
        seqs.par_iter()
            .map(|s| self.params.encode(s, role))
            .collect()
    }
}

impl<T: Scalar> Scorer for RankGenScorer<T> {
    fn score(&self, prefix: &[String], candidate: &[String]) -> Result<f64> {
        let p = self.params.encode(prefix, Role::Prefix)?;
        let c = self.params.encode(candidate, Role::Suffix)?;
        Ok(crate::encoder::score(&p, &c)?.as_f64())
    }

    fn score_many(&self, prefix: &[String], candidates: &[Vec<String>]) -> Result<Vec<f64>> {
        let p = self.params.encode(prefix, Role::Prefix)?;
        self.encode_all(candidates, Role::Suffix)?
            .iter()
            .map(|c| crate::encoder::score(&p, c).map(Scalar::as_f64))
            .collect()
    }

    fn score_matrix(
        &self,
        prefixes: &[Vec<String>],
        candidates: &[Vec<String>],
    ) -> Result<Vec<Vec<f64>>> {
        let ps = self.encode_all(prefixes, Role::Prefix)?;
        let cs = self.encode_all(candidates, Role::Suffix)?;
        ps.iter()
            .map(|p| {
                cs.iter()
                    .map(|c| crate::encoder::score(p, c).map(Scalar::as_f64))
                    .collect()
            })
            .collect()
    }

    fn name(&self) -> String {
        "rankgen".into()
    }
}

/// Fraction of the candidate's distinct tokens that also occur in the prefix.
/// An empty candidate scores 0.
pub fn unigram_overlap<S: AsRef<str>>(prefix: &[S], candidate: &[S]) -> f64 {
    let seen: HashSet<&str> = prefix.iter().map(AsRef::as_ref).collect();
    let types: HashSet<&str> = candidate.iter().map(AsRef::as_ref).collect();
    if types.is_empty() {
        return 0.0;
    }
    types.iter().filter(|t| seen.contains(*t)).count() as f64 / types.len() as f64
}

#[derive(Debug, Clone, Copy, Default)]
pub struct UnigramOverlapScorer;

impl Scorer for UnigramOverlapScorer {
    fn score(&self, prefix: &[String], candidate: &[String]) -> Result<f64> {
        Ok(unigram_overlap(prefix, candidate))
    }

    fn name(&self) -> String {
        "overlap".into()
    }
}

/// Likelihood-based scores; all logs are natural and lengths count every token.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LikelihoodKind {
    /// `log P(c | p)`
    Cll,
    /// `log P(c | p) / |c|`
    AvgCll,
    /// `log P(p + c) / (|p| + |c|)`
    AvgUll,
    /// `log P(c | p) - log P(c)`
    Pmi,
}

impl LikelihoodKind {
    pub fn name(self) -> &'static str {
        match self {
            LikelihoodKind::Cll => "cll",
            LikelihoodKind::AvgCll => "avg_cll",
            LikelihoodKind::AvgUll => "avg_ull",
            LikelihoodKind::Pmi => "pmi",
        }
    }
}

pub fn score_likelihood(
    kind: LikelihoodKind,
    lm: &dyn LanguageModel,
    prefix: &[String],
    candidate: &[String],
) -> Result<f64> {
    if candidate.is_empty() {
        return Err(Error::invalid(
            "candidate",
            "likelihood scores need a non-empty candidate",
        ));
    }
    Ok(match kind {
        LikelihoodKind::Cll => lm.sequence_logprob(prefix, candidate)?,
        LikelihoodKind::AvgCll => lm.sequence_logprob(prefix, candidate)? / candidate.len() as f64,
        LikelihoodKind::AvgUll => {
            let joined: Vec<String> = prefix.iter().chain(candidate).cloned().collect();
            lm.sequence_logprob(&[], &joined)? / joined.len() as f64
        }
        LikelihoodKind::Pmi => {
            lm.sequence_logprob(prefix, candidate)? - lm.sequence_logprob(&[], candidate)?
        }
    })
}

#[derive(Clone)]
pub struct LikelihoodScorer {
    pub kind: LikelihoodKind,
    pub lm: Arc<dyn LanguageModel>,
}

impl LikelihoodScorer {
    pub fn new(kind: LikelihoodKind, lm: Arc<dyn LanguageModel>) -> Self {
        LikelihoodScorer { kind, lm }
    }
}

impl Scorer for LikelihoodScorer {
    fn score(&self, prefix: &[String], candidate: &[String]) -> Result<f64> {
        score_likelihood(self.kind, self.lm.as_ref(), prefix, candidate)
    }

    fn score_many(&self, prefix: &[String], candidates: &[Vec<String>]) -> Result<Vec<f64>> {
        candidates
            .par_iter()
            .map(|c| self.score(prefix, c))
            .collect()
    }

    fn name(&self) -> String {
        self.kind.name().into()
    }
}

/// Pseudo-random score keyed by `(seed, prefix, candidate)`; a chance-level baseline.
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score(&self, prefix: &[String], candidate: &[String]) -> Result<f64> {
        let key = prefix
            .iter()
            .chain(std::iter::once(&"\u{1}".to_string()))
            .chain(candidate)
            .fold(self.seed, |h, t| rng::mix64(h ^ rng::hash_str(t)));
        Ok(rng::unit(&mut rng::seeded(key)))
    }

    fn name(&self) -> String {
        format!("random:{}", self.seed)
    }
}

/// Scorer selection string: `rankgen:<encoder.ckpt>`, `overlap`,
/// `{cll,avg_cll,avg_ull,pmi}:<lm.ckpt | bridge:URL>` or `random:<seed>`.
#[derive(Debug, Clone, PartialEq)]
pub enum ScorerSpec {
    RankGen(PathBuf),
    Overlap,
    Likelihood(LikelihoodKind, LmSource),
    Random(u64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum LmSource {
    Checkpoint(PathBuf),
    Bridge(String),
}

impl FromStr for LmSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.is_empty() {
            return Err(Error::invalid("lm", "empty model reference"));
        }
        Ok(match s.strip_prefix("bridge:") {
            Some(url) => LmSource::Bridge(url.to_string()),
            None => LmSource::Checkpoint(PathBuf::from(s)),
        })
    }
}

impl LmSource {
    pub fn load(&self) -> Result<Arc<dyn LanguageModel>> {
        Ok(match self {
            LmSource::Checkpoint(p) => Arc::new(NGramModel::load(p)?),
            LmSource::Bridge(url) => Arc::new(BridgeClient::new(BridgeEndpoint::new(url.clone()))?),
        })
    }
}

impl FromStr for ScorerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let need = |what: &str| {
            arg.filter(|a| !a.is_empty())
                .ok_or_else(|| Error::invalid("scorer", format!("`{kind}` needs `:{what}`")))
        };
        Ok(match kind {
            "rankgen" => ScorerSpec::RankGen(PathBuf::from(need("encoder.ckpt")?)),
            "overlap" | "unigram_overlap" => ScorerSpec::Overlap,
            "cll" | "avg_cll" | "avg_ull" | "pmi" => {
                let lk = match kind {
                    "cll" => LikelihoodKind::Cll,
                    "avg_cll" => LikelihoodKind::AvgCll,
                    "avg_ull" => LikelihoodKind::AvgUll,
                    _ => LikelihoodKind::Pmi,
                };
                ScorerSpec::Likelihood(lk, need("lm.ckpt")?.parse()?)
            }
            "random" => ScorerSpec::Random(
                arg.unwrap_or("0")
                    .parse()
                    .map_err(|_| Error::invalid("scorer", "random seed must be an integer"))?,
            ),
            other => {
                return Err(Error::invalid(
                    "scorer",
                    format!("unknown scorer `{other}`"),
                ))
            }
        })
    }
}

impl ScorerSpec {
    pub fn load(&self) -> Result<Arc<dyn Scorer>> {
        Ok(match self {
            ScorerSpec::RankGen(p) => Arc::new(RankGenScorer::new(EncoderParams::<f32>::load(p)?)),
            ScorerSpec::Overlap => Arc::new(UnigramOverlapScorer),
            ScorerSpec::Likelihood(kind, src) => {
                Arc::new(LikelihoodScorer::new(*kind, src.load()?))
            }
            ScorerSpec::Random(seed) => Arc::new(RandomScorer { seed: *seed }),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Document;
    use crate::encoder::encoder_vocab;
    use crate::ngram::{train_ngram, NGramConfig};
    use ndarray::array;

    fn s(x: &str) -> Vec<String> {
        x.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn overlap_examples() {
        assert_eq!(unigram_overlap(&s("a b c"), &s("d e")), 0.0);
        assert_eq!(unigram_overlap(&s("a b c"), &s("c a a")), 1.0);
        assert_eq!(unigram_overlap(&s("a b c"), &s("a a d")), 0.5);
    }

    #[test]
    fn rankgen_zero_checkpoint_scores_zero() {
        let docs = [s("a b")];
        let p = EncoderParams::<f64>::zeros(encoder_vocab(docs.iter()), 3, 3);
        let sc = RankGenScorer::new(p);
        assert_eq!(sc.score(&s("a"), &s("b a")).unwrap(), 0.0);
        assert!(sc.score(&s("a"), &[]).is_err());
    }

    #[test]
    fn rankgen_hand_checkpoint() {
        // vocab: <unk> <pre> <suf> x y ; d_emb = d_out = 2
        let docs = [s("x y")];
        let mut p = EncoderParams::<f64>::zeros(encoder_vocab(docs.iter()), 2, 2);
        p.embedding = array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [2.0, 0.0], [0.0, 3.0]];
        p.projection = array![[1.0, 0.0], [0.0, 2.0]];
        // prefix "x": mean([1,0],[2,0]) = [1.5,0] -> W^T = [1.5, 0]
        // suffix "y": mean([0,1],[0,3]) = [0,2] -> [0, 4]; suffix "x": mean([0,1],[2,0]) = [1,0.5] -> [1, 1]
        let sc = RankGenScorer::new(p);
        assert_eq!(sc.score(&s("x"), &s("y")).unwrap(), 0.0);
        assert_eq!(sc.score(&s("x"), &s("x")).unwrap(), 1.5);
        assert_eq!(
            sc.score_many(&s("x"), &[s("y"), s("x")]).unwrap(),
            vec![0.0, 1.5]
        );
    }

    fn lm() -> NGramModel {
        let d = Document::from_tokens("d", s("a b a b b a c"));
        train_ngram(&[d], &NGramConfig::default()).unwrap()
    }

    #[test]
    fn likelihood_identities() {
        let m = lm();
        let pmi = score_likelihood(LikelihoodKind::Pmi, &m, &[], &s("a b")).unwrap();
        assert_eq!(pmi, 0.0);
        let cll = score_likelihood(LikelihoodKind::Cll, &m, &s("a"), &s("b")).unwrap();
        let avg = score_likelihood(LikelihoodKind::AvgCll, &m, &s("a"), &s("b")).unwrap();
        assert_eq!(cll, avg);
        assert!(cll <= 0.0);
        assert!(score_likelihood(LikelihoodKind::Cll, &m, &s("a"), &[]).is_err());
    }

    #[test]
    fn hand_two_token_lm_all_four_kinds() {
        // unigram-only LM over a two-token corpus: P(w) independent of context
        let cfg = NGramConfig {
            order: 1,
            lambdas: vec![1.0],
            alpha: 1.0,
        };
        let d = Document::from_tokens("d", s("u v v"));
        let m = train_ngram(&[d], &cfg).unwrap();
        // vocab <unk> <s> </s> u v ; targets u v v </s>: N = 4, V = 5
        let pu: f64 = 2.0 / 9.0;
        let pv: f64 = 3.0 / 9.0;
        let (p, c) = (s("u v"), s("v u"));
        let cll = (pv * pu).ln();
        let tol = 1e-12;
        assert!((score_likelihood(LikelihoodKind::Cll, &m, &p, &c).unwrap() - cll).abs() < tol);
        assert!(
            (score_likelihood(LikelihoodKind::AvgCll, &m, &p, &c).unwrap() - cll / 2.0).abs() < tol
        );
        let ull = (pu * pv * pv * pu).ln() / 4.0;
        assert!((score_likelihood(LikelihoodKind::AvgUll, &m, &p, &c).unwrap() - ull).abs() < tol);
        assert!(
            score_likelihood(LikelihoodKind::Pmi, &m, &p, &c)
                .unwrap()
                .abs()
                < tol
        );
    }

    #[test]
    fn spec_strings_parse() {
        assert_eq!(
            "overlap".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::Overlap
        );
        assert_eq!(
            "rankgen:enc.ckpt".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::RankGen("enc.ckpt".into())
        );
        assert_eq!(
            "avg_cll:lm.ckpt".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::Likelihood(
                LikelihoodKind::AvgCll,
                LmSource::Checkpoint("lm.ckpt".into())
            )
        );
        assert_eq!(
            "pmi:bridge:http://h:1".parse::<ScorerSpec>().unwrap(),
            ScorerSpec::Likelihood(LikelihoodKind::Pmi, LmSource::Bridge("http://h:1".into()))
        );
        assert!("rankgen".parse::<ScorerSpec>().is_err());
        assert!("nope".parse::<ScorerSpec>().is_err());
    }
}
