//! Next-token distributions and the truncation strategies used for decoding.

use std::fmt;
use std::str::FromStr;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::vocab::TokenId;

pub const DEFAULT_TOP_P: f64 = 0.9;
pub const DEFAULT_TOP_K: usize = 40;
pub const DEFAULT_TYPICAL: f64 = 0.9;

/// Mass tolerance when deciding whether a cumulative sum has reached its target.
const MASS_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "param", rename_all = "snake_case")]
pub enum SamplingStrategy {
    Greedy,
    Ancestral,
    Nucleus(f64),
    TopK(usize),
    Typical(f64),
}

impl SamplingStrategy {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SamplingStrategy::Nucleus(p) if !(p > 0.0 && p <= 1.0) => Err(Error::invalid(
                "p",
                format!("nucleus p must be in (0, 1], got {p}"),
            )),
            SamplingStrategy::TopK(0) => Err(Error::invalid("k", "top-k needs k >= 1")),
            SamplingStrategy::Typical(t) if !(t > 0.0 && t <= 1.0) => Err(Error::invalid(
                "tau",
                format!("typical tau must be in (0, 1], got {t}"),
            )),
            _ => Ok(()),
        }
    }

    /// The five decoding baselines with their customary parameters.
    pub fn baselines() -> [SamplingStrategy; 5] {
        [
            SamplingStrategy::Greedy,
            SamplingStrategy::Ancestral,
            SamplingStrategy::Nucleus(DEFAULT_TOP_P),
            SamplingStrategy::TopK(DEFAULT_TOP_K),
            SamplingStrategy::Typical(DEFAULT_TYPICAL),
        ]
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SamplingStrategy::Greedy => "greedy",
            SamplingStrategy::Ancestral => "ancestral",
            SamplingStrategy::Nucleus(_) => "nucleus",
            SamplingStrategy::TopK(_) => "top_k",
            SamplingStrategy::Typical(_) => "typical",
        }
    }

    pub fn param(&self) -> Option<f64> {
        match *self {
            SamplingStrategy::Nucleus(p) | SamplingStrategy::Typical(p) => Some(p),
            SamplingStrategy::TopK(k) => Some(k as f64),
            _ => None,
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.param() {
            Some(p) => write!(f, "{}:{}", self.kind(), p),
            None => f.write_str(self.kind()),
        }
    }
}

impl FromStr for SamplingStrategy {
    type Err = Error;

    /// Accepts `greedy`, `ancestral`, `nucleus[:p]`, `top_k[:k]` (or `topk`), `typical[:tau]`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k, Some(p)),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64> {
            param.map_or(Ok(default), |p| {
                p.parse::<f64>()
                    .map_err(|_| Error::invalid("strategy", format!("bad parameter `{p}`")))
            })
        };
        let strategy = match kind {
            "greedy" => SamplingStrategy::Greedy,
            "ancestral" => SamplingStrategy::Ancestral,
            "nucleus" | "top_p" => SamplingStrategy::Nucleus(num(DEFAULT_TOP_P)?),
            "top_k" | "topk" => SamplingStrategy::TopK(num(DEFAULT_TOP_K as f64)? as usize),
            "typical" => SamplingStrategy::Typical(num(DEFAULT_TYPICAL)?),
            other => {
                return Err(Error::invalid(
                    "strategy",
                    format!("unknown strategy `{other}`"),
                ))
            }
        };
        strategy.validate()?;
        Ok(strategy)
    }
}

/// Normalized probability vector indexed by token id.
#[derive(Debug, Clone, PartialEq)]
pub struct NextTokenDistribution {
    pub probs: Vec<f64>,
}

impl NextTokenDistribution {
    pub fn new(probs: Vec<f64>) -> Self {
        NextTokenDistribution { probs }
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Shannon entropy in nats, `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        self.probs
            .iter()
            .filter(|&&p| p > 0.0)
            .map(|&p| -p * p.ln())
            .sum()
    }

    /// Lowest id among the most probable tokens.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// Inverse-CDF draw over token-id order for a uniform `u` in `[0, 1)`.
    pub fn invert(&self, u: f64) -> TokenId {
        let target = u * self.total();
        let mut cum = 0.0;
        let mut last_nonzero = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p <= 0.0 {
                continue;
            }
            cum += p;
            last_nonzero = i;
            if target < cum {
                return i as TokenId;
            }
        }
        last_nonzero as TokenId
    }

    pub fn sample(&self, rng: &mut impl RngCore) -> TokenId {
        self.invert(rng::unit(rng))
    }

    /// Keeps the ids in `keep` and renormalizes. Returns `self` unchanged when nothing with
    /// positive mass is dropped.
    fn restrict(&self, keep: &[usize]) -> NextTokenDistribution {
        let mut mask = vec![false; self.len()];
        for &i in keep {
            mask[i] = true;
        }
        if self.probs.iter().zip(&mask).all(|(&p, &m)| m || p == 0.0) {
            return self.clone();
        }
        let kept: f64 = keep.iter().map(|&i| self.probs[i]).sum();
        let probs = self
            .probs
            .iter()
            .zip(&mask)
            .map(|(&p, &m)| if m { p / kept } else { 0.0 })
            .collect();
        NextTokenDistribution { probs }
    }

    /// Ids ordered by probability descending, then id ascending.
    fn by_probability(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_unstable_by(|&a, &b| self.probs[b].total_cmp(&self.probs[a]).then(a.cmp(&b)));
        order
    }
}

/// Smallest prefix of `order` whose mass reaches `target`.
fn mass_prefix(dist: &NextTokenDistribution, order: &[usize], target: f64) -> usize {
    let mut cum = 0.0;
    for (n, &i) in order.iter().enumerate() {
        cum += dist.probs[i];
        if cum >= target - MASS_EPS {
            return n + 1;
        }
    }
    order.len()
}

/// Applies a decoding strategy's truncation rule to a normalized distribution.
pub fn truncate_distribution(
    dist: &NextTokenDistribution,
    strategy: &SamplingStrategy,
) -> NextTokenDistribution {
    match *strategy {
        SamplingStrategy::Ancestral => dist.clone(),
        SamplingStrategy::Greedy => {
            let mut probs = vec![0.0; dist.len()];
            probs[dist.argmax() as usize] = 1.0;
            NextTokenDistribution { probs }
        }
        SamplingStrategy::TopK(k) => {
            if k >= dist.len() {
                return dist.clone();
            }
            let order = dist.by_probability();
            dist.restrict(&order[..k])
        }
        SamplingStrategy::Nucleus(p) if p >= 1.0 => dist.clone(),
        SamplingStrategy::Typical(tau) if tau >= 1.0 => dist.clone(),
        SamplingStrategy::Nucleus(p) => {
            let order = dist.by_probability();
            let n = mass_prefix(dist, &order, p);
            dist.restrict(&order[..n])
        }
        SamplingStrategy::Typical(tau) => {
            let entropy = dist.entropy();
            let deviation = |p: f64| {
                if p > 0.0 {
                    (-p.ln() - entropy).abs()
                } else {
                    f64::INFINITY
                }
            };
            let mut order: Vec<usize> = (0..dist.len()).collect();
            order.sort_unstable_by(|&a, &b| {
                let (pa, pb) = (dist.probs[a], dist.probs[b]);
                deviation(pa)
                    .total_cmp(&deviation(pb))
                    .then(pb.total_cmp(&pa))
                    .then(a.cmp(&b))
            });
            let n = mass_prefix(dist, &order, tau);
            dist.restrict(&order[..n])
        }
    }
}
